//! Training loops for the basic and context models.
//!
//! * Basic: every query is its own sample; one RMSProp update per query and
//!   only the last query-LSTM state receives gradient.
//! * Context: one update per session; per-prefix losses are summed, then
//!   gradients flow through the head, the context LSTM and, unless the
//!   embedding is frozen, each query LSTM.
//!
//! The objective is `−Σ log o[label] + λ·‖θ‖²` with the regularizer applied
//! once per update over the trainable parameters.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoding::EncodedQuery;
use crate::error::{Error, Result};
use crate::models::{ContextMode, IntentModel, ModelConfig, ScoreVector};
use crate::numerics::{rmsprop_step, ParamSet, RmsPropState};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub pretrain_epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Elementwise gradient clamp; off when `None`.
    pub grad_clip: Option<f64>,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            lr_decay_factor: 3.0,
            patience_epochs: 3,
            max_epochs: 50,
            pretrain_epochs: 15,
            lambda: 1e-4,
            seed: 1,
            shuffle: true,
            grad_clip: None,
            rms_decay: RmsPropState::DEFAULT_DECAY,
            rms_epsilon: RmsPropState::DEFAULT_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr_decay_factor > 0.0 && self.lambda >= 0.0) {
            return Err(Error::Config("learning rate, decay factor and lambda must be non-negative".into()));
        }
        if self.max_epochs == 0 || self.patience_epochs == 0 {
            return Err(Error::Config("max_epochs and patience_epochs must be positive".into()));
        }
        if self.patience_epochs >= self.max_epochs {
            return Err(Error::Config("patience_epochs must be smaller than max_epochs".into()));
        }
        Ok(())
    }
}

/// A session ready for the network: encoded queries plus the label index in Φ.
#[derive(Clone, Debug)]
pub struct EncodedSession {
    pub id: String,
    pub queries: Vec<EncodedQuery>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_p1: f64,
    pub lr: f64,
    pub updates: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub mode: Option<ContextMode>,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest dev P@1.
    pub best_epoch: usize,
    /// Dev P@1 of the returned (checkpoint-precision) model.
    pub selected_dev_p1: f64,
    pub pretrain_epochs: Option<usize>,
    /// Times `o[label]` underflowed to zero and was floored.
    pub nll_floor_hits: usize,
}

impl TrainReport {
    /// Tab-separated `epoch, train_loss, dev_loss, dev_p1, lr`, one line per epoch.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch\ttrain_loss\tdev_loss\tdev_p1\tlr")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:e}",
                e.epoch, e.train_loss, e.dev_loss, e.dev_p1, e.lr
            )?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_tsv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }
}

/// `−log o[label]`, floored at the smallest positive double. The flag reports flooring.
pub fn nll(o: &[f64], label: usize) -> (f64, bool) {
    let p = o[label];
    if p > 0.0 {
        (-p.ln(), false)
    } else {
        (-f64::MIN_POSITIVE.ln(), true)
    }
}

/// `−log o[label] + λ·‖θ‖²` over trainable parameters.
pub fn loss(o: &ScoreVector, label: usize, params: &ParamSet, lambda: f64) -> Result<f64> {
    if label >= o.len() {
        return Err(Error::OutOfRange {
            what: "label",
            value: label,
            allowed: format!("0..{}", o.len()),
        });
    }
    Ok(nll(o.probs(), label).0 + lambda * params.trainable_sum_squares())
}

/// Learning rate divided by `factor` after `patience` epochs without a new
/// minimum dev loss.
#[derive(Clone, Debug)]
pub struct LrSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl LrSchedule {
    pub fn new(lr0: f64, factor: f64, patience: usize) -> Self {
        LrSchedule {
            lr: lr0,
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's dev loss and returns the rate for the next epoch.
    pub fn observe(&mut self, dev_loss: f64) -> f64 {
        if dev_loss < self.best {
            self.best = dev_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr /= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

struct StepOutcome {
    nll_sum: f64,
    floored: usize,
}

fn label_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    g
}

fn check_label(model: &IntentModel, label: usize) -> Result<()> {
    if label >= model.config.num_programs {
        return Err(Error::OutOfRange {
            what: "label",
            value: label,
            allowed: format!("0..{}", model.config.num_programs),
        });
    }
    Ok(())
}

/// Forward + backward for one query of the basic model; gradients accumulate.
fn basic_query_backward(model: &mut IntentModel, q: &EncodedQuery, label: usize) -> Result<StepOutcome> {
    check_label(model, label)?;
    let trace = model.embed_trace(q)?;
    let head = model.head_forward(&trace.embedding)?;
    let (l, floored) = nll(&head.probs, label);
    let gv = model.head_backward(&head, &label_grad(&head.probs, label));
    if !model.is_embedding_frozen() {
        model.embed_backward(&trace, &gv)?;
    }
    Ok(StepOutcome {
        nll_sum: l,
        floored: usize::from(floored),
    })
}

/// Forward + backward over a whole session through the context LSTM.
/// `cached` supplies query embeddings when the embedding layer is frozen.
fn context_session_backward(
    model: &mut IntentModel,
    queries: &[EncodedQuery],
    label: usize,
    cached: Option<&[Vec<f64>]>,
) -> Result<StepOutcome> {
    check_label(model, label)?;
    if queries.is_empty() {
        return Err(Error::EmptyInput("session has no queries".into()));
    }
    let frozen = model.is_embedding_frozen();
    let mut traces = Vec::new();
    let embeddings: Vec<Vec<f64>> = match cached {
        Some(e) if frozen => e.to_vec(),
        _ => {
            for q in queries {
                traces.push(model.embed_trace(q)?);
            }
            traces.iter().map(|t| t.embedding.clone()).collect()
        }
    };
    let ctx = model.context_forward(&embeddings)?;
    let mut out = StepOutcome {
        nll_sum: 0.0,
        floored: 0,
    };
    let mut grad_c = Vec::with_capacity(queries.len());
    let states: Vec<Vec<f64>> = ctx.hidden_states().map(<[f64]>::to_vec).collect();
    for c in &states {
        let head = model.head_forward(c)?;
        let (l, floored) = nll(&head.probs, label);
        out.nll_sum += l;
        out.floored += usize::from(floored);
        grad_c.push(model.head_backward(&head, &label_grad(&head.probs, label)));
    }
    let grad_v = model.context_backward(&ctx, &grad_c)?;
    if !frozen {
        for (trace, gv) in traces.iter().zip(&grad_v) {
            model.embed_backward(trace, gv)?;
        }
    }
    Ok(out)
}

/// Accumulates the full objective gradient for one basic-model sample
/// (including `2λθ`) and returns the objective value.
pub fn accumulate_query_gradient(model: &mut IntentModel, q: &EncodedQuery, label: usize, lambda: f64) -> Result<f64> {
    let out = basic_query_backward(model, q, label)?;
    model.params.add_l2_grad(lambda);
    Ok(out.nll_sum + lambda * model.params.trainable_sum_squares())
}

/// Accumulates the gradient of the session objective
/// `Σ_t −log o_t[label] + λ‖θ‖²` and returns its value.
pub fn accumulate_session_gradient(
    model: &mut IntentModel,
    queries: &[EncodedQuery],
    label: usize,
    lambda: f64,
) -> Result<f64> {
    let out = if model.mode().has_context() {
        context_session_backward(model, queries, label, None)?
    } else {
        let mut total = StepOutcome {
            nll_sum: 0.0,
            floored: 0,
        };
        for q in queries {
            let o = basic_query_backward(model, q, label)?;
            total.nll_sum += o.nll_sum;
        }
        total
    };
    model.params.add_l2_grad(lambda);
    Ok(out.nll_sum + lambda * model.params.trainable_sum_squares())
}

/// Session objective without touching gradients: per-prefix NLL summed, λ‖θ‖² once.
pub fn session_loss(model: &IntentModel, queries: &[EncodedQuery], label: usize, lambda: f64) -> Result<f64> {
    let scores = model.forward_session(queries)?;
    let mut total = 0.0;
    for o in &scores {
        total += loss(o, label, &model.params, 0.0)?;
    }
    Ok(total + lambda * model.params.trainable_sum_squares())
}

/// Mean per-query NLL and P@1 over every prefix prediction of `sessions`.
pub fn evaluate_loss_p1(model: &IntentModel, sessions: &[EncodedSession]) -> Result<(f64, f64)> {
    let per: Vec<(f64, usize, usize)> = sessions
        .par_iter()
        .map(|s| -> Result<(f64, usize, usize)> {
            let scores = model.forward_session(&s.queries)?;
            let mut l = 0.0;
            let mut correct = 0;
            for o in &scores {
                l += nll(o.probs(), s.label).0;
                if o.ranking()[0].0 == s.label {
                    correct += 1;
                }
            }
            Ok((l, correct, scores.len()))
        })
        .collect::<Result<_>>()?;
    let (mut l, mut c, mut n) = (0.0, 0, 0);
    for (a, b, k) in per {
        l += a;
        c += b;
        n += k;
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((l / n as f64, c as f64 / n as f64))
}

fn copy_values(dst: &mut ParamSet, src: &ParamSet) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        d.value.data_mut().copy_from_slice(s.value.data());
    }
}

struct EpochLoop<'a> {
    train: &'a [EncodedSession],
    dev: &'a [EncodedSession],
    cfg: &'a TrainConfig,
    epochs: usize,
}

impl EpochLoop<'_> {
    fn run(
        &self,
        model: &mut IntentModel,
        mut epoch_body: impl FnMut(&mut IntentModel, &mut RmsPropState, f64, &mut ChaCha8Rng) -> Result<(f64, usize, usize)>,
    ) -> Result<TrainReport> {
        if self.train.is_empty() {
            return Err(Error::EmptyInput("training set".into()));
        }
        self.cfg.validate()?;
        let dev = if self.dev.is_empty() {
            log::warn!("empty development set; selecting on the training set");
            self.train
        } else {
            self.dev
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut opt = RmsPropState::new(&model.params, self.cfg.rms_decay, self.cfg.rms_epsilon);
        let mut sched = LrSchedule::new(self.cfg.lr0, self.cfg.lr_decay_factor, self.cfg.patience_epochs);
        let mut report = TrainReport {
            mode: Some(model.mode()),
            ..TrainReport::default()
        };
        let mut best: Option<(f64, ParamSet)> = None;
        for epoch in 1..=self.epochs {
            let lr = sched.lr();
            let start = Instant::now();
            let (train_loss, updates, floored) = epoch_body(model, &mut opt, lr, &mut rng)?;
            let seconds = start.elapsed().as_secs_f64();
            report.nll_floor_hits += floored;
            let (dev_loss, dev_p1) = evaluate_loss_p1(model, dev)?;
            log::info!(
                "{} epoch {epoch}: train {train_loss:.4} dev {dev_loss:.4} p@1 {dev_p1:.4} lr {lr:e} ({seconds:.1}s)",
                model.mode()
            );
            report.epochs.push(EpochRecord {
                epoch,
                train_loss,
                dev_loss,
                dev_p1,
                lr,
                updates,
                seconds,
            });
            if best.as_ref().is_none_or(|(p, _)| dev_p1 > *p) {
                best = Some((dev_p1, model.params.clone()));
                report.best_epoch = epoch;
            }
            sched.observe(dev_loss);
        }
        if let Some((_, snapshot)) = best {
            copy_values(&mut model.params, &snapshot);
        }
        model.round_to_f32();
        report.selected_dev_p1 = evaluate_loss_p1(model, dev)?.1;
        Ok(report)
    }
}

fn finish_update(model: &mut IntentModel, opt: &mut RmsPropState, cfg: &TrainConfig, lr: f64) -> Result<f64> {
    model.params.add_l2_grad(cfg.lambda);
    if let Some(c) = cfg.grad_clip {
        model.params.clip_grads(c);
    }
    let reg = cfg.lambda * model.params.trainable_sum_squares();
    rmsprop_step(&mut model.params, opt, lr)?;
    Ok(reg)
}

fn run_basic(
    train: &[EncodedSession],
    dev: &[EncodedSession],
    model: &mut IntentModel,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainReport> {
    if model.mode() != ContextMode::Basic {
        return Err(Error::Config(format!("train_basic needs a basic model, got {}", model.mode())));
    }
    let samples: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .flat_map(|(s, sess)| (0..sess.queries.len()).map(move |q| (s, q)))
        .collect();
    let looper = EpochLoop { train, dev, cfg, epochs };
    looper.run(model, |model, opt, lr, rng| {
        let mut order = samples.clone();
        if cfg.shuffle {
            order.shuffle(rng);
        }
        let mut total = 0.0;
        let mut floored = 0;
        for &(s, q) in &order {
            let sess = &train[s];
            let out = basic_query_backward(model, &sess.queries[q], sess.label)?;
            if !out.nll_sum.is_finite() {
                return Err(Error::Divergence(format!("loss (session {})", sess.id)));
            }
            floored += out.floored;
            total += out.nll_sum + finish_update(model, opt, cfg, lr)?;
        }
        Ok((total / order.len() as f64, order.len(), floored))
    })
}

/// Per-query training of the basic model for `max_epochs`.
pub fn train_basic(
    train: &[EncodedSession],
    dev: &[EncodedSession],
    model: &mut IntentModel,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    run_basic(train, dev, model, cfg, cfg.max_epochs)
}

/// Per-session training of a context model. `constrained` requires the
/// embedding layer to be loaded from a basic model and frozen already.
pub fn train_context(
    train: &[EncodedSession],
    dev: &[EncodedSession],
    model: &mut IntentModel,
    cfg: &TrainConfig,
    constrained: bool,
) -> Result<TrainReport> {
    let expected = if constrained {
        ContextMode::ContextConstrained
    } else {
        ContextMode::ContextFull
    };
    if model.mode() != expected {
        return Err(Error::Config(format!("expected a {expected} model, got {}", model.mode())));
    }
    if constrained != model.is_embedding_frozen() {
        return Err(Error::Config(if constrained {
            "constrained training needs a pretrained, frozen embedding layer (see pretrain_then_freeze)".into()
        } else {
            "full-context training cannot run with a frozen embedding layer".into()
        }));
    }
    let cached: Option<Vec<Vec<Vec<f64>>>> = if constrained {
        Some(
            train
                .par_iter()
                .map(|s| s.queries.iter().map(|q| model.embed_query(q)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let looper = EpochLoop {
        train,
        dev,
        cfg,
        epochs: cfg.max_epochs,
    };
    looper.run(model, |model, opt, lr, rng| {
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            order.shuffle(rng);
        }
        let mut total = 0.0;
        let mut floored = 0;
        for &s in &order {
            let sess = &train[s];
            let emb = cached.as_ref().map(|c| c[s].as_slice());
            let out = context_session_backward(model, &sess.queries, sess.label, emb)?;
            if !out.nll_sum.is_finite() {
                return Err(Error::Divergence(format!("loss (session {})", sess.id)));
            }
            floored += out.floored;
            total += out.nll_sum + finish_update(model, opt, cfg, lr)?;
        }
        Ok((total / order.len() as f64, order.len(), floored))
    })
}

/// Result of [`pretrain_then_freeze`].
pub struct Pretrained {
    /// Context model with the copied, frozen embedding layer and fresh context/head.
    pub model: IntentModel,
    /// The basic model the embedding was taken from.
    pub source: IntentModel,
    pub report: TrainReport,
}

/// Trains a basic model for `pretrain_epochs`, copies its query-embedding
/// LSTM(s) into a new constrained context model and freezes them.
pub fn pretrain_then_freeze(
    train: &[EncodedSession],
    dev: &[EncodedSession],
    config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Pretrained> {
    if cfg.pretrain_epochs == 0 {
        return Err(Error::Config("pretrain_epochs must be at least 1".into()));
    }
    let mut source = IntentModel::new(ModelConfig {
        mode: ContextMode::Basic,
        ..config.clone()
    })?;
    let pre_cfg = TrainConfig {
        max_epochs: cfg.pretrain_epochs.max(cfg.patience_epochs + 1),
        ..cfg.clone()
    };
    let mut report = run_basic(train, dev, &mut source, &pre_cfg, cfg.pretrain_epochs)?;
    report.pretrain_epochs = Some(cfg.pretrain_epochs);
    let mut model = IntentModel::new(ModelConfig {
        mode: ContextMode::ContextConstrained,
        ..config.clone()
    })?;
    model.load_embedding_from(&source)?;
    model.freeze_embedding();
    Ok(Pretrained { model, source, report })
}

/// Builds and trains a model of any mode; constrained runs the pretraining phase first.
pub fn train_model(
    train: &[EncodedSession],
    dev: &[EncodedSession],
    config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(IntentModel, TrainReport)> {
    match config.mode {
        ContextMode::Basic => {
            let mut m = IntentModel::new(config.clone())?;
            let r = train_basic(train, dev, &mut m, cfg)?;
            Ok((m, r))
        }
        ContextMode::ContextFull => {
            let mut m = IntentModel::new(config.clone())?;
            let r = train_context(train, dev, &mut m, cfg, false)?;
            Ok((m, r))
        }
        ContextMode::ContextConstrained => {
            let pre = pretrain_then_freeze(train, dev, config, cfg)?;
            let mut m = pre.model;
            let mut r = train_context(train, dev, &mut m, cfg, true)?;
            r.pretrain_epochs = Some(cfg.pretrain_epochs);
            Ok((m, r))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{build_char_dict, EmbeddingTable, QueryEncoder, Representation};
    use crate::lstm::CellCandidate;
    use std::io::Cursor;

    #[test]
    fn loss_hand_values() {
        let ps = ParamSet::new();
        let one = ScoreVector::from_logits(&[1000.0, -1000.0]);
        assert_eq!(loss(&one, 0, &ps, 0.0).unwrap(), 0.0);
        let u = ScoreVector::from_logits(&[0.0; 4]);
        assert!((loss(&u, 2, &ps, 0.0).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(loss(&u, 4, &ps, 0.0).is_err());
    }

    #[test]
    fn l2_term_value_and_gradient() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", crate::numerics::Tensor::vector(vec![2.0])).unwrap();
        let u = ScoreVector::from_logits(&[0.0; 4]);
        let l = loss(&u, 0, &ps, 1e-4).unwrap();
        assert!((l - 4f64.ln() - 4e-4).abs() < 1e-15);
        ps.add_l2_grad(1e-4);
        assert!((ps.grad(id).data()[0] - 4e-4).abs() < 1e-18);
    }

    #[test]
    fn nll_floors_zero_probability() {
        let (l, floored) = nll(&[1.0, 0.0], 1);
        assert!(floored && l.is_finite() && l > 700.0);
    }

    #[test]
    fn schedule_divides_after_three_stale_epochs() {
        let mut s = LrSchedule::new(1e-3, 3.0, 3);
        assert_eq!(s.observe(1.0), 1e-3);
        assert_eq!(s.observe(1.0), 1e-3);
        assert_eq!(s.observe(1.2), 1e-3);
        assert_eq!(s.observe(1.0), 1e-3 / 3.0);
        // a new minimum resets the counter
        assert_eq!(s.observe(0.5), 1e-3 / 3.0);
        assert_eq!(s.observe(0.6), 1e-3 / 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience_epochs: 50,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    pub(crate) fn toy_data(rep: Representation) -> (QueryEncoder, Vec<EncodedSession>) {
        let texts = [
            (vec!["ab"], 0),
            (vec!["ba", "bb"], 1),
            (vec!["aa", "ab"], 2),
            (vec!["bab"], 3),
        ];
        let dict = build_char_dict(&["ab"]).unwrap();
        let table = EmbeddingTable::parse(Cursor::new("ab 0.3 -0.1 0.2\nba -0.2 0.4 0.1\n")).unwrap();
        let enc = QueryEncoder::new(rep, Some(dict), Some(table), 5).unwrap();
        let sessions = texts
            .iter()
            .enumerate()
            .map(|(i, (qs, l))| EncodedSession {
                id: format!("s{i}"),
                queries: qs.iter().map(|q| enc.encode(q).unwrap()).collect(),
                label: *l,
            })
            .collect();
        (enc, sessions)
    }

    fn toy_config(rep: Representation, mode: ContextMode) -> ModelConfig {
        ModelConfig {
            representation: rep,
            mode,
            lstm_size: 6,
            fc_hidden: 5,
            num_programs: 4,
            char_dict_size: 3,
            word_dim: 3,
            cell_candidate: CellCandidate::Sigmoid,
            seed: 3,
        }
    }

    #[test]
    fn memorizes_single_sample() {
        let (_, data) = toy_data(Representation::Char);
        let one = vec![data[0].clone()];
        let mut m = IntentModel::new(toy_config(Representation::Char, ContextMode::Basic)).unwrap();
        let cfg = TrainConfig {
            lr0: 1e-2,
            lambda: 0.0,
            max_epochs: 200,
            patience_epochs: 199,
            ..TrainConfig::default()
        };
        let r = train_basic(&one, &one, &mut m, &cfg).unwrap();
        let last = r.epochs.last().unwrap().train_loss;
        assert!(last < 0.01, "loss {last}");
        assert_eq!(r.selected_dev_p1, 1.0);
    }

    #[test]
    fn zero_lr_zero_lambda_leaves_parameters() {
        let (_, data) = toy_data(Representation::Word);
        let mut m = IntentModel::new(toy_config(Representation::Word, ContextMode::Basic)).unwrap();
        m.round_to_f32();
        let before = m.params.clone();
        let cfg = TrainConfig {
            lr0: 0.0,
            lambda: 0.0,
            max_epochs: 2,
            patience_epochs: 1,
            ..TrainConfig::default()
        };
        let r = train_basic(&data, &data, &mut m, &cfg).unwrap();
        for (a, b) in m.params.iter().zip(before.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(r.epochs[0].updates, 6);
    }

    #[test]
    fn update_counts_per_mode() {
        let (_, data) = toy_data(Representation::Char);
        let cfg = TrainConfig {
            max_epochs: 2,
            patience_epochs: 1,
            ..TrainConfig::default()
        };
        let (_, r) = train_model(&data, &data, &toy_config(Representation::Char, ContextMode::ContextFull), &cfg).unwrap();
        assert!(r.epochs.iter().all(|e| e.updates == data.len()));
        let (_, r) = train_model(&data, &data, &toy_config(Representation::Char, ContextMode::Basic), &cfg).unwrap();
        assert!(r.epochs.iter().all(|e| e.updates == 6));
    }

    #[test]
    fn constrained_requires_frozen_pretrained_embedding() {
        let (_, data) = toy_data(Representation::Char);
        let mut m = IntentModel::new(toy_config(Representation::Char, ContextMode::ContextConstrained)).unwrap();
        let err = train_context(&data, &data, &mut m, &TrainConfig::default(), true).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn constrained_training_keeps_embedding_bits() {
        let (enc, data) = toy_data(Representation::Combined);
        let cfg = TrainConfig {
            max_epochs: 3,
            pretrain_epochs: 2,
            patience_epochs: 1,
            ..TrainConfig::default()
        };
        let config = toy_config(Representation::Combined, ContextMode::ContextConstrained);
        let pre = pretrain_then_freeze(&data, &data, &config, &cfg).unwrap();
        assert_eq!(pre.report.pretrain_epochs, Some(2));
        let probe = enc.encode("abba").unwrap();
        assert_eq!(pre.model.embed_query(&probe).unwrap(), pre.source.embed_query(&probe).unwrap());
        let h_src = pre.source.params.value(pre.source.params.id("head.fc2.weight").unwrap()).clone();
        let h_new = pre.model.params.value(pre.model.params.id("head.fc2.weight").unwrap()).clone();
        assert_ne!(h_src, h_new);

        let mut m = pre.model;
        let before: Vec<_> = m
            .params
            .iter()
            .filter(|p| p.name.starts_with("embed_"))
            .map(|p| p.value.clone())
            .collect();
        train_context(&data, &data, &mut m, &cfg, true).unwrap();
        let after: Vec<_> = m
            .params
            .iter()
            .filter(|p| p.name.starts_with("embed_"))
            .map(|p| p.value.clone())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn session_objective_sums_prefix_losses() {
        let (_, data) = toy_data(Representation::Char);
        let m = IntentModel::new(toy_config(Representation::Char, ContextMode::ContextFull)).unwrap();
        let s = &data[1];
        let scores = m.forward_session(&s.queries).unwrap();
        let manual: f64 = scores.iter().map(|o| nll(o.probs(), s.label).0).sum();
        let lambda = 1e-3;
        let total = session_loss(&m, &s.queries, s.label, lambda).unwrap();
        assert!((total - manual - lambda * m.params.trainable_sum_squares()).abs() < 1e-12);
        let mut m2 = m.clone();
        let via_grad = accumulate_session_gradient(&mut m2, &s.queries, s.label, lambda).unwrap();
        assert!((via_grad - total).abs() < 1e-12);
    }

    #[test]
    fn deterministic_loss_sequence() {
        let (_, data) = toy_data(Representation::Combined);
        let cfg = TrainConfig {
            max_epochs: 3,
            patience_epochs: 1,
            ..TrainConfig::default()
        };
        let config = toy_config(Representation::Combined, ContextMode::ContextFull);
        let (_, a) = train_model(&data, &data, &config, &cfg).unwrap();
        let (_, b) = train_model(&data, &data, &config, &cfg).unwrap();
        let la: Vec<f64> = a.epochs.iter().map(|e| e.train_loss).collect();
        let lb: Vec<f64> = b.epochs.iter().map(|e| e.train_loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn report_tsv_columns() {
        let r = TrainReport {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.0,
                dev_loss: 2.0,
                dev_p1: 0.5,
                lr: 1e-3,
                updates: 3,
                seconds: 0.1,
            }],
            ..TrainReport::default()
        };
        let mut buf = Vec::new();
        r.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch\ttrain_loss\tdev_loss\tdev_p1\tlr");
        assert_eq!(lines.next().unwrap().split('\t').count(), 5);
    }

    fn gradient_check(rep: Representation, mode: ContextMode, cand: CellCandidate) {
        let (_, data) = toy_data(rep);
        let mut config = toy_config(rep, mode);
        config.cell_candidate = cand;
        let mut m = IntentModel::new(config).unwrap();
        if mode == ContextMode::ContextConstrained {
            m.freeze_embedding();
        }
        let s = &data[2];
        let lambda = 1e-3;
        m.params.zero_grads();
        accumulate_session_gradient(&mut m, &s.queries, s.label, lambda).unwrap();
        let analytic = m.params.clone();
        let h = 1e-5;
        for p in analytic.iter() {
            if !p.trainable {
                assert!(p.grad.data().iter().all(|&g| g == 0.0), "{} frozen but has gradient", p.name);
                continue;
            }
            let n = p.value.len();
            for k in [0, n / 2, n - 1] {
                let mut probe = m.clone();
                let id = probe.params.id(&p.name).unwrap();
                probe.params.value_mut(id).data_mut()[k] += h;
                let up = session_loss(&probe, &s.queries, s.label, lambda).unwrap();
                probe.params.value_mut(id).data_mut()[k] -= 2.0 * h;
                let down = session_loss(&probe, &s.queries, s.label, lambda).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let a = p.grad.data()[k];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                assert!(err < 1e-4, "{rep} {mode} {cand:?} {}[{k}]: analytic {a} numeric {numeric}", p.name);
            }
        }
    }

    #[test]
    fn end_to_end_gradients_all_modes() {
        for rep in Representation::ALL {
            for mode in [ContextMode::Basic, ContextMode::ContextFull, ContextMode::ContextConstrained] {
                for cand in [CellCandidate::Sigmoid, CellCandidate::Tanh] {
                    gradient_check(rep, mode, cand);
                }
            }
        }
    }
}
