//! The three architectures assembled from a query-embedding LSTM (or two),
//! an optional session-level context LSTM, and a two-layer classifier head
//! followed by a shifted softmax.
//!
//! | mode                  | embedding | context | head input      |
//! |-----------------------|-----------|---------|-----------------|
//! | `Basic`               | trained   | —       | embedding dim   |
//! | `ContextFull`         | trained   | LSTM    | `lstm_size`     |
//! | `ContextConstrained`  | frozen    | LSTM    | `lstm_size`     |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodedQuery, Representation};
use crate::error::{dim_err, Error, Result};
use crate::lstm::{CellCandidate, LstmParams, SequenceCache, INIT_SCALE};
use crate::numerics::{shifted_softmax, Linear, ParamSet, Tensor};

pub const EMBED_PREFIX: &str = "embed_";
const CHAR_PREFIX: &str = "embed_char";
const WORD_PREFIX: &str = "embed_word";
const CONTEXT_PREFIX: &str = "context";
const FC1: &str = "head.fc1";
const FC2: &str = "head.fc2";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    Basic,
    ContextFull,
    ContextConstrained,
}

impl ContextMode {
    pub const ALL: [ContextMode; 3] =
        [ContextMode::Basic, ContextMode::ContextFull, ContextMode::ContextConstrained];

    pub fn has_context(self) -> bool {
        !matches!(self, ContextMode::Basic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextMode::Basic => "basic",
            ContextMode::ContextFull => "context_full",
            ContextMode::ContextConstrained => "context_constrained",
        }
    }

    fn init_tag(self) -> u64 {
        match self {
            ContextMode::Basic => 0x0b,
            ContextMode::ContextFull => 0xcf,
            ContextMode::ContextConstrained => 0xcc,
        }
    }
}

impl std::str::FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(ContextMode::Basic),
            "context_full" | "full" | "context-f" => Ok(ContextMode::ContextFull),
            "context_constrained" | "constrained" | "context-c" => Ok(ContextMode::ContextConstrained),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for ContextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub representation: Representation,
    pub mode: ContextMode,
    pub lstm_size: usize,
    pub fc_hidden: usize,
    pub num_programs: usize,
    pub char_dict_size: usize,
    pub word_dim: usize,
    pub cell_candidate: CellCandidate,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            representation: Representation::Combined,
            mode: ContextMode::Basic,
            lstm_size: 200,
            fc_hidden: 150,
            num_programs: 471,
            char_dict_size: 80,
            word_dim: 300,
            cell_candidate: CellCandidate::Sigmoid,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lstm_size == 0 || self.fc_hidden == 0 || self.num_programs == 0 {
            return Err(Error::Config(
                "lstm_size, fc_hidden and num_programs must be at least 1".into(),
            ));
        }
        if self.representation.uses_chars() && self.char_dict_size == 0 {
            return Err(Error::Config("character representation needs char_dict_size ≥ 1".into()));
        }
        if self.representation.uses_words() && self.word_dim == 0 {
            return Err(Error::Config("word representation needs word_dim ≥ 1".into()));
        }
        Ok(())
    }

    /// Width of the query embedding `v`.
    pub fn embedding_dim(&self) -> usize {
        match self.representation {
            Representation::Combined => 2 * self.lstm_size,
            _ => self.lstm_size,
        }
    }

    pub fn head_input_dim(&self) -> usize {
        if self.mode.has_context() {
            self.lstm_size
        } else {
            self.embedding_dim()
        }
    }
}

/// Closed-form parameter count; embedding tables are not parameters.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let h = config.lstm_size;
    let mut total = 0;
    if config.representation.uses_chars() {
        total += LstmParams::parameter_count(config.char_dict_size, h);
    }
    if config.representation.uses_words() {
        total += LstmParams::parameter_count(config.word_dim, h);
    }
    if config.mode.has_context() {
        total += LstmParams::parameter_count(config.embedding_dim(), h);
    }
    let (fin, fc, p) = (config.head_input_dim(), config.fc_hidden, config.num_programs);
    total + fin * fc + fc + fc * p + p
}

/// Normalized distribution over the program set.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn from_logits(logits: &[f64]) -> Self {
        ScoreVector(shifted_softmax(logits))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All programs, most probable first; ties go to the lower index.
    pub fn ranking(&self) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx.into_iter().map(|i| (i, self.0[i])).collect()
    }
}

/// Top-`k` `(program index, probability)` pairs.
pub fn predict_topk(o: &ScoreVector, k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > o.len() {
        return Err(Error::OutOfRange {
            what: "k",
            value: k,
            allowed: format!("1..={}", o.len()),
        });
    }
    let mut r = o.ranking();
    r.truncate(k);
    Ok(r)
}

pub(crate) struct QueryTrace {
    chars: Option<SequenceCache>,
    words: Option<SequenceCache>,
    pub embedding: Vec<f64>,
}

pub(crate) struct HeadTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct IntentModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    char_lstm: Option<LstmParams>,
    word_lstm: Option<LstmParams>,
    context: Option<LstmParams>,
    fc1: Linear,
    fc2: Linear,
    frozen_embedding: bool,
}

impl IntentModel {
    /// Freshly initialized model (uniform weights in ±0.05).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (config.mode.init_tag() << 56));
        let mut params = ParamSet::new();
        let (h, cand) = (config.lstm_size, config.cell_candidate);
        let char_lstm = if config.representation.uses_chars() {
            Some(LstmParams::register(&mut params, CHAR_PREFIX, config.char_dict_size, h, cand, &mut rng)?)
        } else {
            None
        };
        let word_lstm = if config.representation.uses_words() {
            Some(LstmParams::register(&mut params, WORD_PREFIX, config.word_dim, h, cand, &mut rng)?)
        } else {
            None
        };
        let context = if config.mode.has_context() {
            Some(LstmParams::register(
                &mut params,
                CONTEXT_PREFIX,
                config.embedding_dim(),
                h,
                cand,
                &mut rng,
            )?)
        } else {
            None
        };
        let fc1 = Linear::register(&mut params, FC1, config.head_input_dim(), config.fc_hidden, INIT_SCALE, &mut rng)?;
        let fc2 = Linear::register(&mut params, FC2, config.fc_hidden, config.num_programs, INIT_SCALE, &mut rng)?;
        Ok(IntentModel {
            config,
            params,
            char_lstm,
            word_lstm,
            context,
            fc1,
            fc2,
            frozen_embedding: false,
        })
    }

    /// Rebuilds a model around previously saved parameters.
    pub fn from_params(config: ModelConfig, params: ParamSet, frozen_embedding: bool) -> Result<Self> {
        config.validate()?;
        let (h, cand) = (config.lstm_size, config.cell_candidate);
        let char_lstm = config
            .representation
            .uses_chars()
            .then(|| LstmParams::bind(&params, CHAR_PREFIX, config.char_dict_size, h, cand))
            .transpose()?;
        let word_lstm = config
            .representation
            .uses_words()
            .then(|| LstmParams::bind(&params, WORD_PREFIX, config.word_dim, h, cand))
            .transpose()?;
        let context = config
            .mode
            .has_context()
            .then(|| LstmParams::bind(&params, CONTEXT_PREFIX, config.embedding_dim(), h, cand))
            .transpose()?;
        let bind_linear = |name: &str, i: usize, o: usize| -> Result<Linear> {
            let get = |n: String, shape: &[usize]| -> Result<_> {
                let id = params
                    .id(&n)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")))?;
                if params.value(id).shape() != shape {
                    return Err(Error::Dimension(format!("tensor `{n}` shape mismatch")));
                }
                Ok(id)
            };
            Ok(Linear {
                weight: get(format!("{name}.weight"), &[o, i])?,
                bias: get(format!("{name}.bias"), &[o])?,
                in_dim: i,
                out_dim: o,
            })
        };
        let fc1 = bind_linear(FC1, config.head_input_dim(), config.fc_hidden)?;
        let fc2 = bind_linear(FC2, config.fc_hidden, config.num_programs)?;
        let expected = count_parameters(&config);
        if params.scalar_count() != expected {
            return Err(Error::Checkpoint(format!(
                "parameter census {} does not match architecture ({expected})",
                params.scalar_count()
            )));
        }
        let mut m = IntentModel {
            config,
            params,
            char_lstm,
            word_lstm,
            context,
            fc1,
            fc2,
            frozen_embedding: false,
        };
        if frozen_embedding {
            m.freeze_embedding();
        }
        Ok(m)
    }

    pub fn mode(&self) -> ContextMode {
        self.config.mode
    }

    pub fn is_embedding_frozen(&self) -> bool {
        self.frozen_embedding
    }

    pub fn freeze_embedding(&mut self) {
        self.params.set_trainable_prefix(EMBED_PREFIX, false);
        self.frozen_embedding = true;
    }

    /// Copies the query-embedding LSTM weights from another model with the same representation.
    pub fn load_embedding_from(&mut self, source: &IntentModel) -> Result<()> {
        if source.config.representation != self.config.representation
            || source.config.lstm_size != self.config.lstm_size
        {
            return Err(Error::Config(
                "embedding source has a different representation or lstm size".into(),
            ));
        }
        self.params.copy_values_from(&source.params, EMBED_PREFIX)?;
        Ok(())
    }

    pub fn parameter_census(&self) -> usize {
        self.params.scalar_count()
    }

    pub(crate) fn embed_trace(&self, q: &EncodedQuery) -> Result<QueryTrace> {
        let run = |lstm: &Option<LstmParams>, m: &Option<Tensor>, what: &str| -> Result<Option<SequenceCache>> {
            match (lstm, m) {
                (Some(l), Some(x)) => Ok(Some(l.sequence_forward(&self.params, x)?)),
                (Some(_), None) => Err(Error::EmptyInput(format!("query lacks its {what} encoding"))),
                _ => Ok(None),
            }
        };
        let chars = run(&self.char_lstm, &q.chars, "character")?;
        let words = run(&self.word_lstm, &q.words, "word")?;
        let mut embedding = Vec::with_capacity(self.config.embedding_dim());
        if let Some(c) = &chars {
            embedding.extend_from_slice(c.last_h());
        }
        if let Some(w) = &words {
            embedding.extend_from_slice(w.last_h());
        }
        Ok(QueryTrace {
            chars,
            words,
            embedding,
        })
    }

    /// Query embedding `v`: the last hidden state of the query LSTM, or the
    /// concatenation `[v_char, v_word]` for the combined representation.
    pub fn embed_query(&self, q: &EncodedQuery) -> Result<Vec<f64>> {
        Ok(self.embed_trace(q)?.embedding)
    }

    /// Pushes `grad_v` into the query LSTM(s); only the last state receives gradient.
    pub(crate) fn embed_backward(&mut self, trace: &QueryTrace, grad_v: &[f64]) -> Result<()> {
        let h = self.config.lstm_size;
        let mut offset = 0;
        for (lstm, cache) in [(&self.char_lstm, &trace.chars), (&self.word_lstm, &trace.words)] {
            if let (Some(l), Some(c)) = (lstm, cache) {
                let mut grads = vec![vec![0.0; h]; c.len()];
                grads[c.len() - 1].copy_from_slice(&grad_v[offset..offset + h]);
                l.sequence_backward(&mut self.params, c, &grads)?;
                offset += h;
            }
        }
        Ok(())
    }

    pub(crate) fn head_forward(&self, x: &[f64]) -> Result<HeadTrace> {
        if x.len() != self.fc1.in_dim {
            return Err(dim_err("classifier input", self.fc1.in_dim, x.len()));
        }
        let hidden: Vec<f64> = self
            .fc1
            .forward(&self.params, x)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let logits = self.fc2.forward(&self.params, &hidden);
        Ok(HeadTrace {
            input: x.to_vec(),
            hidden,
            probs: shifted_softmax(&logits),
        })
    }

    /// Backward through both affine layers given ∂L/∂logits; returns ∂L/∂input.
    pub(crate) fn head_backward(&mut self, trace: &HeadTrace, grad_logits: &[f64]) -> Vec<f64> {
        let gl = self.fc2.backward(&mut self.params, &trace.hidden, grad_logits);
        let gpre: Vec<f64> = gl
            .iter()
            .zip(&trace.hidden)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        self.fc1.backward(&mut self.params, &trace.input, &gpre)
    }

    /// `softmax(W2·tanh(W1·x + b1) + b2)`.
    pub fn classify(&self, x: &[f64]) -> Result<ScoreVector> {
        Ok(ScoreVector(self.head_forward(x)?.probs))
    }

    pub(crate) fn context_forward(&self, embeddings: &[Vec<f64>]) -> Result<SequenceCache> {
        let g = self
            .context
            .as_ref()
            .ok_or_else(|| Error::Usage("basic model has no context layer".into()))?;
        let xs = Tensor::from_rows(embeddings)?;
        g.sequence_forward(&self.params, &xs)
    }

    pub(crate) fn context_backward(&mut self, cache: &SequenceCache, grad_c: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let g = self
            .context
            .clone()
            .ok_or_else(|| Error::Usage("basic model has no context layer".into()))?;
        g.sequence_backward(&mut self.params, cache, grad_c)
    }

    /// One score vector per session prefix: step `t` sees queries `1..=t` only.
    pub fn forward_session(&self, queries: &[EncodedQuery]) -> Result<Vec<ScoreVector>> {
        if queries.is_empty() {
            return Err(Error::EmptyInput("session has no queries".into()));
        }
        let embeddings = queries
            .iter()
            .map(|q| self.embed_query(q))
            .collect::<Result<Vec<_>>>()?;
        self.forward_embeddings(&embeddings)
    }

    /// Same as [`forward_session`](Self::forward_session) from precomputed embeddings.
    pub fn forward_embeddings(&self, embeddings: &[Vec<f64>]) -> Result<Vec<ScoreVector>> {
        if embeddings.is_empty() {
            return Err(Error::EmptyInput("session has no queries".into()));
        }
        if self.config.mode.has_context() {
            let cache = self.context_forward(embeddings)?;
            cache.hidden_states().map(|c| self.classify(c)).collect()
        } else {
            embeddings.iter().map(|v| self.classify(v)).collect()
        }
    }

    /// Rounds parameters to the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        self.params.round_to_f32();
    }
}
