//! Command-line front end: `gen`, `prepare`, `train`, `eval`, `predict`, `params`.
//!
//! Each subcommand is also a plain function so examples and tests can drive
//! the same code path without spawning a process.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_predictions, Baseline, TitleCatalog};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, KvConfig, TrainSettings};
use crate::dataset::{self, build_encoder, encode_sessions, load_prepared, text_sessions, PreparedData};
use crate::encoding::{load_embeddings, EncodedQuery, Representation};
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport, PrefixPrediction, SessionPrediction};
use crate::models::{count_parameters, ContextMode, IntentModel, ModelConfig};
use crate::pipeline::{self, PrepareParams, PrepareReport, SessionRecord, SplitName};
use crate::synthgen::{self, GenConfig, EMBEDDINGS_FILE};
use crate::training::{train_context, train_model, TrainReport};

pub const THREADS_ENV: &str = "SESSION_INTENT_THREADS";
pub const REPORT_TSV: &str = "train_report.tsv";

#[derive(Debug, Parser)]
#[command(name = "session-intent", version, about = "Session-aware intent prediction for noisy voice queries")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic query, watch, catalog and truth logs.
    Gen(GenArgs),
    /// Sessionize, label, filter and split raw logs.
    Prepare(PrepareArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Score a checkpoint or a baseline on one split.
    Eval(EvalArgs),
    /// Per-query top-k predictions, batch or interactive.
    Predict(PredictArgs),
    /// Parameter counts for every mode and representation.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory holding queries.jsonl, watches.jsonl and catalog.jsonl.
    #[arg(long = "input", alias = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared-data directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<ContextMode>,
    #[arg(long)]
    pub rep: Option<Representation>,
    /// Basic-model checkpoint whose embedding layer seeds a constrained model.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// train, single_dev, single_test, multi_dev, multi_test, dev or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<Baseline>,
    /// Text report path; `.json` and `.positions.csv` siblings are written too.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = eval::DEFAULT_THRESHOLDS)]
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sessions JSONL; stdin when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub interactive: bool,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 471)]
    pub num_programs: usize,
    #[arg(long, default_value_t = 80)]
    pub char_dim: usize,
    #[arg(long, default_value_t = 300)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 200)]
    pub lstm_size: usize,
    #[arg(long, default_value_t = 150)]
    pub fc_hidden: usize,
    /// Also build every model and compare against its tensor census.
    #[arg(long)]
    pub census: bool,
}

/// Caps the global worker pool when the environment asks for it.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        // a pool built earlier in the process is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Gen(a) => {
            let mut cfg = match &a.config {
                Some(p) => {
                    let mut kv = KvConfig::load(p)?;
                    let c = config::gen_config(&mut kv)?;
                    kv.finish()?;
                    c
                }
                None => GenConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let files = cmd_gen(&cfg, &a.out)?;
            println!("wrote {} files to {}", files.len(), a.out.display());
        }
        Command::Prepare(a) => {
            let mut params = match &a.config {
                Some(p) => {
                    let mut kv = KvConfig::load(p)?;
                    let c = config::prepare_params(&mut kv)?;
                    kv.finish()?;
                    c
                }
                None => PrepareParams::default(),
            };
            if let Some(s) = a.seed {
                params.seed = s;
            }
            let report = cmd_prepare(&a.input, &a.out, &params)?;
            pipeline::write_stats_table(io::stdout().lock(), &report.stats)?;
        }
        Command::Train(a) => {
            let mut settings = match &a.config {
                Some(p) => {
                    let mut kv = KvConfig::load(p)?;
                    let s = config::train_settings(&mut kv)?;
                    kv.finish()?;
                    s
                }
                None => TrainSettings::default(),
            };
            if let Some(m) = a.mode {
                settings.model.mode = m;
            }
            if let Some(r) = a.rep {
                settings.model.representation = r;
            }
            if let Some(s) = a.seed {
                settings.model.seed = s;
                settings.train.seed = s;
            }
            if let Some(e) = a.max_epochs {
                settings.train.max_epochs = e;
            }
            if a.embeddings.is_some() {
                settings.embeddings = a.embeddings.clone();
            }
            let out = cmd_train(&a.data, &settings, a.pretrained.as_deref(), &a.out)?;
            println!(
                "best epoch {} dev p@1 {:.4}; checkpoint {}",
                out.report.best_epoch,
                out.report.selected_dev_p1,
                a.out.display()
            );
        }
        Command::Eval(a) => {
            let report = cmd_eval(
                &a.data,
                &a.split,
                a.checkpoint.as_deref(),
                a.baseline,
                &a.thresholds,
                a.out.as_deref(),
            )?;
            if a.out.is_none() {
                report.write_text(io::stdout().lock())?;
            }
        }
        Command::Predict(a) => {
            let ck = checkpoint::load(&a.checkpoint)?;
            if a.interactive {
                let stdin = io::stdin();
                run_interactive(Predictor::new(ck, a.top_k)?, stdin.lock(), io::stdout().lock())?;
            } else {
                let input: Box<dyn BufRead> = match &a.input {
                    Some(p) => Box::new(BufReader::new(fs::File::open(p)?)),
                    None => Box::new(BufReader::new(io::stdin())),
                };
                let output: Box<dyn Write> = match &a.out {
                    Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
                    None => Box::new(io::stdout().lock()),
                };
                let (n, skipped) = cmd_predict_batch(&ck, input, output, a.top_k)?;
                eprintln!("predicted {n} sessions, skipped {skipped} malformed lines");
            }
        }
        Command::Params(a) => {
            let mut base = ModelConfig {
                num_programs: a.num_programs,
                char_dict_size: a.char_dim,
                word_dim: a.word_dim,
                lstm_size: a.lstm_size,
                fc_hidden: a.fc_hidden,
                ..ModelConfig::default()
            };
            if let Some(p) = &a.config {
                let mut kv = KvConfig::load(p)?;
                kv.take_into("num_programs", &mut base.num_programs)?;
                kv.take_into("char_dict_size", &mut base.char_dict_size)?;
                kv.take_into("word_dim", &mut base.word_dim)?;
                kv.take_into("lstm_size", &mut base.lstm_size)?;
                kv.take_into("fc_hidden", &mut base.fc_hidden)?;
                kv.finish()?;
            }
            let rows = cmd_params(&base, a.census)?;
            write_params_table(io::stdout().lock(), &rows)?;
        }
    }
    Ok(())
}

pub fn cmd_gen(cfg: &GenConfig, out: &Path) -> Result<Vec<String>> {
    synthgen::write_dataset(cfg, out)
}

/// Runs the pipeline on `input` and writes the prepared directory to `out`.
/// A word-vector file in `input` is copied along.
pub fn cmd_prepare(input: &Path, out: &Path, params: &PrepareParams) -> Result<PrepareReport> {
    let queries: Vec<pipeline::RawQueryEvent> = pipeline::read_jsonl(input.join("queries.jsonl"))?;
    let watches: Vec<pipeline::WatchEvent> = pipeline::read_jsonl(input.join("watches.jsonl"))?;
    let catalog_path = input.join("catalog.jsonl");
    let catalog: Vec<pipeline::ProgramCatalogEntry> = if catalog_path.exists() {
        pipeline::read_jsonl(catalog_path)?
    } else {
        Vec::new()
    };
    let prepared = pipeline::prepare(&queries, &watches, params)?;
    pipeline::validate_prepared(&prepared, params)?;
    dataset::write_prepared(out, &prepared, &catalog)?;
    let emb = input.join(EMBEDDINGS_FILE);
    if emb.exists() {
        fs::copy(&emb, out.join(EMBEDDINGS_FILE))?;
    }
    log::info!(
        "{} raw queries -> {} sessions -> {} labeled -> {} program-related -> {} cohesive -> {} in vocabulary ({} programs)",
        prepared.report.raw_queries,
        prepared.report.sessions,
        prepared.report.labeled,
        prepared.report.program_related,
        prepared.report.cohesive,
        prepared.report.in_vocab,
        prepared.report.programs
    );
    Ok(prepared.report)
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: IntentModel,
}

fn embeddings_for(data: &Path, settings: &TrainSettings) -> Option<PathBuf> {
    if !settings.model.representation.uses_words() {
        return None;
    }
    settings.embeddings.clone().or_else(|| {
        let p = data.join(EMBEDDINGS_FILE);
        p.exists().then_some(p)
    })
}

/// Trains on the Train split, selects on SingleDev ∪ MultiDev and writes
/// the checkpoint plus `train_report.tsv` into `out`.
pub fn cmd_train(data: &Path, settings: &TrainSettings, pretrained: Option<&Path>, out: &Path) -> Result<TrainOutcome> {
    let prepared = load_prepared(data)?;
    let mut model_cfg = settings.model.clone();
    let (model, report, encoder, emb_path) = match (model_cfg.mode, pretrained) {
        (ContextMode::ContextConstrained, Some(pre_dir)) => {
            let pre = checkpoint::load(pre_dir)?;
            if pre.model.mode() != ContextMode::Basic {
                return Err(Error::Config(format!(
                    "--pretrained must point at a basic-model checkpoint, found {}",
                    pre.model.mode()
                )));
            }
            if pre.vocab != prepared.vocab {
                return Err(Error::Config("pretrained checkpoint was built for a different program vocabulary".into()));
            }
            let cfg = ModelConfig {
                mode: ContextMode::ContextConstrained,
                seed: model_cfg.seed,
                ..pre.model.config.clone()
            };
            let (train, dev) = encode_train_dev(&prepared, &pre.encoder)?;
            let mut m = IntentModel::new(cfg)?;
            m.load_embedding_from(&pre.model)?;
            m.freeze_embedding();
            let mut r = train_context(&train, &dev, &mut m, &settings.train, true)?;
            r.pretrain_epochs = None;
            (m, r, pre.encoder, pre.manifest.embeddings_path)
        }
        (_, Some(_)) => {
            return Err(Error::Usage("--pretrained only applies to the constrained mode".into()));
        }
        (_, None) => {
            let emb_path = embeddings_for(data, settings);
            let table = emb_path.as_deref().map(load_embeddings).transpose()?;
            if let Some(t) = &table {
                model_cfg.word_dim = t.dim();
            }
            let encoder = build_encoder(
                model_cfg.representation,
                &prepared.train_texts(),
                table,
                model_cfg.word_dim,
                settings.unk_seed,
            )?;
            model_cfg.num_programs = prepared.vocab.len();
            if let Some(c) = encoder.char_dim() {
                model_cfg.char_dict_size = c;
            }
            let (train, dev) = encode_train_dev(&prepared, &encoder)?;
            let (m, r) = train_model(&train, &dev, &model_cfg, &settings.train)?;
            (m, r, encoder, emb_path)
        }
    };
    checkpoint::save(out, &model, &encoder, &prepared.vocab, emb_path.as_deref())?;
    report.save_tsv(out.join(REPORT_TSV))?;
    Ok(TrainOutcome { report, model })
}

fn encode_train_dev(
    prepared: &PreparedData,
    encoder: &crate::encoding::QueryEncoder,
) -> Result<(Vec<crate::training::EncodedSession>, Vec<crate::training::EncodedSession>)> {
    let (train, s1) = encode_sessions(encoder, &prepared.split(SplitName::Train), &prepared.vocab)?;
    let (dev, s2) = encode_sessions(encoder, &prepared.dev(), &prepared.vocab)?;
    if s1 + s2 > 0 {
        log::warn!("skipped {} queries that were blank after normalization", s1 + s2);
    }
    Ok((train, dev))
}

/// `dev` and `test` select both the single- and multi-query parts.
pub fn parse_split(s: &str) -> Result<Vec<SplitName>> {
    match s.to_ascii_lowercase().as_str() {
        "dev" => Ok(vec![SplitName::SingleDev, SplitName::MultiDev]),
        "test" => Ok(vec![SplitName::SingleTest, SplitName::MultiTest]),
        other => Ok(vec![other.parse()?]),
    }
}

fn select<'a>(prepared: &'a PreparedData, split: &str) -> Result<Vec<&'a SessionRecord>> {
    let names = parse_split(split)?;
    Ok(names.iter().flat_map(|&n| prepared.split(n)).collect())
}

/// Predictions of a checkpoint on one split of prepared data.
pub fn predict_split(ck: &Checkpoint, prepared: &PreparedData, split: &str) -> Result<Vec<SessionPrediction>> {
    if ck.vocab != prepared.vocab {
        return Err(Error::Config(format!(
            "vocabulary mismatch: checkpoint has {} programs, data has {} (or a different set)",
            ck.vocab.len(),
            prepared.vocab.len()
        )));
    }
    let (sessions, _) = encode_sessions(&ck.encoder, &select(prepared, split)?, &prepared.vocab)?;
    eval::predict_sessions(&ck.model, &sessions)
}

/// Baseline predictions on one split.
pub fn baseline_split(kind: Baseline, prepared: &PreparedData, split: &str) -> Result<Vec<SessionPrediction>> {
    let catalog = TitleCatalog::from_catalog(&prepared.vocab, &prepared.catalog)?;
    let sessions = text_sessions(&select(prepared, split)?, &prepared.vocab)?;
    Ok(baseline_predictions(kind, &sessions, &catalog))
}

pub fn cmd_eval(
    data: &Path,
    split: &str,
    checkpoint_dir: Option<&Path>,
    baseline: Option<Baseline>,
    thresholds: &[f64],
    out: Option<&Path>,
) -> Result<MetricReport> {
    let prepared = load_prepared(data)?;
    let preds = match (baseline, checkpoint_dir) {
        (Some(b), _) => baseline_split(b, &prepared, split)?,
        (None, Some(c)) => predict_split(&checkpoint::load(c)?, &prepared, split)?,
        (None, None) => return Err(Error::Usage("eval needs --checkpoint or --baseline".into())),
    };
    let report = eval::evaluate(&preds, thresholds)?;
    if let Some(path) = out {
        let mut text = BufWriter::new(fs::File::create(path)?);
        report.write_text(&mut text)?;
        text.flush()?;
        fs::write(sibling(path, "json"), serde_json::to_string_pretty(&report)? + "\n")?;
        let mut csv = BufWriter::new(fs::File::create(sibling(path, "positions.csv"))?);
        eval::write_position_csv(&mut csv, &preds)?;
        csv.flush()?;
    }
    Ok(report)
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Clone, Debug, Deserialize)]
struct PredictQuery {
    text: String,
}

#[derive(Clone, Debug, Deserialize)]
struct PredictInput {
    #[serde(default)]
    session_id: String,
    queries: Vec<PredictQuery>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedProgram {
    pub program: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixOutput {
    pub session_id: String,
    /// 1-based position of the query inside the session.
    pub position: usize,
    pub query: String,
    pub top: Vec<RankedProgram>,
}

fn top_k(ck: &Checkpoint, p: &PrefixPrediction, scores: &crate::models::ScoreVector, k: usize) -> Vec<RankedProgram> {
    p.ranking
        .iter()
        .take(k)
        .map(|&i| RankedProgram {
            program: ck.vocab.program(i).to_string(),
            confidence: scores.probs()[i],
        })
        .collect()
}

/// Reads sessions JSONL and writes one line per prefix. Malformed lines are
/// skipped and counted; blank queries are dropped from the session.
pub fn cmd_predict_batch<R: BufRead, W: Write>(ck: &Checkpoint, input: R, mut out: W, k: usize) -> Result<(usize, usize)> {
    let (items, skipped) = pipeline::parse_jsonl_lenient::<PredictInput, _>(input)?;
    let mut done = 0;
    for (n, item) in items.iter().enumerate() {
        let id = if item.session_id.is_empty() {
            format!("session{n}")
        } else {
            item.session_id.clone()
        };
        let mut texts = Vec::new();
        let mut encoded = Vec::new();
        for q in &item.queries {
            match ck.encoder.encode(&q.text) {
                Ok(e) => {
                    texts.push(q.text.clone());
                    encoded.push(e);
                }
                Err(Error::SkipQuery(_)) => log::warn!("session {id}: skipping blank query"),
                Err(e) => return Err(e),
            }
        }
        if encoded.is_empty() {
            continue;
        }
        let scores = ck.model.forward_session(&encoded)?;
        for (i, (o, text)) in scores.iter().zip(&texts).enumerate() {
            let p = PrefixPrediction::from_scores(o);
            let line = PrefixOutput {
                session_id: id.clone(),
                position: i + 1,
                query: text.clone(),
                top: top_k(ck, &p, o, k),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        done += 1;
    }
    out.flush()?;
    Ok((done, skipped))
}

/// Holds the queries of one simulated session for interactive prediction.
pub struct Predictor {
    ck: Checkpoint,
    k: usize,
    history: Vec<EncodedQuery>,
}

impl Predictor {
    pub fn new(ck: Checkpoint, k: usize) -> Result<Self> {
        if k == 0 || k > ck.vocab.len() {
            return Err(Error::OutOfRange {
                what: "top-k",
                value: k,
                allowed: format!("1..={}", ck.vocab.len()),
            });
        }
        Ok(Predictor {
            ck,
            k,
            history: Vec::new(),
        })
    }

    /// Adds `text` to the session and returns the top-k programs after it.
    pub fn query(&mut self, text: &str) -> Result<Vec<RankedProgram>> {
        let e = self.ck.encoder.encode(text)?;
        self.history.push(e);
        let scores = self.ck.model.forward_session(&self.history)?;
        let last = scores.last().expect("history is nonempty");
        Ok(top_k(&self.ck, &PrefixPrediction::from_scores(last), last, self.k))
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }

    pub fn session_len(&self) -> usize {
        self.history.len()
    }
}

/// Read-eval loop: each line is a query, `reset` starts a new session, `quit` exits.
pub fn run_interactive<R: BufRead, W: Write>(mut p: Predictor, input: R, mut out: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        let q = line.trim();
        match q {
            "" => continue,
            "quit" | "exit" => break,
            "reset" => {
                p.reset();
                writeln!(out, "-- new session")?;
            }
            _ => match p.query(q) {
                Ok(top) => {
                    writeln!(out, "[{}] {q}", p.session_len())?;
                    for (i, r) in top.iter().enumerate() {
                        writeln!(out, "  {}. {} {:.4}", i + 1, r.program, r.confidence)?;
                    }
                }
                Err(Error::SkipQuery(_)) => writeln!(out, "(ignored: nothing left after normalization)")?,
                Err(e) => return Err(e),
            },
        }
        out.flush()?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamsRow {
    pub mode: ContextMode,
    pub rep: Representation,
    pub count: usize,
}

pub fn cmd_params(base: &ModelConfig, census: bool) -> Result<Vec<ParamsRow>> {
    let mut rows = Vec::new();
    for mode in [ContextMode::Basic, ContextMode::ContextFull, ContextMode::ContextConstrained] {
        for rep in Representation::ALL {
            let cfg = ModelConfig {
                mode,
                representation: rep,
                ..base.clone()
            };
            cfg.validate()?;
            let count = count_parameters(&cfg);
            if census {
                let built = IntentModel::new(cfg)?.parameter_census();
                if built != count {
                    return Err(Error::Dimension(format!(
                        "{mode}/{rep}: closed form {count} but model holds {built}"
                    )));
                }
            }
            rows.push(ParamsRow { mode, rep, count });
        }
    }
    Ok(rows)
}

pub fn write_params_table<W: Write>(mut w: W, rows: &[ParamsRow]) -> Result<()> {
    writeln!(w, "mode\tchar\tword\tcomb")?;
    for chunk in rows.chunks(3) {
        write!(w, "{}", chunk[0].mode)?;
        for r in chunk {
            write!(w, "\t{}", r.count)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_table_defaults() {
        let rows = cmd_params(&ModelConfig::default(), false).unwrap();
        let counts: Vec<usize> = rows.iter().map(|r| r.count).collect();
        assert_eq!(
            counts,
            [326_871, 502_871, 758_471, 648_471, 824_471, 1_210_071, 648_471, 824_471, 1_210_071]
        );
        let mut buf = Vec::new();
        write_params_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with("326871\t502871\t758471"));
    }

    #[test]
    fn small_vocab_matches_census() {
        let base = ModelConfig {
            num_programs: 50,
            char_dict_size: 30,
            word_dim: 20,
            lstm_size: 16,
            fc_hidden: 12,
            ..ModelConfig::default()
        };
        cmd_params(&base, true).unwrap();
    }

    #[test]
    fn split_selection() {
        assert_eq!(parse_split("dev").unwrap(), [SplitName::SingleDev, SplitName::MultiDev]);
        assert_eq!(parse_split("multi-test").unwrap(), [SplitName::MultiTest]);
        assert!(parse_split("holdout").is_err());
    }

    #[test]
    fn cli_parses_flags() {
        let c = Cli::try_parse_from([
            "session-intent",
            "eval",
            "--data",
            "d",
            "--baseline",
            "editdist",
            "--thresholds",
            "0.5,0.9",
        ])
        .unwrap();
        match c.command {
            Command::Eval(a) => {
                assert_eq!(a.thresholds, vec![0.5, 0.9]);
                assert_eq!(a.baseline, Some(Baseline::EditDistance));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["session-intent", "eval", "--data", "d"]).is_err());
        let c = Cli::try_parse_from(["session-intent", "train", "--data", "d", "--out", "o", "--mode", "constrained", "--rep", "char"]).unwrap();
        assert!(matches!(c.command, Command::Train(TrainArgs { mode: Some(ContextMode::ContextConstrained), .. })));
    }
}
