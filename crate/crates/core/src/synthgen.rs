//! Synthetic voice-query logs with ASR-like noise.
//!
//! Titles are pseudo-words. A fraction of programs come in pairs sharing one
//! title with different action types; sessions for those open with a cue query
//! (title plus a genre word) and always end on the clean shared title, so only
//! the earlier queries tell the two intents apart.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{session_id, write_jsonl, ProgramCatalogEntry, RawQueryEvent, WatchEvent};

pub const ACTION_TYPES: [&str; 4] = ["SERIES", "MOVIE", "MUSICVIDEO", "SPORTS"];
const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "br"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const CODAS: [&str; 5] = ["", "", "n", "r", "x"];
const OFF_TOPIC: [&str; 8] = ["weather", "today", "volume", "up", "lights", "off", "what", "time"];
const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

pub fn cue_words(action: &str) -> &'static [&'static str] {
    match action {
        "SERIES" => &["series", "show", "episodes"],
        "MOVIE" => &["movie", "film"],
        "MUSICVIDEO" => &["video", "song"],
        "SPORTS" => &["game", "match", "live"],
        _ => &["channel"],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub char_sub_rate: f64,
    pub char_del_rate: f64,
    pub char_ins_rate: f64,
    /// Whole-word corruptions `(from, to)`.
    pub confusion_pairs: Vec<(String, String)>,
    /// Probability that a token with a confusion entry is swapped.
    pub confusion_rate: f64,
    /// Noise multiplier per reformulation.
    pub retry_noise_decay: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            char_sub_rate: 0.05,
            char_del_rate: 0.02,
            char_ins_rate: 0.02,
            confusion_pairs: Vec::new(),
            confusion_rate: 0.0,
            retry_noise_decay: 0.5,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        NoiseModel {
            char_sub_rate: 0.0,
            char_del_rate: 0.0,
            char_ins_rate: 0.0,
            confusion_rate: 0.0,
            ..NoiseModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.char_sub_rate, self.char_del_rate, self.char_ins_rate, self.confusion_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("noise rates must lie in [0, 1]".into()));
        }
        if !(self.retry_noise_decay > 0.0 && self.retry_noise_decay <= 1.0) {
            return Err(Error::Config("retry_noise_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Corrupts `text` with every rate multiplied by `scale`. Never returns a blank string.
    pub fn apply(&self, text: &str, scale: f64, rng: &mut impl Rng) -> String {
        let swapped: Vec<String> = text
            .split(' ')
            .map(|tok| {
                let hit = self.confusion_pairs.iter().find(|(from, _)| from == tok);
                match hit {
                    Some((_, to)) if rng.gen::<f64>() < self.confusion_rate * scale => to.clone(),
                    _ => tok.to_string(),
                }
            })
            .collect();
        let joined = swapped.join(" ");
        let (sub, del, ins) = (
            self.char_sub_rate * scale,
            self.char_del_rate * scale,
            self.char_ins_rate * scale,
        );
        let mut out = String::with_capacity(joined.len() + 4);
        for c in joined.chars() {
            if rng.gen::<f64>() < ins {
                out.push(random_letter(rng));
            }
            if c == ' ' {
                out.push(c);
                continue;
            }
            let r = rng.gen::<f64>();
            if r < del {
                continue;
            }
            if r < del + sub {
                out.push(random_letter(rng));
            } else {
                out.push(c);
            }
        }
        let norm = crate::encoding::normalize(&out);
        if norm.is_empty() {
            text.to_string()
        } else {
            norm
        }
    }
}

fn random_letter(rng: &mut impl Rng) -> char {
    char::from(ALPHABET[rng.gen_range(0..ALPHABET.len())])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_programs: usize,
    pub n_devices: usize,
    pub n_sessions: usize,
    /// Success probability of the geometric session length.
    pub session_length_p: f64,
    pub max_session_len: usize,
    pub ambiguity_rate: f64,
    pub watch_probability: f64,
    /// Probability of a short, non-qualifying watch right after a session.
    pub distractor_rate: f64,
    /// Share of sessions made of off-topic queries.
    pub other_session_rate: f64,
    /// Dimension of the generated word-vector file; 0 writes none.
    pub embedding_dim: usize,
    pub seed: u64,
    pub noise: NoiseModel,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_programs: 50,
            n_devices: 200,
            n_sessions: 10_000,
            session_length_p: 1.0 / 1.44,
            max_session_len: 9,
            ambiguity_rate: 0.3,
            watch_probability: 1.0,
            distractor_rate: 0.0,
            other_session_rate: 0.0,
            embedding_dim: 0,
            seed: 1,
            noise: NoiseModel::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_programs < 2 || self.n_devices == 0 || self.n_sessions == 0 || self.max_session_len == 0 {
            return Err(Error::Config(
                "n_programs must be at least 2; n_devices, n_sessions, max_session_len at least 1".into(),
            ));
        }
        let rates = [
            self.ambiguity_rate,
            self.watch_probability,
            self.distractor_rate,
            self.other_session_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("rates must lie in [0, 1]".into()));
        }
        if !(self.session_length_p > 0.0 && self.session_length_p <= 1.0) {
            return Err(Error::Config("session_length_p must lie in (0, 1]".into()));
        }
        self.noise.validate()
    }

    /// Programs taking part in shared-title pairs.
    pub fn ambiguous_program_count(&self) -> usize {
        let raw = (self.ambiguity_rate * self.n_programs as f64).floor() as usize;
        raw - raw % 2
    }
}

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("nonempty"));
        w.push_str(VOWELS.choose(rng).expect("nonempty"));
    }
    w.push_str(CODAS.choose(rng).expect("nonempty"));
    w
}

/// Program ids `p000…`; the first `ambiguous_program_count` programs form
/// consecutive shared-title pairs with distinct action types.
pub fn generate_catalog(cfg: &GenConfig) -> Result<Vec<ProgramCatalogEntry>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reserved: BTreeSet<&str> = ACTION_TYPES
        .iter()
        .flat_map(|a| cue_words(a).iter().copied())
        .chain(OFF_TOPIC)
        .collect();
    let pool_size = (cfg.n_programs * 2).max(8);
    let mut pool: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    while pool.len() < pool_size {
        let w = pseudo_word(&mut rng);
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            pool.push(w);
        }
    }
    let n_titles = cfg.n_programs - cfg.ambiguous_program_count() / 2;
    let mut titles: Vec<String> = Vec::new();
    let mut used = BTreeSet::new();
    while titles.len() < n_titles {
        let n = rng.gen_range(2..=3);
        let t = (0..n)
            .map(|_| pool.choose(&mut rng).expect("nonempty").clone())
            .collect::<Vec<_>>()
            .join(" ");
        if used.insert(t.clone()) {
            titles.push(t);
        }
    }
    let pairs = cfg.ambiguous_program_count() / 2;
    let mut out = Vec::with_capacity(cfg.n_programs);
    for (i, title) in titles.iter().enumerate() {
        let copies = if i < pairs { 2 } else { 1 };
        let first = rng.gen_range(0..ACTION_TYPES.len());
        let second = (first + rng.gen_range(1..ACTION_TYPES.len())) % ACTION_TYPES.len();
        for c in 0..copies {
            out.push(ProgramCatalogEntry {
                program_id: format!("p{:03}", out.len()),
                title: title.clone(),
                action_type: ACTION_TYPES[if c == 0 { first } else { second }].to_string(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub session_id: String,
    pub true_program: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratedLogs {
    pub queries: Vec<RawQueryEvent>,
    pub watches: Vec<WatchEvent>,
    pub truth: Vec<TruthRecord>,
    /// Generated query-session boundaries, as session ids in device order.
    pub sessions: Vec<(String, usize)>,
}

fn geometric_len(p: f64, cap: usize, rng: &mut impl Rng) -> usize {
    let mut n = 1;
    while n < cap && rng.gen::<f64>() >= p {
        n += 1;
    }
    n
}

fn round_ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// Writes one device's timeline. Sessions alternate with long watches so the
/// next session always starts more than 45 s after the previous query.
fn generate_device(
    device: &str,
    count: usize,
    catalog: &[ProgramCatalogEntry],
    ambiguous: &BTreeSet<usize>,
    cfg: &GenConfig,
    rng: &mut ChaCha8Rng,
) -> GeneratedLogs {
    let mut out = GeneratedLogs::default();
    let mut t = rng.gen_range(0.0..3600.0);
    for ordinal in 0..count {
        let target = rng.gen_range(0..catalog.len());
        let entry = &catalog[target];
        let off_topic = rng.gen::<f64>() < cfg.other_session_rate;
        let texts: Vec<(String, String)> = if off_topic {
            let n = geometric_len(cfg.session_length_p, cfg.max_session_len, rng);
            (0..n)
                .map(|_| {
                    let a = OFF_TOPIC.choose(rng).expect("nonempty");
                    let b = OFF_TOPIC.choose(rng).expect("nonempty");
                    (format!("{a} {b}"), "OTHER".to_string())
                })
                .collect()
        } else if ambiguous.contains(&target) {
            let n = geometric_len(cfg.session_length_p, cfg.max_session_len, rng).max(2);
            let cue = cue_words(&entry.action_type).choose(rng).expect("nonempty");
            let mut v = vec![(cfg.noise.apply(&format!("{} {cue}", entry.title), 1.0, rng), entry.action_type.clone())];
            let mut scale = 1.0;
            for _ in 1..n - 1 {
                scale *= cfg.noise.retry_noise_decay;
                v.push((cfg.noise.apply(&entry.title, scale, rng), entry.action_type.clone()));
            }
            v.push((entry.title.clone(), entry.action_type.clone()));
            v
        } else {
            let n = geometric_len(cfg.session_length_p, cfg.max_session_len, rng);
            let mut scale = 1.0;
            (0..n)
                .map(|k| {
                    if k > 0 {
                        scale *= cfg.noise.retry_noise_decay;
                    }
                    (cfg.noise.apply(&entry.title, scale, rng), entry.action_type.clone())
                })
                .collect()
        };
        for (k, (text, action)) in texts.iter().enumerate() {
            if k > 0 {
                t += rng.gen_range(3.0..40.0);
            }
            out.queries.push(RawQueryEvent {
                device_id: device.to_string(),
                ts: round_ms(t),
                text: text.clone(),
                action: Some(action.clone()),
            });
        }
        let last = round_ms(t);
        let id = session_id(device, ordinal);
        out.sessions.push((id.clone(), texts.len()));
        if rng.gen::<f64>() < cfg.distractor_rate {
            let other = rng.gen_range(0..catalog.len());
            out.watches.push(WatchEvent {
                device_id: device.to_string(),
                ts_start: round_ms(last + rng.gen_range(0.0..1.5)),
                program_id: catalog[other].program_id.clone(),
                watch_duration: round_ms(rng.gen_range(5.0..100.0)),
            });
        }
        let start = last + rng.gen_range(2.0..25.0);
        let duration = rng.gen_range(150.0..1800.0_f64).ceil();
        if rng.gen::<f64>() < cfg.watch_probability {
            out.watches.push(WatchEvent {
                device_id: device.to_string(),
                ts_start: round_ms(start),
                program_id: entry.program_id.clone(),
                watch_duration: duration,
            });
            out.truth.push(TruthRecord {
                session_id: id,
                true_program: entry.program_id.clone(),
            });
        }
        t = start + duration + rng.gen_range(60.0..600.0);
    }
    out
}

/// Query and watch streams for every device; deterministic under `cfg.seed`.
pub fn generate_sessions(catalog: &[ProgramCatalogEntry], cfg: &GenConfig) -> Result<GeneratedLogs> {
    cfg.validate()?;
    if catalog.is_empty() {
        return Err(Error::EmptyInput("catalog".into()));
    }
    let ambiguous: BTreeSet<usize> = {
        let shared = crate::baselines::shared_title_programs(catalog);
        catalog
            .iter()
            .enumerate()
            .filter(|(_, e)| shared.contains(&e.program_id))
            .map(|(i, _)| i)
            .collect()
    };
    let width = cfg.n_devices.to_string().len();
    let parts: Vec<GeneratedLogs> = (0..cfg.n_devices)
        .into_par_iter()
        .map(|d| {
            let count = cfg.n_sessions / cfg.n_devices + usize::from(d < cfg.n_sessions % cfg.n_devices);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(d as u64 + 1);
            generate_device(&format!("dev{d:0width$}"), count, catalog, &ambiguous, cfg, &mut rng)
        })
        .collect();
    let mut all = GeneratedLogs::default();
    for p in parts {
        all.queries.extend(p.queries);
        all.watches.extend(p.watches);
        all.truth.extend(p.truth);
        all.sessions.extend(p.sessions);
    }
    Ok(all)
}

/// Random word vectors for every title token and cue word, `token v1 … vd` per line.
pub fn generate_embeddings(catalog: &[ProgramCatalogEntry], dim: usize, seed: u64) -> String {
    let mut tokens: BTreeSet<String> = catalog
        .iter()
        .flat_map(|e| e.title.split_whitespace().map(str::to_string))
        .collect();
    for a in ACTION_TYPES {
        tokens.extend(cue_words(a).iter().map(|w| w.to_string()));
    }
    tokens.extend(OFF_TOPIC.iter().map(|w| w.to_string()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e3be_dd16);
    let mut out = String::new();
    for t in tokens {
        out.push_str(&t);
        for _ in 0..dim {
            out.push_str(&format!(" {:.6}", rng.gen_range(-0.5..0.5)));
        }
        out.push('\n');
    }
    out
}

pub const OUTPUT_FILES: [&str; 4] = ["queries.jsonl", "watches.jsonl", "catalog.jsonl", "truth.jsonl"];
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

/// Generates everything and writes it to `out_dir`; returns the files written.
pub fn write_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<Vec<String>> {
    let catalog = generate_catalog(cfg)?;
    let logs = generate_sessions(&catalog, cfg)?;
    fs::create_dir_all(out_dir)?;
    write_jsonl(out_dir.join(OUTPUT_FILES[0]), &logs.queries)?;
    write_jsonl(out_dir.join(OUTPUT_FILES[1]), &logs.watches)?;
    write_jsonl(out_dir.join(OUTPUT_FILES[2]), &catalog)?;
    write_jsonl(out_dir.join(OUTPUT_FILES[3]), &logs.truth)?;
    let mut files: Vec<String> = OUTPUT_FILES.iter().map(|s| s.to_string()).collect();
    if cfg.embedding_dim > 0 {
        let mut f = fs::File::create(out_dir.join(EMBEDDINGS_FILE))?;
        f.write_all(generate_embeddings(&catalog, cfg.embedding_dim, cfg.seed).as_bytes())?;
        files.push(EMBEDDINGS_FILE.to_string());
    }
    Ok(files)
}
