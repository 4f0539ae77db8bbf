//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be consumed by
//! the command reading the file; leftovers are reported as unknown.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::pipeline::PrepareParams;
use crate::synthgen::GenConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                })?;
            let key = k.trim().to_ascii_lowercase();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key` if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config(format!(
                "key `{key}` (line {line}): cannot parse `{v}`: {e}"
            ))),
        }
    }

    pub fn take_into<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?
            .ok_or_else(|| Error::Config(format!("missing config key `{key}`")))
    }

    /// Errors when keys remain unconsumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(Error::Config(format!("unknown config key(s): {}", keys.join(", "))))
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|p| {
            p.split_once('>')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("confusion pair `{p}` is not `from>to`")))
        })
        .collect()
}

/// Generator settings. `n_programs`, `n_devices`, `n_sessions` and `seed` are required.
pub fn gen_config(kv: &mut KvConfig) -> Result<GenConfig> {
    let mut c = GenConfig {
        n_programs: kv.require("n_programs")?,
        n_devices: kv.require("n_devices")?,
        n_sessions: kv.require("n_sessions")?,
        seed: kv.require("seed")?,
        ..GenConfig::default()
    };
    kv.take_into("session_length_p", &mut c.session_length_p)?;
    kv.take_into("max_session_len", &mut c.max_session_len)?;
    kv.take_into("ambiguity_rate", &mut c.ambiguity_rate)?;
    kv.take_into("watch_probability", &mut c.watch_probability)?;
    kv.take_into("distractor_rate", &mut c.distractor_rate)?;
    kv.take_into("other_session_rate", &mut c.other_session_rate)?;
    kv.take_into("embedding_dim", &mut c.embedding_dim)?;
    kv.take_into("char_sub_rate", &mut c.noise.char_sub_rate)?;
    kv.take_into("char_del_rate", &mut c.noise.char_del_rate)?;
    kv.take_into("char_ins_rate", &mut c.noise.char_ins_rate)?;
    kv.take_into("confusion_rate", &mut c.noise.confusion_rate)?;
    kv.take_into("retry_noise_decay", &mut c.noise.retry_noise_decay)?;
    if let Some(p) = kv.take::<String>("confusion_pairs")? {
        c.noise.confusion_pairs = parse_pairs(&p)?;
    }
    c.validate()?;
    Ok(c)
}

pub fn prepare_params(kv: &mut KvConfig) -> Result<PrepareParams> {
    let mut p = PrepareParams::default();
    kv.take_into("gap_s", &mut p.gap_s)?;
    kv.take_into("k_s", &mut p.k_s)?;
    kv.take_into("l_s", &mut p.l_s)?;
    kv.take_into("cohesion_threshold", &mut p.cohesion_threshold)?;
    kv.take_into("min_sessions", &mut p.min_sessions)?;
    kv.take_into("single_dev", &mut p.ratios.single_dev)?;
    kv.take_into("single_test", &mut p.ratios.single_test)?;
    kv.take_into("multi_dev", &mut p.ratios.multi_dev)?;
    kv.take_into("multi_test", &mut p.ratios.multi_test)?;
    kv.take_into("seed", &mut p.seed)?;
    p.ratios.validate()?;
    Ok(p)
}

/// Model and training settings read from one file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embeddings: Option<PathBuf>,
    pub unk_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            embeddings: None,
            unk_seed: 17,
        }
    }
}

/// Vocabulary-dependent sizes (`num_programs`, `char_dict_size`) are
/// filled in from the data by the caller.
pub fn train_settings(kv: &mut KvConfig) -> Result<TrainSettings> {
    let mut s = TrainSettings::default();
    let m = &mut s.model;
    if let Some(r) = kv.take("rep")? {
        m.representation = r;
    }
    kv.take_into("representation", &mut m.representation)?;
    kv.take_into("mode", &mut m.mode)?;
    kv.take_into("lstm_size", &mut m.lstm_size)?;
    kv.take_into("fc_hidden", &mut m.fc_hidden)?;
    kv.take_into("word_dim", &mut m.word_dim)?;
    kv.take_into("cell_candidate", &mut m.cell_candidate)?;
    kv.take_into("model_seed", &mut m.seed)?;
    let t = &mut s.train;
    kv.take_into("lr0", &mut t.lr0)?;
    kv.take_into("lr_decay_factor", &mut t.lr_decay_factor)?;
    kv.take_into("patience_epochs", &mut t.patience_epochs)?;
    kv.take_into("max_epochs", &mut t.max_epochs)?;
    kv.take_into("pretrain_epochs", &mut t.pretrain_epochs)?;
    kv.take_into("lambda", &mut t.lambda)?;
    kv.take_into("shuffle", &mut t.shuffle)?;
    kv.take_into("rms_decay", &mut t.rms_decay)?;
    kv.take_into("rms_epsilon", &mut t.rms_epsilon)?;
    if let Some(c) = kv.take::<f64>("grad_clip")? {
        t.grad_clip = (c > 0.0).then_some(c);
    }
    if let Some(seed) = kv.take::<u64>("seed")? {
        s.model.seed = seed;
        s.train.seed = seed;
    }
    kv.take_into("train_seed", &mut s.train.seed)?;
    s.embeddings = kv.take::<PathBuf>("embeddings")?;
    kv.take_into("unk_seed", &mut s.unk_seed)?;
    s.train.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ContextMode;

    #[test]
    fn parses_and_reports() {
        let mut kv = KvConfig::parse("# comment\nn_programs = 10\nn_devices=3 # inline\nn_sessions: 40\nseed = 9\n").unwrap();
        let g = gen_config(&mut kv).unwrap();
        assert_eq!((g.n_programs, g.n_devices, g.n_sessions, g.seed), (10, 3, 40, 9));
        kv.finish().unwrap();
    }

    #[test]
    fn missing_key_is_named() {
        let mut kv = KvConfig::parse("n_programs = 10\nn_devices = 3\nseed = 1\n").unwrap();
        let err = gen_config(&mut kv).unwrap_err();
        assert!(err.to_string().contains("n_sessions"), "{err}");
    }

    #[test]
    fn unknown_and_bad_values() {
        let mut kv = KvConfig::parse("lstm_size = 8\nbogus = 1\n").unwrap();
        let s = train_settings(&mut kv).unwrap();
        assert_eq!(s.model.lstm_size, 8);
        assert!(kv.finish().unwrap_err().to_string().contains("bogus"));
        let mut kv = KvConfig::parse("mode = sideways\n").unwrap();
        assert!(train_settings(&mut kv).is_err());
        assert!(KvConfig::parse("novalue\n").is_err());
        assert!(KvConfig::parse("a=1\na=2\n").is_err());
    }

    #[test]
    fn train_keys() {
        let mut kv =
            KvConfig::parse("rep = char\nmode = constrained\nseed = 5\ngrad_clip = 0\nconfusion = x\n").unwrap();
        let s = train_settings(&mut kv).unwrap();
        assert_eq!(s.model.mode, ContextMode::ContextConstrained);
        assert_eq!((s.model.seed, s.train.seed), (5, 5));
        assert_eq!(s.train.grad_clip, None);
        assert!(kv.finish().is_err());
    }

    #[test]
    fn confusion_pairs_parse() {
        let mut kv = KvConfig::parse(
            "n_programs=4\nn_devices=1\nn_sessions=2\nseed=1\nconfusion_pairs = caillou>you, fire > fired\nconfusion_rate=0.5\n",
        )
        .unwrap();
        let g = gen_config(&mut kv).unwrap();
        assert_eq!(g.noise.confusion_pairs[1], ("fire".into(), "fired".into()));
    }
}
