//! Prepared-data directory layout and encoding of labeled sessions.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::baselines::TextSession;
use crate::encoding::{build_char_dict, EmbeddingTable, QueryEncoder, Representation};
use crate::error::{Error, Result};
use crate::pipeline::{
    read_jsonl, records, write_jsonl, write_stats_table, ProgramCatalogEntry, ProgramVocab, Prepared,
    SessionRecord, SplitName,
};
use crate::training::EncodedSession;

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const PROGRAMS_FILE: &str = "programs.txt";
pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const STATS_FILE: &str = "stats.tsv";
pub const REPORT_FILE: &str = "prepare_report.json";

/// Contents of a prepared-data directory.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub sessions: Vec<SessionRecord>,
    pub vocab: ProgramVocab,
    pub catalog: Vec<ProgramCatalogEntry>,
}

impl PreparedData {
    pub fn split(&self, name: SplitName) -> Vec<&SessionRecord> {
        self.sessions.iter().filter(|s| s.split == name).collect()
    }

    /// SingleDev and MultiDev together.
    pub fn dev(&self) -> Vec<&SessionRecord> {
        self.sessions
            .iter()
            .filter(|s| matches!(s.split, SplitName::SingleDev | SplitName::MultiDev))
            .collect()
    }

    pub fn train_texts(&self) -> Vec<&str> {
        self.split(SplitName::Train).into_iter().flat_map(|s| s.texts()).collect()
    }
}

pub fn write_prepared(dir: &Path, prepared: &Prepared, catalog: &[ProgramCatalogEntry]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_jsonl(dir.join(SESSIONS_FILE), &records(&prepared.splits))?;
    let mut programs = BufWriter::new(fs::File::create(dir.join(PROGRAMS_FILE))?);
    for p in prepared.vocab.programs() {
        writeln!(programs, "{p}")?;
    }
    programs.flush()?;
    write_jsonl(dir.join(CATALOG_FILE), catalog)?;
    let mut stats = BufWriter::new(fs::File::create(dir.join(STATS_FILE))?);
    write_stats_table(&mut stats, &prepared.report.stats)?;
    stats.flush()?;
    fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(&prepared.report)? + "\n")?;
    Ok(())
}

pub fn load_prepared(dir: &Path) -> Result<PreparedData> {
    let sessions: Vec<SessionRecord> = read_jsonl(dir.join(SESSIONS_FILE))?;
    let programs: Vec<String> = fs::read_to_string(dir.join(PROGRAMS_FILE))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    let vocab = ProgramVocab::new(programs)?;
    let catalog_path = dir.join(CATALOG_FILE);
    let catalog = if catalog_path.exists() {
        read_jsonl(catalog_path)?
    } else {
        Vec::new()
    };
    Ok(PreparedData {
        sessions,
        vocab,
        catalog,
    })
}

/// Builds the encoder from training text. Word-based representations use
/// `embeddings` when given, otherwise an empty table of `word_dim` so every
/// token gets a persisted random vector.
pub fn build_encoder(
    rep: Representation,
    train_texts: &[&str],
    embeddings: Option<EmbeddingTable>,
    word_dim: usize,
    unk_seed: u64,
) -> Result<QueryEncoder> {
    let chars = if rep.uses_chars() {
        Some(build_char_dict(train_texts)?)
    } else {
        None
    };
    let table = if rep.uses_words() {
        Some(match embeddings {
            Some(t) => t,
            None => {
                log::warn!("no word embeddings given; all tokens use random {word_dim}-d vectors");
                EmbeddingTable::new(word_dim)
            }
        })
    } else {
        None
    };
    QueryEncoder::new(rep, chars, table, unk_seed)
}

/// Encodes labeled records. Queries that are blank after normalization are
/// skipped, then sessions left without queries. Returns the skip count.
pub fn encode_sessions(
    encoder: &QueryEncoder,
    sessions: &[&SessionRecord],
    vocab: &ProgramVocab,
) -> Result<(Vec<EncodedSession>, usize)> {
    let mut out = Vec::with_capacity(sessions.len());
    let mut skipped = 0;
    for s in sessions {
        let label = vocab.index_of(&s.label).ok_or_else(|| {
            Error::Config(format!(
                "session {} is labeled `{}`, which is not in the program vocabulary",
                s.session_id, s.label
            ))
        })?;
        let mut queries = Vec::with_capacity(s.queries.len());
        for q in &s.queries {
            match encoder.encode(&q.text) {
                Ok(e) => queries.push(e),
                Err(Error::SkipQuery(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if queries.is_empty() {
            continue;
        }
        out.push(EncodedSession {
            id: s.session_id.clone(),
            queries,
            label,
        });
    }
    Ok((out, skipped))
}

pub fn text_sessions(sessions: &[&SessionRecord], vocab: &ProgramVocab) -> Result<Vec<TextSession>> {
    sessions
        .iter()
        .map(|s| {
            Ok(TextSession {
                id: s.session_id.clone(),
                queries: s.queries.iter().map(|q| q.text.clone()).collect(),
                label: vocab
                    .index_of(&s.label)
                    .ok_or_else(|| Error::Config(format!("label `{}` not in the program vocabulary", s.label)))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::SessionQuery;

    fn rec(id: &str, texts: &[&str], label: &str) -> SessionRecord {
        SessionRecord {
            session_id: id.into(),
            device: "d".into(),
            queries: texts
                .iter()
                .map(|t| SessionQuery {
                    ts: 0.0,
                    text: t.to_string(),
                    action: None,
                })
                .collect(),
            label: label.into(),
            split: SplitName::Train,
        }
    }

    #[test]
    fn skips_blank_queries_and_empty_sessions() {
        let vocab = ProgramVocab::new(vec!["a".into(), "b".into()]).unwrap();
        let recs = [rec("s0", &["ab", "!!"], "a"), rec("s1", &["??"], "b")];
        let refs: Vec<&SessionRecord> = recs.iter().collect();
        let enc = build_encoder(Representation::Word, &["ab"], None, 4, 1).unwrap();
        let (out, skipped) = encode_sessions(&enc, &refs, &vocab).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].queries.len(), 1);
        assert_eq!(skipped, 2);
        let bad = [rec("s2", &["ab"], "zzz")];
        let refs: Vec<&SessionRecord> = bad.iter().collect();
        assert!(encode_sessions(&enc, &refs, &vocab).is_err());
    }
}
