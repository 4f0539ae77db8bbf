//! Weak labeling of raw voice-query logs.
//!
//! sessionize → label by watch events → program-related filter → cohesion
//! filter → split → program vocabulary (from Train) → drop out-of-vocabulary
//! sessions everywhere.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SESSION_GAP_S: f64 = 45.0;
pub const WATCH_WINDOW_S: f64 = 30.0;
pub const MIN_WATCH_S: f64 = 150.0;
pub const COHESION_THRESHOLD: f64 = 0.5;
pub const MIN_PROGRAM_SESSIONS: usize = 50;

/// Action types that count as program-related.
pub const PROGRAM_ACTIONS: [&str; 4] = ["SERIES", "MOVIE", "MUSICVIDEO", "SPORTS"];

pub fn is_program_action(action: Option<&str>) -> bool {
    action.is_some_and(|a| PROGRAM_ACTIONS.iter().any(|p| p.eq_ignore_ascii_case(a)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawQueryEvent {
    #[serde(rename = "device")]
    pub device_id: String,
    pub ts: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatchEvent {
    #[serde(rename = "device")]
    pub device_id: String,
    #[serde(rename = "ts")]
    pub ts_start: f64,
    #[serde(rename = "program")]
    pub program_id: String,
    #[serde(rename = "duration")]
    pub watch_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCatalogEntry {
    #[serde(rename = "program")]
    pub program_id: String,
    pub title: String,
    #[serde(rename = "type")]
    pub action_type: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionQuery {
    pub ts: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    /// `{device}#{ordinal}`, ordinal counting the device's sessions from 0.
    pub id: String,
    pub device_id: String,
    pub queries: Vec<SessionQuery>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn last_ts(&self) -> f64 {
        self.queries.last().map_or(f64::NEG_INFINITY, |q| q.ts)
    }

    pub fn texts(&self) -> Vec<&str> {
        self.queries.iter().map(|q| q.text.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSession {
    pub session: Session,
    pub label: String,
}

pub fn session_id(device: &str, ordinal: usize) -> String {
    format!("{device}#{ordinal}")
}

fn group_by_device<'a, T>(items: &'a [T], key: impl Fn(&T) -> &str) -> BTreeMap<&'a str, Vec<&'a T>>
where
    T: 'a,
{
    let mut map: BTreeMap<&str, Vec<&T>> = BTreeMap::new();
    for it in items {
        map.entry(key(it)).or_default().push(it);
    }
    map
}

/// Splits each device's time-sorted stream wherever consecutive queries are
/// more than `gap_s` apart. Events with blank text are dropped first.
pub fn sessionize(events: &[RawQueryEvent], gap_s: f64) -> Vec<Session> {
    let kept: Vec<&RawQueryEvent> = events.iter().filter(|e| !e.text.trim().is_empty()).collect();
    let mut by_device: BTreeMap<&str, Vec<&RawQueryEvent>> = BTreeMap::new();
    for e in kept {
        by_device.entry(e.device_id.as_str()).or_default().push(e);
    }
    let groups: Vec<(&str, Vec<&RawQueryEvent>)> = by_device.into_iter().collect();
    groups
        .into_par_iter()
        .map(|(device, mut evs)| {
            evs.sort_by(|a, b| a.ts.total_cmp(&b.ts));
            let mut out: Vec<Session> = Vec::new();
            let mut prev: Option<f64> = None;
            for e in evs {
                if prev.is_none_or(|p| e.ts - p > gap_s) {
                    out.push(Session {
                        id: session_id(device, out.len()),
                        device_id: device.to_string(),
                        queries: Vec::new(),
                    });
                }
                out.last_mut().expect("session opened above").queries.push(SessionQuery {
                    ts: e.ts,
                    text: e.text.clone(),
                    action: e.action.clone(),
                });
                prev = Some(e.ts);
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Labels each session with the earliest watch starting within `k_s` of its
/// last query (inclusive) and lasting at least `l_s`. Unlabeled sessions are dropped.
pub fn label_sessions(sessions: Vec<Session>, watches: &[WatchEvent], k_s: f64, l_s: f64) -> Vec<LabeledSession> {
    let mut by_device = group_by_device(watches, |w| w.device_id.as_str());
    for ws in by_device.values_mut() {
        ws.sort_by(|a, b| a.ts_start.total_cmp(&b.ts_start));
    }
    sessions
        .into_par_iter()
        .filter_map(|s| {
            let last = s.last_ts();
            let hit = by_device.get(s.device_id.as_str())?.iter().find(|w| {
                let delay = w.ts_start - last;
                (0.0..=k_s).contains(&delay) && w.watch_duration >= l_s
            })?;
            let label = hit.program_id.clone();
            Some(LabeledSession { session: s, label })
        })
        .collect()
}

/// More than two thirds of the queries, and the final one, are program-related.
pub fn is_program_related(session: &Session) -> bool {
    let n = session.len();
    if n == 0 {
        return false;
    }
    let related = session
        .queries
        .iter()
        .filter(|q| is_program_action(q.action.as_deref()))
        .count();
    3 * related > 2 * n && is_program_action(session.queries[n - 1].action.as_deref())
}

pub fn filter_program_related(labeled: Vec<LabeledSession>) -> Vec<LabeledSession> {
    labeled.into_iter().filter(|l| is_program_related(&l.session)).collect()
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(ca != cb)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Edit distance divided by the longer length; 0 when both are empty.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let m = a.chars().count().max(b.chars().count());
    if m == 0 {
        return 0.0;
    }
    levenshtein(a, b) as f64 / m as f64
}

pub fn is_cohesive(session: &Session, threshold: f64) -> bool {
    let q = session.texts();
    if q.len() < 2 {
        return true;
    }
    (0..q.len()).any(|i| (i + 1..q.len()).any(|j| normalized_levenshtein(q[i], q[j]) < threshold))
}

/// Multi-query sessions need at least one query pair closer than `threshold`.
pub fn cohesion_filter(labeled: Vec<LabeledSession>, threshold: f64) -> Vec<LabeledSession> {
    labeled.into_iter().filter(|l| is_cohesive(&l.session, threshold)).collect()
}

/// The closed label set Φ, sorted by program id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramVocab {
    programs: Vec<String>,
    index: HashMap<String, usize>,
}

impl ProgramVocab {
    pub fn new(mut programs: Vec<String>) -> Result<Self> {
        programs.sort();
        programs.dedup();
        if programs.is_empty() {
            return Err(Error::Config("program vocabulary is empty".into()));
        }
        let index = programs.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Ok(ProgramVocab { programs, index })
    }

    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }

    pub fn programs(&self) -> &[String] {
        &self.programs
    }

    pub fn index_of(&self, program: &str) -> Option<usize> {
        self.index.get(program).copied()
    }

    pub fn program(&self, i: usize) -> &str {
        &self.programs[i]
    }
}

/// Programs with at least `min_sessions` training sessions.
pub fn build_program_vocab(train: &[LabeledSession], min_sessions: usize) -> Result<ProgramVocab> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in train {
        *counts.entry(l.label.as_str()).or_default() += 1;
    }
    let kept: Vec<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_sessions)
        .map(|(p, _)| p.to_string())
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "no program has at least {min_sessions} training sessions"
        )));
    }
    ProgramVocab::new(kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    SingleDev,
    SingleTest,
    MultiDev,
    MultiTest,
}

impl SplitName {
    pub const ALL: [SplitName; 5] = [
        SplitName::Train,
        SplitName::SingleDev,
        SplitName::SingleTest,
        SplitName::MultiDev,
        SplitName::MultiTest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::SingleDev => "single_dev",
            SplitName::SingleTest => "single_test",
            SplitName::MultiDev => "multi_dev",
            SplitName::MultiTest => "multi_test",
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == norm)
            .ok_or_else(|| Error::Usage(format!("unknown split `{s}` (train, single_dev, single_test, multi_dev, multi_test)")))
    }
}

/// Fractions of the single-query and multi-query pools sent to dev and test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub single_dev: f64,
    pub single_test: f64,
    pub multi_dev: f64,
    pub multi_test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            single_dev: 0.1,
            single_test: 0.1,
            multi_dev: 0.1,
            multi_test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.single_dev, self.single_test, self.multi_dev, self.multi_test];
        if all.iter().any(|r| !(0.0..=1.0).contains(r))
            || self.single_dev + self.single_test > 1.0
            || self.multi_dev + self.multi_test > 1.0
        {
            return Err(Error::Config(format!("invalid split ratios {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledSession>,
    pub single_dev: Vec<LabeledSession>,
    pub single_test: Vec<LabeledSession>,
    pub multi_dev: Vec<LabeledSession>,
    pub multi_test: Vec<LabeledSession>,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[LabeledSession] {
        match name {
            SplitName::Train => &self.train,
            SplitName::SingleDev => &self.single_dev,
            SplitName::SingleTest => &self.single_test,
            SplitName::MultiDev => &self.multi_dev,
            SplitName::MultiTest => &self.multi_test,
        }
    }

    fn get_mut(&mut self, name: SplitName) -> &mut Vec<LabeledSession> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::SingleDev => &mut self.single_dev,
            SplitName::SingleTest => &mut self.single_test,
            SplitName::MultiDev => &mut self.multi_dev,
            SplitName::MultiTest => &mut self.multi_test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (SplitName, &LabeledSession)> {
        SplitName::ALL
            .into_iter()
            .flat_map(move |n| self.get(n).iter().map(move |s| (n, s)))
    }

    pub fn total(&self) -> usize {
        SplitName::ALL.iter().map(|&n| self.get(n).len()).sum()
    }

    /// Development sessions used for model selection: SingleDev then MultiDev.
    pub fn dev(&self) -> Vec<LabeledSession> {
        self.single_dev.iter().chain(&self.multi_dev).cloned().collect()
    }

    /// Drops every session whose label is outside `vocab`.
    pub fn retain_vocab(&mut self, vocab: &ProgramVocab) {
        for n in SplitName::ALL {
            self.get_mut(n).retain(|s| vocab.index_of(&s.label).is_some());
        }
    }
}

/// Seeded session-level partition. Single-query sessions feed Train,
/// SingleDev and SingleTest; longer ones feed Train, MultiDev and MultiTest.
pub fn split(labeled: Vec<LabeledSession>, ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut single, mut multi): (Vec<_>, Vec<_>) = labeled.into_iter().partition(|s| s.session.len() == 1);
    single.shuffle(&mut rng);
    multi.shuffle(&mut rng);
    let mut out = Splits::default();
    for (pool, dev_r, test_r, dev, test) in [
        (single, ratios.single_dev, ratios.single_test, SplitName::SingleDev, SplitName::SingleTest),
        (multi, ratios.multi_dev, ratios.multi_test, SplitName::MultiDev, SplitName::MultiTest),
    ] {
        let n = pool.len();
        let n_dev = (n as f64 * dev_r).round() as usize;
        let n_test = ((n as f64 * test_r).round() as usize).min(n - n_dev);
        for (i, s) in pool.into_iter().enumerate() {
            let target = if i < n_dev {
                dev
            } else if i < n_dev + n_test {
                test
            } else {
                SplitName::Train
            };
            out.get_mut(target).push(s);
        }
    }
    // restore a stable order inside each split
    for n in SplitName::ALL {
        out.get_mut(n).sort_by(|a, b| {
            (a.session.device_id.as_str(), a.session.queries[0].ts)
                .partial_cmp(&(b.session.device_id.as_str(), b.session.queries[0].ts))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
    for n in SplitName::ALL {
        if out.get(n).is_empty() {
            log::warn!("split {n} received no sessions");
        }
    }
    Ok(out)
}

/// One row of the dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub sessions: usize,
    pub queries: usize,
    pub avg_session_len: f64,
    /// Whitespace tokens per query.
    pub avg_query_len: f64,
}

pub fn split_stats(name: &str, sessions: &[LabeledSession]) -> SplitStats {
    let queries: usize = sessions.iter().map(|s| s.session.len()).sum();
    let words: usize = sessions
        .iter()
        .flat_map(|s| &s.session.queries)
        .map(|q| q.text.split_whitespace().count())
        .sum();
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    SplitStats {
        split: name.to_string(),
        sessions: sessions.len(),
        queries,
        avg_session_len: div(queries, sessions.len()),
        avg_query_len: div(words, queries),
    }
}

pub const STATS_HEADER: [&str; 4] = ["#sessions", "#queries", "avg session len", "avg query len"];

pub fn write_stats_table<W: Write>(mut w: W, rows: &[SplitStats]) -> Result<()> {
    writeln!(w, "split\t{}", STATS_HEADER.join("\t"))?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.2}\t{:.2}",
            r.split, r.sessions, r.queries, r.avg_session_len, r.avg_query_len
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareParams {
    pub gap_s: f64,
    pub k_s: f64,
    pub l_s: f64,
    pub cohesion_threshold: f64,
    pub min_sessions: usize,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for PrepareParams {
    fn default() -> Self {
        PrepareParams {
            gap_s: SESSION_GAP_S,
            k_s: WATCH_WINDOW_S,
            l_s: MIN_WATCH_S,
            cohesion_threshold: COHESION_THRESHOLD,
            min_sessions: MIN_PROGRAM_SESSIONS,
            ratios: SplitRatios::default(),
            seed: 1,
        }
    }
}

/// Session counts after every stage, in pipeline order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub raw_queries: usize,
    pub blank_queries: usize,
    pub sessions: usize,
    pub labeled: usize,
    pub program_related: usize,
    pub cohesive: usize,
    pub in_vocab: usize,
    pub programs: usize,
    pub char_dict_size: usize,
    pub stats: Vec<SplitStats>,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: Splits,
    pub vocab: ProgramVocab,
    pub report: PrepareReport,
}

fn nonempty<T>(v: Vec<T>, stage: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::EmptyInput(format!("no sessions left after the {stage} step")));
    }
    Ok(v)
}

/// Runs the whole weak-labeling pipeline.
pub fn prepare(queries: &[RawQueryEvent], watches: &[WatchEvent], params: &PrepareParams) -> Result<Prepared> {
    let mut report = PrepareReport {
        raw_queries: queries.len(),
        blank_queries: queries.iter().filter(|q| q.text.trim().is_empty()).count(),
        ..PrepareReport::default()
    };
    let sessions = nonempty(sessionize(queries, params.gap_s), "sessionization")?;
    report.sessions = sessions.len();
    let labeled = nonempty(label_sessions(sessions, watches, params.k_s, params.l_s), "watch labeling")?;
    report.labeled = labeled.len();
    let related = nonempty(filter_program_related(labeled), "program-related")?;
    report.program_related = related.len();
    let cohesive = nonempty(cohesion_filter(related, params.cohesion_threshold), "cohesion")?;
    report.cohesive = cohesive.len();
    let mut splits = split(cohesive, params.ratios, params.seed)?;
    let vocab = build_program_vocab(&splits.train, params.min_sessions).map_err(|_| {
        Error::EmptyInput(format!(
            "no sessions left after the program-vocabulary step (min_sessions = {})",
            params.min_sessions
        ))
    })?;
    splits.retain_vocab(&vocab);
    report.in_vocab = splits.total();
    report.programs = vocab.len();
    let train_text: Vec<&str> = splits.train.iter().flat_map(|s| s.session.texts()).collect();
    report.char_dict_size = crate::encoding::build_char_dict(&train_text)?.size();
    report.stats = SplitName::ALL
        .iter()
        .map(|&n| split_stats(n.as_str(), splits.get(n)))
        .collect();
    Ok(Prepared { splits, vocab, report })
}

/// Re-checks every session-local rule on prepared output.
pub fn validate_prepared(prepared: &Prepared, params: &PrepareParams) -> Result<()> {
    for (name, s) in prepared.splits.iter() {
        let q = &s.session.queries;
        let gap_ok = q.windows(2).all(|w| w[1].ts >= w[0].ts && w[1].ts - w[0].ts <= params.gap_s);
        let single_ok = match name {
            SplitName::SingleDev | SplitName::SingleTest => q.len() == 1,
            SplitName::MultiDev | SplitName::MultiTest => q.len() >= 2,
            SplitName::Train => true,
        };
        if !(gap_ok
            && single_ok
            && is_program_related(&s.session)
            && is_cohesive(&s.session, params.cohesion_threshold)
            && prepared.vocab.index_of(&s.label).is_some())
        {
            return Err(Error::Config(format!("session {} in {name} violates a pipeline rule", s.session.id)));
        }
    }
    Ok(())
}

/// Output row of the labeled-session file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub device: String,
    pub queries: Vec<SessionQuery>,
    pub label: String,
    pub split: SplitName,
}

impl SessionRecord {
    pub fn from_labeled(s: &LabeledSession, split: SplitName) -> Self {
        SessionRecord {
            session_id: s.session.id.clone(),
            device: s.session.device_id.clone(),
            queries: s
                .session
                .queries
                .iter()
                .map(|q| SessionQuery {
                    ts: q.ts,
                    text: q.text.clone(),
                    action: None,
                })
                .collect(),
            label: s.label.clone(),
            split,
        }
    }

    pub fn texts(&self) -> Vec<&str> {
        self.queries.iter().map(|q| q.text.as_str()).collect()
    }
}

pub fn records(splits: &Splits) -> Vec<SessionRecord> {
    splits.iter().map(|(n, s)| SessionRecord::from_labeled(s, n)).collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    parse_jsonl(BufReader::new(File::open(path)?))
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Like [`parse_jsonl`] but skips malformed lines, returning how many were skipped.
pub fn parse_jsonl_lenient<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<(Vec<T>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => {
                log::warn!("skipping line {}: {e}", i + 1);
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
