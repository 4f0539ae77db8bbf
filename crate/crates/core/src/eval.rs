//! Ranking metrics, query reduction, confidence thresholds and the paired
//! sign-flip randomization test.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{IntentModel, ScoreVector};
use crate::training::EncodedSession;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.7, 0.8, 0.9];
/// Sessions up to this length get an exact permutation test.
pub const EXACT_TEST_MAX_N: usize = 20;
pub const DEFAULT_PERMUTATIONS: usize = 100_000;

/// Full ranking over Φ after one prefix, plus the top-1 confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixPrediction {
    pub ranking: Vec<usize>,
    pub confidence: f64,
}

impl PrefixPrediction {
    pub fn from_scores(o: &ScoreVector) -> Self {
        let ranked = o.ranking();
        PrefixPrediction {
            confidence: ranked.first().map_or(0.0, |r| r.1),
            ranking: ranked.into_iter().map(|r| r.0).collect(),
        }
    }

    /// 1-based rank of `label`.
    pub fn rank_of(&self, label: usize) -> Option<usize> {
        self.ranking.iter().position(|&p| p == label).map(|i| i + 1)
    }

    pub fn top1(&self) -> Option<usize> {
        self.ranking.first().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPrediction {
    pub session_id: String,
    pub label: usize,
    pub prefixes: Vec<PrefixPrediction>,
}

impl SessionPrediction {
    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    pub fn correct_at(&self, i: usize) -> bool {
        self.prefixes[i].top1() == Some(self.label)
    }
}

/// Runs the model over each session and keeps every prefix ranking.
pub fn predict_sessions(model: &IntentModel, sessions: &[EncodedSession]) -> Result<Vec<SessionPrediction>> {
    sessions
        .par_iter()
        .map(|s| {
            let scores = model.forward_session(&s.queries)?;
            Ok(SessionPrediction {
                session_id: s.id.clone(),
                label: s.label,
                prefixes: scores.iter().map(PrefixPrediction::from_scores).collect(),
            })
        })
        .collect()
}

fn rank_or_err(list: &[usize], label: usize) -> Result<usize> {
    list.iter()
        .position(|&p| p == label)
        .map(|i| i + 1)
        .ok_or_else(|| Error::OutOfRange {
            what: "label in ranking",
            value: label,
            allowed: format!("a ranking of {} programs", list.len()),
        })
}

/// Fraction of lists holding their label in the first `k` entries.
pub fn precision_at_k(lists: &[Vec<usize>], labels: &[usize], k: usize) -> Result<f64> {
    if lists.len() != labels.len() {
        return Err(Error::LengthMismatch(lists.len(), labels.len()));
    }
    if lists.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    let mut hits = 0;
    for (l, &y) in lists.iter().zip(labels) {
        if l.len() < k {
            return Err(Error::OutOfRange {
                what: "k",
                value: k,
                allowed: format!("at most the list length {}", l.len()),
            });
        }
        hits += usize::from(l[..k].contains(&y));
    }
    Ok(hits as f64 / lists.len() as f64)
}

pub fn mrr(lists: &[Vec<usize>], labels: &[usize]) -> Result<f64> {
    if lists.len() != labels.len() {
        return Err(Error::LengthMismatch(lists.len(), labels.len()));
    }
    if lists.is_empty() {
        return Err(Error::EmptyInput("no predictions".into()));
    }
    let mut total = 0.0;
    for (l, &y) in lists.iter().zip(labels) {
        total += 1.0 / rank_or_err(l, y)? as f64;
    }
    Ok(total / lists.len() as f64)
}

/// `n − i` for the earliest correct 1-based position `i`, 0 if never correct.
/// `None` for single-query sessions.
pub fn query_reduction(p: &SessionPrediction) -> Option<usize> {
    let n = p.len();
    if n < 2 {
        return None;
    }
    Some((0..n).find(|&i| p.correct_at(i)).map_or(0, |i| n - (i + 1)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub threshold: f64,
    pub coverage: f64,
    /// P@1 among answered items; absent when nothing is answered.
    pub precision: Option<f64>,
}

/// `items` are `(top-1 confidence, top-1 correct)` pairs.
pub fn coverage_precision(items: &[(f64, bool)], thresholds: &[f64]) -> Vec<CoveragePoint> {
    thresholds
        .iter()
        .map(|&t| {
            let answered: Vec<bool> = items.iter().filter(|(c, _)| *c >= t).map(|&(_, ok)| ok).collect();
            CoveragePoint {
                threshold: t,
                coverage: if items.is_empty() {
                    0.0
                } else {
                    answered.len() as f64 / items.len() as f64
                },
                precision: (!answered.is_empty())
                    .then(|| answered.iter().filter(|&&ok| ok).count() as f64 / answered.len() as f64),
            }
        })
        .collect()
}

fn flipped_sum(d: &[f64], mut signs: u64) -> f64 {
    let mut s = 0.0;
    for &x in d {
        s += if signs & 1 == 1 { -x } else { x };
        signs >>= 1;
    }
    s
}

fn paired_diffs(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("no paired scores".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// `|s| ≥ |observed|` up to rounding in the summation order.
fn extreme_test(d: &[f64]) -> impl Fn(f64) -> bool {
    let observed = d.iter().sum::<f64>().abs();
    let tol = 1e-9 * d.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    move |s: f64| s.abs() >= observed - tol
}

/// Exact two-sided p-value over all `2^n` sign patterns (`n ≤ 30`).
pub fn sign_flip_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = paired_diffs(a, b)?;
    if d.len() > 30 {
        return Err(Error::OutOfRange {
            what: "exact sign-flip sample size",
            value: d.len(),
            allowed: "1..=30".into(),
        });
    }
    let extreme = extreme_test(&d);
    let total = 1u64 << d.len();
    let count = (0..total)
        .into_par_iter()
        .filter(|&signs| extreme(flipped_sum(&d, signs)))
        .count();
    Ok(count as f64 / total as f64)
}

/// Monte Carlo p-value `(c + 1)/(n_perm + 1)` from `n_perm` random sign
/// patterns, drawn in batches of 4096 with one ChaCha stream per batch.
pub fn sign_flip_monte_carlo(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    let d = paired_diffs(a, b)?;
    if n_perm == 0 {
        return Err(Error::Config("n_perm must be positive for large samples".into()));
    }
    let extreme = extreme_test(&d);
    const BATCH: usize = 4096;
    let batches = n_perm.div_ceil(BATCH);
    let count: usize = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let todo = BATCH.min(n_perm - b * BATCH);
            (0..todo)
                .filter(|_| {
                    let s: f64 = d.iter().map(|&x| if rng.gen::<bool>() { -x } else { x }).sum();
                    extreme(s)
                })
                .count()
        })
        .sum();
    Ok((count + 1) as f64 / (n_perm + 1) as f64)
}

/// Two-sided paired sign-flip test: exact when `n ≤ 20`, Monte Carlo otherwise.
pub fn randomization_test(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<f64> {
    if a.len() <= EXACT_TEST_MAX_N {
        sign_flip_exact(a, b)
    } else {
        sign_flip_monte_carlo(a, b, n_perm, seed)
    }
}

/// Mean top-1 correctness at each position over sessions of exactly `length` queries.
pub fn per_position_breakdown(preds: &[SessionPrediction], length: usize) -> Vec<f64> {
    let chosen: Vec<&SessionPrediction> = preds.iter().filter(|p| p.len() == length).collect();
    if chosen.is_empty() {
        return Vec::new();
    }
    (0..length)
        .map(|i| chosen.iter().filter(|p| p.correct_at(i)).count() as f64 / chosen.len() as f64)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ItemMetric {
    P1,
    P5,
    ReciprocalRank,
}

/// One score per query, in session order, for paired significance testing.
pub fn per_item_scores(preds: &[SessionPrediction], metric: ItemMetric) -> Vec<f64> {
    preds
        .iter()
        .flat_map(|s| {
            s.prefixes.iter().map(move |p| {
                let rank = p.rank_of(s.label).unwrap_or(usize::MAX);
                match metric {
                    ItemMetric::P1 => f64::from(u8::from(rank == 1)),
                    ItemMetric::P5 => f64::from(u8::from(rank <= 5)),
                    ItemMetric::ReciprocalRank => {
                        if rank == usize::MAX {
                            0.0
                        } else {
                            1.0 / rank as f64
                        }
                    }
                }
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub p_at_1: f64,
    pub p_at_5: f64,
    pub mrr: f64,
    /// Mean query reduction over multi-query sessions; absent without any.
    pub qr: Option<f64>,
    pub n_queries: usize,
    pub n_sessions: usize,
    pub n_multi_sessions: usize,
    /// P@1 of the final query of each session.
    pub final_p_at_1: f64,
    /// P@1 by position, over every session reaching that position.
    pub position_p1: Vec<f64>,
    pub coverage: Vec<CoveragePoint>,
}

pub fn evaluate(preds: &[SessionPrediction], thresholds: &[f64]) -> Result<MetricReport> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("no sessions to evaluate".into()));
    }
    let lists: Vec<Vec<usize>> = preds
        .iter()
        .flat_map(|s| s.prefixes.iter().map(|p| p.ranking.clone()))
        .collect();
    let labels: Vec<usize> = preds.iter().flat_map(|s| std::iter::repeat_n(s.label, s.len())).collect();
    let k5 = 5.min(lists.iter().map(Vec::len).min().unwrap_or(0));
    let qrs: Vec<usize> = preds.iter().filter_map(query_reduction).collect();
    let max_len = preds.iter().map(SessionPrediction::len).max().unwrap_or(0);
    let position_p1 = (0..max_len)
        .map(|i| {
            let at: Vec<&SessionPrediction> = preds.iter().filter(|p| p.len() > i).collect();
            at.iter().filter(|p| p.correct_at(i)).count() as f64 / at.len() as f64
        })
        .collect();
    let items: Vec<(f64, bool)> = preds
        .iter()
        .flat_map(|s| s.prefixes.iter().map(move |p| (p.confidence, p.top1() == Some(s.label))))
        .collect();
    let finals = preds.iter().filter(|p| !p.is_empty() && p.correct_at(p.len() - 1)).count();
    Ok(MetricReport {
        p_at_1: precision_at_k(&lists, &labels, 1)?,
        p_at_5: precision_at_k(&lists, &labels, k5)?,
        mrr: mrr(&lists, &labels)?,
        qr: (!qrs.is_empty()).then(|| qrs.iter().sum::<usize>() as f64 / qrs.len() as f64),
        n_queries: lists.len(),
        n_sessions: preds.len(),
        n_multi_sessions: qrs.len(),
        final_p_at_1: finals as f64 / preds.len() as f64,
        position_p1,
        coverage: coverage_precision(&items, thresholds),
    })
}

impl MetricReport {
    /// `key: value` lines; QR is left out when no multi-query session was seen.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p_at_1: {:.4}", self.p_at_1)?;
        writeln!(w, "p_at_5: {:.4}", self.p_at_5)?;
        writeln!(w, "mrr: {:.4}", self.mrr)?;
        if let Some(qr) = self.qr {
            writeln!(w, "qr: {qr:.4}")?;
        }
        writeln!(w, "final_p_at_1: {:.4}", self.final_p_at_1)?;
        writeln!(w, "n_queries: {}", self.n_queries)?;
        writeln!(w, "n_sessions: {}", self.n_sessions)?;
        for c in &self.coverage {
            match c.precision {
                Some(p) => writeln!(w, "t>={}: coverage {:.4} precision {:.4}", c.threshold, c.coverage, p)?,
                None => writeln!(w, "t>={}: coverage {:.4} precision -", c.threshold, c.coverage)?,
            }
        }
        Ok(())
    }
}

/// CSV `length,position,sessions,p_at_1` for every session length present.
pub fn write_position_csv<W: Write>(mut w: W, preds: &[SessionPrediction]) -> Result<()> {
    writeln!(w, "length,position,sessions,p_at_1")?;
    let max_len = preds.iter().map(SessionPrediction::len).max().unwrap_or(0);
    for len in 1..=max_len {
        let n = preds.iter().filter(|p| p.len() == len).count();
        for (i, v) in per_position_breakdown(preds, len).iter().enumerate() {
            writeln!(w, "{len},{},{n},{v:.6}", i + 1)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(label: usize, tops: &[usize], n: usize) -> SessionPrediction {
        SessionPrediction {
            session_id: "s".into(),
            label,
            prefixes: tops
                .iter()
                .map(|&t| {
                    let mut ranking = vec![t];
                    ranking.extend((0..n).filter(|&p| p != t));
                    PrefixPrediction {
                        ranking,
                        confidence: 0.5,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn precision_and_mrr_hand_values() {
        let lists = vec![vec![7, 1, 2, 3, 4, 5], vec![1, 2, 7, 3, 4, 5]];
        assert_eq!(precision_at_k(&lists[..1], &[7], 1).unwrap(), 1.0);
        assert_eq!(precision_at_k(&lists[..1], &[7], 5).unwrap(), 1.0);
        assert_eq!(precision_at_k(&lists[1..], &[7], 1).unwrap(), 0.0);
        assert_eq!(precision_at_k(&lists[1..], &[7], 5).unwrap(), 1.0);
        assert!(precision_at_k(&lists, &[7, 7], 7).is_err());
        let rr = vec![vec![3, 0, 1, 2], vec![0, 1, 2, 3]];
        assert_eq!(mrr(&rr[..1], &[3]).unwrap(), 1.0);
        assert_eq!(mrr(&rr[1..], &[3]).unwrap(), 0.25);
        assert_eq!(mrr(&rr, &[3, 3]).unwrap(), 0.625);
        assert!(mrr(&rr, &[9, 9]).is_err());
    }

    #[test]
    fn query_reduction_rules() {
        assert_eq!(query_reduction(&pred(0, &[0, 1, 1], 3)), Some(2));
        assert_eq!(query_reduction(&pred(0, &[1, 1, 1], 3)), Some(0));
        assert_eq!(query_reduction(&pred(0, &[1, 0, 1, 1, 0], 3)), Some(3));
        assert_eq!(query_reduction(&pred(0, &[0], 3)), None);
    }

    #[test]
    fn coverage_rules() {
        let items = [(0.95, true), (0.85, false), (0.75, true), (0.2, false)];
        let c = coverage_precision(&items, &[0.0, 0.8, 0.99]);
        assert_eq!(c[0].coverage, 1.0);
        assert_eq!(c[0].precision, Some(0.5));
        assert_eq!(c[1].coverage, 0.5);
        assert_eq!(c[1].precision, Some(0.5));
        assert_eq!(c[2].coverage, 0.0);
        assert_eq!(c[2].precision, None);
    }

    #[test]
    fn randomization_hand_values() {
        let a = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(randomization_test(&a, &a, 100, 1).unwrap(), 1.0);
        let ones = [1.0; 10];
        let zeros = [0.0; 10];
        assert_eq!(randomization_test(&ones, &zeros, 100, 1).unwrap(), 2.0 / 1024.0);
        assert!(randomization_test(&ones, &zeros[..3], 100, 1).is_err());
    }

    #[test]
    fn randomization_large_sample_is_symmetric() {
        let a: Vec<f64> = (0..40).map(|i| f64::from(i % 3 == 0)).collect();
        let b: Vec<f64> = (0..40).map(|i| f64::from(i % 2 == 0)).collect();
        let p = randomization_test(&a, &b, 5000, 9).unwrap();
        assert_eq!(p, randomization_test(&b, &a, 5000, 9).unwrap());
        assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn breakdown_fixture() {
        let preds = vec![pred(0, &[1, 0, 0], 3), pred(0, &[0, 0, 1], 3), pred(0, &[0], 3)];
        assert_eq!(per_position_breakdown(&preds, 3), vec![0.5, 1.0, 0.5]);
        assert!(per_position_breakdown(&preds, 4).is_empty());
        let r = evaluate(&preds, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(r.n_queries, 7);
        assert_eq!(r.n_multi_sessions, 2);
        assert_eq!(r.qr, Some(1.5));
        assert_eq!(r.position_p1, vec![2.0 / 3.0, 1.0, 0.5]);
        assert_eq!(r.final_p_at_1, 2.0 / 3.0);
    }

    #[test]
    fn single_only_report_has_no_qr_line() {
        let preds = vec![pred(0, &[0], 6), pred(1, &[0], 6)];
        let r = evaluate(&preds, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(r.qr, None);
        let mut buf = Vec::new();
        r.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("qr:"));
        assert!(text.contains("p_at_1: 0.5000"));
    }

    proptest! {
        #[test]
        fn report_orderings(raw in proptest::collection::vec((0usize..6, proptest::collection::vec(0usize..6, 1..5)), 1..30)) {
            let preds: Vec<_> = raw.iter().map(|(l, tops)| pred(*l, tops, 6)).collect();
            let r = evaluate(&preds, &[0.0, 0.5, 0.9]).unwrap();
            prop_assert!(r.p_at_1 <= r.p_at_5 && r.p_at_5 <= 1.0);
            prop_assert!(r.mrr >= r.p_at_1 && r.mrr <= 1.0);
            for p in &preds {
                if let Some(q) = query_reduction(p) {
                    prop_assert!(q < p.len());
                }
            }
        }

        #[test]
        fn coverage_monotone(items in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 0..40)) {
            let c = coverage_precision(&items, &[0.0, 0.25, 0.5, 0.75, 1.0]);
            for w in c.windows(2) {
                prop_assert!(w[1].coverage <= w[0].coverage);
            }
        }
    }
}
