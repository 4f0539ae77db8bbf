//! Title matchers (edit distance, tf-idf) and ranking features for an
//! external learning-to-rank step.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rayon::prelude::*;

use crate::encoding::{normalize, tokenize, EmbeddingTable, UnkStore};
use crate::error::{Error, Result};
use crate::eval::{PrefixPrediction, SessionPrediction};
use crate::pipeline::{normalized_levenshtein, ProgramCatalogEntry, ProgramVocab};

pub const CANDIDATES_PER_MATCHER: usize = 10;

/// Levenshtein distance between lowercased, whitespace-normalized strings.
pub fn edit_distance(a: &str, b: &str) -> usize {
    crate::pipeline::levenshtein(&normalize(a), &normalize(b))
}

/// Titles indexed by program position in Φ, with tf-idf statistics.
#[derive(Clone, Debug)]
pub struct TitleCatalog {
    titles: Vec<String>,
    tokens: Vec<Vec<String>>,
    df: HashMap<String, usize>,
    vectors: Vec<BTreeMap<String, f64>>,
}

impl TitleCatalog {
    pub fn new<S: AsRef<str>>(titles: &[S]) -> Result<Self> {
        if titles.is_empty() {
            return Err(Error::EmptyInput("catalog".into()));
        }
        let norm: Vec<String> = titles.iter().map(|t| normalize(t.as_ref())).collect();
        let tokens: Vec<Vec<String>> = norm.iter().map(|t| tokenize(t)).collect();
        let mut df: HashMap<String, usize> = HashMap::new();
        for toks in &tokens {
            for t in toks.iter().collect::<BTreeSet<_>>() {
                *df.entry(t.clone()).or_default() += 1;
            }
        }
        let mut cat = TitleCatalog {
            titles: norm,
            tokens,
            df,
            vectors: Vec::new(),
        };
        cat.vectors = cat.tokens.iter().map(|t| cat.tfidf_vector(t)).collect();
        Ok(cat)
    }

    /// Titles for every program of `vocab`, in vocabulary order.
    pub fn from_catalog(vocab: &ProgramVocab, entries: &[ProgramCatalogEntry]) -> Result<Self> {
        let by_id: HashMap<&str, &str> = entries
            .iter()
            .map(|e| (e.program_id.as_str(), e.title.as_str()))
            .collect();
        let titles = vocab
            .programs()
            .iter()
            .map(|p| {
                by_id
                    .get(p.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("catalog has no title for program `{p}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&titles)
    }

    pub fn len(&self) -> usize {
        self.titles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }

    pub fn title(&self, i: usize) -> &str {
        &self.titles[i]
    }

    /// `ln(N / (1 + df)) + 1`.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        (self.len() as f64 / (1.0 + df as f64)).ln() + 1.0
    }

    /// Raw term frequency times idf.
    pub fn tfidf_vector(&self, tokens: &[String]) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t.clone()).or_default() += 1.0;
        }
        for (t, v) in tf.iter_mut() {
            *v *= self.idf(t);
        }
        tf
    }

    pub fn tfidf_cosine(&self, query: &str, program: usize) -> f64 {
        let q = self.tfidf_vector(&tokenize(query));
        sparse_cosine(&q, &self.vectors[program])
    }
}

fn sparse_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    // an empty sum is -0.0
    if dot == 0.0 || na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Programs by ascending edit distance to the query; ties by index. At most `k`.
pub fn editdist_predict(query: &str, catalog: &TitleCatalog, k: usize) -> Vec<(usize, usize)> {
    let q = normalize(query);
    let mut scored: Vec<(usize, usize)> = (0..catalog.len())
        .map(|i| (i, crate::pipeline::levenshtein(&q, catalog.title(i))))
        .collect();
    scored.sort_by_key(|&(i, d)| (d, i));
    scored.truncate(k);
    scored
}

/// Programs by descending tf-idf cosine; ties by index. At most `k`.
pub fn tfidf_predict(query: &str, catalog: &TitleCatalog, k: usize) -> Vec<(usize, f64)> {
    let q = catalog.tfidf_vector(&tokenize(query));
    let mut scored: Vec<(usize, f64)> = (0..catalog.len())
        .map(|i| (i, sparse_cosine(&q, &catalog.vectors[i])))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Union of the top-`CANDIDATES_PER_MATCHER` lists of both matchers, ascending by index.
pub fn candidate_union(query: &str, catalog: &TitleCatalog) -> Vec<usize> {
    let mut set: BTreeSet<usize> = editdist_predict(query, catalog, CANDIDATES_PER_MATCHER)
        .into_iter()
        .map(|c| c.0)
        .collect();
    set.extend(tfidf_predict(query, catalog, CANDIDATES_PER_MATCHER).into_iter().map(|c| c.0));
    set.into_iter().collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `[normalized edit distance, tf-idf cosine, max, mean, min word-pair cosine]`.
pub fn ranking_features(
    query: &str,
    program: usize,
    catalog: &TitleCatalog,
    table: &EmbeddingTable,
    unk: &UnkStore,
) -> [f64; 5] {
    let ed = normalized_levenshtein(&normalize(query), catalog.title(program));
    let tf = catalog.tfidf_cosine(query, program);
    let vec_of = |t: &str| table.get(t).map_or_else(|| unk.get_or_sample(t), <[f64]>::to_vec);
    let qv: Vec<Vec<f64>> = tokenize(query).iter().map(|t| vec_of(t)).collect();
    let tv: Vec<Vec<f64>> = catalog.tokens[program].iter().map(|t| vec_of(t)).collect();
    let pairs: Vec<f64> = qv.iter().flat_map(|a| tv.iter().map(move |b| cosine(a, b))).collect();
    if pairs.is_empty() {
        return [ed, tf, 0.0, 0.0, 0.0];
    }
    let max = pairs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = pairs.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    [ed, tf, max, mean, min]
}

/// A session as plain text for the baselines.
#[derive(Clone, Debug)]
pub struct TextSession {
    pub id: String,
    pub queries: Vec<String>,
    pub label: usize,
}

/// Writes `session_id, query_index, candidate_program, label, f1..f5` rows.
pub fn write_feature_dump<W: Write>(
    mut w: W,
    sessions: &[TextSession],
    catalog: &TitleCatalog,
    vocab: &ProgramVocab,
    table: &EmbeddingTable,
    unk: &UnkStore,
) -> Result<usize> {
    let blocks: Vec<String> = sessions
        .par_iter()
        .map(|s| {
            let mut out = String::new();
            for (qi, q) in s.queries.iter().enumerate() {
                for c in candidate_union(q, catalog) {
                    let f = ranking_features(q, c, catalog, table, unk);
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                        s.id,
                        qi,
                        vocab.program(c),
                        u8::from(c == s.label),
                        f[0],
                        f[1],
                        f[2],
                        f[3],
                        f[4]
                    ));
                }
            }
            out
        })
        .collect();
    let mut rows = 0;
    for b in &blocks {
        rows += b.lines().count();
        w.write_all(b.as_bytes())?;
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    EditDistance,
    TfIdf,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "editdist" | "edit-distance" | "edit_distance" => Ok(Baseline::EditDistance),
            "tfidf" | "tf-idf" => Ok(Baseline::TfIdf),
            _ => Err(Error::Usage(format!("unknown baseline `{s}` (editdist, tfidf)"))),
        }
    }
}

/// Context-free baseline rankings for every prefix, in the evaluator's format.
/// Confidence is `1 − normalized distance` or the cosine.
pub fn baseline_predictions(kind: Baseline, sessions: &[TextSession], catalog: &TitleCatalog) -> Vec<SessionPrediction> {
    sessions
        .par_iter()
        .map(|s| SessionPrediction {
            session_id: s.id.clone(),
            label: s.label,
            prefixes: s
                .queries
                .iter()
                .map(|q| match kind {
                    Baseline::EditDistance => {
                        let r = editdist_predict(q, catalog, catalog.len());
                        let len = normalize(q).chars().count();
                        let top = r[0];
                        let denom = len.max(catalog.title(top.0).chars().count()).max(1);
                        PrefixPrediction {
                            confidence: 1.0 - top.1 as f64 / denom as f64,
                            ranking: r.into_iter().map(|x| x.0).collect(),
                        }
                    }
                    Baseline::TfIdf => {
                        let r = tfidf_predict(q, catalog, catalog.len());
                        PrefixPrediction {
                            confidence: r[0].1,
                            ranking: r.into_iter().map(|x| x.0).collect(),
                        }
                    }
                })
                .collect(),
        })
        .collect()
}

/// Program ids whose title is shared with at least one other catalog entry.
pub fn shared_title_programs(entries: &[ProgramCatalogEntry]) -> BTreeSet<String> {
    let mut by_title: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for e in entries {
        by_title.entry(normalize(&e.title)).or_default().push(&e.program_id);
    }
    by_title
        .into_values()
        .filter(|ids| ids.len() > 1)
        .flatten()
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn edit_distance_values() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("House", "house"), 0);
    }

    #[test]
    fn editdist_ranking() {
        let cat = TitleCatalog::new(&["mouse", "house"]).unwrap();
        let r = editdist_predict("houze", &cat, 2);
        assert_eq!(r, vec![(1, 1), (0, 2)]);
        let tie = TitleCatalog::new(&["abc", "abd", "abc"]).unwrap();
        assert_eq!(editdist_predict("abc", &tie, 3), vec![(0, 0), (2, 0), (1, 1)]);
    }

    #[test]
    fn tfidf_values() {
        let cat = TitleCatalog::new(&["chicago fire", "chicago med", "house"]).unwrap();
        assert!((cat.idf("chicago") - ((3.0f64 / 3.0).ln() + 1.0)).abs() < 1e-15);
        assert!((cat.idf("house") - ((3.0f64 / 2.0).ln() + 1.0)).abs() < 1e-15);
        assert_eq!(tfidf_predict("chicago fire", &cat, 1)[0].0, 0);
        assert_eq!(cat.tfidf_cosine("house", 0), 0.0);
        let zero = tfidf_predict("", &cat, 3);
        assert_eq!(zero, vec![(0, 0.0), (1, 0.0), (2, 0.0)]);
    }

    fn dense_oracle(cat: &TitleCatalog, titles: &[&str], query: &str, p: usize) -> f64 {
        let mut vocab: Vec<String> = titles.iter().flat_map(|t| tokenize(t)).collect();
        vocab.extend(tokenize(query));
        vocab.sort();
        vocab.dedup();
        let vecize = |text: &str| -> Vec<f64> {
            let toks = tokenize(text);
            vocab
                .iter()
                .map(|v| toks.iter().filter(|t| *t == v).count() as f64 * cat.idf(v))
                .collect()
        };
        cosine(&vecize(query), &vecize(titles[p]))
    }

    proptest! {
        #[test]
        fn tfidf_matches_dense_oracle(
            titles in proptest::collection::vec("[abc]{1,2}( [abc]{1,2}){0,2}", 1..8),
            query in "[abc]{1,2}( [abc]{1,2}){0,3}",
        ) {
            let refs: Vec<&str> = titles.iter().map(String::as_str).collect();
            let cat = TitleCatalog::new(&refs).unwrap();
            for p in 0..refs.len() {
                let a = cat.tfidf_cosine(&query, p);
                let b = dense_oracle(&cat, &refs, &query, p);
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn editdist_matches_sort_oracle(titles in proptest::collection::vec("[ab]{0,4}", 1..10), query in "[ab]{0,4}") {
            let cat = TitleCatalog::new(&titles).unwrap();
            let got = editdist_predict(&query, &cat, titles.len());
            let mut want: Vec<(usize, usize)> = titles.iter().enumerate()
                .map(|(i, t)| (i, edit_distance(&query, t))).collect();
            want.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
            prop_assert_eq!(got, want);
        }

        #[test]
        fn edit_distance_is_metric(a in "[a-c]{0,6}", b in "[a-c]{0,6}", c in "[a-c]{0,6}") {
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }
    }

    #[test]
    fn union_sizes() {
        let titles: Vec<String> = (0..30).map(|i| format!("t{i} w{i}")).collect();
        let cat = TitleCatalog::new(&titles).unwrap();
        let u = candidate_union("t3 w3", &cat);
        let ed: BTreeSet<usize> = editdist_predict("t3 w3", &cat, 10).iter().map(|c| c.0).collect();
        let tf: BTreeSet<usize> = tfidf_predict("t3 w3", &cat, 10).iter().map(|c| c.0).collect();
        assert!(u.len() >= 10 && u.len() <= 20);
        assert!(ed.iter().chain(&tf).all(|c| u.contains(c)));
        let small = TitleCatalog::new(&["a", "b"]).unwrap();
        assert_eq!(candidate_union("a", &small), vec![0, 1]);
    }

    #[test]
    fn feature_vector_scripted() {
        let table = EmbeddingTable::parse(Cursor::new("a 1 0\nb 0 1\nc 1 1\n")).unwrap();
        let unk = UnkStore::new(2, 1);
        let cat = TitleCatalog::new(&["a b", "c"]).unwrap();
        // 3 query tokens x 2 title tokens
        let f = ranking_features("a b c", 0, &cat, &table, &unk);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let pairs = [1.0, 0.0, 0.0, 1.0, s, s];
        assert!((f[0] - 2.0 / 5.0).abs() < 1e-15);
        assert_eq!(f[2], 1.0);
        assert!((f[3] - pairs.iter().sum::<f64>() / 6.0).abs() < 1e-12);
        assert_eq!(f[4], 0.0);
        let g = ranking_features("c", 1, &cat, &table, &unk);
        assert_eq!(g[0], 0.0);
        assert!((g[2] - 1.0).abs() < 1e-12 && g[2] == g[3] && g[3] == g[4]);
        let h = ranking_features("!!", 1, &cat, &table, &unk);
        assert_eq!(&h[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_titles_detected() {
        let e = |p: &str, t: &str| ProgramCatalogEntry {
            program_id: p.into(),
            title: t.into(),
            action_type: "SERIES".into(),
        };
        let s = shared_title_programs(&[e("a", "Chicago Fire"), e("b", "chicago fire"), e("c", "house")]);
        assert_eq!(s.into_iter().collect::<Vec<_>>(), ["a", "b"]);
    }
}
