//! Query representations: one-hot character rows, pre-trained word vectors,
//! or both side by side.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Half-width of the uniform range used for out-of-vocabulary word vectors.
pub const UNK_SCALE: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Char,
    Word,
    Combined,
}

impl Representation {
    pub const ALL: [Representation; 3] =
        [Representation::Char, Representation::Word, Representation::Combined];

    pub fn uses_chars(self) -> bool {
        matches!(self, Representation::Char | Representation::Combined)
    }

    pub fn uses_words(self) -> bool {
        matches!(self, Representation::Word | Representation::Combined)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Char => "char",
            Representation::Word => "word",
            Representation::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Representation::Char),
            "word" => Ok(Representation::Word),
            "combined" | "comb" => Ok(Representation::Combined),
            _ => Err(Error::Config(format!("unknown representation `{s}`"))),
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lowercases, trims and collapses whitespace runs to one space.
pub fn normalize(query: &str) -> String {
    query
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercase, split on whitespace, strip edge punctuation per token.
pub fn tokenize(query: &str) -> Vec<String> {
    query
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Character dictionary; the index one past the last symbol is UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharDict {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharDict {
    pub fn from_symbols(mut symbols: Vec<char>) -> Self {
        symbols.sort_unstable();
        symbols.dedup();
        let index = symbols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        CharDict { symbols, index }
    }

    /// Dictionary size including the UNK slot.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn unk_index(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(self.unk_index())
    }
}

/// Sorted unique characters of the normalized training queries, plus UNK.
pub fn build_char_dict<S: AsRef<str>>(training_queries: &[S]) -> Result<CharDict> {
    let mut seen: Vec<char> = training_queries
        .iter()
        .flat_map(|q| normalize(q.as_ref()).chars().collect::<Vec<_>>())
        .collect();
    if seen.is_empty() {
        return Err(Error::EmptyInput("character corpus".into()));
    }
    seen.sort_unstable();
    seen.dedup();
    Ok(CharDict::from_symbols(seen))
}

/// One-hot matrix with one row per character of the normalized query.
pub fn encode_char(query: &str, dict: &CharDict) -> Result<Tensor> {
    let norm = normalize(query);
    let m = norm.chars().count();
    if m == 0 {
        return Err(Error::SkipQuery(query.to_string()));
    }
    let d = dict.size();
    let mut data = vec![0.0; m * d];
    for (row, c) in norm.chars().enumerate() {
        data[row * d + dict.index_of(c)] = 1.0;
    }
    Tensor::matrix(m, d, data)
}

/// Pre-trained word vectors (GloVe text layout).
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(crate::error::dim_err("embedding vector", self.dim, vector.len()));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    /// Parses `token v1 v2 ... vd` lines; the first record fixes `d`.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields.next().expect("non-empty line has a field");
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: lineno,
                            msg: format!("non-numeric component `{f}`"),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            if values.is_empty() || values.len() != t.dim {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} components, found {}", t.dim, values.len()),
                });
            }
            t.vectors.insert(token.to_string(), values);
        }
        table.ok_or_else(|| Error::EmptyInput("embedding file has no records".into()))
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    EmbeddingTable::parse(BufReader::new(File::open(path)?))
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Random vectors for tokens missing from the embedding table.
///
/// Each vector is drawn once from U[−0.05, 0.05] by a generator seeded with
/// `(seed, token)`, so the value does not depend on encounter order and is
/// identical across epochs and splits. Components are `f32`-representable so
/// the store survives checkpointing bit-exactly.
#[derive(Debug)]
pub struct UnkStore {
    seed: u64,
    dim: usize,
    vectors: Mutex<BTreeMap<String, Vec<f64>>>,
}

impl Clone for UnkStore {
    fn clone(&self) -> Self {
        UnkStore {
            seed: self.seed,
            dim: self.dim,
            vectors: Mutex::new(self.snapshot()),
        }
    }
}

impl UnkStore {
    pub fn new(dim: usize, seed: u64) -> Self {
        UnkStore {
            seed,
            dim,
            vectors: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn from_snapshot(dim: usize, seed: u64, vectors: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((t, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Checkpoint(format!(
                "unknown-word vector `{t}` has {} components, expected {dim}",
                v.len()
            )));
        }
        Ok(UnkStore {
            seed,
            dim,
            vectors: Mutex::new(vectors),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        self.vectors.lock().expect("unk store poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.vectors.lock().expect("unk store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(token));
        (0..self.dim)
            .map(|_| f64::from(rng.gen_range(-UNK_SCALE..=UNK_SCALE)))
            .collect()
    }

    pub fn get_or_sample(&self, token: &str) -> Vec<f64> {
        let mut map = self.vectors.lock().expect("unk store poisoned");
        map.entry(token.to_string())
            .or_insert_with(|| self.sample(token))
            .clone()
    }
}

/// `m_w × dim` matrix of word vectors; unknown tokens go through `unk`.
pub fn encode_word(query: &str, table: &EmbeddingTable, unk: &UnkStore) -> Result<Tensor> {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(Error::SkipQuery(query.to_string()));
    }
    let mut data = Vec::with_capacity(tokens.len() * table.dim());
    for t in &tokens {
        match table.get(t) {
            Some(v) => data.extend_from_slice(v),
            None => data.extend(unk.get_or_sample(t)),
        }
    }
    Tensor::matrix(tokens.len(), table.dim(), data)
}

/// An encoded query: character rows, word rows, or both.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedQuery {
    pub rep: Representation,
    pub chars: Option<Tensor>,
    pub words: Option<Tensor>,
}

/// Everything needed to turn query text into [`EncodedQuery`] values.
#[derive(Clone, Debug)]
pub struct QueryEncoder {
    pub rep: Representation,
    pub chars: Option<CharDict>,
    pub table: Option<EmbeddingTable>,
    pub unk: Option<UnkStore>,
}

impl QueryEncoder {
    pub fn new(
        rep: Representation,
        chars: Option<CharDict>,
        table: Option<EmbeddingTable>,
        unk_seed: u64,
    ) -> Result<Self> {
        if rep.uses_chars() && chars.is_none() {
            return Err(Error::Config(format!("{rep} representation needs a character dictionary")));
        }
        if rep.uses_words() && table.is_none() {
            return Err(Error::Config(format!("{rep} representation needs word embeddings")));
        }
        let unk = table.as_ref().map(|t| UnkStore::new(t.dim(), unk_seed));
        Ok(QueryEncoder {
            rep,
            chars: if rep.uses_chars() { chars } else { None },
            table: if rep.uses_words() { table } else { None },
            unk: if rep.uses_words() { unk } else { None },
        })
    }

    pub fn char_dim(&self) -> Option<usize> {
        self.chars.as_ref().map(CharDict::size)
    }

    pub fn word_dim(&self) -> Option<usize> {
        self.table.as_ref().map(EmbeddingTable::dim)
    }

    pub fn encode(&self, query: &str) -> Result<EncodedQuery> {
        let chars = match &self.chars {
            Some(d) => Some(encode_char(query, d)?),
            None => None,
        };
        let words = match (&self.table, &self.unk) {
            (Some(t), Some(u)) => Some(encode_word(query, t, u)?),
            _ => None,
        };
        Ok(EncodedQuery {
            rep: self.rep,
            chars,
            words,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn char_dict_basics() {
        let d = build_char_dict(&["ab", "ba"]).unwrap();
        assert_eq!(d.symbols(), &['a', 'b']);
        assert_eq!(d.size(), 3);
        let m = encode_char("ab", &d).unwrap();
        assert_eq!(m.data(), &[1., 0., 0., 0., 1., 0.]);
        let m = encode_char("aa", &d).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn unseen_character_maps_to_unk() {
        let d = build_char_dict(&["tv"]).unwrap();
        let m = encode_char("tx", &d).unwrap();
        assert_eq!(m.row(1)[d.unk_index()], 1.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(build_char_dict::<&str>(&[]).is_err());
        assert!(build_char_dict(&["   "]).is_err());
        let d = build_char_dict(&["a"]).unwrap();
        assert!(matches!(encode_char("  ", &d), Err(Error::SkipQuery(_))));
    }

    #[test]
    fn space_is_a_symbol_and_case_folds() {
        let d = build_char_dict(&["Chicago  Fire"]).unwrap();
        assert!(d.symbols().contains(&' '));
        assert!(!d.symbols().contains(&'C'));
        assert_eq!(encode_char("chicago fire", &d).unwrap().n_rows(), 12);
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Chicago Fire"), vec!["chicago", "fire"]);
        assert_eq!(tokenize("  NCIS "), vec!["ncis"]);
        assert_eq!(tokenize("k.c. undercover"), vec!["k.c", "undercover"]);
        assert!(tokenize(" ... ").is_empty());
    }

    #[test]
    fn embedding_parse_and_errors() {
        let t = EmbeddingTable::parse(Cursor::new("the 0.1 0.2\n")).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get("the").unwrap(), &[0.1, 0.2]);

        match EmbeddingTable::parse(Cursor::new("a 1 2\nb 1 2 3\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match EmbeddingTable::parse(Cursor::new("a 1 2\nb 1 x\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embedding_fixture_round_trip() {
        let mut text = String::new();
        let mut expected = Vec::new();
        for i in 0..1000 {
            let v: Vec<f64> = (0..4).map(|k| (i * 7 + k) as f64 / 1000.0 - 0.5).collect();
            text.push_str(&format!("tok{i}"));
            for x in &v {
                text.push_str(&format!(" {x}"));
            }
            text.push('\n');
            expected.push(v);
        }
        let t = EmbeddingTable::parse(Cursor::new(text)).unwrap();
        assert_eq!(t.len(), 1000);
        for (i, v) in expected.iter().enumerate() {
            assert_eq!(t.get(&format!("tok{i}")).unwrap(), &v[..]);
        }
    }

    fn small_table() -> EmbeddingTable {
        EmbeddingTable::parse(Cursor::new("chicago 0.5 -0.25 1\nfire 1 0 0\n")).unwrap()
    }

    #[test]
    fn word_encoding_known_and_unknown() {
        let t = small_table();
        let unk = UnkStore::new(3, 9);
        let m = encode_word("Chicago Fire", &t, &unk).unwrap();
        assert_eq!(m.row(0), &[0.5, -0.25, 1.0]);
        let a = encode_word("caillou", &t, &unk).unwrap();
        let b = encode_word("caillou caillou", &t, &unk).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(b.row(0), b.row(1));
        assert!(a.data().iter().all(|v| v.abs() <= 0.05));
        assert!(matches!(encode_word("!!", &t, &unk), Err(Error::SkipQuery(_))));
    }

    #[test]
    fn unk_vectors_do_not_depend_on_order() {
        let t = small_table();
        let u1 = UnkStore::new(3, 4);
        let u2 = UnkStore::new(3, 4);
        encode_word("xx yy", &t, &u1).unwrap();
        encode_word("yy xx", &t, &u2).unwrap();
        assert_eq!(u1.snapshot(), u2.snapshot());
        for v in u1.snapshot().values().flatten() {
            assert_eq!(*v, *v as f32 as f64);
        }
    }

    #[test]
    fn combined_encoder_keeps_both_matrices_separate() {
        let d = build_char_dict(&["chicago fire"]).unwrap();
        let enc = QueryEncoder::new(Representation::Combined, Some(d), Some(small_table()), 1).unwrap();
        let q = enc.encode("chicago fire").unwrap();
        let (c, w) = (q.chars.clone().unwrap(), q.words.clone().unwrap());
        assert_eq!(c.n_rows(), 12);
        assert_eq!(w.n_rows(), 2);
        let mut corrupted = q.clone();
        corrupted.chars.as_mut().unwrap().data_mut()[0] = 7.0;
        assert_eq!(corrupted.words, q.words);
        assert_eq!(enc.encode("chicago fire").unwrap(), q);
    }

    #[test]
    fn encoder_requires_vocabularies() {
        assert!(QueryEncoder::new(Representation::Word, None, None, 0).is_err());
        assert!(QueryEncoder::new(Representation::Char, None, Some(small_table()), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn one_hot_rows_sum_to_one(corpus in proptest::collection::vec("[a-z ]{1,12}", 1..8),
                                   probe in "[a-z0-9 ]{1,20}") {
            proptest::prop_assume!(corpus.iter().any(|q| !q.trim().is_empty()));
            proptest::prop_assume!(!probe.trim().is_empty());
            let d = build_char_dict(&corpus).unwrap();
            let m = encode_char(&probe, &d).unwrap();
            for r in m.rows() {
                proptest::prop_assert_eq!(r.iter().sum::<f64>(), 1.0);
                proptest::prop_assert_eq!(r.iter().cloned().fold(0.0, f64::max), 1.0);
            }
            proptest::prop_assert_eq!(encode_char(&probe, &d).unwrap(), m);
        }
    }
}
