//! On-disk model: `manifest.json` plus a named-tensor blob.
//!
//! Blob layout, all integers little-endian `u32`:
//! magic `SITN`, version, tensor count, then per tensor the name length, the
//! UTF-8 name bytes, the rank, each dimension, and the `f32` payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::{load_embeddings, CharDict, EmbeddingTable, QueryEncoder, UnkStore};
use crate::error::{Error, Result};
use crate::models::{IntentModel, ModelConfig};
use crate::numerics::{ParamSet, Tensor};
use crate::pipeline::ProgramVocab;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
const MAGIC: &[u8; 4] = b"SITN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub frozen_embedding: bool,
    pub programs: Vec<String>,
    /// Character dictionary symbols in index order.
    pub char_symbols: Option<Vec<char>>,
    pub embeddings_path: Option<PathBuf>,
    pub word_dim: Option<usize>,
    pub unk_seed: u64,
    pub unk_vectors: BTreeMap<String, Vec<f32>>,
    pub tensors: String,
}

/// A loaded checkpoint: model, text encoder and label set.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: IntentModel,
    pub encoder: QueryEncoder,
    pub vocab: ProgramVocab,
    pub manifest: Manifest,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated tensor blob: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_tensors<W: Write>(mut w: W, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, FORMAT_VERSION as usize)?;
    put_u32(&mut w, params.len())?;
    for p in params.iter() {
        put_u32(&mut w, p.name.len())?;
        w.write_all(p.name.as_bytes())?;
        put_u32(&mut w, p.value.shape().len())?;
        for &d in p.value.shape() {
            put_u32(&mut w, d)?;
        }
        for &v in p.value.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("tensor blob too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a tensor blob (bad magic)".into()));
    }
    let version = get_u32(&mut r)?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported tensor blob version {version}")));
    }
    let count = get_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = get_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)?;
        let shape = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Checkpoint(format!("truncated payload for `{name}`")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        params.add(&name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

/// Writes `dir/manifest.json` and `dir/tensors.bin`.
pub fn save(
    dir: &Path,
    model: &IntentModel,
    encoder: &QueryEncoder,
    vocab: &ProgramVocab,
    embeddings_path: Option<&Path>,
) -> Result<()> {
    if vocab.len() != model.config.num_programs {
        return Err(Error::Checkpoint(format!(
            "model predicts {} programs but the vocabulary has {}",
            model.config.num_programs,
            vocab.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let embeddings_path = match embeddings_path {
        Some(p) => Some(fs::canonicalize(p)?),
        None => None,
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: model.config.clone(),
        frozen_embedding: model.is_embedding_frozen(),
        programs: vocab.programs().to_vec(),
        char_symbols: encoder.chars.as_ref().map(|c| c.symbols().to_vec()),
        embeddings_path,
        word_dim: encoder.word_dim(),
        unk_seed: encoder.unk.as_ref().map_or(0, UnkStore::seed),
        unk_vectors: encoder
            .unk
            .as_ref()
            .map(|u| {
                u.snapshot()
                    .into_iter()
                    .map(|(k, v)| (k, v.into_iter().map(|x| x as f32).collect()))
                    .collect()
            })
            .unwrap_or_default(),
        tensors: TENSORS_FILE.to_string(),
    };
    let mut blob = Vec::new();
    write_tensors(&mut blob, &model.params)?;
    fs::write(dir.join(TENSORS_FILE), blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let params = read_tensors(fs::File::open(dir.join(&manifest.tensors)).map(std::io::BufReader::new)?)?;
    let model = IntentModel::from_params(manifest.model.clone(), params, manifest.frozen_embedding)?;
    let vocab = ProgramVocab::new(manifest.programs.clone())?;
    if vocab.len() != model.config.num_programs {
        return Err(Error::Checkpoint("program list does not match the model output size".into()));
    }
    let rep = manifest.model.representation;
    let chars = manifest.char_symbols.clone().map(CharDict::from_symbols);
    let table = if rep.uses_words() {
        let dim = manifest
            .word_dim
            .ok_or_else(|| Error::Checkpoint("word representation without word_dim".into()))?;
        let t = match &manifest.embeddings_path {
            Some(p) => load_embeddings(p)?,
            None => EmbeddingTable::new(dim),
        };
        if t.dim() != dim {
            return Err(Error::Checkpoint(format!(
                "embedding file has dimension {}, checkpoint expects {dim}",
                t.dim()
            )));
        }
        Some(t)
    } else {
        None
    };
    let mut encoder = QueryEncoder::new(rep, chars, table, manifest.unk_seed)?;
    if let Some(dim) = encoder.word_dim() {
        let vectors = manifest
            .unk_vectors
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|&x| f64::from(x)).collect()))
            .collect();
        encoder.unk = Some(UnkStore::from_snapshot(dim, manifest.unk_seed, vectors)?);
    }
    Ok(Checkpoint {
        model,
        encoder,
        vocab,
        manifest,
    })
}
