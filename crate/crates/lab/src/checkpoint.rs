//! Binary checkpoints: a JSON header followed by raw tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   8 bytes   magic "PLGCKPT1"
//! offset 8   u32       header length H in bytes
//! offset 12  H bytes   UTF-8 JSON header (see `Header`)
//! then       for each entry of header.tensors, in order:
//!                      product(shape) values as f64
//! ```
//!
//! Nothing follows the last tensor. N-gram counts are stored as one tensor
//! per context length `k`, `counts.k`, of shape `[rows, k + 2]` holding
//! the context ids, the next id, and the count.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use plugin_core::autodiff::Tensor;
use plugin_core::models::{NGramModel, ParamSet, TinyTransformer, TransformerConfig};
use plugin_core::TokenId;
use serde::{Deserialize, Serialize};

use crate::config::ModelDims;
use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 8] = b"PLGCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelHeader {
    Transformer {
        vocab_size: usize,
        dims: ModelDims,
    },
    Ngram {
        order: usize,
        lambda: f64,
        vocab_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: u32,
    /// Which method the checkpoint belongs to, or "base".
    pub role: String,
    pub seed: u64,
    /// Hex SHA-256 of the vocabulary file contents.
    pub vocab_digest: String,
    pub scalars: BTreeMap<String, f64>,
    pub model: Option<ModelHeader>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Transformer(TinyTransformer),
    Ngram(NGramModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: String,
    pub seed: u64,
    pub vocab_digest: [u8; 32],
    pub scalars: BTreeMap<String, f64>,
    pub model: Option<StoredModel>,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn ngram_tensors(m: &NGramModel) -> Vec<(String, Tensor)> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); m.order()];
    for (ctx, next, count) in m.entries() {
        let r = &mut rows[ctx.len()];
        r.extend(ctx.iter().map(|&t| t as f64));
        r.push(next as f64);
        r.push(count as f64);
    }
    rows.into_iter()
        .enumerate()
        .map(|(k, data)| {
            let n = data.len() / (k + 2);
            (format!("counts.{k}"), Tensor::new(vec![n, k + 2], data).expect("shape"))
        })
        .collect()
}

fn ngram_from_tensors(order: usize, lambda: f64, vocab: usize, tensors: &[(String, Tensor)]) -> Option<NGramModel> {
    let mut entries = Vec::new();
    for (k, (name, t)) in tensors.iter().enumerate() {
        if *name != format!("counts.{k}") || k >= order || t.shape().len() != 2 || t.shape()[1] != k + 2 {
            return None;
        }
        for i in 0..t.shape()[0] {
            let row = t.row(i);
            let ctx: Vec<TokenId> = row[..k].iter().map(|&x| x as TokenId).collect();
            entries.push((ctx, row[k] as TokenId, row[k + 1] as u64));
        }
    }
    NGramModel::from_entries(
        order,
        lambda,
        vocab,
        entries.iter().map(|(c, n, k)| (c.as_slice(), *n, *k)),
    )
    .ok()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (model, tensors): (Option<ModelHeader>, Vec<(String, Tensor)>) = match &self.model {
            None => (None, Vec::new()),
            Some(StoredModel::Transformer(m)) => {
                let c = m.config();
                let header = ModelHeader::Transformer {
                    vocab_size: c.vocab_size,
                    dims: ModelDims::from_config(c),
                };
                let ts = m.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
                (Some(header), ts)
            }
            Some(StoredModel::Ngram(m)) => {
                let header = ModelHeader::Ngram {
                    order: m.order(),
                    lambda: m.lambda(),
                    vocab_size: plugin_core::models::LanguageModel::vocab_size(m),
                };
                (Some(header), ngram_tensors(m))
            }
        };
        let header = Header {
            format: FORMAT_VERSION,
            role: self.role.clone(),
            seed: self.seed,
            vocab_digest: hex(&self.vocab_digest),
            scalars: self.scalars.clone(),
            model,
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorInfo {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err("bad magic".into());
        }
        let h_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + h_len).ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(body).map_err(|e| format!("header: {e}"))?;
        if header.format != FORMAT_VERSION {
            return Err(format!("unsupported format {}", header.format));
        }
        let mut pos = 12 + h_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in &header.tensors {
            let n: usize = info.shape.iter().product();
            let raw = bytes
                .get(pos..pos + 8 * n)
                .ok_or_else(|| format!("tensor {} truncated", info.name))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(info.shape.clone(), data).map_err(|e| e.to_string())?;
            tensors.push((info.name.clone(), t));
            pos += 8 * n;
        }
        if pos != bytes.len() {
            return Err("trailing bytes after last tensor".into());
        }
        let model = match header.model {
            None if tensors.is_empty() => None,
            None => return Err("tensors without a model header".into()),
            Some(ModelHeader::Transformer { vocab_size, dims }) => {
                let mut params = ParamSet::new();
                for (n, t) in tensors {
                    if params.get(&n).is_some() {
                        return Err(format!("duplicate tensor {n}"));
                    }
                    params.push(n, t);
                }
                let m = TinyTransformer::from_params(dims.to_config(vocab_size), params, header.seed)
                    .map_err(|e| e.to_string())?;
                Some(StoredModel::Transformer(m))
            }
            Some(ModelHeader::Ngram {
                order,
                lambda,
                vocab_size,
            }) => Some(StoredModel::Ngram(
                ngram_from_tensors(order, lambda, vocab_size, &tensors).ok_or("bad n-gram counts")?,
            )),
        };
        Ok(Self {
            role: header.role,
            seed: header.seed,
            vocab_digest: unhex(&header.vocab_digest).ok_or("bad vocab digest")?,
            scalars: header.scalars,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(LabError::MissingCheckpoint(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?).map_err(|reason| LabError::BadCheckpoint {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| LabError::Runtime(format!("checkpoint {} lacks scalar {name}", self.role)))
    }

    pub fn transformer(&self) -> Result<&TinyTransformer> {
        match &self.model {
            Some(StoredModel::Transformer(m)) => Ok(m),
            _ => Err(LabError::Runtime(format!(
                "checkpoint {} holds no transformer",
                self.role
            ))),
        }
    }
}

impl ModelDims {
    pub fn from_config(c: &TransformerConfig) -> Self {
        Self {
            num_blocks: c.num_blocks,
            embed_dim: c.embed_dim,
            num_heads: c.num_heads,
            ff_dim: c.ff_dim,
            context_window: c.context_window,
            init_scale: c.init_scale,
        }
    }
}
