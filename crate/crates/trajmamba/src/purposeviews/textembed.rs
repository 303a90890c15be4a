//! Textual embedding ingestion: a deterministic hash-lattice stand-in for
//! a remote text model, the on-disk store format, and the remote client.

use crate::error::TrajError;
use crate::Result;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const STORE_MAGIC: &[u8; 4] = b"TEMB";

/// Description-text keyed embedding vectors, all sharing one dimension.
#[derive(Debug, Clone, Default)]
pub struct TextEmbeddingStore {
    pub dim: usize,
    entries: IndexMap<String, Vec<f32>>,
}

impl TextEmbeddingStore {
    pub fn new(dim: usize) -> Self {
        TextEmbeddingStore {
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, vec: Vec<f32>) -> Result<()> {
        if vec.len() != self.dim {
            return Err(TrajError::Data(format!(
                "embedding dimension mismatch: store {} vs vector {}",
                self.dim,
                vec.len()
            )));
        }
        self.entries.insert(key.into(), vec);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&[f32]> {
        self.entries
            .get(key)
            .map(|v| v.as_slice())
            .ok_or_else(|| TrajError::MissingEmbedding(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fills missing keys with deterministic pseudo-embeddings.
    pub fn fill_pseudo<'a>(&mut self, keys: impl IntoIterator<Item = &'a str>, seed: u64) -> Result<()> {
        for key in keys {
            if !self.contains(key) {
                let v = pseudo_embed(key, self.dim, seed)?;
                self.insert(key.to_string(), v)?;
            }
        }
        Ok(())
    }

    // Store file: magic "TEMB", u32 count, u32 dim; per entry u32 key byte
    // length, UTF-8 key, dim little-endian f32s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (key, vec) in &self.entries {
            let kb = key.as_bytes();
            out.extend_from_slice(&(kb.len() as u32).to_le_bytes());
            out.extend_from_slice(kb);
            for v in vec {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |pos: usize, n: usize| -> Result<()> {
            if pos + n > bytes.len() {
                Err(TrajError::Data("truncated embedding store".into()))
            } else {
                Ok(())
            }
        };
        need(0, 12)?;
        if &bytes[0..4] != STORE_MAGIC {
            return Err(TrajError::Data("bad embedding store magic".into()));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut store = TextEmbeddingStore::new(dim);
        let mut pos = 12;
        for _ in 0..count {
            need(pos, 4)?;
            let klen = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            need(pos, klen)?;
            let key = String::from_utf8(bytes[pos..pos + klen].to_vec())
                .map_err(|e| TrajError::Data(format!("invalid store key: {e}")))?;
            pos += klen;
            need(pos, dim * 4)?;
            let mut vec = Vec::with_capacity(dim);
            for i in 0..dim {
                vec.push(f32::from_le_bytes(
                    bytes[pos + i * 4..pos + i * 4 + 4].try_into().unwrap(),
                ));
            }
            pos += dim * 4;
            store.entries.insert(key, vec);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic stand-in for a pretrained text model: each whitespace
/// token hashes to four lattice positions with signed unit contributions;
/// the accumulated vector is L2-normalized. Identical text gives identical
/// vectors on every platform.
pub fn pseudo_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f32>> {
    if text.trim().is_empty() {
        return Err(TrajError::Data("cannot embed empty text".into()));
    }
    let mut acc = vec![0.0f64; dim];
    for token in text.split_whitespace() {
        let mut h = fnv1a(token.as_bytes(), seed);
        for _ in 0..4 {
            let idx = (h % dim as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            acc[idx] += sign;
            h = fnv1a(&h.to_le_bytes(), seed);
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // pathological token set whose contributions cancelled; nudge one
        // deterministic coordinate so the vector stays usable
        let idx = (fnv1a(text.as_bytes(), seed) % dim as u64) as usize;
        acc[idx] = 1.0;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(acc.iter().map(|v| (v / norm) as f32).collect())
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    input: &'a [String],
    dim: usize,
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f32>>,
}

/// Fetches embeddings from a remote endpoint (`POST {input, dim}` returning
/// `{vectors}`), batching requests and retrying with exponential backoff.
pub fn fetch_remote_embeddings(
    endpoint: &str,
    token: Option<&str>,
    descriptions: &[String],
    dim: usize,
    batch_size: usize,
) -> Result<TextEmbeddingStore> {
    let mut store = TextEmbeddingStore::new(dim);
    for chunk in descriptions.chunks(batch_size.max(1)) {
        let body = RemoteRequest { input: chunk, dim };
        let resp = request_with_retry(endpoint, token, &body, 3)?;
        if resp.vectors.len() != chunk.len() {
            return Err(TrajError::Remote {
                status: None,
                msg: format!(
                    "expected {} vectors, got {}",
                    chunk.len(),
                    resp.vectors.len()
                ),
            });
        }
        for (desc, vec) in chunk.iter().zip(resp.vectors) {
            store.insert(desc.clone(), vec)?;
        }
    }
    Ok(store)
}

fn request_with_retry(
    endpoint: &str,
    token: Option<&str>,
    body: &RemoteRequest,
    attempts: u32,
) -> Result<RemoteResponse> {
    let mut last: Option<TrajError> = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(std::time::Duration::from_millis(100 << attempt));
        }
        let mut req = ureq::post(endpoint);
        if let Some(tok) = token {
            req = req.header("Authorization", &format!("Bearer {tok}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => match resp.body_mut().read_json::<RemoteResponse>() {
                Ok(parsed) => return Ok(parsed),
                Err(e) => {
                    last = Some(TrajError::Remote {
                        status: Some(resp.status().as_u16()),
                        msg: format!("invalid response body: {e}"),
                    })
                }
            },
            Err(ureq::Error::StatusCode(code)) => {
                last = Some(TrajError::Remote {
                    status: Some(code),
                    msg: "server returned an error status".into(),
                });
            }
            Err(e) => {
                last = Some(TrajError::Remote {
                    status: None,
                    msg: e.to_string(),
                });
            }
        }
    }
    Err(last.expect("at least one attempt"))
}
