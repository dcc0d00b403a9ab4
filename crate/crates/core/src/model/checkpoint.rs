use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, Weights};
use crate::error::{Error, Result};
use crate::provenance::sha256;

const MAGIC: &[u8; 8] = b"ICECKPT1";

/// Trained parameters plus the hashes tying them to their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Fingerprint of the tokenizer spec the model was trained on.
    pub spec_hash: [u8; 32],
    pub config_hash: String,
    pub seed: u64,
}

impl Checkpoint {
    /// Layout (little-endian): magic `ICECKPT1`; config block of six u64
    /// (d_model, heads, layers, d_ff, vocab, max_len) and one f64 dropout;
    /// u64 seed; 32-byte spec hash; u32 length + UTF-8 config hash; u64
    /// parameter count; f32 tensors in declaration order; trailing SHA-256
    /// of all preceding bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.params.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for dim in [
            c.d_model,
            c.n_heads,
            c.n_layers,
            c.d_ff,
            c.vocab_size,
            c.max_len,
        ] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        out.extend_from_slice(&c.dropout.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.spec_hash);
        out.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out.extend_from_slice(&(self.params.weights.param_count() as u64).to_le_bytes());
        for (_, t) in self.params.weights.tensors() {
            for &x in t {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let digest = sha256(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |m: &str| Error::format(path, m);
        if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
            return Err(err("not a checkpoint"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if sha256(body) != digest {
            return Err(err("checksum mismatch"));
        }
        let mut r = Reader {
            bytes: body,
            pos: 8,
        };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u64().ok_or_else(|| err("truncated config block"))? as usize;
        }
        let dropout = f64::from_le_bytes(
            r.take(8)
                .ok_or_else(|| err("truncated config block"))?
                .try_into()
                .unwrap(),
        );
        let config = ModelConfig {
            d_model: dims[0],
            n_heads: dims[1],
            n_layers: dims[2],
            d_ff: dims[3],
            vocab_size: dims[4],
            max_len: dims[5],
            dropout,
        };
        config.validate()?;
        let seed = r.u64().ok_or_else(|| err("truncated header"))?;
        let spec_hash: [u8; 32] = r
            .take(32)
            .ok_or_else(|| err("truncated header"))?
            .try_into()
            .unwrap();
        let hash_len = r
            .take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| err("truncated header"))?;
        let config_hash = std::str::from_utf8(
            r.take(hash_len as usize)
                .ok_or_else(|| err("truncated header"))?,
        )
        .map_err(|_| err("config hash is not UTF-8"))?
        .to_string();
        let count = r.u64().ok_or_else(|| err("truncated header"))? as usize;
        let mut weights = Weights::zeros(&config);
        if weights.param_count() != count || r.bytes.len() - r.pos != 4 * count {
            return Err(err("parameter count does not match config"));
        }
        for t in weights.tensors_mut() {
            for x in t.iter_mut() {
                *x = f32::from_le_bytes(r.take(4).unwrap().try_into().unwrap()) as f64;
            }
        }
        if weights.first_non_finite().is_some() {
            return Err(err("non-finite weight"));
        }
        Ok(Checkpoint {
            params: ModelParams::from_weights(config, weights)?,
            spec_hash,
            config_hash,
            seed,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
