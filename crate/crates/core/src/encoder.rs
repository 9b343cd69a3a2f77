//! Contextual text-unit encoder: maps one sentence, caption or section text
//! to a single vector by running a small transformer over hashed token
//! embeddings and taking the hidden state of a leading summary token.
//!
//! Weights come either from a saved encoder checkpoint or from a seeded
//! initialization; both routes are explicit so that a missing checkpoint is
//! an initialization error rather than a silent fallback.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use poster_nn::{Graph, LayerNorm, ParamStore, StackConfig, StoredMatrix, TransformerEncoder, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::text::{fnv1a, tokenize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hash buckets for the token embedding table; bucket 0 is the summary
    /// token.
    pub vocab_buckets: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Maximum sequence length including the summary token.
    pub max_tokens: usize,
}

impl EncoderConfig {
    /// Full-width configuration (768-dimensional output, 512-token limit).
    pub fn base() -> Self {
        Self {
            vocab_buckets: 4096,
            dim: 768,
            layers: 1,
            heads: 8,
            ffn_dim: 1536,
            max_tokens: 512,
        }
    }

    /// Narrow configuration for CPU training runs.
    pub fn reduced(dim: usize) -> Self {
        Self {
            vocab_buckets: 2048,
            dim,
            layers: 1,
            heads: 4,
            ffn_dim: dim * 2,
            max_tokens: 128,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vocab_buckets < 2 {
            return Err("encoder.vocab_buckets must be at least 2".into());
        }
        if self.layers == 0 {
            return Err("encoder.layers must be at least 1 for first-token pooling".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(format!("encoder.dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.max_tokens < 2 {
            return Err("encoder.max_tokens must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("encoder weights not found at {0}")]
    Missing(PathBuf),
    #[error("cannot read encoder weights {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("encoder checkpoint does not match configuration: {0}")]
    Mismatch(String),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}

/// Where encoder weights come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderSource {
    Checkpoint(PathBuf),
    Seeded(u64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: EncoderConfig,
    pub params: BTreeMap<String, StoredMatrix>,
}

pub const ENCODER_FORMAT: &str = "poster-unit-encoder";

#[derive(Clone, Debug)]
pub struct UnitEncoder {
    config: EncoderConfig,
    prefix: String,
    token_table: poster_nn::ParamId,
    position_table: poster_nn::ParamId,
    embed_norm: LayerNorm,
    stack: TransformerEncoder,
}

impl UnitEncoder {
    /// Registers encoder parameters under `prefix` with a random
    /// initialization drawn from `rng`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        config.validate().map_err(EncoderError::Config)?;
        let token_table =
            store.add_normal(format!("{prefix}token_embedding"), config.vocab_buckets, config.dim, 0.5, rng);
        let position_table =
            store.add_normal(format!("{prefix}position_embedding"), config.max_tokens, config.dim, 0.1, rng);
        let embed_norm = LayerNorm::new(store, &format!("{prefix}embed_norm"), config.dim);
        let stack = TransformerEncoder::new(
            store,
            &format!("{prefix}stack"),
            &StackConfig {
                layers: config.layers,
                dim: config.dim,
                heads: config.heads,
                ffn_dim: config.ffn_dim,
            },
            rng,
        );
        Ok(Self {
            config,
            prefix: prefix.to_string(),
            token_table,
            position_table,
            embed_norm,
            stack,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Token ids for `text`: summary token first, then hashed tokens,
    /// truncated to `limit` positions (never beyond `max_tokens`).
    pub fn token_ids(&self, text: &str, limit: usize) -> Vec<usize> {
        let limit = limit.min(self.config.max_tokens).max(1);
        let buckets = (self.config.vocab_buckets - 1) as u64;
        std::iter::once(0)
            .chain(
                tokenize(text)
                    .into_iter()
                    .map(|t| (fnv1a(t.as_bytes()) % buckets) as usize + 1),
            )
            .take(limit)
            .collect()
    }

    /// Encodes each text independently; returns a `texts.len() × dim` node.
    pub fn encode_many(&self, g: &mut Graph<'_>, texts: &[&str], limit: usize) -> Var {
        assert!(!texts.is_empty(), "encode_many needs at least one text");
        let ids: Vec<Vec<usize>> = texts.iter().map(|t| self.token_ids(t, limit)).collect();
        let flat: Vec<usize> = ids.iter().flatten().copied().collect();
        let positions: Vec<usize> = ids.iter().flat_map(|u| 0..u.len()).collect();
        let table = g.param(self.token_table);
        let pos_table = g.param(self.position_table);
        let tok = g.gather_rows(table, &flat);
        let pos = g.gather_rows(pos_table, &positions);
        let emb = g.add(tok, pos);
        let emb = self.embed_norm.forward(g, emb);

        let mut pooled = Vec::with_capacity(texts.len());
        let mut offset = 0;
        for unit in &ids {
            let x = g.slice_rows(emb, offset, unit.len());
            offset += unit.len();
            let h = self.stack.forward(g, x, None, None);
            pooled.push(g.slice_rows(h, 0, 1));
        }
        if pooled.len() == 1 {
            pooled[0]
        } else {
            g.concat_rows(&pooled)
        }
    }

    /// Inference-only encoding of a single text.
    pub fn encode(&self, store: &ParamStore, text: &str, limit: usize) -> Array2<f64> {
        let mut g = Graph::new(store);
        let v = self.encode_many(&mut g, &[text], limit);
        g.value(v).clone()
    }

    fn own_names(&self, store: &ParamStore) -> Vec<(String, poster_nn::ParamId)> {
        store
            .ids()
            .filter(|id| store.name(*id).starts_with(&self.prefix))
            .map(|id| (store.name(id)[self.prefix.len()..].to_string(), id))
            .collect()
    }

    pub fn to_checkpoint(&self, store: &ParamStore) -> EncoderCheckpoint {
        EncoderCheckpoint {
            format: ENCODER_FORMAT.to_string(),
            version: 1,
            config: self.config.clone(),
            params: self
                .own_names(store)
                .into_iter()
                .map(|(name, id)| (name, StoredMatrix::from_matrix(store.get(id))))
                .collect(),
        }
    }

    /// Overwrites this encoder's parameters from a checkpoint.
    pub fn load_checkpoint(
        &self,
        store: &mut ParamStore,
        ckpt: &EncoderCheckpoint,
    ) -> Result<(), EncoderError> {
        if ckpt.format != ENCODER_FORMAT {
            return Err(EncoderError::Mismatch(format!("unexpected format {:?}", ckpt.format)));
        }
        if ckpt.config != self.config {
            return Err(EncoderError::Mismatch(format!(
                "checkpoint config {:?} differs from requested {:?}",
                ckpt.config, self.config
            )));
        }
        for (name, id) in self.own_names(store) {
            let stored = ckpt
                .params
                .get(&name)
                .ok_or_else(|| EncoderError::Mismatch(format!("missing parameter {name}")))?;
            let m = stored.to_matrix().map_err(|e| EncoderError::Mismatch(e.to_string()))?;
            if m.dim() != store.get(id).dim() {
                return Err(EncoderError::Mismatch(format!("shape of {name}")));
            }
            store.get_mut(id).assign(&m);
        }
        Ok(())
    }

    /// Initializes from `source`: a seeded draw, or a saved checkpoint that
    /// must exist.
    pub fn from_source<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: EncoderConfig,
        source: &EncoderSource,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        match source {
            EncoderSource::Seeded(seed) => {
                let mut seeded = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(*seed);
                Self::new(store, prefix, config, &mut seeded)
            }
            EncoderSource::Checkpoint(path) => {
                let ckpt = read_encoder_checkpoint(path)?;
                let enc = Self::new(store, prefix, config, rng)?;
                enc.load_checkpoint(store, &ckpt)?;
                Ok(enc)
            }
        }
    }
}

pub fn read_encoder_checkpoint(path: &Path) -> Result<EncoderCheckpoint, EncoderError> {
    if !path.exists() {
        return Err(EncoderError::Missing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| EncoderError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| EncoderError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a freshly seeded encoder checkpoint to `path`.
pub fn write_seeded_encoder(path: &Path, config: EncoderConfig, seed: u64) -> Result<(), EncoderError> {
    let mut store = ParamStore::new();
    let enc = UnitEncoder::from_source(&mut store, "", config, &EncoderSource::Seeded(seed), &mut rand::thread_rng())?;
    let json = serde_json::to_string(&enc.to_checkpoint(&store)).expect("serializable");
    std::fs::write(path, json).map_err(|e| EncoderError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig {
            vocab_buckets: 64,
            dim: 8,
            layers: 1,
            heads: 2,
            ffn_dim: 16,
            max_tokens: 6,
        }
    }

    #[test]
    fn truncates_and_reserves_summary_token() {
        let mut store = ParamStore::new();
        let enc = UnitEncoder::new(&mut store, "e.", small(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ids = enc.token_ids("one two three four five six seven", 100);
        assert_eq!(ids.len(), 6);
        assert_eq!(ids[0], 0);
        assert!(ids[1..].iter().all(|&i| (1..64).contains(&i)));
        assert_eq!(enc.token_ids("one two three", 2).len(), 2);
    }

    #[test]
    fn deterministic_and_independent_per_unit() {
        let mut store = ParamStore::new();
        let enc = UnitEncoder::new(&mut store, "e.", small(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let a = enc.encode(&store, "graph captions matter", 64);
        assert_eq!(a, enc.encode(&store, "graph captions matter", 64));
        assert_eq!(a.dim(), (1, 8));

        let mut g = Graph::new(&store);
        let both = enc.encode_many(&mut g, &["graph captions matter", "other text"], 64);
        let both = g.value(both).clone();
        assert_eq!(both.row(0), a.row(0));
        let mut g = Graph::new(&store);
        let swapped = enc.encode_many(&mut g, &["other text", "graph captions matter"], 64);
        assert_eq!(g.value(swapped).row(1), a.row(0));
    }

    #[test]
    fn checkpoint_roundtrip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        assert!(matches!(
            UnitEncoder::from_source(
                &mut ParamStore::new(),
                "e.",
                small(),
                &EncoderSource::Checkpoint(path.clone()),
                &mut ChaCha8Rng::seed_from_u64(0)
            ),
            Err(EncoderError::Missing(_))
        ));
        write_seeded_encoder(&path, small(), 5).unwrap();

        let mut s1 = ParamStore::new();
        let e1 = UnitEncoder::from_source(&mut s1, "x.", small(), &EncoderSource::Seeded(5), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut s2 = ParamStore::new();
        let e2 = UnitEncoder::from_source(
            &mut s2,
            "y.",
            small(),
            &EncoderSource::Checkpoint(path),
            &mut ChaCha8Rng::seed_from_u64(10),
        )
        .unwrap();
        assert_eq!(e1.encode(&s1, "same text", 64), e2.encode(&s2, "same text", 64));
    }

    #[test]
    fn rejects_zero_layers() {
        let cfg = EncoderConfig { layers: 0, ..small() };
        assert!(UnitEncoder::new(&mut ParamStore::new(), "", cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
