use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use poster_nn::{
    AttentionTrace, Gradients, Graph, Linear, Matrix, ParamStore, StackConfig, StoredMatrix, TransformerEncoder,
    Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_attention_bias, AttentionBias, ExtractionError};
use crate::corpus::Section;
use crate::encoder::{EncoderConfig, EncoderSource, UnitEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Layers of the section-level encoder stacked over unit vectors.
    pub encoder_layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub h1: f64,
    pub h2: f64,
    pub alpha_s: f64,
    pub beta_s: f64,
    pub alpha_g: f64,
    pub beta_g: f64,
    pub gamma: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// `false` drops the reference bias (plain self-attention).
    pub use_bias_weight: bool,
    /// `false` discards graph captions.
    pub use_captions: bool,
    /// `false` discards section sentences.
    pub use_sentences: bool,
    /// Keep the unit encoder fixed during training.
    pub freeze_encoder: bool,
    pub word_budget: usize,
    pub graph_threshold: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size configuration: 3 layers, 768 wide, 1536 feed-forward.
    pub fn paper() -> Self {
        Self {
            encoder: EncoderConfig::base(),
            encoder_layers: 3,
            hidden_dim: 768,
            ffn_dim: 1536,
            heads: 8,
            h1: 1e-2,
            h2: 1e-3,
            alpha_s: 1.0,
            beta_s: 0.5,
            alpha_g: 1.0,
            beta_g: 1.0,
            gamma: 3.0,
            lr: 8e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            use_bias_weight: true,
            use_captions: true,
            use_sentences: true,
            freeze_encoder: false,
            word_budget: 45,
            graph_threshold: 0.5,
            max_epochs: 30,
            patience: 5,
        }
    }

    /// Narrow configuration that trains on a CPU in seconds. Loss weights
    /// and bias magnitudes are unchanged; the learning rate is raised because
    /// the unit encoder starts from a random draw.
    pub fn desk() -> Self {
        let dim = 32;
        Self {
            encoder: EncoderConfig::reduced(dim),
            encoder_layers: 2,
            hidden_dim: dim,
            ffn_dim: dim * 2,
            heads: 4,
            lr: 2e-3,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        let bad = |m: String| Err(ExtractionError::Config(m));
        self.encoder.validate().map_err(ExtractionError::Config)?;
        if self.encoder.dim != self.hidden_dim {
            return bad(format!(
                "encoder.dim ({}) must equal hidden_dim ({})",
                self.encoder.dim, self.hidden_dim
            ));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad(format!("hidden_dim {} not divisible by {} heads", self.hidden_dim, self.heads));
        }
        for (name, v) in [
            ("alpha_s", self.alpha_s),
            ("beta_s", self.beta_s),
            ("alpha_g", self.alpha_g),
            ("beta_g", self.beta_g),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative".into());
        }
        if !(self.h1 >= 0.0 && self.h2 >= 0.0) {
            return bad("h1 and h2 must be non-negative".into());
        }
        if !self.use_captions && !self.use_sentences {
            return bad("use_captions and use_sentences cannot both be false".into());
        }
        if self.word_budget == 0 {
            return bad("word_budget must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        Ok(())
    }

    fn stack(&self) -> StackConfig {
        StackConfig {
            layers: self.encoder_layers,
            dim: self.hidden_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
        }
    }
}

/// Unit vectors of one section: sentences first, then captions.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUnits {
    pub sentences: Matrix,
    pub captions: Matrix,
    pub combined: Matrix,
}

impl EncodedUnits {
    pub fn n(&self) -> usize {
        self.sentences.nrows()
    }

    pub fn m(&self) -> usize {
        self.captions.nrows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionScores {
    pub sentence_scores: Vec<f64>,
    pub graph_scores: Vec<f64>,
}

/// Inputs of one forward pass after applying the ablation switches.
pub(crate) struct SectionInput<'a> {
    pub sentences: Vec<&'a str>,
    pub captions: Vec<&'a str>,
    pub bias: AttentionBias,
}

pub struct ExtractionModel {
    config: ModelConfig,
    store: ParamStore,
    encoder: UnitEncoder,
    stack: TransformerEncoder,
    head: Linear,
}

pub const MODEL_FORMAT: &str = "poster-extraction-model";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractionCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: BTreeMap<String, StoredMatrix>,
}

impl ExtractionModel {
    /// Builds a model: unit encoder from `encoder_source`, new layers from a
    /// generator seeded with `seed`.
    pub fn new(config: ModelConfig, encoder_source: &EncoderSource, seed: u64) -> Result<Self, ExtractionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = UnitEncoder::from_source(&mut store, "encoder.", config.encoder.clone(), encoder_source, &mut rng)?;
        let stack = TransformerEncoder::new(&mut store, "section", &config.stack(), &mut rng);
        let head = Linear::new(&mut store, "head", config.hidden_dim, 1, &mut rng);
        store.set_frozen_prefix("encoder.", config.freeze_encoder);
        Ok(Self {
            config,
            store,
            encoder,
            stack,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &UnitEncoder {
        &self.encoder
    }

    pub(crate) fn prepare<'a>(&self, section: &'a Section) -> Result<SectionInput<'a>, ExtractionError> {
        let cfg = &self.config;
        let sentences: Vec<&str> = if cfg.use_sentences {
            section.sentences.iter().map(|s| s.text.as_str()).collect()
        } else {
            Vec::new()
        };
        let captions: Vec<&str> = if cfg.use_captions {
            section.graphs.iter().map(|g| g.caption.as_str()).collect()
        } else {
            Vec::new()
        };
        let (n, m) = (sentences.len(), captions.len());
        if n + m == 0 {
            return Err(ExtractionError::EmptyInput(section.id.clone()));
        }
        let bias = if cfg.use_bias_weight && n > 0 && m > 0 {
            build_attention_bias(n, m, &section.reference_pairs(), cfg.h1, cfg.h2)
        } else {
            AttentionBias::zeros(n, m)
        };
        Ok(SectionInput {
            sentences,
            captions,
            bias,
        })
    }

    fn encode_graph(&self, g: &mut Graph<'_>, input: &SectionInput<'_>) -> Var {
        let units: Vec<&str> = input.sentences.iter().chain(&input.captions).copied().collect();
        self.encoder.encode_many(g, &units, self.config.encoder.max_tokens)
    }

    /// Separately encodes sentences and captions; `combined` is their row
    /// concatenation.
    pub fn encode_units(&self, section: &Section) -> Result<EncodedUnits, ExtractionError> {
        let input = self.prepare(section)?;
        let mut g = Graph::new(&self.store);
        let d = self.encode_graph(&mut g, &input);
        let combined = g.value(d).clone();
        let n = input.sentences.len();
        Ok(EncodedUnits {
            sentences: combined.slice(ndarray::s![..n, ..]).to_owned(),
            captions: combined.slice(ndarray::s![n.., ..]).to_owned(),
            combined,
        })
    }

    /// Records the forward pass; returns the `(n + m) × 1` probability node.
    pub(crate) fn forward_graph(
        &self,
        g: &mut Graph<'_>,
        input: &SectionInput<'_>,
        trace: Option<&mut AttentionTrace>,
    ) -> Var {
        let d = self.encode_graph(g, input);
        let h = self.stack.forward(g, d, Some(&input.bias.matrix), trace);
        let logits = self.head.forward(g, h);
        g.sigmoid(logits)
    }

    fn split_scores(&self, probs: &Matrix, n: usize) -> ExtractionScores {
        let col: Vec<f64> = probs.column(0).to_vec();
        ExtractionScores {
            sentence_scores: col[..n].to_vec(),
            graph_scores: col[n..].to_vec(),
        }
    }

    pub fn forward(&self, section: &Section) -> Result<ExtractionScores, ExtractionError> {
        let input = self.prepare(section)?;
        let mut g = Graph::new(&self.store);
        let p = self.forward_graph(&mut g, &input, None);
        Ok(self.split_scores(g.value(p), input.sentences.len()))
    }

    /// Forward pass that also returns attention probabilities of every layer
    /// and head of the section-level stack.
    pub fn forward_traced(&self, section: &Section) -> Result<(ExtractionScores, AttentionTrace), ExtractionError> {
        let input = self.prepare(section)?;
        let mut g = Graph::new(&self.store);
        let mut trace = AttentionTrace::new();
        let p = self.forward_graph(&mut g, &input, Some(&mut trace));
        Ok((self.split_scores(g.value(p), input.sentences.len()), trace))
    }

    /// The bias matrix this model would add for `section`.
    pub fn attention_bias(&self, section: &Section) -> Result<AttentionBias, ExtractionError> {
        Ok(self.prepare(section)?.bias)
    }

    /// Records forward pass and combined loss; returns
    /// `(total, sentence loss, graph loss)` nodes.
    pub(crate) fn loss_graph(
        &self,
        g: &mut Graph<'_>,
        section: &Section,
        sentence_labels: &[bool],
        graph_labels: &[bool],
    ) -> Result<(Var, Var, Var), ExtractionError> {
        let input = self.prepare(section)?;
        let (n, m) = (input.sentences.len(), input.captions.len());
        let s_labels: &[bool] = if n > 0 { sentence_labels } else { &[] };
        let g_labels: &[bool] = if m > 0 { graph_labels } else { &[] };
        if s_labels.len() != n || g_labels.len() != m {
            return Err(ExtractionError::Dimension(format!(
                "labels ({}, {}) do not match units ({n}, {m})",
                s_labels.len(),
                g_labels.len()
            )));
        }
        let probs = self.forward_graph(g, &input, None);
        let c = &self.config;
        let sentence_loss = if n > 0 {
            let p = g.slice_rows(probs, 0, n);
            g.balanced_ce_mean(p, s_labels, c.alpha_s, c.beta_s)
        } else {
            g.constant(Array2::zeros((1, 1)))
        };
        let graph_loss = if m > 0 {
            let p = g.slice_rows(probs, n, m);
            g.balanced_ce_mean(p, g_labels, c.alpha_g, c.beta_g)
        } else {
            g.constant(Array2::zeros((1, 1)))
        };
        let weighted = g.scale(graph_loss, c.gamma);
        let total = g.add(sentence_loss, weighted);
        Ok((total, sentence_loss, graph_loss))
    }

    /// Combined loss of one labeled section.
    pub fn loss(&self, section: &Section, sentence_labels: &[bool], graph_labels: &[bool]) -> Result<f64, ExtractionError> {
        let mut g = Graph::new(&self.store);
        let (total, _, _) = self.loss_graph(&mut g, section, sentence_labels, graph_labels)?;
        Ok(g.value(total)[[0, 0]])
    }

    /// Combined loss and its gradient w.r.t. every parameter.
    pub fn loss_and_gradients(
        &self,
        section: &Section,
        sentence_labels: &[bool],
        graph_labels: &[bool],
    ) -> Result<(f64, Gradients), ExtractionError> {
        let mut g = Graph::new(&self.store);
        let (total, _, _) = self.loss_graph(&mut g, section, sentence_labels, graph_labels)?;
        let value = g.value(total)[[0, 0]];
        Ok((value, g.backward(total)))
    }

    pub fn to_checkpoint(&self) -> ExtractionCheckpoint {
        ExtractionCheckpoint {
            format: MODEL_FORMAT.to_string(),
            version: 1,
            config: self.config.clone(),
            params: self.store.to_stored(),
        }
    }

    pub fn from_checkpoint(ckpt: &ExtractionCheckpoint) -> Result<Self, ExtractionError> {
        if ckpt.format != MODEL_FORMAT || ckpt.version != 1 {
            return Err(ExtractionError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = Self::new(ckpt.config.clone(), &EncoderSource::Seeded(0), 0)?;
        model
            .store
            .load_stored(&ckpt.params)
            .map_err(|e| ExtractionError::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExtractionError> {
        let json = serde_json::to_string(&self.to_checkpoint()).expect("serializable");
        std::fs::write(path, json).map_err(|e| ExtractionError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExtractionError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: ExtractionCheckpoint =
            serde_json::from_str(&text).map_err(|e| ExtractionError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ckpt)
    }
}
