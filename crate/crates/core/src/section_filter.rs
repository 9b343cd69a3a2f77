//! Section importance classifier: encode each section to a vector, optionally
//! contextualize the sequence of section vectors with a small transformer,
//! and score every section with a sigmoid head.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use poster_nn::{
    sinusoidal_positions, Adam, AdamConfig, Graph, Linear, ParamStore, StackConfig, StoredMatrix,
    TransformerEncoder, Var,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Paper, Section};
use crate::encoder::{EncoderConfig, EncoderError, EncoderSource, UnitEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    TitleAndBody,
    TitleOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectionFilterConfig {
    pub input_mode: InputMode,
    pub use_paper_context: bool,
    pub context_layers: usize,
    pub context_heads: usize,
    pub context_ffn_dim: usize,
    pub threshold: f64,
    pub max_tokens: usize,
    pub encoder: EncoderConfig,
    pub lr: f64,
    pub max_epochs: usize,
    pub freeze_encoder: bool,
}

impl Default for SectionFilterConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl SectionFilterConfig {
    pub fn paper() -> Self {
        Self {
            input_mode: InputMode::TitleAndBody,
            use_paper_context: true,
            context_layers: 2,
            context_heads: 8,
            context_ffn_dim: 1536,
            threshold: 0.5,
            max_tokens: 512,
            encoder: EncoderConfig::base(),
            lr: 8e-5,
            max_epochs: 30,
            freeze_encoder: false,
        }
    }

    /// Narrow configuration for CPU runs. Only the opening of each section
    /// is read.
    pub fn desk() -> Self {
        let dim = 32;
        Self {
            context_heads: 4,
            context_ffn_dim: dim * 2,
            max_tokens: 24,
            encoder: EncoderConfig {
                max_tokens: 24,
                ..EncoderConfig::reduced(dim)
            },
            lr: 2e-3,
            max_epochs: 40,
            ..Self::paper()
        }
    }

    pub fn title_only(self) -> Self {
        Self {
            input_mode: InputMode::TitleOnly,
            ..self
        }
    }

    pub fn without_context(self) -> Self {
        Self {
            use_paper_context: false,
            ..self
        }
    }

    fn uses_context(&self) -> bool {
        self.use_paper_context && self.context_layers > 0
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: String| Err(FilterError::Config(m));
        self.encoder.validate().map_err(FilterError::Config)?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.max_tokens < 2 {
            return bad("max_tokens must be at least 2".into());
        }
        if self.uses_context() && (self.context_heads == 0 || !self.encoder.dim.is_multiple_of(self.context_heads)) {
            return bad(format!(
                "encoder.dim {} not divisible by {} context heads",
                self.encoder.dim, self.context_heads
            ));
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("paper {0:?} has no sections")]
    EmptyPaper(String),
    #[error("invalid section filter configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("section {section:?} of paper {paper:?} has no importance label")]
    MissingLabel { paper: String, section: String },
    #[error("no training papers")]
    NoTrainingData,
    #[error("training diverged at epoch {epoch} on paper {paper}: loss = {loss}")]
    Diverged { epoch: usize, paper: String, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// The text a section contributes under `mode`.
pub fn section_text(section: &Section, mode: InputMode) -> String {
    match mode {
        InputMode::TitleOnly => section.title.clone(),
        InputMode::TitleAndBody => format!("{}. {}", section.title, section.body()),
    }
}

/// Indices with score at least `threshold`, in order; the argmax alone when
/// none pass (lowest index on ties).
pub fn threshold_filter(scores: &[f64], threshold: f64) -> Vec<usize> {
    let kept: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= threshold).collect();
    if !kept.is_empty() || scores.is_empty() {
        return kept;
    }
    let best = (0..scores.len())
        .reduce(|a, b| if scores[b] > scores[a] { b } else { a })
        .expect("non-empty");
    vec![best]
}

pub const FILTER_FORMAT: &str = "poster-section-filter";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: SectionFilterConfig,
    pub params: BTreeMap<String, StoredMatrix>,
}

pub struct SectionFilter {
    config: SectionFilterConfig,
    store: ParamStore,
    encoder: UnitEncoder,
    context: Option<TransformerEncoder>,
    head: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

impl SectionFilter {
    pub fn new(config: SectionFilterConfig, encoder_source: &EncoderSource, seed: u64) -> Result<Self, FilterError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = UnitEncoder::from_source(&mut store, "encoder.", config.encoder.clone(), encoder_source, &mut rng)?;
        let dim = config.encoder.dim;
        let context = config.uses_context().then(|| {
            TransformerEncoder::new(
                &mut store,
                "context",
                &StackConfig {
                    layers: config.context_layers,
                    dim,
                    heads: config.context_heads,
                    ffn_dim: config.context_ffn_dim,
                },
                &mut rng,
            )
        });
        let head = Linear::new(&mut store, "head", dim, 1, &mut rng);
        store.set_frozen_prefix("encoder.", config.freeze_encoder);
        Ok(Self {
            config,
            store,
            encoder,
            context,
            head,
        })
    }

    pub fn config(&self) -> &SectionFilterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Vector representation of one section (`1 × dim`).
    pub fn encode_section(&self, section: &Section) -> Array2<f64> {
        let text = section_text(section, self.config.input_mode);
        self.encoder.encode(&self.store, &text, self.config.max_tokens)
    }

    fn forward_graph(&self, g: &mut Graph<'_>, paper: &Paper) -> Result<Var, FilterError> {
        if paper.sections.is_empty() {
            return Err(FilterError::EmptyPaper(paper.id.clone()));
        }
        let texts: Vec<String> = paper
            .sections
            .iter()
            .map(|s| section_text(s, self.config.input_mode))
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let mut h = self.encoder.encode_many(g, &refs, self.config.max_tokens);
        if let Some(context) = &self.context {
            let pos = sinusoidal_positions(refs.len(), self.config.encoder.dim);
            h = g.add_const(h, &pos);
            h = context.forward(g, h, None, None);
        }
        let logits = self.head.forward(g, h);
        Ok(g.sigmoid(logits))
    }

    /// Importance probability of every section, in order.
    pub fn score_sections(&self, paper: &Paper) -> Result<Vec<f64>, FilterError> {
        let mut g = Graph::new(&self.store);
        let p = self.forward_graph(&mut g, paper)?;
        Ok(g.value(p).column(0).to_vec())
    }

    pub fn filter_sections<'p>(&self, paper: &'p Paper) -> Result<Vec<&'p Section>, FilterError> {
        let scores = self.score_sections(paper)?;
        Ok(threshold_filter(&scores, self.config.threshold)
            .into_iter()
            .map(|i| &paper.sections[i])
            .collect())
    }

    /// Fraction of labeled sections classified correctly at the threshold.
    pub fn accuracy(&self, papers: &[Paper]) -> Result<f64, FilterError> {
        let (mut correct, mut total) = (0usize, 0usize);
        for paper in papers {
            let labels = labels_of(paper)?;
            let scores = self.score_sections(paper)?;
            for (p, y) in scores.iter().zip(labels) {
                total += 1;
                correct += usize::from((*p >= self.config.threshold) == y);
            }
        }
        Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
    }

    /// Trains with unweighted binary cross-entropy, one paper per step.
    pub fn train(&mut self, papers: &[Paper], seed: u64) -> Result<Vec<FilterRecord>, FilterError> {
        if papers.is_empty() {
            return Err(FilterError::NoTrainingData);
        }
        let labels: Vec<Vec<bool>> = papers.iter().map(labels_of).collect::<Result<_, _>>()?;
        let mut adam = Adam::new(
            AdamConfig {
                lr: self.config.lr,
                ..AdamConfig::default()
            },
            &self.store,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..papers.len()).collect();
        let mut log = Vec::with_capacity(self.config.max_epochs);
        for epoch in 1..=self.config.max_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &i in &order {
                let (loss, grads) = {
                    let mut g = Graph::new(&self.store);
                    let p = self.forward_graph(&mut g, &papers[i])?;
                    let l = g.balanced_ce_mean(p, &labels[i], 1.0, 1.0);
                    (g.value(l)[[0, 0]], g.backward(l))
                };
                if !loss.is_finite() || !grads.all_finite() {
                    return Err(FilterError::Diverged {
                        epoch,
                        paper: papers[i].id.clone(),
                        loss,
                    });
                }
                adam.step(&mut self.store, &grads);
                total += loss;
            }
            let record = FilterRecord {
                epoch,
                loss: total / papers.len() as f64,
                train_accuracy: self.accuracy(papers)?,
            };
            log::debug!("filter epoch {epoch}: loss {:.5} acc {:.4}", record.loss, record.train_accuracy);
            log.push(record);
        }
        Ok(log)
    }

    pub fn to_checkpoint(&self) -> FilterCheckpoint {
        FilterCheckpoint {
            format: FILTER_FORMAT.to_string(),
            version: 1,
            config: self.config.clone(),
            params: self.store.to_stored(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), FilterError> {
        let json = serde_json::to_string(&self.to_checkpoint()).expect("serializable");
        std::fs::write(path, json).map_err(|e| FilterError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| FilterError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: FilterCheckpoint =
            serde_json::from_str(&text).map_err(|e| FilterError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format != FILTER_FORMAT || ckpt.version != 1 {
            return Err(FilterError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let mut model = Self::new(ckpt.config, &EncoderSource::Seeded(0), 0)?;
        model
            .store
            .load_stored(&ckpt.params)
            .map_err(|e| FilterError::Checkpoint(e.to_string()))?;
        Ok(model)
    }
}

fn labels_of(paper: &Paper) -> Result<Vec<bool>, FilterError> {
    paper
        .sections
        .iter()
        .map(|s| {
            s.gold_important.ok_or_else(|| FilterError::MissingLabel {
                paper: paper.id.clone(),
                section: s.id.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthesize_corpus;

    fn tiny() -> SectionFilterConfig {
        SectionFilterConfig {
            context_heads: 2,
            context_ffn_dim: 16,
            max_tokens: 16,
            encoder: EncoderConfig {
                vocab_buckets: 128,
                dim: 8,
                layers: 1,
                heads: 2,
                ffn_dim: 16,
                max_tokens: 16,
            },
            lr: 5e-3,
            ..SectionFilterConfig::paper()
        }
    }

    fn paper() -> Paper {
        synthesize_corpus(4, 1).remove(0).paper
    }

    #[test]
    fn threshold_and_fallback() {
        assert_eq!(threshold_filter(&[0.9, 0.2, 0.7], 0.5), vec![0, 2]);
        assert_eq!(threshold_filter(&[0.1, 0.3, 0.3], 0.5), vec![1]);
        assert!(threshold_filter(&[], 0.5).is_empty());
    }

    #[test]
    fn lowering_threshold_never_drops() {
        let scores = [0.12, 0.55, 0.31, 0.9, 0.49];
        let mut prev: Vec<usize> = Vec::new();
        for t in [0.95, 0.8, 0.5, 0.3, 0.1] {
            let now = threshold_filter(&scores, t);
            assert!(prev.iter().all(|i| now.contains(i)));
            prev = now;
        }
    }

    #[test]
    fn full_width_vectors() {
        let model = SectionFilter::new(SectionFilterConfig::paper(), &EncoderSource::Seeded(1), 2).unwrap();
        let p = paper();
        let v = model.encode_section(&p.sections[0]);
        assert_eq!(v.dim(), (1, 768));
        assert_eq!(v, model.encode_section(&p.sections[0]));
    }

    #[test]
    fn scores_in_range_and_ordered() {
        let model = SectionFilter::new(tiny(), &EncoderSource::Seeded(1), 2).unwrap();
        let p = paper();
        let scores = model.score_sections(&p).unwrap();
        assert_eq!(scores.len(), p.sections.len());
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        let kept = model.filter_sections(&p).unwrap();
        assert!(!kept.is_empty());
    }

    #[test]
    fn title_only_ignores_bodies() {
        let model = SectionFilter::new(tiny().title_only(), &EncoderSource::Seeded(1), 2).unwrap();
        let p = paper();
        let mut q = p.clone();
        q.sections[1].sentences[0].text = "Completely different words here.".into();
        q.sections[2].sentences.truncate(2);
        assert_eq!(model.score_sections(&p).unwrap(), model.score_sections(&q).unwrap());
    }

    #[test]
    fn without_context_sections_are_independent() {
        let model = SectionFilter::new(tiny().without_context(), &EncoderSource::Seeded(1), 2).unwrap();
        let p = paper();
        let full = model.score_sections(&p).unwrap();
        let mut q = p.clone();
        q.sections.remove(1);
        let fewer = model.score_sections(&q).unwrap();
        assert_eq!(full[0], fewer[0]);
        assert_eq!(&full[2..], &fewer[1..]);

        let ctx = SectionFilter::new(tiny(), &EncoderSource::Seeded(1), 2).unwrap();
        assert_ne!(ctx.score_sections(&p).unwrap()[0], ctx.score_sections(&q).unwrap()[0]);
    }

    #[test]
    fn errors() {
        let model = SectionFilter::new(tiny(), &EncoderSource::Seeded(1), 2).unwrap();
        let mut p = paper();
        p.sections[0].gold_important = None;
        assert!(matches!(model.accuracy(&[p.clone()]), Err(FilterError::MissingLabel { .. })));
        p.sections.clear();
        assert!(matches!(model.score_sections(&p), Err(FilterError::EmptyPaper(_))));
        let missing = EncoderSource::Checkpoint("/nonexistent/encoder.json".into());
        assert!(matches!(
            SectionFilter::new(tiny(), &missing, 0),
            Err(FilterError::Encoder(EncoderError::Missing(_)))
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("filter.json");
        let model = SectionFilter::new(tiny(), &EncoderSource::Seeded(1), 2).unwrap();
        model.save(&path).unwrap();
        let back = SectionFilter::load(&path).unwrap();
        let p = paper();
        assert_eq!(model.score_sections(&p).unwrap(), back.score_sections(&p).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let papers: Vec<Paper> = synthesize_corpus(5, 3).into_iter().map(|e| e.paper).collect();
        let cfg = SectionFilterConfig { max_epochs: 3, ..tiny() };
        let run = || {
            let mut m = SectionFilter::new(cfg.clone(), &EncoderSource::Seeded(1), 2).unwrap();
            let log = m.train(&papers, 7).unwrap();
            (m.params().to_stored(), log)
        };
        assert_eq!(run(), run());
    }
}
