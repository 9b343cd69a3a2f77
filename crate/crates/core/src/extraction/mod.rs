//! Joint sentence and graph extraction for one section.
//!
//! Sentences and captions are encoded separately into unit vectors, stacked
//! (sentences first) and passed through a transformer encoder whose
//! attention logits carry an additive bias derived from which sentences
//! mention which graphs. A shared head scores every unit.

mod bias;
mod model;
mod select;
mod train;

pub use bias::{biased_attention, build_attention_bias, scaled_dot_attention, AttentionBias};
pub use model::{
    EncodedUnits, ExtractionCheckpoint, ExtractionModel, ExtractionScores, ModelConfig, MODEL_FORMAT,
};
pub use select::{budgeted_selection, select_panel_content, PanelDraft};
pub use train::{
    train, train_with_callback, validation_rouge2, TrainOptions, TrainOutcome, TrainRecord, TrainingExample,
};

pub use poster_nn::balanced_ce;

use crate::encoder::EncoderError;

#[derive(Debug, thiserror::Error)]
pub enum ExtractionError {
    #[error("section {0:?} has no units to score")]
    EmptyInput(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("training diverged at epoch {epoch}, step {step} (sample {sample}): loss = {loss}")]
    Diverged {
        epoch: usize,
        step: u64,
        sample: String,
        loss: f64,
    },
    #[error("no training samples")]
    NoTrainingData,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn mean_ce(scores: &[f64], labels: &[bool], alpha: f64, beta: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| balanced_ce(p, y, alpha, beta))
        .sum::<f64>()
        / scores.len() as f64
}

/// Mean balanced cross-entropy over sentences plus `gamma` times the mean
/// over graphs. Sections without graphs contribute no graph term.
pub fn combined_loss(
    scores: &ExtractionScores,
    sentence_labels: &[bool],
    graph_labels: &[bool],
    config: &ModelConfig,
) -> f64 {
    assert_eq!(scores.sentence_scores.len(), sentence_labels.len());
    assert_eq!(scores.graph_scores.len(), graph_labels.len());
    mean_ce(&scores.sentence_scores, sentence_labels, config.alpha_s, config.beta_s)
        + config.gamma * mean_ce(&scores.graph_scores, graph_labels, config.alpha_g, config.beta_g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, GraphElement, GraphKind, Section};
    use crate::encoder::{EncoderConfig, EncoderSource};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_buckets: 128,
                dim: 8,
                layers: 1,
                heads: 2,
                ffn_dim: 16,
                max_tokens: 16,
            },
            encoder_layers: 2,
            hidden_dim: 8,
            ffn_dim: 16,
            heads: 2,
            ..ModelConfig::paper()
        }
    }

    fn fixture_section() -> Section {
        let graphs = vec![
            GraphElement {
                id: "f1".into(),
                kind: GraphKind::Figure,
                number: 1,
                caption: "Figure 1: Accuracy by batch size.".into(),
                path: None,
                gold_label: None,
            },
            GraphElement {
                id: "t1".into(),
                kind: GraphKind::Table,
                number: 1,
                caption: "Table 1: Main results.".into(),
                path: None,
                gold_label: None,
            },
        ];
        let sentences: Vec<String> = (0..10)
            .map(|i| match i {
                2 => "Figure 1 shows accuracy grows with batch size.".to_string(),
                5 => "Table 1 lists the main results and Figure 1 agrees.".to_string(),
                _ => format!("Sentence number {i} describes the setup."),
            })
            .collect();
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        Section::new("s", "Results", &refs, graphs)
    }

    #[test]
    fn closed_form_losses() {
        assert!((balanced_ce(1.0 - 1e-9, true, 1.0, 0.5)).abs() < 1e-6);
        assert!((balanced_ce(0.5, false, 1.0, 0.5) - 0.346_573_590_279_972_6).abs() < 1e-12);
        assert!((balanced_ce(0.1, true, 1.0, 0.5) - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_by_hand() {
        let cfg = ModelConfig::paper();
        let scores = ExtractionScores {
            sentence_scores: vec![0.8, 0.3],
            graph_scores: vec![0.6],
        };
        // sentences: (-ln 0.8 + -0.5 ln 0.7) / 2 ; graph: 3 * -ln 0.6
        let expected = (-(0.8f64.ln()) - 0.5 * 0.7f64.ln()) / 2.0 - 3.0 * 0.6f64.ln();
        let got = combined_loss(&scores, &[true, false], &[true], &cfg);
        assert!((got - expected).abs() < 1e-12);

        let no_graph = ExtractionScores {
            sentence_scores: vec![0.8, 0.3],
            graph_scores: vec![],
        };
        let sentence_only = (-(0.8f64.ln()) - 0.5 * 0.7f64.ln()) / 2.0;
        assert!((combined_loss(&no_graph, &[true, false], &[], &cfg) - sentence_only).abs() < 1e-12);
        let zero_gamma = ModelConfig { gamma: 0.0, ..cfg };
        assert!((combined_loss(&scores, &[true, false], &[true], &zero_gamma) - sentence_only).abs() < 1e-12);
    }

    #[test]
    fn paper_shapes_at_full_width() {
        let model = ExtractionModel::new(ModelConfig::paper(), &EncoderSource::Seeded(1), 2).unwrap();
        let section = fixture_section();
        let units = model.encode_units(&section).unwrap();
        assert_eq!(units.sentences.dim(), (10, 768));
        assert_eq!(units.captions.dim(), (2, 768));
        assert_eq!(units.combined.dim(), (12, 768));
        let scores = model.forward(&section).unwrap();
        assert_eq!(scores.sentence_scores.len(), 10);
        assert_eq!(scores.graph_scores.len(), 2);
        assert!(scores
            .sentence_scores
            .iter()
            .chain(&scores.graph_scores)
            .all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn caption_permutation_permutes_rows() {
        let model = ExtractionModel::new(tiny_config(), &EncoderSource::Seeded(1), 2).unwrap();
        let section = fixture_section();
        let mut swapped = section.clone();
        swapped.graphs.reverse();
        let a = model.encode_units(&section).unwrap();
        let b = model.encode_units(&swapped).unwrap();
        assert_eq!(a.captions.row(0), b.captions.row(1));
        assert_eq!(a.captions.row(1), b.captions.row(0));
    }

    #[test]
    fn ablation_switches_change_unit_counts() {
        let section = fixture_section();
        let no_cap = ExtractionModel::new(
            ModelConfig {
                use_captions: false,
                ..tiny_config()
            },
            &EncoderSource::Seeded(1),
            2,
        )
        .unwrap();
        let units = no_cap.encode_units(&section).unwrap();
        assert_eq!(units.combined.nrows(), 10);
        assert!(no_cap.forward(&section).unwrap().graph_scores.is_empty());

        let no_sec = ExtractionModel::new(
            ModelConfig {
                use_sentences: false,
                ..tiny_config()
            },
            &EncoderSource::Seeded(1),
            2,
        )
        .unwrap();
        let s = no_sec.forward(&section).unwrap();
        assert!(s.sentence_scores.is_empty());
        assert_eq!(s.graph_scores.len(), 2);

        let bad = ModelConfig {
            use_sentences: false,
            use_captions: false,
            ..tiny_config()
        };
        assert!(matches!(
            ExtractionModel::new(bad, &EncoderSource::Seeded(1), 2),
            Err(ExtractionError::Config(_))
        ));
        let empty_graphs = Section {
            graphs: vec![],
            ..section
        };
        assert!(matches!(no_sec.forward(&empty_graphs), Err(ExtractionError::EmptyInput(_))));
    }

    #[test]
    fn bias_follows_references() {
        let model = ExtractionModel::new(tiny_config(), &EncoderSource::Seeded(1), 2).unwrap();
        let bias = model.attention_bias(&fixture_section()).unwrap();
        // figure 1 is cited by sentences 2 and 5, table 1 by sentence 5
        assert!((bias.matrix[[10, 2]] - 0.005).abs() < 1e-18);
        assert!((bias.matrix[[11, 5]] - 0.01).abs() < 1e-18);
        assert!((bias.matrix[[2, 5]] - 0.0005).abs() < 1e-18);
    }

    #[test]
    fn no_bias_weight_equals_zero_magnitudes() {
        let section = fixture_section();
        let off = ExtractionModel::new(
            ModelConfig {
                use_bias_weight: false,
                ..tiny_config()
            },
            &EncoderSource::Seeded(3),
            4,
        )
        .unwrap();
        let zero = ExtractionModel::new(
            ModelConfig {
                h1: 0.0,
                h2: 0.0,
                ..tiny_config()
            },
            &EncoderSource::Seeded(3),
            4,
        )
        .unwrap();
        assert_eq!(off.forward(&section).unwrap(), zero.forward(&section).unwrap());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let model = ExtractionModel::new(tiny_config(), &EncoderSource::Seeded(1), 2).unwrap();
        let (_, trace) = model.forward_traced(&fixture_section()).unwrap();
        assert_eq!(trace.len(), 2);
        for layer in &trace {
            assert_eq!(layer.len(), 2);
            for head in layer {
                for row in head.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = ExtractionModel::new(tiny_config(), &EncoderSource::Seeded(1), 2).unwrap();
        model.save(&path).unwrap();
        let back = ExtractionModel::load(&path).unwrap();
        let s = fixture_section();
        assert_eq!(model.forward(&s).unwrap(), back.forward(&s).unwrap());
        assert!(ExtractionModel::load(&dir.path().join("missing.json")).is_err());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let corpus = synthesize_corpus(21, 3);
        let examples: Vec<TrainingExample> = corpus
            .iter()
            .flat_map(|e| e.samples.iter().map(TrainingExample::from_sample))
            .collect();
        let cfg = ModelConfig {
            lr: 3e-3,
            ..tiny_config()
        };
        let opts = TrainOptions {
            max_epochs: 4,
            patience: 5,
            seed: 9,
        };
        let run = || {
            let model = ExtractionModel::new(cfg.clone(), &EncoderSource::Seeded(5), 6).unwrap();
            train(model, &examples, &[], &opts).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.model.params().to_stored(), b.model.params().to_stored());
        assert_eq!(a.log, b.log);
        assert!(a.log.last().unwrap().loss < a.log[0].loss);
    }

    #[test]
    fn training_requires_samples() {
        let model = ExtractionModel::new(tiny_config(), &EncoderSource::Seeded(1), 2).unwrap();
        let opts = TrainOptions {
            max_epochs: 1,
            patience: 1,
            seed: 0,
        };
        assert!(matches!(train(model, &[], &[], &opts), Err(ExtractionError::NoTrainingData)));
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = ExtractionModel::new(tiny_config(), &EncoderSource::Seeded(1), 2).unwrap();
        let id = model.params().id("head.bias").unwrap();
        model.params_mut().get_mut(id).fill(f64::NAN);
        let corpus = synthesize_corpus(2, 1);
        let examples: Vec<_> = corpus[0].samples.iter().map(TrainingExample::from_sample).collect();
        let opts = TrainOptions {
            max_epochs: 1,
            patience: 1,
            seed: 0,
        };
        assert!(matches!(
            train(model, &examples, &[], &opts),
            Err(ExtractionError::Diverged { .. })
        ));
    }
}
