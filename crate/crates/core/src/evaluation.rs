//! Cross-validated experiment harness: rotate paper-disjoint folds through
//! train / validation / test roles, score text with ROUGE and graphs with
//! accuracy, and aggregate mean and standard deviation across folds.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{caption_scores, fit_similarity_threshold, lead3, textrank_extract, TextRankConfig};
use crate::corpus::{split_kfold, AlignedSample, CorpusEntry, CorpusError, FoldAssignment, Section};
use crate::encoder::EncoderSource;
use crate::extraction::{
    select_panel_content, train, ExtractionError, ExtractionModel, ModelConfig, TrainOptions, TrainingExample,
};
use crate::rouge::{oracle_extract, rouge_triple, RougeTriple};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction for {0:?} has no gold panel")]
    UnalignedPrediction(String),
    #[error("gold panel {0:?} has no prediction")]
    MissingPrediction(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
}

/// Mean ROUGE F1 over samples. Keys of the two maps must match; an empty set
/// scores zero.
pub fn evaluate_text(
    predictions: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
) -> Result<RougeTriple, EvalError> {
    if let Some(id) = predictions.keys().find(|id| !gold.contains_key(*id)) {
        return Err(EvalError::UnalignedPrediction(id.clone()));
    }
    if let Some(id) = gold.keys().find(|id| !predictions.contains_key(*id)) {
        return Err(EvalError::MissingPrediction(id.clone()));
    }
    if gold.is_empty() {
        return Ok(RougeTriple::default());
    }
    let mut sum = RougeTriple::default();
    for (id, reference) in gold {
        let s = rouge_triple(&predictions[id], reference);
        sum.rouge1 += s.rouge1;
        sum.rouge2 += s.rouge2;
        sum.rouge_l += s.rouge_l;
    }
    let k = gold.len() as f64;
    Ok(RougeTriple {
        rouge1: sum.rouge1 / k,
        rouge2: sum.rouge2 / k,
        rouge_l: sum.rouge_l / k,
    })
}

/// Graph decisions of one section.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphJudgement<'a> {
    pub section: &'a Section,
    pub predicted: BTreeSet<String>,
    pub gold: BTreeSet<String>,
}

/// Fraction of correct keep/drop decisions over every graph of every
/// section. `None` when there are no graphs at all.
pub fn evaluate_graphs(items: &[GraphJudgement<'_>]) -> Option<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for item in items {
        for g in &item.section.graphs {
            total += 1;
            correct += usize::from(item.predicted.contains(&g.id) == item.gold.contains(&g.id));
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMethod {
    Model,
    Lead3,
    Textrank,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMethod {
    Model,
    Similarity,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub text: TextMethod,
    pub graphs: GraphMethod,
    pub model: ModelConfig,
    pub textrank: TextRankConfig,
    pub encoder: EncoderSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            text: TextMethod::Model,
            graphs: GraphMethod::Model,
            model: ModelConfig::desk(),
            textrank: TextRankConfig::default(),
            encoder: EncoderSource::Seeded(0),
        }
    }
}

impl ExperimentConfig {
    fn needs_model(&self) -> bool {
        self.text == TextMethod::Model || self.graphs == GraphMethod::Model
    }

    /// Hex SHA-256 of the configuration's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldOutcome {
    Ok {
        rouge1: f64,
        rouge2: f64,
        rouge_l: f64,
        /// Absent when the test split has no graphs or graphs are not scored.
        graph_accuracy: Option<f64>,
        test_samples: usize,
    },
    Failed {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_papers: Vec<String>,
    pub validation_papers: Vec<String>,
    pub test_papers: Vec<String>,
    #[serde(flatten)]
    pub outcome: FoldOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Number of fold values aggregated.
    pub n: usize,
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rouge1: Option<MeanStd>,
    pub rouge2: Option<MeanStd>,
    pub rouge_l: Option<MeanStd>,
    pub graph_accuracy: Option<MeanStd>,
}

impl Aggregate {
    pub fn from_folds(folds: &[FoldReport]) -> Self {
        let mut r1 = Vec::new();
        let mut r2 = Vec::new();
        let mut rl = Vec::new();
        let mut ga = Vec::new();
        for f in folds {
            if let FoldOutcome::Ok {
                rouge1,
                rouge2,
                rouge_l,
                graph_accuracy,
                ..
            } = &f.outcome
            {
                r1.push(*rouge1);
                r2.push(*rouge2);
                rl.push(*rouge_l);
                ga.extend(graph_accuracy);
            }
        }
        Self {
            rouge1: mean_std(&r1),
            rouge2: mean_std(&r2),
            rouge_l: mean_std(&rl),
            graph_accuracy: mean_std(&ga),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub k: usize,
    pub config_hash: String,
    pub text_method: TextMethod,
    pub graph_method: GraphMethod,
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Paper ids per role for one rotation: fold `r` tests, fold `r + 1`
/// validates, the rest train.
pub fn rotation(assignment: &FoldAssignment, k: usize, r: usize) -> (Vec<String>, Vec<String>, Vec<String>) {
    let val_fold = (r + 1) % k;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (paper, &f) in &assignment.folds {
        let dst = if f == r {
            &mut test
        } else if f == val_fold {
            &mut val
        } else {
            &mut train
        };
        dst.push(paper.clone());
    }
    (train, val, test)
}

fn samples_of<'a>(corpus: &'a [CorpusEntry], papers: &[String]) -> Vec<&'a AlignedSample> {
    let set: BTreeSet<&str> = papers.iter().map(String::as_str).collect();
    corpus
        .iter()
        .filter(|e| set.contains(e.paper.id.as_str()))
        .flat_map(|e| e.samples.iter())
        .collect()
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn run_fold(
    corpus: &[CorpusEntry],
    config: &ExperimentConfig,
    seed: u64,
    fold: usize,
    train_ids: &[String],
    val_ids: &[String],
    test_ids: &[String],
) -> Result<FoldOutcome, EvalError> {
    let train_samples = samples_of(corpus, train_ids);
    let val_samples = samples_of(corpus, val_ids);
    let test_samples = samples_of(corpus, test_ids);
    let budget = config.model.word_budget;
    let fseed = fold_seed(seed, fold);

    let model = if config.needs_model() {
        let examples: Vec<TrainingExample> = train_samples.iter().map(|s| TrainingExample::from_sample(s)).collect();
        let validation: Vec<TrainingExample> = val_samples.iter().map(|s| TrainingExample::from_sample(s)).collect();
        let init = ExtractionModel::new(config.model.clone(), &config.encoder, fseed)?;
        let opts = TrainOptions::from_config(&init, fseed);
        Some(train(init, &examples, &validation, &opts)?.model)
    } else {
        None
    };

    let similarity_threshold = (config.graphs == GraphMethod::Similarity).then(|| {
        let scored: Vec<(f64, bool)> = train_samples
            .iter()
            .flat_map(|s| caption_scores(&s.section).into_iter().zip(s.graph_labels()))
            .collect();
        fit_similarity_threshold(&scored)
    });

    let mut predictions = BTreeMap::new();
    let mut gold = BTreeMap::new();
    let mut judgements = Vec::new();
    for sample in &test_samples {
        let section = &sample.section;
        let scores = match &model {
            Some(m) => Some(m.forward(section)?),
            None => None,
        };
        let draft = scores
            .as_ref()
            .map(|s| select_panel_content(s, section, budget, config.model.graph_threshold));
        let sentences = match config.text {
            TextMethod::Model => draft.as_ref().expect("model trained").sentence_indices.clone(),
            TextMethod::Lead3 => lead3(section).unwrap_or_default(),
            TextMethod::Textrank => textrank_extract(section, &config.textrank)
                .map(|r| r.selection)
                .unwrap_or_default(),
            TextMethod::Oracle => oracle_extract(section, &sample.panel_text, budget),
        };
        predictions.insert(sample.id(), section.joined_text(&sentences));
        gold.insert(sample.id(), sample.panel_text.clone());

        let predicted: Option<BTreeSet<String>> = match config.graphs {
            GraphMethod::Model if config.model.use_captions => {
                Some(draft.as_ref().expect("model trained").graph_ids.iter().cloned().collect())
            }
            GraphMethod::Model | GraphMethod::None => None,
            GraphMethod::Similarity => {
                let t = similarity_threshold.expect("fitted");
                Some(
                    section
                        .graphs
                        .iter()
                        .zip(caption_scores(section))
                        .filter(|(_, s)| *s >= t)
                        .map(|(g, _)| g.id.clone())
                        .collect(),
                )
            }
        };
        if let Some(predicted) = predicted {
            judgements.push(GraphJudgement {
                section,
                predicted,
                gold: sample.panel_graph_ids.clone(),
            });
        }
    }
    let text = evaluate_text(&predictions, &gold)?;
    Ok(FoldOutcome::Ok {
        rouge1: text.rouge1,
        rouge2: text.rouge2,
        rouge_l: text.rouge_l,
        graph_accuracy: evaluate_graphs(&judgements),
        test_samples: test_samples.len(),
    })
}

/// Runs all `k` rotations (in parallel) and aggregates. A fold whose
/// training fails is reported as failed; the others still run.
pub fn run_experiment(
    corpus: &[CorpusEntry],
    k: usize,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentReport, EvalError> {
    let ids: Vec<&str> = corpus.iter().map(|e| e.paper.id.as_str()).collect();
    let assignment = split_kfold(&ids, k, seed)?;
    if config.needs_model() {
        config.model.validate()?;
    }
    let folds: Vec<FoldReport> = (0..k)
        .into_par_iter()
        .map(|r| {
            let (train_ids, val_ids, test_ids) = rotation(&assignment, k, r);
            let outcome = match run_fold(corpus, config, seed, r, &train_ids, &val_ids, &test_ids) {
                Ok(o) => o,
                Err(e) => {
                    log::warn!("fold {r} failed: {e}");
                    FoldOutcome::Failed { reason: e.to_string() }
                }
            };
            FoldReport {
                fold: r,
                train_papers: train_ids,
                validation_papers: val_ids,
                test_papers: test_ids,
                outcome,
            }
        })
        .collect();
    Ok(ExperimentReport {
        seed,
        k,
        config_hash: config.hash(),
        text_method: config.text,
        graph_method: config.graphs,
        aggregate: Aggregate::from_folds(&folds),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, GraphElement, GraphKind};

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn perfect_and_empty_text() {
        let gold = map(&[("a", "the cat sat on the mat"), ("b", "a dog ran")]);
        let s = evaluate_text(&gold, &gold).unwrap();
        assert_eq!((s.rouge1, s.rouge2, s.rouge_l), (1.0, 1.0, 1.0));
        let empty = map(&[("a", ""), ("b", "")]);
        assert_eq!(evaluate_text(&empty, &gold).unwrap(), RougeTriple::default());
        assert!(evaluate_text(&map(&[("a", "x")]), &gold).is_err());
        assert!(evaluate_text(&map(&[("a", "x"), ("b", "y"), ("c", "z")]), &gold).is_err());
    }

    #[test]
    fn three_sample_fixture() {
        // a: "the cat sat" vs "the cat ran": R1 2/3, R2 1/2, RL 2/3
        // b: identical: 1, 1, 1
        // c: "x y" vs "y x": R1 1, R2 0, RL 1/2
        let pred = map(&[("a", "the cat sat"), ("b", "one two"), ("c", "x y")]);
        let gold = map(&[("a", "the cat ran"), ("b", "one two"), ("c", "y x")]);
        let s = evaluate_text(&pred, &gold).unwrap();
        assert!((s.rouge1 - (2.0 / 3.0 + 1.0 + 1.0) / 3.0).abs() < 1e-12);
        assert!((s.rouge2 - (0.5 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
        assert!((s.rouge_l - (2.0 / 3.0 + 1.0 + 0.5) / 3.0).abs() < 1e-12);
    }

    fn graph_section() -> Section {
        let graphs = (1..=4)
            .map(|i| GraphElement {
                id: format!("f{i}"),
                kind: GraphKind::Figure,
                number: i,
                caption: format!("Figure {i}: c"),
                path: None,
                gold_label: None,
            })
            .collect();
        Section::new("s", "T", &["x"], graphs)
    }

    #[test]
    fn graph_accuracy_fixtures() {
        let s = graph_section();
        let set = |ids: &[&str]| ids.iter().map(|i| i.to_string()).collect::<BTreeSet<_>>();
        let gold = set(&["f1", "f2"]);
        let right = GraphJudgement {
            section: &s,
            predicted: gold.clone(),
            gold: gold.clone(),
        };
        assert_eq!(evaluate_graphs(&[right]), Some(1.0));
        let baseline = GraphJudgement {
            section: &s,
            predicted: set(&["f1"]),
            gold: gold.clone(),
        };
        assert_eq!(evaluate_graphs(&[baseline]), Some(0.75));
        let inverted = GraphJudgement {
            section: &s,
            predicted: set(&["f2", "f3", "f4"]),
            gold: gold.clone(),
        };
        assert_eq!(evaluate_graphs(&[inverted]), Some(0.25));
        let bare = Section::new("t", "T", &["x"], vec![]);
        let none = GraphJudgement {
            section: &bare,
            predicted: BTreeSet::new(),
            gold: BTreeSet::new(),
        };
        assert_eq!(evaluate_graphs(&[none]), None);
    }

    #[test]
    fn population_std() {
        let m = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!((m.mean, m.std), (5.0, 2.0));
        assert_eq!(mean_std(&[0.3; 5]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
    }

    #[test]
    fn rotation_sizes_and_roles() {
        let corpus = synthesize_corpus(1, 20);
        let ids: Vec<&str> = corpus.iter().map(|e| e.paper.id.as_str()).collect();
        let a = split_kfold(&ids, 10, 3).unwrap();
        for r in 0..10 {
            let (tr, va, te) = rotation(&a, 10, r);
            assert_eq!((tr.len(), va.len(), te.len()), (16, 2, 2));
        }
    }

    #[test]
    fn baseline_experiment_is_deterministic() {
        let corpus = synthesize_corpus(2, 10);
        let cfg = ExperimentConfig {
            text: TextMethod::Lead3,
            graphs: GraphMethod::Similarity,
            ..Default::default()
        };
        let a = run_experiment(&corpus, 5, &cfg, 4).unwrap();
        let b = run_experiment(&corpus, 5, &cfg, 4).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.folds.len(), 5);
        let oracle = ExperimentConfig {
            text: TextMethod::Oracle,
            graphs: GraphMethod::None,
            ..Default::default()
        };
        let o = run_experiment(&corpus, 5, &oracle, 4).unwrap();
        assert!(o.aggregate.rouge2.unwrap().mean > a.aggregate.rouge2.unwrap().mean);
        assert!(o.aggregate.graph_accuracy.is_none());
    }

    #[test]
    fn too_few_papers() {
        let corpus = synthesize_corpus(2, 3);
        assert!(run_experiment(&corpus, 5, &ExperimentConfig::default(), 0).is_err());
    }
}
