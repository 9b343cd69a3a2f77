use std::ops::ControlFlow;

use poster_nn::{Adam, AdamConfig, Graph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{select_panel_content, ExtractionError, ExtractionModel};
use crate::corpus::{AlignedSample, Section};
use crate::rouge::{greedy_label_sentences, rouge_n};

/// A section with per-unit labels and its gold panel text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub section: Section,
    pub sentence_labels: Vec<bool>,
    pub graph_labels: Vec<bool>,
    pub panel_text: String,
}

impl TrainingExample {
    /// Uses derived sentence labels when present, otherwise labels the
    /// section by greedy ROUGE-2 against the panel text.
    pub fn from_sample(sample: &AlignedSample) -> Self {
        let sentence_labels = sample
            .derived_sentence_labels
            .clone()
            .unwrap_or_else(|| greedy_label_sentences(&sample.section, &sample.panel_text));
        Self {
            id: sample.id(),
            section: sample.section.clone(),
            sentence_labels,
            graph_labels: sample.graph_labels(),
            panel_text: sample.panel_text.clone(),
        }
    }
}

/// One line of the training log, written after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss_sentence: f64,
    pub loss_graph: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_rouge2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_config(model: &ExtractionModel, seed: u64) -> Self {
        Self {
            max_epochs: model.config().max_epochs,
            patience: model.config().patience,
            seed,
        }
    }
}

pub struct TrainOutcome {
    pub model: ExtractionModel,
    pub log: Vec<TrainRecord>,
    /// Epoch whose parameters were kept (1-based; 0 if none ran).
    pub best_epoch: usize,
    pub best_val_rouge2: Option<f64>,
}

/// Mean ROUGE-2 F1 of the model's budgeted selections against gold panels.
pub fn validation_rouge2(model: &ExtractionModel, examples: &[TrainingExample]) -> Result<f64, ExtractionError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let scores = model.forward(&ex.section)?;
        let draft = select_panel_content(
            &scores,
            &ex.section,
            model.config().word_budget,
            model.config().graph_threshold,
        );
        total += rouge_n(&draft.text(&ex.section), &ex.panel_text, 2)
            .expect("order 2 is valid")
            .f1;
    }
    Ok(total / examples.len() as f64)
}

pub fn train(
    model: ExtractionModel,
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    opts: &TrainOptions,
) -> Result<TrainOutcome, ExtractionError> {
    train_with_callback(model, examples, validation, opts, |_, _| ControlFlow::Continue(()))
}

/// Trains one section per optimizer step. After every epoch the callback sees
/// the model and the epoch record and may stop training. With a validation
/// set, the parameters of the best validation ROUGE-2 epoch are restored and
/// training stops after `patience` epochs without improvement.
pub fn train_with_callback<F>(
    mut model: ExtractionModel,
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    opts: &TrainOptions,
    mut on_epoch: F,
) -> Result<TrainOutcome, ExtractionError>
where
    F: FnMut(&ExtractionModel, &TrainRecord) -> ControlFlow<()>,
{
    if examples.is_empty() {
        return Err(ExtractionError::NoTrainingData);
    }
    let cfg = model.config().clone();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, poster_nn::ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum_s, mut sum_g, mut sum_total) = (0.0, 0.0, 0.0);
        for &i in &order {
            let ex = &examples[i];
            let (values, grads) = {
                let mut g = Graph::new(model.params());
                let (total, ls, lg) = model.loss_graph(&mut g, &ex.section, &ex.sentence_labels, &ex.graph_labels)?;
                let values = (g.value(total)[[0, 0]], g.value(ls)[[0, 0]], g.value(lg)[[0, 0]]);
                (values, g.backward(total))
            };
            if !values.0.is_finite() || !grads.all_finite() {
                return Err(ExtractionError::Diverged {
                    epoch,
                    step: adam.steps_taken() + 1,
                    sample: ex.id.clone(),
                    loss: values.0,
                });
            }
            adam.step(model.params_mut(), &grads);
            sum_total += values.0;
            sum_s += values.1;
            sum_g += values.2;
        }
        let k = examples.len() as f64;
        let val_rouge2 = if validation.is_empty() {
            None
        } else {
            Some(validation_rouge2(&model, validation)?)
        };
        let record = TrainRecord {
            epoch,
            step: adam.steps_taken(),
            loss_sentence: sum_s / k,
            loss_graph: sum_g / k,
            loss: sum_total / k,
            val_rouge2,
        };
        log::debug!("epoch {epoch}: loss {:.5} val_rouge2 {:?}", record.loss, record.val_rouge2);
        let flow = on_epoch(&model, &record);
        log.push(record);

        if let Some(v) = val_rouge2 {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, model.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        if flow.is_break() || (best.is_some() && since_best >= opts.patience) {
            break;
        }
    }

    let (best_epoch, best_val_rouge2) = match best {
        Some((v, epoch, params)) => {
            model.params_mut().copy_values_from(&params);
            (epoch, Some(v))
        }
        None => (log.len(), None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_rouge2,
    })
}
