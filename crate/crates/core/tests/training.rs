use poster_core::corpus::synthesize_corpus;
use poster_core::encoder::EncoderSource;
use poster_core::extraction::{train, ExtractionModel, ModelConfig, TrainOptions, TrainingExample};

fn one_sample() -> TrainingExample {
    let sample = synthesize_corpus(21, 3)
        .into_iter()
        .flat_map(|e| e.samples)
        .find(|s| !s.section.graphs.is_empty())
        .expect("a sample with graphs");
    TrainingExample::from_sample(&sample)
}

#[test]
fn single_sample_is_memorized() {
    let ex = one_sample();
    let model = ExtractionModel::new(ModelConfig::desk(), &EncoderSource::Seeded(21), 4).unwrap();
    let opts = TrainOptions {
        max_epochs: 60,
        patience: 60,
        seed: 4,
    };
    let out = train(model, std::slice::from_ref(&ex), &[], &opts).unwrap();
    let scores = out.model.forward(&ex.section).unwrap();
    let pairs = scores
        .sentence_scores
        .iter()
        .zip(&ex.sentence_labels)
        .chain(scores.graph_scores.iter().zip(&ex.graph_labels));
    for (p, y) in pairs {
        if *y {
            assert!(*p > 0.9, "positive scored {p}");
        } else {
            assert!(*p < 0.1, "negative scored {p}");
        }
    }

    let first = out.log.first().unwrap().loss;
    let last = out.log.last().unwrap().loss;
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn same_seed_same_weights() {
    let ex = one_sample();
    let run = || {
        let model = ExtractionModel::new(ModelConfig::desk(), &EncoderSource::Seeded(21), 4).unwrap();
        let opts = TrainOptions {
            max_epochs: 5,
            patience: 5,
            seed: 4,
        };
        let out = train(model, std::slice::from_ref(&ex), &[], &opts).unwrap();
        out.model.forward(&ex.section).unwrap()
    };
    assert_eq!(run(), run());
}
