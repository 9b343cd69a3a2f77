//! Deterministic synthetic corpora for desk-scale training and tests.
//!
//! Every paper has 4–8 sections. Each section's first sentence carries an
//! importance-level word from [`IMPORTANCE_LEVELS`]; a section is important
//! (aligned to a panel) iff its level is strictly above the mean level of its
//! paper, so deciding importance needs both the section body and its
//! siblings. Titles are drawn independently of importance.
//!
//! Every section has a few sentences built mostly from a "key" vocabulary,
//! the rest from a disjoint "filler" vocabulary. In important sections the
//! key sentences are the planted positives and the panel text is their
//! concatenation in document order; elsewhere they are decoys, so vocabulary
//! alone does not reveal importance. A graph
//! is positive iff a planted positive sentence references it.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AlignedSample, CorpusEntry, GraphElement, GraphKind, Paper, Section, Sentence};
use super::detect_references;

/// Ordered importance-level words, weakest first.
pub const IMPORTANCE_LEVELS: [&str; 6] = ["scant", "minor", "modest", "solid", "strong", "prime"];

const KEY_SYLLABLES: [&str; 8] = ["ka", "ro", "mi", "tu", "ve", "sa", "lo", "ni"];
const FILLER_SYLLABLES: [&str; 8] = ["bez", "dor", "gim", "hup", "jal", "kov", "lum", "pir"];
const COMMON: [&str; 10] = ["we", "the", "of", "and", "in", "this", "model", "our", "to", "with"];
const TITLES: [&str; 12] = [
    "Introduction",
    "Background",
    "Method",
    "Model",
    "Experiments",
    "Results",
    "Analysis",
    "Discussion",
    "Related Work",
    "Conclusion",
    "Setup",
    "Evaluation",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub min_sections: usize,
    pub max_sections: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub max_graphs: usize,
    pub max_positives: usize,
    /// Probability of perturbing each panel token (drop or replace with a
    /// filler word). Zero keeps panels an exact concatenation of positives.
    pub panel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            min_sections: 4,
            max_sections: 8,
            min_sentences: 5,
            max_sentences: 25,
            max_graphs: 4,
            max_positives: 4,
            panel_noise: 0.0,
        }
    }
}

fn vocab(syllables: &[&str; 8], count: usize, stride: usize) -> Vec<String> {
    (0..count)
        .map(|i| {
            let j = i * stride + 1;
            format!("{}{}{}", syllables[j % 8], syllables[(j / 8) % 8], syllables[(j / 64) % 8])
        })
        .collect()
}

struct Vocab {
    key: Vec<String>,
    filler: Vec<String>,
}

impl Vocab {
    fn new() -> Self {
        Self {
            key: vocab(&KEY_SYLLABLES, 80, 5),
            filler: vocab(&FILLER_SYLLABLES, 80, 5),
        }
    }

    fn words(&self, rng: &mut ChaCha8Rng, positive: bool, len: usize) -> Vec<String> {
        let pool = if positive { &self.key } else { &self.filler };
        (0..len)
            .map(|_| {
                if rng.gen_bool(0.25) {
                    COMMON[rng.gen_range(0..COMMON.len())].to_string()
                } else {
                    pool[rng.gen_range(0..pool.len())].clone()
                }
            })
            .collect()
    }
}

fn capitalize(words: &[String]) -> String {
    let joined = words.join(" ");
    let mut chars = joined.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => joined,
    }
}

pub fn synthesize_corpus(seed: u64, n_papers: usize) -> Vec<CorpusEntry> {
    synthesize_with(seed, n_papers, &SynthConfig::default())
}

pub fn synthesize_with(seed: u64, n_papers: usize, cfg: &SynthConfig) -> Vec<CorpusEntry> {
    assert!(n_papers >= 1, "need at least one paper");
    assert!(cfg.min_sentences >= 2 && cfg.min_sentences <= cfg.max_sentences);
    assert!(cfg.min_sections >= 2 && cfg.min_sections <= cfg.max_sections);
    let vocab = Vocab::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_papers)
        .map(|i| synth_paper(&mut rng, &vocab, cfg, format!("synth-{seed}-{i:03}")))
        .collect()
}

fn draw_levels(rng: &mut ChaCha8Rng, count: usize) -> Vec<usize> {
    loop {
        let offset = rng.gen_range(0..=2);
        let levels: Vec<usize> = (0..count).map(|_| offset + rng.gen_range(0..=3)).collect();
        if levels.iter().any(|&l| l != levels[0]) {
            return levels;
        }
    }
}

fn synth_paper(rng: &mut ChaCha8Rng, vocab: &Vocab, cfg: &SynthConfig, id: String) -> CorpusEntry {
    let n_sections = rng.gen_range(cfg.min_sections..=cfg.max_sections);
    let levels = draw_levels(rng, n_sections);
    let mean = levels.iter().sum::<usize>() as f64 / n_sections as f64;

    let mut figures = 0u32;
    let mut tables = 0u32;
    let mut sections = Vec::with_capacity(n_sections);
    let mut samples = Vec::new();

    for (si, &level) in levels.iter().enumerate() {
        let important = level as f64 > mean;
        let n = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
        // every section gets key-vocabulary sentences; they are positives
        // only when the section is important, decoys otherwise
        let max_pos = cfg.max_positives.min(n / 2).max(1);
        let n_key = rng.gen_range(1..=max_pos);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let key: BTreeSet<usize> = order[..n_key].iter().copied().collect();
        let positives: BTreeSet<usize> = if important { key.clone() } else { BTreeSet::new() };
        let negatives: Vec<usize> = (0..n).filter(|i| !key.contains(i)).collect();

        // graphs and which sentences mention them
        let n_graphs = rng.gen_range(0..=cfg.max_graphs);
        let mut graphs = Vec::with_capacity(n_graphs);
        let mut mentions: Vec<Vec<(GraphKind, u32)>> = vec![Vec::new(); n];
        let mut graph_positive = Vec::with_capacity(n_graphs);
        for _ in 0..n_graphs {
            let kind = if rng.gen_bool(0.6) { GraphKind::Figure } else { GraphKind::Table };
            let number = match kind {
                GraphKind::Figure => {
                    figures += 1;
                    figures
                }
                GraphKind::Table => {
                    tables += 1;
                    tables
                }
            };
            let positive = important && rng.gen_bool(0.55);
            if positive {
                let p = *positives.iter().nth(rng.gen_range(0..positives.len())).unwrap();
                mentions[p].push((kind, number));
                if rng.gen_bool(0.3) {
                    let q = negatives[rng.gen_range(0..negatives.len())];
                    mentions[q].push((kind, number));
                }
            } else if rng.gen_bool(0.6) {
                for _ in 0..rng.gen_range(1..=2) {
                    let q = negatives[rng.gen_range(0..negatives.len())];
                    if !mentions[q].contains(&(kind, number)) {
                        mentions[q].push((kind, number));
                    }
                }
            }
            let len = rng.gen_range(5..=8);
            let caption = format!("{} {number}: {}.", kind.word(), capitalize(&vocab.words(rng, positive, len)));
            let prefix = if kind == GraphKind::Figure { "fig" } else { "tab" };
            graphs.push(GraphElement {
                id: format!("{prefix}{number}"),
                kind,
                number,
                caption,
                path: None,
                gold_label: important.then_some(positive),
            });
            graph_positive.push(positive);
        }

        let mut texts = Vec::with_capacity(n);
        for (i, refs) in mentions.iter().enumerate() {
            let len = rng.gen_range(7..=11);
            let mut words = vocab.words(rng, key.contains(&i), len);
            if i == 0 {
                words.push(IMPORTANCE_LEVELS[level].to_string());
            }
            if !refs.is_empty() {
                words.push(if rng.gen_bool(0.5) { "as shown in" } else { "see" }.to_string());
                let listed: Vec<String> = refs.iter().map(|(k, num)| format!("{} {num}", k.word())).collect();
                words.push(listed.join(" and "));
            }
            texts.push(capitalize(&words) + ".");
        }

        let sentences: Vec<Sentence> = texts
            .iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                index,
                text: text.clone(),
                gold_label: important.then_some(positives.contains(&index)),
                refs: detect_references(text, &graphs),
            })
            .collect();

        let section = Section {
            id: format!("s{si}"),
            title: TITLES[rng.gen_range(0..TITLES.len())].to_string(),
            sentences,
            graphs,
            gold_important: Some(important),
        };

        if important {
            let panel_tokens: Vec<String> = positives
                .iter()
                .flat_map(|&i| texts[i].split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .collect();
            let panel_text = if cfg.panel_noise > 0.0 {
                let mut out = Vec::with_capacity(panel_tokens.len());
                for t in panel_tokens {
                    if rng.gen_bool(cfg.panel_noise) {
                        if rng.gen_bool(0.5) {
                            out.push(vocab.filler[rng.gen_range(0..vocab.filler.len())].clone());
                        }
                    } else {
                        out.push(t);
                    }
                }
                if out.is_empty() {
                    out.push(vocab.key[0].clone());
                }
                out.join(" ")
            } else {
                panel_tokens.join(" ")
            };
            let panel_graph_ids = section
                .graphs
                .iter()
                .zip(&graph_positive)
                .filter(|(_, &p)| p)
                .map(|(g, _)| g.id.clone())
                .collect();
            samples.push(AlignedSample {
                paper_id: id.clone(),
                section: section.clone(),
                panel_text,
                panel_graph_ids,
                derived_sentence_labels: None,
            });
        }
        sections.push(section);
    }

    CorpusEntry {
        paper: Paper {
            title: format!("A Study {}", id),
            id,
            authors: vec!["A. Author".to_string(), "B. Author".to_string()],
            sections,
        },
        samples,
    }
}
