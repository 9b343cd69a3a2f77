//! Non-neural comparison systems: Lead-3 and TextRank for sentences, caption
//! similarity for graphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Section;
use crate::extraction::budgeted_selection;
use crate::text::{tokenize, word_count};

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum BaselineError {
    #[error("section {0:?} has no sentences")]
    EmptySection(String),
    #[error("invalid TextRank configuration: {0}")]
    Config(String),
}

pub fn lead3(section: &Section) -> Result<Vec<usize>, BaselineError> {
    if section.sentences.is_empty() {
        return Err(BaselineError::EmptySection(section.id.clone()));
    }
    Ok((0..section.sentences.len().min(3)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextRankConfig {
    pub damping: f64,
    pub convergence_eps: f64,
    pub max_iters: usize,
    pub length_limit: usize,
}

impl Default for TextRankConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            convergence_eps: 1e-6,
            max_iters: 100,
            length_limit: 45,
        }
    }
}

impl TextRankConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(BaselineError::Config(format!("damping {} outside (0, 1)", self.damping)));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(BaselineError::Config("convergence_eps must be positive".into()));
        }
        if self.max_iters == 0 || self.length_limit == 0 {
            return Err(BaselineError::Config("max_iters and length_limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextRankResult {
    pub ranks: Vec<f64>,
    pub iterations: usize,
    /// L1 change of the last iteration.
    pub residual: f64,
    pub selection: Vec<usize>,
}

/// `|shared unique tokens| / (ln|a| + ln|b|)`, zero when the denominator is
/// not positive.
pub fn overlap_similarity(a: &[String], b: &[String]) -> f64 {
    let sa: BTreeSet<&String> = a.iter().collect();
    let sb: BTreeSet<&String> = b.iter().collect();
    let shared = sa.intersection(&sb).count();
    let denom = (a.len() as f64).ln() + (b.len() as f64).ln();
    if shared == 0 || denom <= 0.0 {
        0.0
    } else {
        shared as f64 / denom
    }
}

/// Weighted PageRank over a symmetric similarity matrix. Nodes without
/// edges spread their mass uniformly, so the result always sums to 1.
pub fn pagerank(weights: &[Vec<f64>], damping: f64, eps: f64, max_iters: usize) -> (Vec<f64>, usize, f64) {
    let n = weights.len();
    if n == 0 {
        return (Vec::new(), 0, 0.0);
    }
    let out_sum: Vec<f64> = weights.iter().map(|row| row.iter().sum()).collect();
    let mut r = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let dangling: f64 = (0..n).filter(|&j| out_sum[j] == 0.0).map(|j| r[j]).sum();
        let mut next = vec![(1.0 - damping) / n as f64 + damping * dangling / n as f64; n];
        for (j, row) in weights.iter().enumerate() {
            if out_sum[j] == 0.0 {
                continue;
            }
            for (i, w) in row.iter().enumerate() {
                if *w != 0.0 {
                    next[i] += damping * r[j] * w / out_sum[j];
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = r.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        r = next;
        if residual < eps {
            break;
        }
    }
    (r, iters, residual)
}

pub fn textrank_extract(section: &Section, config: &TextRankConfig) -> Result<TextRankResult, BaselineError> {
    config.validate()?;
    if section.sentences.is_empty() {
        return Err(BaselineError::EmptySection(section.id.clone()));
    }
    let tokens: Vec<Vec<String>> = section.sentences.iter().map(|s| tokenize(&s.text)).collect();
    let n = tokens.len();
    let mut weights = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let w = overlap_similarity(&tokens[i], &tokens[j]);
            weights[i][j] = w;
            weights[j][i] = w;
        }
    }
    let (ranks, iterations, residual) = pagerank(&weights, config.damping, config.convergence_eps, config.max_iters);
    let lengths: Vec<usize> = section.sentences.iter().map(|s| word_count(&s.text)).collect();
    let selection = budgeted_selection(&ranks, &lengths, config.length_limit);
    Ok(TextRankResult {
        ranks,
        iterations,
        residual,
        selection,
    })
}

fn counts(text: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for t in tokenize(text) {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine similarity of bag-of-token count vectors.
pub fn cosine_similarity(a: &str, b: &str) -> f64 {
    let (ca, cb) = (counts(a), counts(b));
    let dot: f64 = ca.iter().filter_map(|(t, x)| cb.get(t).map(|y| x * y)).sum();
    let na = ca.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = cb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).min(1.0)
    }
}

/// Per graph, the maximum cosine similarity between its caption and any
/// sentence of the section.
pub fn caption_scores(section: &Section) -> Vec<f64> {
    section
        .graphs
        .iter()
        .map(|g| {
            section
                .sentences
                .iter()
                .map(|s| cosine_similarity(&g.caption, &s.text))
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn similarity_graph_select(section: &Section, threshold: f64) -> Vec<String> {
    section
        .graphs
        .iter()
        .zip(caption_scores(section))
        .filter(|(_, s)| *s >= threshold)
        .map(|(g, _)| g.id.clone())
        .collect()
}

/// Picks the threshold on a 0.01 grid over [0, 1] maximizing accuracy of
/// `score >= threshold` against the labels. Ties keep the smallest value.
pub fn fit_similarity_threshold(scored: &[(f64, bool)]) -> f64 {
    let mut best = (0.0, -1.0);
    for step in 0..=100 {
        let t = step as f64 / 100.0;
        let correct = scored.iter().filter(|(s, y)| (*s >= t) == *y).count() as f64;
        if correct > best.1 {
            best = (t, correct);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GraphElement, GraphKind};

    fn section(sentences: &[&str]) -> Section {
        Section::new("s", "T", sentences, vec![])
    }

    #[test]
    fn lead3_cases() {
        let five = section(&["a", "b", "c", "d", "e"]);
        assert_eq!(lead3(&five).unwrap(), vec![0, 1, 2]);
        assert_eq!(lead3(&section(&["a", "b"])).unwrap(), vec![0, 1]);
        assert!(lead3(&section(&[])).is_err());
    }

    #[test]
    fn duplicated_sentences_outrank_isolated_one() {
        let s = section(&[
            "alpha beta gamma delta",
            "alpha beta gamma delta",
            "zeta eta theta iota",
        ]);
        let r = textrank_extract(&s, &TextRankConfig::default()).unwrap();
        assert!(r.ranks[0] > r.ranks[2] && r.ranks[1] > r.ranks[2]);
        assert_eq!(r.ranks[0], r.ranks[1]);
        // s2 is dangling: closed form with r0 = r1 = (1 - r2) / 2
        let d = 0.85;
        let r2 = ((1.0 - d) / 3.0) / (1.0 - d / 3.0);
        assert!((r.ranks[2] - r2).abs() < 1e-6);
        assert!((r.ranks.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn disjoint_sentences_are_uniform() {
        let s = section(&["one two three", "four five six", "seven eight nine", "ten eleven twelve"]);
        let cfg = TextRankConfig {
            length_limit: 7,
            ..Default::default()
        };
        let r = textrank_extract(&s, &cfg).unwrap();
        assert!(r.ranks.iter().all(|x| (x - 0.25).abs() < 1e-12));
        assert_eq!(r.selection, vec![0, 1]);
    }

    #[test]
    fn budget_fallback_and_convergence() {
        let s = section(&[
            "the model learns fast",
            "the model learns slow today",
            "fast learning of the model",
        ]);
        let cfg = TextRankConfig {
            length_limit: 1,
            ..Default::default()
        };
        let r = textrank_extract(&s, &cfg).unwrap();
        assert_eq!(r.selection.len(), 1);
        assert!(r.residual < 1e-6 && r.iterations <= 100);
        assert!(r.ranks.iter().all(|x| *x >= 0.0));
        assert!(TextRankConfig {
            damping: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn with_caption(caption: &str) -> Section {
        Section::new(
            "s",
            "T",
            &["Figure 1 shows the loss curve.", "Training was stable."],
            vec![GraphElement {
                id: "f1".into(),
                kind: GraphKind::Figure,
                number: 1,
                caption: caption.into(),
                path: None,
                gold_label: None,
            }],
        )
    }

    #[test]
    fn similarity_extremes() {
        let same = with_caption("Training was stable.");
        assert!((caption_scores(&same)[0] - 1.0).abs() < 1e-12);
        assert_eq!(similarity_graph_select(&same, 1.0), vec!["f1".to_string()]);
        let unrelated = with_caption("Qux zap.");
        assert_eq!(caption_scores(&unrelated)[0], 0.0);
        assert!(similarity_graph_select(&unrelated, 0.01).is_empty());
        assert!(similarity_graph_select(&section(&["x"]), 0.5).is_empty());
    }

    #[test]
    fn threshold_grid_search() {
        let scored = [(0.1, false), (0.35, false), (0.4, true), (0.8, true), (0.3, false)];
        // only t in (0.35, 0.4] classifies all five; 0.36 is the first grid point there
        assert_eq!(fit_similarity_threshold(&scored), 0.36);
        assert_eq!(fit_similarity_threshold(&[]), 0.0);
    }
}
