//! ROUGE-N / ROUGE-L scoring and the greedy ROUGE-2 oracle used for both
//! sentence labeling and the extractive Oracle baseline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Section;
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        if candidate == 0 || reference == 0 {
            return Self::default();
        }
        let precision = overlap as f64 / candidate as f64;
        let recall = overlap as f64 / reference as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RougeError {
    #[error("n-gram order must be at least 1, got {0}")]
    BadOrder(usize),
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Result<RougeScore, RougeError> {
    if n < 1 {
        return Err(RougeError::BadOrder(n));
    }
    Ok(rouge_n_tokens(&tokenize(candidate), &tokenize(reference), n))
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N over pre-tokenized text with multiset-clipped overlap.
pub fn rouge_n_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n >= 1);
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refc.values().sum();
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| refc.get(g).map_or(0, |&r| c.min(r)))
        .sum();
    RougeScore::from_counts(overlap, cand_total, ref_total)
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge_l_tokens<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    let lcs = lcs_len(candidate, reference);
    RougeScore::from_counts(lcs, candidate.len(), reference.len())
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1 of `candidate` against `reference`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

pub fn rouge_triple(candidate: &str, reference: &str) -> RougeTriple {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    RougeTriple {
        rouge1: rouge_n_tokens(&c, &r, 1).f1,
        rouge2: rouge_n_tokens(&c, &r, 2).f1,
        rouge_l: rouge_l_tokens(&c, &r).f1,
    }
}

/// Steps taken by the greedy ROUGE-2 selector: sentence indices in the order
/// they were added and the F1 after each addition.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyTrace {
    pub added: Vec<usize>,
    pub f1_after: Vec<f64>,
}

impl GreedyTrace {
    /// Selected indices in document order.
    pub fn selection(&self) -> Vec<usize> {
        let mut s = self.added.clone();
        s.sort_unstable();
        s
    }

    pub fn final_f1(&self) -> f64 {
        self.f1_after.last().copied().unwrap_or(0.0)
    }
}

/// ROUGE-2 F1 of the selected sentences, concatenated in document order.
pub fn selection_rouge2(sentences: &[Vec<String>], selected: &[usize], reference: &[String]) -> f64 {
    let mut sorted = selected.to_vec();
    sorted.sort_unstable();
    let joined: Vec<&str> = sorted
        .iter()
        .flat_map(|&i| sentences[i].iter().map(String::as_str))
        .collect();
    let reference: Vec<&str> = reference.iter().map(String::as_str).collect();
    rouge_n_tokens(&joined, &reference, 2).f1
}

/// Greedily adds the sentence with the largest ROUGE-2 F1 gain until no
/// candidate strictly improves the score. Ties go to the lowest index. With a
/// word budget, candidates that would push the selection past it are skipped.
pub fn greedy_trace(section: &Section, panel_text: &str, budget: Option<usize>) -> GreedyTrace {
    let sentences: Vec<Vec<String>> = section.sentences.iter().map(|s| tokenize(&s.text)).collect();
    let reference = tokenize(panel_text);
    let mut chosen: Vec<usize> = Vec::new();
    let mut trace = GreedyTrace {
        added: Vec::new(),
        f1_after: Vec::new(),
    };
    let mut current = 0.0;
    let mut used_words = 0;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (i, toks) in sentences.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if let Some(b) = budget {
                if used_words + toks.len() > b {
                    continue;
                }
            }
            chosen.push(i);
            let f1 = selection_rouge2(&sentences, &chosen, &reference);
            chosen.pop();
            if best.is_none_or(|(_, bf)| f1 > bf) {
                best = Some((i, f1));
            }
        }
        match best {
            Some((i, f1)) if f1 > current => {
                chosen.push(i);
                used_words += sentences[i].len();
                current = f1;
                trace.added.push(i);
                trace.f1_after.push(f1);
            }
            _ => break,
        }
    }
    trace
}

/// Binary extraction labels from greedy ROUGE-2 optimization against the
/// gold panel text.
pub fn greedy_label_sentences(section: &Section, panel_text: &str) -> Vec<bool> {
    let trace = greedy_trace(section, panel_text, None);
    let mut labels = vec![false; section.sentences.len()];
    for i in trace.added {
        labels[i] = true;
    }
    labels
}

/// Extractive Oracle: greedy ROUGE-2 selection under a word budget. Returns
/// indices in document order.
pub fn oracle_extract(section: &Section, panel_text: &str, budget: usize) -> Vec<usize> {
    greedy_trace(section, panel_text, Some(budget.max(1))).selection()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn section(sentences: &[&str]) -> Section {
        Section::new("s", "T", sentences, Vec::new())
    }

    fn approx(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} != {b}");
    }

    #[test]
    fn identity_bigrams() {
        let s = rouge_n("the cat sat", "the cat sat", 2).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_bigrams() {
        let s = rouge_n("a b c d", "a b x d", 2).unwrap();
        approx(s.precision, 1.0 / 3.0);
        approx(s.recall, 1.0 / 3.0);
        approx(s.f1, 1.0 / 3.0);
    }

    #[test]
    fn empty_and_bad_order() {
        assert_eq!(rouge_n("", "a b", 1).unwrap(), RougeScore::default());
        assert_eq!(rouge_n("a", "a b", 2).unwrap(), RougeScore::default());
        assert_eq!(rouge_n("a b", "a b", 0), Err(RougeError::BadOrder(0)));
    }

    #[test]
    fn clipping() {
        // candidate "the" x3, reference "the" x1 -> overlap 1
        let s = rouge_n("the the the", "the cat", 1).unwrap();
        approx(s.precision, 1.0 / 3.0);
        approx(s.recall, 0.5);
    }

    #[test]
    fn lcs_fixtures() {
        let s = rouge_l("a b c d", "a c b d");
        approx(s.precision, 0.75);
        approx(s.recall, 0.75);
        approx(s.f1, 0.75);
        assert_eq!(rouge_l("x y z", "x y z").f1, 1.0);
        assert_eq!(rouge_l("p q", "r s").f1, 0.0);
    }

    #[test]
    fn greedy_picks_zero_and_one() {
        let s = section(&["alpha beta gamma", "delta epsilon zeta", "alpha beta delta"]);
        let labels = greedy_label_sentences(&s, "alpha beta gamma delta epsilon");
        assert_eq!(labels, vec![true, true, false]);
        assert_eq!(oracle_extract(&s, "alpha beta gamma delta epsilon", 100), vec![0, 1]);
    }

    #[test]
    fn greedy_single_exact_match() {
        let s = section(&["one two three", "four five six", "seven eight nine"]);
        assert_eq!(greedy_label_sentences(&s, "one two three"), vec![true, false, false]);
    }

    #[test]
    fn greedy_no_shared_bigram() {
        let s = section(&["one two three", "four five six"]);
        assert_eq!(greedy_label_sentences(&s, "seven eight nine ten"), vec![false, false]);
    }

    #[test]
    fn oracle_budget_binds() {
        let s = section(&["alpha beta gamma", "delta epsilon zeta", "alpha beta delta"]);
        assert!(oracle_extract(&s, "alpha beta gamma delta epsilon", 2).is_empty());
        assert_eq!(oracle_extract(&s, "alpha beta gamma delta epsilon", 3), vec![0]);
    }

    proptest! {
        #[test]
        fn f1_symmetric_and_bounded(a in "[a-d ]{0,24}", b in "[a-d ]{0,24}", n in 1usize..4) {
            let ab = rouge_n(&a, &b, n).unwrap();
            let ba = rouge_n(&b, &a, n).unwrap();
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
            prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
            for v in [ab.precision, ab.recall, ab.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let l = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&l.f1));
            prop_assert!((l.f1 - rouge_l(&b, &a).f1).abs() < 1e-12);
        }

        #[test]
        fn greedy_trace_strictly_increases(
            sents in proptest::collection::vec("[a-e]( [a-e]){1,6}", 1..7),
            panel in "[a-e]( [a-e]){2,10}",
        ) {
            let refs: Vec<&str> = sents.iter().map(String::as_str).collect();
            let s = section(&refs);
            let t = greedy_trace(&s, &panel, None);
            let mut prev = 0.0;
            for &f in &t.f1_after {
                prop_assert!(f > prev);
                prev = f;
            }
        }
    }
}
