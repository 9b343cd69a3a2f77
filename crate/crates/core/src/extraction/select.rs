use serde::{Deserialize, Serialize};

use super::ExtractionScores;
use crate::corpus::Section;
use crate::text::word_count;

/// Content chosen for one panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDraft {
    pub section_id: String,
    /// Selected sentence indices in document order.
    pub sentence_indices: Vec<usize>,
    pub graph_ids: Vec<String>,
}

impl PanelDraft {
    pub fn text(&self, section: &Section) -> String {
        section.joined_text(&self.sentence_indices)
    }
}

/// Greedy selection by descending score under a word budget. Items that would
/// overflow the budget are skipped, later shorter ones may still fit. If
/// nothing fits, the single top-scoring item is returned. Ties rank the lower
/// index first. Output is in index order.
pub fn budgeted_selection(scores: &[f64], lengths: &[usize], budget: usize) -> Vec<usize> {
    assert_eq!(scores.len(), lengths.len());
    if scores.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut used = 0;
    let mut chosen = Vec::new();
    for &i in &order {
        if used + lengths[i] <= budget {
            used += lengths[i];
            chosen.push(i);
        }
    }
    if chosen.is_empty() {
        chosen.push(order[0]);
    }
    chosen.sort_unstable();
    chosen
}

/// Turns model scores into a panel draft: budgeted sentence selection plus
/// every graph scoring at least `graph_threshold`.
pub fn select_panel_content(
    scores: &ExtractionScores,
    section: &Section,
    word_budget: usize,
    graph_threshold: f64,
) -> PanelDraft {
    let sentence_indices = if scores.sentence_scores.is_empty() {
        Vec::new()
    } else {
        let lengths: Vec<usize> = section.sentences.iter().map(|s| word_count(&s.text)).collect();
        budgeted_selection(&scores.sentence_scores, &lengths, word_budget)
    };
    let graph_ids = section
        .graphs
        .iter()
        .zip(&scores.graph_scores)
        .filter(|(_, &p)| p >= graph_threshold)
        .map(|(g, _)| g.id.clone())
        .collect();
    PanelDraft {
        section_id: section.id.clone(),
        sentence_indices,
        graph_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GraphElement, GraphKind};

    fn section() -> Section {
        let graphs = vec![
            GraphElement {
                id: "f1".into(),
                kind: GraphKind::Figure,
                number: 1,
                caption: "Figure 1: a".into(),
                path: None,
                gold_label: None,
            },
            GraphElement {
                id: "t1".into(),
                kind: GraphKind::Table,
                number: 1,
                caption: "Table 1: b".into(),
                path: None,
                gold_label: None,
            },
        ];
        Section::new("s", "T", &["one two three", "four five six", "seven eight nine"], graphs)
    }

    #[test]
    fn top_two_under_budget() {
        let scores = ExtractionScores {
            sentence_scores: vec![0.9, 0.2, 0.8],
            graph_scores: vec![0.7, 0.3],
        };
        let d = select_panel_content(&scores, &section(), 6, 0.5);
        assert_eq!(d.sentence_indices, vec![0, 2]);
        assert_eq!(d.graph_ids, vec!["f1".to_string()]);
    }

    #[test]
    fn fallback_when_nothing_fits() {
        let scores = ExtractionScores {
            sentence_scores: vec![0.1, 0.6, 0.3],
            graph_scores: vec![0.2, 0.2],
        };
        let d = select_panel_content(&scores, &section(), 2, 0.5);
        assert_eq!(d.sentence_indices, vec![1]);
        assert!(d.graph_ids.is_empty());
    }

    #[test]
    fn skips_overflowing_but_takes_later_fit() {
        // lengths 5, 1, 3; budget 4: 0 skipped, 2 and 1 taken
        assert_eq!(budgeted_selection(&[0.9, 0.1, 0.5], &[5, 1, 3], 4), vec![1, 2]);
        assert_eq!(budgeted_selection(&[0.5, 0.5], &[1, 1], 1), vec![0]);
    }
}
