use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use super::{GraphElement, GraphKind};

/// A `(kind, number)` mention of a figure or table in running text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mention {
    pub kind: GraphKind,
    pub number: u32,
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(figures?|figs?|tables?|tabs?)\.?\s*(\d+(?:\s*(?:,\s*and|,|and|&|or)\s*\d+)*)",
        )
        .unwrap()
    })
}

fn caption_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(figure|fig\.|table|tab\.)\s*(\d+)\b").unwrap())
}

fn kind_of(word: &str) -> GraphKind {
    if word.to_ascii_lowercase().starts_with("fig") {
        GraphKind::Figure
    } else {
        GraphKind::Table
    }
}

/// Every figure/table mention in `text`, in order of appearance. A kind word
/// followed by a list ("Figures 2 and 3", "Tab. 1, 4") yields one mention per
/// number.
pub fn find_mentions(text: &str) -> Vec<Mention> {
    let mut out = Vec::new();
    for caps in mention_re().captures_iter(text) {
        let kind = kind_of(&caps[1]);
        for num in caps[2].split(|c: char| !c.is_ascii_digit()).filter(|t| !t.is_empty()) {
            if let Ok(number) = num.parse() {
                out.push(Mention { kind, number });
            }
        }
    }
    out
}

/// Ids of the graphs in `graphs` that `sentence_text` mentions.
pub fn detect_references(sentence_text: &str, graphs: &[GraphElement]) -> BTreeSet<String> {
    find_mentions(sentence_text)
        .into_iter()
        .filter_map(|m| {
            graphs
                .iter()
                .find(|g| g.kind == m.kind && g.number == m.number)
                .map(|g| g.id.clone())
        })
        .collect()
}

/// The `(kind, number)` a caption starts with, if any.
pub fn caption_prefix(caption: &str) -> Option<(GraphKind, u32)> {
    let caps = caption_re().captures(caption)?;
    Some((kind_of(&caps[1]), caps[2].parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(kind: GraphKind, number: u32) -> GraphElement {
        let id = format!("{}{number}", if kind == GraphKind::Figure { "fig" } else { "tab" });
        GraphElement {
            id,
            kind,
            number,
            caption: format!("{} {number}: caption", kind.word()),
            path: None,
            gold_label: None,
        }
    }

    fn ids(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_figure() {
        let graphs = [graph(GraphKind::Figure, 2), graph(GraphKind::Table, 1)];
        assert_eq!(
            detect_references("As shown in Figure 2, accuracy improves.", &graphs),
            ids(&["fig2"])
        );
    }

    #[test]
    fn two_tables() {
        let graphs = [graph(GraphKind::Table, 1), graph(GraphKind::Table, 2)];
        assert_eq!(
            detect_references("Table 1 and Table 2 report results.", &graphs),
            ids(&["tab1", "tab2"])
        );
    }

    #[test]
    fn bare_word_is_not_a_reference() {
        let graphs = [graph(GraphKind::Figure, 1)];
        assert!(detect_references("We figure out the cause.", &graphs).is_empty());
        assert!(detect_references("A table of contents.", &graphs).is_empty());
    }

    #[test]
    fn abbreviations_conjunctions_and_case() {
        let graphs = [
            graph(GraphKind::Figure, 2),
            graph(GraphKind::Figure, 3),
            graph(GraphKind::Figure, 4),
            graph(GraphKind::Table, 5),
        ];
        assert_eq!(detect_references("see figures 2 and 3", &graphs), ids(&["fig2", "fig3"]));
        assert_eq!(detect_references("(Figs. 2, 3, and 4)", &graphs), ids(&["fig2", "fig3", "fig4"]));
        assert_eq!(detect_references("FIG.4 and Tab. 5", &graphs), ids(&["fig4", "tab5"]));
        assert_eq!(detect_references("Tables 5 & 2", &graphs), ids(&["tab5"]));
    }

    #[test]
    fn mentions_of_missing_graphs_are_reported() {
        let m = find_mentions("Figure 9 shows it.");
        assert_eq!(m, vec![Mention { kind: GraphKind::Figure, number: 9 }]);
    }

    #[test]
    fn caption_prefixes() {
        assert_eq!(caption_prefix("Figure 3: x"), Some((GraphKind::Figure, 3)));
        assert_eq!(caption_prefix("Table 1. x"), Some((GraphKind::Table, 1)));
        assert_eq!(caption_prefix("Fig. 12 x"), Some((GraphKind::Figure, 12)));
        assert_eq!(caption_prefix("Overview"), None);
        assert_eq!(caption_prefix("The Figure 3"), None);
    }

    proptest! {
        #[test]
        fn graph_order_does_not_matter(nums in proptest::collection::btree_set(1u32..20, 0..6), rot in 0usize..6) {
            let mut graphs: Vec<_> = nums.iter().map(|&n| graph(GraphKind::Figure, n)).collect();
            let text = "Figures 1, 3 and 5 and Table 2 and Fig. 7 are shown.";
            let before = detect_references(text, &graphs);
            if !graphs.is_empty() {
                let r = rot % graphs.len();
                graphs.rotate_left(r);
                graphs.reverse();
            }
            prop_assert_eq!(before, detect_references(text, &graphs));
        }
    }
}
