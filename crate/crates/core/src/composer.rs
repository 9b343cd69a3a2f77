//! Poster composition: pick a layout template for the requested orientation
//! and panel set, then render a tikzposter LaTeX document.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Paper;
use crate::extraction::PanelDraft;
use crate::text::word_count;

const BUILTIN_TEMPLATES: &str = include_str!("../data/templates.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Portrait,
    Landscape,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Portrait => "portrait",
            Orientation::Landscape => "landscape",
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "portrait" => Ok(Self::Portrait),
            "landscape" => Ok(Self::Landscape),
            other => Err(format!("unknown orientation {other:?} (expected portrait or landscape)")),
        }
    }
}

/// One panel position. Slots are listed column by column, top to bottom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub column: usize,
    pub row: usize,
    /// Fraction of the page width taken by the slot's column.
    pub width: f64,
    /// Fraction of the column height.
    pub height: f64,
    pub max_words: usize,
    pub max_graphs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub orientation: Orientation,
    pub slots: Vec<Slot>,
}

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("no {0} template in the inventory")]
    NoTemplate(&'static str),
    #[error("template {id:?}: {message}")]
    BadTemplate { id: String, message: String },
    #[error("cannot read templates from {path}: {message}")]
    TemplateFile { path: String, message: String },
    #[error("poster has no panels")]
    NoPanels,
    #[error("template {id:?} has {slots} slots for {panels} panels")]
    TooFewSlots { id: String, slots: usize, panels: usize },
    #[error("panel refers to unknown section {0:?}")]
    UnknownSection(String),
}

impl Template {
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// Checks that slots are listed column-major and tile the page: column
    /// widths sum to 1, each column has one width, and its rows (numbered
    /// from 0 without gaps) have heights summing to 1.
    pub fn validate(&self) -> Result<(), ComposeError> {
        let bad = |message: String| {
            Err(ComposeError::BadTemplate {
                id: self.id.clone(),
                message,
            })
        };
        if self.slots.is_empty() {
            return bad("needs at least one slot".into());
        }
        let mut columns: BTreeMap<usize, (f64, Vec<&Slot>)> = BTreeMap::new();
        let mut last = (0usize, None::<usize>);
        for s in &self.slots {
            if !(s.width > 0.0 && s.height > 0.0) {
                return bad("slot sizes must be positive".into());
            }
            if s.column < last.0 || (s.column == last.0 && last.1.is_some_and(|r| s.row <= r)) {
                return bad("slots must be listed column by column, top to bottom".into());
            }
            last = (s.column, Some(s.row));
            let entry = columns.entry(s.column).or_insert((s.width, Vec::new()));
            if (entry.0 - s.width).abs() > 1e-9 {
                return bad(format!("column {} has slots of different widths", s.column));
            }
            entry.1.push(s);
        }
        if columns.keys().copied().ne(0..columns.len()) {
            return bad("column indices must be contiguous from 0".into());
        }
        let total_width: f64 = columns.values().map(|(w, _)| w).sum();
        if (total_width - 1.0).abs() > 1e-6 {
            return bad(format!("column widths sum to {total_width}, not 1"));
        }
        for (c, (_, slots)) in &columns {
            if slots.iter().map(|s| s.row).ne(0..slots.len()) {
                return bad(format!("rows of column {c} must be contiguous from 0"));
            }
            let h: f64 = slots.iter().map(|s| s.height).sum();
            if (h - 1.0).abs() > 1e-6 {
                return bad(format!("row heights of column {c} sum to {h}, not 1"));
            }
        }
        Ok(())
    }
}

fn parse_templates(text: &str, origin: &str) -> Result<Vec<Template>, ComposeError> {
    let templates: Vec<Template> = serde_json::from_str(text).map_err(|e| ComposeError::TemplateFile {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    for t in &templates {
        t.validate()?;
    }
    Ok(templates)
}

/// The six shipped templates: portrait with 4, 6, 8 slots and landscape
/// with 4, 6, 9 slots.
pub fn builtin_templates() -> Vec<Template> {
    parse_templates(BUILTIN_TEMPLATES, "built-in").expect("built-in templates are valid")
}

/// Built-in templates extended by a user file. A user template replaces a
/// built-in one with the same id.
pub fn load_templates(path: Option<&Path>) -> Result<Vec<Template>, ComposeError> {
    let mut all = builtin_templates();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| ComposeError::TemplateFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for t in parse_templates(&text, &path.display().to_string())? {
            match all.iter_mut().find(|b| b.id == t.id) {
                Some(existing) => *existing = t,
                None => all.push(t),
            }
        }
    }
    Ok(all)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelGraph {
    pub id: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub title: String,
    pub sentences: Vec<String>,
    pub graphs: Vec<PanelGraph>,
}

impl Panel {
    pub fn words(&self) -> usize {
        self.sentences.iter().map(|s| word_count(s)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosterSpec {
    pub title: String,
    pub authors: Vec<String>,
    pub orientation: Orientation,
    pub panels: Vec<Panel>,
}

impl PosterSpec {
    /// Assembles panels from extraction drafts, ordered as the paper's
    /// sections.
    pub fn from_drafts(paper: &Paper, drafts: &[PanelDraft], orientation: Orientation) -> Result<Self, ComposeError> {
        if drafts.is_empty() {
            return Err(ComposeError::NoPanels);
        }
        let mut indexed = Vec::with_capacity(drafts.len());
        for d in drafts {
            let pos = paper
                .sections
                .iter()
                .position(|s| s.id == d.section_id)
                .ok_or_else(|| ComposeError::UnknownSection(d.section_id.clone()))?;
            indexed.push((pos, d));
        }
        indexed.sort_by_key(|(pos, _)| *pos);
        let panels = indexed
            .into_iter()
            .map(|(pos, d)| {
                let section = &paper.sections[pos];
                let wanted: BTreeSet<&str> = d.graph_ids.iter().map(String::as_str).collect();
                Panel {
                    title: section.title.clone(),
                    sentences: d
                        .sentence_indices
                        .iter()
                        .map(|&i| section.sentences[i].text.clone())
                        .collect(),
                    graphs: section
                        .graphs
                        .iter()
                        .filter(|g| wanted.contains(g.id.as_str()))
                        .map(|g| PanelGraph {
                            id: g.id.clone(),
                            caption: g.caption.clone(),
                            path: g.path.clone(),
                        })
                        .collect(),
                }
            })
            .collect();
        Ok(Self {
            title: paper.title.clone(),
            authors: paper.authors.clone(),
            orientation,
            panels,
        })
    }
}

/// Sum over slots of `|max_words - words|`, with unfilled slots holding zero
/// words. Lower is a tighter fit.
pub fn capacity_mismatch(spec: &PosterSpec, template: &Template) -> usize {
    template
        .slots
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let words = spec.panels.get(i).map_or(0, Panel::words);
            slot.max_words.abs_diff(words)
        })
        .sum()
}

/// Among templates of the spec's orientation, prefers enough slots, then
/// the slot count closest to the panel count, then the tightest capacity fit,
/// then the smallest id.
pub fn select_template<'t>(spec: &PosterSpec, inventory: &'t [Template]) -> Result<&'t Template, ComposeError> {
    let panels = spec.panels.len();
    inventory
        .iter()
        .filter(|t| t.orientation == spec.orientation)
        .min_by(|a, b| {
            let key = |t: &Template| {
                (
                    t.slot_count() < panels,
                    t.slot_count().abs_diff(panels),
                    capacity_mismatch(spec, t),
                )
            };
            key(a).cmp(&key(b)).then_with(|| a.id.cmp(&b.id))
        })
        .ok_or(ComposeError::NoTemplate(spec.orientation.as_str()))
}

/// Escapes LaTeX special characters.
pub fn escape_latex(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\textbackslash{}"),
            '{' => out.push_str("\\{"),
            '}' => out.push_str("\\}"),
            '$' | '&' | '%' | '#' | '_' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str("\\textasciitilde{}"),
            '^' => out.push_str("\\textasciicircum{}"),
            '<' => out.push_str("\\textless{}"),
            '>' => out.push_str("\\textgreater{}"),
            _ => out.push(c),
        }
    }
    out
}

/// Warnings for panels exceeding their slot's word or graph capacity.
pub fn capacity_warnings(spec: &PosterSpec, template: &Template) -> Vec<String> {
    let mut warnings = Vec::new();
    for (panel, slot) in spec.panels.iter().zip(&template.slots) {
        if panel.words() > slot.max_words {
            warnings.push(format!(
                "panel {:?} has {} words, slot holds about {}",
                panel.title,
                panel.words(),
                slot.max_words
            ));
        }
        if panel.graphs.len() > slot.max_graphs {
            warnings.push(format!(
                "panel {:?} has {} graphs, slot holds about {}",
                panel.title,
                panel.graphs.len(),
                slot.max_graphs
            ));
        }
    }
    warnings
}

fn render_panel(out: &mut String, panel: &Panel) {
    let _ = writeln!(out, "\\block{{{}}}{{", escape_latex(&panel.title));
    if !panel.sentences.is_empty() {
        out.push_str("\\begin{itemize}\n");
        for s in &panel.sentences {
            let _ = writeln!(out, "\\item {}", escape_latex(s));
        }
        out.push_str("\\end{itemize}\n");
    }
    for g in &panel.graphs {
        let _ = writeln!(out, "\\begin{{tikzfigure}}[{{{}}}]", escape_latex(&g.caption));
        match &g.path {
            Some(path) => {
                let _ = writeln!(out, "\\includegraphics[width=0.9\\linewidth]{{{path}}}");
            }
            None => {
                let _ = writeln!(
                    out,
                    "\\fbox{{\\parbox[c][8cm][c]{{0.85\\linewidth}}{{\\centering image not available: {}}}}}",
                    escape_latex(&g.id)
                );
            }
        }
        out.push_str("\\end{tikzfigure}\n");
    }
    out.push_str("}\n");
}

/// Renders a complete tikzposter document. Panel `i` goes to slot `i`;
/// columns of the template become tikzposter columns.
pub fn render_poster(spec: &PosterSpec, template: &Template) -> Result<String, ComposeError> {
    if spec.panels.is_empty() {
        return Err(ComposeError::NoPanels);
    }
    if template.slot_count() < spec.panels.len() {
        return Err(ComposeError::TooFewSlots {
            id: template.id.clone(),
            slots: template.slot_count(),
            panels: spec.panels.len(),
        });
    }
    for w in capacity_warnings(spec, template) {
        log::warn!("{w}");
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\\documentclass[25pt, a0paper, {}]{{tikzposter}}",
        spec.orientation.as_str()
    );
    out.push_str("\\usepackage[utf8]{inputenc}\n\\usepackage{graphicx}\n");
    let _ = writeln!(out, "\\title{{{}}}", escape_latex(&spec.title));
    let authors: Vec<String> = spec.authors.iter().map(|a| escape_latex(a)).collect();
    let _ = writeln!(out, "\\author{{{}}}", authors.join(" \\and "));
    out.push_str("\\usetheme{Default}\n\\begin{document}\n\\maketitle\n\\begin{columns}\n");

    let mut current_column = None;
    for (slot, panel) in template.slots.iter().zip(&spec.panels) {
        if current_column != Some(slot.column) {
            let _ = writeln!(out, "\\column{{{}}}", slot.width);
            current_column = Some(slot.column);
        }
        render_panel(&mut out, panel);
    }
    out.push_str("\\end{columns}\n\\end{document}\n");
    Ok(out)
}
