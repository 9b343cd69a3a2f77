//! Paper and panel data model, on-disk schema, reference detection, fold
//! assignment and the synthetic corpus generator.

mod folds;
mod refs;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use folds::{split_kfold, FoldAssignment};
pub use refs::{caption_prefix, detect_references, find_mentions, Mention};
pub use synth::{synthesize_corpus, synthesize_with, SynthConfig, IMPORTANCE_LEVELS};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: schema violation: {message}")]
    Schema { path: String, message: String },
    #[error("validation error at {field}: {message}")]
    Validation { field: String, message: String },
    #[error("cannot split {papers} papers into {folds} folds")]
    TooFewPapers { papers: usize, folds: usize },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> CorpusError {
    CorpusError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Figure,
    Table,
}

impl GraphKind {
    pub fn word(self) -> &'static str {
        match self {
            GraphKind::Figure => "Figure",
            GraphKind::Table => "Table",
        }
    }
}

/// A figure or table of a section, represented by its caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphElement {
    pub id: String,
    pub kind: GraphKind,
    pub number: u32,
    pub caption: String,
    /// Image location used by the poster composer, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<bool>,
    /// Ids of graphs in the owning section that this sentence mentions.
    #[serde(default)]
    pub refs: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub id: String,
    pub title: String,
    pub sentences: Vec<Sentence>,
    pub graphs: Vec<GraphElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_important: Option<bool>,
}

impl Section {
    /// Builds a section from raw sentence strings, detecting references
    /// against `graphs`.
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        sentences: &[&str],
        graphs: Vec<GraphElement>,
    ) -> Self {
        let sentences = sentences
            .iter()
            .enumerate()
            .map(|(index, text)| Sentence {
                index,
                text: (*text).to_string(),
                gold_label: None,
                refs: detect_references(text, &graphs),
            })
            .collect();
        Self {
            id: id.into(),
            title: title.into(),
            sentences,
            graphs,
            gold_important: None,
        }
    }

    pub fn body(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn graph_index(&self, id: &str) -> Option<usize> {
        self.graphs.iter().position(|g| g.id == id)
    }

    /// `(sentence index, graph index)` pairs of the reference relation.
    pub fn reference_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for s in &self.sentences {
            for r in &s.refs {
                if let Some(gi) = self.graph_index(r) {
                    pairs.push((s.index, gi));
                }
            }
        }
        pairs
    }

    /// Text of the selected sentences joined in document order.
    pub fn joined_text(&self, indices: &[usize]) -> String {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted
            .iter()
            .map(|&i| self.sentences[i].text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Paper {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    pub sections: Vec<Section>,
}

/// One section paired with its gold panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub paper_id: String,
    pub section: Section,
    pub panel_text: String,
    pub panel_graph_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_sentence_labels: Option<Vec<bool>>,
}

impl AlignedSample {
    pub fn id(&self) -> String {
        format!("{}/{}", self.paper_id, self.section.id)
    }

    /// Gold graph labels in section order.
    pub fn graph_labels(&self) -> Vec<bool> {
        self.section
            .graphs
            .iter()
            .map(|g| self.panel_graph_ids.contains(&g.id))
            .collect()
    }
}

/// A paper together with its aligned section/panel samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub paper: Paper,
    pub samples: Vec<AlignedSample>,
}

// ---- on-disk schema -------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaperDocument {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub authors: Vec<String>,
    pub sections: Vec<SectionDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionDocument {
    pub id: String,
    pub title: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub graphs: Vec<GraphDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub id: String,
    pub kind: GraphKind,
    pub number: u32,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Gold annotation for one section, keyed by section id in the annotation
/// file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionAnnotation {
    pub important: bool,
    #[serde(default)]
    pub panel_text: String,
    #[serde(default)]
    pub panel_graph_ids: BTreeSet<String>,
    /// Derived sentence labels (0/1), written by the labeler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_labels: Option<Vec<u8>>,
}

pub type Annotations = BTreeMap<String, SectionAnnotation>;

impl Paper {
    /// Validates a parsed document and resolves sentence references.
    /// Returns the paper and human-readable warnings for dropped references.
    pub fn from_document(doc: PaperDocument) -> Result<(Paper, Vec<String>), CorpusError> {
        if doc.sections.is_empty() {
            return Err(invalid("sections", "paper has no sections"));
        }
        let mut warnings = Vec::new();
        let mut section_ids = HashSet::new();
        let mut graph_ids = HashSet::new();
        let mut numbered = HashSet::new();
        let mut sections = Vec::with_capacity(doc.sections.len());

        for (si, sd) in doc.sections.into_iter().enumerate() {
            let at = |rest: &str| format!("sections[{si}]{rest}");
            if !section_ids.insert(sd.id.clone()) {
                return Err(invalid(at(".id"), format!("duplicate section id {:?}", sd.id)));
            }
            if sd.sentences.is_empty() {
                return Err(invalid(at(".sentences"), "section has no sentences"));
            }
            let mut graphs = Vec::with_capacity(sd.graphs.len());
            for (gi, gd) in sd.graphs.into_iter().enumerate() {
                let field = at(&format!(".graphs[{gi}]"));
                if gd.number == 0 {
                    return Err(invalid(format!("{field}.number"), "graph number must be positive"));
                }
                if !graph_ids.insert(gd.id.clone()) {
                    return Err(invalid(format!("{field}.id"), format!("duplicate graph id {:?}", gd.id)));
                }
                if !numbered.insert((gd.kind, gd.number)) {
                    return Err(invalid(
                        format!("{field}.number"),
                        format!("duplicate {} {}", gd.kind.word(), gd.number),
                    ));
                }
                match caption_prefix(&gd.caption) {
                    Some((kind, number)) if kind == gd.kind && number == gd.number => {}
                    _ => {
                        return Err(invalid(
                            format!("{field}.caption"),
                            format!(
                                "caption must start with \"{} {}\"",
                                gd.kind.word(),
                                gd.number
                            ),
                        ))
                    }
                }
                graphs.push(GraphElement {
                    id: gd.id,
                    kind: gd.kind,
                    number: gd.number,
                    caption: gd.caption,
                    path: gd.path,
                    gold_label: None,
                });
            }
            let mut sentences = Vec::with_capacity(sd.sentences.len());
            for (index, text) in sd.sentences.into_iter().enumerate() {
                if text.trim().is_empty() {
                    return Err(invalid(at(&format!(".sentences[{index}]")), "empty sentence"));
                }
                let refs = detect_references(&text, &graphs);
                for m in find_mentions(&text) {
                    if !graphs.iter().any(|g| g.kind == m.kind && g.number == m.number) {
                        warnings.push(format!(
                            "section {:?} sentence {index}: {} {} is not in this section; reference dropped",
                            sd.id,
                            m.kind.word(),
                            m.number
                        ));
                    }
                }
                sentences.push(Sentence {
                    index,
                    text,
                    gold_label: None,
                    refs,
                });
            }
            sections.push(Section {
                id: sd.id,
                title: sd.title,
                sentences,
                graphs,
                gold_important: None,
            });
        }

        Ok((
            Paper {
                id: doc.id,
                title: doc.title,
                authors: doc.authors,
                sections,
            },
            warnings,
        ))
    }

    pub fn to_document(&self) -> PaperDocument {
        PaperDocument {
            id: self.id.clone(),
            title: self.title.clone(),
            authors: self.authors.clone(),
            sections: self
                .sections
                .iter()
                .map(|s| SectionDocument {
                    id: s.id.clone(),
                    title: s.title.clone(),
                    sentences: s.sentences.iter().map(|x| x.text.clone()).collect(),
                    graphs: s
                        .graphs
                        .iter()
                        .map(|g| GraphDocument {
                            id: g.id.clone(),
                            kind: g.kind,
                            number: g.number,
                            caption: g.caption.clone(),
                            path: g.path.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Gold annotations carried by this paper (sections with a known
    /// importance label).
    pub fn annotations(&self, samples: &[AlignedSample]) -> Annotations {
        let mut out = Annotations::new();
        for s in &self.sections {
            let Some(important) = s.gold_important else { continue };
            let sample = samples.iter().find(|x| x.section.id == s.id);
            out.insert(
                s.id.clone(),
                SectionAnnotation {
                    important,
                    panel_text: sample.map(|x| x.panel_text.clone()).unwrap_or_default(),
                    panel_graph_ids: sample.map(|x| x.panel_graph_ids.clone()).unwrap_or_default(),
                    sentence_labels: sample
                        .and_then(|x| x.derived_sentence_labels.as_ref())
                        .map(|l| l.iter().map(|&b| u8::from(b)).collect()),
                },
            );
        }
        out
    }

    /// Applies gold annotations: sets section importance, graph labels and
    /// sentence labels, and returns one aligned sample per important section.
    /// Sections absent from `annotations` are left unlabeled.
    pub fn apply_annotations(
        &mut self,
        annotations: &Annotations,
    ) -> Result<Vec<AlignedSample>, CorpusError> {
        for key in annotations.keys() {
            if !self.sections.iter().any(|s| &s.id == key) {
                return Err(invalid(key.clone(), "annotation names an unknown section"));
            }
        }
        let mut samples = Vec::new();
        for section in &mut self.sections {
            let Some(ann) = annotations.get(&section.id) else { continue };
            section.gold_important = Some(ann.important);
            for g in &ann.panel_graph_ids {
                if section.graph_index(g).is_none() {
                    return Err(invalid(
                        format!("{}.panel_graph_ids", section.id),
                        format!("graph {g:?} is not in the section"),
                    ));
                }
            }
            let labels = match &ann.sentence_labels {
                Some(l) => {
                    if l.len() != section.sentences.len() {
                        return Err(invalid(
                            format!("{}.sentence_labels", section.id),
                            format!(
                                "expected {} labels, found {}",
                                section.sentences.len(),
                                l.len()
                            ),
                        ));
                    }
                    if l.iter().any(|&v| v > 1) {
                        return Err(invalid(
                            format!("{}.sentence_labels", section.id),
                            "labels must be 0 or 1",
                        ));
                    }
                    Some(l.iter().map(|&v| v == 1).collect::<Vec<bool>>())
                }
                None => None,
            };
            if !ann.important {
                continue;
            }
            if ann.panel_text.trim().is_empty() {
                return Err(invalid(
                    format!("{}.panel_text", section.id),
                    "important section without panel text",
                ));
            }
            for g in &mut section.graphs {
                g.gold_label = Some(ann.panel_graph_ids.contains(&g.id));
            }
            if let Some(l) = &labels {
                for (s, &y) in section.sentences.iter_mut().zip(l) {
                    s.gold_label = Some(y);
                }
            }
            samples.push(AlignedSample {
                paper_id: self.id.clone(),
                section: section.clone(),
                panel_text: ann.panel_text.clone(),
                panel_graph_ids: ann.panel_graph_ids.clone(),
                derived_sentence_labels: labels,
            });
        }
        Ok(samples)
    }
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, CorpusError> {
    serde_json::from_str(text).map_err(|e| CorpusError::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads and validates one paper file, logging dropped references.
pub fn load_paper(path: &Path) -> Result<Paper, CorpusError> {
    let (paper, warnings) = load_paper_with_warnings(path)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(paper)
}

pub fn load_paper_with_warnings(path: &Path) -> Result<(Paper, Vec<String>), CorpusError> {
    let doc: PaperDocument = parse(path, &read(path)?)?;
    Paper::from_document(doc)
}

pub fn load_annotations(path: &Path) -> Result<Annotations, CorpusError> {
    parse(path, &read(path)?)
}

/// Sibling annotation file of a paper file: `x.json` -> `x.gold.json`.
pub fn annotation_path(paper_path: &Path) -> PathBuf {
    let stem = paper_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    paper_path.with_file_name(format!("{stem}.gold.json"))
}

/// Loads a paper plus its sibling annotation file when one exists.
pub fn load_entry(paper_path: &Path) -> Result<CorpusEntry, CorpusError> {
    let mut paper = load_paper(paper_path)?;
    let gold = annotation_path(paper_path);
    let samples = if gold.exists() {
        paper.apply_annotations(&load_annotations(&gold)?)?
    } else {
        Vec::new()
    };
    Ok(CorpusEntry { paper, samples })
}

/// Loads every `*.json` paper (excluding `*.gold.json`) in `dir`, sorted by
/// file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let rd = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.ends_with(".json") && !name.ends_with(".gold.json")
        })
        .collect();
    paths.sort();
    let entries = paths.iter().map(|p| load_entry(p)).collect::<Result<Vec<_>, _>>()?;
    let mut ids = HashSet::new();
    for e in &entries {
        if !ids.insert(e.paper.id.clone()) {
            return Err(invalid("id", format!("duplicate paper id {:?} in corpus", e.paper.id)));
        }
    }
    Ok(entries)
}

/// Writes `<dir>/<paper id>.json` and `<dir>/<paper id>.gold.json`.
pub fn write_entry(dir: &Path, entry: &CorpusEntry) -> Result<(), CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let paper_path = dir.join(format!("{}.json", entry.paper.id));
    let doc = serde_json::to_string_pretty(&entry.paper.to_document()).expect("serializable");
    fs::write(&paper_path, doc + "\n").map_err(io(&paper_path))?;
    let gold_path = annotation_path(&paper_path);
    let gold = serde_json::to_string_pretty(&entry.paper.annotations(&entry.samples)).expect("serializable");
    fs::write(&gold_path, gold + "\n").map_err(io(&gold_path))?;
    Ok(())
}
