use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use poster_core::baselines::{lead3, similarity_graph_select, textrank_extract};
use poster_core::composer::{capacity_warnings, load_templates, render_poster, select_template, Orientation, PosterSpec};
use poster_core::corpus::{
    annotation_path, load_annotations, load_corpus, load_entry, load_paper, split_kfold, synthesize_corpus,
    write_entry, CorpusEntry, Paper,
};
use poster_core::evaluation::{run_experiment, FoldOutcome};
use poster_core::extraction::{train, ExtractionError, ExtractionModel, PanelDraft, TrainOptions, TrainingExample};
use poster_core::pipeline::{extract_panels, run_pipeline, PanelReport};
use poster_core::rouge::greedy_label_sentences;
use poster_core::section_filter::{FilterError, SectionFilter};

use crate::config::PipelineConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Training,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Training => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CmdResult = Result<(), CliError>;

pub fn usage(msg: impl fmt::Display) -> CliError {
    CliError {
        kind: Kind::Usage,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub fn data(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        kind: Kind::Data,
        error: e.into(),
    }
}

fn filter_err(e: FilterError) -> CliError {
    let kind = if matches!(e, FilterError::Diverged { .. }) { Kind::Training } else { Kind::Data };
    CliError { kind, error: e.into() }
}

fn extract_err(e: ExtractionError) -> CliError {
    let kind = if matches!(e, ExtractionError::Diverged { .. }) { Kind::Training } else { Kind::Data };
    CliError { kind, error: e.into() }
}

// ---- path handling --------------------------------------------------------

fn require(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(data(anyhow::anyhow!("{what} {} does not exist", path.display())))
    }
}

fn require_checkpoint(path: &Path, training_command: &str) -> CmdResult {
    if path.is_file() {
        return Ok(());
    }
    Err(data(anyhow::anyhow!(
        "checkpoint {} not found; create it with `poster {training_command} --corpus <dir> --out {}`",
        path.display(),
        path.display()
    )))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Refuses outputs that would overwrite one of the command's inputs.
fn guard_inputs(out: &Path, inputs: &[&Path]) -> CmdResult {
    for input in inputs {
        if same_file(out, input) {
            return Err(usage(format!("output {} would overwrite an input file", out.display())));
        }
    }
    Ok(())
}

fn write_text(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(data)?;
            }
            std::fs::write(p, text).map_err(|e| data(anyhow::anyhow!("cannot write {}: {e}", p.display())))
        }
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn read_paper(path: &Path) -> Result<Paper, CliError> {
    require(path, "paper")?;
    load_paper(path).map_err(data)
}

fn read_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, CliError> {
    require(dir, "corpus directory")?;
    let corpus = load_corpus(dir).map_err(data)?;
    if corpus.is_empty() {
        return Err(data(anyhow::anyhow!("corpus {} contains no papers", dir.display())));
    }
    Ok(corpus)
}

fn orientation(flag: Option<Orientation>, config: &PipelineConfig) -> Orientation {
    flag.or(config.composer.orientation).unwrap_or(Orientation::Portrait)
}

// ---- commands -------------------------------------------------------------

pub fn synth(config: &PipelineConfig, papers: usize, out: &Path) -> CmdResult {
    if papers == 0 {
        return Err(usage("--papers must be positive"));
    }
    let corpus = synthesize_corpus(config.seed, papers);
    for entry in &corpus {
        write_entry(out, entry).map_err(data)?;
    }
    let samples: usize = corpus.iter().map(|e| e.samples.len()).sum();
    write_text(None, &to_json(&json!({ "papers": corpus.len(), "samples": samples, "out": out })))
}

#[derive(Serialize)]
struct IngestSummary {
    paper_id: String,
    sections: usize,
    sentences: usize,
    graphs: usize,
    annotated_sections: usize,
    aligned_samples: usize,
}

/// Validates papers (files or directories) and optionally writes normalized
/// copies to `out`.
pub fn ingest(inputs: &[PathBuf], out: Option<&Path>) -> CmdResult {
    let mut entries = Vec::new();
    for input in inputs {
        require(input, "input")?;
        if input.is_dir() {
            entries.extend(load_corpus(input).map_err(data)?);
        } else {
            entries.push(load_entry(input).map_err(data)?);
        }
    }
    if let Some(dir) = out {
        for input in inputs {
            let input_dir = if input.is_dir() { input.as_path() } else { input.parent().unwrap_or(Path::new(".")) };
            if same_file(dir, input_dir) {
                return Err(usage(format!("output directory {} holds input files", dir.display())));
            }
        }
        for e in &entries {
            write_entry(dir, e).map_err(data)?;
        }
    }
    let summary: Vec<IngestSummary> = entries
        .iter()
        .map(|e| IngestSummary {
            paper_id: e.paper.id.clone(),
            sections: e.paper.sections.len(),
            sentences: e.paper.sections.iter().map(|s| s.sentences.len()).sum(),
            graphs: e.paper.sections.iter().map(|s| s.graphs.len()).sum(),
            annotated_sections: e.paper.sections.iter().filter(|s| s.gold_important.is_some()).count(),
            aligned_samples: e.samples.len(),
        })
        .collect();
    write_text(None, &to_json(&summary))
}

/// Recomputes greedy sentence labels for every annotated important section
/// and writes the updated annotation document to `out` (stdout if absent).
pub fn label(paper_path: &Path, out: Option<&Path>) -> CmdResult {
    require(paper_path, "paper")?;
    let gold = annotation_path(paper_path);
    require(&gold, "annotation file")?;
    if let Some(out) = out {
        guard_inputs(out, &[paper_path, &gold])?;
    }
    let mut paper = load_paper(paper_path).map_err(data)?;
    let mut annotations = load_annotations(&gold).map_err(data)?;
    for ann in annotations.values_mut() {
        ann.sentence_labels = None;
    }
    paper.apply_annotations(&annotations).map_err(data)?;
    for section in &paper.sections {
        let Some(ann) = annotations.get_mut(&section.id) else { continue };
        if ann.important {
            let labels = greedy_label_sentences(section, &ann.panel_text);
            ann.sentence_labels = Some(labels.into_iter().map(u8::from).collect());
        }
    }
    write_text(out, &to_json(&annotations))
}

pub fn train_filter(config: &PipelineConfig, corpus: &Path, out: &Path) -> CmdResult {
    let entries = read_corpus(corpus)?;
    let papers: Vec<Paper> = entries.into_iter().map(|e| e.paper).collect();
    let mut model = SectionFilter::new(config.filter.clone(), &config.encoder_source(), config.seed).map_err(filter_err)?;
    let log = model.train(&papers, config.seed).map_err(filter_err)?;
    model.save(out).map_err(filter_err)?;
    let last = log.last();
    write_text(
        None,
        &to_json(&json!({
            "checkpoint": out,
            "papers": papers.len(),
            "epochs": log.len(),
            "final_loss": last.map(|r| r.loss),
            "train_accuracy": last.map(|r| r.train_accuracy),
        })),
    )
}

pub fn train_extract(config: &PipelineConfig, corpus: &Path, out: &Path) -> CmdResult {
    let entries = read_corpus(corpus)?;
    // a tenth of the papers drives early stopping when there are enough
    let validation_ids: Vec<String> = if entries.len() >= 10 {
        let ids: Vec<&str> = entries.iter().map(|e| e.paper.id.as_str()).collect();
        let folds = split_kfold(&ids, 10, config.seed).map_err(data)?;
        folds.members(0).into_iter().map(String::from).collect()
    } else {
        Vec::new()
    };
    let (mut train_set, mut validation) = (Vec::new(), Vec::new());
    for e in &entries {
        let target = if validation_ids.contains(&e.paper.id) { &mut validation } else { &mut train_set };
        target.extend(e.samples.iter().map(TrainingExample::from_sample));
    }
    let model = ExtractionModel::new(config.model.clone(), &config.encoder_source(), config.seed).map_err(extract_err)?;
    let opts = TrainOptions::from_config(&model, config.seed);
    let outcome = train(model, &train_set, &validation, &opts).map_err(extract_err)?;
    outcome.model.save(out).map_err(extract_err)?;
    write_text(
        None,
        &to_json(&json!({
            "checkpoint": out,
            "train_samples": train_set.len(),
            "validation_samples": validation.len(),
            "epochs": outcome.log.last().map_or(0, |r| r.epoch),
            "best_epoch": outcome.best_epoch,
            "best_val_rouge2": outcome.best_val_rouge2,
        })),
    )
}

pub fn filter(paper: &Path, checkpoint: &Path, out: Option<&Path>) -> CmdResult {
    let paper = read_paper(paper)?;
    require_checkpoint(checkpoint, "train-filter")?;
    let model = SectionFilter::load(checkpoint).map_err(filter_err)?;
    let scores = model.score_sections(&paper).map_err(filter_err)?;
    let map: BTreeMap<&str, f64> = paper.sections.iter().map(|s| s.id.as_str()).zip(scores).collect();
    write_text(out, &to_json(&map))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineMethod {
    Lead3,
    Textrank,
    Similarity,
}

pub fn baseline(
    config: &PipelineConfig,
    paper: &Path,
    method: BaselineMethod,
    threshold: f64,
    out: Option<&Path>,
) -> CmdResult {
    let paper = read_paper(paper)?;
    let mut drafts = Vec::new();
    for section in &paper.sections {
        let (sentence_indices, graph_ids) = match method {
            BaselineMethod::Lead3 => match lead3(section) {
                Ok(s) => (s, Vec::new()),
                Err(e) => {
                    log::warn!("{e}");
                    continue;
                }
            },
            BaselineMethod::Textrank => match textrank_extract(section, &config.experiment.textrank) {
                Ok(r) => (r.selection, Vec::new()),
                Err(e) => {
                    log::warn!("{e}");
                    continue;
                }
            },
            BaselineMethod::Similarity => (Vec::new(), similarity_graph_select(section, threshold)),
        };
        drafts.push(PanelDraft {
            section_id: section.id.clone(),
            sentence_indices,
            graph_ids,
        });
    }
    write_text(out, &to_json(&drafts))
}

pub fn evaluate(config: &PipelineConfig, corpus: &Path, folds: usize, out: Option<&Path>) -> CmdResult {
    let entries = read_corpus(corpus)?;
    let report = run_experiment(&entries, folds, &config.experiment, config.seed).map_err(data)?;
    write_text(out, &report.to_json())?;
    let failed: Vec<String> = report
        .folds
        .iter()
        .filter_map(|f| match &f.outcome {
            FoldOutcome::Failed { reason } => Some(format!("fold {}: {reason}", f.fold)),
            FoldOutcome::Ok { .. } => None,
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError {
            kind: Kind::Training,
            error: anyhow::anyhow!("{} fold(s) failed: {}", failed.len(), failed.join("; ")),
        })
    }
}

pub fn extract(paper: &Path, checkpoint: &Path, sections: &[String], out: Option<&Path>) -> CmdResult {
    let paper = read_paper(paper)?;
    require_checkpoint(checkpoint, "train-extract")?;
    let model = ExtractionModel::load(checkpoint).map_err(extract_err)?;
    for id in sections {
        if !paper.sections.iter().any(|s| &s.id == id) {
            return Err(data(anyhow::anyhow!("paper {:?} has no section {id:?}", paper.id)));
        }
    }
    let ids: Vec<&str> = if sections.is_empty() {
        paper.sections.iter().map(|s| s.id.as_str()).collect()
    } else {
        sections.iter().map(String::as_str).collect()
    };
    let panels = extract_panels(&paper, &model, &ids).map_err(extract_err)?;
    write_text(out, &to_json(&panels))
}

/// `extract` output or bare drafts (as written by `baseline`).
#[derive(Deserialize)]
#[serde(untagged)]
enum PanelsFile {
    Reports(Vec<PanelReport>),
    Drafts(Vec<PanelDraft>),
}

pub fn compose(
    config: &PipelineConfig,
    paper_path: &Path,
    panels: &Path,
    orientation_flag: Option<Orientation>,
    template_file: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let paper = read_paper(paper_path)?;
    require(panels, "panels file")?;
    if let Some(t) = template_file {
        require(t, "template file")?;
    }
    guard_inputs(out, &[paper_path, panels])?;
    let text = std::fs::read_to_string(panels).map_err(data)?;
    let drafts = match serde_json::from_str::<PanelsFile>(&text)
        .map_err(|e| data(anyhow::anyhow!("{}: not a panels file: {e}", panels.display())))?
    {
        PanelsFile::Reports(r) => r.into_iter().map(|p| p.draft).collect(),
        PanelsFile::Drafts(d) => d,
    };
    let templates = load_templates(template_file).map_err(data)?;
    let spec = PosterSpec::from_drafts(&paper, &drafts, orientation(orientation_flag, config)).map_err(data)?;
    let template = select_template(&spec, &templates).map_err(data)?;
    let document = render_poster(&spec, template).map_err(data)?;
    write_text(Some(out), &document)?;
    write_text(
        None,
        &to_json(&json!({
            "document": out,
            "template_id": template.id,
            "orientation": spec.orientation,
            "warnings": capacity_warnings(&spec, template),
        })),
    )
}

pub struct PipelineArgs {
    pub paper: PathBuf,
    pub filter_checkpoint: PathBuf,
    pub extract_checkpoint: PathBuf,
    pub orientation: Option<Orientation>,
    pub template_file: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn pipeline(config: &PipelineConfig, args: &PipelineArgs) -> CmdResult {
    let paper = read_paper(&args.paper)?;
    require_checkpoint(&args.filter_checkpoint, "train-filter")?;
    require_checkpoint(&args.extract_checkpoint, "train-extract")?;
    if let Some(t) = &args.template_file {
        require(t, "template file")?;
    }
    let filter = SectionFilter::load(&args.filter_checkpoint).map_err(filter_err)?;
    let model = ExtractionModel::load(&args.extract_checkpoint).map_err(extract_err)?;
    let templates = load_templates(args.template_file.as_deref()).map_err(data)?;
    let output = run_pipeline(&paper, &filter, &model, &templates, orientation(args.orientation, config))
        .map_err(|e| data(anyhow::Error::from(e)))?;
    let tex = args.out.join(format!("{}.tex", paper.id));
    let report = args.out.join(format!("{}.report.json", paper.id));
    guard_inputs(&tex, &[&args.paper])?;
    guard_inputs(&report, &[&args.paper])?;
    write_text(Some(&tex), &output.document)?;
    write_text(Some(&report), &to_json(&output.report))?;
    write_text(
        None,
        &to_json(&json!({
            "document": tex,
            "report": report,
            "template_id": output.report.template_id,
            "panels": output.report.panels.len(),
        })),
    )
}
