//! End-to-end poster generation for one paper: filter sections, extract
//! panel content from the kept ones, compose the poster.

use serde::{Deserialize, Serialize};

use crate::composer::{render_poster, select_template, ComposeError, Orientation, PosterSpec, Template};
use crate::corpus::Paper;
use crate::extraction::{select_panel_content, ExtractionError, ExtractionModel, ExtractionScores, PanelDraft};
use crate::section_filter::{threshold_filter, FilterError, SectionFilter};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionScore {
    pub section_id: String,
    pub score: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelReport {
    pub section_id: String,
    pub scores: ExtractionScores,
    pub draft: PanelDraft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub paper_id: String,
    pub sections: Vec<SectionScore>,
    pub panels: Vec<PanelReport>,
    pub template_id: String,
    pub orientation: Orientation,
    pub warnings: Vec<String>,
}

pub struct PipelineOutput {
    pub document: String,
    pub report: StageReport,
}

/// Scores and drafts for every kept section of `paper`. Sections that
/// cannot be scored under the model's ablation switches are skipped.
pub fn extract_panels(
    paper: &Paper,
    model: &ExtractionModel,
    section_ids: &[&str],
) -> Result<Vec<PanelReport>, ExtractionError> {
    let cfg = model.config();
    let mut panels = Vec::new();
    for section in paper.sections.iter().filter(|s| section_ids.contains(&s.id.as_str())) {
        let scores = match model.forward(section) {
            Ok(s) => s,
            Err(ExtractionError::EmptyInput(id)) => {
                log::warn!("section {id:?} has nothing to extract");
                continue;
            }
            Err(e) => return Err(e),
        };
        let draft = select_panel_content(&scores, section, cfg.word_budget, cfg.graph_threshold);
        panels.push(PanelReport {
            section_id: section.id.clone(),
            scores,
            draft,
        });
    }
    Ok(panels)
}

pub fn run_pipeline(
    paper: &Paper,
    filter: &SectionFilter,
    model: &ExtractionModel,
    templates: &[Template],
    orientation: Orientation,
) -> Result<PipelineOutput, PipelineError> {
    let scores = filter.score_sections(paper)?;
    let kept = threshold_filter(&scores, filter.config().threshold);
    let sections: Vec<SectionScore> = paper
        .sections
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (s, &score))| SectionScore {
            section_id: s.id.clone(),
            score,
            kept: kept.contains(&i),
        })
        .collect();
    let kept_ids: Vec<&str> = kept.iter().map(|&i| paper.sections[i].id.as_str()).collect();
    let panels = extract_panels(paper, model, &kept_ids)?;
    let drafts: Vec<PanelDraft> = panels.iter().map(|p| p.draft.clone()).collect();
    let spec = PosterSpec::from_drafts(paper, &drafts, orientation)?;
    let template = select_template(&spec, templates)?;
    let document = render_poster(&spec, template)?;
    Ok(PipelineOutput {
        document,
        report: StageReport {
            paper_id: paper.id.clone(),
            sections,
            panels,
            template_id: template.id.clone(),
            orientation,
            warnings: crate::composer::capacity_warnings(&spec, template),
        },
    })
}
