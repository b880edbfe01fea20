//! Single-token gender aggregation over health-action-phase prompts.

use serde::{Deserialize, Serialize};

use crate::backend::{FillMaskBackend, MaskFillRequest, MaskFillResponse};
use crate::error::PromptError;
use crate::exec::Execution;
use crate::lexicon::{GenderLabel, GenderLexicon};
use crate::prompts::{expand, render_for_backend, DiagnosisSet, DiagnosisSetName, PromptTemplate};

/// Candidates must score strictly above this to be counted.
pub const DEFAULT_FLOOR: f64 = 0.01;
/// Candidates requested per single-token query.
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenderScores {
    pub p_female: f64,
    pub p_male: f64,
    pub p_unspecified: f64,
    /// `p_female - p_male`
    pub disparity: f64,
}

impl GenderScores {
    pub fn new(p_female: f64, p_male: f64, p_unspecified: f64) -> Self {
        Self {
            p_female,
            p_male,
            p_unspecified,
            disparity: p_female - p_male,
        }
    }

    pub(crate) fn add(&mut self, label: GenderLabel, p: f64) {
        match label {
            GenderLabel::Female => self.p_female += p,
            GenderLabel::Male => self.p_male += p,
            GenderLabel::Unspecified => self.p_unspecified += p,
        }
        self.disparity = self.p_female - self.p_male;
    }
}

/// Sums candidate scores into gender buckets, skipping any candidate whose
/// score is not strictly above `floor`.
pub fn aggregate_scores(resp: &MaskFillResponse, lex: &GenderLexicon, floor: f64) -> GenderScores {
    let mut scores = GenderScores::default();
    for c in resp.candidates.iter().filter(|c| c.score > floor) {
        scores.add(lex.classify(&c.token_str), c.score);
    }
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Row {
    pub template_id: String,
    pub phase: String,
    pub diagnosis_set: DiagnosisSetName,
    pub diagnosis: String,
    pub text: String,
    pub model_id: String,
    pub p_female: f64,
    pub p_male: f64,
    pub p_unspecified: f64,
    pub disparity: f64,
    /// Total score of everything the backend returned, for tail-mass audits.
    pub returned_mass: f64,
}

impl Rq1Row {
    pub fn scores(&self) -> GenderScores {
        GenderScores {
            p_female: self.p_female,
            p_male: self.p_male,
            p_unspecified: self.p_unspecified,
            disparity: self.disparity,
        }
    }
}

/// Queries every (template, diagnosis) prompt once and aggregates the result.
/// Rows come back in expansion order.
#[allow(clippy::too_many_arguments)]
pub fn run_rq1<B: FillMaskBackend + ?Sized>(
    templates: &[PromptTemplate],
    dset: &DiagnosisSet,
    backend: &B,
    lex: &GenderLexicon,
    floor: f64,
    top_k: usize,
    exec: Execution,
) -> Result<Vec<Rq1Row>, PromptError> {
    let desc = backend.describe().map_err(|source| PromptError {
        template_id: "-".into(),
        diagnosis: "-".into(),
        phrase: None,
        source: Box::new(source),
    })?;
    let instances = expand(templates, dset);
    exec.try_map(&instances, |p| {
        let req = MaskFillRequest::new(render_for_backend(p, &desc.mask_token), top_k);
        let resp = backend.fill_mask(&req).map_err(|source| PromptError {
            template_id: p.template_id.clone(),
            diagnosis: p.diagnosis.clone(),
            phrase: None,
            source: Box::new(source),
        })?;
        let s = aggregate_scores(&resp, lex, floor);
        Ok(Rq1Row {
            template_id: p.template_id.clone(),
            phase: p.meta.as_str().to_string(),
            diagnosis_set: p.diagnosis_set,
            diagnosis: p.diagnosis.clone(),
            text: p.rendered_text.clone(),
            model_id: desc.model_id.clone(),
            p_female: s.p_female,
            p_male: s.p_male,
            p_unspecified: s.p_unspecified,
            disparity: s.disparity,
            returned_mass: resp.total_mass(),
        })
    })
}
