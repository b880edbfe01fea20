use serde::{Deserialize, Serialize};

use super::{bonferroni, independent_t, paired_t, stars, StatsError, TTest, TestKind};
use crate::prompts::{DiagnosisSetName, HealthActionPhase, StigmaDimension};
use crate::rq1::{GenderScores, Rq1Row};
use crate::rq2::Rq2Row;

pub const OVERALL_SUBSET: &str = "All";

/// One line of a report's statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    /// Model and diagnosis set, e.g. `roberta-base_MH`.
    pub model: String,
    /// Phase, stigma dimension or `All`.
    pub subset: String,
    #[serde(flatten)]
    pub test: TTest,
    /// Bonferroni-adjusted over every test in the same table.
    pub p_adjusted: f64,
    pub stars: String,
    /// Which side has the larger mean: `F`/`M` for paired tests,
    /// `MH`/`non-MH` for disparity comparisons.
    pub max: String,
    /// True when every prompt in the subset is reverse coded.
    pub reverse_coded: bool,
}

trait ScoredRow {
    fn group(&self) -> &str;
    fn scores(&self) -> GenderScores;
    fn model_id(&self) -> &str;
    fn set(&self) -> DiagnosisSetName;
    fn reverse_coded(&self) -> bool;
}

impl ScoredRow for Rq1Row {
    fn group(&self) -> &str {
        &self.phase
    }
    fn scores(&self) -> GenderScores {
        Rq1Row::scores(self)
    }
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn set(&self) -> DiagnosisSetName {
        self.diagnosis_set
    }
    fn reverse_coded(&self) -> bool {
        false
    }
}

impl ScoredRow for Rq2Row {
    fn group(&self) -> &str {
        &self.dimension
    }
    fn scores(&self) -> GenderScores {
        Rq2Row::scores(self)
    }
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn set(&self) -> DiagnosisSetName {
        self.diagnosis_set
    }
    fn reverse_coded(&self) -> bool {
        self.reverse_coded
    }
}

fn set_side_label(set: DiagnosisSetName) -> &'static str {
    match set {
        DiagnosisSetName::Mh => "MH",
        DiagnosisSetName::NonMh => "non-MH",
    }
}

fn subset_rows<'a, R: ScoredRow>(rows: &'a [R], group: Option<&str>) -> Vec<&'a R> {
    rows.iter()
        .filter(|r| group.is_none_or(|g| r.group() == g))
        .collect()
}

fn in_subset(subset: &str, e: StatsError) -> StatsError {
    StatsError::InSubset {
        subset: subset.to_string(),
        source: Box::new(e),
    }
}

fn build_table<R: ScoredRow>(
    rows: &[R],
    contrast: &[R],
    groups: &[&str],
    paired_overall: bool,
) -> Result<Vec<StatTestResult>, StatsError> {
    let first = rows
        .first()
        .ok_or_else(|| StatsError::EmptySubset(OVERALL_SUBSET.into()))?;
    let model = format!("{}_{}", first.model_id(), first.set().label());
    let present: Vec<&str> = groups
        .iter()
        .copied()
        .filter(|g| rows.iter().any(|r| r.group() == *g))
        .collect();

    let mut paired_subsets: Vec<Option<&str>> = present.iter().map(|g| Some(*g)).collect();
    if paired_overall {
        paired_subsets.push(None);
    }
    let mut raw: Vec<(String, TTest, String, bool)> = Vec::new();
    for g in paired_subsets {
        let name = g.unwrap_or(OVERALL_SUBSET);
        let sub = subset_rows(rows, g);
        let f: Vec<f64> = sub.iter().map(|r| r.scores().p_female).collect();
        let m: Vec<f64> = sub.iter().map(|r| r.scores().p_male).collect();
        let t = paired_t(&f, &m).map_err(|e| in_subset(name, e))?;
        let max = if t.mean1 > t.mean2 { "F" } else { "M" };
        let rc = sub.iter().all(|r| r.reverse_coded());
        raw.push((name.to_string(), t, max.to_string(), rc));
    }

    if !contrast.is_empty() {
        let primary_side = set_side_label(first.set());
        let contrast_side = set_side_label(contrast[0].set());
        let independent_subsets = present
            .iter()
            .map(|g| Some(*g))
            .chain(std::iter::once(None));
        for g in independent_subsets {
            let name = g.unwrap_or(OVERALL_SUBSET);
            let a_rows = subset_rows(rows, g);
            let b_rows = subset_rows(contrast, g);
            if b_rows.is_empty() {
                return Err(StatsError::EmptySubset(name.to_string()));
            }
            let a: Vec<f64> = a_rows.iter().map(|r| r.scores().disparity).collect();
            let b: Vec<f64> = b_rows.iter().map(|r| r.scores().disparity).collect();
            let t = independent_t(&a, &b).map_err(|e| in_subset(name, e))?;
            let max = if t.mean1 > t.mean2 {
                primary_side
            } else {
                contrast_side
            };
            let rc = a_rows.iter().all(|r| r.reverse_coded());
            raw.push((name.to_string(), t, max.to_string(), rc));
        }
    }

    let p: Vec<f64> = raw.iter().map(|(_, t, _, _)| t.p_two_sided).collect();
    let adjusted = bonferroni(&p)?;
    Ok(raw
        .into_iter()
        .zip(adjusted)
        .map(
            |((subset, test, max, reverse_coded), p_adjusted)| StatTestResult {
                model: model.clone(),
                subset,
                test,
                p_adjusted,
                stars: stars(p_adjusted).to_string(),
                max,
                reverse_coded,
            },
        )
        .collect())
}

/// Paired female-vs-male tests per phase and overall, then (when contrast
/// rows are given) disparity comparisons per phase and overall.
pub fn run_rq1_tests(
    rows: &[Rq1Row],
    contrast_rows: &[Rq1Row],
) -> Result<Vec<StatTestResult>, StatsError> {
    let groups: Vec<&str> = HealthActionPhase::ALL.iter().map(|p| p.as_str()).collect();
    build_table(rows, contrast_rows, &groups, true)
}

/// Paired tests per stigma dimension, then (with contrast rows) disparity
/// comparisons per dimension and overall.
pub fn run_rq2_tests(
    rows: &[Rq2Row],
    contrast_rows: &[Rq2Row],
) -> Result<Vec<StatTestResult>, StatsError> {
    let groups: Vec<&str> = StigmaDimension::ALL.iter().map(|d| d.as_str()).collect();
    build_table(rows, contrast_rows, &groups, false)
}

impl StatTestResult {
    pub fn kind(&self) -> TestKind {
        self.test.kind
    }
}
