//! Paired and independent Student's t-tests, Cohen's d, Bonferroni
//! adjustment and the per-subset test tables built from score rows.

mod special;
mod tables;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use special::{ln_beta, ln_gamma, regularized_incomplete_beta};
pub use tables::{run_rq1_tests, run_rq2_tests, StatTestResult};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations per sample, got {0}")]
    TooFew(usize),
    #[error("zero-variance: all paired differences are identical")]
    ZeroVariance,
    #[error("degenerate: both samples are constant with equal means")]
    Degenerate,
    #[error("degrees of freedom must be positive, got {0}")]
    InvalidDf(f64),
    #[error("p-value {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("empty subset '{0}'")]
    EmptySubset(String),
    #[error("subset '{subset}': {source}")]
    InSubset {
        subset: String,
        #[source]
        source: Box<StatsError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Paired,
    Independent,
}

/// Outcome of one t-test before any multiple-comparison adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub kind: TestKind,
    pub n1: usize,
    pub n2: usize,
    pub mean1: f64,
    pub mean2: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
    pub cohens_d: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (two-pass).
fn variance(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// A spread this small relative to the data is rounding noise, not variance.
fn negligible(sd: f64, scale: f64) -> bool {
    sd <= 16.0 * f64::EPSILON * scale
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Paired t-test on `x - y`; Cohen's d uses the sd of the differences.
pub fn paired_t(x: &[f64], y: &[f64]) -> Result<TTest, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let md = mean(&diffs);
    let sd = variance(&diffs, md).sqrt();
    if negligible(sd, max_abs(&diffs)) {
        return Err(StatsError::ZeroVariance);
    }
    let t = md / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    Ok(TTest {
        kind: TestKind::Paired,
        n1: n,
        n2: n,
        mean1: mean(x),
        mean2: mean(y),
        t,
        df,
        p_two_sided: t_sf_two_sided(t, df)?,
        cohens_d: md / sd,
    })
}

/// Pooled-variance (Student) two-sample t-test; Cohen's d uses the pooled sd.
pub fn independent_t(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::TooFew(n1.min(n2)));
    }
    let (m1, m2) = (mean(a), mean(b));
    let (v1, v2) = (variance(a, m1), variance(b, m2));
    let df = (n1 + n2 - 2) as f64;
    let sp = (((n1 - 1) as f64 * v1 + (n2 - 1) as f64 * v2) / df).sqrt();
    let diff = m1 - m2;
    let (t, cohens_d) = if negligible(sp, max_abs(a).max(max_abs(b))) {
        if diff == 0.0 {
            return Err(StatsError::Degenerate);
        }
        let inf = f64::INFINITY.copysign(diff);
        (inf, inf)
    } else {
        (
            diff / (sp * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt()),
            diff / sp,
        )
    };
    Ok(TTest {
        kind: TestKind::Independent,
        n1,
        n2,
        mean1: m1,
        mean2: m2,
        t,
        df,
        p_two_sided: t_sf_two_sided(t, df)?,
        cohens_d,
    })
}

/// Two-sided Student-t tail mass `P(|T| ≥ |t|)`, computed as
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn t_sf_two_sided(t: f64, df: f64) -> Result<f64, StatsError> {
    if df.is_nan() || df <= 0.0 {
        return Err(StatsError::InvalidDf(df));
    }
    if t.is_nan() {
        return Ok(f64::NAN);
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    Ok(special::incomplete_beta_split(df / 2.0, 0.5, x, y))
}

/// `min(1, m·p)` with `m` the number of p-values in the family.
pub fn bonferroni(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    let m = p_values.len() as f64;
    p_values
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok((p * m).min(1.0))
            } else {
                Err(StatsError::OutOfRange(p))
            }
        })
        .collect()
}

/// `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}
