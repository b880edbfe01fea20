use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BackendDescriptor, BackendError, FillMaskBackend, MaskFillCandidate, MaskFillRequest,
    MaskFillResponse, MASS_TOLERANCE,
};

/// One vocabulary item for the pseudo-random generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token_str: String,
    pub weight: f64,
}

/// Multiplies the weight of `tokens` whenever the request text contains any
/// of the `contains` substrings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBoost {
    pub contains: Vec<String>,
    pub tokens: Vec<String>,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    /// Total probability mass handed out per request.
    pub mass: f64,
    /// Relative per-request weight perturbation in [0, 1).
    #[serde(default)]
    pub jitter: f64,
    pub vocabulary: Vec<VocabEntry>,
    #[serde(default)]
    pub boosts: Vec<ContextBoost>,
}

/// On-disk description of a synthetic backend.
///
/// Requests are answered by the first match of: an exact-text rule, the
/// generator, the default table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_mask")]
    pub mask_token: String,
    #[serde(default)]
    pub default: Vec<MaskFillCandidate>,
    #[serde(default)]
    pub rules: BTreeMap<String, Vec<MaskFillCandidate>>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            model_id: default_model_id(),
            mask_token: default_mask(),
            default: Vec::new(),
            rules: BTreeMap::new(),
            generator: None,
        }
    }
}

fn default_model_id() -> String {
    "synthetic".into()
}

fn default_mask() -> String {
    "<mask>".into()
}

#[derive(Debug)]
pub struct SyntheticBackend {
    spec: SyntheticSpec,
    latency: Duration,
    calls: AtomicUsize,
}

impl SyntheticBackend {
    pub fn new(mut spec: SyntheticSpec) -> Result<Self, BackendError> {
        if spec.mask_token.is_empty() {
            return Err(BackendError::InvalidPayload(
                "mask_token must not be empty".into(),
            ));
        }
        let mut tables: Vec<(&str, &mut Vec<MaskFillCandidate>)> =
            vec![("default", &mut spec.default)];
        tables.extend(spec.rules.iter_mut().map(|(k, v)| (k.as_str(), v)));
        for (name, table) in tables {
            sort_desc(table);
            let resp = MaskFillResponse {
                model_id: String::new(),
                candidates: table.clone(),
            };
            resp.validate(usize::MAX)
                .map_err(|e| BackendError::InvalidPayload(format!("table '{name}': {e}")))?;
        }
        if let Some(g) = &spec.generator {
            if !(0.0..=1.0).contains(&g.mass) || !(0.0..1.0).contains(&g.jitter) {
                return Err(BackendError::InvalidPayload(
                    "generator mass must be in [0,1] and jitter in [0,1)".into(),
                ));
            }
            if g.vocabulary
                .iter()
                .any(|v| v.weight.is_nan() || v.weight <= 0.0)
            {
                return Err(BackendError::InvalidPayload(
                    "vocabulary weights must be positive".into(),
                ));
            }
        }
        Ok(Self {
            spec,
            latency: Duration::ZERO,
            calls: AtomicUsize::new(0),
        })
    }

    /// Answers every request with the same table.
    pub fn from_table<'a>(
        table: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self, BackendError> {
        Self::new(SyntheticSpec {
            model_id: default_model_id(),
            mask_token: default_mask(),
            default: table
                .into_iter()
                .map(|(t, s)| MaskFillCandidate::new(t, s))
                .collect(),
            ..Default::default()
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| {
            BackendError::InvalidPayload(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::new(spec)
    }

    /// Adds a fixed table for one exact request text.
    pub fn with_rule<'a>(
        mut self,
        text: &str,
        table: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Self {
        let mut cands: Vec<_> = table
            .into_iter()
            .map(|(t, s)| MaskFillCandidate::new(t, s))
            .collect();
        sort_desc(&mut cands);
        self.spec.rules.insert(text.to_string(), cands);
        self
    }

    /// Sleeps this long on every call; stands in for network round trips.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn table_for(&self, text: &str) -> Vec<MaskFillCandidate> {
        if let Some(t) = self.spec.rules.get(text) {
            return t.clone();
        }
        if let Some(g) = &self.spec.generator {
            return generate(g, text);
        }
        self.spec.default.clone()
    }
}

impl FillMaskBackend for SyntheticBackend {
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        Ok(BackendDescriptor {
            model_id: self.spec.model_id.clone(),
            mask_token: self.spec.mask_token.clone(),
        })
    }

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        req.validate(&self.spec.mask_token)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let mut candidates = self.table_for(&req.text);
        candidates.truncate(req.top_k);
        Ok(MaskFillResponse {
            model_id: self.spec.model_id.clone(),
            candidates,
        })
    }
}

fn sort_desc(c: &mut [MaskFillCandidate]) {
    c.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.token_str.cmp(&b.token_str))
    });
}

/// Uniform value in [0,1) derived from the seed, text and token.
fn unit_hash(seed: u64, text: &str, token: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    h.update([0]);
    h.update(token.as_bytes());
    let digest = h.finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().unwrap()) >> 11;
    bits as f64 / (1u64 << 53) as f64
}

fn generate(g: &GeneratorSpec, text: &str) -> Vec<MaskFillCandidate> {
    let weights: Vec<f64> = g
        .vocabulary
        .iter()
        .map(|v| {
            let boost: f64 = g
                .boosts
                .iter()
                .filter(|b| {
                    b.tokens.contains(&v.token_str)
                        && b.contains.iter().any(|c| text.contains(c.as_str()))
                })
                .map(|b| b.factor)
                .product();
            let noise = 1.0 + g.jitter * (2.0 * unit_hash(g.seed, text, &v.token_str) - 1.0);
            v.weight * boost * noise
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut out: Vec<_> = g
        .vocabulary
        .iter()
        .zip(&weights)
        .map(|(v, w)| MaskFillCandidate::new(v.token_str.clone(), g.mass * w / total))
        .collect();
    sort_desc(&mut out);
    // guard against the sum drifting a hair above `mass` through rounding
    let sum: f64 = out.iter().map(|c| c.score).sum();
    if sum > 1.0 {
        for c in &mut out {
            c.score /= sum + MASS_TOLERANCE;
        }
    }
    out
}
