//! End-to-end audit runs: configuration, orchestration and bundle output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    BackendDescriptor, BackendError, CacheMode, CachedBackend, FillMaskBackend, HttpBackend,
    SyntheticBackend,
};
use crate::error::PromptError;
use crate::exec::Execution;
use crate::lexicon::{GenderLexicon, LexiconError, LexiconStats};
use crate::prompts::{
    builtin_rq1_templates, builtin_rq2_templates, read_templates_csv, DiagnosisSet,
    DiagnosisSetName, PromptTemplate,
};
use crate::report::{
    rows_to_csv, rows_to_json, stats_to_csv, stats_to_json, stats_to_markdown, OutputFormat,
};
use crate::rq1::{run_rq1, Rq1Row, DEFAULT_FLOOR, DEFAULT_TOP_K};
use crate::rq2::{run_rq2_with_trees, ExpansionParams, PhraseTree, Rq2Row};
use crate::stats::{run_rq1_tests, run_rq2_tests, StatTestResult, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rq {
    Rq1,
    Rq2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SetSelector {
    Mh,
    Nonmh,
    Both,
}

impl SetSelector {
    pub fn sets(self) -> Vec<DiagnosisSetName> {
        match self {
            SetSelector::Mh => vec![DiagnosisSetName::Mh],
            SetSelector::Nonmh => vec![DiagnosisSetName::NonMh],
            SetSelector::Both => vec![DiagnosisSetName::Mh, DiagnosisSetName::NonMh],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendSource {
    /// Remote service base URL.
    Url(String),
    /// Synthetic backend description (JSON).
    Synthetic(PathBuf),
    /// Strict replay from the cache alone.
    CacheOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheConfig {
    pub path: PathBuf,
    pub mode: CacheMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LexiconPaths {
    pub nouns: PathBuf,
    pub female_names: PathBuf,
    pub male_names: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub rq: Rq,
    pub set: SetSelector,
    pub backend: BackendSource,
    pub cache: Option<CacheConfig>,
    pub floor: f64,
    pub top_k: Option<usize>,
    pub beam: Option<usize>,
    pub max_depth: Option<usize>,
    pub out_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
    /// `None` uses the bundled lexicon.
    pub lexicon: Option<LexiconPaths>,
    /// `None` uses the built-in templates for `rq`.
    pub templates: Option<PathBuf>,
    pub dump_trees: Option<PathBuf>,
    #[serde(skip)]
    pub execution: Execution,
}

impl RunConfig {
    pub fn new(
        rq: Rq,
        set: SetSelector,
        backend: BackendSource,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            rq,
            set,
            backend,
            cache: None,
            floor: DEFAULT_FLOOR,
            top_k: None,
            beam: None,
            max_depth: None,
            out_dir: out_dir.into(),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            lexicon: None,
            templates: None,
            dump_trees: None,
            execution: Execution::default(),
        }
    }

    pub fn with_cache(mut self, path: impl Into<PathBuf>, mode: CacheMode) -> Self {
        self.cache = Some(CacheConfig {
            path: path.into(),
            mode,
        });
        self
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.floor) {
            return bad("--floor must be in [0, 1)");
        }
        match self.rq {
            Rq::Rq1 => {
                if self.beam.is_some() || self.max_depth.is_some() {
                    return bad("--beam and --max-depth only apply to --rq rq2");
                }
                if self.top_k == Some(0) {
                    return bad("--top-k must be at least 1");
                }
            }
            Rq::Rq2 => {
                if self.top_k.is_some() {
                    return bad("--top-k only applies to --rq rq1; use --beam for rq2");
                }
                if self.beam == Some(0) {
                    return bad("--beam must be at least 1");
                }
            }
        }
        if self.dump_trees.is_some() && self.rq != Rq::Rq2 {
            return bad("--dump-trees only applies to --rq rq2");
        }
        if self.formats.is_empty() {
            return bad("at least one output format is required");
        }
        match (&self.backend, &self.cache) {
            (BackendSource::CacheOnly, None) => {
                bad("a backend (--backend-url or --synthetic) or a --cache is required")
            }
            (BackendSource::CacheOnly, Some(c)) if c.mode != CacheMode::ReplayStrict => {
                bad("cache modes other than replay-strict need --backend-url or --synthetic")
            }
            _ => Ok(()),
        }
    }

    pub fn expansion_params(&self) -> ExpansionParams {
        let d = ExpansionParams::default();
        ExpansionParams {
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            beam: self.beam.unwrap_or(d.beam),
            floor: self.floor,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("lexicon: {0}")]
    Lexicon(#[from] LexiconError),
    #[error("backend failure: {0}")]
    Backend(#[from] BackendError),
    #[error("backend failure at {0}")]
    Prompt(#[from] PromptError),
    #[error("statistics: {0}")]
    Stats(#[from] StatsError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing output: {0}")]
    Csv(#[from] csv::Error),
}

impl RunError {
    /// 2 for backend failures, 3 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Lexicon(_) => 3,
            RunError::Backend(_) | RunError::Prompt(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CacheManifest {
    pub path: PathBuf,
    pub mode: CacheMode,
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub started_at: String,
    pub finished_at: String,
    pub config: RunConfig,
    pub model_id: String,
    pub mask_token: String,
    pub cache: Option<CacheManifest>,
    pub lexicon: LexiconStats,
    pub row_counts: Vec<(DiagnosisSetName, usize)>,
    pub stat_tests: usize,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum RowSet {
    Rq1(Vec<Rq1Row>),
    Rq2(Vec<Rq2Row>),
}

impl RowSet {
    pub fn len(&self) -> usize {
        match self {
            RowSet::Rq1(r) => r.len(),
            RowSet::Rq2(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub rows: Vec<(DiagnosisSetName, RowSet)>,
    pub stats: Vec<StatTestResult>,
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

pub fn load_lexicon(paths: Option<&LexiconPaths>) -> Result<GenderLexicon, LexiconError> {
    match paths {
        Some(p) => GenderLexicon::load(&p.nouns, &p.female_names, &p.male_names),
        None => Ok(GenderLexicon::bundled()),
    }
}

fn load_templates(cfg: &RunConfig) -> Result<Vec<PromptTemplate>, RunError> {
    match &cfg.templates {
        None => Ok(match cfg.rq {
            Rq::Rq1 => builtin_rq1_templates(),
            Rq::Rq2 => builtin_rq2_templates(),
        }),
        Some(path) => {
            let f = fs::File::open(path)
                .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            let t = read_templates_csv(f, "user")
                .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            let wrong_kind = t.iter().any(|t| match cfg.rq {
                Rq::Rq1 => t.meta.phase().is_none(),
                Rq::Rq2 => t.meta.dimension().is_none(),
            });
            if t.is_empty() || wrong_kind {
                return Err(RunError::Config(format!(
                    "{}: templates must be non-empty and all carry {}",
                    path.display(),
                    if cfg.rq == Rq::Rq1 {
                        "health action phases"
                    } else {
                        "stigma dimensions"
                    }
                )));
            }
            Ok(t)
        }
    }
}

fn build_backend(cfg: &RunConfig) -> Result<Box<dyn FillMaskBackend>, RunError> {
    let inner: Option<Box<dyn FillMaskBackend>> = match &cfg.backend {
        BackendSource::Url(url) => Some(Box::new(HttpBackend::from_env(url.clone()))),
        BackendSource::Synthetic(path) => {
            Some(Box::new(SyntheticBackend::from_file(path).map_err(
                |e| RunError::Config(format!("synthetic backend {}: {e}", path.display())),
            )?))
        }
        BackendSource::CacheOnly => None,
    };
    match &cfg.cache {
        None => Ok(inner.expect("validated: backend present without cache")),
        Some(c) => {
            let cached = CachedBackend::new(inner, &c.path, c.mode).map_err(|e| match e {
                BackendError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                    RunError::Config(io.to_string())
                }
                other => RunError::Backend(other),
            })?;
            Ok(Box::new(cached))
        }
    }
}

fn file_sha256(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| hex::encode(Sha256::digest(&b)))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Runs one audit and writes the report bundle into `cfg.out_dir`.
///
/// Everything is computed before the first file is written; if a write
/// fails, files already written by this run are removed.
pub fn cmd_run(cfg: &RunConfig) -> Result<ReportBundle, RunError> {
    let started_at = now();
    cfg.validate()?;
    let lex = load_lexicon(cfg.lexicon.as_ref())?;
    let templates = load_templates(cfg)?;
    let backend = build_backend(cfg)?;
    let BackendDescriptor {
        model_id,
        mask_token,
    } = backend.describe()?;

    let mut rows = Vec::new();
    let mut trees: Vec<(DiagnosisSetName, Vec<PhraseTree>)> = Vec::new();
    for set in cfg.set.sets() {
        let dset = DiagnosisSet::builtin(set);
        let rs = match cfg.rq {
            Rq::Rq1 => RowSet::Rq1(run_rq1(
                &templates,
                &dset,
                &backend,
                &lex,
                cfg.floor,
                cfg.top_k.unwrap_or(DEFAULT_TOP_K),
                cfg.execution,
            )?),
            Rq::Rq2 => {
                let (r, t): (Vec<_>, Vec<_>) = run_rq2_with_trees(
                    &templates,
                    &dset,
                    &backend,
                    &lex,
                    cfg.expansion_params(),
                    cfg.execution,
                )?
                .into_iter()
                .unzip();
                if cfg.dump_trees.is_some() {
                    trees.push((set, t));
                }
                RowSet::Rq2(r)
            }
        };
        rows.push((set, rs));
    }

    let stats = match (&rows[0].1, rows.get(1).map(|r| &r.1)) {
        (RowSet::Rq1(a), Some(RowSet::Rq1(b))) => run_rq1_tests(a, b)?,
        (RowSet::Rq1(a), _) => run_rq1_tests(a, &[])?,
        (RowSet::Rq2(a), Some(RowSet::Rq2(b))) => run_rq2_tests(a, b)?,
        (RowSet::Rq2(a), _) => run_rq2_tests(a, &[])?,
    };

    let mut outputs: Vec<(PathBuf, String)> = Vec::new();
    for (set, rs) in &rows {
        for fmt in &cfg.formats {
            let body = match (fmt, rs) {
                (OutputFormat::Csv, RowSet::Rq1(r)) => rows_to_csv(r)?,
                (OutputFormat::Csv, RowSet::Rq2(r)) => rows_to_csv(r)?,
                (OutputFormat::Json, RowSet::Rq1(r)) => rows_to_json(r),
                (OutputFormat::Json, RowSet::Rq2(r)) => rows_to_json(r),
                (OutputFormat::Md, _) => continue,
            };
            outputs.push((
                cfg.out_dir
                    .join(format!("rows_{}.{}", set.slug(), fmt.extension())),
                body,
            ));
        }
    }
    for fmt in &cfg.formats {
        let body = match fmt {
            OutputFormat::Csv => stats_to_csv(&stats)?,
            OutputFormat::Json => stats_to_json(&stats),
            OutputFormat::Md => stats_to_markdown(&stats),
        };
        outputs.push((cfg.out_dir.join(format!("stats.{}", fmt.extension())), body));
    }
    let manifest_path = cfg.out_dir.join("manifest.json");
    // tree dumps are covered by `config.dump_trees` rather than listed one by one
    let report_files: Vec<String> = outputs
        .iter()
        .map(|(p, _)| p.display().to_string())
        .chain(std::iter::once(manifest_path.display().to_string()))
        .collect();
    if let Some(dir) = &cfg.dump_trees {
        for (set, ts) in &trees {
            for (i, t) in ts.iter().enumerate() {
                let name = format!("{}_{}_{:02}.json", set.slug(), t.template_id, i % 11 + 1);
                let mut body = serde_json::to_string_pretty(t).expect("trees serialize");
                body.push('\n');
                outputs.push((dir.join(name), body));
            }
        }
    }

    let mut manifest = Manifest {
        tool: "stigma-probe",
        tool_version: env!("CARGO_PKG_VERSION"),
        started_at,
        finished_at: String::new(),
        config: cfg.clone(),
        model_id,
        mask_token,
        cache: None,
        lexicon: lex.stats().clone(),
        row_counts: rows.iter().map(|(s, r)| (*s, r.len())).collect(),
        stat_tests: stats.len(),
        outputs: report_files,
    };
    drop(backend);
    manifest.cache = cfg.cache.as_ref().map(|c| CacheManifest {
        path: c.path.clone(),
        mode: c.mode,
        sha256: file_sha256(&c.path),
    });
    manifest.finished_at = now();
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    outputs.push((manifest_path, manifest_json));

    let files = write_all(&outputs)?;
    Ok(ReportBundle {
        rows,
        stats,
        manifest,
        files,
    })
}

fn write_all(outputs: &[(PathBuf, String)]) -> Result<Vec<PathBuf>, RunError> {
    let mut written = Vec::new();
    for (path, body) in outputs {
        let res = path
            .parent()
            .map_or(Ok(()), fs::create_dir_all)
            .and_then(|_| fs::write(path, body));
        if let Err(e) = res {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e.into());
        }
        written.push(path.clone());
    }
    Ok(written)
}
