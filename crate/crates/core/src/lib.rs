//! Audits masked language models for gendered mental-health stigma.
//!
//! Prompt templates are expanded over mental-health and general-health
//! diagnoses, sent to a fill-mask backend, and the returned candidates are
//! bucketed as female, male or unspecified. Single-token aggregation lives in
//! [`rq1`], recursive noun-phrase growth in [`rq2`], and the t-tests that
//! compare the buckets in [`stats`].

pub mod backend;
pub mod error;
pub mod exec;
pub mod lexicon;
pub mod prompts;
pub mod report;
pub mod rq1;
pub mod rq2;
pub mod run;
pub mod stats;

pub use backend::{
    BackendDescriptor, BackendError, CacheMode, CachedBackend, FillMaskBackend, HttpBackend,
    MaskFillCandidate, MaskFillRequest, MaskFillResponse, SyntheticBackend,
};
pub use error::PromptError;
pub use exec::Execution;
pub use lexicon::{normalize_token, GenderLabel, GenderLexicon};
pub use prompts::{DiagnosisSet, DiagnosisSetName, PromptInstance, PromptTemplate};
pub use rq1::{aggregate_scores, run_rq1, GenderScores, Rq1Row};
pub use rq2::{
    aggregate_phrase_scores, expand_phrases, run_rq2, ExpansionParams, PhraseTree, Rq2Row,
};
pub use stats::{bonferroni, independent_t, paired_t, stars, t_sf_two_sided, StatTestResult};
