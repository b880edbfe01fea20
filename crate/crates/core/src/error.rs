use thiserror::Error;

use crate::backend::BackendError;

/// A backend failure tied to the prompt (and partial phrase) that caused it.
#[derive(Debug, Error)]
#[error("{template_id} [{diagnosis}]{}: {source}", phrase.as_deref().map(|p| format!(" phrase '{p}'")).unwrap_or_default())]
pub struct PromptError {
    pub template_id: String,
    pub diagnosis: String,
    pub phrase: Option<String>,
    #[source]
    pub source: Box<BackendError>,
}
