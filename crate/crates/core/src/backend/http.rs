use std::sync::OnceLock;
use std::time::Duration;

use serde::Serialize;

use super::{BackendDescriptor, BackendError, FillMaskBackend, MaskFillRequest, MaskFillResponse};

/// Environment variable holding an optional bearer token for the service.
pub const TOKEN_ENV_VAR: &str = "STIGMA_PROBE_BACKEND_TOKEN";

/// Delays between attempts on transport failures and HTTP 503. Other HTTP
/// error statuses are never retried.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            delays: vec![
                Duration::from_millis(500),
                Duration::from_secs(1),
                Duration::from_secs(2),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { delays: Vec::new() }
    }
}

/// Client for the `GET /model-info` + `POST /fill-mask` wire protocol.
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    token: Option<String>,
    retry: RetryPolicy,
    descriptor: OnceLock<BackendDescriptor>,
}

#[derive(Serialize)]
struct FillMaskBody<'a> {
    text: &'a str,
    top_k: usize,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(120))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            token: None,
            retry: RetryPolicy::default(),
            descriptor: OnceLock::new(),
        }
    }

    /// Reads the bearer token from [`TOKEN_ENV_VAR`] when set.
    pub fn from_env(base_url: impl Into<String>) -> Self {
        let token = std::env::var(TOKEN_ENV_VAR).ok().filter(|t| !t.is_empty());
        Self::new(base_url).with_token(token)
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn authorize(&self, req: ureq::Request) -> ureq::Request {
        match &self.token {
            Some(t) => req.set("Authorization", &format!("Bearer {t}")),
            None => req,
        }
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut delays = self.retry.delays.iter();
        loop {
            match call() {
                Err(e) if e.is_retryable() => match delays.next() {
                    Some(d) => std::thread::sleep(*d),
                    None => return Err(e),
                },
                other => return other,
            }
        }
    }

    fn fetch_descriptor(&self) -> Result<BackendDescriptor, BackendError> {
        let url = format!("{}/model-info", self.base_url);
        let resp = self.with_retries(|| {
            self.authorize(self.agent.get(&url))
                .call()
                .map_err(map_ureq_error)
        })?;
        let d: BackendDescriptor = resp
            .into_json()
            .map_err(|e| BackendError::InvalidPayload(format!("model-info: {e}")))?;
        if d.mask_token.is_empty() {
            return Err(BackendError::InvalidPayload(
                "model-info: empty mask_token".into(),
            ));
        }
        Ok(d)
    }
}

fn map_ureq_error(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            let msg = format!("HTTP {code}: {}", body.trim());
            // 503 means the service is still loading its model
            if code == 503 {
                BackendError::Transport(msg)
            } else {
                BackendError::Model(msg)
            }
        }
        ureq::Error::Transport(t) => BackendError::Transport(t.to_string()),
    }
}

impl FillMaskBackend for HttpBackend {
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        if let Some(d) = self.descriptor.get() {
            return Ok(d.clone());
        }
        let d = self.fetch_descriptor()?;
        Ok(self.descriptor.get_or_init(|| d).clone())
    }

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        let mask = self.describe()?.mask_token;
        req.validate(&mask)?;
        let url = format!("{}/fill-mask", self.base_url);
        let body = FillMaskBody {
            text: &req.text,
            top_k: req.top_k,
        };
        let resp = self.with_retries(|| {
            self.authorize(self.agent.post(&url))
                .send_json(&body)
                .map_err(map_ureq_error)
        })?;
        let parsed: MaskFillResponse = resp
            .into_json()
            .map_err(|e| BackendError::InvalidPayload(format!("fill-mask: {e}")))?;
        parsed.validate(req.top_k).map_err(|e| {
            BackendError::InvalidPayload(format!("fill-mask for {:?}: {e}", req.text))
        })?;
        Ok(parsed)
    }
}
