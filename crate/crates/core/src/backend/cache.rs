use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, BackendError, FillMaskBackend, MaskFillRequest, MaskFillResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Every request goes to the inner backend and is appended to the cache.
    Record,
    /// Only cached pairs are served; anything else is a cache miss.
    ReplayStrict,
    /// Cached pairs are served; misses are delegated and recorded.
    ReplayFallback,
}

impl CacheMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheMode::Record => "record",
            CacheMode::ReplayStrict => "replay-strict",
            CacheMode::ReplayFallback => "replay-fallback",
        }
    }
}

impl FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(CacheMode::Record),
            "replay-strict" => Ok(CacheMode::ReplayStrict),
            "replay-fallback" => Ok(CacheMode::ReplayFallback),
            other => Err(format!(
                "unknown cache mode '{other}' (expected record, replay-strict or replay-fallback)"
            )),
        }
    }
}

/// One JSON-Lines record. Request/response pairs carry `text`, `top_k` and
/// `response`; a line holding only `model_info` stores the backend
/// descriptor so strict replay can run without the backend.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum CacheLine {
    Entry {
        text: String,
        top_k: usize,
        response: MaskFillResponse,
    },
    ModelInfo {
        model_info: BackendDescriptor,
    },
}

#[derive(Debug, Default)]
struct CacheState {
    entries: HashMap<(String, usize), MaskFillResponse>,
    descriptor: Option<BackendDescriptor>,
}

/// Record/replay wrapper around another backend.
///
/// The cache file is JSON Lines, keyed by exact `(text, top_k)`. Appends are
/// serialized through one lock so concurrent callers never interleave lines.
pub struct CachedBackend<B> {
    inner: Option<B>,
    path: PathBuf,
    mode: CacheMode,
    state: Mutex<CacheState>,
    writer: Mutex<Option<File>>,
    descriptor: OnceLock<BackendDescriptor>,
}

impl<B: FillMaskBackend> CachedBackend<B> {
    /// Wraps `inner`. `inner` may be `None` only in strict replay.
    pub fn new(
        inner: Option<B>,
        path: impl Into<PathBuf>,
        mode: CacheMode,
    ) -> Result<Self, BackendError> {
        let path = path.into();
        if inner.is_none() && mode != CacheMode::ReplayStrict {
            return Err(BackendError::InvalidRequest(format!(
                "cache mode {} needs a backend to delegate to",
                mode.as_str()
            )));
        }
        let state = if path.exists() {
            load(&path)?
        } else if mode == CacheMode::Record {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            CacheState::default()
        } else {
            return Err(BackendError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("cache file {} does not exist", path.display()),
            )));
        };
        Ok(Self {
            inner,
            path,
            mode,
            state: Mutex::new(state),
            writer: Mutex::new(None),
            descriptor: OnceLock::new(),
        })
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, line: &CacheLine) -> Result<(), BackendError> {
        let mut json = serde_json::to_string(line).expect("cache lines serialize");
        json.push('\n');
        let mut guard = self.writer.lock().unwrap();
        if guard.is_none() {
            *guard = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&self.path)?,
            );
        }
        let f = guard.as_mut().unwrap();
        f.write_all(json.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    fn inner(&self) -> &B {
        self.inner.as_ref().expect("checked at construction")
    }

    fn delegate_and_record(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        let resp = self.inner().fill_mask(req)?;
        let key = (req.text.clone(), req.top_k);
        let unchanged = {
            let state = self.state.lock().unwrap();
            state.entries.get(&key) == Some(&resp)
        };
        if !unchanged {
            self.append(&CacheLine::Entry {
                text: req.text.clone(),
                top_k: req.top_k,
                response: resp.clone(),
            })?;
            self.state.lock().unwrap().entries.insert(key, resp.clone());
        }
        Ok(resp)
    }
}

impl<B: FillMaskBackend> FillMaskBackend for CachedBackend<B> {
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        if let Some(d) = self.descriptor.get() {
            return Ok(d.clone());
        }
        let stored = self.state.lock().unwrap().descriptor.clone();
        let d = match (self.mode, stored) {
            (CacheMode::ReplayStrict, Some(d)) => d,
            (CacheMode::ReplayStrict, None) => return Err(BackendError::DescriptorMissing),
            (_, stored) => {
                let live = self.inner().describe()?;
                if stored.as_ref() != Some(&live) {
                    self.append(&CacheLine::ModelInfo {
                        model_info: live.clone(),
                    })?;
                    self.state.lock().unwrap().descriptor = Some(live.clone());
                }
                live
            }
        };
        Ok(self.descriptor.get_or_init(|| d).clone())
    }

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        match self.mode {
            CacheMode::Record => self.delegate_and_record(req),
            CacheMode::ReplayStrict | CacheMode::ReplayFallback => {
                let hit = self
                    .state
                    .lock()
                    .unwrap()
                    .entries
                    .get(&(req.text.clone(), req.top_k))
                    .cloned();
                match (hit, self.mode) {
                    (Some(r), _) => Ok(r),
                    (None, CacheMode::ReplayStrict) => Err(BackendError::CacheMiss {
                        text: req.text.clone(),
                        top_k: req.top_k,
                    }),
                    (None, _) => self.delegate_and_record(req),
                }
            }
        }
    }
}

fn load(path: &Path) -> Result<CacheState, BackendError> {
    let reader = BufReader::new(File::open(path)?);
    let mut state = CacheState::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| BackendError::CacheCorrupt {
            path: path.display().to_string(),
            line: idx + 1,
            message,
        };
        match serde_json::from_str::<CacheLine>(&line).map_err(|e| corrupt(e.to_string()))? {
            CacheLine::Entry {
                text,
                top_k,
                response,
            } => {
                response.validate(top_k).map_err(corrupt)?;
                // later lines win, so a re-recorded pair supersedes the old one
                state.entries.insert((text, top_k), response);
            }
            CacheLine::ModelInfo { model_info } => state.descriptor = Some(model_info),
        }
    }
    Ok(state)
}
