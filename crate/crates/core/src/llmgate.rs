//! Completion endpoint client with record/replay cassettes.
//!
//! The live backend speaks the plain completion shape: `POST
//! {base_url}/completions` with `{model, prompt, temperature, top_p,
//! max_tokens}` and reads `choices[0].text`. A [`Cassette`] maps request
//! fingerprints to recorded responses so downstream stages can run offline.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 64;
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_IN_FLIGHT: usize = 4;
pub const DEFAULT_API_KEY_ENV: &str = "TEMPALIGN_API_KEY";
pub const TOP_P_SWEEP: [f64; 3] = [1.0, 0.8, 0.6];

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("no recorded response for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("fingerprint {fingerprint} is shared by two different requests")]
    Collision { fingerprint: String },
    #[error("cassette line {line}: {message}")]
    Cassette { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, prompt: impl Into<String>, top_p: f64) -> Self {
        Self {
            model: model.into(),
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            top_p,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidRequest(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }

    /// Hex SHA-256 over length-prefixed prompt, `top_p` bits, `max_tokens`
    /// and length-prefixed model name.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"tempalign.fp.v1");
        h.update((self.prompt.len() as u64).to_le_bytes());
        h.update(self.prompt.as_bytes());
        h.update(self.top_p.to_bits().to_le_bytes());
        h.update(self.max_tokens.to_le_bytes());
        h.update((self.model.len() as u64).to_le_bytes());
        h.update(self.model.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fp: String,
    pub request: CompletionRequest,
    pub response: String,
}

/// Recorded responses keyed by fingerprint, serialized in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CassetteEntry> {
        self.entries.values()
    }

    pub fn contains(&self, request: &CompletionRequest) -> bool {
        self.entries.contains_key(&request.fingerprint())
    }

    pub fn lookup(&self, request: &CompletionRequest) -> Result<Option<&str>, LlmError> {
        let fp = request.fingerprint();
        match self.entries.get(&fp) {
            None => Ok(None),
            Some(e) if e.request == *request => Ok(Some(&e.response)),
            Some(_) => Err(LlmError::Collision { fingerprint: fp }),
        }
    }

    /// Adds an entry. Returns `false` when the request was already present.
    pub fn insert(&mut self, request: CompletionRequest, response: String) -> Result<bool, LlmError> {
        let fp = request.fingerprint();
        if let Some(existing) = self.entries.get(&fp) {
            if existing.request != request {
                return Err(LlmError::Collision { fingerprint: fp });
            }
            return Ok(false);
        }
        self.entries.insert(fp.clone(), CassetteEntry { fp, request, response });
        Ok(true)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in self.entries.values() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, LlmError> {
        let mut cassette = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| LlmError::Cassette { line: idx + 1, message };
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let fp = entry.request.fingerprint();
            if fp != entry.fp {
                return Err(bad(format!("stored fingerprint {} does not match request ({fp})", entry.fp)));
            }
            if cassette.entries.contains_key(&fp) {
                return Err(bad(format!("duplicate fingerprint {fp}")));
            }
            cassette.entries.insert(fp, entry);
        }
        Ok(cassette)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Self::read_jsonl(std::io::BufReader::new(fs::File::open(path)?))
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        fs::write(&tmp, self.to_jsonl())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

pub trait CompletionBackend: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    /// Bearer credential, usually read from [`DEFAULT_API_KEY_ENV`].
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            timeout: DEFAULT_TIMEOUT,
            max_retries: DEFAULT_MAX_RETRIES,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn with_env_key(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
    retries: AtomicU64,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        if config.base_url.trim().is_empty() {
            return Err(LlmError::NotConfigured("empty base URL".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent, retries: AtomicU64::new(0) })
    }

    /// Total retries issued so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut call = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_vec(request).map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
        let mut response = call.send(&body[..]).map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Http { status, body: text });
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].text".into()))
    }
}

impl CompletionBackend for LiveBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(request) {
                Ok(text) => {
                    if attempt > 1 {
                        log::info!("completion succeeded after {} retries", attempt - 1);
                    }
                    return Ok(text);
                }
                Err(e) if e.retryable() && attempt <= self.config.max_retries => {
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!("retry {attempt}/{} after {e}", self.config.max_retries);
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
                Err(e) if e.retryable() => {
                    return Err(LlmError::RetriesExhausted { attempts: attempt, last: e.to_string() });
                }
                Err(e) => return Err(e),
            }
        }
    }
}

pub struct ReplayBackend {
    cassette: Cassette,
    strict: bool,
    misses: AtomicUsize,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette, strict: bool) -> Self {
        Self { cassette, strict, misses: AtomicUsize::new(0) }
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

impl CompletionBackend for ReplayBackend {
    /// A miss outside strict mode yields an empty completion.
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        match self.cassette.lookup(request)? {
            Some(text) => Ok(text.to_string()),
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                let fingerprint = request.fingerprint();
                if self.strict {
                    return Err(LlmError::ReplayMiss { fingerprint });
                }
                log::warn!("replay miss for {fingerprint}; returning an empty completion");
                Ok(String::new())
            }
        }
    }
}

/// Runs `requests` with at most `in_flight` concurrent calls. Results keep
/// input order; after the first failure no new requests are started.
pub fn complete_all(
    backend: &dyn CompletionBackend,
    requests: &[CompletionRequest],
    in_flight: usize,
) -> Vec<Option<Result<String, LlmError>>> {
    let slots: Mutex<Vec<Option<Result<String, LlmError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = in_flight.max(1).min(requests.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(request) = requests.get(i) else { break };
                let result = backend.complete(request);
                if result.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(result);
            });
        }
    });
    slots.into_inner().unwrap_or_else(|p| p.into_inner())
}

/// Like [`complete_all`] but fails on the first error by index.
pub fn complete_ordered(
    backend: &dyn CompletionBackend,
    requests: &[CompletionRequest],
    in_flight: usize,
) -> Result<Vec<String>, LlmError> {
    let mut out = Vec::with_capacity(requests.len());
    let mut first_error = None;
    for slot in complete_all(backend, requests, in_flight) {
        match slot {
            Some(Ok(text)) => out.push(text),
            Some(Err(e)) => {
                first_error.get_or_insert(e);
            }
            None => {}
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Records one entry per distinct fingerprint not already in `cassette`.
/// On failure the successful part is kept in `cassette` and, if `sink` is
/// given, flushed to disk before the error is returned.
pub fn record_run(
    requests: &[CompletionRequest],
    live: &dyn CompletionBackend,
    cassette: &mut Cassette,
    sink: Option<&Path>,
    in_flight: usize,
) -> Result<usize, LlmError> {
    for r in requests {
        r.validate()?;
        cassette.lookup(r)?;
    }
    let mut seen = HashSet::new();
    let pending: Vec<CompletionRequest> = requests
        .iter()
        .filter(|r| !cassette.contains(r) && seen.insert(r.fingerprint()))
        .cloned()
        .collect();
    let mut added = 0;
    let mut first_error = None;
    for (request, slot) in pending.iter().zip(complete_all(live, &pending, in_flight)) {
        match slot {
            Some(Ok(text)) => {
                cassette.insert(request.clone(), text)?;
                added += 1;
            }
            Some(Err(e)) => {
                first_error.get_or_insert(e);
            }
            None => {}
        }
    }
    if let Some(path) = sink {
        cassette.save(path)?;
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(added),
    }
}
