//! Yes/no link validation of candidate pairs with a chat-style LLM, plus a
//! deterministic offline validator and an append-only verdict cache.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::candidates::CandidatePair;
use crate::corpus::Checksum;
use crate::normalize::{fold_char, normalize_surface};

pub const DEFAULT_SYSTEM_PROMPT: &str =
    "Do you agree with the provided question? Please answer with one word, either 'yes' or 'no'.";
pub const DEFAULT_USER_PROMPT: &str = "In the sentence '{sentence}': Is {chemical} explicitly described as {role}?";
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const STUB_ID: &str = "stub";
pub const ENDPOINT_ENV: &str = "CEAR_LLM_ENDPOINT";
pub const TOKEN_ENV: &str = "CEAR_LLM_TOKEN";

const PLACEHOLDERS: [&str; 3] = ["{sentence}", "{chemical}", "{role}"];
const STUB_CUES: [&str; 5] = ["as", "is", "are", "was", "used"];

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("user prompt must contain {placeholder} exactly once (found {count})")]
    MissingPlaceholder { placeholder: &'static str, count: usize },
    #[error("invalid sampling config: {0}")]
    InvalidSampling(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("verdict cache {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("verdict cache {path} line {line}: {source}")]
    CacheFormat {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("chat request failed after {attempts} attempt(s): {message}")]
pub struct TransportError {
    pub attempts: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    system: String,
    user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate { system: DEFAULT_SYSTEM_PROMPT.to_string(), user: DEFAULT_USER_PROMPT.to_string() }
    }
}

impl PromptTemplate {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Result<Self, ValidateError> {
        let user = user.into();
        for placeholder in PLACEHOLDERS {
            let count = user.matches(placeholder).count();
            if count != 1 {
                return Err(ValidateError::MissingPlaceholder { placeholder, count });
            }
        }
        Ok(PromptTemplate { system: system.into(), user })
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    /// Short digest identifying the template in cache keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }
}

/// Substitutes the pair into the user template in one pass; the system
/// prompt is returned unchanged.
pub fn render_prompts(pair: &CandidatePair, tmpl: &PromptTemplate) -> (String, String) {
    let mut user = String::with_capacity(tmpl.user.len() + pair.sentence_text.len() + 32);
    let mut rest = tmpl.user.as_str();
    while let Some((at, placeholder)) =
        PLACEHOLDERS.iter().filter_map(|p| rest.find(p).map(|i| (i, *p))).min_by_key(|(i, _)| *i)
    {
        user.push_str(&rest[..at]);
        user.push_str(match placeholder {
            "{sentence}" => &pair.sentence_text,
            "{chemical}" => &pair.chemical_surface,
            _ => &pair.role_surface,
        });
        rest = &rest[at + placeholder.len()..];
    }
    user.push_str(rest);
    (tmpl.system.clone(), user)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub model_name: String,
    pub endpoint: String,
}

impl SamplingConfig {
    pub fn new(model_name: impl Into<String>, endpoint: impl Into<String>) -> Self {
        SamplingConfig {
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            model_name: model_name.into(),
            endpoint: endpoint.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ValidateError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ValidateError::InvalidSampling(format!("temperature {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ValidateError::InvalidSampling(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Confirmed,
    Rejected,
    Ambiguous,
}

/// Reads a one-word yes/no reply. Anything not starting with "yes" or "no"
/// is ambiguous.
pub fn parse_answer(raw: &str) -> Verdict {
    let lowered = raw.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    let first: String = trimmed.chars().take_while(|c| c.is_alphanumeric()).collect();
    match first.as_str() {
        "yes" => Verdict::Confirmed,
        "no" => Verdict::Rejected,
        _ => Verdict::Ambiguous,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub pair: CandidatePair,
    pub verdict: Verdict,
    pub raw_answer: String,
    pub validator_id: String,
    pub template_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    doc: Checksum,
    page: u32,
    offset: usize,
    chemical: String,
    role: String,
    validator_id: String,
    template_hash: String,
}

impl CacheKey {
    pub fn new(pair: &CandidatePair, validator_id: &str, template_hash: &str) -> Self {
        CacheKey {
            doc: pair.location.doc_checksum.clone(),
            page: pair.location.page,
            offset: pair.location.offset,
            chemical: normalize_surface(&pair.chemical_surface),
            role: normalize_surface(&pair.role_surface),
            validator_id: validator_id.to_string(),
            template_hash: template_hash.to_string(),
        }
    }

    fn of(record: &VerdictRecord) -> Self {
        CacheKey::new(&record.pair, &record.validator_id, &record.template_hash)
    }
}

/// Something that answers a rendered yes/no question about a pair.
pub trait Validator: Sync {
    fn id(&self) -> &str;
    fn ask(&self, pair: &CandidatePair, system: &str, user: &str) -> Result<String, TransportError>;
}

/// Offline validator: "yes" iff a cue token sits between the first
/// occurrences of the chemical and role surfaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubValidator;

fn stub_answer(pair: &CandidatePair) -> &'static str {
    let text = &pair.sentence_text;
    let (Some(c), Some(r)) = (text.find(&pair.chemical_surface), text.find(&pair.role_surface)) else {
        return "no";
    };
    let (from, to) = if c <= r { (c + pair.chemical_surface.len(), r) } else { (r + pair.role_surface.len(), c) };
    if from >= to {
        return "no";
    }
    let cue = text[from..to].split(|ch: char| !ch.is_alphanumeric()).filter(|t| !t.is_empty()).any(|t| {
        let folded: String = t.chars().map(fold_char).collect();
        STUB_CUES.contains(&folded.as_str())
    });
    if cue {
        "yes"
    } else {
        "no"
    }
}

impl Validator for StubValidator {
    fn id(&self) -> &str {
        STUB_ID
    }

    fn ask(&self, pair: &CandidatePair, _system: &str, _user: &str) -> Result<String, TransportError> {
        Ok(stub_answer(pair).to_string())
    }
}

/// Stub verdict for a pair under the default template.
pub fn stub_validate(pair: &CandidatePair) -> VerdictRecord {
    let raw = stub_answer(pair).to_string();
    VerdictRecord {
        pair: pair.clone(),
        verdict: parse_answer(&raw),
        raw_answer: raw,
        validator_id: STUB_ID.to_string(),
        template_hash: PromptTemplate::default().hash(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

/// OpenAI-style chat-completions client over blocking HTTP.
pub struct ChatClient {
    agent: ureq::Agent,
    sampling: SamplingConfig,
    token: Option<String>,
    retry: RetryPolicy,
}

impl ChatClient {
    pub fn new(sampling: SamplingConfig, token: Option<String>) -> Result<Self, ValidateError> {
        sampling.validate()?;
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(300))).build().into();
        Ok(ChatClient { agent, sampling, token, retry: RetryPolicy::default() })
    }

    /// Endpoint and token from `CEAR_LLM_ENDPOINT` / `CEAR_LLM_TOKEN` unless
    /// an endpoint is given.
    pub fn from_env(model_name: &str, endpoint: Option<&str>) -> Result<Self, ValidateError> {
        let endpoint = endpoint
            .map(str::to_string)
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .ok_or_else(|| ValidateError::InvalidSampling(format!("no endpoint given and {ENDPOINT_ENV} unset")))?;
        ChatClient::new(SamplingConfig::new(model_name, endpoint), std::env::var(TOKEN_ENV).ok())
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sampling(mut self, temperature: f64, top_p: f64) -> Result<Self, ValidateError> {
        self.sampling.temperature = temperature;
        self.sampling.top_p = top_p;
        self.sampling.validate()?;
        Ok(self)
    }

    pub fn sampling(&self) -> &SamplingConfig {
        &self.sampling
    }

    pub fn request_body(&self, system: &str, user: &str) -> serde_json::Value {
        json!({
            "model": self.sampling.model_name,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.sampling.temperature,
            "top_p": self.sampling.top_p,
        })
    }

    fn call_once(&self, body: &serde_json::Value) -> Result<String, String> {
        let mut request = self.agent.post(&self.sampling.endpoint);
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(|e| e.to_string())?;
        let reply: serde_json::Value = response.body_mut().read_json().map_err(|e| e.to_string())?;
        reply_content(&reply).ok_or_else(|| format!("reply has no message content: {reply}"))
    }
}

/// First message content of a chat reply (`choices[0].message.content`, or
/// a top-level `message.content`).
pub fn reply_content(reply: &serde_json::Value) -> Option<String> {
    reply
        .pointer("/choices/0/message/content")
        .or_else(|| reply.pointer("/message/content"))
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

impl Validator for ChatClient {
    fn id(&self) -> &str {
        &self.sampling.model_name
    }

    fn ask(&self, _pair: &CandidatePair, system: &str, user: &str) -> Result<String, TransportError> {
        let body = self.request_body(system, user);
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.call_once(&body) {
                Ok(content) => return Ok(content),
                Err(e) => {
                    log::warn!("chat request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(TransportError { attempts, message: last })
    }
}

#[derive(Debug, Default)]
struct CacheInner {
    records: HashMap<CacheKey, VerdictRecord>,
    file: Option<File>,
}

/// Append-only JSONL verdict store. The first record stored for a key wins;
/// later records with the same key are dropped.
#[derive(Debug, Default)]
pub struct VerdictCache {
    path: Option<PathBuf>,
    inner: Mutex<CacheInner>,
}

impl VerdictCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ValidateError> {
        let path = path.into();
        let io = |source| ValidateError::CacheIo { path: path.clone(), source };
        let mut records = HashMap::new();
        if path.exists() {
            for record in read_records(&path)? {
                records.entry(CacheKey::of(&record)).or_insert(record);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(VerdictCache { path: Some(path), inner: Mutex::new(CacheInner { records, file: Some(file) }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<VerdictRecord> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).records.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `record` unless its key is present; returns the stored record.
    pub fn insert(&self, record: VerdictRecord) -> Result<VerdictRecord, ValidateError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let key = CacheKey::of(&record);
        if let Some(existing) = inner.records.get(&key) {
            return Ok(existing.clone());
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("records always serialize");
            line.push('\n');
            file.write_all(line.as_bytes())
                .map_err(|source| ValidateError::CacheIo { path: self.path.clone().unwrap_or_default(), source })?;
        }
        inner.records.insert(key, record.clone());
        Ok(record)
    }

    /// Every stored record, sorted by pair then validator.
    pub fn records(&self) -> Vec<VerdictRecord> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let mut out: Vec<VerdictRecord> = inner.records.values().cloned().collect();
        out.sort_by(|a, b| {
            (&a.pair, &a.validator_id, &a.template_hash).cmp(&(&b.pair, &b.validator_id, &b.template_hash))
        });
        out
    }
}

/// Reads every line of a verdict JSONL file, duplicates included.
pub fn read_records(path: &Path) -> Result<Vec<VerdictRecord>, ValidateError> {
    let file = File::open(path).map_err(|source| ValidateError::CacheIo { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ValidateError::CacheIo { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| ValidateError::CacheFormat {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Rewrites a cache file keeping the first record per key, in file order.
/// Returns (records kept, records dropped).
pub fn compact_cache(path: &Path) -> Result<(usize, usize), ValidateError> {
    let records = read_records(path)?;
    let total = records.len();
    let mut seen = std::collections::HashSet::new();
    let kept: Vec<VerdictRecord> = records.into_iter().filter(|r| seen.insert(CacheKey::of(r))).collect();
    let mut body = String::new();
    for r in &kept {
        body.push_str(&serde_json::to_string(r).expect("records always serialize"));
        body.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    let io = |source| ValidateError::CacheIo { path: path.to_path_buf(), source };
    fs::write(&tmp, body).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok((kept.len(), total - kept.len()))
}

/// Cached record for the pair, or one fresh question to the validator.
/// A transport failure persists nothing.
pub fn validate_pair(
    pair: &CandidatePair,
    validator: &dyn Validator,
    cache: &VerdictCache,
    tmpl: &PromptTemplate,
) -> Result<VerdictRecord, ValidateError> {
    let template_hash = tmpl.hash();
    let key = CacheKey::new(pair, validator.id(), &template_hash);
    if let Some(hit) = cache.get(&key) {
        return Ok(hit);
    }
    let (system, user) = render_prompts(pair, tmpl);
    let raw = validator.ask(pair, &system, &user)?;
    cache.insert(VerdictRecord {
        pair: pair.clone(),
        verdict: parse_answer(&raw),
        raw_answer: raw,
        validator_id: validator.id().to_string(),
        template_hash,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationSummary {
    pub pairs: usize,
    pub confirmed: usize,
    pub rejected: usize,
    pub ambiguous: usize,
    pub transport_failures: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationRun {
    /// One entry per input pair, in input order; `None` marks a transport
    /// failure (nothing persisted, retried next run).
    pub records: Vec<Option<VerdictRecord>>,
    pub summary: ValidationSummary,
}

/// Validates all pairs with at most `max_in_flight` concurrent questions.
pub fn validate_all(
    pairs: &[CandidatePair],
    validator: &dyn Validator,
    cache: &VerdictCache,
    tmpl: &PromptTemplate,
    max_in_flight: usize,
) -> Result<ValidationRun, ValidateError> {
    let workers = max_in_flight.max(1).min(pairs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<VerdictRecord, ValidateError>>>> =
        pairs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(pair) = pairs.get(i) else { break };
                let outcome = validate_pair(pair, validator, cache, tmpl);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
            });
        }
    });

    let mut run = ValidationRun { records: Vec::with_capacity(pairs.len()), summary: ValidationSummary::default() };
    run.summary.pairs = pairs.len();
    for slot in slots {
        let outcome = slot.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every slot filled");
        match outcome {
            Ok(record) => {
                match record.verdict {
                    Verdict::Confirmed => run.summary.confirmed += 1,
                    Verdict::Rejected => run.summary.rejected += 1,
                    Verdict::Ambiguous => run.summary.ambiguous += 1,
                }
                run.records.push(Some(record));
            }
            Err(ValidateError::Transport(e)) => {
                log::warn!("{e}");
                run.summary.transport_failures += 1;
                run.records.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(run)
}
