//! Chat-completion providers and structured-output validation.
//!
//! Three providers implement [`ChatProvider`]:
//!
//! * [`LiveProvider`] talks to an OpenAI-compatible `/chat/completions`
//!   endpoint. The API key comes from the `COCOON_LLM_API_KEY` environment
//!   variable.
//! * [`MockProvider`] answers from a script mapping step ids to canned
//!   responses, consumed one per call.
//! * [`ReplayProvider`] answers from a transcript recorded by
//!   [`TranscriptRecorder`].
//!
//! Transcript files are a JSON array of
//! `{"step_id": "...", "request": {"system": "...", "user": "..."}, "response": "..."}`
//! records in call order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

pub const API_KEY_ENV: &str = "COCOON_LLM_API_KEY";
pub const DEFAULT_MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("script exhausted for step {step_id} after {served} responses")]
    ScriptExhausted { step_id: String, served: usize },
    #[error("no valid response for step {step_id} after {} attempts: {}", diagnostics.len(), diagnostics.join(" | "))]
    ValidationExhausted { step_id: String, diagnostics: Vec<String> },
    #[error("no structured content: {0}")]
    NoStructuredContent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub step_id: String,
    pub system: String,
    pub user: String,
    /// Description of the expected output shape, appended to the system prompt.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub response_schema: String,
}

impl ChatRequest {
    pub fn new(step_id: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            step_id: step_id.into(),
            system: system.into(),
            user: user.into(),
            response_schema: String::new(),
        }
    }

    pub fn with_schema(mut self, schema: impl Into<String>) -> Self {
        self.response_schema = schema.into();
        self
    }

    fn system_text(&self) -> String {
        if self.response_schema.is_empty() {
            self.system.clone()
        } else {
            format!("{}\n\n{}", self.system, self.response_schema)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse<T> {
    pub raw: String,
    pub parsed: T,
    pub attempts: usize,
}

pub trait ChatProvider: Send + Sync {
    /// Returns the provider's text verbatim.
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError>;

    /// Short label recorded in exported documents.
    fn describe(&self) -> String;
}

/// Calls the provider until `validate` accepts a response, at most
/// `max_retries + 1` times. Each retry repeats the request with the previous
/// diagnostic appended to the user prompt. Transport errors end the loop
/// immediately.
pub fn complete_validated<T>(
    provider: &dyn ChatProvider,
    req: &ChatRequest,
    max_retries: usize,
    validate: impl Fn(&str) -> Result<T, String>,
) -> Result<ChatResponse<T>, LlmError> {
    let mut diagnostics: Vec<String> = Vec::new();
    let mut attempt_req = req.clone();
    for attempt in 1..=max_retries + 1 {
        let raw = provider.complete(&attempt_req)?;
        match validate(&raw) {
            Ok(parsed) => {
                return Ok(ChatResponse {
                    raw,
                    parsed,
                    attempts: attempt,
                })
            }
            Err(diag) => {
                attempt_req.user = format!(
                    "{}\n\nYour previous answer was rejected: {diag}\nPlease answer again, fixing this problem.",
                    req.user
                );
                diagnostics.push(diag);
            }
        }
    }
    Err(LlmError::ValidationExhausted {
        step_id: req.step_id.clone(),
        diagnostics,
    })
}

/// Pulls a JSON object out of a model response: the last fenced code block,
/// else the whole text, else the outermost braces.
pub fn extract_fenced_json(raw: &str) -> Result<Map<String, Json>, LlmError> {
    let mut candidates: Vec<&str> = Vec::new();
    let fences: Vec<usize> = raw.match_indices("```").map(|(i, _)| i).collect();
    if fences.len() >= 2 {
        let pair = fences.len() / 2 * 2;
        let (open, close) = (fences[pair - 2], fences[pair - 1]);
        let body = &raw[open + 3..close];
        // Drop an info string such as "json".
        let body = match body.find('\n') {
            Some(nl) if !body[..nl].trim_start().starts_with(['{', '[']) => &body[nl + 1..],
            _ => body,
        };
        candidates.push(body);
    }
    candidates.push(raw);
    if let (Some(a), Some(b)) = (raw.find('{'), raw.rfind('}')) {
        if a < b {
            candidates.push(&raw[a..=b]);
        }
    }

    let mut last_err = String::from("no JSON object found");
    for c in candidates {
        match serde_json::from_str::<Json>(c.trim()) {
            Ok(Json::Object(map)) => return Ok(map),
            Ok(other) => last_err = format!("expected a JSON object, found {}", kind_name(&other)),
            Err(e) => last_err = format!("invalid JSON: {e}"),
        }
    }
    Err(LlmError::NoStructuredContent(last_err))
}

fn kind_name(v: &Json) -> &'static str {
    match v {
        Json::Null => "null",
        Json::Bool(_) => "a boolean",
        Json::Number(_) => "a number",
        Json::String(_) => "a string",
        Json::Array(_) => "an array",
        Json::Object(_) => "an object",
    }
}

// ---------------------------------------------------------------------------
// Mock and replay

/// Canned responses per step id, consumed in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript(pub IndexMap<String, Vec<String>>);

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step_id: impl Into<String>, response: impl Into<String>) -> &mut Self {
        self.0.entry(step_id.into()).or_default().push(response.into());
        self
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("invalid script {}: {e}", path.display())))
    }
}

pub struct MockProvider {
    script: MockScript,
    cursors: Mutex<HashMap<String, usize>>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        MockProvider {
            script,
            cursors: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Total number of `complete` calls served or refused.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut cursors = self.cursors.lock().expect("mock cursor lock");
        let cursor = cursors.entry(req.step_id.clone()).or_insert(0);
        let responses = self.script.0.get(&req.step_id).map(Vec::as_slice).unwrap_or(&[]);
        match responses.get(*cursor) {
            Some(text) => {
                *cursor += 1;
                Ok(text.clone())
            }
            None => Err(LlmError::ScriptExhausted {
                step_id: req.step_id.clone(),
                served: *cursor,
            }),
        }
    }

    fn describe(&self) -> String {
        "mock".into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRequest {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub step_id: String,
    pub request: TranscriptRequest,
    pub response: String,
}

pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, LlmError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LlmError::Config(format!("cannot read transcript {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("invalid transcript {}: {e}", path.display())))
}

/// Serves recorded responses per step id in recording order.
pub struct ReplayProvider {
    inner: MockProvider,
}

impl ReplayProvider {
    pub fn new(records: Vec<TranscriptRecord>) -> Self {
        let mut script = MockScript::new();
        for r in records {
            script.push(r.step_id, r.response);
        }
        ReplayProvider {
            inner: MockProvider::new(script),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(load_transcript(path)?))
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        self.inner.complete(req)
    }

    fn describe(&self) -> String {
        "replay".into()
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Wraps a provider and keeps every successful exchange.
pub struct TranscriptRecorder<P> {
    inner: P,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl<P: ChatProvider> TranscriptRecorder<P> {
    pub fn new(inner: P) -> Self {
        TranscriptRecorder {
            inner,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().expect("transcript lock").clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.records()).expect("records serialize");
        fs::write(path, text)
    }
}

impl<P: ChatProvider> ChatProvider for TranscriptRecorder<P> {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(req)?;
        self.records.lock().expect("transcript lock").push(TranscriptRecord {
            step_id: req.step_id.clone(),
            request: TranscriptRequest {
                system: req.system_text(),
                user: req.user.clone(),
            },
            response: response.clone(),
        });
        Ok(response)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

// ---------------------------------------------------------------------------
// Live provider

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub temperature: f64,
    pub max_in_flight: usize,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            timeout: Duration::from_secs(120),
            temperature: 0.0,
            max_in_flight: 8,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct LiveProvider {
    cfg: LiveConfig,
    api_key: String,
    agent: ureq::Agent,
    slots: Semaphore,
}

impl LiveProvider {
    /// Fails without touching the network when the API key is unset.
    pub fn from_env(cfg: LiveConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Config(format!("{API_KEY_ENV} is not set")))?;
        Self::with_key(cfg, api_key)
    }

    pub fn with_key(cfg: LiveConfig, api_key: String) -> Result<Self, LlmError> {
        if cfg.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be at least 1".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        Ok(LiveProvider {
            slots: Semaphore {
                free: Mutex::new(cfg.max_in_flight),
                cv: Condvar::new(),
            },
            cfg,
            api_key,
            agent,
        })
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: Option<String>,
}

impl ChatProvider for LiveProvider {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let _slot = self.slots.acquire();
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": req.system_text()},
                {"role": "user", "content": req.user},
            ],
        });
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => LlmError::Timeout(self.cfg.timeout),
                other => LlmError::Transport(other.to_string()),
            })?;
        let parsed: CompletionBody = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Transport(format!("unreadable completion: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Transport("completion has no message content".into()))
    }

    fn describe(&self) -> String {
        format!("live:{}", self.cfg.model)
    }
}

/// Which provider to construct.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderKind {
    Live(LiveConfig),
    Mock(PathBuf),
    Replay(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub max_retries: usize,
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Arc<dyn ChatProvider>, LlmError> {
        Ok(match &self.kind {
            ProviderKind::Live(cfg) => Arc::new(LiveProvider::from_env(cfg.clone())?),
            ProviderKind::Mock(path) => Arc::new(MockProvider::new(MockScript::load(path)?)),
            ProviderKind::Replay(path) => Arc::new(ReplayProvider::load(path)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock(entries: &[(&str, &[&str])]) -> MockProvider {
        let mut script = MockScript::new();
        for (step, responses) in entries {
            for r in *responses {
                script.push(*step, *r);
            }
        }
        MockProvider::new(script)
    }

    fn req(step: &str) -> ChatRequest {
        ChatRequest::new(step, "sys", "user")
    }

    fn accepts_ok(raw: &str) -> Result<String, String> {
        if raw == "good" {
            Ok(raw.to_string())
        } else {
            Err(format!("rejected {raw}"))
        }
    }

    #[test]
    fn mock_returns_text_then_exhausts() {
        let p = mock(&[("ctx.table_summary", &["hello"])]);
        assert_eq!(p.complete(&req("ctx.table_summary")).unwrap(), "hello");
        assert_eq!(
            p.complete(&req("ctx.table_summary")).unwrap_err(),
            LlmError::ScriptExhausted {
                step_id: "ctx.table_summary".into(),
                served: 1
            }
        );
        assert_eq!(p.call_count(), 2);
    }

    #[test]
    fn retry_then_success() {
        let p = mock(&[("s", &["bad", "good"])]);
        let r = complete_validated(&p, &req("s"), 3, accepts_ok).unwrap();
        assert_eq!(r.attempts, 2);
        assert_eq!(r.parsed, "good");
    }

    #[test]
    fn first_try_success() {
        let p = mock(&[("s", &["good"])]);
        assert_eq!(complete_validated(&p, &req("s"), 3, accepts_ok).unwrap().attempts, 1);
    }

    #[test]
    fn validation_exhausted_keeps_all_diagnostics() {
        let p = mock(&[("s", &["bad", "bad", "bad", "bad", "good"])]);
        match complete_validated(&p, &req("s"), 3, accepts_ok).unwrap_err() {
            LlmError::ValidationExhausted { diagnostics, .. } => assert_eq!(diagnostics.len(), 4),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(p.call_count(), 4);
    }

    #[test]
    fn retry_prompt_carries_diagnostic() {
        struct Echo(Mutex<Vec<String>>);
        impl ChatProvider for Echo {
            fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
                self.0.lock().unwrap().push(req.user.clone());
                Ok("bad".into())
            }
            fn describe(&self) -> String {
                "echo".into()
            }
        }
        let p = Echo(Mutex::new(Vec::new()));
        let _ = complete_validated(&p, &req("s"), 1, accepts_ok);
        let seen = p.0.lock().unwrap();
        assert_eq!(seen[0], "user");
        assert!(seen[1].starts_with("user\n") && seen[1].contains("rejected bad"));
    }

    #[test]
    fn live_without_key_is_config_error() {
        std::env::remove_var(API_KEY_ENV);
        let cfg = LiveConfig {
            endpoint: "http://127.0.0.1:9".into(),
            ..LiveConfig::default()
        };
        assert!(matches!(LiveProvider::from_env(cfg), Err(LlmError::Config(_))));
    }

    #[test]
    fn fenced_json_extraction() {
        let m = extract_fenced_json("Thought...\n```json\n{\"x\":1}\n```").unwrap();
        assert_eq!(m["x"], 1);
        let m = extract_fenced_json("{\"x\":1}").unwrap();
        assert_eq!(m["x"], 1);
        let m = extract_fenced_json("```\n{\"a\":0}\n```\nthen\n```json\n{\"b\":2}\n```").unwrap();
        assert!(m.contains_key("b") && !m.contains_key("a"));
        let m = extract_fenced_json("Sure: {\"y\": [1, 2]} done").unwrap();
        assert_eq!(m["y"][1], 2);
        assert!(matches!(
            extract_fenced_json("no structure here"),
            Err(LlmError::NoStructuredContent(_))
        ));
        assert!(matches!(extract_fenced_json("[1, 2]"), Err(LlmError::NoStructuredContent(_))));
    }

    #[test]
    fn recorder_feeds_replay() {
        let rec = TranscriptRecorder::new(mock(&[("a", &["one", "two"]), ("b", &["three"])]));
        for step in ["a", "b", "a"] {
            rec.complete(&req(step)).unwrap();
        }
        let replay = ReplayProvider::new(rec.records());
        assert_eq!(replay.complete(&req("a")).unwrap(), "one");
        assert_eq!(replay.complete(&req("b")).unwrap(), "three");
        assert_eq!(replay.complete(&req("a")).unwrap(), "two");
        assert!(replay.complete(&req("a")).is_err());
    }
}
