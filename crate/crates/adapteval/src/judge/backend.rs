//! Completion backends: a live HTTP client plus the deterministic mock
//! family used for tests and dry runs, behind one trait. Retries and the
//! response cache are handled uniformly in [`Session::complete`].

use std::collections::HashMap;
use std::sync::atomic::Ordering;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cache::{CacheKey, ResponseCache};
use super::{JudgeError, RunCounters};

/// Sampling parameters sent with every request and mixed into cache keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        // deterministic by default so reports are reproducible
        Self { temperature: 0.0, max_tokens: 1024, seed: Some(0) }
    }
}

/// How the generic completion request maps onto the remote API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WireFormat {
    /// `{model, prompt, temperature, max_tokens, seed?}` -> `{text}`
    #[default]
    Simple,
    /// OpenAI-style `/chat/completions` with a single user message.
    OpenAiChat,
}

/// One completion endpoint with its model id and decoding parameters.
/// A run uses at most one backend per model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionBackend {
    pub endpoint: String,
    pub model_id: String,
    pub decoding: Decoding,
    #[serde(default)]
    pub wire: WireFormat,
    /// Name of the environment variable holding the API key; the key itself
    /// never appears in configs, manifests, or cache files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl CompletionBackend {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>, decoding: Decoding) -> Result<Self, JudgeError> {
        if decoding.temperature < 0.0 {
            return Err(JudgeError::InvalidBackend(format!(
                "temperature {} must be >= 0",
                decoding.temperature
            )));
        }
        Ok(Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            decoding,
            wire: WireFormat::Simple,
            api_key_env: None,
        })
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.decoding.temperature < 0.0 {
            return Err(JudgeError::InvalidBackend(format!(
                "temperature {} must be >= 0",
                self.decoding.temperature
            )));
        }
        Ok(())
    }
}

/// Everything a transport needs to answer one request.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub model_id: &'a str,
    pub prompt: &'a str,
    pub decoding: &'a Decoding,
}

/// A completion transport. Implementations must be safe to call from
/// multiple threads; fan-out concurrency is bounded by the caller.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, JudgeError>;
}

/// Retry budget for transient failures (transport errors, HTTP 429/5xx).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay_ms: 250 }
    }
}

fn is_transient(err: &JudgeError) -> bool {
    match err {
        JudgeError::Transport(_) => true,
        JudgeError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

/// A backend bound to a transport, cache, retry policy, and run counters.
pub struct Session<'a> {
    pub backend: &'a CompletionBackend,
    pub client: &'a dyn CompletionClient,
    pub cache: Option<&'a ResponseCache>,
    pub retry: RetryPolicy,
    pub counters: &'a RunCounters,
}

impl<'a> Session<'a> {
    pub fn new(
        backend: &'a CompletionBackend,
        client: &'a dyn CompletionClient,
        cache: Option<&'a ResponseCache>,
        retry: RetryPolicy,
        counters: &'a RunCounters,
    ) -> Self {
        Self { backend, client, cache, retry, counters }
    }

    /// Completes `prompt`, serving from the cache when possible and retrying
    /// transient failures with exponential backoff. `attempt` is the
    /// re-query ordinal (1 for the first query, 2 for the single re-query
    /// allowed after an unparseable response); it is part of the cache key
    /// so re-queries are themselves reproducible.
    pub fn complete(&self, prompt: &str, attempt: u32) -> Result<String, JudgeError> {
        let key = CacheKey::derive(&self.backend.model_id, &self.backend.decoding, prompt, attempt);
        if let Some(cache) = self.cache {
            if let Some(hit) = cache.get(&key)? {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }
        let request = CompletionRequest {
            model_id: &self.backend.model_id,
            prompt,
            decoding: &self.backend.decoding,
        };
        let mut last_error: Option<JudgeError> = None;
        for round in 0..=self.retry.max_retries {
            self.counters.requests.fetch_add(1, Ordering::Relaxed);
            match self.client.complete(&request) {
                Ok(text) => {
                    if let Some(cache) = self.cache {
                        cache.put(
                            &key,
                            &self.backend.model_id,
                            &self.backend.decoding,
                            attempt,
                            prompt,
                            &text,
                        )?;
                    }
                    return Ok(text);
                }
                Err(e) if is_transient(&e) && round < self.retry.max_retries => {
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    let delay = self.retry.base_delay_ms.saturating_mul(1 << round.min(8));
                    std::thread::sleep(std::time::Duration::from_millis(delay));
                    last_error = Some(e);
                }
                Err(e) if is_transient(&e) => {
                    return Err(JudgeError::RetriesExhausted {
                        attempts: self.retry.max_retries + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Err(JudgeError::RetriesExhausted {
            attempts: self.retry.max_retries + 1,
            last: last_error.map_or_else(|| "unknown".to_string(), |e| e.to_string()),
        })
    }
}

/// Live HTTP transport speaking either wire format.
pub struct HttpClient {
    endpoint: String,
    wire: WireFormat,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(backend: &CompletionBackend) -> Self {
        let api_key = backend
            .api_key_env
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(120))
            .build();
        Self { endpoint: backend.endpoint.clone(), wire: backend.wire, api_key, agent }
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, JudgeError> {
        let mut body = match self.wire {
            WireFormat::Simple => serde_json::json!({
                "model": request.model_id,
                "prompt": request.prompt,
                "temperature": request.decoding.temperature,
                "max_tokens": request.decoding.max_tokens,
            }),
            WireFormat::OpenAiChat => serde_json::json!({
                "model": request.model_id,
                "messages": [{"role": "user", "content": request.prompt}],
                "temperature": request.decoding.temperature,
                "max_tokens": request.decoding.max_tokens,
            }),
        };
        if let Some(seed) = request.decoding.seed {
            body["seed"] = serde_json::json!(seed);
        }
        let mut http = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            http = http.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match http.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, response)) => {
                let body = response.into_string().unwrap_or_default();
                return Err(JudgeError::Http { status, body });
            }
            Err(ureq::Error::Transport(t)) => return Err(JudgeError::Transport(t.to_string())),
        };
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| JudgeError::Transport(format!("invalid response body: {e}")))?;
        let text = match self.wire {
            WireFormat::Simple => value.get("text").and_then(|t| t.as_str()),
            WireFormat::OpenAiChat => value
                .get("choices")
                .and_then(|c| c.get(0))
                .and_then(|c| c.get("message"))
                .and_then(|m| m.get("content"))
                .and_then(|t| t.as_str()),
        };
        text.map(str::to_string).ok_or(JudgeError::Unparseable {
            what: "backend response",
            detail: "completion text field missing".to_string(),
        })
    }
}

/// Canned prompt -> response map for tests and replayed runs.
#[derive(Default)]
pub struct MockClient {
    canned: HashMap<String, String>,
}

impl MockClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.canned.insert(prompt.into(), response.into());
        self
    }
}

impl CompletionClient for MockClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, JudgeError> {
        self.canned
            .get(request.prompt)
            .cloned()
            .ok_or_else(|| JudgeError::Transport("mock has no canned response".to_string()))
    }
}

/// Replays responses recorded as JSON lines `{"contains": .., "response": ..}`
/// matched by substring against the prompt, first match wins.
pub struct ReplayClient {
    rules: Vec<(String, String)>,
}

impl ReplayClient {
    pub fn load(path: &std::path::Path) -> Result<Self, JudgeError> {
        #[derive(Deserialize)]
        struct Rule {
            contains: String,
            response: String,
        }
        let text = std::fs::read_to_string(path)?;
        let mut rules = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rule: Rule = serde_json::from_str(line).map_err(|e| JudgeError::Unparseable {
                what: "replay file",
                detail: e.to_string(),
            })?;
            rules.push((rule.contains, rule.response));
        }
        Ok(Self { rules })
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, JudgeError> {
        self.rules
            .iter()
            .find(|(needle, _)| request.prompt.contains(needle))
            .map(|(_, response)| response.clone())
            .ok_or_else(|| JudgeError::Transport("no replay rule matches prompt".to_string()))
    }
}

const ADAPT_TAIL_MARKER: &str = "What is the adapted version for the following dialogue :\n";
const EXTRACT_TAIL_MARKER: &str = "Extract edits for following :\n";

/// Returns the dialog block an adaptation prompt asks about.
fn adapt_prompt_dialog(prompt: &str) -> Option<&str> {
    prompt.rsplit_once(ADAPT_TAIL_MARKER).map(|(_, tail)| tail)
}

/// Echoes the dialog back for adaptation prompts (an identity adapter) and
/// echoes the whole prompt otherwise, which no judge parser accepts. Useful
/// for structure tests and for exercising all-null degenerate runs.
pub struct EchoClient;

impl CompletionClient for EchoClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, JudgeError> {
        Ok(adapt_prompt_dialog(request.prompt)
            .unwrap_or(request.prompt)
            .to_string())
    }
}

fn prompt_hash(prompt: &str) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("digest is long enough"))
}

/// Deterministic rule-based stand-in for a live judge/adapter model.
///
/// Adaptation prompts get a fixed substitution pass over the dialog;
/// extraction prompts get a real token diff of the two quoted utterances;
/// rating and strategy prompts get values derived from a hash of the prompt,
/// so outputs are stable across runs and machines.
pub struct ScriptedJudgeClient {
    substitutions: Vec<(&'static str, &'static str)>,
}

impl Default for ScriptedJudgeClient {
    fn default() -> Self {
        Self {
            substitutions: vec![
                ("Thanksgiving", "Diwali"),
                ("Wendy's", "Haldiram's"),
                ("ice cream", "kulfi"),
                ("baseball", "cricket"),
                ("Twister", "Antakshari"),
                ("bagel", "vada pav"),
                ("meatball sub", "vada sandwich"),
                ("Central Perk", "chai tapri"),
                ("Broadway", "Prithvi Theatre"),
                ("downtown", "near the bazaar"),
            ],
        }
    }
}

impl ScriptedJudgeClient {
    fn adapt(&self, dialog: &str) -> String {
        let mut adapted = dialog.to_string();
        for (from, to) in &self.substitutions {
            adapted = adapted.replace(from, to);
        }
        format!("Adapted Version:\n{adapted}")
    }

    fn extract_edits(tail: &str) -> String {
        let mut lines = tail.lines().filter(|l| !l.trim().is_empty());
        let (Some(original), Some(adapted)) = (lines.next(), lines.next()) else {
            return "No edit found.".to_string();
        };
        let strip = |line: &str| -> String {
            line.split_once(':').map(|(_, t)| t.trim().to_string()).unwrap_or_else(|| line.trim().to_string())
        };
        let o_tokens: Vec<String> = strip(original).split_whitespace().map(str::to_string).collect();
        let a_tokens: Vec<String> = strip(adapted).split_whitespace().map(str::to_string).collect();
        if o_tokens == a_tokens {
            return "No edit found.".to_string();
        }
        let mut prefix = 0;
        while prefix < o_tokens.len() && prefix < a_tokens.len() && o_tokens[prefix] == a_tokens[prefix] {
            prefix += 1;
        }
        let mut suffix = 0;
        while suffix < o_tokens.len() - prefix
            && suffix < a_tokens.len() - prefix
            && o_tokens[o_tokens.len() - 1 - suffix] == a_tokens[a_tokens.len() - 1 - suffix]
        {
            suffix += 1;
        }
        let source = o_tokens[prefix..o_tokens.len() - suffix].join(" ");
        let target = a_tokens[prefix..a_tokens.len() - suffix].join(" ");
        match (source.is_empty(), target.is_empty()) {
            (true, true) => "No edit found.".to_string(),
            (false, true) => format!("{source} → # deletion"),
            (true, false) => format!("→ {target} # addition"),
            (false, false) => format!("{source} → {target}"),
        }
    }

    fn score_edit(hash: u64) -> String {
        let correctness = u8::from(hash % 17 != 0);
        let localisation = (hash % 3) as u8;
        let offensiveness = u8::from(hash % 23 == 0);
        format!("{{'correctness': {correctness}, 'localisation': {localisation}, 'offensiveness': {offensiveness}}}")
    }

    fn classify_strategy(hash: u64) -> String {
        let names = ["Localisation", "Transformation", "Globalisation", "Localisation", "Omission"];
        format!("The strategy used in this edit is: {}", names[(hash % 5) as usize])
    }

    fn score_dialog(hash: u64) -> String {
        let pick = |shift: u64, base: u64, span: u64| base + (hash >> shift) % span;
        serde_json::json!({
            "naturalness": {"score": pick(0, 3, 3), "explanation": "scripted"},
            "localisation": {"score": pick(8, 2, 4), "explanation": "scripted"},
            "offensiveness": {"score": pick(16, 1, 2), "explanation": "scripted"},
            "stereotypical": {"score": pick(24, 1, 2), "explanation": "scripted"},
            "content preservation": {"score": pick(32, 3, 3), "explanation": "scripted"}
        })
        .to_string()
    }
}

impl CompletionClient for ScriptedJudgeClient {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, JudgeError> {
        let prompt = request.prompt;
        if let Some(dialog) = adapt_prompt_dialog(prompt) {
            return Ok(self.adapt(dialog));
        }
        if let Some((_, tail)) = prompt.rsplit_once(EXTRACT_TAIL_MARKER) {
            return Ok(Self::extract_edits(tail));
        }
        let hash = prompt_hash(prompt);
        if prompt.contains("rate the given edit in the context of adapted version") {
            return Ok(Self::score_edit(hash));
        }
        if prompt.contains("determine which translation strategy is used") {
            return Ok(Self::classify_strategy(hash));
        }
        if prompt.contains("rate the adapted version along the following aspects") {
            return Ok(Self::score_dialog(hash));
        }
        Err(JudgeError::Transport("scripted judge cannot answer this prompt".to_string()))
    }
}

/// Builds the transport a backend's endpoint names.
///
/// - `http://` / `https://` talk to a live server
/// - `mock-echo://` echoes dialogs back unchanged
/// - `mock-judge://` is the deterministic scripted judge/adapter
/// - `replay://<path>` replays canned responses from a rules file
pub fn client_for_endpoint(backend: &CompletionBackend) -> Result<Box<dyn CompletionClient>, JudgeError> {
    backend.validate()?;
    let endpoint = backend.endpoint.as_str();
    if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        Ok(Box::new(HttpClient::new(backend)))
    } else if endpoint.starts_with("mock-echo://") {
        Ok(Box::new(EchoClient))
    } else if endpoint.starts_with("mock-judge://") {
        Ok(Box::new(ScriptedJudgeClient::default()))
    } else if let Some(path) = endpoint.strip_prefix("replay://") {
        Ok(Box::new(ReplayClient::load(std::path::Path::new(path))?))
    } else {
        Err(JudgeError::InvalidBackend(format!("unsupported endpoint '{endpoint}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn backend() -> CompletionBackend {
        CompletionBackend::new("mock://", "test-model", Decoding::default()).unwrap()
    }

    struct FlakyClient {
        failures_left: AtomicU32,
    }

    impl CompletionClient for FlakyClient {
        fn complete(&self, _request: &CompletionRequest<'_>) -> Result<String, JudgeError> {
            let left = self.failures_left.load(Ordering::SeqCst);
            if left > 0 {
                self.failures_left.store(left - 1, Ordering::SeqCst);
                Err(JudgeError::Transport("flaky".to_string()))
            } else {
                Ok("recovered".to_string())
            }
        }
    }

    #[test]
    fn negative_temperature_is_rejected() {
        let err = CompletionBackend::new(
            "mock://",
            "m",
            Decoding { temperature: -0.5, max_tokens: 10, seed: None },
        )
        .unwrap_err();
        assert!(matches!(err, JudgeError::InvalidBackend(_)));
    }

    #[test]
    fn canned_mock_returns_canned_text() {
        let client = MockClient::new().with("hello", "world");
        let counters = RunCounters::default();
        let backend = backend();
        let session = Session::new(&backend, &client, None, RetryPolicy::default(), &counters);
        assert_eq!(session.complete("hello", 1).unwrap(), "world");
        let err = session.complete("unknown", 1).unwrap_err();
        assert!(matches!(err, JudgeError::RetriesExhausted { .. }));
    }

    #[test]
    fn unreachable_with_zero_retries_is_a_transport_error() {
        let client = MockClient::new();
        let counters = RunCounters::default();
        let backend = backend();
        let retry = RetryPolicy { max_retries: 0, base_delay_ms: 0 };
        let session = Session::new(&backend, &client, None, retry, &counters);
        let err = session.complete("x", 1).unwrap_err();
        assert!(matches!(err, JudgeError::RetriesExhausted { attempts: 1, .. }));
    }

    #[test]
    fn second_call_is_served_from_cache_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let client = MockClient::new().with("hello", "world");
        let counters = RunCounters::default();
        let backend = backend();
        let session = Session::new(&backend, &client, Some(&cache), RetryPolicy::default(), &counters);
        let first = session.complete("hello", 1).unwrap();
        let second = session.complete("hello", 1).unwrap();
        assert_eq!(first, second);
        let snap = counters.snapshot();
        assert_eq!(snap.cache_hits, 1);
        assert_eq!(snap.requests, 1);
    }

    #[test]
    fn transient_failures_are_retried_with_budget() {
        let client = FlakyClient { failures_left: AtomicU32::new(2) };
        let counters = RunCounters::default();
        let backend = backend();
        let retry = RetryPolicy { max_retries: 2, base_delay_ms: 0 };
        let session = Session::new(&backend, &client, None, retry, &counters);
        assert_eq!(session.complete("p", 1).unwrap(), "recovered");
        assert_eq!(counters.snapshot().retries, 2);

        let client = FlakyClient { failures_left: AtomicU32::new(3) };
        let session = Session::new(&backend, &client, None, RetryPolicy { max_retries: 1, base_delay_ms: 0 }, &counters);
        assert!(matches!(session.complete("p", 1), Err(JudgeError::RetriesExhausted { attempts: 2, .. })));
    }

    #[test]
    fn scripted_judge_extracts_a_token_diff() {
        let prompt = format!(
            "Identify...\n{EXTRACT_TAIL_MARKER}Joey: I love ice cream a lot\nJoey: I love kulfi a lot"
        );
        let client = ScriptedJudgeClient::default();
        let request = CompletionRequest { model_id: "m", prompt: &prompt, decoding: &Decoding::default() };
        assert_eq!(client.complete(&request).unwrap(), "ice cream → kulfi");

        let prompt = format!("Identify...\n{EXTRACT_TAIL_MARKER}Joey: same text\nJoey: same text");
        let request = CompletionRequest { model_id: "m", prompt: &prompt, decoding: &Decoding::default() };
        assert_eq!(client.complete(&request).unwrap(), "No edit found.");
    }

    #[test]
    fn scripted_judge_is_deterministic() {
        let client = ScriptedJudgeClient::default();
        let prompt = "... rate the given edit in the context of adapted version ... {edit}";
        let request = CompletionRequest { model_id: "m", prompt, decoding: &Decoding::default() };
        let a = client.complete(&request).unwrap();
        let b = client.complete(&request).unwrap();
        assert_eq!(a, b);
        assert!(super::super::parse_edit_scores(&a).is_ok());
    }

    #[test]
    fn endpoint_factory_dispatches_schemes() {
        let mut b = backend();
        b.endpoint = "mock-echo://".to_string();
        assert!(client_for_endpoint(&b).is_ok());
        b.endpoint = "mock-judge://".to_string();
        assert!(client_for_endpoint(&b).is_ok());
        b.endpoint = "gopher://nope".to_string();
        assert!(matches!(client_for_endpoint(&b), Err(JudgeError::InvalidBackend(_))));
    }

    #[test]
    fn echo_client_returns_dialog_block() {
        let client = EchoClient;
        let prompt = format!("intro...\n{ADAPT_TAIL_MARKER}Ross: Hi.\nRachel: Hey.");
        let request = CompletionRequest { model_id: "m", prompt: &prompt, decoding: &Decoding::default() };
        assert_eq!(client.complete(&request).unwrap(), "Ross: Hi.\nRachel: Hey.");
    }
}
