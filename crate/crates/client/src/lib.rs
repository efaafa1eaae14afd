//! HTTP client that turns a completions endpoint into scored token sequences.
//!
//! The endpoint is asked to echo the snippet with per-token logprobs; token
//! byte spans are rebuilt by concatenating the returned token texts against
//! the snippet, with a fallback for tokenizer boundary markers. Responses are
//! cached on disk so corpus runs are resumable, and transient failures retry
//! with bounded exponential backoff.
//!
//! The api key is read from the environment, travels only in the request
//! header, and is excluded from every `Debug`, log line, and error this crate
//! produces.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;
use treelens_core::align::strip_leading_markers;
use treelens_core::syntax::Span;
use treelens_core::tlp::{tlp_from_pairs, TlpError, TlpSequence};

/// Environment variable the api key is read from.
pub const API_KEY_ENV: &str = "TREELENS_API_KEY";

/// Default number of requests in flight during corpus fetches.
pub const DEFAULT_CONCURRENCY: usize = 4;

/// Total attempts per request (first try plus retries).
const MAX_ATTEMPTS: u32 = 3;

/// Base delay doubled on each retry.
const BACKOFF_BASE_MS: u64 = 200;

/// An api key that cannot leak through formatting.
///
/// `Debug` and `Display` print a fixed placeholder; the raw value is only
/// reachable inside this crate, where it goes into the request header.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(secret: impl Into<String>) -> Self {
        ApiKey(secret.into())
    }

    fn reveal(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey([redacted])")
    }
}

impl fmt::Display for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[redacted]")
    }
}

/// Where and how to talk to the completions endpoint.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<ApiKey>,
    pub timeout_secs: u64,
    /// Cap on scored tokens kept per snippet.
    pub max_tokens: u32,
    /// Ask the endpoint to score the prompt tokens themselves.
    pub echo: bool,
}

impl EndpointConfig {
    /// Config with defaults: 30 s timeout, 1024-token cap, echo scoring on.
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: 30,
            max_tokens: 1024,
            echo: true,
        }
    }

    /// Same, with the api key taken from [`API_KEY_ENV`] when set.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let mut cfg = Self::new(base_url, model);
        cfg.api_key = std::env::var(API_KEY_ENV).ok().map(ApiKey::new);
        cfg
    }
}

/// Client-side failures. None of these ever carry the api key.
#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(
        "model {model} returned no token logprobs; the endpoint restricts access to token-level scores"
    )]
    LogprobsUnsupported { model: String },
    #[error("authentication rejected by the endpoint (HTTP {status})")]
    AuthError { status: u16 },
    #[error("returned token texts do not reconstruct the snippet: {detail}")]
    SpanReconstructionFailure { detail: String },
    #[error("endpoint failure (HTTP {status}) after {attempts} attempt(s)")]
    Http { status: u16, attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { detail: String, attempts: u32 },
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
    #[error("invalid client configuration: {0}")]
    InvalidConfig(String),
    #[error("scored sequence failed validation: {0}")]
    InvalidSequence(#[from] TlpError),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

/// One snippet to score in a corpus fetch.
#[derive(Debug, Clone)]
pub struct SnippetRequest {
    pub snippet_id: String,
    pub source: String,
    /// Bytes `[0, prompt_len)` are prompt context; the rest counts as
    /// generated.
    pub prompt_len: usize,
}

#[derive(Serialize)]
struct CompletionsRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    echo: bool,
    logprobs: u32,
    temperature: f64,
}

/// A configured connection plus optional on-disk response cache.
#[derive(Debug)]
pub struct Client {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    cache_dir: Option<PathBuf>,
    cache_write_lock: Mutex<()>,
}

impl Client {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        if cfg.base_url.trim().is_empty() {
            return Err(ClientError::InvalidConfig("base_url must be non-empty".into()));
        }
        if cfg.max_tokens == 0 {
            return Err(ClientError::InvalidConfig("max_tokens must be at least 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Client { cfg, agent, cache_dir: None, cache_write_lock: Mutex::new(()) })
    }

    /// Cache response bodies under `dir` (created on demand).
    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    /// Replace any occurrence of the secret with a placeholder. Belt and
    /// braces: the key is only ever sent as a header, but transport errors
    /// quote request details and must stay clean regardless.
    fn scrub(&self, text: String) -> String {
        match &self.cfg.api_key {
            Some(key) if !key.reveal().is_empty() => text.replace(key.reveal(), "[redacted]"),
            _ => text,
        }
    }

    fn cache_key(&self, source: &str, prompt_len: usize) -> String {
        let mut hasher = Sha256::new();
        for part in [
            self.cfg.base_url.as_str(),
            self.cfg.model.as_str(),
            &self.cfg.max_tokens.to_string(),
            &self.cfg.echo.to_string(),
            &prompt_len.to_string(),
            source,
        ] {
            hasher.update(part.as_bytes());
            hasher.update([0u8]);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn cache_read(&self, key: &str) -> Option<Value> {
        let path = self.cache_dir.as_ref()?.join(format!("{key}.json"));
        let text = std::fs::read_to_string(&path).ok()?;
        match serde_json::from_str(&text) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", path.display());
                None
            }
        }
    }

    fn cache_write(&self, key: &str, body: &Value) {
        let Some(dir) = &self.cache_dir else { return };
        let _guard = self.cache_write_lock.lock().expect("cache lock never poisoned");
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(dir)?;
            let tmp = dir.join(format!(".{key}.tmp"));
            std::fs::write(&tmp, serde_json::to_string(body).expect("value serializes"))?;
            std::fs::rename(&tmp, dir.join(format!("{key}.json")))
        };
        if let Err(e) = write() {
            log::warn!("failed to cache response: {e}");
        }
    }

    fn post_once(&self, body: &CompletionsRequest<'_>) -> Result<(u16, Value), ureq::Error> {
        let url = format!("{}/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {}", key.reveal()));
        }
        let mut resp = req.send_json(body)?;
        let status = resp.status().as_u16();
        let value = if status == 200 {
            resp.body_mut().read_json::<Value>()?
        } else {
            Value::Null
        };
        Ok((status, value))
    }

    fn post_with_retries(&self, body: &CompletionsRequest<'_>) -> Result<Value, ClientError> {
        let mut last: Option<ClientError> = None;
        for attempt in 1..=MAX_ATTEMPTS {
            if attempt > 1 {
                let delay = BACKOFF_BASE_MS << (attempt - 2);
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.post_once(body) {
                Ok((200, value)) => return Ok(value),
                Ok((status @ (401 | 403), _)) => {
                    return Err(ClientError::AuthError { status });
                }
                Ok((status @ (429 | 500..=599), _)) => {
                    log::warn!("attempt {attempt}: endpoint returned HTTP {status}");
                    last = Some(ClientError::Http { status, attempts: attempt });
                }
                Ok((status, _)) => {
                    return Err(ClientError::Http { status, attempts: attempt });
                }
                Err(e) => {
                    let detail = self.scrub(e.to_string());
                    log::warn!("attempt {attempt}: transport failure: {detail}");
                    last = Some(ClientError::Transport { detail, attempts: attempt });
                }
            }
        }
        Err(last.expect("loop ran at least once"))
    }

    /// Score one snippet, returning a validated token sequence.
    ///
    /// `prompt_len` marks the prompt/generated boundary in bytes. The whole
    /// snippet is sent for echo scoring; tokens whose logprob comes back null
    /// (the unconditioned first position) are dropped after their bytes are
    /// accounted for.
    pub fn fetch_tlp(&self, source: &str, prompt_len: usize) -> Result<TlpSequence, ClientError> {
        if prompt_len > source.len() || !source.is_char_boundary(prompt_len) {
            return Err(ClientError::InvalidConfig(format!(
                "prompt_len {prompt_len} is not a char boundary of the {}-byte snippet",
                source.len()
            )));
        }
        let key = self.cache_key(source, prompt_len);
        let response = match self.cache_read(&key) {
            Some(cached) => cached,
            None => {
                let request = CompletionsRequest {
                    model: &self.cfg.model,
                    prompt: source,
                    // Echo scoring: the endpoint scores existing text rather
                    // than generating more.
                    max_tokens: 0,
                    echo: self.cfg.echo,
                    logprobs: 0,
                    temperature: 0.0,
                };
                let value = self.post_with_retries(&request)?;
                self.cache_write(&key, &value);
                value
            }
        };
        sequence_from_response(&response, source, prompt_len, &self.cfg)
    }

    /// Score many snippets with at most `jobs` requests in flight.
    ///
    /// Results come back in input order; each snippet succeeds or fails on its
    /// own.
    pub fn fetch_corpus(
        &self,
        snippets: &[SnippetRequest],
        jobs: usize,
    ) -> Vec<(String, Result<TlpSequence, ClientError>)> {
        let jobs = jobs.clamp(1, snippets.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<TlpSequence, ClientError>>>> =
            snippets.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(req) = snippets.get(i) else { break };
                    let result = self.fetch_tlp(&req.source, req.prompt_len);
                    *slots[i].lock().expect("slot lock never poisoned") = Some(result);
                });
            }
        });
        snippets
            .iter()
            .zip(slots)
            .map(|(req, slot)| {
                let result = slot
                    .into_inner()
                    .expect("slot lock never poisoned")
                    .expect("every slot filled before scope ends");
                (req.snippet_id.clone(), result)
            })
            .collect()
    }
}

/// Convenience one-shot form of [`Client::fetch_tlp`].
pub fn fetch_tlp(
    cfg: EndpointConfig,
    snippet_source: &str,
    prompt_len: usize,
) -> Result<TlpSequence, ClientError> {
    Client::new(cfg)?.fetch_tlp(snippet_source, prompt_len)
}

fn sequence_from_response(
    response: &Value,
    source: &str,
    prompt_len: usize,
    cfg: &EndpointConfig,
) -> Result<TlpSequence, ClientError> {
    let choice = response
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ClientError::BadResponse("no choices in response".into()))?;
    let logprobs = match choice.get("logprobs") {
        Some(v) if !v.is_null() => v,
        _ => return Err(ClientError::LogprobsUnsupported { model: cfg.model.clone() }),
    };
    let tokens = as_string_array(logprobs.get("tokens"))
        .ok_or_else(|| ClientError::LogprobsUnsupported { model: cfg.model.clone() })?;
    let token_logprobs = as_logprob_array(logprobs.get("token_logprobs"))
        .ok_or_else(|| ClientError::LogprobsUnsupported { model: cfg.model.clone() })?;
    if tokens.len() != token_logprobs.len() {
        return Err(ClientError::BadResponse(format!(
            "{} tokens but {} logprobs",
            tokens.len(),
            token_logprobs.len()
        )));
    }
    let mut rows: Vec<(String, Span, f64)> = Vec::with_capacity(tokens.len());
    let mut pos = 0usize;
    for (index, (text, logprob)) in tokens.iter().zip(&token_logprobs).enumerate() {
        if text.is_empty() {
            continue;
        }
        let span = place_token(source, pos, text).ok_or_else(|| {
            ClientError::SpanReconstructionFailure {
                detail: format!(
                    "token {index} ({:?}) does not continue the snippet at byte {pos}",
                    text
                ),
            }
        })?;
        pos = span.end;
        if let Some(lp) = logprob {
            rows.push((text.clone(), span, *lp));
        }
    }
    if pos != source.len() {
        return Err(ClientError::SpanReconstructionFailure {
            detail: format!("tokens cover only {pos} of {} source bytes", source.len()),
        });
    }
    rows.truncate(cfg.max_tokens as usize);
    let generated = Span::new(prompt_len, source.len());
    Ok(tlp_from_pairs(source, &cfg.model, Some(generated), rows)?)
}

fn as_string_array(v: Option<&Value>) -> Option<Vec<String>> {
    v?.as_array()?
        .iter()
        .map(|t| t.as_str().map(str::to_string))
        .collect()
}

fn as_logprob_array(v: Option<&Value>) -> Option<Vec<Option<f64>>> {
    v?.as_array()?
        .iter()
        .map(|t| match t {
            Value::Null => Some(None),
            Value::Number(n) => n.as_f64().map(Some),
            _ => None,
        })
        .collect()
}

/// Fit one returned token text onto the source at byte `pos`.
///
/// Exact continuation wins; otherwise boundary markers are stripped from the
/// token and whitespace may be consumed from the source, with the span still
/// starting at `pos` so spans tile the snippet.
fn place_token(source: &str, pos: usize, text: &str) -> Option<Span> {
    if source[pos..].starts_with(text) {
        return Some(Span::new(pos, pos + text.len()));
    }
    let stripped = strip_leading_markers(text);
    let mut at = pos;
    while at < source.len() && source.as_bytes()[at].is_ascii_whitespace() {
        at += 1;
    }
    if stripped.is_empty() {
        // A bare marker stands for whitespace; claim the run if there is one.
        return (at > pos).then(|| Span::new(pos, at));
    }
    if source[at..].starts_with(stripped) {
        return Some(Span::new(pos, at + stripped.len()));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serve each (status, body) pair to one connection, in order; returns the
    /// raw request texts once all are served.
    fn stub_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (mut conn, _) = listener.accept().unwrap();
                seen.push(read_request(&mut conn));
                let resp = format!(
                    "HTTP/1.1 {status} Stub\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                conn.write_all(resp.as_bytes()).unwrap();
            }
            seen
        });
        (base_url, handle)
    }

    fn read_request(conn: &mut std::net::TcpStream) -> String {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 1024];
        loop {
            let n = conn.read(&mut chunk).unwrap();
            buf.extend_from_slice(&chunk[..n]);
            let text = String::from_utf8_lossy(&buf);
            if let Some(head_end) = text.find("\r\n\r\n") {
                let content_length = text
                    .lines()
                    .find_map(|l| {
                        let (k, v) = l.split_once(':')?;
                        k.eq_ignore_ascii_case("content-length")
                            .then(|| v.trim().parse::<usize>().ok())?
                    })
                    .unwrap_or(0);
                if buf.len() >= head_end + 4 + content_length {
                    return text.into_owned();
                }
            }
            if n == 0 {
                return text.into_owned();
            }
        }
    }

    fn ok_body(tokens: &[(&str, Option<f64>)]) -> String {
        let texts: Vec<&str> = tokens.iter().map(|(t, _)| *t).collect();
        let lps: Vec<Option<f64>> = tokens.iter().map(|(_, lp)| *lp).collect();
        serde_json::json!({
            "choices": [{
                "text": texts.concat(),
                "logprobs": {"tokens": texts, "token_logprobs": lps}
            }]
        })
        .to_string()
    }

    fn cfg(base_url: &str) -> EndpointConfig {
        let mut cfg = EndpointConfig::new(base_url, "stub-model");
        cfg.api_key = Some(ApiKey::new("sk-test-sekrit-123"));
        cfg
    }

    #[test]
    fn five_tokens_tile_the_source() {
        let source = "x = 1\n";
        let body = ok_body(&[
            ("x", Some(-0.1)),
            (" =", Some(-0.2)),
            (" 1", Some(-0.3)),
            ("\n", Some(-0.4)),
            ("", Some(-9.0)), // empty texts are ignored
        ]);
        let (url, server) = stub_server(vec![(200, body)]);
        let seq = fetch_tlp(cfg(&url), source, 2).unwrap();
        assert_eq!(seq.records.len(), 4);
        let spans: Vec<(usize, usize)> =
            seq.records.iter().map(|r| (r.span.start, r.span.end)).collect();
        assert_eq!(spans, vec![(0, 1), (1, 3), (3, 5), (5, 6)]);
        assert_eq!(seq.generated_span, Some(Span::new(2, 6)));
        assert_eq!(seq.model_id, "stub-model");
        assert!((seq.records[1].probability - (-0.2f64).exp()).abs() < 1e-12);
        // The key went out as a bearer header and nowhere else.
        let requests = server.join().unwrap();
        assert!(requests[0].contains("Bearer sk-test-sekrit-123"));
        let body_sent: Value = serde_json::from_str(
            requests[0].split("\r\n\r\n").nth(1).expect("request has a body"),
        )
        .unwrap();
        assert_eq!(body_sent["echo"], Value::Bool(true));
        assert_eq!(body_sent["max_tokens"], serde_json::json!(0));
        assert_eq!(body_sent["prompt"], serde_json::json!(source));
    }

    #[test]
    fn marker_tokens_fall_back_to_stripped_match() {
        let source = "def f():\n    return 1";
        let body = ok_body(&[
            ("def", Some(-0.1)),
            ("Ġf", Some(-0.2)),
            ("():", Some(-0.3)),
            ("Ċ", Some(-0.4)),
            ("▁▁▁", Some(-0.45)), // bare markers claim the whitespace run
            ("return", Some(-0.5)),
            ("Ġ1", Some(-0.6)),
        ]);
        let (url, server) = stub_server(vec![(200, body)]);
        let err = fetch_tlp(cfg(&url), source, 0);
        server.join().unwrap();
        // "Ċ" is not a boundary marker: reconstruction must refuse to guess.
        assert!(matches!(err, Err(ClientError::SpanReconstructionFailure { .. })));

        let body = ok_body(&[
            ("def", Some(-0.1)),
            ("Ġf", Some(-0.2)),
            ("():\n", Some(-0.3)),
            ("▁▁▁", Some(-0.45)),
            ("return", Some(-0.5)),
            ("Ġ1", Some(-0.6)),
        ]);
        let (url, server) = stub_server(vec![(200, body)]);
        let seq = fetch_tlp(cfg(&url), source, 0).unwrap();
        server.join().unwrap();
        let spans: Vec<(usize, usize)> =
            seq.records.iter().map(|r| (r.span.start, r.span.end)).collect();
        assert_eq!(spans, vec![(0, 3), (3, 5), (5, 9), (9, 13), (13, 19), (19, 21)]);
    }

    #[test]
    fn null_first_logprob_is_dropped_but_bytes_still_count() {
        let source = "x = 1";
        let body = ok_body(&[("x", None), (" =", Some(-0.2)), (" 1", Some(-0.3))]);
        let (url, server) = stub_server(vec![(200, body)]);
        let seq = fetch_tlp(cfg(&url), source, 0).unwrap();
        server.join().unwrap();
        assert_eq!(seq.records.len(), 2);
        assert_eq!(seq.records[0].span, Span::new(1, 3));
    }

    #[test]
    fn missing_logprobs_is_a_capability_error() {
        let body = r#"{"choices":[{"text":"x"}]}"#.to_string();
        let (url, server) = stub_server(vec![(200, body)]);
        let err = fetch_tlp(cfg(&url), "x", 0).unwrap_err();
        server.join().unwrap();
        assert!(matches!(err, ClientError::LogprobsUnsupported { model } if model == "stub-model"));
    }

    #[test]
    fn nonmatching_concatenation_fails() {
        let body = ok_body(&[("y", Some(-0.1)), ("zz", Some(-0.2))]);
        let (url, server) = stub_server(vec![(200, body)]);
        let err = fetch_tlp(cfg(&url), "x = 1", 0).unwrap_err();
        server.join().unwrap();
        assert!(matches!(err, ClientError::SpanReconstructionFailure { .. }));
    }

    #[test]
    fn short_token_list_fails_coverage() {
        let body = ok_body(&[("x", Some(-0.1))]);
        let (url, server) = stub_server(vec![(200, body)]);
        let err = fetch_tlp(cfg(&url), "x = 1", 0).unwrap_err();
        server.join().unwrap();
        let text = err.to_string();
        assert!(text.contains("cover only 1 of 5"));
    }

    #[test]
    fn auth_failure_does_not_retry_and_never_names_the_key() {
        let (url, server) = stub_server(vec![(401, "{}".into())]);
        let config = cfg(&url);
        let err = fetch_tlp(config.clone(), "x", 0).unwrap_err();
        // One connection total: the stub thread only served one.
        let requests = server.join().unwrap();
        assert_eq!(requests.len(), 1);
        assert!(matches!(err, ClientError::AuthError { status: 401 }));
        let key = config.api_key.clone().unwrap();
        let shown = format!("{err} / {err:?} / {config:?} / {key} / {key:?}");
        assert!(!shown.contains("sekrit"));
        assert!(shown.contains("[redacted]"));
    }

    #[test]
    fn transient_failures_retry_until_success() {
        let body = ok_body(&[("x", Some(-0.5))]);
        let (url, server) =
            stub_server(vec![(500, "{}".into()), (429, "{}".into()), (200, body)]);
        let seq = fetch_tlp(cfg(&url), "x", 0).unwrap();
        assert_eq!(server.join().unwrap().len(), 3);
        assert_eq!(seq.records.len(), 1);
    }

    #[test]
    fn retries_are_bounded() {
        let (url, server) =
            stub_server(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        let err = fetch_tlp(cfg(&url), "x", 0).unwrap_err();
        server.join().unwrap();
        assert!(matches!(err, ClientError::Http { status: 503, attempts: 3 }));
    }

    #[test]
    fn responses_are_cached_for_offline_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let source = "a = 2";
        let body = ok_body(&[("a", Some(-0.1)), (" =", Some(-0.2)), (" 2", Some(-0.3))]);
        let (url, server) = stub_server(vec![(200, body)]);
        let client = Client::new(cfg(&url)).unwrap().with_cache(dir.path());
        let first = client.fetch_tlp(source, 0).unwrap();
        server.join().unwrap();
        // The stub is gone; only the cache can answer now.
        let again = Client::new(cfg(&url)).unwrap().with_cache(dir.path());
        let second = again.fetch_tlp(source, 0).unwrap();
        assert_eq!(first, second);
        // Different params must miss the cache (and so fail offline).
        let mut other = cfg(&url);
        other.max_tokens = 2;
        let miss = Client::new(other).unwrap().with_cache(dir.path());
        assert!(matches!(
            miss.fetch_tlp(source, 0).unwrap_err(),
            ClientError::Transport { .. }
        ));
    }

    #[test]
    fn transport_errors_are_scrubbed() {
        let mut config = EndpointConfig::new("http://127.0.0.1:9", "m");
        config.api_key = Some(ApiKey::new("sk-test-sekrit-123"));
        config.timeout_secs = 2;
        let client = Client::new(config).unwrap();
        // Whatever text a transport layer produces, the secret comes out.
        let cleaned = client.scrub("refused: http://u:sk-test-sekrit-123@h".to_string());
        assert_eq!(cleaned, "refused: http://u:[redacted]@h");
        // Nothing listens on port 9: the real error must also stay clean.
        let err = client.fetch_tlp("x", 0).unwrap_err();
        let text = format!("{err} / {err:?}");
        assert!(matches!(err, ClientError::Transport { attempts: 3, .. }));
        assert!(!text.contains("sekrit"));
    }

    #[test]
    fn corpus_fetch_keeps_input_order() {
        let source = "b = 3";
        let body = ok_body(&[("b", Some(-0.1)), (" =", Some(-0.2)), (" 3", Some(-0.3))]);
        let (url, server) =
            stub_server(vec![(200, body.clone()), (200, body.clone()), (200, body)]);
        let client = Client::new(cfg(&url)).unwrap();
        let snippets: Vec<SnippetRequest> = ["s1", "s2", "s3"]
            .iter()
            .map(|id| SnippetRequest {
                snippet_id: id.to_string(),
                source: source.to_string(),
                prompt_len: 0,
            })
            .collect();
        let results = client.fetch_corpus(&snippets, DEFAULT_CONCURRENCY);
        server.join().unwrap();
        let ids: Vec<&str> = results.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["s1", "s2", "s3"]);
        assert!(results.iter().all(|(_, r)| r.is_ok()));
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        assert!(matches!(
            Client::new(EndpointConfig::new("", "m")).unwrap_err(),
            ClientError::InvalidConfig(_)
        ));
        let mut zero = EndpointConfig::new("http://h", "m");
        zero.max_tokens = 0;
        assert!(matches!(Client::new(zero).unwrap_err(), ClientError::InvalidConfig(_)));
        let client = Client::new(EndpointConfig::new("http://h", "m")).unwrap();
        assert!(matches!(
            client.fetch_tlp("héllo", 2).unwrap_err(),
            ClientError::InvalidConfig(_)
        ));
    }
}
