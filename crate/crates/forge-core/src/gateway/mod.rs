//! Model gateway: every LLM call in the pipeline flows through here.
//!
//! The gateway owns the operational concerns that stages should not care
//! about — per-endpoint rate pacing, a global in-flight cap, bounded retries
//! with exponential backoff, structured-output parsing with one corrective
//! retry, and an audit log detailed enough to replay a run byte-for-byte
//! (see [`audit::ReplayTransport`]).
//!
//! Transports are pluggable: an HTTP chat-completions client for real runs,
//! scripted and function mocks for tests and dry runs, and an audit-log
//! replayer for deterministic reruns.

pub mod audit;
pub mod http;
pub mod mock;
pub mod parse;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::records::Role;
use audit::{AuditEntry, AuditLog, AuditOutcome};

/// One chat message in a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// A chat completion request, addressed to a named endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub endpoint: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed, forwarded to endpoints that honor it. Distinct seeds
    /// keep repeated samples of the same prompt distinguishable in the audit
    /// log even at temperature > 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Single-user-message request with deterministic decoding defaults.
    pub fn user(endpoint: impl Into<String>, content: impl Into<String>) -> Self {
        ChatRequest {
            endpoint: endpoint.into(),
            messages: vec![ChatMessage::user(content)],
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

/// Why generation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// Token accounting reported by the endpoint (zero when unknown).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A completed (or failed) chat call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

impl ChatResponse {
    pub fn ok(text: impl Into<String>) -> Self {
        ChatResponse {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        }
    }

    fn error() -> Self {
        ChatResponse {
            text: String::new(),
            finish_reason: FinishReason::Error,
            usage: Usage::default(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.finish_reason == FinishReason::Error
    }
}

/// Transport-level failure. `retryable` distinguishes transient conditions
/// (connection errors, 5xx, 429) from ones a retry cannot fix.
#[derive(Debug, Clone)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        TransportError { message: message.into(), retryable: true }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        TransportError { message: message.into(), retryable: false }
    }
}

/// Something that can execute a chat request: an HTTP client, a mock, or a
/// replayer. Implementations must be safe to call from multiple threads.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, TransportError>;
}

/// Per-endpoint operational settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Request starts per minute; 0 means unpaced.
    #[serde(default)]
    pub requests_per_minute: u32,
    /// Retries after the first attempt on retryable failures.
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_retries() -> u32 {
    3
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig { requests_per_minute: 0, retries: default_retries() }
    }
}

/// Paces request starts so an endpoint sees at most its configured rate.
struct RatePacer {
    interval: Duration,
    next_free: Mutex<Instant>,
}

impl RatePacer {
    fn new(requests_per_minute: u32) -> Self {
        let interval = if requests_per_minute == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / f64::from(requests_per_minute))
        };
        RatePacer { interval, next_free: Mutex::new(Instant::now()) }
    }

    /// Blocks until this caller's slot; slots are handed out in arrival order.
    fn wait_turn(&self) {
        if self.interval.is_zero() {
            return;
        }
        let slot = {
            let mut next = self.next_free.lock();
            let now = Instant::now();
            let at = if *next > now { *next } else { now };
            *next = at + self.interval;
            at
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Counting semaphore bounding in-flight requests across all endpoints.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock();
        while *permits == 0 {
            self.cv.wait(&mut permits);
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock();
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

struct RegisteredEndpoint {
    transport: Arc<dyn Transport>,
    config: EndpointConfig,
    pacer: RatePacer,
}

/// Parsed structured reply: the extracted JSON object plus the raw text it
/// came from (kept for quarantine records and judgment audit trails).
#[derive(Debug, Clone)]
pub struct Structured {
    pub fields: serde_json::Map<String, serde_json::Value>,
    pub raw: String,
}

/// The gateway itself. Construct with [`Gateway::builder`], register
/// endpoints, then share by reference across worker threads.
pub struct Gateway {
    endpoints: HashMap<String, RegisteredEndpoint>,
    inflight: Semaphore,
    audit: AuditLog,
    seq: AtomicU64,
    backoff_base: Duration,
}

/// Configures global gateway behavior.
pub struct GatewayBuilder {
    max_in_flight: usize,
    backoff_base: Duration,
    audit_path: Option<std::path::PathBuf>,
}

impl GatewayBuilder {
    /// Cap on simultaneous in-flight requests across all endpoints.
    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n;
        self
    }

    /// First backoff sleep; doubles per retry. Tests shrink this.
    pub fn backoff_base(mut self, d: Duration) -> Self {
        self.backoff_base = d;
        self
    }

    /// Stream audit entries to this NDJSON file as they happen, in addition
    /// to keeping them in memory.
    pub fn audit_path(mut self, path: impl Into<std::path::PathBuf>) -> Self {
        self.audit_path = Some(path.into());
        self
    }

    pub fn build(self) -> Result<Gateway> {
        let audit = match self.audit_path {
            Some(path) => AuditLog::with_file(&path)?,
            None => AuditLog::in_memory(),
        };
        Ok(Gateway {
            endpoints: HashMap::new(),
            inflight: Semaphore::new(self.max_in_flight),
            audit,
            seq: AtomicU64::new(0),
            backoff_base: self.backoff_base,
        })
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Canonical digest of a request: SHA-256 over its serialized form. Replay
/// and deduplication key on this.
pub fn request_digest(request: &ChatRequest) -> String {
    let canon = serde_json::to_string(request).expect("chat request serializes");
    sha256_hex(canon.as_bytes())
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            max_in_flight: 8,
            backoff_base: Duration::from_millis(250),
            audit_path: None,
        }
    }

    /// Registers (or replaces) a named endpoint.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        config: EndpointConfig,
        transport: Arc<dyn Transport>,
    ) {
        let pacer = RatePacer::new(config.requests_per_minute);
        self.endpoints
            .insert(name.into(), RegisteredEndpoint { transport, config, pacer });
    }

    pub fn has_endpoint(&self, name: &str) -> bool {
        self.endpoints.contains_key(name)
    }

    /// Registered endpoint names, sorted.
    pub fn endpoint_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.endpoints.keys().cloned().collect();
        names.sort();
        names
    }

    /// Executes one request with pacing, the in-flight cap, and bounded
    /// retries. Transport failures that survive every retry come back as a
    /// response with `finish_reason = error` rather than an `Err`, so callers
    /// can count failures without aborting a batch; `Err` is reserved for
    /// wiring problems (unknown endpoint).
    pub fn complete_text(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let ep = self
            .endpoints
            .get(&request.endpoint)
            .ok_or_else(|| Error::UnregisteredEndpoint(request.endpoint.clone()))?;
        let digest = request_digest(request);
        let attempts = ep.config.retries + 1;
        for attempt in 1..=attempts {
            ep.pacer.wait_turn();
            let outcome = {
                let _permit = self.inflight.acquire();
                let start = Instant::now();
                let result = ep.transport.send(request);
                (result, start.elapsed())
            };
            let (result, elapsed) = outcome;
            let last_attempt = match &result {
                Ok(_) => true,
                Err(e) => !e.retryable || attempt == attempts,
            };
            self.audit.append(AuditEntry {
                v: crate::records::SCHEMA_VERSION,
                seq: self.seq.fetch_add(1, Ordering::Relaxed),
                endpoint: request.endpoint.clone(),
                request_digest: digest.clone(),
                attempt,
                last_attempt,
                outcome: match &result {
                    Ok(_) => AuditOutcome::Ok,
                    Err(_) => AuditOutcome::Error,
                },
                finish_reason: result.as_ref().ok().map(|r| r.finish_reason),
                latency_ms: elapsed.as_millis() as u64,
                response_digest: result.as_ref().ok().map(|r| sha256_hex(r.text.as_bytes())),
                response_text: result.as_ref().ok().map(|r| r.text.clone()),
                error: result.as_ref().err().map(|e| e.message.clone()),
            });
            match result {
                Ok(response) => return Ok(response),
                Err(e) if !last_attempt => {
                    log::warn!(
                        "endpoint {} attempt {attempt}/{attempts} failed (retrying): {}",
                        request.endpoint,
                        e.message
                    );
                    let backoff = self.backoff_base * 2u32.saturating_pow(attempt - 1);
                    std::thread::sleep(backoff.min(Duration::from_secs(10)));
                }
                Err(e) => {
                    log::error!(
                        "endpoint {} failed after {attempt} attempt(s): {}",
                        request.endpoint,
                        e.message
                    );
                    return Ok(ChatResponse::error());
                }
            }
        }
        unreachable!("retry loop always returns");
    }

    /// Runs a slice of requests, returning results in input order. With the
    /// `parallel` feature the requests fan out across the rayon pool; the
    /// in-flight semaphore still bounds real concurrency.
    pub fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            requests.par_iter().map(|r| self.complete_text(r)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            requests.iter().map(|r| self.complete_text(r)).collect()
        }
    }

    /// Executes a request whose reply must contain a JSON object with the
    /// `required` fields. Tolerates prose and code fences around the object.
    /// On a parse miss it retries once with a corrective instruction, then
    /// reports [`Error::StructuredParse`].
    pub fn complete_structured(
        &self,
        request: &ChatRequest,
        required: &[&str],
    ) -> Result<Structured> {
        let first = self.complete_text(request)?;
        match try_structured(&first, required) {
            Ok(parsed) => return Ok(parsed),
            Err(miss) => {
                log::warn!(
                    "structured parse miss on {} ({miss}); retrying with corrective instruction",
                    request.endpoint
                );
            }
        }
        let mut corrective = request.clone();
        corrective.messages.push(ChatMessage::assistant(first.text.clone()));
        corrective.messages.push(ChatMessage::user(corrective_instruction(required)));
        let second = self.complete_text(&corrective)?;
        match try_structured(&second, required) {
            Ok(parsed) => Ok(parsed),
            Err(miss) => Err(Error::StructuredParse { message: miss, raw: second.text }),
        }
    }

    /// Snapshot of all audit entries recorded so far.
    pub fn audit_entries(&self) -> Vec<AuditEntry> {
        self.audit.entries()
    }

    /// Writes the audit log to `path` as NDJSON.
    pub fn write_audit(&self, path: &std::path::Path) -> Result<usize> {
        crate::io::write_ndjson(path, self.audit.entries())
    }
}

fn corrective_instruction(required: &[&str]) -> String {
    let fields = required
        .iter()
        .map(|f| format!("\"{f}\""))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Your previous reply could not be parsed. Respond again with only a \
         JSON object containing the fields: {fields}."
    )
}

fn try_structured(response: &ChatResponse, required: &[&str]) -> std::result::Result<Structured, String> {
    if response.is_error() {
        return Err("endpoint returned an error finish".to_string());
    }
    let fields = parse::extract_json_object(&response.text)
        .ok_or_else(|| "no JSON object found in reply".to_string())?;
    for name in required {
        if !fields.contains_key(*name) {
            return Err(format!("missing required field \"{name}\""));
        }
    }
    Ok(Structured { fields, raw: response.text.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use audit::ReplayTransport;
    use mock::{ConcurrencyProbe, FnTransport, ScriptStep, ScriptedTransport};

    fn quick_gateway() -> Gateway {
        Gateway::builder()
            .backoff_base(Duration::from_millis(1))
            .build()
            .unwrap()
    }

    fn req(endpoint: &str, content: &str) -> ChatRequest {
        ChatRequest::user(endpoint, content)
    }

    #[test]
    fn unregistered_endpoint_is_an_error() {
        let gw = quick_gateway();
        let err = gw.complete_text(&req("nope", "hi")).unwrap_err();
        assert!(matches!(err, Error::UnregisteredEndpoint(name) if name == "nope"));
    }

    #[test]
    fn success_passes_through() {
        let mut gw = quick_gateway();
        gw.register(
            "m",
            EndpointConfig::default(),
            Arc::new(ScriptedTransport::new([ScriptStep::Reply("pong".into())])),
        );
        let resp = gw.complete_text(&req("m", "ping")).unwrap();
        assert_eq!(resp.text, "pong");
        assert_eq!(resp.finish_reason, FinishReason::Stop);
        assert_eq!(gw.audit_entries().len(), 1);
    }

    #[test]
    fn retryable_failures_retry_then_succeed() {
        let mut gw = quick_gateway();
        gw.register(
            "m",
            EndpointConfig { requests_per_minute: 0, retries: 3 },
            Arc::new(ScriptedTransport::new([
                ScriptStep::FailRetryable("boom 1".into()),
                ScriptStep::FailRetryable("boom 2".into()),
                ScriptStep::Reply("recovered".into()),
            ])),
        );
        let resp = gw.complete_text(&req("m", "x")).unwrap();
        assert_eq!(resp.text, "recovered");
        let entries = gw.audit_entries();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].attempt, 1);
        assert!(!entries[0].last_attempt);
        assert!(entries[2].last_attempt);
    }

    #[test]
    fn exhausted_retries_yield_error_finish() {
        let retries = 3u32;
        let mut gw = quick_gateway();
        gw.register(
            "m",
            EndpointConfig { requests_per_minute: 0, retries },
            Arc::new(ScriptedTransport::always_fail("down")),
        );
        let resp = gw.complete_text(&req("m", "x")).unwrap();
        assert!(resp.is_error());
        // One audit entry per attempt: retries + 1.
        assert_eq!(gw.audit_entries().len(), (retries + 1) as usize);
    }

    #[test]
    fn fatal_failures_do_not_retry() {
        let mut gw = quick_gateway();
        gw.register(
            "m",
            EndpointConfig { requests_per_minute: 0, retries: 3 },
            Arc::new(ScriptedTransport::new([ScriptStep::FailFatal("bad request".into())])),
        );
        let resp = gw.complete_text(&req("m", "x")).unwrap();
        assert!(resp.is_error());
        assert_eq!(gw.audit_entries().len(), 1);
    }

    #[test]
    fn batch_results_are_in_input_order() {
        let mut gw = quick_gateway();
        gw.register(
            "echo",
            EndpointConfig::default(),
            Arc::new(FnTransport::new(|r: &ChatRequest| {
                Ok(ChatResponse::ok(format!("echo: {}", r.messages[0].content)))
            })),
        );
        let requests: Vec<ChatRequest> =
            (0..32).map(|i| req("echo", &format!("msg {i}"))).collect();
        let results = gw.complete_batch(&requests);
        for (i, r) in results.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().text, format!("echo: msg {i}"));
        }
    }

    #[test]
    fn in_flight_cap_is_respected() {
        let cap = 3usize;
        let mut gw = Gateway::builder()
            .max_in_flight(cap)
            .backoff_base(Duration::from_millis(1))
            .build()
            .unwrap();
        let probe = Arc::new(ConcurrencyProbe::new(Duration::from_millis(5)));
        gw.register("probe", EndpointConfig::default(), probe.clone());
        let requests: Vec<ChatRequest> =
            (0..24).map(|i| req("probe", &format!("{i}"))).collect();
        let _ = gw.complete_batch(&requests);
        assert!(
            probe.peak() <= cap,
            "peak concurrency {} exceeded cap {cap}",
            probe.peak()
        );
    }

    #[test]
    fn pacing_spaces_out_request_starts() {
        let mut gw = quick_gateway();
        gw.register(
            "slowlane",
            // 6000 rpm = one start per 10ms.
            EndpointConfig { requests_per_minute: 6000, retries: 0 },
            Arc::new(FnTransport::new(|_| Ok(ChatResponse::ok("ok")))),
        );
        let start = Instant::now();
        for i in 0..5 {
            gw.complete_text(&req("slowlane", &format!("{i}"))).unwrap();
        }
        // Five starts need at least four 10ms gaps.
        assert!(start.elapsed() >= Duration::from_millis(40));
    }

    #[test]
    fn structured_parses_object_with_surrounding_prose() {
        let mut gw = quick_gateway();
        gw.register(
            "judge",
            EndpointConfig::default(),
            Arc::new(ScriptedTransport::new([ScriptStep::Reply(
                "Here is my verdict:\n```json\n{\"Justification\": \"clear\", \"Score\": 4}\n```".into(),
            )])),
        );
        let parsed = gw
            .complete_structured(&req("judge", "rate this"), &["Justification", "Score"])
            .unwrap();
        assert_eq!(parsed.fields["Score"], serde_json::json!(4));
    }

    #[test]
    fn structured_retries_once_with_corrective_instruction() {
        let mut gw = quick_gateway();
        gw.register(
            "judge",
            EndpointConfig::default(),
            Arc::new(ScriptedTransport::new([
                ScriptStep::Reply("I think it's fine.".into()),
                ScriptStep::Reply("{\"Score\": 5, \"Justification\": \"ok\"}".into()),
            ])),
        );
        let parsed = gw
            .complete_structured(&req("judge", "rate"), &["Justification", "Score"])
            .unwrap();
        assert_eq!(parsed.fields["Score"], serde_json::json!(5));
        // Two text completions happened: the miss and the corrective retry.
        assert_eq!(gw.audit_entries().len(), 2);
    }

    #[test]
    fn structured_failure_after_retry_is_an_error() {
        let mut gw = quick_gateway();
        gw.register(
            "judge",
            EndpointConfig::default(),
            Arc::new(ScriptedTransport::new([
                ScriptStep::Reply("no json here".into()),
                ScriptStep::Reply("still no json".into()),
            ])),
        );
        let err = gw
            .complete_structured(&req("judge", "rate"), &["Score"])
            .unwrap_err();
        match err {
            Error::StructuredParse { raw, .. } => assert_eq!(raw, "still no json"),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn missing_required_field_counts_as_parse_miss() {
        let mut gw = quick_gateway();
        gw.register(
            "judge",
            EndpointConfig::default(),
            Arc::new(ScriptedTransport::new([
                ScriptStep::Reply("{\"Justification\": \"only\"}".into()),
                ScriptStep::Reply("{\"Justification\": \"still only\"}".into()),
            ])),
        );
        let err = gw.complete_structured(&req("judge", "x"), &["Score"]).unwrap_err();
        assert!(matches!(err, Error::StructuredParse { .. }));
    }

    #[test]
    fn replay_reproduces_recorded_outcomes() {
        // Record a run with a retry in the middle.
        let mut gw = quick_gateway();
        gw.register(
            "m",
            EndpointConfig { requests_per_minute: 0, retries: 2 },
            Arc::new(ScriptedTransport::new([
                ScriptStep::Reply("first".into()),
                ScriptStep::FailRetryable("blip".into()),
                ScriptStep::Reply("second".into()),
            ])),
        );
        let r1 = gw.complete_text(&req("m", "alpha")).unwrap();
        let r2 = gw.complete_text(&req("m", "beta")).unwrap();
        let entries = gw.audit_entries();

        // Replay: same requests, transport backed by the audit log.
        let mut replay_gw = quick_gateway();
        replay_gw.register(
            "m",
            EndpointConfig::default(),
            Arc::new(ReplayTransport::from_entries(&entries)),
        );
        let p1 = replay_gw.complete_text(&req("m", "alpha")).unwrap();
        let p2 = replay_gw.complete_text(&req("m", "beta")).unwrap();
        assert_eq!(p1.text, r1.text);
        assert_eq!(p2.text, r2.text);
    }

    #[test]
    fn request_digest_is_stable_and_sensitive() {
        let a = req("m", "alpha");
        assert_eq!(request_digest(&a), request_digest(&a.clone()));
        let mut b = a.clone();
        b.temperature = 0.8;
        assert_ne!(request_digest(&a), request_digest(&b));
    }
}
