//! Audit log for model calls, and the replay transport built on top of it.
//!
//! Every attempt — including retries that failed — becomes one NDJSON line
//! with the request digest, response digest, and latency. Entries keep the
//! full response text so a recorded run can be replayed byte-for-byte
//! without touching the network: [`ReplayTransport`] answers each request by
//! digest from the log, in recorded order.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{
    request_digest, ChatRequest, ChatResponse, FinishReason, Transport, TransportError, Usage,
};

/// Whether an attempt produced a response or a transport failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditOutcome {
    Ok,
    Error,
}

/// One model-call attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub v: u32,
    /// Global append order within the run.
    pub seq: u64,
    pub endpoint: String,
    pub request_digest: String,
    /// 1-based attempt number for this request invocation.
    pub attempt: u32,
    /// True when this attempt settled the invocation (success, fatal
    /// failure, or the final retry). Replay serves only these entries.
    pub last_attempt: bool,
    pub outcome: AuditOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_digest: Option<String>,
    /// Full response text; the price of byte-exact replayability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct AuditInner {
    entries: Vec<AuditEntry>,
    writer: Option<BufWriter<File>>,
}

/// Append-only audit log, optionally streamed to a file line by line so a
/// crashed run still leaves its trace on disk.
pub struct AuditLog {
    inner: Mutex<AuditInner>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog { inner: Mutex::new(AuditInner { entries: Vec::new(), writer: None }) }
    }

    pub fn with_file(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(AuditLog {
            inner: Mutex::new(AuditInner {
                entries: Vec::new(),
                writer: Some(BufWriter::new(file)),
            }),
        })
    }

    pub fn append(&self, entry: AuditEntry) {
        let mut inner = self.inner.lock();
        if let Some(writer) = inner.writer.as_mut() {
            // Best effort: audit writing must never take the pipeline down.
            if let Ok(line) = serde_json::to_string(&entry) {
                let _ = writer.write_all(line.as_bytes());
                let _ = writer.write_all(b"\n");
                let _ = writer.flush();
            }
        }
        inner.entries.push(entry);
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.inner.lock().entries.clone()
    }
}

/// Transport that answers requests from a recorded audit log.
///
/// Only settling attempts are indexed (intermediate retryable failures were
/// already absorbed by the original run's retry loop). Repeated identical
/// requests are served in recorded `seq` order, so a run that asked the same
/// question twice replays both answers in sequence.
pub struct ReplayTransport {
    by_digest: Mutex<HashMap<String, VecDeque<AuditEntry>>>,
}

impl ReplayTransport {
    pub fn from_entries(entries: &[AuditEntry]) -> Self {
        let mut sorted: Vec<&AuditEntry> =
            entries.iter().filter(|e| e.last_attempt).collect();
        sorted.sort_by_key(|e| e.seq);
        let mut by_digest: HashMap<String, VecDeque<AuditEntry>> = HashMap::new();
        for entry in sorted {
            by_digest
                .entry(entry.request_digest.clone())
                .or_default()
                .push_back(entry.clone());
        }
        ReplayTransport { by_digest: Mutex::new(by_digest) }
    }

    pub fn from_audit_file(path: &Path) -> Result<Self> {
        let entries: Vec<AuditEntry> = crate::io::read_ndjson(path)?;
        Ok(ReplayTransport::from_entries(&entries))
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, TransportError> {
        let digest = request_digest(request);
        let entry = {
            let mut map = self.by_digest.lock();
            map.get_mut(&digest).and_then(|q| q.pop_front())
        };
        match entry {
            Some(e) => match e.outcome {
                AuditOutcome::Ok => Ok(ChatResponse {
                    text: e.response_text.unwrap_or_default(),
                    finish_reason: e.finish_reason.unwrap_or(FinishReason::Stop),
                    usage: Usage::default(),
                }),
                AuditOutcome::Error => Err(TransportError::fatal(
                    e.error.unwrap_or_else(|| "recorded failure".to_string()),
                )),
            },
            None => Err(TransportError::fatal(format!(
                "no recorded response for request digest {digest}"
            ))),
        }
    }
}
