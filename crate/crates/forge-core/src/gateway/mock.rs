//! Mock transports for tests and offline runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::Mutex;

use crate::gateway::{ChatRequest, ChatResponse, Transport, TransportError};

/// One step of a scripted conversation.
#[derive(Debug, Clone)]
pub enum ScriptStep {
    /// Reply successfully with this text.
    Reply(String),
    /// Fail with a retryable transport error.
    FailRetryable(String),
    /// Fail with a non-retryable transport error.
    FailFatal(String),
}

/// Replays a fixed script of outcomes, one per call, in order. Once the
/// script is exhausted every further call fails fatally — except for
/// [`ScriptedTransport::always_fail`], which loops forever.
pub struct ScriptedTransport {
    steps: Mutex<VecDeque<ScriptStep>>,
    repeat_last: bool,
}

impl ScriptedTransport {
    pub fn new(steps: impl IntoIterator<Item = ScriptStep>) -> Self {
        ScriptedTransport {
            steps: Mutex::new(steps.into_iter().collect()),
            repeat_last: false,
        }
    }

    /// A transport that fails retryably on every call, forever.
    pub fn always_fail(message: &str) -> Self {
        ScriptedTransport {
            steps: Mutex::new(VecDeque::from([ScriptStep::FailRetryable(message.into())])),
            repeat_last: true,
        }
    }

    /// Steps not yet consumed.
    pub fn remaining(&self) -> usize {
        self.steps.lock().len()
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, _request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let step = {
            let mut steps = self.steps.lock();
            if self.repeat_last && steps.len() == 1 {
                steps.front().cloned()
            } else {
                steps.pop_front()
            }
        };
        match step {
            Some(ScriptStep::Reply(text)) => Ok(ChatResponse::ok(text)),
            Some(ScriptStep::FailRetryable(m)) => Err(TransportError::retryable(m)),
            Some(ScriptStep::FailFatal(m)) => Err(TransportError::fatal(m)),
            None => Err(TransportError::fatal("script exhausted")),
        }
    }
}

/// Wraps a pure function as a transport. The workhorse for dry runs: the
/// function sees the full request (including seed), so behavior can be
/// deterministic yet input-dependent.
pub struct FnTransport {
    f: Box<dyn Fn(&ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync>,
}

impl FnTransport {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync + 'static,
    {
        FnTransport { f: Box::new(f) }
    }
}

impl Transport for FnTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        (self.f)(request)
    }
}

/// Records peak concurrent calls; used to verify the in-flight cap.
pub struct ConcurrencyProbe {
    current: AtomicUsize,
    peak: AtomicUsize,
    hold: Duration,
}

impl ConcurrencyProbe {
    pub fn new(hold: Duration) -> Self {
        ConcurrencyProbe {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            hold,
        }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Transport for ConcurrencyProbe {
    fn send(&self, _request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.hold);
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(ChatResponse::ok("ok"))
    }
}
