//! Injection backends: read, flip and pin bits in a running target.
//!
//! Two implementations share the [`Session`] contract:
//!
//! * [`arena::ArenaSession`] runs a bundled workload in-process over an
//!   instrumented byte array. Time is virtual (one microsecond per memory
//!   access), so trials are exactly reproducible.
//! * `debugger::DebuggerSession` (Linux) spawns a real worker process under
//!   ptrace and pokes its memory.

pub mod arena;
#[cfg(target_os = "linux")]
pub mod debugger;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region::{InjectionTarget, MemoryRegionMap, RegionError};

pub const SIGSEGV: i32 = 11;
pub const DEFAULT_REASSERT_US: u64 = 1_000;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("launch error: {0}")]
    Launch(String),
    #[error("access error at {address:#x}: {reason}")]
    Access { address: u64, reason: String },
    #[error("session error: {0}")]
    Session(String),
    #[error("invalid error spec: {0}")]
    Spec(String),
    #[error("worker protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Region(#[from] RegionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Debugger,
    Arena,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Debugger => "debugger",
            BackendKind::Arena => "arena",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "debugger" => Ok(BackendKind::Debugger),
            "arena" => Ok(BackendKind::Arena),
            _ => Err(BackendError::Spec(format!("unknown backend `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    Soft,
    #[serde(rename = "hard-stuck-at-0")]
    HardStuckAt0,
    #[serde(rename = "hard-stuck-at-1")]
    HardStuckAt1,
    HardStuckAtCurrent,
}

impl ErrorMode {
    pub const ALL: [ErrorMode; 4] = [
        ErrorMode::Soft,
        ErrorMode::HardStuckAt0,
        ErrorMode::HardStuckAt1,
        ErrorMode::HardStuckAtCurrent,
    ];

    pub fn is_hard(self) -> bool {
        self != ErrorMode::Soft
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorMode::Soft => "soft",
            ErrorMode::HardStuckAt0 => "hard-stuck-at-0",
            ErrorMode::HardStuckAt1 => "hard-stuck-at-1",
            ErrorMode::HardStuckAtCurrent => "hard-stuck-at-current",
        }
    }

    /// Value the bit is held at, given its value when the pin is applied.
    pub fn stuck_value(self, current: bool) -> Option<bool> {
        match self {
            ErrorMode::Soft => None,
            ErrorMode::HardStuckAt0 => Some(false),
            ErrorMode::HardStuckAt1 => Some(true),
            ErrorMode::HardStuckAtCurrent => Some(current),
        }
    }
}

impl fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorMode {
    type Err = BackendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" => Ok(ErrorMode::HardStuckAtCurrent),
            _ => ErrorMode::ALL
                .into_iter()
                .find(|m| m.as_str() == s)
                .ok_or_else(|| BackendError::Spec(format!("unknown error mode `{s}`"))),
        }
    }
}

/// When an error is applied, relative to the target's life.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    ProcessStart,
    AfterQueries(u64),
    /// Offset from session start in microseconds, checked at query boundaries.
    WallClockUs(u64),
}

impl Default for Trigger {
    fn default() -> Self {
        Trigger::AfterQueries(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub target: InjectionTarget,
    pub mode: ErrorMode,
    #[serde(default)]
    pub inject_at: Trigger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reassert_interval_us: Option<u64>,
}

impl ErrorSpec {
    pub fn soft(target: InjectionTarget) -> Self {
        ErrorSpec {
            target,
            mode: ErrorMode::Soft,
            inject_at: Trigger::default(),
            reassert_interval_us: None,
        }
    }

    pub fn with_mode(target: InjectionTarget, mode: ErrorMode) -> Self {
        ErrorSpec {
            target,
            mode,
            inject_at: Trigger::default(),
            reassert_interval_us: mode.is_hard().then_some(DEFAULT_REASSERT_US),
        }
    }

    pub fn at(mut self, trigger: Trigger) -> Self {
        self.inject_at = trigger;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match (self.mode.is_hard(), self.reassert_interval_us) {
            (true, Some(0)) => Err(BackendError::Spec("reassert interval must be positive".into())),
            (true, Some(_)) | (false, None) => Ok(()),
            (true, None) => Err(BackendError::Spec(format!("{} needs a reassert interval", self.mode))),
            (false, Some(_)) => Err(BackendError::Spec("soft errors take no reassert interval".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReceiptAction {
    Flip,
    Pin,
    Reassert,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Direct,
    ArenaReadPin,
    HwWatchpoint,
    TimedReassert,
}

/// One mutation (or a run of identical re-assertions) performed on the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionReceipt {
    pub action: ReceiptAction,
    pub target: InjectionTarget,
    pub address: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<ErrorMode>,
    pub pre: u8,
    pub post: u8,
    pub at_us: u64,
    pub mechanism: Mechanism,
    /// Re-assertions folded into this receipt; 1 for everything else.
    pub count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

impl InjectionReceipt {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("receipt serializes")
    }
}

/// Append-only receipt log; consecutive re-assertions of one bit coalesce.
#[derive(Debug, Default)]
pub struct Journal {
    entries: Vec<InjectionReceipt>,
}

impl Journal {
    pub fn record(&mut self, r: InjectionReceipt) {
        if r.action == ReceiptAction::Reassert {
            if let Some(last) = self.entries.last_mut() {
                if last.action == ReceiptAction::Reassert
                    && last.address == r.address
                    && last.target == r.target
                    && last.mechanism == r.mechanism
                {
                    last.count += r.count;
                    last.post = r.post;
                    return;
                }
            }
        }
        self.entries.push(r);
    }

    pub fn take(&mut self) -> Vec<InjectionReceipt> {
        std::mem::take(&mut self.entries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionEvent {
    Stopped,
    Exited(i32),
    Signaled(i32),
    WatchHit { address: u64 },
    Timeout,
}

impl SessionEvent {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionEvent::Exited(_) | SessionEvent::Signaled(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Response(Vec<u8>),
    /// The target ended before answering.
    Terminated(SessionEvent),
    TimedOut,
}

/// Internally synchronized event queue; a watchdog may post through a clone.
#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    inner: Arc<(Mutex<VecDeque<SessionEvent>>, Condvar)>,
}

impl EventQueue {
    pub fn post(&self, e: SessionEvent) {
        let (q, cv) = &*self.inner;
        q.lock().unwrap_or_else(|p| p.into_inner()).push_back(e);
        cv.notify_all();
    }

    pub fn try_pop(&self) -> Option<SessionEvent> {
        self.inner.0.lock().unwrap_or_else(|p| p.into_inner()).pop_front()
    }

    pub fn wait(&self, timeout: Duration) -> Option<SessionEvent> {
        let (q, cv) = &*self.inner;
        let guard = q.lock().unwrap_or_else(|p| p.into_inner());
        let (mut guard, _) = cv
            .wait_timeout_while(guard, timeout, |q| q.is_empty())
            .unwrap_or_else(|p| p.into_inner());
        guard.pop_front()
    }
}

/// Contract shared by both backends. A session is driven by one thread.
pub trait Session: Send {
    fn kind(&self) -> BackendKind;

    /// Starts the target from its entry stop and waits until it is ready
    /// for requests; afterwards [`Session::target_map`] is available.
    fn resume(&mut self) -> Result<(), BackendError>;

    /// Injectable regions in target addresses.
    fn target_map(&self) -> Option<&MemoryRegionMap>;

    /// The target's whole address space as the platform reports it.
    fn capture_region_map(&mut self) -> Result<MemoryRegionMap, BackendError>;

    fn read_byte(&mut self, target: &InjectionTarget) -> Result<u8, BackendError>;
    fn write_byte(&mut self, target: &InjectionTarget, value: u8) -> Result<(), BackendError>;
    fn inject_soft(&mut self, spec: &ErrorSpec) -> Result<InjectionReceipt, BackendError>;
    fn inject_hard(&mut self, spec: &ErrorSpec) -> Result<InjectionReceipt, BackendError>;

    fn inject(&mut self, spec: &ErrorSpec) -> Result<InjectionReceipt, BackendError> {
        spec.validate()?;
        if spec.mode.is_hard() {
            self.inject_hard(spec)
        } else {
            self.inject_soft(spec)
        }
    }

    /// Sends one request frame and waits for its response frame.
    fn request(&mut self, payload: &[u8], timeout: Duration) -> Result<Reply, BackendError>;

    /// Ends the request stream; a healthy target then exits 0.
    fn close_input(&mut self) -> Result<(), BackendError>;

    fn watch_events(&mut self, timeout: Duration) -> SessionEvent;

    /// Time since resume: virtual for the arena, wall-clock for the debugger.
    fn elapsed(&self) -> Duration;

    /// Drains the receipt journal.
    fn take_receipts(&mut self) -> Vec<InjectionReceipt>;

    /// Kills and reaps the target. Idempotent.
    fn terminate(&mut self);

    fn is_live(&self) -> bool;

    fn event_poster(&self) -> EventQueue;

    /// Dataset checksum the target announced, when it announces one.
    fn dataset_checksum(&self) -> Option<String> {
        None
    }
}

/// Starts `argv` under the chosen backend, suspended at entry.
pub fn spawn(
    kind: BackendKind,
    argv: &[String],
    env: &[(String, String)],
) -> Result<Box<dyn Session>, BackendError> {
    if argv.is_empty() {
        return Err(BackendError::Launch("empty command".into()));
    }
    match kind {
        BackendKind::Arena => Ok(Box::new(arena::ArenaSession::spawn(argv, env)?)),
        #[cfg(target_os = "linux")]
        BackendKind::Debugger => Ok(Box::new(debugger::DebuggerSession::spawn(argv, env)?)),
        #[cfg(not(target_os = "linux"))]
        BackendKind::Debugger => Err(BackendError::Launch("debugger backend requires Linux".into())),
    }
}

pub(crate) fn flip_receipt(
    spec: &ErrorSpec,
    address: u64,
    pre: u8,
    at_us: u64,
    mechanism: Mechanism,
) -> InjectionReceipt {
    InjectionReceipt {
        action: ReceiptAction::Flip,
        target: spec.target,
        address,
        mode: Some(ErrorMode::Soft),
        pre,
        post: pre ^ (1 << spec.target.bit),
        at_us,
        mechanism,
        count: 1,
        notice: None,
    }
}

/// `byte` with `bit` forced to `value`.
pub fn force_bit(byte: u8, bit: u8, value: bool) -> u8 {
    if value {
        byte | (1 << bit)
    } else {
        byte & !(1 << bit)
    }
}
