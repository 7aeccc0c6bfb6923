//! Injection campaigns: spawn, inject, drive queries, watch, classify, log.

pub mod compare;
pub mod log;
pub mod plan;
pub mod runner;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compare::{classify_outcome, compare_output, Comparator, CompareError, ExitStatus};
pub use log::{read_log, CampaignLog, LogHeader, LogWriter};
pub use plan::CampaignPlan;
pub use runner::{run_campaign, run_trial, CampaignSummary, RunOptions, TrialRun};

use crate::backend::{BackendKind, ErrorSpec, InjectionReceipt};
use crate::region::RegionKind;
use crate::workloads::{WorkloadError, WorkloadSpec};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("plan error: {0}")]
    Plan(String),
    #[error("setup error: {0}")]
    Setup(String),
    #[error("log integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub workload: WorkloadSpec,
    pub backend: BackendKind,
    pub specs: Vec<ErrorSpec>,
    pub queries: usize,
    pub timeout_ms: u64,
    pub comparator: Comparator,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashCause {
    Signal(i32),
    ExitCode(i32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrialOutcome {
    Crash {
        cause: CrashCause,
        time_to_crash_us: u64,
        queries_served: u64,
    },
    Incorrect {
        mismatched: u64,
        total: u64,
    },
    Masked {
        total: u64,
    },
    Hang {
        timeout_us: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeKind {
    Crash,
    Incorrect,
    Masked,
    Hang,
}

impl TrialOutcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            TrialOutcome::Crash { .. } => OutcomeKind::Crash,
            TrialOutcome::Incorrect { .. } => OutcomeKind::Incorrect,
            TrialOutcome::Masked { .. } => OutcomeKind::Masked,
            TrialOutcome::Hang { .. } => OutcomeKind::Hang,
        }
    }

    /// Equal up to timing: kind, crash cause, query counts.
    pub fn same_behaviour(&self, other: &TrialOutcome) -> bool {
        use TrialOutcome::*;
        match (self, other) {
            (Crash { cause: a, queries_served: qa, .. }, Crash { cause: b, queries_served: qb, .. }) => {
                a == b && qa == qb
            }
            (Hang { .. }, Hang { .. }) => true,
            _ => self == other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTag {
    pub kind: RegionKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TrialStatus {
    Valid { outcome: TrialOutcome },
    /// The harness, not the target, failed; excluded from statistics.
    InfrastructureInvalid { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seq: u64,
    pub config: TrialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionTag>,
    #[serde(flatten)]
    pub status: TrialStatus,
    #[serde(default)]
    pub receipts: Vec<InjectionReceipt>,
}

impl TrialRecord {
    pub fn outcome(&self) -> Option<&TrialOutcome> {
        match &self.status {
            TrialStatus::Valid { outcome } => Some(outcome),
            TrialStatus::InfrastructureInvalid { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_json_shape() {
        let r = TrialRecord {
            seq: 4,
            config: TrialConfig {
                workload: WorkloadSpec::new(crate::workloads::WorkloadId::MiniKv, 1, 1),
                backend: BackendKind::Arena,
                specs: vec![],
                queries: 10,
                timeout_ms: 100,
                comparator: Comparator::TopKOverlap { k: 3, threshold: 0.5 },
                seed: 9,
            },
            region: None,
            status: TrialStatus::Valid {
                outcome: TrialOutcome::Crash {
                    cause: CrashCause::Signal(11),
                    time_to_crash_us: 5,
                    queries_served: 2,
                },
            },
            receipts: vec![],
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""status":"valid""#), "{json}");
        assert!(json.contains(r#""kind":"crash""#), "{json}");
        assert_eq!(serde_json::from_str::<TrialRecord>(&json).unwrap(), r);
    }

    #[test]
    fn behaviour_ignores_timing() {
        let a = TrialOutcome::Crash {
            cause: CrashCause::Signal(11),
            time_to_crash_us: 5,
            queries_served: 2,
        };
        let b = TrialOutcome::Crash {
            cause: CrashCause::Signal(11),
            time_to_crash_us: 900,
            queries_served: 2,
        };
        assert!(a.same_behaviour(&b));
        assert!(!a.same_behaviour(&TrialOutcome::Masked { total: 2 }));
    }
}
