//! Campaign plans (TOML) and their expansion into trial lists.
//!
//! ```toml
//! [workload]
//! id = "mini-kv"
//! dataset_seed = 1
//! query_seed = 1
//! queries = 100            # default: the workload's own default
//! [workload.params]        # optional size overrides
//! keys = 100
//!
//! [backend]
//! kind = "arena"           # or "debugger"
//! worker = ["/path/to/hrmlab-worker"]   # debugger only
//!
//! [sampling]
//! region = "heap"          # a region kind, or `label = "kv.index"`
//! targets = 64             # sampled without replacement
//! modes = ["soft", "hard-stuck-at-current"]
//! controls = 0             # extra trials with no injection
//! seed = 7
//! trigger = { after-queries = 1 }
//!
//! [limits]
//! timeout_ms = 60000
//! parallelism = 4
//! comparator = "per-query-exact"
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CampaignError, Comparator, TrialConfig};
use crate::backend::{BackendKind, ErrorMode, ErrorSpec, Trigger, DEFAULT_REASSERT_US};
use crate::region::{sample_addresses, MemoryRegionMap, RegionFilter, RegionKind};
use crate::workloads::graph::GraphParams;
use crate::workloads::kv::KvParams;
use crate::workloads::search::SearchParams;
use crate::workloads::{WorkloadId, WorkloadParams, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub id: WorkloadId,
    #[serde(default = "one")]
    pub dataset_seed: u64,
    #[serde(default = "one")]
    pub query_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<toml::Table>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub targets: usize,
    #[serde(default = "soft_only")]
    pub modes: Vec<ErrorMode>,
    #[serde(default)]
    pub controls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub trigger: Trigger,
    #[serde(default = "default_reassert")]
    pub reassert_interval_us: u64,
}

fn soft_only() -> Vec<ErrorMode> {
    vec![ErrorMode::Soft]
}

fn default_reassert() -> u64 {
    DEFAULT_REASSERT_US
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub comparator: Comparator,
}

fn default_timeout() -> u64 {
    60_000
}

fn default_parallelism() -> usize {
    1
}

impl Default for LimitsSection {
    fn default() -> Self {
        LimitsSection {
            timeout_ms: default_timeout(),
            parallelism: default_parallelism(),
            comparator: Comparator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignPlan {
    pub workload: WorkloadSection,
    pub backend: BackendSection,
    pub sampling: SamplingSection,
    #[serde(default)]
    pub limits: LimitsSection,
}

/// One planned trial before it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTrial {
    pub seq: u64,
    pub config: TrialConfig,
}

impl CampaignPlan {
    pub fn from_toml(text: &str) -> Result<Self, CampaignError> {
        let plan: CampaignPlan = toml::from_str(text).map_err(|e| CampaignError::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plans serialize")
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::Plan(m.to_string()));
        self.workload_spec()?;
        if self.sampling.region.is_some() && self.sampling.label.is_some() {
            return bad("[sampling] takes either `region` or `label`, not both");
        }
        if self.sampling.targets > 0 && self.sampling.modes.is_empty() {
            return bad("[sampling] modes must not be empty when targets > 0");
        }
        if self.sampling.reassert_interval_us == 0 {
            return bad("[sampling] reassert_interval_us must be positive");
        }
        if self.limits.timeout_ms == 0 {
            return bad("[limits] timeout_ms must be positive");
        }
        if self.limits.parallelism == 0 {
            return bad("[limits] parallelism must be at least 1");
        }
        if self.queries()? == 0 {
            return bad("[workload] queries must be at least 1");
        }
        if self.backend.kind == BackendKind::Arena && self.backend.worker.is_some() {
            return bad("[backend] worker applies to the debugger backend only");
        }
        Ok(())
    }

    pub fn workload_spec(&self) -> Result<WorkloadSpec, CampaignError> {
        let w = &self.workload;
        let mut spec = WorkloadSpec::new(w.id, w.dataset_seed, w.query_seed);
        if let Some(table) = &w.params {
            let value = toml::Value::Table(table.clone());
            let err = |e: toml::de::Error| CampaignError::Plan(format!("[workload.params]: {e}"));
            spec.params = match w.id {
                WorkloadId::MiniKv => WorkloadParams::MiniKv(value.try_into::<KvParams>().map_err(err)?),
                WorkloadId::MiniSearch => {
                    WorkloadParams::MiniSearch(value.try_into::<SearchParams>().map_err(err)?)
                }
                WorkloadId::MiniGraph => WorkloadParams::MiniGraph(value.try_into::<GraphParams>().map_err(err)?),
            };
        }
        spec.validate().map_err(|e| CampaignError::Plan(e.to_string()))?;
        Ok(spec)
    }

    pub fn queries(&self) -> Result<usize, CampaignError> {
        Ok(match self.workload.queries {
            Some(q) => q,
            None => self.workload_spec()?.default_queries(),
        })
    }

    pub fn filter(&self) -> RegionFilter {
        match (&self.sampling.region, &self.sampling.label) {
            (Some(k), _) => RegionFilter::Kind(*k),
            (None, Some(l)) => RegionFilter::Label(l.clone()),
            (None, None) => RegionFilter::All,
        }
    }

    /// The plan with `seed` resolved and execution-only settings normalized.
    pub fn canonical(&self, seed: u64) -> CampaignPlan {
        let mut canonical = self.clone();
        canonical.sampling.seed = Some(seed);
        canonical.limits.parallelism = 1;
        canonical
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self, seed: u64) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(&self.canonical(seed)).expect("plans serialize")))
    }

    /// Expands the plan: `controls` zero-injection trials first, then one
    /// trial per sampled target and mode, targets in sampled order.
    pub fn trials(&self, seed: u64, map: &MemoryRegionMap) -> Result<Vec<PlannedTrial>, CampaignError> {
        let spec = self.workload_spec()?;
        let queries = self.queries()?;
        let targets = if self.sampling.targets == 0 {
            Vec::new()
        } else {
            sample_addresses(map, &self.filter(), self.sampling.targets, seed)
                .map_err(|e| CampaignError::Plan(format!("sampling: {e}")))?
        };
        let config = |seq: u64, specs: Vec<ErrorSpec>| TrialConfig {
            workload: spec,
            backend: self.backend.kind,
            specs,
            queries,
            timeout_ms: self.limits.timeout_ms,
            comparator: self.limits.comparator,
            seed: trial_seed(seed, seq),
        };
        let mut out = Vec::new();
        for _ in 0..self.sampling.controls {
            let seq = out.len() as u64;
            out.push(PlannedTrial {
                seq,
                config: config(seq, vec![]),
            });
        }
        for t in targets {
            for &mode in &self.sampling.modes {
                let mut e = ErrorSpec::with_mode(t, mode).at(self.sampling.trigger);
                if mode.is_hard() {
                    e.reassert_interval_us = Some(self.sampling.reassert_interval_us);
                }
                let seq = out.len() as u64;
                out.push(PlannedTrial {
                    seq,
                    config: config(seq, vec![e]),
                });
            }
        }
        Ok(out)
    }
}

/// Per-trial seed: SplitMix64 of the campaign seed and sequence number.
pub fn trial_seed(seed: u64, seq: u64) -> u64 {
    let mut z = seed.wrapping_add(seq.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
