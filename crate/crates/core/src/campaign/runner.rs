//! Trial execution and the campaign driver.
//!
//! Trials run on a fixed pool of worker threads; each session lives and
//! dies on the thread that spawned it. Completed records go to a single
//! [`LogWriter`], which emits them in `seq` order whatever the completion
//! order, so the log is identical for every pool size.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use super::log::{LogHeader, LogWriter, SCHEMA_VERSION};
use super::plan::PlannedTrial;
use super::{
    classify_outcome, CampaignError, CampaignPlan, ExitStatus, OutcomeKind, RegionTag, TrialConfig,
    TrialOutcome, TrialRecord, TrialStatus,
};
use crate::backend::{spawn, BackendKind, ErrorSpec, InjectionReceipt, Reply, Session, Trigger};
use crate::region::MemoryRegionMap;
use crate::workloads::{golden_run, Golden, WorkloadId};

/// Result of one trial before it is numbered and tagged.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub status: TrialStatus,
    pub receipts: Vec<InjectionReceipt>,
}

/// Runs one trial to completion. Failures of the harness or target launch
/// come back as `InfrastructureInvalid`; only a golden that does not match
/// the configuration is an error.
pub fn run_trial(config: &TrialConfig, golden: &Golden, worker: &[String]) -> Result<TrialRun, CampaignError> {
    if golden.spec != config.workload || golden.queries != config.queries {
        return Err(CampaignError::Setup(
            "golden output was recorded for a different workload configuration".into(),
        ));
    }
    let argv = match config.backend {
        BackendKind::Arena => config.workload.to_args(),
        BackendKind::Debugger => {
            if worker.is_empty() {
                return Err(CampaignError::Setup("the debugger backend needs a worker command".into()));
            }
            worker.iter().cloned().chain(config.workload.to_args()).collect()
        }
    };
    let mut session = match spawn(config.backend, &argv, &[]) {
        Ok(s) => s,
        Err(e) => {
            return Ok(TrialRun {
                status: TrialStatus::InfrastructureInvalid { reason: e.to_string() },
                receipts: vec![],
            })
        }
    };
    let result = drive(session.as_mut(), config, golden);
    let receipts = session.take_receipts();
    session.terminate();
    let status = match result {
        Ok(outcome) => TrialStatus::Valid { outcome },
        Err(reason) => TrialStatus::InfrastructureInvalid { reason },
    };
    Ok(TrialRun { status, receipts })
}

fn due(trigger: Trigger, served: usize, elapsed: Duration) -> bool {
    match trigger {
        Trigger::ProcessStart => true,
        Trigger::AfterQueries(n) => served as u64 >= n,
        Trigger::WallClockUs(us) => elapsed.as_micros() as u64 >= us,
    }
}

fn fire_due(session: &mut dyn Session, pending: &mut Vec<ErrorSpec>, served: usize) -> Result<(), String> {
    let elapsed = session.elapsed();
    let (now, later): (Vec<_>, Vec<_>) = pending.drain(..).partition(|s| due(s.inject_at, served, elapsed));
    *pending = later;
    for spec in now {
        session.inject(&spec).map_err(|e| format!("injection failed: {e}"))?;
    }
    Ok(())
}

fn drive(session: &mut dyn Session, config: &TrialConfig, golden: &Golden) -> Result<TrialOutcome, String> {
    let timeout = Duration::from_millis(config.timeout_ms);
    session.resume().map_err(|e| format!("resume: {e}"))?;
    if session.target_map().is_none() {
        return Err("target ended without announcing its memory layout".into());
    }
    if let Some(sum) = session.dataset_checksum() {
        if sum != golden.dataset_checksum {
            return Err(format!(
                "worker dataset checksum {sum} does not match golden {}",
                golden.dataset_checksum
            ));
        }
    }
    let queries = config.workload.queries(config.queries);
    let mut pending = config.specs.clone();
    let mut output = Vec::with_capacity(queries.len());
    let mut exit = None;
    for q in &queries {
        fire_due(session, &mut pending, output.len())?;
        let left = timeout.saturating_sub(session.elapsed());
        if left.is_zero() {
            exit = Some(ExitStatus::NoExit);
            break;
        }
        match session.request(q, left).map_err(|e| format!("request: {e}"))? {
            Reply::Response(r) => output.push(r),
            Reply::Terminated(e) => {
                exit = Some(ExitStatus::from(e));
                break;
            }
            Reply::TimedOut => {
                exit = Some(ExitStatus::NoExit);
                break;
            }
        }
    }
    let exit = match exit {
        Some(e) => e,
        None => {
            session.close_input().map_err(|e| format!("close input: {e}"))?;
            wait_for_exit(session, timeout)
        }
    };
    classify_outcome(exit, &output, &golden.responses, session.elapsed(), timeout, &config.comparator)
        .map_err(|e| e.to_string())
}

fn wait_for_exit(session: &mut dyn Session, timeout: Duration) -> ExitStatus {
    loop {
        let left = timeout.saturating_sub(session.elapsed());
        if left.is_zero() {
            return ExitStatus::NoExit;
        }
        let e = session.watch_events(left);
        if e.is_terminal() {
            return ExitStatus::from(e);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `[sampling] seed`; on resume the logged seed is the fallback.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub resume: bool,
    /// Overrides `[backend] worker`.
    pub worker: Option<Vec<String>>,
    /// Overrides `[limits] parallelism`.
    pub parallelism: Option<usize>,
    /// Stop once this many records have been written by this run.
    pub halt_after: Option<u64>,
    /// Set to stop taking new trials; in-flight trials still finish.
    pub cancel: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignSummary {
    pub out: PathBuf,
    pub seed: u64,
    pub plan_hash: String,
    pub golden_hash: String,
    pub planned: u64,
    /// Records already present when resuming.
    pub resumed: u64,
    pub written: u64,
    pub counts: BTreeMap<OutcomeKind, u64>,
    pub invalid: u64,
    pub interrupted: bool,
}

/// Above this share of infrastructure-invalid trials a campaign is suspect.
pub const MAX_INVALID_RATE: f64 = 0.05;

impl CampaignSummary {
    pub fn recorded(&self) -> u64 {
        self.resumed + self.written
    }

    pub fn invalid_rate(&self) -> f64 {
        if self.recorded() == 0 {
            0.0
        } else {
            self.invalid as f64 / self.recorded() as f64
        }
    }

    pub fn too_many_invalid(&self) -> bool {
        self.invalid_rate() > MAX_INVALID_RATE
    }

    fn count(&mut self, r: &TrialRecord) {
        match r.outcome() {
            Some(o) => *self.counts.entry(o.kind()).or_default() += 1,
            None => self.invalid += 1,
        }
    }
}

fn now_unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn region_tag(map: &MemoryRegionMap, config: &TrialConfig) -> Option<RegionTag> {
    let spec = config.specs.first()?;
    map.get(spec.target.region_index).map(|r| RegionTag {
        kind: r.kind,
        label: r.label.clone(),
    })
}

fn resolve_seed(plan: &CampaignPlan, opts: &RunOptions) -> Result<u64, CampaignError> {
    if let Some(s) = opts.seed.or(plan.sampling.seed) {
        return Ok(s);
    }
    if opts.resume && opts.out.exists() {
        return Ok(super::read_log(&opts.out)?.header.seed);
    }
    Err(CampaignError::Plan("no seed: set [sampling] seed or pass one explicitly".into()))
}

/// Runs (or resumes) a campaign, writing its log to `opts.out`.
pub fn run_campaign(plan: &CampaignPlan, opts: &RunOptions) -> Result<CampaignSummary, CampaignError> {
    plan.validate()?;
    let seed = resolve_seed(plan, opts)?;
    let plan_hash = plan.hash(seed);
    let spec = plan.workload_spec()?;
    let queries = plan.queries()?;
    let worker: Vec<String> = opts.worker.clone().or_else(|| plan.backend.worker.clone()).unwrap_or_default();
    if plan.backend.kind == BackendKind::Debugger && worker.is_empty() {
        return Err(CampaignError::Plan("the debugger backend needs a worker command".into()));
    }
    let map = spec.layout().region_map();
    let trials = plan.trials(seed, &map)?;
    let golden = golden_run(&spec, queries)?;

    let mut summary = CampaignSummary {
        out: opts.out.clone(),
        seed,
        plan_hash: plan_hash.clone(),
        golden_hash: golden.hash_hex(),
        planned: trials.len() as u64,
        resumed: 0,
        written: 0,
        counts: BTreeMap::new(),
        invalid: 0,
        interrupted: false,
    };

    let mut writer = if opts.resume && opts.out.exists() {
        let (writer, log) = LogWriter::resume(&opts.out, &plan_hash)?;
        if log.header.golden_hash != summary.golden_hash {
            return Err(CampaignError::Integrity(
                "golden output differs from the one the log was started with".into(),
            ));
        }
        if log.records.len() > trials.len() {
            return Err(CampaignError::Integrity("log has more records than the plan has trials".into()));
        }
        for r in &log.records {
            summary.count(r);
        }
        summary.resumed = log.records.len() as u64;
        writer
    } else {
        let header = LogHeader {
            schema_version: SCHEMA_VERSION,
            plan_hash: plan_hash.clone(),
            seed,
            workload_versions: WorkloadId::ALL
                .iter()
                .map(|w| (w.as_str().to_string(), w.version().to_string()))
                .collect(),
            backend: plan.backend.kind,
            started_at_unix_ms: now_unix_ms(),
            golden_hash: summary.golden_hash.clone(),
            dataset_checksum: golden.dataset_checksum.clone(),
            trials: trials.len() as u64,
            plan: plan.canonical(seed),
        };
        LogWriter::create(&opts.out, &header)?
    };

    let todo: Vec<PlannedTrial> = trials[writer.next_seq() as usize..].to_vec();
    let k = opts.parallelism.unwrap_or(plan.limits.parallelism).max(1).min(todo.len().max(1));
    log::info!(
        "campaign {}: {} trials planned, {} to run on {k} threads",
        &plan_hash[..12],
        summary.planned,
        todo.len()
    );

    let halt_seq = opts.halt_after.map(|h| writer.next_seq() + h);
    let stop = AtomicBool::new(false);
    let next = AtomicUsize::new(0);
    let cancelled = || opts.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));
    let mut failure = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Result<TrialRecord, CampaignError>>();
        for _ in 0..k {
            let tx = tx.clone();
            let (todo, next, stop, golden, worker, map) = (&todo, &next, &stop, &golden, &worker, &map);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) || cancelled() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(t) = todo.get(i) else { break };
                let record = run_trial(&t.config, golden, worker).map(|run| TrialRecord {
                    seq: t.seq,
                    config: t.config.clone(),
                    region: region_tag(map, &t.config),
                    status: run.status,
                    receipts: run.receipts,
                });
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for record in rx {
            let record = match record {
                Ok(r) => r,
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    failure.get_or_insert(e);
                    continue;
                }
            };
            if failure.is_some() || halt_seq.is_some_and(|h| record.seq >= h) {
                continue;
            }
            let written = match writer.push(record) {
                Ok(w) => w,
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    failure.get_or_insert(e);
                    continue;
                }
            };
            for r in &written {
                if let TrialStatus::InfrastructureInvalid { reason } = &r.status {
                    log::warn!("trial {}: infrastructure failure: {reason}", r.seq);
                }
                summary.count(r);
                summary.written += 1;
            }
            if opts.halt_after.is_some_and(|h| summary.written >= h) {
                stop.store(true, Ordering::SeqCst);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    writer.finish()?;
    summary.interrupted = summary.recorded() < summary.planned;
    Ok(summary)
}
