use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use hrmlab_core::backend::BackendKind;
use hrmlab_core::campaign::{run_trial, Comparator, TrialConfig, TrialOutcome, TrialStatus};
use hrmlab_core::workloads::{golden_run, Golden, WorkloadSpec};

use crate::input::require;

#[derive(Subcommand)]
pub enum WorkloadCmd {
    /// Record the fault-free response stream of a workload.
    Golden(GoldenArgs),
    /// Run a workload under a backend without injection and compare it
    /// against its golden output.
    Run(RunArgs),
}

#[derive(clap::Args)]
pub struct GoldenArgs {
    #[arg(long, short)]
    out: PathBuf,
    /// Defaults to the workload's standard query count.
    #[arg(long)]
    queries: Option<usize>,
    /// Workload id and flags, e.g. `mini-kv --dataset-seed 1 --keys 200`.
    #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
    spec: Vec<String>,
}

#[derive(clap::Args)]
pub struct RunArgs {
    #[arg(long, default_value = "arena")]
    backend: BackendKind,
    /// Golden file to compare against; computed in-process when absent.
    #[arg(long)]
    golden: Option<PathBuf>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Worker command for the debugger backend.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    worker: Option<Vec<String>>,
    #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
    spec: Vec<String>,
}

pub fn run(cmd: WorkloadCmd) -> Result<u8> {
    match cmd {
        WorkloadCmd::Golden(a) => {
            let spec = WorkloadSpec::from_args(&a.spec)?;
            let g = golden_run(&spec, a.queries.unwrap_or_else(|| spec.default_queries()))?;
            g.write(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
            println!("{}  {} queries  {}", g.hash_hex(), g.queries, a.out.display());
            Ok(0)
        }
        WorkloadCmd::Run(a) => run_cmd(a),
    }
}

fn worker_for(a: &RunArgs) -> Vec<String> {
    if let Some(w) = &a.worker {
        return w.clone();
    }
    std::env::current_exe()
        .ok()
        .map(|e| e.with_file_name(format!("hrmlab-worker{}", std::env::consts::EXE_SUFFIX)))
        .map(|w| vec![w.to_string_lossy().into_owned()])
        .unwrap_or_default()
}

fn run_cmd(a: RunArgs) -> Result<u8> {
    let spec = WorkloadSpec::from_args(&a.spec)?;
    let golden = match &a.golden {
        Some(p) => {
            require(p)?;
            Golden::read(p).with_context(|| format!("golden {}", p.display()))?
        }
        None => golden_run(&spec, a.queries.unwrap_or_else(|| spec.default_queries()))?,
    };
    let config = TrialConfig {
        workload: spec,
        backend: a.backend,
        specs: vec![],
        queries: a.queries.unwrap_or(golden.queries),
        timeout_ms: a.timeout_ms,
        comparator: Comparator::default(),
        seed: 0,
    };
    let run = run_trial(&config, &golden, &worker_for(&a))?;
    match run.status {
        TrialStatus::Valid {
            outcome: TrialOutcome::Masked { total },
        } => {
            println!("ok: {total} responses match golden {}", golden.hash_hex());
            Ok(0)
        }
        TrialStatus::Valid { outcome } => bail!("fault-free run diverged: {outcome:?}"),
        TrialStatus::InfrastructureInvalid { reason } => bail!("run failed: {reason}"),
    }
}
