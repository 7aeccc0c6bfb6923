use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;

use anyhow::{Context, Result};
use clap::{Subcommand, ValueEnum};
use hrmlab_core::backend::BackendKind;
use hrmlab_core::campaign::{read_log, run_campaign, CampaignPlan, CampaignSummary, RunOptions, TrialRecord};
use hrmlab_core::stats::{time_to_crash_summary, VulnerabilityProfile};

use crate::input::{read_input, require};

#[derive(Subcommand)]
pub enum CampaignCmd {
    /// Run (or resume) the campaign described by a plan file.
    Run(RunArgs),
    /// Aggregate one or more campaign logs into a vulnerability profile.
    Report(ReportArgs),
}

#[derive(clap::Args)]
pub struct RunArgs {
    /// Campaign plan (TOML).
    plan: PathBuf,
    /// JSONL log to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Overrides `[backend] kind`.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Overrides `[limits] parallelism`.
    #[arg(long, short = 'j')]
    parallelism: Option<usize>,
    /// Campaign seed; overrides `[sampling] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue an interrupted log instead of starting over.
    #[arg(long)]
    resume: bool,
    /// Worker command for the debugger backend; defaults to the
    /// `hrmlab-worker` installed next to this binary.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    worker: Option<Vec<String>>,
    /// Stop after this many records; simulates an interruption.
    #[arg(long, hide = true)]
    halt_after: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(clap::Args)]
pub struct ReportArgs {
    /// Campaign logs; records from all of them are pooled.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, short, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn run(cmd: CampaignCmd) -> Result<u8> {
    match cmd {
        CampaignCmd::Run(a) => run_cmd(a),
        CampaignCmd::Report(a) => report_cmd(a),
    }
}

fn default_worker() -> Option<Vec<String>> {
    let exe = std::env::current_exe().ok()?;
    let w = exe.with_file_name(format!("hrmlab-worker{}", std::env::consts::EXE_SUFFIX));
    w.exists().then(|| vec![w.to_string_lossy().into_owned()])
}

fn run_cmd(a: RunArgs) -> Result<u8> {
    let text = read_input(&a.plan)?;
    let mut plan = CampaignPlan::from_toml(&text).with_context(|| format!("plan {}", a.plan.display()))?;
    if let Some(b) = a.backend {
        plan.backend.kind = b;
    }
    let resuming = a.resume && a.out.exists();
    let seed = match a.seed.or(plan.sampling.seed) {
        Some(s) => Some(s),
        None if resuming => None,
        None => Some(crate::seed_or_draw(None, "campaign")),
    };
    let worker = match (&a.worker, plan.backend.kind) {
        (Some(w), _) => Some(w.clone()),
        (None, BackendKind::Debugger) if plan.backend.worker.is_none() => default_worker(),
        _ => None,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        require(dir)?;
    }

    let cancel = crate::interrupt::install();
    let opts = RunOptions {
        seed,
        out: a.out.clone(),
        resume: a.resume,
        worker,
        parallelism: a.parallelism,
        halt_after: a.halt_after,
        cancel: Some(cancel.clone()),
    };
    let summary = run_campaign(&plan, &opts)?;
    eprint!("{}", render_summary(&summary));
    if summary.too_many_invalid() {
        eprintln!(
            "error: {:.1}% of trials were infrastructure-invalid (limit 5%)",
            100.0 * summary.invalid_rate()
        );
        return Ok(3);
    }
    if summary.interrupted && cancel.load(Ordering::SeqCst) {
        eprintln!("interrupted; continue with --resume");
        return Ok(130);
    }
    Ok(0)
}

fn render_summary(s: &CampaignSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "log:      {}", s.out.display());
    let _ = writeln!(out, "seed:     {}", s.seed);
    let _ = writeln!(out, "plan:     {}", s.plan_hash);
    let _ = writeln!(
        out,
        "trials:   {} of {} recorded ({} resumed, {} new)",
        s.recorded(),
        s.planned,
        s.resumed,
        s.written
    );
    for (kind, n) in &s.counts {
        let _ = writeln!(out, "  {:<10} {n}", format!("{kind:?}").to_lowercase());
    }
    let _ = writeln!(out, "  {:<10} {}", "invalid", s.invalid);
    out
}

pub fn load_records(logs: &[PathBuf]) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    for path in logs {
        records.extend(load_log(path)?);
    }
    Ok(records)
}

fn load_log(path: &Path) -> Result<Vec<TrialRecord>> {
    require(path)?;
    let log = read_log(path).with_context(|| format!("log {}", path.display()))?;
    if !log.is_complete() {
        log::warn!(
            "{}: {} of {} trials recorded",
            path.display(),
            log.records.len(),
            log.header.trials
        );
    }
    Ok(log.records)
}

fn report_cmd(a: ReportArgs) -> Result<u8> {
    let records = load_records(&a.logs)?;
    let profile = VulnerabilityProfile::from_records(&records);
    let text = match a.format {
        Format::Json => profile.to_json(),
        Format::Csv => profile.to_csv(),
        Format::Text => {
            let mut t = format!("{} trials from {} log(s)\n\n", records.len(), a.logs.len());
            t.push_str(&profile.render_text());
            if let Some(timing) = time_to_crash_summary(&records) {
                t.push_str("\ntime to crash (p10 / p50 / p90)\n");
                for c in timing {
                    let _ = writeln!(
                        t,
                        "  {:<22} {:>5} crashes  {} / {} / {} us  {} / {} / {} queries",
                        c.mode.map(|m| m.as_str()).unwrap_or("none"),
                        c.crashes,
                        c.time_to_crash_us.p10,
                        c.time_to_crash_us.p50,
                        c.time_to_crash_us.p90,
                        c.queries_before_crash.p10,
                        c.queries_before_crash.p50,
                        c.queries_before_crash.p90
                    );
                }
            }
            t
        }
    };
    match a.out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(0)
}
