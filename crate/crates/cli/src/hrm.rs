use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Subcommand, ValueEnum};
use hrmlab_core::explorer::{self, DesignSpace, ExploreOptions};
use hrmlab_core::hrm::calibration::{parse_cost_model, parse_designs, parse_error_model};
use hrmlab_core::hrm::montecarlo::simulate_crashes;
use hrmlab_core::hrm::{evaluate_design, max_tolerable_errors, Calibration, HrmProfile, ReliabilityCostReport, Tolerance};
use hrmlab_core::stats::VulnerabilityProfile;
use hrmlab_core::workloads::WorkloadId;

use crate::input::read_input;

#[derive(Subcommand)]
pub enum HrmCmd {
    /// Evaluate named design points.
    Eval(EvalArgs),
    /// Enumerate a design space and report its Pareto front.
    Explore(ExploreArgs),
}

/// Model inputs; each defaults to the shipped calibration.
#[derive(clap::Args)]
pub struct ModelArgs {
    /// Vulnerability profile (TOML).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Derive the profile from campaign logs instead; cells the logs do
    /// not cover fall back to the profile above.
    #[arg(long, num_args = 1..)]
    profile_log: Vec<PathBuf>,
    /// Restrict `--profile-log` records to one workload.
    #[arg(long, requires = "profile_log")]
    workload: Option<WorkloadId>,
    #[arg(long)]
    error_model: Option<PathBuf>,
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Design point definitions (TOML).
    #[arg(long = "designs")]
    design_file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Design to evaluate; repeatable. Defaults to every defined design.
    #[arg(long, short)]
    design: Vec<String>,
    #[arg(long, short, value_enum, default_value = "text")]
    format: Format,
    /// Availability target for the tolerable-error column.
    #[arg(long, default_value_t = 0.999)]
    target: f64,
    /// Cross-check crash rates by simulating this many months.
    #[arg(long)]
    monte_carlo: Option<u64>,
    /// Seed for `--monte-carlo`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
pub struct ExploreArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Design space (TOML).
    #[arg(long)]
    space: Option<PathBuf>,
    /// Treat the expected incorrect-query rate as a third objective.
    #[arg(long)]
    with_incorrect: bool,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// Per-design CSV; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Pareto annotation JSON.
    #[arg(long)]
    annotation: Option<PathBuf>,
    /// Print the cheapest designs meeting this availability.
    #[arg(long)]
    target: Option<f64>,
}

pub fn run(cmd: HrmCmd) -> Result<u8> {
    match cmd {
        HrmCmd::Eval(a) => eval_cmd(a),
        HrmCmd::Explore(a) => explore_cmd(a),
    }
}

fn load_model(m: &ModelArgs) -> Result<Calibration> {
    let mut c = Calibration::shipped()?;
    if let Some(p) = &m.error_model {
        c.error_model = parse_error_model(&read_input(p)?).with_context(|| p.display().to_string())?;
    }
    if let Some(p) = &m.cost_model {
        c.cost_model = parse_cost_model(&read_input(p)?).with_context(|| p.display().to_string())?;
    }
    if let Some(p) = &m.profile {
        c.profile = HrmProfile::from_toml(&read_input(p)?).with_context(|| p.display().to_string())?;
    }
    if let Some(p) = &m.design_file {
        c.designs = parse_designs(&read_input(p)?).with_context(|| p.display().to_string())?;
    }
    if !m.profile_log.is_empty() {
        let records = crate::campaign::load_records(&m.profile_log)?;
        let vp = VulnerabilityProfile::from_records(&records);
        c.profile = HrmProfile::from_vulnerability(&vp, m.workload).with_defaults(&c.profile);
    }
    Ok(c)
}

fn eval_cmd(a: EvalArgs) -> Result<u8> {
    let c = load_model(&a.model)?;
    let names: Vec<String> = if a.design.is_empty() {
        c.design_names().into_iter().map(String::from).collect()
    } else {
        a.design.clone()
    };
    let mut rows = Vec::new();
    for name in &names {
        let dp = c.design(name)?;
        let report = evaluate_design(&dp, &c.profile, &c.error_model, &c.cost_model)?;
        let tol = max_tolerable_errors(&dp, &c.profile, &c.error_model, &c.cost_model, a.target)?;
        let mc = match a.monte_carlo {
            Some(months) => {
                let seed = crate::seed_or_draw(a.seed, "monte carlo");
                Some(simulate_crashes(&dp, &c.profile, &c.error_model, &c.cost_model, months, seed)?)
            }
            None => None,
        };
        rows.push((report, tol, mc));
    }
    let text = match a.format {
        Format::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|(r, t, mc)| serde_json::json!({"report": r, "max_tolerable_errors": t, "monte_carlo": mc}))
                .collect();
            serde_json::to_string_pretty(&v)? + "\n"
        }
        Format::Csv => {
            let mut out = explorer::CSV_COLUMNS.join(",") + "\n";
            for (r, _, _) in &rows {
                let _ = writeln!(out, "{}", csv_row(r));
            }
            out
        }
        Format::Text => {
            let mut out = format!(
                "{:<18} {:>12} {:>10} {:>14} {:>14} {:>22}\n",
                "design", "availability", "savings%", "crashes/month", "incorrect/1e9", "tolerable errors/month"
            );
            for (r, t, mc) in &rows {
                let tol = match t {
                    Tolerance::ErrorsPerMonth { value } => format!("{value:.2}"),
                    Tolerance::Unbounded => "unbounded".into(),
                };
                let _ = writeln!(
                    out,
                    "{:<18} {:>12.6} {:>10.2} {:>14.4} {:>14.3e} {:>22}",
                    r.design, r.availability, r.server_cost_savings_pct, r.crashes_per_month, r.incorrect_per_billion, tol
                );
                if let Some(mc) = mc {
                    let _ = writeln!(
                        out,
                        "{:<18} simulated {} months: {:.4} +/- {:.4} crashes/month (z = {:.2})",
                        "",
                        mc.months,
                        mc.mean_crashes_per_month,
                        mc.std_error,
                        mc.z_score(r.crashes_per_month)
                    );
                }
            }
            out
        }
    };
    print!("{text}");
    Ok(0)
}

fn csv_row(r: &ReliabilityCostReport) -> String {
    format!(
        "{},{},{},{},{}",
        r.design, r.availability, r.server_cost_savings_pct, r.crashes_per_month, r.incorrect_per_billion
    )
}

fn explore_cmd(a: ExploreArgs) -> Result<u8> {
    let c = load_model(&a.model)?;
    let space = match &a.space {
        Some(p) => DesignSpace::from_toml(&read_input(p)?).with_context(|| p.display().to_string())?,
        None => DesignSpace::shipped(),
    };
    let named = c
        .design_names()
        .into_iter()
        .map(|n| c.design(n))
        .collect::<Result<Vec<_>, _>>()?;
    let opts = ExploreOptions {
        named: &named,
        threads: a.threads.max(1),
        with_incorrect: a.with_incorrect,
    };
    let x = explorer::explore(&space, &c.profile, &c.error_model, &c.cost_model, &opts)?;
    eprintln!(
        "{} designs evaluated ({} invalid combinations skipped), {} on the front",
        x.reports.len(),
        x.enumeration.filtered,
        x.front.len()
    );
    match &a.out {
        Some(p) => std::fs::write(p, x.to_csv()).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", x.to_csv()),
    }
    if let Some(p) = &a.annotation {
        let json = serde_json::to_string_pretty(&x.annotation(a.with_incorrect))?;
        std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(t) = a.target {
        let ok = explorer::constrain(&x.reports, t);
        eprintln!("{} designs reach availability {t}; cheapest:", ok.len());
        for &i in ok.iter().take(5) {
            let r = &x.reports[i];
            eprintln!("  {:>6.2}%  {:.6}  {}", r.server_cost_savings_pct, r.availability, r.design);
        }
    }
    Ok(0)
}
