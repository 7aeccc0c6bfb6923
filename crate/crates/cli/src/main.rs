//! `hrmlab`: fault-injection campaigns, vulnerability reports, codec
//! self-tests and heterogeneous-reliability memory evaluation.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 plan/configuration error or
//! missing input, 3 too many infrastructure-invalid trials, 130 interrupted.

mod campaign;
mod codec;
mod hrm;
mod input;
mod interrupt;
mod workload;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use input::{read_input, InputError};

#[derive(Parser)]
#[command(name = "hrmlab", version, about = "Memory error injection and heterogeneous-reliability memory evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run fault-injection campaigns and report on their logs.
    #[command(subcommand)]
    Campaign(campaign::CampaignCmd),
    /// Evaluate and explore heterogeneous-reliability memory designs.
    #[command(subcommand)]
    Hrm(hrm::HrmCmd),
    /// Produce golden outputs and run workloads without injection.
    #[command(subcommand)]
    Workload(workload::WorkloadCmd),
    /// Conformance suites for the protection codes.
    #[command(subcommand)]
    Codec(codec::CodecCmd),
}

/// Seed for this invocation; when absent one is drawn and announced.
pub fn seed_or_draw(seed: Option<u64>, what: &str) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("{what}: no --seed given, using --seed {s}");
        s
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use hrmlab_core::campaign::CampaignError;
    use hrmlab_core::hrm::HrmError;
    for cause in err.chain() {
        if cause.is::<InputError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CampaignError>() {
            return match e {
                CampaignError::Plan(_) | CampaignError::Integrity(_) => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<HrmError>() {
            return match e {
                HrmError::Config(_) | HrmError::Design { .. } | HrmError::MissingProfile { .. } => 2,
                HrmError::TooLarge { .. } => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HRMLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Campaign(c) => campaign::run(c),
        Command::Hrm(c) => hrm::run(c),
        Command::Workload(c) => workload::run(c),
        Command::Codec(c) => codec::run(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
