use std::path::Path;

use hrmlab_core::campaign::{read_log, run_campaign, CampaignPlan, OutcomeKind, RunOptions, TrialStatus};
use hrmlab_core::region::RegionKind;

const WORKER: &str = env!("CARGO_BIN_EXE_hrmlab-worker");

fn plan(backend: &str, extra_sampling: &str) -> CampaignPlan {
    plan_for("mini-kv", backend, extra_sampling)
}

fn plan_for(workload: &str, backend: &str, extra_sampling: &str) -> CampaignPlan {
    CampaignPlan::from_toml(&format!(
        r#"
[workload]
id = "{workload}"
queries = 40

[backend]
kind = "{backend}"

[sampling]
region = "heap"
targets = 24
modes = ["soft", "hard-stuck-at-current"]
seed = 11
{extra_sampling}

[limits]
timeout_ms = 3000
"#
    ))
    .unwrap()
}

fn run(plan: &CampaignPlan, out: &Path, k: usize) -> hrmlab_core::campaign::CampaignSummary {
    let opts = RunOptions {
        out: out.to_path_buf(),
        parallelism: Some(k),
        worker: (plan.backend.kind.as_str() == "debugger").then(|| vec![WORKER.to_string()]),
        ..RunOptions::default()
    };
    run_campaign(plan, &opts).unwrap()
}

fn without_timestamp(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let (head, rest) = text.split_once('\n').unwrap();
    let mut header: serde_json::Value = serde_json::from_str(head).unwrap();
    header["started_at_unix_ms"] = 0.into();
    format!("{header}\n{rest}")
}

#[test]
fn every_target_is_logged_once_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.jsonl");
    let p = plan("arena", "controls = 3");
    let summary = run(&p, &out, 3);
    assert_eq!(summary.planned, 3 + 48);
    assert!(!summary.interrupted);
    let log = read_log(&out).unwrap();
    assert!(log.is_complete());
    assert_eq!(log.records.len(), 51);
    for (i, r) in log.records.iter().enumerate() {
        assert_eq!(r.seq, i as u64);
    }
    let mut targets: Vec<_> = log.records[3..].iter().map(|r| (r.config.specs[0].target, r.config.specs[0].mode)).collect();
    targets.sort();
    targets.dedup();
    assert_eq!(targets.len(), 48);
    for r in &log.records[3..] {
        assert_eq!(r.region.as_ref().unwrap().kind, RegionKind::Heap);
        assert!(!r.receipts.is_empty(), "trial {} has no receipt", r.seq);
    }
    for r in &log.records[..3] {
        assert_eq!(r.outcome().unwrap().kind(), OutcomeKind::Masked, "control trial {}", r.seq);
        assert!(r.receipts.is_empty());
    }
    assert_eq!(summary.invalid, 0);
    assert_eq!(summary.counts.values().sum::<u64>(), 51);
}

#[test]
fn log_is_identical_for_every_pool_size() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan("arena", "");
    let a = dir.path().join("k1.jsonl");
    let b = dir.path().join("k4.jsonl");
    run(&p, &a, 1);
    run(&p, &b, 4);
    assert_eq!(without_timestamp(&a), without_timestamp(&b));
}

#[test]
fn resumed_campaign_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan("arena", "");
    let full = dir.path().join("full.jsonl");
    run(&p, &full, 2);

    let part = dir.path().join("part.jsonl");
    let mut opts = RunOptions {
        out: part.clone(),
        parallelism: Some(3),
        halt_after: Some(17),
        ..RunOptions::default()
    };
    let first = run_campaign(&p, &opts).unwrap();
    assert!(first.interrupted);
    assert_eq!(first.written, 17);
    opts.halt_after = None;
    opts.resume = true;
    let second = run_campaign(&p, &opts).unwrap();
    assert_eq!(second.resumed, 17);
    assert!(!second.interrupted);
    let strip = |path: &Path| without_timestamp(path).split_once('\n').unwrap().1.to_string();
    assert_eq!(strip(&full), strip(&part));

    let other = plan("arena", "").to_toml().replace("seed = 11", "seed = 12");
    let other = CampaignPlan::from_toml(&other).unwrap();
    assert!(run_campaign(&other, &opts).is_err());
}

#[test]
fn backends_agree_on_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    for workload in ["mini-kv", "mini-search", "mini-graph"] {
        let arena = dir.path().join(format!("{workload}-arena.jsonl"));
        let debugger = dir.path().join(format!("{workload}-debugger.jsonl"));
        run(&plan_for(workload, "arena", "controls = 1"), &arena, 2);
        run(&plan_for(workload, "debugger", "controls = 1"), &debugger, 2);
        let a = read_log(&arena).unwrap();
        let d = read_log(&debugger).unwrap();
        assert_eq!(a.records.len(), d.records.len());
        for (x, y) in a.records.iter().zip(&d.records) {
            assert_eq!(x.config.specs, y.config.specs);
            let (TrialStatus::Valid { outcome: ox }, TrialStatus::Valid { outcome: oy }) = (&x.status, &y.status) else {
                panic!("{workload} trial {} invalid: {:?} / {:?}", x.seq, x.status, y.status);
            };
            assert!(ox.same_behaviour(oy), "{workload} trial {}: arena {ox:?}, debugger {oy:?}", x.seq);
        }
    }
}
