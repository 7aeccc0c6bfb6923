#[path = "support/kv_oracle.rs"]
mod kv_oracle;

use std::collections::BTreeMap;

use hrmlab_core::campaign::{read_log, run_campaign, CampaignPlan, CrashCause, RunOptions, TrialOutcome};
use hrmlab_core::workloads::{generate_dataset, WorkloadId, WorkloadSpec};
use kv_oracle::{classify, KvOffsets, OracleOutcome};

const PLAN: &str = r#"
[workload]
id = "mini-kv"
dataset_seed = 1
query_seed = 2
queries = 300

[backend]
kind = "arena"

[sampling]
label = "kv.index"
targets = 512
modes = ["soft"]
seed = 5

[limits]
timeout_ms = 2000
"#;

#[test]
fn clean_oracle_run_matches_the_workload() {
    let spec = WorkloadSpec::new(WorkloadId::MiniKv, 1, 2);
    let ds = generate_dataset(&spec).unwrap();
    let at = offsets(&ds.layout);
    let queries = spec.queries(300);
    let (responses, end) = kv_oracle::run(&ds.image, at, &queries, None);
    assert!(end.is_none());
    let golden = hrmlab_core::workloads::golden_run(&spec, 300).unwrap();
    assert_eq!(responses, golden.responses);
}

fn offsets(layout: &hrmlab_core::workloads::Layout) -> KvOffsets {
    KvOffsets {
        meta: layout.segment("kv.meta").unwrap().start,
        index: layout.segment("kv.index").unwrap().start,
        frame: layout.segment("kv.frame").unwrap().start,
    }
}

fn observed(o: &TrialOutcome) -> OracleOutcome {
    match o {
        TrialOutcome::Crash { cause, queries_served, .. } => {
            assert_eq!(*cause, CrashCause::Signal(11));
            OracleOutcome::Crash { queries_served: *queries_served }
        }
        TrialOutcome::Hang { .. } => OracleOutcome::Hang,
        TrialOutcome::Incorrect { mismatched, .. } => OracleOutcome::Incorrect { mismatched: *mismatched },
        TrialOutcome::Masked { .. } => OracleOutcome::Masked,
    }
}

fn check_against_oracle(plan: &CampaignPlan) -> BTreeMap<&'static str, usize> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle.jsonl");
    let opts = RunOptions {
        out: out.clone(),
        parallelism: Some(4),
        ..RunOptions::default()
    };
    run_campaign(plan, &opts).unwrap();
    let log = read_log(&out).unwrap();
    assert_eq!(log.records.len(), plan.sampling.targets);

    let spec = plan.workload_spec().unwrap();
    let ds = generate_dataset(&spec).unwrap();
    let at = offsets(&ds.layout);
    let queries = spec.queries(300);
    let mut tally = BTreeMap::new();
    for r in &log.records {
        let t = r.config.specs[0].target;
        let addr = ds.layout.segments[t.region_index].start + t.offset;
        let expected = classify(&ds.image, at, &queries, (addr, t.bit, 1));
        let got = observed(r.outcome().expect("valid trial"));
        assert_eq!(got, expected, "byte {} bit {}", t.offset, t.bit);
        let class = match got {
            OracleOutcome::Crash { .. } => "crash",
            OracleOutcome::Hang => "hang",
            OracleOutcome::Incorrect { .. } => "incorrect",
            OracleOutcome::Masked => "masked",
        };
        *tally.entry(class).or_insert(0) += 1;
    }
    tally
}

#[test]
fn exhaustive_index_flips_match_the_oracle() {
    let plan = CampaignPlan::from_toml(PLAN).unwrap();
    let tally = check_against_oracle(&plan);
    assert_eq!(tally.values().sum::<usize>(), 512);
}

#[test]
fn sampled_item_flips_match_the_oracle() {
    let plan = CampaignPlan::from_toml(&PLAN.replace("kv.index", "kv.items")).unwrap();
    let tally = check_against_oracle(&plan);
    for class in ["crash", "incorrect", "masked"] {
        assert!(tally.contains_key(class), "{tally:?}");
    }
}
