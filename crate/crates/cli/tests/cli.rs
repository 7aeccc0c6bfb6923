use std::path::Path;
use std::process::{Command, Output};

use hrmlab_core::campaign::read_log;
use hrmlab_core::explorer::{enumerate_designs, DesignSpace};
use hrmlab_core::hrm::Calibration;
use hrmlab_core::stats::{VulnerabilityProfile, CSV_COLUMNS};

fn hrmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrmlab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn plan(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const KV_PLAN: &str = r#"
[workload]
id = "mini-kv"
queries = 60
[backend]
kind = "arena"
[sampling]
region = "heap"
targets = 30
modes = ["soft"]
controls = 5
[limits]
timeout_ms = 2000
parallelism = 2
"#;

#[test]
fn valid_plan_writes_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), "p.toml", KV_PLAN);
    let out = dir.path().join("log.jsonl");
    let o = hrmlab(&["campaign", "run", &p, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = read_log(&out).unwrap();
    assert_eq!(log.records.len(), 35);
    assert_eq!(log.header.seed, 3);
}

#[test]
fn missing_seed_is_drawn_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), "p.toml", KV_PLAN);
    let out = dir.path().join("log.jsonl");
    let o = hrmlab(&["campaign", "run", &p, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed = read_log(&out).unwrap().header.seed;
    assert!(stderr(&o).contains(&format!("--seed {seed}")), "{}", stderr(&o));
}

#[test]
fn missing_plan_exits_2_and_names_the_path() {
    let o = hrmlab(&["campaign", "run", "/no/such/plan.toml", "--out", "/tmp/unused.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/plan.toml"));
}

#[test]
fn malformed_plan_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), "p.toml", &KV_PLAN.replace("timeout_ms = 2000", "timeout_ms = 0"));
    let out = dir.path().join("log.jsonl");
    let o = hrmlab(&["campaign", "run", &p, "--out", out.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn infrastructure_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // A worker that never speaks the protocol makes every trial invalid.
    let p = plan(
        dir.path(),
        "p.toml",
        &KV_PLAN.replace("kind = \"arena\"", "kind = \"debugger\"\nworker = [\"/bin/true\"]"),
    );
    let out = dir.path().join("log.jsonl");
    let o = hrmlab(&["campaign", "run", &p, "--out", out.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn interrupted_run_resumes_to_full_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), "p.toml", KV_PLAN);
    let out = dir.path().join("log.jsonl");
    let out_s = out.to_str().unwrap();
    let o = hrmlab(&["campaign", "run", &p, "--out", out_s, "--seed", "9", "--halt-after", "11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_log(&out).unwrap().records.len(), 11);
    let o = hrmlab(&["campaign", "run", &p, "--out", out_s, "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = read_log(&out).unwrap();
    assert_eq!(log.records.len(), 35);
    assert!(log.records.iter().enumerate().all(|(i, r)| r.seq == i as u64));
    let o = hrmlab(&["campaign", "run", &p, "--out", out_s, "--resume", "--seed", "10"]);
    assert_eq!(o.status.code(), Some(2), "resume under another seed must be refused");
}

#[test]
fn reports_control_campaign_and_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(
        dir.path(),
        "p.toml",
        "[workload]\nid = \"mini-search\"\nqueries = 30\n[backend]\nkind = \"arena\"\n\
         [sampling]\ncontrols = 12\nseed = 1\n[limits]\ntimeout_ms = 2000\n",
    );
    let out = dir.path().join("log.jsonl");
    assert!(hrmlab(&["campaign", "run", &p, "--out", out.to_str().unwrap()]).status.success());
    let o = hrmlab(&["campaign", "report", out.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success());
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), CSV_COLUMNS.len());
    let col = |name: &str| row[CSV_COLUMNS.iter().position(|c| *c == name).unwrap()];
    assert_eq!(col("crashes"), "0");
    assert_eq!(col("crash_probability"), "0");
    let text = stdout(&hrmlab(&["campaign", "report", out.to_str().unwrap()]));
    assert!(text.contains("0.000 ["), "{text}");
}

#[test]
fn report_over_several_logs_pools_their_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), "p.toml", KV_PLAN);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        assert!(hrmlab(&["campaign", "run", &p, "--out", out.to_str().unwrap(), "--seed", seed]).status.success());
    }
    let both = stdout(&hrmlab(&["campaign", "report", "-f", "json", a.to_str().unwrap(), b.to_str().unwrap()]));
    let swapped = stdout(&hrmlab(&["campaign", "report", "-f", "json", b.to_str().unwrap(), a.to_str().unwrap()]));
    let mut records = read_log(&a).unwrap().records;
    records.extend(read_log(&b).unwrap().records);
    let pooled = VulnerabilityProfile::from_records(&records).to_json();
    assert_eq!(both.trim_end(), pooled.trim_end());
    assert_eq!(both, swapped);
}

#[test]
fn hrm_eval_named_designs() {
    let o = hrmlab(&["hrm", "eval", "--design", "detect-recover", "--design", "typical-server", "-f", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v[0]["report"]["availability"].as_f64().unwrap() >= 0.999);
    assert_eq!(v[1]["report"]["server_cost_savings_pct"].as_f64().unwrap(), 0.0);
    let o = hrmlab(&["hrm", "eval", "--design", "no-such-design"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hrmlab(&["hrm", "eval", "--cost-model", "/no/such/cost.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/cost.toml"));
}

#[test]
fn explore_rows_match_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let ann = dir.path().join("a.json");
    let o = hrmlab(&["hrm", "explore", "--out", csv.to_str().unwrap(), "--annotation", ann.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = Calibration::shipped().unwrap();
    let n = enumerate_designs(&DesignSpace::shipped(), &c.cost_model).unwrap().designs.len();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), n + 1);
    assert_eq!(text.lines().next().unwrap(), hrmlab_core::explorer::CSV_COLUMNS.join(","));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ann).unwrap()).unwrap();
    assert_eq!(a["designs"].as_u64().unwrap() as usize, n);
    assert!(a["highlights"]["detect-recover"]["on_front"].is_boolean());
}

#[test]
fn codec_selftest_passes_and_catches_a_planted_bug() {
    assert!(hrmlab(&["codec", "selftest"]).status.success());
    let o = hrmlab(&["codec", "selftest", "--buggy-decoder", "--words", "20", "--double-words", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn workload_golden_and_clean_run_agree() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("kv.golden");
    let o = hrmlab(&["workload", "golden", "--out", g.to_str().unwrap(), "--queries", "100", "mini-kv", "--dataset-seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hrmlab(&["workload", "run", "--golden", g.to_str().unwrap(), "mini-kv", "--dataset-seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hrmlab(&["workload", "run", "--golden", g.to_str().unwrap(), "mini-kv", "--dataset-seed", "5"]);
    assert!(!o.status.success());
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn subcommands_are_deterministic_and_write_only_declared_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(dir.path(), "p.toml", KV_PLAN);
    let run_in = |args: &[&str]| {
        let o = Command::new(env!("CARGO_BIN_EXE_hrmlab")).args(args).current_dir(dir.path()).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    for out in ["a.jsonl", "b.jsonl"] {
        run_in(&["campaign", "run", &p, "--out", out, "--seed", "5"]);
    }
    let strip = |name: &str| {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let (head, rest) = text.split_once('\n').unwrap();
        let mut h: serde_json::Value = serde_json::from_str(head).unwrap();
        h["started_at_unix_ms"] = 0.into();
        format!("{h}\n{rest}")
    };
    assert_eq!(strip("a.jsonl"), strip("b.jsonl"));
    let r1 = run_in(&["campaign", "report", "a.jsonl", "-f", "csv"]);
    let r2 = run_in(&["campaign", "report", "b.jsonl", "-f", "csv"]);
    assert_eq!(r1.stdout, r2.stdout);
    run_in(&["hrm", "explore", "--out", "x1.csv"]);
    run_in(&["hrm", "explore", "--out", "x2.csv", "--threads", "1"]);
    assert_eq!(std::fs::read(dir.path().join("x1.csv")).unwrap(), std::fs::read(dir.path().join("x2.csv")).unwrap());
    let e1 = run_in(&["hrm", "eval", "--monte-carlo", "500", "--seed", "2"]);
    let e2 = run_in(&["hrm", "eval", "--monte-carlo", "500", "--seed", "2"]);
    assert_eq!(e1.stdout, e2.stdout);
    run_in(&["workload", "golden", "--out", "g.golden", "--queries", "50", "mini-graph"]);
    run_in(&["codec", "selftest", "--words", "10", "--double-words", "2"]);
    assert_eq!(files_in(dir.path()), ["a.jsonl", "b.jsonl", "g.golden", "p.toml", "x1.csv", "x2.csv"]);
}
