//! Vulnerability statistics over campaign logs.
//!
//! Aggregation keeps integer sufficient statistics per cell, so merging
//! partial aggregates is exact and order-independent. Estimates are derived
//! from the counts only at the end.
//!
//! CSV columns, in order: `workload, region, mode, trials, invalid, crashes,
//! incorrect_trials, masked, hangs, crash_probability, crash_lo, crash_hi,
//! incorrect_per_billion, incorrect_lo, incorrect_hi,
//! incorrect_upper_bound_per_billion, masked_fraction, queries_observed,
//! mismatched_queries`. Empty fields mean "no data".

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::ErrorMode;
use crate::campaign::{TrialOutcome, TrialRecord};
use crate::region::RegionKind;
use crate::workloads::WorkloadId;

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

pub const CSV_COLUMNS: [&str; 19] = [
    "workload",
    "region",
    "mode",
    "trials",
    "invalid",
    "crashes",
    "incorrect_trials",
    "masked",
    "hangs",
    "crash_probability",
    "crash_lo",
    "crash_hi",
    "incorrect_per_billion",
    "incorrect_lo",
    "incorrect_hi",
    "incorrect_upper_bound_per_billion",
    "masked_fraction",
    "queries_observed",
    "mismatched_queries",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn scaled(self, k: f64) -> Interval {
        Interval {
            point: self.point * k,
            lo: self.lo * k,
            hi: self.hi * k,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Wilson score interval at 95% for `successes` out of `n`; `None` when `n = 0`.
pub fn wilson(successes: u64, n: u64) -> Option<Interval> {
    if n == 0 {
        return None;
    }
    let n_f = n as f64;
    let p = successes.min(n) as f64 / n_f;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    Some(Interval {
        point: p,
        lo: (center - half).max(0.0).min(p),
        hi: (center + half).min(1.0).max(p),
    })
}

/// One aggregation cell. Control trials have no region and no mode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub workload: WorkloadId,
    pub region: Option<RegionKind>,
    pub mode: Option<ErrorMode>,
}

impl CellKey {
    pub fn of(record: &TrialRecord) -> CellKey {
        CellKey {
            workload: record.config.workload.id(),
            region: record.region.as_ref().map(|r| r.kind),
            mode: record.config.specs.first().map(|s| s.mode),
        }
    }
}

/// Sufficient statistics for one cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub valid: u64,
    pub invalid: u64,
    pub crashes: u64,
    pub incorrect: u64,
    pub masked: u64,
    pub hangs: u64,
    /// Over Incorrect and Masked trials only.
    pub mismatched_queries: u64,
    /// Over Incorrect and Masked trials only.
    pub queries_observed: u64,
}

impl CellCounts {
    pub fn add_outcome(&mut self, outcome: Option<&TrialOutcome>) {
        let Some(o) = outcome else {
            self.invalid += 1;
            return;
        };
        self.valid += 1;
        match *o {
            TrialOutcome::Crash { .. } => self.crashes += 1,
            TrialOutcome::Hang { .. } => self.hangs += 1,
            TrialOutcome::Incorrect { mismatched, total } => {
                self.incorrect += 1;
                self.mismatched_queries += mismatched;
                self.queries_observed += total;
            }
            TrialOutcome::Masked { total } => {
                self.masked += 1;
                self.queries_observed += total;
            }
        }
    }

    pub fn merge(&mut self, o: &CellCounts) {
        self.valid += o.valid;
        self.invalid += o.invalid;
        self.crashes += o.crashes;
        self.incorrect += o.incorrect;
        self.masked += o.masked;
        self.hangs += o.hangs;
        self.mismatched_queries += o.mismatched_queries;
        self.queries_observed += o.queries_observed;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProfileAccumulator {
    cells: BTreeMap<CellKey, CellCounts>,
}

impl ProfileAccumulator {
    pub fn from_records<'a, I: IntoIterator<Item = &'a TrialRecord>>(records: I) -> Self {
        let mut acc = ProfileAccumulator::default();
        for r in records {
            acc.add(r);
        }
        acc
    }

    pub fn add(&mut self, record: &TrialRecord) {
        self.cells.entry(CellKey::of(record)).or_default().add_outcome(record.outcome());
    }

    pub fn merge(&mut self, other: &ProfileAccumulator) {
        for (k, c) in &other.cells {
            self.cells.entry(k.clone()).or_default().merge(c);
        }
    }

    pub fn cells(&self) -> &BTreeMap<CellKey, CellCounts> {
        &self.cells
    }

    pub fn profile(&self) -> VulnerabilityProfile {
        VulnerabilityProfile {
            cells: self.cells.iter().map(|(k, c)| CellProfile::new(k.clone(), *c)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProfile {
    #[serde(flatten)]
    pub key: CellKey,
    pub counts: CellCounts,
    /// No valid trial landed in this cell; every estimate is absent.
    pub no_data: bool,
    pub crash_probability: Option<Interval>,
    /// Extrapolated from the per-query rate, not measured over 10^9 queries.
    pub incorrect_per_billion: Option<Interval>,
    /// Set when no mismatch was seen: the rate is below one per observed queries.
    pub incorrect_upper_bound_per_billion: Option<f64>,
    pub masked_fraction: Option<f64>,
    pub incorrect_fraction: Option<f64>,
    pub hang_fraction: Option<f64>,
}

impl CellProfile {
    pub fn new(key: CellKey, counts: CellCounts) -> CellProfile {
        let n = counts.valid;
        let frac = |x: u64| (n > 0).then(|| x as f64 / n as f64);
        let observed = counts.queries_observed;
        CellProfile {
            key,
            counts,
            no_data: n == 0,
            crash_probability: wilson(counts.crashes, n),
            incorrect_per_billion: wilson(counts.mismatched_queries, observed).map(|i| i.scaled(1e9)),
            incorrect_upper_bound_per_billion: (observed > 0 && counts.mismatched_queries == 0)
                .then(|| 1e9 / observed as f64),
            masked_fraction: frac(counts.masked),
            incorrect_fraction: frac(counts.incorrect),
            hang_fraction: frac(counts.hangs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityProfile {
    pub cells: Vec<CellProfile>,
}

impl VulnerabilityProfile {
    pub fn from_records<'a, I: IntoIterator<Item = &'a TrialRecord>>(records: I) -> Self {
        ProfileAccumulator::from_records(records).profile()
    }

    pub fn get(&self, key: &CellKey) -> Option<&CellProfile> {
        self.cells.iter().find(|c| &c.key == key)
    }

    /// Counts pooled over every cell that matches the given coordinates.
    pub fn pooled(
        &self,
        workload: Option<WorkloadId>,
        region: RegionKind,
        modes: impl Fn(ErrorMode) -> bool,
    ) -> CellCounts {
        let mut total = CellCounts::default();
        for c in &self.cells {
            let w = workload.is_none_or(|w| w == c.key.workload);
            let r = c.key.region == Some(region);
            let m = c.key.mode.is_some_and(&modes);
            if w && r && m {
                total.merge(&c.counts);
            }
        }
        total
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profiles serialize")
    }

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for c in &self.cells {
            let k = &c.key;
            let n = &c.counts;
            let fields = [
                k.workload.as_str().to_string(),
                k.region.map(|r| r.as_str().to_string()).unwrap_or_else(|| "control".into()),
                k.mode.map(|m| m.as_str().to_string()).unwrap_or_else(|| "none".into()),
                n.valid.to_string(),
                n.invalid.to_string(),
                n.crashes.to_string(),
                n.incorrect.to_string(),
                n.masked.to_string(),
                n.hangs.to_string(),
                opt(c.crash_probability.map(|i| i.point)),
                opt(c.crash_probability.map(|i| i.lo)),
                opt(c.crash_probability.map(|i| i.hi)),
                opt(c.incorrect_per_billion.map(|i| i.point)),
                opt(c.incorrect_per_billion.map(|i| i.lo)),
                opt(c.incorrect_per_billion.map(|i| i.hi)),
                opt(c.incorrect_upper_bound_per_billion),
                opt(c.masked_fraction),
                n.queries_observed.to_string(),
                n.mismatched_queries.to_string(),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:<22} {:>6} {:>6} {:>24} {:>26} {:>8}",
            "workload", "region", "mode", "trials", "invld", "P(crash) [95% CI]", "incorrect/1e9 queries", "masked"
        );
        for c in &self.cells {
            let k = &c.key;
            let crash = match c.crash_probability {
                Some(i) => format!("{:.3} [{:.3},{:.3}]", i.point, i.lo, i.hi),
                None => "no data".into(),
            };
            let incorrect = match (c.incorrect_per_billion, c.incorrect_upper_bound_per_billion) {
                (_, Some(ub)) => format!("< {ub:.3e}"),
                (Some(i), None) => format!("{:.3e}", i.point),
                (None, None) => "no data".into(),
            };
            let masked = c.masked_fraction.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<12} {:<12} {:<22} {:>6} {:>6} {:>24} {:>26} {:>8}",
                k.workload.as_str(),
                k.region.map(|r| r.as_str()).unwrap_or("control"),
                k.mode.map(|m| m.as_str()).unwrap_or("none"),
                c.counts.valid,
                c.counts.invalid,
                crash,
                incorrect,
                masked
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Spread {
    /// `log10(max / min)` over the strictly positive rates.
    Decades { value: f64, zero_count: usize },
    /// No positive rate to compare.
    Undefined { zero_count: usize },
}

pub fn spread_orders_of_magnitude(rates: &[f64]) -> Spread {
    let zero_count = rates.iter().filter(|r| **r <= 0.0).count();
    let positive = rates.iter().copied().filter(|r| *r > 0.0);
    let (min, max) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
    if max == 0.0 {
        Spread::Undefined { zero_count }
    } else {
        Spread::Decades {
            value: (max / min).log10(),
            zero_count,
        }
    }
}

/// Nearest-rank quantile of an ascending slice: the value at rank
/// `ceil(p * n)`, clamped to `[1, n]`.
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p10: u64,
    pub p50: u64,
    pub p90: u64,
}

impl Quantiles {
    pub fn of(mut values: Vec<u64>) -> Option<Quantiles> {
        values.sort_unstable();
        Some(Quantiles {
            p10: nearest_rank(&values, 0.10)?,
            p50: nearest_rank(&values, 0.50)?,
            p90: nearest_rank(&values, 0.90)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashTiming {
    pub mode: Option<ErrorMode>,
    pub crashes: u64,
    pub time_to_crash_us: Quantiles,
    pub queries_before_crash: Quantiles,
}

/// Crash timing per error mode; `None` when the records hold no crash.
pub fn time_to_crash_summary<'a, I: IntoIterator<Item = &'a TrialRecord>>(records: I) -> Option<Vec<CrashTiming>> {
    let mut by_mode: BTreeMap<Option<ErrorMode>, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for r in records {
        if let Some(TrialOutcome::Crash {
            time_to_crash_us,
            queries_served,
            ..
        }) = r.outcome()
        {
            let e = by_mode.entry(r.config.specs.first().map(|s| s.mode)).or_default();
            e.0.push(*time_to_crash_us);
            e.1.push(*queries_served);
        }
    }
    if by_mode.is_empty() {
        return None;
    }
    Some(
        by_mode
            .into_iter()
            .map(|(mode, (t, q))| CrashTiming {
                mode,
                crashes: t.len() as u64,
                time_to_crash_us: Quantiles::of(t).expect("non-empty"),
                queries_before_crash: Quantiles::of(q).expect("non-empty"),
            })
            .collect(),
    )
}
