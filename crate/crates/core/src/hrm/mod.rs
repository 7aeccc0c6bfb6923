//! Reliability and cost model for heterogeneous-reliability memory designs.
//!
//! Error arrivals are Poisson. For each region of a design, events are
//! split into single-bit and multi-bit (treated as double-bit) events, pushed
//! through the region's hardware technique using the codec semantics, then
//! through its software response; whatever the hardware leaves undetected
//! crashes with the profile's conditional crash probability, and otherwise
//! stays resident and corrupts queries at the profile's incorrect rate.

pub mod calibration;
pub mod montecarlo;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codecs::{apply_protection, ProtectionOutcome, ProtectionTechnique};
use crate::region::RegionKind;
use crate::stats::VulnerabilityProfile;
use crate::workloads::WorkloadId;

pub use calibration::Calibration;

pub const MONTH_HOURS: f64 = 730.0;
const BITS_PER_MBIT: f64 = 1_048_576.0;
const BITS_PER_GB: f64 = 8.0 * 1_073_741_824.0;
/// Hard errors arrive uniformly over the month and then persist, so on
/// average each is resident for half of it.
const HARD_RESIDENCY: f64 = 0.5;
const SOFT_RESIDENCY: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum HrmError {
    #[error("invalid model: {0}")]
    Config(String),
    #[error("invalid design `{design}`: {reason}")]
    Design { design: String, reason: String },
    #[error("profile has no {class} data for region `{region}`")]
    MissingProfile { region: RegionKind, class: ErrorClass },
    #[error("design space too large: {estimate} points (limit {limit})")]
    TooLarge { estimate: u128, limit: u128 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    Soft,
    Hard,
}

impl std::fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorClass::Soft => "soft",
            ErrorClass::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModel {
    pub soft_fit_per_mbit: f64,
    pub hard_per_gb_month: f64,
    pub multi_bit_fraction: f64,
}

impl ErrorModel {
    pub fn validate(&self) -> Result<(), HrmError> {
        let ok = self.soft_fit_per_mbit >= 0.0
            && self.hard_per_gb_month >= 0.0
            && (0.0..=1.0).contains(&self.multi_bit_fraction);
        if ok {
            Ok(())
        } else {
            Err(HrmError::Config("error rates must be >= 0 and multi_bit_fraction in [0, 1]".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryGrade {
    Tested,
    LessTested,
}

impl MemoryGrade {
    pub const ALL: [MemoryGrade; 2] = [MemoryGrade::Tested, MemoryGrade::LessTested];

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryGrade::Tested => "tested",
            MemoryGrade::LessTested => "less-tested",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeParams {
    pub error_rate_multiplier: f64,
    pub cost_per_gb_factor: f64,
}

impl GradeParams {
    pub const TESTED: GradeParams = GradeParams {
        error_rate_multiplier: 1.0,
        cost_per_gb_factor: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftwareResponse {
    None,
    CrashOnDetect,
    ReloadCleanCopy,
    DropQuery,
}

impl SoftwareResponse {
    pub const ALL: [SoftwareResponse; 4] = [
        SoftwareResponse::None,
        SoftwareResponse::CrashOnDetect,
        SoftwareResponse::ReloadCleanCopy,
        SoftwareResponse::DropQuery,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SoftwareResponse::None => "none",
            SoftwareResponse::CrashOnDetect => "crash-on-detect",
            SoftwareResponse::ReloadCleanCopy => "reload-clean-copy",
            SoftwareResponse::DropQuery => "drop-query",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    WholeSystem,
    PerRegion,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::WholeSystem => "whole-system",
            Granularity::PerRegion => "per-region",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub technique: ProtectionTechnique,
    pub response: SoftwareResponse,
    pub grade: MemoryGrade,
}

impl Assignment {
    /// Why this assignment cannot be used for a region, if it cannot.
    pub fn invalid_reason(&self, disk_backed: bool) -> Option<&'static str> {
        let no_detection = self.technique == ProtectionTechnique::None;
        let no_response = self.response == SoftwareResponse::None;
        if no_detection != no_response {
            return Some("a software response needs a detecting technique, and a detecting technique needs a response");
        }
        if self.response == SoftwareResponse::ReloadCleanCopy && !disk_backed {
            return Some("reload-clean-copy needs a disk-backed region");
        }
        None
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.technique, self.response.as_str(), self.grade.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub size_gb: f64,
    #[serde(default)]
    pub disk_backed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub memory_fraction_of_server_cost: f64,
    pub ecc_capacity_overhead: f64,
    pub ecc_market_premium: f64,
    pub parity_capacity_overhead: f64,
    pub parity_market_premium: f64,
    pub mttr_minutes: f64,
    pub recovery_latency_ms: f64,
    pub queries_per_second: f64,
    pub less_tested: GradeParams,
    pub regions: Vec<RegionSpec>,
}

impl CostModel {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), HrmError> {
        let bad = |m: &str| Err(HrmError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.memory_fraction_of_server_cost) {
            return bad("memory_fraction_of_server_cost must be in [0, 1]");
        }
        let nonneg = [
            self.ecc_capacity_overhead,
            self.ecc_market_premium,
            self.parity_capacity_overhead,
            self.parity_market_premium,
            self.mttr_minutes,
            self.recovery_latency_ms,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return bad("overheads, premiums and durations must be >= 0");
        }
        if !(self.queries_per_second > 0.0) {
            return bad("queries_per_second must be positive");
        }
        let g = self.less_tested;
        if !(g.error_rate_multiplier >= 1.0) || !(g.cost_per_gb_factor > 0.0 && g.cost_per_gb_factor <= 1.0) {
            return bad("less_tested needs error_rate_multiplier >= 1 and cost_per_gb_factor in (0, 1]");
        }
        if self.regions.is_empty() {
            return bad("at least one region is required");
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.regions {
            if !(r.size_gb > 0.0) {
                return Err(HrmError::Config(format!("region `{}` must have a positive size", r.kind)));
            }
            if !seen.insert(r.kind) {
                return Err(HrmError::Config(format!("region `{}` listed twice", r.kind)));
            }
        }
        Ok(())
    }

    pub fn grade(&self, grade: MemoryGrade) -> GradeParams {
        match grade {
            MemoryGrade::Tested => GradeParams::TESTED,
            MemoryGrade::LessTested => self.less_tested,
        }
    }

    pub fn region(&self, kind: RegionKind) -> Option<&RegionSpec> {
        self.regions.iter().find(|r| r.kind == kind)
    }

    /// Cost of one GB relative to one GB of tested, unprotected memory.
    pub fn unit_cost(&self, a: &Assignment) -> f64 {
        let protection = match a.technique {
            ProtectionTechnique::None => 0.0,
            ProtectionTechnique::Parity => self.parity_capacity_overhead * self.parity_market_premium,
            ProtectionTechnique::Secded => self.ecc_capacity_overhead * self.ecc_market_premium,
        };
        (1.0 + protection) * self.grade(a.grade).cost_per_gb_factor
    }

    /// Unit cost of the reference server: tested memory with SEC-DED.
    pub fn baseline_unit_cost(&self) -> f64 {
        1.0 + self.ecc_capacity_overhead * self.ecc_market_premium
    }

    pub fn month_minutes(&self) -> f64 {
        MONTH_HOURS * 60.0
    }
}

/// Vulnerability of one region to one error class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionVulnerability {
    /// P(crash or hang | one unmasked error).
    pub crash_probability: f64,
    /// Incorrect queries per billion while one such error is resident.
    pub incorrect_per_billion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassVulnerability {
    pub soft: Option<RegionVulnerability>,
    pub hard: Option<RegionVulnerability>,
}

impl ClassVulnerability {
    pub fn get(&self, class: ErrorClass) -> Option<RegionVulnerability> {
        match class {
            ErrorClass::Soft => self.soft,
            ErrorClass::Hard => self.hard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct HrmProfile {
    pub regions: BTreeMap<RegionKind, ClassVulnerability>,
}

impl HrmProfile {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn from_toml(text: &str) -> Result<HrmProfile, HrmError> {
        let p: HrmProfile = toml::from_str(text).map_err(|e| HrmError::Config(format!("profile: {e}")))?;
        for (kind, c) in &p.regions {
            for v in [c.soft, c.hard].into_iter().flatten() {
                if !(0.0..=1.0).contains(&v.crash_probability) || !(v.incorrect_per_billion >= 0.0) {
                    return Err(HrmError::Config(format!("profile region `{kind}` has out-of-range values")));
                }
            }
        }
        Ok(p)
    }

    /// Condenses a campaign profile. Soft rows come from soft-mode cells and
    /// hard rows pool every stuck-at mode; hangs count with crashes.
    pub fn from_vulnerability(profile: &VulnerabilityProfile, workload: Option<WorkloadId>) -> HrmProfile {
        let mut regions = BTreeMap::new();
        for kind in RegionKind::ALL {
            let row = |hard: bool| {
                let c = profile.pooled(workload, kind, |m| m.is_hard() == hard);
                (c.valid > 0).then(|| RegionVulnerability {
                    crash_probability: (c.crashes + c.hangs) as f64 / c.valid as f64,
                    incorrect_per_billion: if c.queries_observed == 0 {
                        0.0
                    } else {
                        c.mismatched_queries as f64 / c.queries_observed as f64 * 1e9
                    },
                })
            };
            let entry = ClassVulnerability {
                soft: row(false),
                hard: row(true),
            };
            if entry.soft.is_some() || entry.hard.is_some() {
                regions.insert(kind, entry);
            }
        }
        HrmProfile { regions }
    }

    /// Fills every missing region or class from `defaults`.
    pub fn with_defaults(mut self, defaults: &HrmProfile) -> HrmProfile {
        for (kind, d) in &defaults.regions {
            let e = self.regions.entry(*kind).or_insert(ClassVulnerability { soft: None, hard: None });
            e.soft = e.soft.or(d.soft);
            e.hard = e.hard.or(d.hard);
        }
        self
    }

    pub fn get(&self, region: RegionKind, class: ErrorClass) -> Result<RegionVulnerability, HrmError> {
        self.regions
            .get(&region)
            .and_then(|c| c.get(class))
            .ok_or(HrmError::MissingProfile { region, class })
    }
}

/// Design as written in a designs file, before it is bound to a cost model's regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub name: String,
    pub granularity: Granularity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all: Option<Assignment>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub regions: BTreeMap<RegionKind, Assignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub name: String,
    pub granularity: Granularity,
    pub assignments: BTreeMap<RegionKind, Assignment>,
}

impl DesignSpec {
    pub fn bind(&self, cm: &CostModel) -> Result<DesignPoint, HrmError> {
        let err = |reason: String| HrmError::Design {
            design: self.name.clone(),
            reason,
        };
        let assignments = match (self.granularity, &self.all, self.regions.is_empty()) {
            (Granularity::WholeSystem, Some(a), true) => cm.regions.iter().map(|r| (r.kind, *a)).collect(),
            (Granularity::PerRegion, None, false) => {
                for kind in self.regions.keys() {
                    if cm.region(*kind).is_none() {
                        return Err(err(format!("region `{kind}` is not in the cost model")));
                    }
                }
                let mut m = BTreeMap::new();
                for r in &cm.regions {
                    let a = self.regions.get(&r.kind).ok_or_else(|| err(format!("no assignment for region `{}`", r.kind)))?;
                    m.insert(r.kind, *a);
                }
                m
            }
            (Granularity::WholeSystem, ..) => return Err(err("whole-system designs take exactly one `all` assignment".into())),
            (Granularity::PerRegion, ..) => return Err(err("per-region designs take a `regions` table and no `all`".into())),
        };
        let dp = DesignPoint {
            name: self.name.clone(),
            granularity: self.granularity,
            assignments,
        };
        dp.validate(cm)?;
        Ok(dp)
    }
}

impl DesignPoint {
    pub fn validate(&self, cm: &CostModel) -> Result<(), HrmError> {
        let err = |reason: String| HrmError::Design {
            design: self.name.clone(),
            reason,
        };
        if self.granularity == Granularity::PerRegion && cm.regions.len() < 2 {
            return Err(err("per-region granularity needs at least two regions".into()));
        }
        if self.granularity == Granularity::WholeSystem {
            let mut it = self.assignments.values();
            if let Some(first) = it.next() {
                if it.any(|a| a != first) {
                    return Err(err("whole-system designs use one assignment everywhere".into()));
                }
            }
        }
        for r in &cm.regions {
            let a = self.assignments.get(&r.kind).ok_or_else(|| err(format!("no assignment for region `{}`", r.kind)))?;
            if let Some(why) = a.invalid_reason(r.disk_backed) {
                return Err(err(format!("region `{}`: {why}", r.kind)));
            }
        }
        Ok(())
    }
}

/// Expected (soft, hard) events in a region over `hours`.
pub fn expected_error_arrivals(em: &ErrorModel, multiplier: f64, region_gb: f64, hours: f64) -> (f64, f64) {
    let mbits = region_gb * BITS_PER_GB / BITS_PER_MBIT;
    let soft = em.soft_fit_per_mbit * multiplier * mbits * hours / 1e9;
    let hard = em.hard_per_gb_month * multiplier * region_gb * hours / MONTH_HOURS;
    (soft, hard)
}

/// 1 - downtime / month, clamped to [0, 1]; month = 730 h.
pub fn availability(crashes_per_month: f64, mttr_minutes: f64) -> f64 {
    availability_with_downtime(crashes_per_month * mttr_minutes)
}

fn availability_with_downtime(downtime_minutes: f64) -> f64 {
    (1.0 - downtime_minutes / (MONTH_HOURS * 60.0)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Tolerance {
    ErrorsPerMonth { value: f64 },
    /// Errors never crash this design.
    Unbounded,
}

/// Errors per month a design can absorb while meeting `target` availability.
pub fn max_tolerable_errors_for(p_crash: f64, target: f64, mttr_minutes: f64) -> Tolerance {
    if p_crash <= 0.0 {
        return Tolerance::Unbounded;
    }
    let allowed_crashes = (1.0 - target) * MONTH_HOURS * 60.0 / mttr_minutes;
    Tolerance::ErrorsPerMonth {
        value: allowed_crashes / p_crash,
    }
}

/// Hardware outcome of a `flips`-bit error in a data word, per the codecs.
pub fn hardware_outcome(technique: ProtectionTechnique, flips: u32) -> ProtectionOutcome {
    const WORD: u64 = 0x0123_4567_89ab_cdef;
    let mask = if flips >= 64 { u64::MAX } else { (1u64 << flips) - 1 };
    apply_protection(technique, WORD, WORD ^ mask)
}

/// Expected monthly event flow through one path of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventPath {
    pub region: RegionKind,
    pub class: ErrorClass,
    pub flips: u32,
    pub events_per_month: f64,
    pub outcome: PathOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PathOutcome {
    Masked,
    Crash,
    Reload,
    Drop,
    /// Undetected: crash with `p_crash`, else resident.
    Undetected {
        p_crash: f64,
        incorrect_per_billion: f64,
        residency: f64,
    },
}

/// Enumerates every (region, class, single/multi-bit) path of a design.
pub fn event_paths(dp: &DesignPoint, prof: &HrmProfile, em: &ErrorModel, cm: &CostModel) -> Result<Vec<EventPath>, HrmError> {
    let mut out = Vec::new();
    for r in &cm.regions {
        let a = dp.assignments.get(&r.kind).ok_or_else(|| HrmError::Design {
            design: dp.name.clone(),
            reason: format!("no assignment for region `{}`", r.kind),
        })?;
        let (soft, hard) = expected_error_arrivals(em, cm.grade(a.grade).error_rate_multiplier, r.size_gb, MONTH_HOURS);
        for (class, events, residency) in [
            (ErrorClass::Soft, soft, SOFT_RESIDENCY),
            (ErrorClass::Hard, hard, HARD_RESIDENCY),
        ] {
            for (flips, share) in [(1, 1.0 - em.multi_bit_fraction), (2, em.multi_bit_fraction)] {
                let outcome = match (hardware_outcome(a.technique, flips), a.response) {
                    (ProtectionOutcome::MaskedByHw, _) => PathOutcome::Masked,
                    (ProtectionOutcome::DetectedOnly, SoftwareResponse::CrashOnDetect) => PathOutcome::Crash,
                    (ProtectionOutcome::DetectedOnly, SoftwareResponse::ReloadCleanCopy) => PathOutcome::Reload,
                    (ProtectionOutcome::DetectedOnly, SoftwareResponse::DropQuery) => PathOutcome::Drop,
                    (ProtectionOutcome::DetectedOnly, SoftwareResponse::None) | (ProtectionOutcome::Undetected, _) => {
                        if events * share == 0.0 {
                            PathOutcome::Masked
                        } else {
                            let v = prof.get(r.kind, class)?;
                            PathOutcome::Undetected {
                                p_crash: v.crash_probability,
                                incorrect_per_billion: v.incorrect_per_billion,
                                residency,
                            }
                        }
                    }
                };
                out.push(EventPath {
                    region: r.kind,
                    class,
                    flips,
                    events_per_month: events * share,
                    outcome,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: RegionKind,
    pub size_gb: f64,
    pub assignment: Assignment,
    pub soft_events_per_month: f64,
    pub hard_events_per_month: f64,
    pub crashes_per_month: f64,
    pub reload_events_per_month: f64,
    pub dropped_queries_per_month: f64,
    pub incorrect_per_billion: f64,
    pub relative_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCostReport {
    pub design: String,
    pub crashes_per_month: f64,
    pub incorrect_per_billion: f64,
    pub availability: f64,
    pub memory_cost_savings_pct: f64,
    pub server_cost_savings_pct: f64,
    pub reload_events_per_month: f64,
    pub errors_per_month: f64,
    pub downtime_minutes_per_month: f64,
    pub regions: Vec<RegionReport>,
}

impl ReliabilityCostReport {
    /// Crash probability per error event, averaged over the design's arrival mix.
    pub fn crash_probability_per_error(&self) -> f64 {
        if self.errors_per_month == 0.0 {
            0.0
        } else {
            self.crashes_per_month / self.errors_per_month
        }
    }
}

pub fn evaluate_design(
    dp: &DesignPoint,
    prof: &HrmProfile,
    em: &ErrorModel,
    cm: &CostModel,
) -> Result<ReliabilityCostReport, HrmError> {
    em.validate()?;
    cm.validate()?;
    dp.validate(cm)?;
    let paths = event_paths(dp, prof, em, cm)?;
    let queries_per_month = cm.queries_per_second * MONTH_HOURS * 3600.0;
    let mut regions = Vec::new();
    let (mut cost, mut baseline) = (0.0, 0.0);
    for r in &cm.regions {
        let a = dp.assignments[&r.kind];
        let mut rep = RegionReport {
            region: r.kind,
            size_gb: r.size_gb,
            assignment: a,
            soft_events_per_month: 0.0,
            hard_events_per_month: 0.0,
            crashes_per_month: 0.0,
            reload_events_per_month: 0.0,
            dropped_queries_per_month: 0.0,
            incorrect_per_billion: 0.0,
            relative_cost: cm.unit_cost(&a) * r.size_gb,
        };
        for p in paths.iter().filter(|p| p.region == r.kind) {
            let n = p.events_per_month;
            match p.class {
                ErrorClass::Soft => rep.soft_events_per_month += n,
                ErrorClass::Hard => rep.hard_events_per_month += n,
            }
            match p.outcome {
                PathOutcome::Masked => {}
                PathOutcome::Crash => rep.crashes_per_month += n,
                PathOutcome::Reload => rep.reload_events_per_month += n,
                PathOutcome::Drop => rep.dropped_queries_per_month += n,
                PathOutcome::Undetected {
                    p_crash,
                    incorrect_per_billion,
                    residency,
                } => {
                    rep.crashes_per_month += n * p_crash;
                    rep.incorrect_per_billion += n * (1.0 - p_crash) * residency * incorrect_per_billion;
                }
            }
        }
        rep.incorrect_per_billion += rep.dropped_queries_per_month / queries_per_month * 1e9;
        cost += rep.relative_cost;
        baseline += cm.baseline_unit_cost() * r.size_gb;
        regions.push(rep);
    }
    let crashes: f64 = regions.iter().map(|r| r.crashes_per_month).sum();
    let reloads: f64 = regions.iter().map(|r| r.reload_events_per_month).sum();
    let downtime = crashes * cm.mttr_minutes + reloads * cm.recovery_latency_ms / 60_000.0;
    let memory_savings = 100.0 * (1.0 - cost / baseline);
    Ok(ReliabilityCostReport {
        design: dp.name.clone(),
        crashes_per_month: crashes,
        incorrect_per_billion: regions.iter().map(|r| r.incorrect_per_billion).sum(),
        availability: availability_with_downtime(downtime),
        memory_cost_savings_pct: memory_savings,
        server_cost_savings_pct: memory_savings * cm.memory_fraction_of_server_cost,
        reload_events_per_month: reloads,
        errors_per_month: regions.iter().map(|r| r.soft_events_per_month + r.hard_events_per_month).sum(),
        downtime_minutes_per_month: downtime,
        regions,
    })
}

pub fn max_tolerable_errors(
    dp: &DesignPoint,
    prof: &HrmProfile,
    em: &ErrorModel,
    cm: &CostModel,
    target: f64,
) -> Result<Tolerance, HrmError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(HrmError::Config("target availability must be in (0, 1)".into()));
    }
    let report = evaluate_design(dp, prof, em, cm)?;
    Ok(max_tolerable_errors_for(report.crash_probability_per_error(), target, cm.mttr_minutes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shipped() -> Calibration {
        Calibration::shipped().unwrap()
    }

    fn design(c: &Calibration, name: &str) -> DesignPoint {
        c.design(name).unwrap()
    }

    #[test]
    fn arrival_arithmetic() {
        let em = ErrorModel {
            soft_fit_per_mbit: 1000.0,
            hard_per_gb_month: 0.0,
            multi_bit_fraction: 0.0,
        };
        let mib = 1.0 / 1024.0;
        let (soft, hard) = expected_error_arrivals(&em, 1.0, mib, 730.0);
        assert!((soft - 5.84e-3).abs() < 1e-15);
        assert_eq!(hard, 0.0);
        let (four, _) = expected_error_arrivals(&em, 4.0, mib, 730.0);
        assert!((four - 4.0 * soft).abs() < 1e-15);
        let zero = ErrorModel {
            soft_fit_per_mbit: 0.0,
            hard_per_gb_month: 2.0,
            ..em
        };
        assert_eq!(expected_error_arrivals(&zero, 1.0, 3.0, 730.0), (0.0, 6.0));
    }

    #[test]
    fn availability_arithmetic() {
        assert_eq!(availability(0.0, 10.0), 1.0);
        assert!((availability(4.38, 10.0) - 0.9990).abs() < 1e-12);
        assert_eq!(availability(1e9, 10.0), 0.0);
    }

    #[test]
    fn tolerable_errors() {
        let value = |t| match t {
            Tolerance::ErrorsPerMonth { value } => value,
            Tolerance::Unbounded => panic!("unbounded"),
        };
        assert!((value(max_tolerable_errors_for(1.0, 0.999, 10.0)) - 4.38).abs() < 1e-9);
        assert!((value(max_tolerable_errors_for(0.1, 0.999, 10.0)) - 43.8).abs() < 1e-9);
        assert_eq!(max_tolerable_errors_for(0.0, 0.999, 10.0), Tolerance::Unbounded);
    }

    #[test]
    fn codec_semantics_feed_the_model() {
        use ProtectionOutcome::*;
        assert_eq!(hardware_outcome(ProtectionTechnique::Secded, 1), MaskedByHw);
        assert_eq!(hardware_outcome(ProtectionTechnique::Secded, 2), DetectedOnly);
        assert_eq!(hardware_outcome(ProtectionTechnique::Parity, 1), DetectedOnly);
        assert_eq!(hardware_outcome(ProtectionTechnique::Parity, 2), Undetected);
        assert_eq!(hardware_outcome(ProtectionTechnique::None, 1), Undetected);
    }

    #[test]
    fn shipped_designs_hit_their_targets() {
        let c = shipped();
        let eval = |n: &str| evaluate_design(&design(&c, n), &c.profile, &c.error_model, &c.cost_model).unwrap();
        let dr = eval("detect-recover");
        assert!(dr.availability >= 0.999, "{dr:?}");
        assert!((dr.server_cost_savings_pct - 2.9).abs() < 0.05, "{}", dr.server_cost_savings_pct);
        let drl = eval("detect-recover-l");
        assert!(drl.availability >= 0.999, "{drl:?}");
        assert!((drl.server_cost_savings_pct - 4.7).abs() < 0.05, "{}", drl.server_cost_savings_pct);
        let ts = eval("typical-server");
        assert_eq!(ts.server_cost_savings_pct, 0.0);
        assert!(eval("consumer-pc").availability < 0.999);
        assert!(eval("less-tested").availability < 0.999);
    }

    #[test]
    fn secded_with_single_bit_errors_never_crashes() {
        let c = shipped();
        let em = ErrorModel {
            multi_bit_fraction: 0.0,
            ..c.error_model
        };
        let r = evaluate_design(&design(&c, "typical-server"), &c.profile, &em, &c.cost_model).unwrap();
        assert_eq!(r.crashes_per_month, 0.0);
        assert_eq!(r.availability, 1.0);
        let r = evaluate_design(&design(&c, "typical-server"), &c.profile, &c.error_model, &c.cost_model).unwrap();
        assert!(r.availability < 1.0, "multi-bit residue must show");
    }

    #[test]
    fn missing_profile_names_the_region() {
        let c = shipped();
        let mut prof = c.profile.clone();
        prof.regions.remove(&RegionKind::Stack);
        let e = evaluate_design(&design(&c, "consumer-pc"), &prof, &c.error_model, &c.cost_model).unwrap_err();
        assert_eq!(
            e,
            HrmError::MissingProfile {
                region: RegionKind::Stack,
                class: ErrorClass::Soft
            }
        );
        assert!(e.to_string().contains("stack"));
        assert!(evaluate_design(&design(&c, "consumer-pc"), &prof.with_defaults(&c.profile), &c.error_model, &c.cost_model).is_ok());
    }

    #[test]
    fn design_invariants() {
        let c = shipped();
        let mut bad = c.designs.iter().find(|d| d.name == "detect-recover").unwrap().clone();
        bad.regions.get_mut(&RegionKind::Heap).unwrap().response = SoftwareResponse::ReloadCleanCopy;
        bad.regions.get_mut(&RegionKind::Heap).unwrap().technique = ProtectionTechnique::Parity;
        assert!(matches!(bad.bind(&c.cost_model), Err(HrmError::Design { .. })));
        let a = Assignment {
            technique: ProtectionTechnique::None,
            response: SoftwareResponse::CrashOnDetect,
            grade: MemoryGrade::Tested,
        };
        assert!(a.invalid_reason(true).is_some());
    }

    /// Single-bit events only, every region given the same assignment.
    fn crashes_with(technique: ProtectionTechnique, response: SoftwareResponse, p: f64) -> f64 {
        let c = shipped();
        let em = ErrorModel {
            multi_bit_fraction: 0.0,
            ..c.error_model
        };
        let v = RegionVulnerability {
            crash_probability: p,
            incorrect_per_billion: 0.0,
        };
        let prof = HrmProfile {
            regions: c.cost_model.regions.iter().map(|r| (r.kind, ClassVulnerability { soft: Some(v), hard: Some(v) })).collect(),
        };
        let dp = DesignSpec {
            name: "x".into(),
            granularity: Granularity::WholeSystem,
            all: Some(Assignment {
                technique,
                response,
                grade: MemoryGrade::Tested,
            }),
            regions: BTreeMap::new(),
        }
        .bind(&c.cost_model)
        .unwrap();
        evaluate_design(&dp, &prof, &em, &c.cost_model).unwrap().crashes_per_month
    }

    proptest! {
        #[test]
        fn technique_dominance(p in 0.0f64..=1.0) {
            let secded = crashes_with(ProtectionTechnique::Secded, SoftwareResponse::CrashOnDetect, p);
            let parity = crashes_with(ProtectionTechnique::Parity, SoftwareResponse::CrashOnDetect, p);
            let none = crashes_with(ProtectionTechnique::None, SoftwareResponse::None, p);
            prop_assert!(secded <= none && secded <= parity);
            // Crash-on-detect turns every detected error into a crash, so it
            // is never better than leaving the error to the application.
            prop_assert!(none <= parity * (1.0 + 1e-12));
        }

        #[test]
        fn monotone_in_rates_and_mttr(scale in 1.0f64..10.0, mttr in 0.1f64..100.0) {
            let c = shipped();
            for spec in &c.designs {
                let dp = spec.bind(&c.cost_model).unwrap();
                let base = evaluate_design(&dp, &c.profile, &c.error_model, &c.cost_model).unwrap();
                let em = ErrorModel { soft_fit_per_mbit: c.error_model.soft_fit_per_mbit * scale, ..c.error_model };
                let worse = evaluate_design(&dp, &c.profile, &em, &c.cost_model).unwrap();
                prop_assert!(worse.availability <= base.availability);
                let mut cm = c.cost_model.clone();
                cm.mttr_minutes = mttr;
                let mut faster = cm.clone();
                faster.mttr_minutes = mttr / 2.0;
                let slow = evaluate_design(&dp, &c.profile, &c.error_model, &cm).unwrap();
                let fast = evaluate_design(&dp, &c.profile, &c.error_model, &faster).unwrap();
                prop_assert!(fast.availability >= slow.availability);
            }
        }

        #[test]
        fn linear_in_region_size(k in 0.25f64..4.0) {
            let c = shipped();
            let mut cm = c.cost_model.clone();
            for r in &mut cm.regions {
                r.size_gb *= k;
            }
            for spec in &c.designs {
                let a = evaluate_design(&spec.bind(&c.cost_model).unwrap(), &c.profile, &c.error_model, &c.cost_model).unwrap();
                let b = evaluate_design(&spec.bind(&cm).unwrap(), &c.profile, &c.error_model, &cm).unwrap();
                prop_assert!((b.crashes_per_month - k * a.crashes_per_month).abs() <= 1e-9 * b.crashes_per_month.max(1.0));
                prop_assert!((b.incorrect_per_billion - k * a.incorrect_per_billion).abs() <= 1e-9 * b.incorrect_per_billion.max(1.0));
                prop_assert!((b.server_cost_savings_pct - a.server_cost_savings_pct).abs() < 1e-9);
            }
        }

        #[test]
        fn weaker_designs_save_money(t in 0usize..3, r in 0usize..4, g in 0usize..2) {
            let c = shipped();
            let a = Assignment {
                technique: ProtectionTechnique::ALL[t],
                response: SoftwareResponse::ALL[r],
                grade: MemoryGrade::ALL[g],
            };
            prop_assume!(c.cost_model.regions.iter().all(|reg| a.invalid_reason(reg.disk_backed).is_none()));
            let dp = DesignSpec { name: "x".into(), granularity: Granularity::WholeSystem, all: Some(a), regions: BTreeMap::new() }
                .bind(&c.cost_model).unwrap();
            let rep = evaluate_design(&dp, &c.profile, &c.error_model, &c.cost_model).unwrap();
            if a.technique == ProtectionTechnique::Secded && a.grade == MemoryGrade::Tested {
                prop_assert_eq!(rep.server_cost_savings_pct, 0.0);
            } else {
                prop_assert!(rep.server_cost_savings_pct > 0.0);
            }
        }
    }
}
