//! Exhaustive design-space enumeration and the availability/savings Pareto front.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codecs::ProtectionTechnique;
use crate::hrm::{
    evaluate_design, Assignment, CostModel, DesignPoint, ErrorModel, Granularity, HrmError, HrmProfile, MemoryGrade,
    ReliabilityCostReport, SoftwareResponse,
};
use crate::region::RegionKind;

pub const MAX_DESIGNS: u128 = 1_000_000;

pub const CSV_COLUMNS: [&str; 5] = [
    "design",
    "availability",
    "savings_pct",
    "crashes_per_month",
    "incorrect_per_billion",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpace {
    pub techniques: Vec<ProtectionTechnique>,
    pub responses: Vec<SoftwareResponse>,
    pub grades: Vec<MemoryGrade>,
    pub granularities: Vec<Granularity>,
    pub regions: Vec<RegionKind>,
}

impl DesignSpace {
    pub fn from_toml(text: &str) -> Result<DesignSpace, HrmError> {
        toml::from_str(text).map_err(|e| HrmError::Config(format!("design space: {e}")))
    }

    pub fn shipped() -> DesignSpace {
        DesignSpace::from_toml(crate::hrm::calibration::DESIGN_SPACE_TOML).expect("shipped design space parses")
    }

    pub fn validate(&self, cm: &CostModel) -> Result<(), HrmError> {
        let bad = |m: String| Err(HrmError::Config(m));
        if self.techniques.is_empty() || self.responses.is_empty() || self.grades.is_empty() || self.granularities.is_empty() {
            return bad("every design-space axis needs at least one value".into());
        }
        if self.regions.is_empty() {
            return bad("the design space needs at least one region".into());
        }
        if self.granularities.contains(&Granularity::PerRegion) && self.regions.len() < 2 {
            return bad("per-region granularity needs at least two regions".into());
        }
        let mut mine: Vec<_> = self.regions.clone();
        mine.sort();
        mine.dedup();
        let mut theirs: Vec<_> = cm.regions.iter().map(|r| r.kind).collect();
        theirs.sort();
        if mine.len() != self.regions.len() {
            return bad("design-space regions must be distinct".into());
        }
        if mine != theirs {
            return bad(format!("design-space regions {mine:?} differ from cost-model regions {theirs:?}"));
        }
        Ok(())
    }

    fn assignments(&self) -> Vec<Assignment> {
        let mut out = Vec::new();
        for &technique in &self.techniques {
            for &response in &self.responses {
                for &grade in &self.grades {
                    out.push(Assignment {
                        technique,
                        response,
                        grade,
                    });
                }
            }
        }
        out
    }

    /// Candidate count before validity filtering.
    pub fn size_estimate(&self) -> u128 {
        let per = (self.techniques.len() * self.responses.len() * self.grades.len()) as u128;
        let mut total = 0u128;
        for g in &self.granularities {
            total = total.saturating_add(match g {
                Granularity::WholeSystem => per,
                Granularity::PerRegion => per.checked_pow(self.regions.len() as u32).unwrap_or(u128::MAX),
            });
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub designs: Vec<DesignPoint>,
    /// Candidates dropped because they violate a design invariant.
    pub filtered: u64,
}

/// Canonical name of a design, unique within a space.
pub fn design_signature(dp: &DesignPoint, cm: &CostModel) -> String {
    match dp.granularity {
        Granularity::WholeSystem => {
            let a = dp.assignments.values().next().map(|a| a.label()).unwrap_or_default();
            format!("whole:{a}")
        }
        Granularity::PerRegion => {
            let parts: Vec<String> = cm
                .regions
                .iter()
                .map(|r| format!("{}={}", r.kind, dp.assignments[&r.kind].label()))
                .collect();
            format!("per-region:{}", parts.join(";"))
        }
    }
}

pub fn enumerate_designs(space: &DesignSpace, cm: &CostModel) -> Result<Enumeration, HrmError> {
    space.validate(cm)?;
    let estimate = space.size_estimate();
    if estimate > MAX_DESIGNS {
        return Err(HrmError::TooLarge {
            estimate,
            limit: MAX_DESIGNS,
        });
    }
    let choices = space.assignments();
    let mut designs = Vec::new();
    let mut filtered = 0;
    let mut push = |granularity, assignments: BTreeMap<RegionKind, Assignment>| {
        let mut dp = DesignPoint {
            name: String::new(),
            granularity,
            assignments,
        };
        if dp.validate(cm).is_err() {
            filtered += 1;
            return;
        }
        dp.name = design_signature(&dp, cm);
        designs.push(dp);
    };
    for &g in &space.granularities {
        match g {
            Granularity::WholeSystem => {
                for a in &choices {
                    push(g, cm.regions.iter().map(|r| (r.kind, *a)).collect());
                }
            }
            Granularity::PerRegion => {
                // Odometer over one choice index per region.
                let n = space.regions.len();
                let mut idx = vec![0usize; n];
                loop {
                    push(g, space.regions.iter().zip(&idx).map(|(r, i)| (*r, choices[*i])).collect());
                    let mut k = n;
                    loop {
                        if k == 0 {
                            break;
                        }
                        k -= 1;
                        idx[k] += 1;
                        if idx[k] < choices.len() {
                            break;
                        }
                        idx[k] = 0;
                    }
                    if idx.iter().all(|i| *i == 0) {
                        break;
                    }
                }
            }
        }
    }
    Ok(Enumeration { designs, filtered })
}

/// `a` is at least as good as `b` on both axes and better on one.
pub fn dominates(a: &ReliabilityCostReport, b: &ReliabilityCostReport) -> bool {
    let ge = a.availability >= b.availability && a.server_cost_savings_pct >= b.server_cost_savings_pct;
    let gt = a.availability > b.availability || a.server_cost_savings_pct > b.server_cost_savings_pct;
    ge && gt
}

/// Like [`dominates`] with expected incorrect rate as a third axis to minimize.
pub fn dominates_3(a: &ReliabilityCostReport, b: &ReliabilityCostReport) -> bool {
    let ge = a.availability >= b.availability
        && a.server_cost_savings_pct >= b.server_cost_savings_pct
        && a.incorrect_per_billion <= b.incorrect_per_billion;
    let gt = a.availability > b.availability
        || a.server_cost_savings_pct > b.server_cost_savings_pct
        || a.incorrect_per_billion < b.incorrect_per_billion;
    ge && gt
}

/// Indices of the non-dominated reports under (availability, savings), in
/// ascending order. Exact duplicates are all kept.
pub fn pareto_front(reports: &[ReliabilityCostReport]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    let key = |i: usize| (reports[i].availability, reports[i].server_cost_savings_pct);
    order.sort_by(|&a, &b| {
        let (aa, sa) = key(a);
        let (ab, sb) = key(b);
        ab.total_cmp(&aa).then(sb.total_cmp(&sa))
    });
    let mut front = Vec::new();
    // Best savings among strictly higher availability.
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let avail = key(order[i]).0;
        let mut j = i;
        while j < order.len() && key(order[j]).0 == avail {
            j += 1;
        }
        let group_max = key(order[i]).1;
        for &k in &order[i..j] {
            let s = key(k).1;
            if s == group_max && best_above < s {
                front.push(k);
            }
        }
        best_above = best_above.max(group_max);
        i = j;
    }
    front.sort_unstable();
    front
}

/// Three-axis front; quadratic.
pub fn pareto_front_3(reports: &[ReliabilityCostReport]) -> Vec<usize> {
    (0..reports.len())
        .filter(|&i| !reports.iter().any(|o| dominates_3(o, &reports[i])))
        .collect()
}

/// Indices of reports meeting `min_availability`, by savings then
/// availability, both descending.
pub fn constrain(reports: &[ReliabilityCostReport], min_availability: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].availability >= min_availability).collect();
    keep.sort_by(|&a, &b| {
        reports[b]
            .server_cost_savings_pct
            .total_cmp(&reports[a].server_cost_savings_pct)
            .then(reports[b].availability.total_cmp(&reports[a].availability))
            .then(a.cmp(&b))
    });
    keep
}

pub fn evaluate_all(
    designs: &[DesignPoint],
    prof: &HrmProfile,
    em: &ErrorModel,
    cm: &CostModel,
    threads: usize,
) -> Result<Vec<ReliabilityCostReport>, HrmError> {
    let threads = threads.max(1);
    let chunk = designs.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = designs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|d| evaluate_design(d, prof, em, cm)).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(designs.len());
        for h in handles {
            out.extend(h.join().expect("evaluation thread panicked")?);
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub enumeration: Enumeration,
    pub reports: Vec<ReliabilityCostReport>,
    pub front: Vec<usize>,
    /// Named design -> index of the enumerated point with the same assignments.
    pub highlights: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontAnnotation {
    pub designs: usize,
    pub filtered: u64,
    pub objectives: Vec<String>,
    pub front: Vec<String>,
    pub highlights: BTreeMap<String, HighlightEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightEntry {
    pub design: String,
    pub on_front: bool,
    pub availability: f64,
    pub savings_pct: f64,
}

pub struct ExploreOptions<'a> {
    pub named: &'a [DesignPoint],
    pub threads: usize,
    /// Add expected incorrect rate as a third objective.
    pub with_incorrect: bool,
}

pub fn explore(
    space: &DesignSpace,
    prof: &HrmProfile,
    em: &ErrorModel,
    cm: &CostModel,
    opts: &ExploreOptions,
) -> Result<Exploration, HrmError> {
    let enumeration = enumerate_designs(space, cm)?;
    let reports = evaluate_all(&enumeration.designs, prof, em, cm, opts.threads)?;
    let front = if opts.with_incorrect {
        pareto_front_3(&reports)
    } else {
        pareto_front(&reports)
    };
    let mut highlights = BTreeMap::new();
    for named in opts.named {
        if let Some(i) = enumeration
            .designs
            .iter()
            .position(|d| d.granularity == named.granularity && d.assignments == named.assignments)
        {
            highlights.insert(named.name.clone(), i);
        }
    }
    Ok(Exploration {
        enumeration,
        reports,
        front,
        highlights,
    })
}

impl Exploration {
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for r in &self.reports {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.design, r.availability, r.server_cost_savings_pct, r.crashes_per_month, r.incorrect_per_billion
            ));
        }
        out
    }

    pub fn annotation(&self, with_incorrect: bool) -> FrontAnnotation {
        let mut objectives = vec!["availability:max".to_string(), "savings_pct:max".to_string()];
        if with_incorrect {
            objectives.push("incorrect_per_billion:min".into());
        }
        FrontAnnotation {
            designs: self.reports.len(),
            filtered: self.enumeration.filtered,
            objectives,
            front: self.front.iter().map(|&i| self.reports[i].design.clone()).collect(),
            highlights: self
                .highlights
                .iter()
                .map(|(name, &i)| {
                    let r = &self.reports[i];
                    (
                        name.clone(),
                        HighlightEntry {
                            design: r.design.clone(),
                            on_front: self.front.binary_search(&i).is_ok(),
                            availability: r.availability,
                            savings_pct: r.server_cost_savings_pct,
                        },
                    )
                })
                .collect(),
        }
    }
}
