//! Discrete-event simulation of the error model, month by month, as an
//! independent check on the analytic crash rate.
//!
//! Each path's event count is drawn from its Poisson distribution, and each
//! undetected event rolls its own crash die. The per-event dice are summed
//! with a binomial draw, which has the same distribution and keeps 10^5
//! simulated months cheap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{event_paths, CostModel, DesignPoint, ErrorModel, HrmError, HrmProfile, PathOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub months: u64,
    pub mean_crashes_per_month: f64,
    pub std_dev: f64,
    pub std_error: f64,
}

impl MonteCarloSummary {
    /// Distance from `expected` in standard errors.
    pub fn z_score(&self, expected: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean_crashes_per_month == expected {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean_crashes_per_month - expected).abs() / self.std_error
        }
    }
}

pub fn simulate_crashes(
    dp: &DesignPoint,
    prof: &HrmProfile,
    em: &ErrorModel,
    cm: &CostModel,
    months: u64,
    seed: u64,
) -> Result<MonteCarloSummary, HrmError> {
    if months == 0 {
        return Err(HrmError::Config("simulation needs at least one month".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = Vec::new();
    for p in event_paths(dp, prof, em, cm)? {
        let crash_p = match p.outcome {
            PathOutcome::Crash => 1.0,
            PathOutcome::Undetected { p_crash, .. } => p_crash,
            PathOutcome::Masked | PathOutcome::Reload | PathOutcome::Drop => continue,
        };
        if p.events_per_month > 0.0 && crash_p > 0.0 {
            let poisson = Poisson::new(p.events_per_month)
                .map_err(|e| HrmError::Config(format!("arrival rate {}: {e}", p.events_per_month)))?;
            sampled.push((poisson, crash_p));
        }
    }
    // Welford running mean and variance.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for n in 1..=months {
        let mut crashes = 0u64;
        for (poisson, crash_p) in &sampled {
            let events = poisson.sample(&mut rng) as u64;
            crashes += if *crash_p >= 1.0 {
                events
            } else {
                Binomial::new(events, *crash_p).expect("p in [0, 1]").sample(&mut rng)
            };
        }
        let x = crashes as f64;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let var = if months > 1 { m2 / (months - 1) as f64 } else { 0.0 };
    Ok(MonteCarloSummary {
        months,
        mean_crashes_per_month: mean,
        std_dev: var.sqrt(),
        std_error: (var / months as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hrm::{evaluate_design, Calibration};

    #[test]
    fn matches_analytic_rate() {
        let c = Calibration::shipped().unwrap();
        for name in c.design_names() {
            let dp = c.design(name).unwrap();
            let analytic = evaluate_design(&dp, &c.profile, &c.error_model, &c.cost_model).unwrap();
            let mc = simulate_crashes(&dp, &c.profile, &c.error_model, &c.cost_model, 20_000, 5).unwrap();
            assert!(
                mc.z_score(analytic.crashes_per_month) < 3.0,
                "{name}: analytic {} vs simulated {mc:?}",
                analytic.crashes_per_month
            );
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let c = Calibration::shipped().unwrap();
        let dp = c.design("consumer-pc").unwrap();
        let a = simulate_crashes(&dp, &c.profile, &c.error_model, &c.cost_model, 100, 9).unwrap();
        let b = simulate_crashes(&dp, &c.profile, &c.error_model, &c.cost_model, 100, 9).unwrap();
        assert_eq!(a, b);
    }
}
