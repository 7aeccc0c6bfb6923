//! Output comparators and outcome classification.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrialOutcome;
use crate::backend::SessionEvent;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("response {index} is not a list of u32 document ids ({len} bytes)")]
    Framing { index: usize, len: usize },
    #[error("{actual} responses for {golden} golden queries")]
    Cardinality { actual: usize, golden: usize },
    #[error("bad comparator `{0}`")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Comparator {
    /// The whole response stream is one unit: 0 or 1 mismatches.
    ByteExact,
    #[default]
    PerQueryExact,
    /// A query is wrong when fewer than `threshold` of the golden top-k
    /// documents appear in the actual top-k.
    TopKOverlap { k: usize, threshold: f64 },
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Comparator::ByteExact => f.write_str("byte-exact"),
            Comparator::PerQueryExact => f.write_str("per-query-exact"),
            Comparator::TopKOverlap { k, threshold } => write!(f, "top-k-overlap:{k}:{threshold}"),
        }
    }
}

impl FromStr for Comparator {
    type Err = CompareError;
    /// `byte-exact`, `per-query-exact`, `top-k-overlap` or `top-k-overlap:K:THRESHOLD`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CompareError::Parse(s.to_string());
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("byte-exact"), None, ..) => Ok(Comparator::ByteExact),
            (Some("per-query-exact"), None, ..) => Ok(Comparator::PerQueryExact),
            (Some("top-k-overlap"), None, ..) => Ok(Comparator::TopKOverlap { k: 10, threshold: 0.9 }),
            (Some("top-k-overlap"), Some(k), Some(t), None) => {
                let k = k.parse().map_err(|_| bad())?;
                let threshold: f64 = t.parse().map_err(|_| bad())?;
                if k == 0 || !(0.0..=1.0).contains(&threshold) {
                    return Err(bad());
                }
                Ok(Comparator::TopKOverlap { k, threshold })
            }
            _ => Err(bad()),
        }
    }
}

fn doc_ids(index: usize, bytes: &[u8]) -> Result<Vec<u32>, CompareError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(CompareError::Framing { index, len: bytes.len() });
    }
    Ok(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Number of queries judged incorrect. `actual` may be a crash-truncated
/// prefix; missing responses count as incorrect.
pub fn compare_output(
    actual: &[Vec<u8>],
    golden: &[Vec<u8>],
    comparator: &Comparator,
) -> Result<u64, CompareError> {
    if actual.len() > golden.len() {
        return Err(CompareError::Cardinality {
            actual: actual.len(),
            golden: golden.len(),
        });
    }
    let missing = (golden.len() - actual.len()) as u64;
    match *comparator {
        Comparator::ByteExact => Ok(u64::from(actual != golden)),
        Comparator::PerQueryExact => {
            Ok(actual.iter().zip(golden).filter(|(a, g)| a != g).count() as u64 + missing)
        }
        Comparator::TopKOverlap { k, threshold } => {
            let mut wrong = missing;
            for (i, (a, g)) in actual.iter().zip(golden).enumerate() {
                let a = doc_ids(i, a)?;
                let g = doc_ids(i, g)?;
                let k_eff = k.min(g.len());
                let incorrect = if k_eff == 0 {
                    !a.is_empty()
                } else {
                    let want: HashSet<u32> = g[..k_eff].iter().copied().collect();
                    let hit = a.iter().take(k).collect::<HashSet<_>>().into_iter().filter(|d| want.contains(d)).count();
                    (hit as f64) / (k_eff as f64) < threshold
                };
                wrong += u64::from(incorrect);
            }
            Ok(wrong)
        }
    }
}

/// How a trial's target ended, as observed by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Exited(i32),
    Signaled(i32),
    /// Still running when the time budget ran out.
    NoExit,
}

impl From<SessionEvent> for ExitStatus {
    fn from(e: SessionEvent) -> Self {
        match e {
            SessionEvent::Exited(c) => ExitStatus::Exited(c),
            SessionEvent::Signaled(s) => ExitStatus::Signaled(s),
            _ => ExitStatus::NoExit,
        }
    }
}

pub fn classify_outcome(
    exit: ExitStatus,
    output: &[Vec<u8>],
    golden: &[Vec<u8>],
    elapsed: Duration,
    timeout: Duration,
    comparator: &Comparator,
) -> Result<TrialOutcome, CompareError> {
    let time_to_crash_us = elapsed.min(timeout).as_micros() as u64;
    let queries_served = output.len() as u64;
    Ok(match exit {
        ExitStatus::Signaled(sig) => TrialOutcome::Crash {
            cause: super::CrashCause::Signal(sig),
            time_to_crash_us,
            queries_served,
        },
        ExitStatus::Exited(code) if code != 0 => TrialOutcome::Crash {
            cause: super::CrashCause::ExitCode(code),
            time_to_crash_us,
            queries_served,
        },
        ExitStatus::NoExit => TrialOutcome::Hang {
            timeout_us: timeout.as_micros() as u64,
        },
        ExitStatus::Exited(_) => {
            let total = golden.len() as u64;
            match compare_output(output, golden, comparator)? {
                0 => TrialOutcome::Masked { total },
                mismatched => TrialOutcome::Incorrect { mismatched, total },
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::CrashCause;

    fn ids(v: &[u32]) -> Vec<u8> {
        v.iter().flat_map(|d| d.to_le_bytes()).collect()
    }

    #[test]
    fn per_query_counts() {
        let g = vec![b"a".to_vec(), b"b".to_vec(), b"c".to_vec()];
        assert_eq!(compare_output(&g, &g, &Comparator::PerQueryExact), Ok(0));
        let mut a = g.clone();
        a[1] = b"x".to_vec();
        assert_eq!(compare_output(&a, &g, &Comparator::PerQueryExact), Ok(1));
        assert_eq!(compare_output(&g[..1], &g, &Comparator::PerQueryExact), Ok(2));
        assert_eq!(compare_output(&a, &g, &Comparator::ByteExact), Ok(1));
        assert_eq!(compare_output(&g, &g, &Comparator::ByteExact), Ok(0));
    }

    #[test]
    fn top_k_threshold() {
        let c = Comparator::TopKOverlap { k: 10, threshold: 0.9 };
        let g = vec![ids(&(0..10).collect::<Vec<_>>())];
        let eight = vec![ids(&[0, 1, 2, 3, 4, 5, 6, 7, 50, 51])];
        assert_eq!(compare_output(&eight, &g, &c), Ok(1));
        let nine = vec![ids(&[9, 8, 7, 6, 5, 4, 3, 2, 1, 99])];
        assert_eq!(compare_output(&nine, &g, &c), Ok(0));
        let short_golden = vec![ids(&[3, 4])];
        assert_eq!(compare_output(&[ids(&[4, 3])], &short_golden, &c), Ok(0));
        assert_eq!(compare_output(&[ids(&[1])], &[vec![]], &c), Ok(1));
        assert_eq!(compare_output(&[vec![]], &[vec![]], &c), Ok(0));
        assert_eq!(
            compare_output(&[vec![1, 2, 3]], &g, &c),
            Err(CompareError::Framing { index: 0, len: 3 })
        );
    }

    #[test]
    fn comparator_parsing() {
        for s in ["byte-exact", "per-query-exact", "top-k-overlap:5:0.8"] {
            assert_eq!(s.parse::<Comparator>().unwrap().to_string(), s);
        }
        assert!("top-k-overlap:0:0.5".parse::<Comparator>().is_err());
        assert!("fuzzy".parse::<Comparator>().is_err());
    }

    #[test]
    fn classification_table() {
        let g = vec![b"x".to_vec(); 1000];
        let t = Duration::from_secs(60);
        let c = Comparator::PerQueryExact;
        let crash = classify_outcome(ExitStatus::Signaled(11), &[], &g, Duration::from_millis(2100), t, &c);
        assert_eq!(
            crash.unwrap(),
            TrialOutcome::Crash {
                cause: CrashCause::Signal(11),
                time_to_crash_us: 2_100_000,
                queries_served: 0
            }
        );
        assert_eq!(
            classify_outcome(ExitStatus::Exited(0), &g, &g, t, t, &c).unwrap(),
            TrialOutcome::Masked { total: 1000 }
        );
        let mut a = g.clone();
        for i in [3, 500, 999] {
            a[i] = b"y".to_vec();
        }
        assert_eq!(
            classify_outcome(ExitStatus::Exited(0), &a, &g, t, t, &c).unwrap(),
            TrialOutcome::Incorrect { mismatched: 3, total: 1000 }
        );
        assert!(matches!(
            classify_outcome(ExitStatus::Exited(4), &g, &g, t, t, &c).unwrap(),
            TrialOutcome::Crash { cause: CrashCause::ExitCode(4), .. }
        ));
        assert_eq!(
            classify_outcome(ExitStatus::NoExit, &g, &g, t * 2, t, &c).unwrap(),
            TrialOutcome::Hang { timeout_us: 60_000_000 }
        );
    }
}
