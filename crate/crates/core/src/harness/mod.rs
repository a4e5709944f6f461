//! Scenario harness: coordination scripts, the workload throughput series
//! they produce, recovery metrics and the replication benchmark.

mod bench;
mod run;
mod script;

use thiserror::Error;

use crate::simnet::Time;

pub use bench::{bench, BenchCommit, BenchConfig, BenchResult, ReplicationMode};
pub use run::{run_script, scenario_class, CheckResult, RunConfig, ScenarioClass, ScriptRun, WorkloadSeries};
pub use script::{parse_script, Command, Script};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: machine {id} was never started")]
    UnknownId { line: usize, id: u32 },
    #[error("series has no failure mark")]
    NoFailureMark,
    #[error("{command}: observed {observed}, expected {expected}")]
    AssertionFailed { command: String, observed: usize, expected: usize },
    #[error("cannot load {0}")]
    Load(String),
    #[error("{0}")]
    Command(String),
}

pub const SECOND: Time = 1_000_000;

/// Committed transactions per whole simulated second of a workload.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThroughputSeries {
    pub counts: Vec<u64>,
    /// Failure times, relative to the workload start.
    pub failure_marks: Vec<Time>,
}

impl ThroughputSeries {
    /// Bin commit times (relative to the start) into `seconds` buckets.
    pub fn from_commits(commits: &[Time], seconds: usize, failure_marks: Vec<Time>) -> Self {
        let mut counts = vec![0; seconds];
        for t in commits {
            if let Some(c) = counts.get_mut((t / SECOND) as usize) {
                *c += 1;
            }
        }
        ThroughputSeries { counts, failure_marks }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("second,txns\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{i},{c}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveryReport {
    /// Longest run of zero seconds that starts at a failure mark's second.
    pub recovery_time_s: u64,
    /// False when such a run lasts to the end of the series.
    pub recovered: bool,
}

pub fn compute_recovery(series: &ThroughputSeries) -> Result<RecoveryReport, HarnessError> {
    if series.failure_marks.is_empty() {
        return Err(HarnessError::NoFailureMark);
    }
    let mut report = RecoveryReport { recovery_time_s: 0, recovered: true };
    for mark in &series.failure_marks {
        let start = (mark / SECOND) as usize;
        let run = series.counts.iter().skip(start).take_while(|c| **c == 0).count();
        if start < series.counts.len() && start + run == series.counts.len() {
            report.recovered = false;
        }
        report.recovery_time_s = report.recovery_time_s.max(run as u64);
    }
    Ok(report)
}

/// Longest commit-free interval after `mark`: from the mark to the first
/// commit, or between later consecutive commits. `None` if nothing commits
/// after the mark.
pub fn stall_after(commits: &[Time], mark: Time) -> Option<Time> {
    let first_after = commits.iter().position(|t| *t > mark)?;
    let mut prev = mark;
    let mut worst = 0;
    for t in &commits[first_after..] {
        worst = worst.max(t - prev);
        prev = *t;
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(counts: &[u64], mark_s: u64) -> ThroughputSeries {
        ThroughputSeries { counts: counts.to_vec(), failure_marks: vec![mark_s * SECOND + 300_000] }
    }

    #[test]
    fn recovery_examples() {
        let r = compute_recovery(&series(&[50, 50, 0, 0, 0, 48, 50], 2)).unwrap();
        assert_eq!(r, RecoveryReport { recovery_time_s: 3, recovered: true });
        let r = compute_recovery(&series(&[50, 50, 0, 0], 2)).unwrap();
        assert!(!r.recovered);
        let r = compute_recovery(&series(&[50, 50, 7, 0, 50], 2)).unwrap();
        assert_eq!(r.recovery_time_s, 0);
        assert_eq!(compute_recovery(&ThroughputSeries::default()), Err(HarnessError::NoFailureMark));
    }

    #[test]
    fn binning_and_csv() {
        let s = ThroughputSeries::from_commits(&[10, SECOND - 1, SECOND, 5 * SECOND], 3, vec![]);
        assert_eq!(s.counts, vec![2, 1, 0]);
        assert_eq!(s.to_csv(), "second,txns\n0,2\n1,1\n2,0\n");
    }

    #[test]
    fn stalls() {
        assert_eq!(stall_after(&[10, 20, 30, 100, 110], 35), Some(65));
        assert_eq!(stall_after(&[10, 40, 50, 120], 35), Some(70));
        assert_eq!(stall_after(&[10, 20], 35), None);
        assert_eq!(stall_after(&[50, 60], 35), Some(15));
    }
}
