//! Script executor: drives a simulated cluster through a coordination
//! script, collecting workload throughput and check outcomes.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{compute_recovery, stall_after, Command, HarnessError, RecoveryReport, Script, ThroughputSeries, SECOND};
use crate::engine::{Cluster, EngineConfig, Job, JobOutcome};
use crate::model::{ColumnType, TableSchema};
use crate::simnet::{ms, ProcessId, Time};
use crate::statements::{parse_statement, parse_workload, random_string, Literal, Statement};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory workload files are resolved against.
    pub base_dir: PathBuf,
    /// How long a start, create or SQL command may take before it fails.
    pub patience: Time,
}

impl RunConfig {
    pub fn new(seed: u64, base_dir: impl Into<PathBuf>) -> Self {
        RunConfig { seed, base_dir: base_dir.into(), patience: ms(60_000) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub command: String,
    pub observed: usize,
    pub expected: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.observed == self.expected
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSeries {
    pub machine: u32,
    pub file: String,
    pub series: ThroughputSeries,
    /// Commit times relative to the workload start.
    pub commits: Vec<Time>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRun {
    pub workloads: Vec<WorkloadSeries>,
    pub checks: Vec<CheckResult>,
    /// Recovery of the first workload, when a failure hit it.
    pub recovery: Option<RecoveryReport>,
    /// Longest commit-free interval of the first workload after its first
    /// failure mark; `None` when nothing committed after it.
    pub stall: Option<Time>,
    /// What stopped the script early, if anything.
    pub aborted: Option<HarnessError>,
    pub trace_hash: String,
}

impl ScriptRun {
    pub fn passed(&self) -> bool {
        self.aborted.is_none() && self.checks.iter().all(CheckResult::passed)
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.passed() { "ok" } else { "FAILED" };
            out.push_str(&format!("{verdict} {}: observed {}\n", c.command, c.observed));
        }
        if let Some(e) = &self.aborted {
            out.push_str(&format!("aborted: {e}\n"));
        }
        match &self.recovery {
            Some(r) => out.push_str(&format!("recovery_time_s {}\nrecovered {}\n", r.recovery_time_s, r.recovered)),
            None => out.push_str("recovery_time_s n/a\n"),
        }
        match self.stall {
            Some(s) => out.push_str(&format!("stall_ms {:.1}\n", s as f64 / 1000.0)),
            None => out.push_str("stall_ms n/a\n"),
        }
        out.push_str(&format!("result {}\n", if self.passed() { "pass" } else { "fail" }));
        out
    }
}

/// Expected behaviour of a scenario after its failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioClass {
    /// No visible interruption.
    T1,
    /// A finite pause while the system recovers.
    T2,
    /// No further progress.
    T3,
}

pub fn scenario_class(name: &str) -> Option<ScenarioClass> {
    let b = name.as_bytes();
    if b.len() != 2 || !(b'1'..=b'4').contains(&b[0]) {
        return None;
    }
    match (b[0], b[1]) {
        (_, b'E') => Some(ScenarioClass::T3),
        (b'1', b'A'..=b'D') => Some(ScenarioClass::T1),
        (_, b'A'..=b'D') => Some(ScenarioClass::T2),
        _ => None,
    }
}

struct Running {
    machine: u32,
    job: u64,
    file: String,
    start: Time,
    duration: Time,
}

pub fn run_script(script: &Script, config: &RunConfig) -> ScriptRun {
    let mut cfg = EngineConfig::new(script.replication.unwrap_or(2));
    // The first machine fronts the workloads and holds no data.
    if let Some(first) = script.commands.iter().find_map(|c| match c {
        Command::StartMachine { id, .. } => Some(*id),
        _ => None,
    }) {
        cfg.ineligible.insert(ProcessId(first));
    }
    let mut cluster = Cluster::new(cfg, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut running: Vec<Running> = Vec::new();
    let mut marks: Vec<Time> = Vec::new();
    let mut checks = Vec::new();
    let mut aborted = None;

    for command in &script.commands {
        if let Err(e) = step(&mut cluster, config, &mut rng, command, &mut running, &mut marks, &mut checks) {
            aborted = Some(e);
            break;
        }
    }
    if aborted.is_none() {
        if let Some(end) = running.iter().map(|r| r.start + r.duration).max() {
            if end > cluster.now() {
                cluster.world.run_until(end);
            }
        }
    }

    let workloads: Vec<WorkloadSeries> = running
        .iter()
        .map(|r| {
            let commits: Vec<Time> = cluster
                .instance(ProcessId(r.machine))
                .and_then(|i| i.workload(r.job))
                .map(|w| w.commits.iter().map(|t| t - r.start).collect())
                .unwrap_or_default();
            let in_run = marks.iter().filter(|m| **m >= r.start && **m < r.start + r.duration).map(|m| m - r.start).collect();
            let seconds = r.duration.div_ceil(SECOND) as usize;
            WorkloadSeries {
                machine: r.machine,
                file: r.file.clone(),
                series: ThroughputSeries::from_commits(&commits, seconds, in_run),
                commits,
            }
        })
        .collect();
    let first = workloads.first();
    let recovery = first.and_then(|w| compute_recovery(&w.series).ok());
    let stall = first.and_then(|w| stall_after(&w.commits, *w.series.failure_marks.first()?));
    ScriptRun { workloads, checks, recovery, stall, aborted, trace_hash: cluster.world.trace().hash() }
}

fn step(
    cluster: &mut Cluster,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    command: &Command,
    running: &mut Vec<Running>,
    marks: &mut Vec<Time>,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let fail = |what: String| HarnessError::Command(format!("{}: {what}", command.describe()));
    match command {
        Command::StartMachine { id, block_workloads } => {
            let hosts: Vec<u32> = running.iter().map(|r| r.machine).collect();
            if *block_workloads {
                hosts.iter().for_each(|h| cluster.set_paused(ProcessId(*h), true));
            }
            let joined = cluster.start_machine(ProcessId(*id), config.patience);
            if *block_workloads {
                hosts.iter().for_each(|h| cluster.set_paused(ProcessId(*h), false));
            }
            if !joined {
                return Err(fail("machine did not join".into()));
            }
        }
        Command::TerminateMachine { id } => {
            marks.push(cluster.now());
            cluster.kill(ProcessId(*id));
        }
        Command::Sleep { ms: d } => cluster.run_for(ms(*d)),
        Command::CreateTable { id, name, schema, prepopulate_with } => {
            let schema = TableSchema::from_column_list(name, schema).map_err(|e| fail(e.to_string()))?;
            let mut stmts = vec![Statement::CreateTable { if_not_exists: false, schema: schema.clone() }];
            if *prepopulate_with > 0 {
                stmts.push(Statement::SetAutocommit { on: false });
                for _ in 0..*prepopulate_with {
                    stmts.push(Statement::Insert { table: name.clone(), values: random_row(&schema, rng) });
                }
                stmts.push(Statement::Commit);
            }
            expect_done(cluster.execute(ProcessId(*id), stmts, config.patience)).map_err(fail)?;
        }
        Command::ExecuteWorkload { id, file, duration_ms } => {
            let path = config.base_dir.join(file);
            let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Load(format!("{}: {e}", path.display())))?;
            let body = parse_workload(&text).map_err(|e| HarnessError::Load(format!("{}: {e}", path.display())))?.statements;
            let seed = rng.gen();
            let duration = ms(*duration_ms);
            let start = cluster.now();
            let job = cluster.submit(ProcessId(*id), Job::Workload { body, duration, seed }).ok_or_else(|| fail("machine is down".into()))?;
            running.push(Running { machine: *id, job, file: file.clone(), start, duration });
        }
        Command::SqlOn { id, statement } => {
            let stmt = parse_statement(statement.trim().trim_end_matches(';')).map_err(|e| fail(e.to_string()))?;
            expect_done(cluster.execute(ProcessId(*id), vec![stmt], config.patience)).map_err(fail)?;
        }
        Command::CheckReplFactor { name, expected } => {
            check(checks, command, cluster.repl_factor(name), *expected)?;
        }
        Command::CheckMetaReplFactor { name, expected } => {
            check(checks, command, cluster.meta_repl_factor(name.as_deref()), *expected)?;
        }
    }
    Ok(())
}

fn expect_done(outcome: JobOutcome) -> Result<(), String> {
    match outcome {
        JobOutcome::Done(_) => Ok(()),
        JobOutcome::Failed(e) => Err(e.to_string()),
    }
}

fn check(checks: &mut Vec<CheckResult>, command: &Command, observed: usize, expected: usize) -> Result<(), HarnessError> {
    let result = CheckResult { command: command.describe(), observed, expected };
    checks.push(result.clone());
    if result.passed() {
        Ok(())
    } else {
        Err(HarnessError::AssertionFailed { command: result.command, observed, expected })
    }
}

fn random_row(schema: &TableSchema, rng: &mut ChaCha8Rng) -> Vec<Literal> {
    schema
        .columns
        .iter()
        .map(|c| match c.ty {
            ColumnType::Int => Literal::Integer(rng.gen_range(0..=i32::MAX as i64)),
            ColumnType::BigInt => Literal::Integer(rng.gen_range(0..=i64::MAX)),
            ColumnType::Varchar(n) => {
                let mut s = random_string(rng);
                s.truncate(n);
                Literal::Text(s)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes() {
        assert_eq!(scenario_class("1C"), Some(ScenarioClass::T1));
        assert_eq!(scenario_class("3B"), Some(ScenarioClass::T2));
        assert_eq!(scenario_class("4E"), Some(ScenarioClass::T3));
        assert_eq!(scenario_class("5A"), None);
    }
}
