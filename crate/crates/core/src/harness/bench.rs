//! Replication benchmark: one client machine loops the short workload
//! against a table replicated across `replicas` data machines.

use super::{HarnessError, SECOND};
use crate::commit::Protocol;
use crate::engine::{Cluster, EngineConfig, Job, JobOutcome};
use crate::simnet::{ms, ProcessId, Time};
use crate::statements::{parse_statement, parse_workload};

const WORKLOAD: &str = "SET AUTOCOMMIT OFF;
INSERT INTO bench VALUES (<loop-counter/>, <generated-string/>, <generated-long/>);
SELECT * FROM bench WHERE int_a > 679153090560;
DELETE FROM bench WHERE id=<last-loop-counter/>
COMMIT;";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicationMode {
    /// Every replica is written before commit.
    Sync,
    /// Only `r` replicas are written before commit; the rest catch up.
    Partial(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchCommit {
    TwoPhase,
    ThreePhase,
    Paxos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub replicas: usize,
    pub mode: ReplicationMode,
    pub commit: BenchCommit,
    pub write_delay: bool,
    pub duration: Time,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(replicas: usize) -> Self {
        BenchConfig {
            replicas,
            mode: ReplicationMode::Sync,
            commit: BenchCommit::TwoPhase,
            write_delay: false,
            duration: ms(20_000),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub replicas: usize,
    pub commits: usize,
    pub per_second: f64,
}

pub fn bench(config: &BenchConfig) -> Result<BenchResult, HarnessError> {
    let fail = |m: String| HarnessError::Command(format!("bench n={}: {m}", config.replicas));
    let mut cfg = EngineConfig::new(config.replicas);
    cfg.protocol = match config.commit {
        BenchCommit::TwoPhase => Protocol::TwoPhase,
        BenchCommit::ThreePhase => Protocol::ThreePhase,
        BenchCommit::Paxos => return Err(fail("the engine commits with 2PC or 3PC only".into())),
    };
    cfg.sync_replicas = match config.mode {
        ReplicationMode::Sync => None,
        ReplicationMode::Partial(r) => Some(r),
    };
    cfg.write_delay = config.write_delay;
    cfg.ineligible.insert(ProcessId(0));
    let mut cluster = Cluster::new(cfg, config.seed);
    for id in 0..=config.replicas as u32 {
        if !cluster.start_machine(ProcessId(id), ms(60_000)) {
            return Err(fail(format!("machine {id} did not join")));
        }
    }
    let create = parse_statement("CREATE TABLE bench (id int, str_a varchar(40), int_a BIGINT)").expect("valid DDL");
    if let JobOutcome::Failed(e) = cluster.execute(ProcessId(1), vec![create], ms(60_000)) {
        return Err(fail(e.to_string()));
    }
    let body = parse_workload(WORKLOAD).expect("valid workload").statements;
    let job = cluster
        .submit(ProcessId(0), Job::Workload { body, duration: config.duration, seed: config.seed })
        .ok_or_else(|| fail("client is down".into()))?;
    cluster.run_for(config.duration);
    let commits = cluster.instance(ProcessId(0)).and_then(|i| i.workload(job)).map_or(0, |w| w.commits.len());
    Ok(BenchResult {
        replicas: config.replicas,
        commits,
        per_second: commits as f64 * SECOND as f64 / config.duration as f64,
    })
}
