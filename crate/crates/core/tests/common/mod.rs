//! Shared drivers for the integration suites: a randomized concurrent
//! workload checked against a serial replay, and scenario helpers.

#![allow(dead_code)]

use std::collections::BTreeMap;

use d2o_core::engine::{wait_for_cycle, Cluster, EngineConfig, Job, JobOutcome, StmtResult, TxnRecord};
use d2o_core::model::{Row, Value};
use d2o_core::simnet::{ms, ProcessId, Time};
use d2o_core::statements::{parse_statement, parse_workload, Literal, Predicate, Statement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SerialRun {
    pub commits: usize,
    pub clients: usize,
    pub tables: usize,
}

/// Serial oracle: tables as plain row lists of (id, v).
#[derive(Default)]
struct Oracle {
    tables: BTreeMap<String, Vec<(i64, i64)>>,
}

fn int(l: &Literal) -> i64 {
    match l {
        Literal::Integer(i) => *i,
        other => panic!("expanded integer expected, got {other}"),
    }
}

fn pair(row: &Row) -> (i64, i64) {
    let v = |x: &Value| match x {
        Value::Int(i) => *i as i64,
        Value::BigInt(i) => *i,
        Value::Varchar(s) => panic!("unexpected text {s}"),
    };
    (v(&row.0[0]), v(&row.0[1]))
}

fn keep(p: Option<&Predicate>, row: (i64, i64)) -> bool {
    let (column, value, greater) = match p {
        None => return true,
        Some(Predicate::Greater { column, value }) => (column, value, true),
        Some(Predicate::Equal { column, value }) => (column, value, false),
    };
    let lhs = if column == "id" { row.0 } else { row.1 };
    if greater {
        lhs > int(value)
    } else {
        lhs == int(value)
    }
}

fn sorted(mut v: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    v.sort();
    v
}

impl Oracle {
    /// Apply one statement; its result must equal what the engine returned.
    fn apply(&mut self, stmt: &Statement, got: &StmtResult) -> Result<(), String> {
        match stmt {
            Statement::Insert { table, values } => {
                self.tables.entry(table.clone()).or_default().push((int(&values[0]), int(&values[1])));
                expect(got, &StmtResult::Count(1), stmt)
            }
            Statement::Delete { table, predicate } => {
                let rows = self.tables.entry(table.clone()).or_default();
                let before = rows.len();
                rows.retain(|r| !keep(predicate.as_ref(), *r));
                expect(got, &StmtResult::Count(before - rows.len()), stmt)
            }
            Statement::Select { table, predicate } => {
                let want: Vec<_> =
                    self.tables.get(table).into_iter().flatten().copied().filter(|r| keep(predicate.as_ref(), *r)).collect();
                match got {
                    StmtResult::Rows(rows) if sorted(rows.iter().map(pair).collect()) == sorted(want.clone()) => Ok(()),
                    other => Err(format!("{stmt:?}: engine {other:?}, serial {want:?}")),
                }
            }
            _ => Ok(()),
        }
    }
}

fn expect(got: &StmtResult, want: &StmtResult, stmt: &Statement) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{stmt:?}: engine {got:?}, serial {want:?}"))
    }
}

fn random_body(rng: &mut ChaCha8Rng, client: usize, tables: usize) -> String {
    let mut out = String::from("SET AUTOCOMMIT OFF;\n");
    for _ in 0..rng.gen_range(1..=3) {
        let t = rng.gen_range(0..tables);
        out.push_str(&match rng.gen_range(0..4) {
            0 | 1 => format!("INSERT INTO t{t} VALUES (<loop-counter/>, {client});\n"),
            2 => format!("DELETE FROM t{t} WHERE id={};\n", rng.gen_range(0..6)),
            _ => format!("SELECT * FROM t{t} WHERE id > {};\n", rng.gen_range(0..4)),
        });
    }
    out.push_str("COMMIT;\n");
    out
}

/// One randomized run: up to four clients loop random transactions over up
/// to three tables. Every committed transaction's results and the final
/// replica contents must match a serial replay in commit order, and the
/// wait-for graph must stay acyclic throughout.
pub fn serializability_run(seed: u64) -> Result<SerialRun, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clients = rng.gen_range(1..=4usize);
    let tables = rng.gen_range(1..=3usize);
    let mut cfg = EngineConfig::new(rng.gen_range(1..=2));
    cfg.record_history = true;
    cfg.ineligible.insert(ProcessId(0));
    let mut c = Cluster::new(cfg, seed);
    for m in 0..4 {
        if !c.start_machine(ProcessId(m), ms(10_000)) {
            return Err(format!("machine {m} did not join"));
        }
    }
    for t in 0..tables {
        let create = parse_statement(&format!("CREATE TABLE t{t} (id int, v int)")).unwrap();
        if let JobOutcome::Failed(e) = c.execute(ProcessId(1 + t as u32 % 3), vec![create], ms(10_000)) {
            return Err(format!("create t{t}: {e}"));
        }
    }
    let mut end: Time = 0;
    for k in 0..clients {
        let body = parse_workload(&random_body(&mut rng, k, tables)).unwrap().statements;
        let duration = ms(rng.gen_range(100..=400));
        let host = ProcessId(k as u32);
        c.submit(host, Job::Workload { body, duration, seed: seed ^ k as u64 }).ok_or("client down")?;
        end = end.max(c.now() + duration);
    }
    let quiet = end + ms(500);
    while c.world.next_event_time().is_some_and(|t| t <= quiet) {
        c.world.step();
        if let Some(cycle) = wait_for_cycle(&c.world) {
            return Err(format!("wait-for cycle {cycle:?} at {}", c.now()));
        }
    }

    let mut history: Vec<TxnRecord> =
        (0..4).filter_map(|m| c.instance(ProcessId(m))).flat_map(|i| i.client.history.iter().cloned()).collect();
    history.sort_by_key(|r| (r.at, r.txn));
    let mut oracle = Oracle::default();
    for t in 0..tables {
        oracle.tables.insert(format!("t{t}"), Vec::new());
    }
    for rec in &history {
        let data: Vec<&Statement> = rec.stmts.iter().filter(|s| s.table().is_some()).collect();
        if data.len() != rec.results.len() {
            return Err(format!("txn {} has {} statements but {} results", rec.txn, data.len(), rec.results.len()));
        }
        for (s, r) in data.into_iter().zip(&rec.results) {
            oracle.apply(s, r).map_err(|e| format!("txn {} at {}: {e}", rec.txn, rec.at))?;
        }
    }
    for (name, want) in &oracle.tables {
        let mut copies = 0;
        for (p, disk) in (0..4).filter_map(|m| Some((m, c.world.disk(ProcessId(m))?))) {
            if let Some(r) = disk.replicas.get(name) {
                copies += 1;
                let got = sorted(r.store.rows.iter().map(pair).collect());
                if got != sorted(want.clone()) {
                    return Err(format!("{name} on machine {p}: {got:?}, serial {want:?}"));
                }
            }
        }
        if copies == 0 {
            return Err(format!("{name} has no replicas"));
        }
    }
    Ok(SerialRun { commits: history.len(), clients, tables })
}
