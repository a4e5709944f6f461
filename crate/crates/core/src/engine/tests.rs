use super::*;
use crate::statements::{parse_statement, parse_workload};

fn stmts(text: &[&str]) -> Vec<Statement> {
    text.iter().map(|t| parse_statement(t).unwrap()).collect()
}

fn cluster(n: usize, machines: u32) -> Cluster {
    let mut cfg = EngineConfig::new(n);
    cfg.ineligible.insert(ProcessId(0));
    let mut c = Cluster::new(cfg, 7);
    for m in 0..machines {
        assert!(c.start_machine(ProcessId(m), ms(10_000)), "machine {m} joins");
    }
    c
}

fn create(c: &mut Cluster, on: u32, rows: usize) {
    let mut s = stmts(&["CREATE TABLE t (id int, name varchar(20))", "SET AUTOCOMMIT OFF"]);
    for i in 0..rows {
        s.push(parse_statement(&format!("INSERT INTO t VALUES ({i}, 'r{i}')")).unwrap());
    }
    s.push(Statement::Commit);
    let out = c.execute(ProcessId(on), s, ms(10_000));
    assert!(matches!(out, JobOutcome::Done(_)), "{out:?}");
}

#[test]
fn first_machine_creates_the_system_table() {
    let c = cluster(2, 1);
    assert!(c.instance(ProcessId(0)).unwrap().is_system_table());
}

#[test]
fn create_replicates_to_the_factor() {
    let mut c = cluster(2, 4);
    create(&mut c, 1, 10);
    assert_eq!(c.repl_factor("t"), 2);
    assert_eq!(c.meta_repl_factor(Some("t")), 2);
    assert!(replica_agreement(&c.world, "t"));
    let out = c.execute(ProcessId(0), stmts(&["SELECT * FROM t"]), ms(5_000));
    match out {
        JobOutcome::Done(r) => assert_eq!(r, vec![StmtResult::Rows(r_rows(&r))]),
        other => panic!("{other:?}"),
    }
}

fn r_rows(r: &[StmtResult]) -> Vec<Row> {
    match &r[0] {
        StmtResult::Rows(rows) => {
            assert_eq!(rows.len(), 10);
            rows.clone()
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn duplicate_create_is_rejected() {
    let mut c = cluster(1, 2);
    create(&mut c, 1, 0);
    let out = c.execute(ProcessId(1), stmts(&["CREATE TABLE t (id int)"]), ms(5_000));
    assert_eq!(out, JobOutcome::Failed(EngineError::DuplicateTable("t".into())));
}

#[test]
fn workload_commits_and_survives_a_replica_loss() {
    let mut c = cluster(2, 4);
    create(&mut c, 1, 5);
    let tm_host = c.world.actors().find_map(|(p, a)| a.instance()?.tm_state("t").map(|_| p)).unwrap();
    let body = parse_workload(
        "SET AUTOCOMMIT OFF;\nINSERT INTO t VALUES (<loop-counter/>, 'x');\nSELECT * FROM t WHERE id > 3;\nCOMMIT;",
    )
    .unwrap()
    .statements;
    let job = c.submit(ProcessId(0), Job::Workload { body, duration: ms(20_000), seed: 1 }).unwrap();
    c.run_for(ms(5_000));
    let victim = c
        .world
        .disk(tm_host)
        .and_then(|_| c.instance(tm_host))
        .and_then(|i| i.tm_state("t"))
        .and_then(|s| s.replicas.iter().map(|r| r.host).find(|h| *h != tm_host))
        .unwrap();
    c.kill(victim);
    c.run_for(ms(16_000));
    let run = c.instance(ProcessId(0)).unwrap().workload(job).unwrap().clone();
    assert!(run.commits.len() > 100, "{} commits", run.commits.len());
    let after = run.commits.iter().filter(|t| **t > ms(12_000)).count();
    assert!(after > 0);
    assert_eq!(c.repl_factor("t"), 2);
    assert!(replica_agreement(&c.world, "t"));
}
