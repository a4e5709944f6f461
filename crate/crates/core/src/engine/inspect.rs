//! Whole-world views used by scenario checks and tests: replica counts,
//! replica agreement, the wait-for graph and the meta-state file format.

use std::collections::{BTreeMap, BTreeSet};

use super::{EngineNode, Instance, NodeDisk, ProcessId, TxnId};
use crate::model::{parse_uri, render_uri, InstanceRef, ModelError, Row};
use crate::simnet::World;

fn live_instances(world: &World<EngineNode>) -> impl Iterator<Item = &Instance> {
    world.actors().filter(|(p, _)| world.is_up(*p)).filter_map(|(_, a)| a.instance())
}

fn live_disks(world: &World<EngineNode>) -> impl Iterator<Item = (ProcessId, &NodeDisk)> {
    world
        .actors()
        .filter(|(p, a)| world.is_up(*p) && a.instance().is_some())
        .filter_map(|(p, _)| Some((p, world.disk(p)?)))
}

/// Live instances holding a copy of `table`.
pub fn live_copies(world: &World<EngineNode>, table: &str) -> usize {
    live_disks(world).filter(|(_, d)| d.replicas.contains_key(table)).count()
}

/// Current data replicas of `table` on live hosts, as recorded by its
/// active table manager. Without a live manager, the live copies.
pub fn repl_factor(world: &World<EngineNode>, table: &str) -> usize {
    let tm = live_instances(world).find_map(|i| i.tm_state(table));
    match tm {
        Some(state) => state
            .replicas
            .iter()
            .filter(|r| r.current && world.is_up(r.host))
            .filter(|r| world.disk(r.host).is_some_and(|d| d.replicas.contains_key(table)))
            .count(),
        None => live_copies(world, table),
    }
}

/// Meta-state replicas on live hosts: of the system table when `table` is
/// `None`, otherwise of that table's manager.
pub fn meta_repl_factor(world: &World<EngineNode>, table: Option<&str>) -> usize {
    let holders: Option<Vec<ProcessId>> = match table {
        None => live_instances(world).find_map(|i| i.system_table_state()).map(|s| s.holders.clone()),
        Some(t) => live_instances(world).find_map(|i| i.tm_state(t)).map(|s| s.holders.clone()),
    };
    let has_copy = |d: &NodeDisk| match table {
        None => d.st_state.is_some(),
        Some(t) => d.tm_states.contains_key(t),
    };
    match holders {
        Some(h) => h
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|p| world.is_up(*p) && world.disk(*p).is_some_and(has_copy))
            .count(),
        None => live_disks(world).filter(|(_, d)| has_copy(d)).count(),
    }
}

/// Whether every current replica of `table` not in the middle of a
/// transaction holds the same rows.
pub fn replica_agreement(world: &World<EngineNode>, table: &str) -> bool {
    let Some(state) = live_instances(world).find_map(|i| i.tm_state(table)) else { return true };
    let mut seen: Option<Vec<Row>> = None;
    for r in state.replicas.iter().filter(|r| r.current && world.is_up(r.host)) {
        let Some(d) = world.disk(r.host) else { continue };
        let busy = d.pending.values().any(|ws| ws.iter().any(|w| w.table == table));
        let Some(rep) = d.replicas.get(table).filter(|_| !busy) else { continue };
        let mut rows = rep.store.rows.clone();
        rows.sort();
        match &seen {
            None => seen = Some(rows),
            Some(s) if *s != rows => return false,
            Some(_) => {}
        }
    }
    true
}

/// A cycle in the wait-for graph across all live lock tables, if any.
pub fn wait_for_cycle(world: &World<EngineNode>) -> Option<Vec<TxnId>> {
    let mut edges: BTreeMap<TxnId, BTreeSet<TxnId>> = BTreeMap::new();
    for i in live_instances(world) {
        for (_, locks) in i.lock_tables() {
            for (waiter, _) in &locks.waiting {
                edges.entry(*waiter).or_default().extend(locks.blockers(*waiter).into_iter().filter(|b| b != waiter));
            }
        }
    }
    find_cycle(&edges)
}

fn find_cycle(edges: &BTreeMap<TxnId, BTreeSet<TxnId>>) -> Option<Vec<TxnId>> {
    // 0 = unvisited, 1 = on the stack, 2 = done.
    fn visit(
        n: TxnId,
        edges: &BTreeMap<TxnId, BTreeSet<TxnId>>,
        mark: &mut BTreeMap<TxnId, u8>,
        stack: &mut Vec<TxnId>,
    ) -> Option<Vec<TxnId>> {
        mark.insert(n, 1);
        stack.push(n);
        for &m in edges.get(&n).into_iter().flatten() {
            match mark.get(&m).copied().unwrap_or(0) {
                1 => {
                    let at = stack.iter().position(|x| *x == m).expect("on stack");
                    return Some(stack[at..].to_vec());
                }
                0 => {
                    if let Some(c) = visit(m, edges, mark, stack) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        stack.pop();
        mark.insert(n, 2);
        None
    }
    let mut mark = BTreeMap::new();
    for &n in edges.keys() {
        if mark.get(&n).copied().unwrap_or(0) == 0 {
            if let Some(c) = visit(n, edges, &mut mark, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// One line of a persisted meta-state file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetaLine {
    Tm { table: String, active: InstanceRef, replicas: Vec<InstanceRef> },
    St { active: InstanceRef, replicas: Vec<InstanceRef> },
}

fn csv(refs: &[InstanceRef]) -> String {
    refs.iter().map(render_uri).collect::<Vec<_>>().join(",")
}

fn refs(ps: &[ProcessId]) -> Vec<InstanceRef> {
    ps.iter().copied().map(super::instance_ref).collect()
}

/// The meta-state held on one disk, one line per table manager state and
/// one for the system table state.
pub fn render_meta_state(disk: &NodeDisk) -> String {
    let mut lines = Vec::new();
    if let Some(st) = &disk.st_state {
        if let Some(active) = st.holders.first() {
            lines.push(MetaLine::St { active: super::instance_ref(*active), replicas: refs(&st.holders) });
        }
    }
    for (table, tm) in &disk.tm_states {
        let replicas: Vec<ProcessId> = tm.replicas.iter().map(|r| r.host).collect();
        lines.push(MetaLine::Tm { table: table.clone(), active: super::instance_ref(tm.tm), replicas: refs(&replicas) });
    }
    lines.iter().map(|l| render_meta_line(l) + "\n").collect()
}

pub fn render_meta_line(line: &MetaLine) -> String {
    match line {
        MetaLine::Tm { table, active, replicas } => format!("TM\t{table}\t{}\t{}", render_uri(active), csv(replicas)),
        MetaLine::St { active, replicas } => format!("ST\t{}\t{}", render_uri(active), csv(replicas)),
    }
}

pub fn parse_meta_state(text: &str) -> Result<Vec<MetaLine>, ModelError> {
    let bad = |l: &str| ModelError::MalformedUri(format!("bad meta-state line: {l}"));
    let list = |s: &str| -> Result<Vec<InstanceRef>, ModelError> {
        s.split(',').filter(|x| !x.is_empty()).map(parse_uri).collect()
    };
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        match f.as_slice() {
            ["TM", table, active, replicas] => out.push(MetaLine::Tm {
                table: table.to_string(),
                active: parse_uri(active)?,
                replicas: list(replicas)?,
            }),
            ["ST", active, replicas] => out.push(MetaLine::St { active: parse_uri(active)?, replicas: list(replicas)? }),
            _ => return Err(bad(line)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_detection() {
        let mut e: BTreeMap<TxnId, BTreeSet<TxnId>> = BTreeMap::new();
        e.entry(1).or_default().insert(2);
        e.entry(2).or_default().insert(3);
        assert_eq!(find_cycle(&e), None);
        e.entry(3).or_default().insert(1);
        let c = find_cycle(&e).expect("cycle");
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn meta_lines_round_trip() {
        let a = super::super::instance_ref(ProcessId(1));
        let b = super::super::instance_ref(ProcessId(2));
        let lines = vec![
            MetaLine::St { active: a.clone(), replicas: vec![a.clone(), b.clone()] },
            MetaLine::Tm { table: "t".into(), active: b.clone(), replicas: vec![b, a] },
        ];
        let text: String = lines.iter().map(|l| render_meta_line(l) + "\n").collect();
        assert_eq!(parse_meta_state(&text).unwrap(), lines);
    }
}
