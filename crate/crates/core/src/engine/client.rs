//! The transaction client of an instance: runs one-shot statement lists
//! and looping workloads as sessions. Data transactions lock every table
//! up front in name order, execute against the granted replicas and
//! commit through the configured protocol.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::*;
use crate::commit::{Coordinator, Decision};
use crate::statements::LoopState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Job {
    /// Run once, in order. Transient failures are retried until `patience`
    /// runs out.
    Statements { stmts: Vec<Statement>, patience: Time },
    /// Loop the body until `duration` has passed.
    Workload { body: Vec<Statement>, duration: Time, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobOutcome {
    Done(Vec<StmtResult>),
    Failed(EngineError),
}

/// A committed transaction, for replay against a serial oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnRecord {
    pub txn: TxnId,
    pub at: Time,
    pub stmts: Vec<Statement>,
    pub results: Vec<StmtResult>,
}

/// Progress of a looping workload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadRun {
    pub started: Time,
    pub until: Time,
    /// Completion time of every counted transaction.
    pub commits: Vec<Time>,
    pub failures: u64,
}

#[derive(Debug, Clone)]
enum Unit {
    Data(Vec<Statement>),
    Ddl(Statement),
    Sleep(Time),
}


#[derive(Debug)]
struct Grant {
    tm: ProcessId,
    exclusive: bool,
    sync: Vec<ProcessId>,
    lazy: Vec<ProcessId>,
    read_from: Option<ProcessId>,
    version: u64,
}

#[derive(Debug)]
struct TxnRun {
    txn: TxnId,
    stmts: Vec<Statement>,
    tables: Vec<(String, bool)>,
    grants: BTreeMap<String, Grant>,
    /// Statement groups on one table, in order.
    groups: VecDeque<(String, Vec<Statement>)>,
    /// Replicas still to run the current group.
    targets: VecDeque<ProcessId>,
    group_results: Option<Vec<StmtResult>>,
    results: Vec<StmtResult>,
    touched: BTreeSet<ProcessId>,
    wrote: bool,
    coordinator: Option<Coordinator>,
}

#[derive(Debug)]
enum Attempt {
    Txn(Box<TxnRun>),
    Ddl,
    /// Waiting for a new table to reach its replication factor.
    Replicating(String),
}

#[derive(Debug)]
struct Session {
    body: Vec<Statement>,
    looping: bool,
    pos: usize,
    loop_state: LoopState,
    autocommit: bool,
    buffered: Vec<Statement>,
    unit: Option<Unit>,
    attempt: Option<Attempt>,
    /// Bumped on every attempt so stale replies are dropped.
    epoch: u64,
    deadline: Time,
    results: Vec<StmtResult>,
    parked: bool,
}

#[derive(Debug, Clone)]
pub(super) struct ClientCont {
    session: u64,
    epoch: u64,
    step: Step,
}

#[derive(Debug, Clone)]
enum Step {
    Lookup(String),
    Lock(String),
    Exec(String, ProcessId),
    Ddl,
    HandOver(String),
}

#[derive(Debug, Default)]
pub struct Client {
    sessions: BTreeMap<u64, Session>,
    pub outcomes: BTreeMap<u64, JobOutcome>,
    pub workloads: BTreeMap<u64, WorkloadRun>,
    pub history: Vec<TxnRecord>,
    pub paused: bool,
    tm_cache: BTreeMap<String, ProcessId>,
    txns: BTreeMap<TxnId, u64>,
    next_job: u64,
    next_txn: u64,
    /// Sessions waiting for the system table to be found again.
    st_waiters: Vec<u64>,
}

/// Short delay between checks on a table still being replicated.
const POLL: Time = 5_000;

fn transient(e: &EngineError) -> bool {
    !matches!(e, EngineError::DuplicateTable(_) | EngineError::NoSuchTable(_) | EngineError::Sql(_))
}

impl Instance {
    pub fn submit(&mut self, ctx: &mut Cx, job: Job) -> u64 {
        let now = ctx.now();
        self.client.next_job += 1;
        let id = self.client.next_job;
        let (body, looping, deadline, seed) = match job {
            Job::Statements { stmts, patience } => (stmts, false, now + patience, id),
            Job::Workload { body, duration, seed } => {
                let run = WorkloadRun { started: now, until: now + duration, commits: Vec::new(), failures: 0 };
                self.client.workloads.insert(id, run);
                (body, true, now + duration, seed)
            }
        };
        let mut loop_state = LoopState::new(seed);
        loop_state.iteration = 1;
        self.client.sessions.insert(
            id,
            Session {
                body,
                looping,
                pos: 0,
                loop_state,
                autocommit: true,
                buffered: Vec::new(),
                unit: None,
                attempt: None,
                epoch: 0,
                deadline,
                results: Vec::new(),
                parked: false,
            },
        );
        self.session_next(ctx, id);
        id
    }

    pub fn job_outcome(&self, job: u64) -> Option<&JobOutcome> {
        self.client.outcomes.get(&job)
    }

    pub fn workload(&self, job: u64) -> Option<&WorkloadRun> {
        self.client.workloads.get(&job)
    }

    /// Hold or release the workload sessions between transactions.
    pub fn set_paused(&mut self, ctx: &mut Cx, paused: bool) {
        self.client.paused = paused;
        if paused {
            return;
        }
        let parked: Vec<u64> =
            self.client.sessions.iter().filter(|(_, s)| s.parked).map(|(id, _)| *id).collect();
        for id in parked {
            self.client.sessions.get_mut(&id).expect("session").parked = false;
            self.session_next(ctx, id);
        }
    }

    fn session_end(&mut self, sid: u64, outcome: JobOutcome) {
        self.client.sessions.remove(&sid);
        self.client.outcomes.insert(sid, outcome);
    }

    /// Take the next unit from the statement list.
    fn take_unit(s: &mut Session) -> Result<Option<Unit>, EngineError> {
        loop {
            if s.pos == s.body.len() {
                if s.looping {
                    s.pos = 0;
                    s.loop_state.iteration += 1;
                } else if !s.buffered.is_empty() {
                    return Ok(Some(Unit::Data(std::mem::take(&mut s.buffered))));
                } else {
                    return Ok(None);
                }
                if s.body.is_empty() {
                    return Ok(None);
                }
            }
            let stmt = s.body[s.pos].expand(&mut s.loop_state).map_err(|e| EngineError::Sql(e.to_string()))?;
            s.pos += 1;
            match stmt {
                Statement::SetAutocommit { on } => {
                    s.autocommit = on;
                    if on && !s.buffered.is_empty() {
                        return Ok(Some(Unit::Data(std::mem::take(&mut s.buffered))));
                    }
                }
                Statement::Commit => {
                    if !s.buffered.is_empty() {
                        return Ok(Some(Unit::Data(std::mem::take(&mut s.buffered))));
                    }
                }
                Statement::Sleep { millis } => return Ok(Some(Unit::Sleep(ms(millis)))),
                st if st.table().is_some() => {
                    if s.autocommit {
                        return Ok(Some(Unit::Data(vec![st])));
                    }
                    s.buffered.push(st);
                }
                st => return Ok(Some(Unit::Ddl(st))),
            }
        }
    }

    fn session_next(&mut self, ctx: &mut Cx, sid: u64) {
        let now = ctx.now();
        let paused = self.client.paused;
        let Some(s) = self.client.sessions.get_mut(&sid) else { return };
        s.unit = None;
        s.attempt = None;
        if s.looping {
            if now >= s.deadline {
                let results = std::mem::take(&mut s.results);
                return self.session_end(sid, JobOutcome::Done(results));
            }
            if paused {
                s.parked = true;
                return;
            }
        }
        match Self::take_unit(s) {
            Err(e) => self.session_end(sid, JobOutcome::Failed(e)),
            Ok(None) => {
                let results = std::mem::take(&mut s.results);
                self.session_end(sid, JobOutcome::Done(results));
            }
            Ok(Some(Unit::Sleep(d))) => {
                s.epoch += 1;
                ctx.set_timer(d, EngineMsg::Timer(Timer::Client(sid)));
            }
            Ok(Some(unit)) => {
                s.unit = Some(unit);
                // Looping sessions pay a client-side cost per unit, so a
                // client working only against local state still advances
                // the clock.
                if s.looping && self.cfg.unit_cost > 0 {
                    s.epoch += 1;
                    ctx.set_timer(self.cfg.unit_cost, EngineMsg::Timer(Timer::Client(sid)));
                } else {
                    self.session_attempt(ctx, sid);
                }
            }
        }
    }

    /// Start (or restart) the current unit.
    fn session_attempt(&mut self, ctx: &mut Cx, sid: u64) {
        let Some(s) = self.client.sessions.get_mut(&sid) else { return };
        s.epoch += 1;
        let epoch = s.epoch;
        let Some(unit) = s.unit.clone() else { return self.session_next(ctx, sid) };
        match unit {
            Unit::Sleep(_) => unreachable!("sleeps are not attempted"),
            Unit::Data(stmts) => {
                self.client.next_txn += 1;
                let txn = ((self.id.0 as u64) << 40) | self.client.next_txn;
                let mut tables: BTreeMap<String, bool> = BTreeMap::new();
                for st in &stmts {
                    let x = tables.entry(st.table().expect("data statement").to_string()).or_default();
                    *x |= st.is_write();
                }
                let mut groups: VecDeque<(String, Vec<Statement>)> = VecDeque::new();
                for st in &stmts {
                    let t = st.table().expect("data statement");
                    match groups.back_mut() {
                        Some((g, v)) if g == t => v.push(st.clone()),
                        _ => groups.push_back((t.to_string(), vec![st.clone()])),
                    }
                }
                let run = TxnRun {
                    txn,
                    stmts,
                    tables: tables.into_iter().collect(),
                    grants: BTreeMap::new(),
                    groups,
                    targets: VecDeque::new(),
                    group_results: None,
                    results: Vec::new(),
                    touched: BTreeSet::new(),
                    wrote: false,
                    coordinator: None,
                };
                self.client.txns.insert(txn, sid);
                let s = self.client.sessions.get_mut(&sid).expect("session");
                s.attempt = Some(Attempt::Txn(Box::new(run)));
                self.txn_lock_next(ctx, sid, epoch);
            }
            Unit::Ddl(stmt) => {
                s.attempt = Some(Attempt::Ddl);
                self.ddl_start(ctx, sid, epoch, stmt);
            }
        }
    }

    fn cont(sid: u64, epoch: u64, step: Step) -> Cont {
        Cont::Client(ClientCont { session: sid, epoch, step })
    }

    fn st_call_for(&mut self, ctx: &mut Cx, sid: u64, epoch: u64, call: Call, step: Step) {
        match self.st_at {
            Some(st) => {
                self.call(ctx, st, call, Self::cont(sid, epoch, step));
            }
            None => self.session_failed(ctx, sid, EngineError::NoSystemTable, None),
        }
    }

    fn txn_mut(&mut self, sid: u64) -> Option<&mut TxnRun> {
        match self.client.sessions.get_mut(&sid)?.attempt.as_mut()? {
            Attempt::Txn(t) => Some(t),
            _ => None,
        }
    }

    // -----------------------------------------------------------------
    // Data transactions
    // -----------------------------------------------------------------

    fn txn_lock_next(&mut self, ctx: &mut Cx, sid: u64, epoch: u64) {
        let cached = self.client.tm_cache.clone();
        let t = self.txn_mut(sid).expect("txn");
        let next = t.tables.iter().find(|(name, _)| !t.grants.contains_key(name)).cloned();
        let Some((table, exclusive)) = next else { return self.txn_exec_next(ctx, sid, epoch) };
        let txn = t.txn;
        match cached.get(&table) {
            Some(&tm) => {
                t.touched.insert(tm);
                let call = Call::Lock { txn, table: table.clone(), exclusive };
                self.call(ctx, tm, call, Self::cont(sid, epoch, Step::Lock(table)));
            }
            None => {
                let call = Call::Lookup { table: table.clone() };
                self.st_call_for(ctx, sid, epoch, call, Step::Lookup(table));
            }
        }
    }

    fn txn_exec_next(&mut self, ctx: &mut Cx, sid: u64, epoch: u64) {
        let me = self.id;
        let t = self.txn_mut(sid).expect("txn");
        if let Some(host) = t.targets.front().copied() {
            let (table, stmts) = t.groups.front().cloned().expect("group");
            t.touched.insert(host);
            let call = Call::Exec { txn: t.txn, table: table.clone(), stmts };
            self.call(ctx, host, call, Self::cont(sid, epoch, Step::Exec(table, host)));
            return;
        }
        if let Some(results) = t.group_results.take() {
            t.groups.pop_front();
            t.results.extend(results);
        }
        let Some((table, stmts)) = t.groups.front() else { return self.txn_commit(ctx, sid) };
        let g = &t.grants[table];
        let write = stmts.iter().any(|s| s.is_write());
        let targets: Vec<ProcessId> = if write {
            t.wrote = true;
            g.sync.clone()
        } else if g.exclusive {
            // Read this transaction's own writes.
            g.sync.first().copied().into_iter().collect()
        } else {
            g.read_from.or_else(|| g.sync.first().copied()).into_iter().collect()
        };
        if targets.is_empty() {
            let table = table.clone();
            return self.session_failed(ctx, sid, EngineError::NoCurrentReplica(table), None);
        }
        // Local replica first; the rest in order.
        let mut targets: VecDeque<ProcessId> = targets.into();
        if let Some(i) = targets.iter().position(|h| *h == me) {
            let local = targets.remove(i).expect("index");
            targets.push_front(local);
        }
        t.targets = targets;
        self.txn_exec_next(ctx, sid, epoch)
    }

    fn txn_commit(&mut self, ctx: &mut Cx, sid: u64) {
        let protocol = self.cfg.protocol;
        let now = ctx.now();
        let t = self.txn_mut(sid).expect("txn");
        let participants: Vec<ProcessId> = t.touched.iter().copied().collect();
        let txn = t.txn;
        if !t.wrote {
            for p in participants {
                ctx.send(p, EngineMsg::Commit(CommitMsg::Commit { txn }));
            }
            return self.txn_finished(ctx, sid, now);
        }
        let mut c = Coordinator::new(txn, protocol, participants, None);
        let out = c.start();
        t.coordinator = Some(c);
        for (to, m) in out {
            ctx.send(to, EngineMsg::Commit(m));
        }
        let wait = 2 * self.cfg.rpc_timeout + self.cfg.flush_cost;
        ctx.set_timer(wait, EngineMsg::Timer(Timer::CommitTimeout(txn)));
    }

    pub(super) fn client_commit_msg(&mut self, ctx: &mut Cx, from: ProcessId, msg: CommitMsg) {
        let txn = msg.txn();
        let Some(&sid) = self.client.txns.get(&txn) else { return };
        let Some(t) = self.txn_mut(sid) else { return };
        let Some(c) = t.coordinator.as_mut() else { return };
        let out = c.on_message(from, msg);
        self.commit_outbox(ctx, sid, out);
    }

    pub(super) fn client_commit_timeout(&mut self, ctx: &mut Cx, txn: TxnId) {
        let Some(&sid) = self.client.txns.get(&txn) else { return };
        let Some(t) = self.txn_mut(sid) else { return };
        if t.txn != txn {
            return;
        }
        let Some(c) = t.coordinator.as_mut() else { return };
        let out = c.on_timeout();
        self.commit_outbox(ctx, sid, out);
    }

    fn commit_outbox(&mut self, ctx: &mut Cx, sid: u64, out: Vec<(ProcessId, CommitMsg)>) {
        for (to, m) in out {
            ctx.send(to, EngineMsg::Commit(m));
        }
        let now = ctx.now();
        let Some(t) = self.txn_mut(sid) else { return };
        match t.coordinator.as_ref().and_then(|c| c.decision()) {
            Some(Decision::Commit) => {
                // Writes the table managers left out reach the lazy
                // replicas after the fact.
                let txn = t.txn;
                let mut lazy = Vec::new();
                for (table, g) in &t.grants {
                    if !g.exclusive || g.lazy.is_empty() {
                        continue;
                    }
                    let stmts: Vec<Statement> =
                        t.stmts.iter().filter(|s| s.is_write() && s.table() == Some(table)).cloned().collect();
                    for h in &g.lazy {
                        let call = Call::AsyncApply { table: table.clone(), version: g.version + 1, stmts: stmts.clone(), tm: g.tm };
                        lazy.push((*h, call));
                    }
                }
                let _ = txn;
                for (h, call) in lazy {
                    self.call(ctx, h, call, Cont::Ignore);
                }
                self.txn_finished(ctx, sid, now);
            }
            Some(Decision::Abort) => {
                let t = self.txn_mut(sid).expect("txn");
                t.coordinator = None;
                self.session_failed(ctx, sid, EngineError::Aborted, None);
            }
            None => {}
        }
    }

    fn txn_finished(&mut self, ctx: &mut Cx, sid: u64, now: Time) {
        let record = self.cfg.record_history;
        let s = self.client.sessions.get_mut(&sid).expect("session");
        let Some(Attempt::Txn(t)) = s.attempt.take() else { return };
        self.client.txns.remove(&t.txn);
        if record {
            self.client.history.push(TxnRecord { txn: t.txn, at: now, stmts: t.stmts, results: t.results.clone() });
        }
        let s = self.client.sessions.get_mut(&sid).expect("session");
        if !s.looping {
            s.results.extend(t.results);
        }
        self.unit_done(ctx, sid);
    }

    fn unit_done(&mut self, ctx: &mut Cx, sid: u64) {
        let now = ctx.now();
        if let Some(run) = self.client.workloads.get_mut(&sid) {
            if now < run.until {
                run.commits.push(now);
            }
        }
        self.session_next(ctx, sid);
    }

    /// Give up the current attempt: release what it holds, repair what the
    /// failure revealed, and retry after a pause unless the error is final.
    fn session_failed(&mut self, ctx: &mut Cx, sid: u64, err: EngineError, step: Option<Step>) {
        let now = ctx.now();
        let Some(s) = self.client.sessions.get_mut(&sid) else { return };
        s.epoch += 1;
        if let Some(Attempt::Txn(t)) = s.attempt.take() {
            let txn = t.txn;
            self.client.txns.remove(&txn);
            let decided = t.coordinator.as_ref().is_some_and(|c| c.decision().is_some());
            if !decided {
                for p in &t.touched {
                    ctx.send(*p, EngineMsg::Commit(CommitMsg::Abort { txn }));
                }
            }
        }
        if let Some(run) = self.client.workloads.get_mut(&sid) {
            run.failures += 1;
        }
        let mut needs_st = false;
        match (&err, step) {
            (EngineError::NotSystemTable(Some(st)), _) => self.st_at = Some(*st),
            (EngineError::NotSystemTable(None) | EngineError::NoSystemTable, _) => needs_st = true,
            (EngineError::Timeout(h), Some(Step::Lookup(_) | Step::Ddl)) if Some(*h) == self.st_at => needs_st = true,
            (EngineError::Timeout(tm), Some(Step::Lock(table) | Step::HandOver(table))) => {
                self.client.tm_cache.remove(&table);
                if let Some(st) = self.st_at {
                    self.call(ctx, st, Call::TmFailed { table, tm: *tm }, Cont::Ignore);
                }
            }
            (EngineError::NotTableManager(_), Some(Step::Lock(table) | Step::HandOver(table))) => {
                self.client.tm_cache.remove(&table);
            }
            (EngineError::Timeout(_) | EngineError::NoReplica(_), Some(Step::Exec(table, host))) => {
                match self.client.tm_cache.get(&table).copied() {
                    Some(tm) => {
                        self.call(ctx, tm, Call::ReplicaFailed { table, host }, Cont::Ignore);
                    }
                    None => self.report_suspect(ctx, host),
                }
            }
            (EngineError::NoSuchTable(table), _) => {
                self.client.tm_cache.remove(table);
            }
            _ => {}
        }
        let s = self.client.sessions.get_mut(&sid).expect("session");
        if !transient(&err) && !s.looping {
            return self.session_end(sid, JobOutcome::Failed(err));
        }
        if now >= s.deadline {
            if s.looping {
                return self.session_next(ctx, sid);
            }
            return self.session_end(sid, JobOutcome::Failed(err));
        }
        if needs_st {
            self.client.st_waiters.push(sid);
            if self.boot.is_none() {
                let dead = self.st_at.filter(|st| *st != self.id);
                self.begin_boot(ctx, BootPurpose::Recovery, dead);
            }
            return;
        }
        ctx.set_timer(self.cfg.retry_backoff, EngineMsg::Timer(Timer::Client(sid)));
    }

    pub(super) fn client_st_recovered(&mut self, ctx: &mut Cx, r: Result<ProcessId, EngineError>) {
        let now = ctx.now();
        self.note(now, format!("system table recovery: {r:?}"));
        for sid in std::mem::take(&mut self.client.st_waiters) {
            ctx.set_timer(self.cfg.retry_backoff, EngineMsg::Timer(Timer::Client(sid)));
        }
    }

    pub(super) fn client_timer(&mut self, ctx: &mut Cx, sid: u64) {
        let Some(s) = self.client.sessions.get(&sid) else { return };
        match (&s.unit, &s.attempt) {
            (None, _) => self.session_next(ctx, sid),
            (Some(_), Some(Attempt::Replicating(table))) => {
                let table = table.clone();
                let busy = self.managers.get(&table).is_some_and(|m| m.replicating());
                if busy {
                    ctx.set_timer(POLL, EngineMsg::Timer(Timer::Client(sid)));
                } else {
                    self.unit_done(ctx, sid);
                }
            }
            (Some(_), None) => self.session_attempt(ctx, sid),
            (Some(_), Some(_)) => {}
        }
    }

    // -----------------------------------------------------------------
    // Schema and placement statements
    // -----------------------------------------------------------------

    fn ddl_start(&mut self, ctx: &mut Cx, sid: u64, epoch: u64, stmt: Statement) {
        match stmt {
            Statement::CreateTable { if_not_exists, schema } => {
                self.st_call_for(ctx, sid, epoch, Call::CreateTable { schema, if_not_exists }, Step::Ddl)
            }
            Statement::DropTable { if_exists, name } => {
                self.client.tm_cache.remove(&name);
                self.st_call_for(ctx, sid, epoch, Call::DropTable { name, if_exists }, Step::Ddl)
            }
            Statement::MigrateSystemTable { no_replicate } => {
                if self.is_system_table() {
                    return self.unit_done(ctx, sid);
                }
                self.st_call_for(ctx, sid, epoch, Call::MigrateSt { no_replicate }, Step::Ddl)
            }
            Statement::MigrateTableManager { table } => {
                if self.managers.contains_key(&table) {
                    return self.unit_done(ctx, sid);
                }
                self.client.tm_cache.remove(&table);
                self.st_call_for(ctx, sid, epoch, Call::Lookup { table: table.clone() }, Step::HandOver(table))
            }
            other => self.session_failed(ctx, sid, EngineError::Sql(format!("unsupported: {other}")), None),
        }
    }

    pub(super) fn client_resume(&mut self, ctx: &mut Cx, c: ClientCont, r: Result<Reply, EngineError>) {
        let ClientCont { session: sid, epoch, step } = c;
        if self.client.sessions.get(&sid).is_none_or(|s| s.epoch != epoch) {
            return;
        }
        let reply = match r {
            Ok(reply) => reply,
            Err(e) => return self.session_failed(ctx, sid, e, Some(step)),
        };
        match (step, reply) {
            (Step::Lookup(table), Reply::Tm(tm)) => {
                self.client.tm_cache.insert(table, tm);
                self.txn_lock_next(ctx, sid, epoch);
            }
            (Step::Lock(table), Reply::Granted { sync, lazy, read_from, version }) => {
                let tm = self.client.tm_cache.get(&table).copied().unwrap_or(self.id);
                let t = self.txn_mut(sid).expect("txn");
                let exclusive = t.tables.iter().any(|(n, x)| *n == table && *x);
                t.grants.insert(table, Grant { tm, exclusive, sync, lazy, read_from, version });
                self.txn_lock_next(ctx, sid, epoch);
            }
            (Step::Exec(_, host), Reply::Results(results)) => {
                let t = self.txn_mut(sid).expect("txn");
                t.targets.retain(|h| *h != host);
                if t.group_results.is_none() {
                    t.group_results = Some(results);
                }
                self.txn_exec_next(ctx, sid, epoch);
            }
            (Step::Ddl, Reply::Created { existed }) => {
                let Some(Some(Unit::Ddl(Statement::CreateTable { schema, .. }))) =
                    self.client.sessions.get(&sid).map(|s| s.unit.clone())
                else {
                    return;
                };
                if existed {
                    return self.unit_done(ctx, sid);
                }
                let table = schema.name.clone();
                self.create_tm_local(ctx, schema);
                self.client.tm_cache.insert(table.clone(), self.id);
                let s = self.client.sessions.get_mut(&sid).expect("session");
                s.attempt = Some(Attempt::Replicating(table));
                self.client_timer(ctx, sid);
            }
            (Step::Ddl, _) => self.unit_done(ctx, sid),
            (Step::HandOver(table), Reply::Tm(tm)) => {
                if tm == self.id {
                    return self.unit_done(ctx, sid);
                }
                self.client.tm_cache.insert(table.clone(), tm);
                let call = Call::HandOverTm { table: table.clone(), to: self.id };
                self.call(ctx, tm, call, Self::cont(sid, epoch, Step::HandOver(table)));
            }
            (Step::HandOver(table), _) => {
                self.client.tm_cache.insert(table, self.id);
                self.unit_done(ctx, sid);
            }
            (step, reply) => {
                let e = EngineError::Sql(format!("unexpected reply {reply:?} at {step:?}"));
                self.session_failed(ctx, sid, e, None);
            }
        }
    }
}
