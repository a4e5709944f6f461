//! The system table: table-manager locations, membership and the
//! placement ranking. Mutating operations run one at a time; each is
//! confirmed against the locators, applied, pushed to the state replicas
//! and only then answered.

use std::collections::{BTreeMap, VecDeque};

use super::*;
use crate::autonomics::{rank_machines, MachineSpec, Metric, RankInput, ResourceSummary};
use crate::locator::{judge_ownership, LocatorError, LocatorRequest, Ownership};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TableEntry {
    pub schema: TableSchema,
    pub tm: ProcessId,
    pub tm_holders: Vec<ProcessId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Member {
    pub eligible: bool,
    pub alive: bool,
}

/// Replicated system-table state. `holders[0]` is the active site.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct StState {
    pub tables: BTreeMap<String, TableEntry>,
    pub members: BTreeMap<ProcessId, Member>,
    pub holders: Vec<ProcessId>,
}

impl StState {
    pub fn new(holders: Vec<ProcessId>) -> Self {
        StState { tables: BTreeMap::new(), members: BTreeMap::new(), holders }
    }

    pub fn alive(&self) -> Vec<ProcessId> {
        self.members.iter().filter(|(_, m)| m.alive).map(|(p, _)| *p).collect()
    }
}

#[derive(Debug, Clone)]
pub(super) enum StOp {
    Register { host: ProcessId },
    Create { schema: TableSchema, if_not_exists: bool, requester: ProcessId },
    Drop { name: String, if_exists: bool },
    TmFailed { table: String, tm: ProcessId },
    Suspect { host: ProcessId },
    HostDown { host: ProcessId },
    Migrate { target: ProcessId, no_replicate: bool },
    TmMoved { table: String, to: ProcessId, holders: Vec<ProcessId> },
    TmHolders { table: String, holders: Vec<ProcessId> },
    TopUp,
}

#[derive(Debug, Clone)]
enum Task {
    /// Ping a suspect; if it is dead, run the host-down steps.
    Probe(ProcessId),
    StartTm { table: String, candidates: Vec<ProcessId>, dead: Vec<ProcessId> },
    TopUp { candidates: Vec<ProcessId> },
    Adopt { target: ProcessId, no_replicate: bool },
    Push,
    Locators,
}

/// How to answer once the operation is done.
#[derive(Debug, Clone)]
enum Answer {
    Fixed(Result<Reply, EngineError>),
    TmOf(String),
}

#[derive(Debug)]
struct StJob {
    reply: Option<CallRef>,
    op: StOp,
}

#[derive(Debug)]
struct StWork {
    reply: Option<CallRef>,
    answer: Answer,
    tasks: VecDeque<Task>,
    pushes: usize,
}

#[derive(Debug, Clone)]
pub(super) enum StCont {
    Probe(ProcessId),
    StartTm,
    TopUp(ProcessId),
    /// Target, and whether this host stays a state holder.
    Adopt(ProcessId, bool),
    Push(ProcessId),
}

pub struct SystemTable {
    pub state: StState,
    pub active: bool,
    queue: VecDeque<StJob>,
    work: Option<StWork>,
    quiet_until: Time,
    quiet_timer: bool,
    /// Replica list last written to the locators.
    registered: Vec<ProcessId>,
}

impl SystemTable {
    pub(super) fn fresh(me: ProcessId, holders: Vec<ProcessId>) -> Self {
        let mut state = StState::new(holders.clone());
        state.members.insert(me, Member { eligible: false, alive: true });
        SystemTable::with(state, 0, holders)
    }

    /// Rebuilt from persisted state; serves no mutation before the quiet
    /// period ends, so any deposed predecessor has stopped committing.
    pub(super) fn resume(state: StState, quiet_until: Time) -> Self {
        let holders = state.holders.clone();
        SystemTable::with(state, quiet_until, holders)
    }

    fn with(state: StState, quiet_until: Time, registered: Vec<ProcessId>) -> Self {
        SystemTable {
            state,
            active: true,
            queue: VecDeque::new(),
            work: None,
            quiet_until,
            quiet_timer: false,
            registered,
        }
    }
}

fn uris(hosts: &[ProcessId]) -> Vec<InstanceRef> {
    hosts.iter().copied().map(instance_ref).collect()
}

impl Instance {
    fn st_mut(&mut self) -> &mut SystemTable {
        self.system_table.as_mut().expect("system table")
    }

    fn st_state_mut(&mut self) -> &mut StState {
        &mut self.st_mut().state
    }

    pub(super) fn st_call(&mut self, ctx: &mut Cx, cref: CallRef, call: Call) {
        if !self.is_system_table() {
            let hint = self.st_at.filter(|s| *s != self.id);
            return self.reply(ctx, cref, Reply::Err(EngineError::NotSystemTable(hint)));
        }
        let from = cref.from;
        let op = match call {
            Call::Lookup { table } => {
                let reply = match self.system_table_state().and_then(|s| s.tables.get(&table)) {
                    Some(e) => Reply::Tm(e.tm),
                    None => Reply::Err(EngineError::NoSuchTable(table)),
                };
                return self.reply(ctx, cref, reply);
            }
            Call::Ranking => {
                let reply = self.ranking();
                return self.reply(ctx, cref, reply);
            }
            Call::Register => StOp::Register { host: from },
            Call::CreateTable { schema, if_not_exists } => StOp::Create { schema, if_not_exists, requester: from },
            Call::DropTable { name, if_exists } => StOp::Drop { name, if_exists },
            Call::TmFailed { table, tm } => StOp::TmFailed { table, tm },
            Call::Suspect { host } => StOp::Suspect { host },
            Call::MigrateSt { no_replicate } => {
                self.reply(ctx, cref, Reply::Accepted);
                StOp::Migrate { target: from, no_replicate }
            }
            Call::TmMoved { table, to, holders } => StOp::TmMoved { table, to, holders },
            Call::TmHolders { table, holders } => StOp::TmHolders { table, holders },
            _ => unreachable!("not a system-table call"),
        };
        self.st_mut().queue.push_back(StJob { reply: Some(cref), op });
        self.st_pump(ctx);
        // Still queued behind other work: keep the caller from timing out.
        if self.system_table.as_ref().is_some_and(|st| st.queue.iter().any(|j| j.reply == Some(cref))) {
            self.reply(ctx, cref, Reply::Accepted);
        }
    }

    /// Eligible live members, best first, and every live member.
    fn ranking(&self) -> Reply {
        let Some(state) = self.system_table_state() else {
            return Reply::Err(EngineError::NotSystemTable(None));
        };
        let inputs: Vec<RankInput> = state
            .members
            .iter()
            .filter(|(p, m)| m.alive && m.eligible && self.cfg.eligible(**p))
            .map(|(p, _)| {
                let u = self.cfg.utilization.get(p).copied().unwrap_or([200, 200, 200]);
                RankInput {
                    instance: instance_ref(*p),
                    spec: MachineSpec::default(),
                    summary: ResourceSummary::uniform(
                        u[0] as f64 / 1000.0,
                        u[1] as f64 / 1000.0,
                        u[2] as f64 / 1000.0,
                    ),
                }
            })
            .collect();
        let ranked = rank_machines(&inputs, &Metric::default())
            .into_iter()
            .filter_map(|(r, score)| Some((instance_pid(&r)?, (score * 1000.0).round() as u32)))
            .collect();
        Reply::Ranked { ranked, alive: state.alive() }
    }

    /// Periodic: top up state replicas when short.
    pub(super) fn st_tick(&mut self, ctx: &mut Cx) {
        let Some(st) = self.system_table.as_mut().filter(|s| s.active) else { return };
        if st.work.is_none() && st.queue.is_empty() && st.state.holders.len() < self.cfg.st_replication {
            st.queue.push_back(StJob { reply: None, op: StOp::TopUp });
            self.st_pump(ctx);
        }
    }

    pub(super) fn st_pump(&mut self, ctx: &mut Cx) {
        let now = ctx.now();
        let Some(st) = self.system_table.as_mut().filter(|s| s.active) else { return };
        if st.work.is_some() || st.queue.is_empty() {
            return;
        }
        if now < st.quiet_until {
            if !st.quiet_timer {
                st.quiet_timer = true;
                ctx.set_timer(st.quiet_until - now, EngineMsg::Timer(Timer::StQuiet));
            }
            return;
        }
        st.quiet_timer = false;
        let job = st.queue.pop_front().expect("job");
        st.work = Some(StWork {
            reply: job.reply,
            answer: Answer::Fixed(Ok(Reply::Ok)),
            tasks: VecDeque::new(),
            pushes: 0,
        });
        // The op waits in the work slot until ownership is confirmed.
        self.st_pending_op = Some(job.op);
        match self.cfg.ownership {
            OwnershipMode::Unchecked => self.st_apply(ctx),
            _ => self.start_quorum(ctx, QuorumCall::read(self.cfg.locators), QuorumPurpose::Confirm { started: now }),
        }
    }

    pub(super) fn st_confirmed(&mut self, ctx: &mut Cx, started: Time, r: Result<QuorumResult, LocatorError>) {
        let elapsed = ctx.now() - started;
        match judge_ownership(&self.uri, &r, elapsed, self.cfg.confirmation_deadline()) {
            Ownership::Confirmed => self.st_apply(ctx),
            Ownership::Deposed => {
                let hint = r.ok().and_then(|q| q.registration.active).and_then(|a| instance_pid(&a));
                let now = ctx.now();
                self.note(now, "system table deposed");
                self.st_step_down(ctx, hint);
            }
            Ownership::Unconfirmed => {
                self.st_pending_op = None;
                let work = self.st_mut().work.take().expect("work");
                if let Some(c) = work.reply {
                    self.reply(ctx, c, Reply::Err(EngineError::NoSystemTable));
                }
                self.st_pump(ctx);
            }
        }
    }

    fn st_step_down(&mut self, ctx: &mut Cx, hint: Option<ProcessId>) {
        self.st_pending_op = None;
        let Some(mut st) = self.system_table.take() else { return };
        st.active = false;
        self.st_at = hint;
        let err = Reply::Err(EngineError::NotSystemTable(hint));
        if let Some(c) = st.work.take().and_then(|w| w.reply) {
            self.reply(ctx, c, err.clone());
        }
        for job in st.queue.drain(..) {
            if let Some(c) = job.reply {
                self.reply(ctx, c, err.clone());
            }
        }
    }

    /// Apply the confirmed operation and queue its follow-up tasks.
    fn st_apply(&mut self, ctx: &mut Cx) {
        let op = self.st_pending_op.take().expect("op");
        let me = self.id;
        let mut tasks = VecDeque::new();
        let mut answer = Answer::Fixed(Ok(Reply::Ok));
        let mut changed = true;
        match op {
            StOp::Register { host } => {
                let el = self.cfg.eligible(host);
                let state = self.st_state_mut();
                let rejoin = state.members.contains_key(&host);
                state.members.insert(host, Member { eligible: el, alive: true });
                if rejoin && host != me {
                    // A fresh incarnation holds no trusted copies.
                    state.holders.retain(|h| *h != host);
                    for e in state.tables.values_mut() {
                        e.tm_holders.retain(|h| *h != host);
                    }
                    self.notify_member_left(ctx, host);
                }
                answer = Answer::Fixed(Ok(Reply::Registered));
            }
            StOp::Create { schema, if_not_exists, requester } => {
                let state = self.st_state_mut();
                if state.tables.contains_key(&schema.name) {
                    changed = false;
                    answer = Answer::Fixed(if if_not_exists {
                        Ok(Reply::Created { existed: true })
                    } else {
                        Err(EngineError::DuplicateTable(schema.name.clone()))
                    });
                } else {
                    let name = schema.name.clone();
                    state.tables.insert(name, TableEntry { schema, tm: requester, tm_holders: vec![requester] });
                    answer = Answer::Fixed(Ok(Reply::Created { existed: false }));
                }
            }
            StOp::Drop { name, if_exists } => match self.st_state_mut().tables.remove(&name) {
                Some(e) => {
                    self.call(ctx, e.tm, Call::DropTableLocal { table: name }, Cont::Ignore);
                }
                None => {
                    changed = false;
                    if !if_exists {
                        answer = Answer::Fixed(Err(EngineError::NoSuchTable(name)));
                    }
                }
            },
            StOp::TmFailed { table, tm } => {
                changed = false;
                match self.system_table_state().and_then(|s| s.tables.get(&table)) {
                    None => answer = Answer::Fixed(Err(EngineError::NoSuchTable(table))),
                    Some(e) if e.tm != tm => answer = Answer::Fixed(Ok(Reply::Tm(e.tm))),
                    Some(_) => {
                        answer = Answer::TmOf(table);
                        let known_dead =
                            self.system_table_state().and_then(|s| s.members.get(&tm)).is_some_and(|m| !m.alive);
                        if known_dead {
                            tasks.extend(self.host_down(ctx, tm));
                            changed = true;
                        } else {
                            tasks.push_back(Task::Probe(tm));
                        }
                    }
                }
            }
            StOp::Suspect { host } => {
                changed = false;
                let alive = self.system_table_state().and_then(|s| s.members.get(&host)).is_some_and(|m| m.alive);
                if host != me && alive {
                    tasks.push_back(Task::Probe(host));
                }
            }
            StOp::HostDown { host } => tasks.extend(self.host_down(ctx, host)),
            StOp::Migrate { target, no_replicate } => {
                changed = false;
                if target == me {
                    answer = Answer::Fixed(Ok(Reply::StAt(me)));
                } else {
                    tasks.push_back(Task::Adopt { target, no_replicate });
                }
            }
            StOp::TmMoved { table, to, holders } => {
                if let Some(e) = self.st_state_mut().tables.get_mut(&table) {
                    e.tm = to;
                    e.tm_holders = holders;
                }
            }
            StOp::TmHolders { table, holders } => {
                let e = self.st_state_mut().tables.get_mut(&table);
                match e {
                    Some(e) if e.tm_holders != holders => e.tm_holders = holders,
                    _ => changed = false,
                }
            }
            StOp::TopUp => {
                changed = false;
                tasks.extend(self.top_up_task());
            }
        }
        if changed {
            tasks.push_back(Task::Push);
        }
        let work = self.st_mut().work.as_mut().expect("work");
        work.answer = answer;
        work.tasks = tasks;
        self.st_run(ctx);
    }

    fn top_up_task(&self) -> Option<Task> {
        let state = self.system_table_state()?;
        if state.holders.len() >= self.cfg.st_replication {
            return None;
        }
        let Reply::Ranked { ranked, .. } = self.ranking() else { return None };
        let candidates: Vec<ProcessId> =
            ranked.into_iter().map(|(p, _)| p).filter(|p| !state.holders.contains(p)).collect();
        (!candidates.is_empty()).then_some(Task::TopUp { candidates })
    }

    /// Record a death and return the recovery tasks it needs.
    fn host_down(&mut self, ctx: &mut Cx, host: ProcessId) -> Vec<Task> {
        let now = ctx.now();
        self.note(now, format!("host {} down", host.0));
        self.suspects.insert(host, now + 50 * self.cfg.rpc_timeout);
        let state = self.st_state_mut();
        if let Some(m) = state.members.get_mut(&host) {
            m.alive = false;
        }
        state.holders.retain(|h| *h != host);
        let mut tasks = Vec::new();
        for (name, e) in state.tables.iter_mut() {
            e.tm_holders.retain(|h| *h != host);
            if e.tm == host {
                tasks.push(Task::StartTm { table: name.clone(), candidates: e.tm_holders.clone(), dead: vec![host] });
            }
        }
        self.notify_member_left(ctx, host);
        tasks.extend(self.top_up_task());
        tasks
    }

    fn notify_member_left(&mut self, ctx: &mut Cx, host: ProcessId) {
        let Some(state) = self.system_table_state() else { return };
        let tms: BTreeSet<ProcessId> = state.tables.values().map(|e| e.tm).filter(|t| *t != host).collect();
        for tm in tms {
            self.call(ctx, tm, Call::MemberLeft { host }, Cont::Ignore);
        }
    }

    /// Run queued tasks until one needs to wait for a reply.
    fn st_run(&mut self, ctx: &mut Cx) {
        loop {
            let Some(st) = self.system_table.as_mut() else { return };
            let Some(work) = st.work.as_mut() else { return };
            if work.pushes > 0 {
                return;
            }
            let Some(task) = work.tasks.pop_front() else {
                return self.st_finish(ctx);
            };
            match task {
                Task::Probe(host) => {
                    self.call(ctx, host, Call::Ping, Cont::St(StCont::Probe(host)));
                    return;
                }
                Task::StartTm { table, mut candidates, dead } => {
                    let alive: Vec<ProcessId> = self.system_table_state().map(|s| s.alive()).unwrap_or_default();
                    candidates.retain(|c| alive.contains(c) && !dead.contains(c));
                    if candidates.is_empty() {
                        let now = ctx.now();
                        self.note(now, format!("table manager of {table} unrecoverable"));
                        continue;
                    }
                    let target = candidates[0];
                    let call = Call::StartTm { table: table.clone(), dead: dead.clone() };
                    let work = self.st_mut().work.as_mut().expect("work");
                    work.tasks.push_front(Task::StartTm { table, candidates, dead });
                    self.call(ctx, target, call, Cont::St(StCont::StartTm));
                    return;
                }
                Task::TopUp { mut candidates } => {
                    let state = self.system_table_state().expect("state");
                    if state.holders.len() >= self.cfg.st_replication || candidates.is_empty() {
                        continue;
                    }
                    let target = candidates.remove(0);
                    let mut pushed = state.clone();
                    pushed.holders.push(target);
                    self.st_mut().work.as_mut().expect("work").tasks.push_front(Task::TopUp { candidates });
                    self.call(ctx, target, Call::StReplica { state: pushed, install: true }, Cont::St(StCont::TopUp(target)));
                    return;
                }
                Task::Adopt { target, no_replicate } => {
                    let me = self.id;
                    let mut state = self.system_table_state().expect("state").clone();
                    let keep_me = !no_replicate && self.cfg.eligible(me);
                    let mut holders = vec![target];
                    holders.extend(state.holders.iter().copied().filter(|h| *h != target && (*h != me || keep_me)));
                    holders.truncate(self.cfg.st_replication.max(1));
                    let keep = holders.contains(&me);
                    state.holders = holders;
                    self.call(ctx, target, Call::AdoptSt { state }, Cont::St(StCont::Adopt(target, keep)));
                    return;
                }
                Task::Push => {
                    let me = self.id;
                    let state = self.system_table_state().expect("state").clone();
                    ctx.disk.st_state = Some(state.clone());
                    let targets: Vec<ProcessId> = state.holders.iter().copied().filter(|h| *h != me).collect();
                    self.st_mut().work.as_mut().expect("work").pushes = targets.len();
                    for h in targets {
                        self.call(ctx, h, Call::StReplica { state: state.clone(), install: false }, Cont::St(StCont::Push(h)));
                    }
                    let st = self.st_mut();
                    if st.registered != st.state.holders {
                        self.st_mut().work.as_mut().expect("work").tasks.push_back(Task::Locators);
                    }
                }
                Task::Locators => {
                    self.start_quorum(ctx, QuorumCall::read_all(self.cfg.locators), QuorumPurpose::ReplicasRead);
                    return;
                }
            }
        }
    }

    fn st_finish(&mut self, ctx: &mut Cx) {
        let st = self.st_mut();
        let work = st.work.take().expect("work");
        let reply = match work.answer {
            Answer::Fixed(r) => r,
            Answer::TmOf(table) => match st.state.tables.get(&table) {
                Some(e) if st.state.members.get(&e.tm).is_none_or(|m| m.alive) => Ok(Reply::Tm(e.tm)),
                Some(_) => Err(EngineError::Unrecoverable(table)),
                None => Err(EngineError::NoSuchTable(table)),
            },
        };
        if let Some(c) = work.reply {
            self.reply(ctx, c, reply.unwrap_or_else(Reply::Err));
        }
        self.st_pump(ctx);
    }

    pub(super) fn st_resume(&mut self, ctx: &mut Cx, c: StCont, r: Result<Reply, EngineError>) {
        if self.system_table.as_ref().and_then(|s| s.work.as_ref()).is_none() {
            return;
        }
        match c {
            StCont::Probe(host) => {
                if r.is_err() {
                    let tasks = self.host_down(ctx, host);
                    let work = self.st_mut().work.as_mut().expect("work");
                    for t in tasks.into_iter().rev() {
                        work.tasks.push_front(t);
                    }
                    work.tasks.push_back(Task::Push);
                }
            }
            StCont::StartTm => {
                let Some(Task::StartTm { table, mut candidates, dead }) =
                    self.st_mut().work.as_mut().expect("work").tasks.pop_front()
                else {
                    return;
                };
                let target = candidates.remove(0);
                if r.is_ok() {
                    let now = ctx.now();
                    self.note(now, format!("table manager of {table} recreated on {}", target.0));
                    if let Some(e) = self.st_state_mut().tables.get_mut(&table) {
                        e.tm = target;
                        e.tm_holders.retain(|h| *h != target && !dead.contains(h));
                        e.tm_holders.insert(0, target);
                    }
                } else {
                    let work = self.st_mut().work.as_mut().expect("work");
                    work.tasks.push_front(Task::StartTm { table, candidates, dead });
                }
            }
            StCont::TopUp(target) => {
                if r.is_ok() {
                    let st = self.st_mut();
                    if !st.state.holders.contains(&target) {
                        st.state.holders.push(target);
                    }
                    let work = st.work.as_mut().expect("work");
                    if !work.tasks.iter().any(|t| matches!(t, Task::Push)) {
                        work.tasks.push_back(Task::Push);
                    }
                }
            }
            StCont::Adopt(target, keep) => {
                let work = self.st_mut().work.as_mut().expect("work");
                match r {
                    Ok(_) => {
                        work.answer = Answer::Fixed(Ok(Reply::StAt(target)));
                        work.tasks.clear();
                        let now = ctx.now();
                        self.note(now, format!("system table moved to {}", target.0));
                        let st = self.system_table.take().expect("st");
                        self.st_at = Some(target);
                        if !keep {
                            ctx.disk.st_state = None;
                        }
                        let hint = Reply::Err(EngineError::NotSystemTable(Some(target)));
                        if let Some(c) = st.work.and_then(|w| w.reply) {
                            self.reply(ctx, c, Reply::StAt(target));
                        }
                        for job in st.queue {
                            if let Some(c) = job.reply {
                                self.reply(ctx, c, hint.clone());
                            }
                        }
                        return;
                    }
                    Err(_) => work.answer = Answer::Fixed(Err(EngineError::TargetUnreachable)),
                }
            }
            StCont::Push(host) => {
                let st = self.st_mut();
                let work = st.work.as_mut().expect("work");
                work.pushes = work.pushes.saturating_sub(1);
                if r.is_err() {
                    st.state.holders.retain(|h| *h != host);
                    st.queue.push_back(StJob { reply: None, op: StOp::Suspect { host } });
                    let work = st.work.as_mut().expect("work");
                    if !work.tasks.iter().any(|t| matches!(t, Task::Locators)) {
                        work.tasks.push_back(Task::Locators);
                    }
                }
            }
        }
        self.st_run(ctx);
    }

    pub(super) fn st_replicas_read(&mut self, ctx: &mut Cx, r: Result<QuorumResult, LocatorError>) {
        let Some(st) = self.system_table.as_ref().filter(|s| s.work.is_some()) else { return };
        match r {
            Ok(res) if res.registration.active.as_ref() == Some(&self.uri) => {
                let req = LocatorRequest::SetSystemTableReplicaLocations { replicas: uris(&st.state.holders) };
                let call = QuorumCall::mutate(self.cfg.locators, req, res.update_numbers);
                self.start_quorum(ctx, call, QuorumPurpose::ReplicasWrite);
            }
            _ => self.st_run(ctx),
        }
    }

    pub(super) fn st_replicas_written(&mut self, ctx: &mut Cx, r: Result<QuorumResult, LocatorError>) {
        let Some(st) = self.system_table.as_mut().filter(|s| s.work.is_some()) else { return };
        if r.is_ok() {
            st.registered = st.state.holders.clone();
        }
        self.st_run(ctx);
    }

    // -----------------------------------------------------------------
    // Takeover after a failure, and cooperative migration
    // -----------------------------------------------------------------

    pub(super) fn recreate_st(&mut self, ctx: &mut Cx, failed: ProcessId, waiter: Waiter) {
        if self.is_system_table() {
            let me = self.id;
            return self.answer_waiter(ctx, waiter, Ok(me));
        }
        if ctx.disk.st_state.is_none() {
            return self.answer_waiter(ctx, waiter, Err(EngineError::Unrecoverable("system table".into())));
        }
        if let Some(r) = self.recreation.as_mut() {
            r.waiters.push(waiter);
            return;
        }
        self.recreation = Some(Recreation { failed, waiters: vec![waiter] });
        self.start_quorum(ctx, QuorumCall::read_all(self.cfg.locators), QuorumPurpose::TakeoverRead);
    }

    fn answer_waiter(&mut self, ctx: &mut Cx, waiter: Waiter, r: Result<ProcessId, EngineError>) {
        match waiter {
            Waiter::Remote(c) => {
                let reply = match r {
                    Ok(p) => Reply::StAt(p),
                    Err(e) => Reply::Err(e),
                };
                self.reply(ctx, c, reply);
            }
            Waiter::Local => {
                let ev = match r {
                    Ok(p) => BootEvent::Recreated(instance_ref(p)),
                    Err(_) => BootEvent::RecreationFailed,
                };
                self.boot_event(ctx, ev);
            }
        }
    }

    fn finish_recreation(&mut self, ctx: &mut Cx, r: Result<ProcessId, EngineError>) {
        let Some(rec) = self.recreation.take() else { return };
        for w in rec.waiters {
            self.answer_waiter(ctx, w, r.clone());
        }
    }

    fn takeover_holders(&self, ctx: &Cx, failed: ProcessId) -> Vec<ProcessId> {
        let mut holders = vec![self.id];
        if let Some(s) = &ctx.disk.st_state {
            holders.extend(s.holders.iter().copied().filter(|h| *h != failed && *h != self.id));
        }
        holders
    }

    pub(super) fn takeover_read(&mut self, ctx: &mut Cx, r: Result<QuorumResult, LocatorError>) {
        let Some(failed) = self.recreation.as_ref().map(|r| r.failed) else { return };
        match r {
            Ok(res) => {
                let active = res.registration.active.as_ref().and_then(instance_pid);
                if let Some(a) = active.filter(|a| *a != failed && *a != self.id) {
                    return self.finish_recreation(ctx, Ok(a));
                }
                let holders = self.takeover_holders(ctx, failed);
                let req = LocatorRequest::SetActiveSystemTable { uri: self.uri.clone(), replicas: uris(&holders) };
                let call = QuorumCall::mutate(self.cfg.locators, req, res.update_numbers);
                self.start_quorum(ctx, call, QuorumPurpose::TakeoverWrite);
            }
            Err(_) => self.finish_recreation(ctx, Err(EngineError::NoSystemTable)),
        }
    }

    pub(super) fn takeover_written(&mut self, ctx: &mut Cx, r: Result<QuorumResult, LocatorError>) {
        let Some(failed) = self.recreation.as_ref().map(|r| r.failed) else { return };
        if r.is_err() {
            return self.finish_recreation(ctx, Err(EngineError::NoSystemTable));
        }
        let now = ctx.now();
        let holders = self.takeover_holders(ctx, failed);
        let mut state = ctx.disk.st_state.clone().expect("state");
        state.holders = holders;
        if let Some(m) = state.members.get_mut(&failed) {
            m.alive = false;
        }
        ctx.disk.st_state = Some(state.clone());
        let mut st = SystemTable::resume(state, now + self.cfg.confirmation_deadline());
        st.queue.push_back(StJob { reply: None, op: StOp::HostDown { host: failed } });
        self.system_table = Some(st);
        self.st_at = Some(self.id);
        self.note(now, format!("took over system table from {}", failed.0));
        let me = self.id;
        self.finish_recreation(ctx, Ok(me));
        self.st_pump(ctx);
    }

    pub(super) fn adopt_read(
        &mut self,
        ctx: &mut Cx,
        state: StState,
        cref: CallRef,
        r: Result<QuorumResult, LocatorError>,
    ) {
        match r {
            Ok(res) => {
                let req = LocatorRequest::SetActiveSystemTable { uri: self.uri.clone(), replicas: uris(&state.holders) };
                let call = QuorumCall::mutate(self.cfg.locators, req, res.update_numbers);
                self.start_quorum(ctx, call, QuorumPurpose::AdoptWrite(Box::new(state), cref));
            }
            Err(_) => self.reply(ctx, cref, Reply::Err(EngineError::NoSystemTable)),
        }
    }

    pub(super) fn adopt_written(
        &mut self,
        ctx: &mut Cx,
        state: StState,
        cref: CallRef,
        r: Result<QuorumResult, LocatorError>,
    ) {
        if r.is_err() {
            return self.reply(ctx, cref, Reply::Err(EngineError::NoSystemTable));
        }
        let now = ctx.now();
        let me = self.id;
        ctx.disk.st_state = Some(state.clone());
        for h in state.holders.iter().copied().filter(|h| *h != me) {
            self.call(ctx, h, Call::StReplica { state: state.clone(), install: false }, Cont::Ignore);
        }
        // A cooperative hand-off: the old site stops before answering, so
        // no quiet period is needed.
        self.system_table = Some(SystemTable::resume(state, now));
        self.st_at = Some(me);
        self.note(now, "adopted system table");
        self.reply(ctx, cref, Reply::Ok);
    }
}
