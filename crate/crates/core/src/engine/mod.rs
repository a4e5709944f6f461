//! The database instance. One simulated process per machine hosts any mix
//! of: the system table, table managers, data replicas, copies of their
//! meta-state, and a transaction client with an optional workload runner.
//!
//! Remote calls are request/reply messages with a timeout. Calls that may
//! take long (lock waits, installs, takeovers) are first answered with
//! `Accepted`; the caller then pings the callee every timeout period until
//! the real reply arrives.

mod client;
mod cluster;
mod inspect;
mod ring;
mod system_table;
mod table_manager;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::commit::{CommitMsg, Participant, Protocol, TxnId, Vote};
use crate::locator::{
    BootAction, BootEvent, BootOutcome, Bootstrap, LocatorState, OwnershipMode, QuorumCall, QuorumResult, QuorumStep,
    Request, Response, Scenario,
};
use crate::model::{undo_write, InstanceRef, Row, TableSchema, TableStore, Undo};
use crate::simnet::{ms, Actor, Ctx, ProcessId, Time};
use crate::statements::Statement;

pub use client::{Job, JobOutcome, TxnRecord, WorkloadRun};
pub use cluster::Cluster;
pub use inspect::{
    live_copies, meta_repl_factor, render_meta_state, parse_meta_state, repl_factor, replica_agreement,
    wait_for_cycle, MetaLine,
};
pub use ring::{ring_event, ring_hash, RingPosition};
pub use system_table::{Member, StState, TableEntry};
pub use table_manager::{LockTable, ReplicaEntry, TmState};

pub const LOCATOR_BASE: u32 = 1000;

pub fn instance_ref(id: ProcessId) -> InstanceRef {
    InstanceRef::new(&format!("machine{}", id.0), 9090, "db", &format!("m{:02}", id.0))
}

pub fn instance_pid(r: &InstanceRef) -> Option<ProcessId> {
    r.instance_name.strip_prefix('m')?.parse().ok().map(ProcessId)
}

pub fn locator_pid(i: usize) -> ProcessId {
    ProcessId(LOCATOR_BASE + i as u32)
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub locators: usize,
    /// One-way link latency the timeouts are derived from.
    pub latency: Time,
    /// Data replicas per table (n).
    pub replication: usize,
    /// Table-manager state replicas (t).
    pub tm_replication: usize,
    /// System-table state replicas (s).
    pub st_replication: usize,
    /// Replicas written before commit (r); `None` means all of them.
    pub sync_replicas: Option<usize>,
    pub protocol: Protocol,
    pub ownership: OwnershipMode,
    pub write_delay: bool,
    pub flush_cost: Time,
    pub rpc_timeout: Time,
    pub locator_timeout: Time,
    pub install_base: Time,
    /// Install cost per row, in microseconds.
    pub install_per_row: Time,
    pub maintenance_period: Time,
    pub ring_period: Time,
    pub ring_k: usize,
    /// Machines that may not hold data or meta-state replicas.
    pub ineligible: BTreeSet<ProcessId>,
    /// Constant cpu/memory/disk utilization per machine, in per-mille.
    pub utilization: BTreeMap<ProcessId, [u16; 3]>,
    pub retry_backoff: Time,
    /// Client-side cost of starting each unit of a looping workload.
    pub unit_cost: Time,
    /// Keep statements and results of committed transactions.
    pub record_history: bool,
}

impl EngineConfig {
    pub fn new(replication: usize) -> Self {
        let latency = ms(2);
        EngineConfig {
            locators: 3,
            latency,
            replication,
            tm_replication: replication,
            st_replication: replication,
            sync_replicas: None,
            protocol: Protocol::TwoPhase,
            ownership: OwnershipMode::PerCommit,
            write_delay: false,
            flush_cost: ms(8),
            rpc_timeout: 20 * latency,
            locator_timeout: 10 * latency,
            install_base: ms(20),
            install_per_row: 100,
            maintenance_period: ms(1000),
            ring_period: ms(1000),
            ring_k: 3,
            ineligible: BTreeSet::new(),
            utilization: BTreeMap::new(),
            retry_backoff: ms(10),
            unit_cost: 100,
            record_history: false,
        }
    }

    /// Longest a confirmation read may take and still count.
    pub fn confirmation_deadline(&self) -> Time {
        self.locator_timeout * self.locators as Time
    }

    pub fn failure_timeout(&self) -> Time {
        self.rpc_timeout
    }

    /// One recovery step: a timed-out call plus a system-table quiet period.
    pub fn recovery_round_trip(&self) -> Time {
        self.rpc_timeout + self.confirmation_deadline()
    }

    /// The scenario bound on any zero-throughput gap that recovery closes.
    pub fn recovery_bound(&self) -> Time {
        self.failure_timeout() + 3 * self.recovery_round_trip()
    }

    pub fn eligible(&self, id: ProcessId) -> bool {
        !self.ineligible.contains(&id)
    }

    fn install_cost(&self, rows: usize) -> Time {
        self.install_base + self.install_per_row * rows as Time
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Hash)]
pub enum EngineError {
    #[error("not the system table")]
    NotSystemTable(Option<ProcessId>),
    #[error("no table manager for {0} here")]
    NotTableManager(String),
    #[error("no such table: {0}")]
    NoSuchTable(String),
    #[error("table already exists: {0}")]
    DuplicateTable(String),
    #[error("no current replica of {0}")]
    NoCurrentReplica(String),
    #[error("no replica of {0} here")]
    NoReplica(String),
    #[error("unrecoverable: {0}")]
    Unrecoverable(String),
    #[error("{0} did not answer")]
    Timeout(ProcessId),
    #[error("transaction aborted")]
    Aborted,
    #[error("system table unavailable")]
    NoSystemTable,
    #[error("statement failed: {0}")]
    Sql(String),
    #[error("target unreachable")]
    TargetUnreachable,
    #[error("busy")]
    Busy,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StmtResult {
    Rows(Vec<Row>),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Call {
    Ping,
    // System table, answered at once.
    Lookup { table: String },
    Ranking,
    // System table, serialized and confirmed.
    Register,
    CreateTable { schema: TableSchema, if_not_exists: bool },
    DropTable { name: String, if_exists: bool },
    TmFailed { table: String, tm: ProcessId },
    Suspect { host: ProcessId },
    MigrateSt { no_replicate: bool },
    TmMoved { table: String, to: ProcessId, holders: Vec<ProcessId> },
    TmHolders { table: String, holders: Vec<ProcessId> },
    // System-table hosting.
    RecreateSt { failed: ProcessId },
    AdoptSt { state: StState },
    StReplica { state: StState, install: bool },
    // Table-manager hosting.
    TmReplica { state: TmState, install: bool },
    StartTm { table: String, dead: Vec<ProcessId> },
    AdoptTm { state: TmState },
    // Table manager.
    Lock { txn: TxnId, table: String, exclusive: bool },
    ReplicaFailed { table: String, host: ProcessId },
    HandOverTm { table: String, to: ProcessId },
    MemberLeft { host: ProcessId },
    DropTableLocal { table: String },
    CaughtUp { table: String, version: u64 },
    // Data replicas.
    Exec { txn: TxnId, table: String, stmts: Vec<Statement> },
    Install { table: String, schema: TableSchema, rows: Vec<Row>, version: u64 },
    Fetch { table: String },
    DropReplica { table: String },
    AsyncApply { table: String, version: u64, stmts: Vec<Statement>, tm: ProcessId },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Reply {
    Ok,
    Accepted,
    Pong,
    Tm(ProcessId),
    /// Ranked eligible live hosts with their scores in thousandths, and
    /// every live host.
    Ranked { ranked: Vec<(ProcessId, u32)>, alive: Vec<ProcessId> },
    Created { existed: bool },
    StAt(ProcessId),
    Registered,
    Granted { sync: Vec<ProcessId>, lazy: Vec<ProcessId>, read_from: Option<ProcessId>, version: u64 },
    Results(Vec<StmtResult>),
    Rows { rows: Vec<Row>, version: u64 },
    Err(EngineError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Timer {
    CallTimeout(u64),
    Probe(u64),
    LocatorTimeout(u64),
    Deliver(ProcessId, Box<EngineMsg>),
    BootWait,
    BootRetry,
    CommitTimeout(TxnId),
    StQuiet,
    Maintenance,
    Ring,
    Client(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EngineMsg {
    Call { id: u64, call: Call },
    Reply { id: u64, reply: Reply },
    Commit(CommitMsg),
    Locator { id: u64, req: Request },
    LocatorReply { id: u64, resp: Response },
    Timer(Timer),
}

/// A committed replica of one table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredReplica {
    pub store: TableStore,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingWrite {
    pub table: String,
    pub stmt: Statement,
    pub undo: Undo,
}

/// Durable state of one machine.
#[derive(Debug, Clone, Default)]
pub struct NodeDisk {
    pub locator: LocatorState,
    pub replicas: BTreeMap<String, StoredReplica>,
    /// Writes applied but not yet committed, per transaction.
    pub pending: BTreeMap<TxnId, Vec<PendingWrite>>,
    pub st_state: Option<StState>,
    pub tm_states: BTreeMap<String, TmState>,
}

impl NodeDisk {
    fn undo_txn(&mut self, txn: TxnId) {
        for w in self.pending.remove(&txn).unwrap_or_default().into_iter().rev() {
            if let Some(r) = self.replicas.get_mut(&w.table) {
                undo_write(&mut r.store, w.undo);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CallRef {
    pub from: ProcessId,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Booting,
    Joined,
    Failed(Scenario),
}

#[derive(Debug, Clone)]
enum Cont {
    Ignore,
    Probe(u64),
    Host(HostCont),
    St(system_table::StCont),
    Tm(String, table_manager::TmCont),
    Client(client::ClientCont),
}

#[derive(Debug, Clone)]
enum HostCont {
    BootPing,
    BootRecreate,
    Register,
    RingPing(ProcessId),
    StRanking,
}

#[derive(Debug)]
struct PendingCall {
    to: ProcessId,
    cont: Cont,
    deadline: Time,
    accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LocRoute {
    Boot,
    Quorum(u64),
}

#[derive(Debug, Clone)]
enum QuorumPurpose {
    Confirm { started: Time },
    TakeoverRead,
    TakeoverWrite,
    ReplicasRead,
    ReplicasWrite,
    AdoptRead(Box<StState>, CallRef),
    AdoptWrite(Box<StState>, CallRef),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BootPurpose {
    Startup,
    Recovery,
}

#[derive(Debug)]
struct BootRun {
    machine: Bootstrap,
    purpose: BootPurpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Waiter {
    Remote(CallRef),
    Local,
}

#[derive(Debug)]
struct Recreation {
    failed: ProcessId,
    waiters: Vec<Waiter>,
}

/// Transaction state kept by a host taking part in someone else's
/// transaction, as table manager, replica site or both.
#[derive(Debug)]
struct HostTxn {
    coordinator: ProcessId,
    locks: Vec<String>,
    wrote: BTreeSet<String>,
    aborted: bool,
    participant: Option<Participant>,
}

impl HostTxn {
    fn new(coordinator: ProcessId) -> Self {
        HostTxn { coordinator, locks: Vec::new(), wrote: BTreeSet::new(), aborted: false, participant: None }
    }
}

/// A notable event, kept for reports and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub at: Time,
    pub what: String,
}

pub struct Instance {
    pub id: ProcessId,
    pub uri: InstanceRef,
    pub cfg: EngineConfig,
    pub status: Status,
    /// Where this instance believes the system table is.
    pub st_at: Option<ProcessId>,
    pub system_table: Option<system_table::SystemTable>,
    st_pending_op: Option<system_table::StOp>,
    pub managers: BTreeMap<String, table_manager::TableManager>,
    pub client: client::Client,
    pub notes: Vec<Note>,
    next_id: u64,
    calls: BTreeMap<u64, PendingCall>,
    loc_calls: BTreeMap<u64, LocRoute>,
    quorums: BTreeMap<u64, (QuorumCall, QuorumPurpose)>,
    boot: Option<BootRun>,
    recreation: Option<Recreation>,
    host_txns: BTreeMap<TxnId, HostTxn>,
    /// Hosts that recently failed to answer, until the given time.
    suspects: BTreeMap<ProcessId, Time>,
    async_buffer: BTreeMap<(String, u64), (Vec<Statement>, ProcessId)>,
    ring_members: Vec<ProcessId>,
    ring_pred: Option<ProcessId>,
}

pub type Cx<'a> = Ctx<'a, EngineNode>;

impl Instance {
    pub fn new(id: ProcessId, cfg: EngineConfig) -> Self {
        Instance {
            id,
            uri: instance_ref(id),
            cfg,
            status: Status::Booting,
            st_at: None,
            system_table: None,
            st_pending_op: None,
            managers: BTreeMap::new(),
            client: client::Client::default(),
            notes: Vec::new(),
            next_id: 0,
            calls: BTreeMap::new(),
            loc_calls: BTreeMap::new(),
            quorums: BTreeMap::new(),
            boot: None,
            recreation: None,
            host_txns: BTreeMap::new(),
            suspects: BTreeMap::new(),
            async_buffer: BTreeMap::new(),
            ring_members: Vec::new(),
            ring_pred: None,
        }
    }

    pub fn is_joined(&self) -> bool {
        self.status == Status::Joined
    }

    pub fn is_system_table(&self) -> bool {
        self.system_table.as_ref().is_some_and(|s| s.active)
    }

    pub fn system_table_state(&self) -> Option<&StState> {
        self.system_table.as_ref().filter(|s| s.active).map(|s| &s.state)
    }

    /// Lock holders and waiters of every table managed here.
    pub fn lock_tables(&self) -> impl Iterator<Item = (&String, &LockTable)> {
        self.managers.iter().map(|(t, m)| (t, &m.locks))
    }

    pub fn tm_state(&self, table: &str) -> Option<&TmState> {
        self.managers.get(table).map(|m| &m.state)
    }

    fn note(&mut self, now: Time, what: impl Into<String>) {
        self.notes.push(Note { at: now, what: what.into() });
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    // -----------------------------------------------------------------
    // Startup
    // -----------------------------------------------------------------

    fn start(&mut self, ctx: &mut Cx) {
        // A restarted instance trusts none of its old replicas; they are
        // rebuilt by the table managers if still wanted.
        for txn in ctx.disk.pending.keys().copied().collect::<Vec<_>>() {
            ctx.disk.undo_txn(txn);
        }
        ctx.disk.replicas.clear();
        ctx.disk.tm_states.clear();
        self.begin_boot(ctx, BootPurpose::Startup, None);
    }

    fn begin_boot(&mut self, ctx: &mut Cx, purpose: BootPurpose, known_dead: Option<ProcessId>) {
        let mut machine =
            Bootstrap::new(self.uri.clone(), self.cfg.locators, known_dead.map(instance_ref), ms(500));
        machine.initial_replicas = vec![self.uri.clone()];
        if purpose == BootPurpose::Recovery {
            machine.max_attempts = 2;
        }
        let action = machine.start();
        self.boot = Some(BootRun { machine, purpose });
        self.boot_drive(ctx, action);
    }

    fn boot_event(&mut self, ctx: &mut Cx, ev: BootEvent) {
        let Some(run) = self.boot.as_mut() else { return };
        let action = run.machine.handle(ev);
        self.boot_drive(ctx, action);
    }

    fn boot_drive(&mut self, ctx: &mut Cx, action: BootAction) {
        match action {
            BootAction::Call { server, request } => self.locator_request(ctx, server, request, LocRoute::Boot),
            BootAction::Ping(st) => match instance_pid(&st) {
                Some(pid) => {
                    self.call(ctx, pid, Call::Ping, Cont::Host(HostCont::BootPing));
                }
                None => self.boot_event(ctx, BootEvent::PingFailed),
            },
            BootAction::RequestRecreation { holder, failed } => {
                let (Some(holder), Some(failed)) = (instance_pid(&holder), instance_pid(&failed)) else {
                    return self.boot_event(ctx, BootEvent::RecreationFailed);
                };
                if holder == self.id {
                    self.recreate_st(ctx, failed, Waiter::Local);
                } else {
                    self.call(ctx, holder, Call::RecreateSt { failed }, Cont::Host(HostCont::BootRecreate));
                }
            }
            BootAction::CreateLocally => self.boot_event(ctx, BootEvent::Created),
            BootAction::Wait(d) => ctx.set_timer(d, EngineMsg::Timer(Timer::BootWait)),
            BootAction::Done(outcome) => {
                let Some(run) = self.boot.take() else { return };
                self.boot_done(ctx, run.purpose, outcome);
            }
        }
    }

    fn boot_done(&mut self, ctx: &mut Cx, purpose: BootPurpose, outcome: BootOutcome) {
        let now = ctx.now();
        let st = match &outcome {
            BootOutcome::Joined { system_table } | BootOutcome::RestartedSystemTable { system_table } => {
                instance_pid(system_table)
            }
            BootOutcome::CreatedSystemTable => {
                let holders = vec![self.id];
                let st = system_table::SystemTable::fresh(self.id, holders);
                ctx.disk.st_state = Some(st.state.clone());
                self.system_table = Some(st);
                self.note(now, "created system table");
                Some(self.id)
            }
            BootOutcome::CannotJoin(_) => None,
        };
        if st == Some(self.id) && !self.is_system_table() {
            // The locators still name this instance: resume from disk.
            let state = ctx.disk.st_state.clone().unwrap_or_else(|| StState::new(vec![self.id]));
            self.system_table = Some(system_table::SystemTable::resume(state, now + self.cfg.confirmation_deadline()));
            self.note(now, "resumed system table");
        }
        self.st_at = st;
        match purpose {
            BootPurpose::Startup => match (st, outcome) {
                (Some(st), _) => {
                    if st != self.id {
                        ctx.disk.st_state = None;
                    }
                    self.call(ctx, st, Call::Register, Cont::Host(HostCont::Register));
                }
                (None, BootOutcome::CannotJoin(s)) => {
                    self.status = Status::Failed(s);
                    self.note(now, format!("cannot join: {s:?}"));
                }
                (None, _) => {}
            },
            BootPurpose::Recovery => {
                let r = st.ok_or(EngineError::NoSystemTable);
                self.client_st_recovered(ctx, r);
            }
        }
    }

    fn joined(&mut self, ctx: &mut Cx) {
        if self.status == Status::Joined {
            return;
        }
        self.status = Status::Joined;
        let now = ctx.now();
        self.note(now, "joined");
        ctx.set_timer(self.cfg.maintenance_period, EngineMsg::Timer(Timer::Maintenance));
        ctx.set_timer(self.cfg.ring_period, EngineMsg::Timer(Timer::Ring));
    }

    // -----------------------------------------------------------------
    // Calls
    // -----------------------------------------------------------------

    fn is_suspect(&self, now: Time, host: ProcessId) -> bool {
        self.suspects.get(&host).is_some_and(|until| *until > now)
    }

    fn call(&mut self, ctx: &mut Cx, to: ProcessId, call: Call, cont: Cont) -> u64 {
        let id = self.fresh_id();
        let now = ctx.now();
        // A host that just timed out fails fast rather than costing
        // another full timeout.
        let timeout = if self.is_suspect(now, to) { 0 } else { self.cfg.rpc_timeout };
        self.calls.insert(id, PendingCall { to, cont, deadline: now + timeout, accepted: false });
        if timeout > 0 {
            ctx.send(to, EngineMsg::Call { id, call });
        }
        ctx.set_timer(timeout, EngineMsg::Timer(Timer::CallTimeout(id)));
        id
    }

    fn reply(&self, ctx: &mut Cx, to: CallRef, reply: Reply) {
        ctx.send(to.from, EngineMsg::Reply { id: to.id, reply });
    }

    fn reply_after(&self, ctx: &mut Cx, delay: Time, to: CallRef, reply: Reply) {
        self.send_after(ctx, delay, to.from, EngineMsg::Reply { id: to.id, reply });
    }

    fn send_after(&self, ctx: &mut Cx, delay: Time, to: ProcessId, msg: EngineMsg) {
        if delay == 0 {
            ctx.send(to, msg);
        } else {
            ctx.set_timer(delay, EngineMsg::Timer(Timer::Deliver(to, Box::new(msg))));
        }
    }

    fn on_reply(&mut self, ctx: &mut Cx, id: u64, reply: Reply) {
        let now = ctx.now();
        let Some(p) = self.calls.get_mut(&id) else { return };
        if reply == Reply::Accepted {
            if !p.accepted {
                p.accepted = true;
                p.deadline = now + 100 * self.cfg.rpc_timeout;
                ctx.set_timer(self.cfg.rpc_timeout, EngineMsg::Timer(Timer::Probe(id)));
                ctx.set_timer(100 * self.cfg.rpc_timeout, EngineMsg::Timer(Timer::CallTimeout(id)));
            }
            return;
        }
        let p = self.calls.remove(&id).expect("pending call");
        let r = match reply {
            Reply::Err(e) => Err(e),
            other => Ok(other),
        };
        self.resume(ctx, p.cont, r);
    }

    fn on_call_timeout(&mut self, ctx: &mut Cx, id: u64) {
        let now = ctx.now();
        let Some(p) = self.calls.get(&id) else { return };
        if now < p.deadline {
            return;
        }
        let p = self.calls.remove(&id).expect("pending call");
        self.suspects.insert(p.to, now + 50 * self.cfg.rpc_timeout);
        self.resume(ctx, p.cont, Err(EngineError::Timeout(p.to)));
    }

    fn on_probe(&mut self, ctx: &mut Cx, id: u64) {
        let Some(p) = self.calls.get(&id) else { return };
        let to = p.to;
        self.call(ctx, to, Call::Ping, Cont::Probe(id));
    }

    fn resume(&mut self, ctx: &mut Cx, cont: Cont, r: Result<Reply, EngineError>) {
        match cont {
            Cont::Ignore => {}
            Cont::Probe(orig) => {
                if !self.calls.contains_key(&orig) {
                    return;
                }
                if r.is_ok() {
                    ctx.set_timer(self.cfg.rpc_timeout, EngineMsg::Timer(Timer::Probe(orig)));
                } else {
                    let p = self.calls.remove(&orig).expect("pending call");
                    self.resume(ctx, p.cont, Err(EngineError::Timeout(p.to)));
                }
            }
            Cont::Host(c) => self.host_resume(ctx, c, r),
            Cont::St(c) => self.st_resume(ctx, c, r),
            Cont::Tm(table, c) => self.tm_resume(ctx, table, c, r),
            Cont::Client(c) => self.client_resume(ctx, c, r),
        }
    }

    fn host_resume(&mut self, ctx: &mut Cx, c: HostCont, r: Result<Reply, EngineError>) {
        match c {
            HostCont::BootPing => {
                let ev = if r.is_ok() { BootEvent::PingOk } else { BootEvent::PingFailed };
                self.boot_event(ctx, ev);
            }
            HostCont::BootRecreate => match r {
                Ok(Reply::StAt(st)) => self.boot_event(ctx, BootEvent::Recreated(instance_ref(st))),
                _ => self.boot_event(ctx, BootEvent::RecreationFailed),
            },
            HostCont::Register => match r {
                Ok(_) => self.joined(ctx),
                Err(EngineError::NotSystemTable(Some(st))) => {
                    self.st_at = Some(st);
                    self.call(ctx, st, Call::Register, Cont::Host(HostCont::Register));
                }
                Err(_) => ctx.set_timer(ms(500), EngineMsg::Timer(Timer::BootRetry)),
            },
            HostCont::RingPing(host) => {
                if r.is_err() {
                    self.report_suspect(ctx, host);
                }
            }
            HostCont::StRanking => {
                if let Ok(Reply::Ranked { alive, .. }) = r {
                    self.ring_update(ctx, alive);
                }
            }
        }
    }

    // -----------------------------------------------------------------
    // Locators
    // -----------------------------------------------------------------

    fn locator_request(&mut self, ctx: &mut Cx, server: usize, req: Request, route: LocRoute) {
        let id = self.fresh_id();
        self.loc_calls.insert(id, route);
        ctx.send(locator_pid(server), EngineMsg::Locator { id, req });
        ctx.set_timer(self.cfg.locator_timeout, EngineMsg::Timer(Timer::LocatorTimeout(id)));
    }

    fn on_locator(&mut self, ctx: &mut Cx, id: u64, resp: Option<Response>) {
        let Some(route) = self.loc_calls.remove(&id) else { return };
        match route {
            LocRoute::Boot => {
                let ev = match resp {
                    Some(r) => BootEvent::Locator(r),
                    None => BootEvent::LocatorTimeout,
                };
                self.boot_event(ctx, ev);
            }
            LocRoute::Quorum(q) => {
                let Some((call, _)) = self.quorums.get_mut(&q) else { return };
                let step = match resp {
                    Some(r) => call.on_response(r),
                    None => call.on_timeout(),
                };
                self.quorum_drive(ctx, q, step);
            }
        }
    }

    fn start_quorum(&mut self, ctx: &mut Cx, mut call: QuorumCall, purpose: QuorumPurpose) {
        let q = self.fresh_id();
        let step = call.start();
        self.quorums.insert(q, (call, purpose));
        self.quorum_drive(ctx, q, step);
    }

    fn quorum_drive(&mut self, ctx: &mut Cx, q: u64, step: QuorumStep) {
        match step {
            QuorumStep::Send { server, request } => self.locator_request(ctx, server, request, LocRoute::Quorum(q)),
            QuorumStep::Done(r) => {
                let (_, purpose) = self.quorums.remove(&q).expect("quorum");
                self.quorum_done(ctx, purpose, r);
            }
        }
    }

    fn quorum_done(
        &mut self,
        ctx: &mut Cx,
        purpose: QuorumPurpose,
        r: Result<QuorumResult, crate::locator::LocatorError>,
    ) {
        match purpose {
            QuorumPurpose::Confirm { started } => self.st_confirmed(ctx, started, r),
            QuorumPurpose::TakeoverRead => self.takeover_read(ctx, r),
            QuorumPurpose::TakeoverWrite => self.takeover_written(ctx, r),
            QuorumPurpose::ReplicasRead => self.st_replicas_read(ctx, r),
            QuorumPurpose::ReplicasWrite => self.st_replicas_written(ctx, r),
            QuorumPurpose::AdoptRead(state, cref) => self.adopt_read(ctx, *state, cref, r),
            QuorumPurpose::AdoptWrite(state, cref) => self.adopt_written(ctx, *state, cref, r),
        }
    }

    // -----------------------------------------------------------------
    // Incoming calls
    // -----------------------------------------------------------------

    fn on_call(&mut self, ctx: &mut Cx, from: ProcessId, id: u64, call: Call) {
        let cref = CallRef { from, id };
        match call {
            Call::Ping => self.reply(ctx, cref, Reply::Pong),
            Call::Lookup { .. }
            | Call::Ranking
            | Call::Register
            | Call::CreateTable { .. }
            | Call::DropTable { .. }
            | Call::TmFailed { .. }
            | Call::Suspect { .. }
            | Call::MigrateSt { .. }
            | Call::TmMoved { .. }
            | Call::TmHolders { .. } => self.st_call(ctx, cref, call),
            Call::RecreateSt { failed } => {
                self.reply(ctx, cref, Reply::Accepted);
                self.recreate_st(ctx, failed, Waiter::Remote(cref));
            }
            Call::AdoptSt { state } => {
                self.reply(ctx, cref, Reply::Accepted);
                self.start_quorum(ctx, QuorumCall::read_all(self.cfg.locators), QuorumPurpose::AdoptRead(Box::new(state), cref));
            }
            Call::StReplica { state, install } => {
                ctx.disk.st_state = Some(state);
                if install {
                    self.reply(ctx, cref, Reply::Accepted);
                    self.reply_after(ctx, self.cfg.install_base, cref, Reply::Ok);
                } else {
                    self.reply(ctx, cref, Reply::Ok);
                }
            }
            Call::TmReplica { state, install } => {
                ctx.disk.tm_states.insert(state.table.clone(), state);
                if install {
                    self.reply(ctx, cref, Reply::Accepted);
                    self.reply_after(ctx, self.cfg.install_base, cref, Reply::Ok);
                } else {
                    self.reply(ctx, cref, Reply::Ok);
                }
            }
            Call::StartTm { table, dead } => self.start_tm(ctx, cref, table, dead),
            Call::AdoptTm { state } => self.adopt_tm(ctx, cref, state),
            Call::Lock { .. }
            | Call::ReplicaFailed { .. }
            | Call::HandOverTm { .. }
            | Call::MemberLeft { .. }
            | Call::DropTableLocal { .. }
            | Call::CaughtUp { .. } => self.tm_call(ctx, cref, call),
            Call::Exec { txn, table, stmts } => self.exec(ctx, cref, txn, table, stmts),
            Call::Install { table, schema, rows, version } => {
                let cost = self.cfg.install_cost(rows.len());
                let mut store = TableStore::new(schema);
                store.rows = rows;
                self.drop_local_replica(ctx, &table);
                ctx.disk.replicas.insert(table, StoredReplica { store, version });
                self.reply(ctx, cref, Reply::Accepted);
                self.reply_after(ctx, cost, cref, Reply::Ok);
            }
            Call::Fetch { table } => {
                let reply = match ctx.disk.replicas.get(&table) {
                    Some(r) => Reply::Rows { rows: r.store.rows.clone(), version: r.version },
                    None => Reply::Err(EngineError::NoReplica(table)),
                };
                self.reply(ctx, cref, reply);
            }
            Call::DropReplica { table } => {
                self.drop_local_replica(ctx, &table);
                self.reply(ctx, cref, Reply::Ok);
            }
            Call::AsyncApply { table, version, stmts, tm } => {
                self.reply(ctx, cref, Reply::Ok);
                self.async_buffer.insert((table.clone(), version), (stmts, tm));
                self.drain_async(ctx, &table);
            }
        }
    }

    fn drop_local_replica(&mut self, ctx: &mut Cx, table: &str) {
        let txns: Vec<TxnId> = ctx
            .disk
            .pending
            .iter()
            .filter(|(_, ws)| ws.iter().any(|w| w.table == table))
            .map(|(t, _)| *t)
            .collect();
        for txn in txns {
            self.abort_local(ctx, txn);
        }
        ctx.disk.replicas.remove(table);
    }

    /// Give up a transaction's local effects; its vote becomes abort.
    fn abort_local(&mut self, ctx: &mut Cx, txn: TxnId) {
        ctx.disk.undo_txn(txn);
        if let Some(h) = self.host_txns.get_mut(&txn) {
            h.aborted = true;
            h.wrote.clear();
        }
    }

    fn exec(&mut self, ctx: &mut Cx, cref: CallRef, txn: TxnId, table: String, stmts: Vec<Statement>) {
        if !ctx.disk.replicas.contains_key(&table) {
            return self.reply(ctx, cref, Reply::Err(EngineError::NoReplica(table)));
        }
        // Under a single table manager no two transactions touch a replica
        // at once; overlap means an older transaction lost its locks.
        let stale: Vec<TxnId> = ctx
            .disk
            .pending
            .iter()
            .filter(|(t, ws)| **t != txn && ws.iter().any(|w| w.table == table))
            .map(|(t, _)| *t)
            .collect();
        for t in stale {
            self.abort_local(ctx, t);
        }
        let host = self.host_txns.entry(txn).or_insert_with(|| HostTxn::new(cref.from));
        if host.aborted {
            return self.reply(ctx, cref, Reply::Err(EngineError::Aborted));
        }
        let disk = &mut *ctx.disk;
        let replica = disk.replicas.get_mut(&table).expect("replica");
        let mut results = Vec::new();
        let mut applied = Vec::new();
        let mut failure = None;
        for stmt in stmts {
            match &stmt {
                Statement::Select { predicate, .. } => match replica.store.select(predicate.as_ref()) {
                    Ok(rows) => results.push(StmtResult::Rows(rows)),
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                },
                s if s.is_write() => match crate::model::apply_write_undoable(&mut replica.store, s) {
                    Ok((n, undo)) => {
                        results.push(StmtResult::Count(n));
                        applied.push(PendingWrite { table: table.clone(), stmt, undo });
                    }
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                },
                other => {
                    failure = Some(format!("not a data statement: {other}"));
                    break;
                }
            }
        }
        let wrote = !applied.is_empty();
        disk.pending.entry(txn).or_default().extend(applied);
        if let Some(e) = failure {
            self.abort_local(ctx, txn);
            return self.reply(ctx, cref, Reply::Err(EngineError::Sql(e)));
        }
        if wrote {
            host.wrote.insert(table);
        }
        self.reply(ctx, cref, Reply::Results(results));
    }

    fn drain_async(&mut self, ctx: &mut Cx, table: &str) {
        loop {
            let Some(replica) = ctx.disk.replicas.get_mut(table) else { return };
            let key = (table.to_string(), replica.version + 1);
            let Some((stmts, tm)) = self.async_buffer.remove(&key) else { return };
            for s in &stmts {
                if crate::model::apply_write(&mut replica.store, s).is_ok() {
                    replica.store.record(s);
                }
            }
            replica.version += 1;
            let version = replica.version;
            self.call(ctx, tm, Call::CaughtUp { table: table.to_string(), version }, Cont::Ignore);
        }
    }

    // -----------------------------------------------------------------
    // Commit participation
    // -----------------------------------------------------------------

    fn on_commit_msg(&mut self, ctx: &mut Cx, from: ProcessId, msg: CommitMsg) {
        match msg {
            CommitMsg::VoteReply { .. } | CommitMsg::Ack { .. } | CommitMsg::Begin { .. } => {
                self.client_commit_msg(ctx, from, msg)
            }
            CommitMsg::DecisionQuery { .. } => self.client_commit_msg(ctx, from, msg),
            CommitMsg::Prepare { txn, .. } => {
                let protocol = self.cfg.protocol;
                let host = self.host_txns.entry(txn).or_insert_with(|| HostTxn::new(from));
                let vote = if host.aborted { Vote::Aborted } else { Vote::Prepared };
                let mut p = Participant::new(self.id, from, txn, protocol, vote);
                let out = p.on_message(from, msg);
                host.participant = Some(p);
                let delay = if !host.wrote.is_empty() && !self.cfg.write_delay { self.cfg.flush_cost } else { 0 };
                let aborted = vote == Vote::Aborted;
                for (to, m) in out {
                    self.send_after(ctx, delay, to, EngineMsg::Commit(m));
                }
                if aborted {
                    self.finish_host_txn(ctx, txn, false);
                }
            }
            CommitMsg::PreCommit { txn } => {
                if let Some(p) = self.host_txns.get_mut(&txn).and_then(|h| h.participant.as_mut()) {
                    for (to, m) in p.on_message(from, msg) {
                        ctx.send(to, EngineMsg::Commit(m));
                    }
                }
            }
            CommitMsg::Commit { txn } => self.finish_host_txn(ctx, txn, true),
            CommitMsg::Abort { txn } => self.finish_host_txn(ctx, txn, false),
            CommitMsg::StateQuery { txn } => {
                let state = self
                    .host_txns
                    .get(&txn)
                    .and_then(|h| h.participant.as_ref())
                    .map_or(crate::commit::ParticipantState::Aborted, |p| p.state);
                ctx.send(from, EngineMsg::Commit(CommitMsg::StateReply { txn, state }));
            }
            CommitMsg::StateReply { .. } => {}
        }
    }

    fn finish_host_txn(&mut self, ctx: &mut Cx, txn: TxnId, commit: bool) {
        let tables: Vec<String> = self.managers.keys().cloned().collect();
        let Some(host) = self.host_txns.remove(&txn) else {
            // Lock requests still queued for a transaction that ended.
            for table in tables {
                self.tm_release(ctx, &table, txn, false);
            }
            return;
        };
        let commit = commit && !host.aborted;
        if commit {
            let writes = ctx.disk.pending.remove(&txn).unwrap_or_default();
            for w in &writes {
                if let Some(r) = ctx.disk.replicas.get_mut(&w.table) {
                    r.store.record(&w.stmt);
                }
            }
            for t in &host.wrote {
                if let Some(r) = ctx.disk.replicas.get_mut(t) {
                    r.version += 1;
                }
            }
        } else {
            ctx.disk.undo_txn(txn);
        }
        for table in tables {
            self.tm_release(ctx, &table, txn, commit);
        }
    }

    // -----------------------------------------------------------------
    // Periodic work
    // -----------------------------------------------------------------

    fn on_maintenance(&mut self, ctx: &mut Cx) {
        ctx.set_timer(self.cfg.maintenance_period, EngineMsg::Timer(Timer::Maintenance));
        let now = ctx.now();
        self.suspects.retain(|_, until| *until > now);
        self.st_tick(ctx);
        let tables: Vec<String> = self.managers.keys().cloned().collect();
        for t in tables {
            self.tm_maintain(ctx, &t, false);
        }
    }

    fn on_ring(&mut self, ctx: &mut Cx) {
        ctx.set_timer(self.cfg.ring_period, EngineMsg::Timer(Timer::Ring));
        if let Some(st) = self.st_at {
            self.call(ctx, st, Call::Ranking, Cont::Host(HostCont::StRanking));
        }
        if let Some(succ) = ring::successor(&self.ring_members, self.id) {
            self.call(ctx, succ, Call::Ping, Cont::Host(HostCont::RingPing(succ)));
        }
    }

    fn ring_update(&mut self, ctx: &mut Cx, alive: Vec<ProcessId>) {
        let mut members = alive;
        if !members.contains(&self.id) {
            members.push(self.id);
        }
        let new_pred = ring::predecessor(&members, self.id);
        if let (Some(old), Some(new)) = (self.ring_pred, new_pred) {
            if let Some(gone) = ring_event(self.id, old, new) {
                self.report_suspect(ctx, gone);
            }
        }
        self.ring_pred = new_pred;
        self.ring_members = members;
    }

    fn report_suspect(&mut self, ctx: &mut Cx, host: ProcessId) {
        if let Some(st) = self.st_at {
            self.call(ctx, st, Call::Suspect { host }, Cont::Ignore);
        }
    }
}

/// A simulated process in an engine world: a locator server or a database
/// instance.
pub enum EngineNode {
    Locator,
    Instance(Box<Instance>),
}

impl EngineNode {
    pub fn instance(&self) -> Option<&Instance> {
        match self {
            EngineNode::Instance(i) => Some(i),
            EngineNode::Locator => None,
        }
    }

    pub fn instance_mut(&mut self) -> Option<&mut Instance> {
        match self {
            EngineNode::Instance(i) => Some(i),
            EngineNode::Locator => None,
        }
    }
}

impl Actor for EngineNode {
    type Msg = EngineMsg;
    type Disk = NodeDisk;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Self>) {
        if let EngineNode::Instance(i) = self {
            i.start(ctx);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, from: ProcessId, msg: EngineMsg) {
        let i = match self {
            EngineNode::Locator => {
                if let EngineMsg::Locator { id, req } = msg {
                    let resp = ctx.disk.locator.handle(ctx.now(), &req);
                    ctx.send(from, EngineMsg::LocatorReply { id, resp });
                }
                return;
            }
            EngineNode::Instance(i) => i,
        };
        if from != i.id {
            i.suspects.remove(&from);
        }
        match msg {
            EngineMsg::Call { id, call } => i.on_call(ctx, from, id, call),
            EngineMsg::Reply { id, reply } => i.on_reply(ctx, id, reply),
            EngineMsg::Commit(m) => i.on_commit_msg(ctx, from, m),
            EngineMsg::Locator { .. } => {}
            EngineMsg::LocatorReply { id, resp } => i.on_locator(ctx, id, Some(resp)),
            EngineMsg::Timer(t) => match t {
                Timer::CallTimeout(id) => i.on_call_timeout(ctx, id),
                Timer::Probe(id) => i.on_probe(ctx, id),
                Timer::LocatorTimeout(id) => i.on_locator(ctx, id, None),
                Timer::Deliver(to, msg) => ctx.send(to, *msg),
                Timer::BootWait => i.boot_event(ctx, BootEvent::Waited),
                Timer::BootRetry => {
                    if i.status == Status::Booting && i.boot.is_none() {
                        i.begin_boot(ctx, BootPurpose::Startup, None);
                    }
                }
                Timer::CommitTimeout(txn) => i.client_commit_timeout(ctx, txn),
                Timer::StQuiet => i.st_pump(ctx),
                Timer::Maintenance => i.on_maintenance(ctx),
                Timer::Ring => i.on_ring(ctx),
                Timer::Client(tag) => i.client_timer(ctx, tag),
            },
        }
    }

    fn on_crash(disk: &mut NodeDisk) {
        for txn in disk.pending.keys().copied().collect::<Vec<_>>() {
            disk.undo_txn(txn);
        }
    }
}

#[cfg(test)]
mod tests;
