//! Locator servers: the small replicated registry that records where the
//! active system table lives and which instances hold copies of its state.
//!
//! [`LocatorState::handle`] is the server. [`QuorumCall`] is the
//! sequential, fixed-order quorum client, [`Bootstrap`] the startup state
//! machine, and [`run_safety_schedule`] a dedicated simulation that checks
//! no two instances act as system table at once.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::InstanceRef;
use crate::simnet::{ms, Actor, Ctx, LinkModel, ProcessId, Time, World};

pub const CREATION_LOCK_TIMEOUT: Time = ms(30_000);
pub const LEASE_DURATION: Time = ms(10_000);

#[derive(Debug, Error, Clone, PartialEq, Eq, Hash)]
pub enum LocatorError {
    #[error("stale request: server is at update {current}")]
    StaleRequest { current: u64 },
    #[error("creation lock held by {holder}")]
    LockHeld { holder: String },
    #[error("lease held by {holder}")]
    LeaseHeld { holder: String },
    #[error("a system table is already registered")]
    AlreadyActive,
    #[error("caller does not hold the creation lock")]
    NotLockHolder,
    #[error("caller is not the registered system table")]
    NotActive,
    #[error("no majority of locator servers")]
    NoMajority,
    #[error("malformed locator file: {0}")]
    Malformed(String),
}

/// What the servers agree on: the active system table and its replicas.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Registration {
    pub active: Option<InstanceRef>,
    pub replicas: Vec<InstanceRef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct LocatorState {
    pub registration: Registration,
    pub update_number: u64,
    pub creation_lock: Option<(InstanceRef, Time)>,
    pub lease: Option<(InstanceRef, Time)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LocatorRequest {
    GetActiveSystemTableLocation,
    GetSystemTableReplicaLocations,
    /// Both of the above in one round trip.
    GetState,
    SetActiveSystemTable { uri: InstanceRef, replicas: Vec<InstanceRef> },
    SetSystemTableReplicaLocations { replicas: Vec<InstanceRef> },
    ObtainLockToCreateSystemTable { requester: InstanceRef },
    CommitSystemTableCreation { uri: InstanceRef, replicas: Vec<InstanceRef> },
    GrantLease { holder: InstanceRef, duration: Time },
}

impl LocatorRequest {
    pub fn is_read(&self) -> bool {
        matches!(
            self,
            LocatorRequest::GetActiveSystemTableLocation
                | LocatorRequest::GetSystemTableReplicaLocations
                | LocatorRequest::GetState
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Request {
    pub kind: LocatorRequest,
    pub last_seen_update_number: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Response {
    pub result: Result<Registration, LocatorError>,
    pub update_number: u64,
}

impl LocatorState {
    fn lock_holder(&self, now: Time) -> Option<&InstanceRef> {
        self.creation_lock.as_ref().filter(|(_, exp)| *exp > now).map(|(h, _)| h)
    }

    fn lease_holder(&self, now: Time) -> Option<&InstanceRef> {
        self.lease.as_ref().filter(|(_, exp)| *exp > now).map(|(h, _)| h)
    }

    fn reply(&self, result: Result<Registration, LocatorError>) -> Response {
        Response { result, update_number: self.update_number }
    }

    fn commit(&mut self) -> Response {
        self.update_number += 1;
        self.reply(Ok(self.registration.clone()))
    }

    pub fn handle(&mut self, now: Time, req: &Request) -> Response {
        let stale = req.last_seen_update_number != Some(self.update_number);
        match &req.kind {
            LocatorRequest::GetActiveSystemTableLocation => self.reply(Ok(Registration {
                active: self.registration.active.clone(),
                replicas: Vec::new(),
            })),
            LocatorRequest::GetSystemTableReplicaLocations => {
                self.reply(Ok(Registration { active: None, replicas: self.registration.replicas.clone() }))
            }
            LocatorRequest::GetState => self.reply(Ok(self.registration.clone())),
            LocatorRequest::SetActiveSystemTable { uri, replicas } => {
                if stale {
                    return self.reply(Err(LocatorError::StaleRequest { current: self.update_number }));
                }
                if let Some(h) = self.lease_holder(now) {
                    if h != uri {
                        return self.reply(Err(LocatorError::LeaseHeld { holder: h.render() }));
                    }
                }
                self.registration = Registration { active: Some(uri.clone()), replicas: replicas.clone() };
                self.commit()
            }
            LocatorRequest::SetSystemTableReplicaLocations { replicas } => {
                if stale {
                    return self.reply(Err(LocatorError::StaleRequest { current: self.update_number }));
                }
                self.registration.replicas = replicas.clone();
                self.commit()
            }
            LocatorRequest::ObtainLockToCreateSystemTable { requester } => {
                if self.registration.active.is_some() {
                    return self.reply(Err(LocatorError::AlreadyActive));
                }
                if let Some(h) = self.lock_holder(now) {
                    if h != requester {
                        return self.reply(Err(LocatorError::LockHeld { holder: h.render() }));
                    }
                }
                self.creation_lock = Some((requester.clone(), now + CREATION_LOCK_TIMEOUT));
                self.commit()
            }
            LocatorRequest::CommitSystemTableCreation { uri, replicas } => {
                if stale {
                    return self.reply(Err(LocatorError::StaleRequest { current: self.update_number }));
                }
                if self.registration.active.is_some() {
                    return self.reply(Err(LocatorError::AlreadyActive));
                }
                if self.lock_holder(now) != Some(uri) {
                    return self.reply(Err(LocatorError::NotLockHolder));
                }
                self.creation_lock = None;
                self.registration = Registration { active: Some(uri.clone()), replicas: replicas.clone() };
                self.commit()
            }
            LocatorRequest::GrantLease { holder, duration } => {
                if self.registration.active.as_ref() != Some(holder) {
                    return self.reply(Err(LocatorError::NotActive));
                }
                if let Some(h) = self.lease_holder(now) {
                    if h != holder {
                        return self.reply(Err(LocatorError::LeaseHeld { holder: h.render() }));
                    }
                }
                self.lease = Some((holder.clone(), now + duration));
                self.commit()
            }
        }
    }

    /// `<update_number>\t<active_uri>\t<replica_uri_csv>`
    pub fn persisted_line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.update_number,
            self.registration.active.as_ref().map(InstanceRef::render).unwrap_or_default(),
            self.registration.replicas.iter().map(InstanceRef::render).collect::<Vec<_>>().join(",")
        )
    }

    pub fn parse_persisted(line: &str) -> Result<Self, LocatorError> {
        let bad = |why: &str| LocatorError::Malformed(format!("{why}: `{line}`"));
        let mut parts = line.trim_end_matches('\n').split('\t');
        let update_number = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("update number"))?;
        let active = parts.next().ok_or_else(|| bad("active field"))?;
        let replicas = parts.next().ok_or_else(|| bad("replica field"))?;
        if parts.next().is_some() {
            return Err(bad("extra fields"));
        }
        let active = if active.is_empty() { None } else { Some(InstanceRef::parse(active).map_err(|e| bad(&e.to_string()))?) };
        let replicas = if replicas.is_empty() {
            Vec::new()
        } else {
            replicas
                .split(',')
                .map(|u| InstanceRef::parse(u).map_err(|e| bad(&e.to_string())))
                .collect::<Result<_, _>>()?
        };
        Ok(LocatorState {
            registration: Registration { active, replicas },
            update_number,
            creation_lock: None,
            lease: None,
        })
    }
}

/// Ordered locator addresses. Every instance uses the same order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorFile {
    pub locator_uris: Vec<String>,
}

impl DescriptorFile {
    pub fn parse(text: &str) -> Self {
        DescriptorFile {
            locator_uris: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        self.locator_uris.iter().map(|u| format!("{u}\n")).collect()
    }
}

// ---------------------------------------------------------------------------
// Quorum client
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuorumStep {
    Send { server: usize, request: Request },
    Done(Result<QuorumResult, LocatorError>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuorumResult {
    pub registration: Registration,
    /// Update number last reported by each server that answered.
    pub update_numbers: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CallKind {
    /// Stop once a majority agrees.
    Read,
    /// Ask every server, to learn all update numbers.
    ReadAll,
    Mutate,
    Unguarded,
    /// Stop at the first refusal: with a fixed order, two contenders can
    /// never split the lock set between them.
    Lock,
}

/// One sequential pass over the locator servers in descriptor order.
#[derive(Debug, Clone)]
pub struct QuorumCall {
    servers: usize,
    kind: CallKind,
    request: LocatorRequest,
    known: BTreeMap<usize, u64>,
    next: usize,
    answers: Vec<(usize, Response)>,
}

impl QuorumCall {
    pub fn read(servers: usize) -> Self {
        Self::new(servers, CallKind::Read, LocatorRequest::GetState, BTreeMap::new())
    }

    pub fn read_all(servers: usize) -> Self {
        Self::new(servers, CallKind::ReadAll, LocatorRequest::GetState, BTreeMap::new())
    }

    /// A guarded write, using the update numbers from an earlier read.
    pub fn mutate(servers: usize, request: LocatorRequest, known: BTreeMap<usize, u64>) -> Self {
        Self::new(servers, CallKind::Mutate, request, known)
    }

    /// Unguarded: leases are not ordered by update number.
    pub fn grant_lease(servers: usize, holder: InstanceRef, duration: Time) -> Self {
        Self::new(servers, CallKind::Unguarded, LocatorRequest::GrantLease { holder, duration }, BTreeMap::new())
    }

    pub fn obtain_lock(servers: usize, requester: InstanceRef) -> Self {
        Self::new(
            servers,
            CallKind::Lock,
            LocatorRequest::ObtainLockToCreateSystemTable { requester },
            BTreeMap::new(),
        )
    }

    fn new(servers: usize, kind: CallKind, request: LocatorRequest, known: BTreeMap<usize, u64>) -> Self {
        QuorumCall { servers, kind, request, known, next: 0, answers: Vec::new() }
    }

    fn majority(&self) -> usize {
        self.servers / 2 + 1
    }

    pub fn start(&mut self) -> QuorumStep {
        self.advance()
    }

    pub fn on_response(&mut self, resp: Response) -> QuorumStep {
        let server = self.next - 1;
        self.known.insert(server, resp.update_number);
        let refused = resp.result.is_err();
        self.answers.push((server, resp));
        if self.kind == CallKind::Lock && refused {
            return self.finish();
        }
        if self.kind == CallKind::Read && self.agreeing().is_some() {
            return self.finish();
        }
        self.advance()
    }

    pub fn on_timeout(&mut self) -> QuorumStep {
        self.advance()
    }

    fn advance(&mut self) -> QuorumStep {
        while self.next < self.servers {
            let server = self.next;
            self.next += 1;
            let last_seen = self.known.get(&server).copied();
            if self.kind == CallKind::Mutate && last_seen.is_none() {
                // Never read from this server; a guarded write would bounce.
                continue;
            }
            return QuorumStep::Send {
                server,
                request: Request { kind: self.request.clone(), last_seen_update_number: last_seen },
            };
        }
        self.finish()
    }

    /// A registration reported by a majority of servers.
    fn agreeing(&self) -> Option<Registration> {
        let mut counts: BTreeMap<Vec<String>, (usize, &Registration)> = BTreeMap::new();
        for (_, r) in &self.answers {
            if let Ok(reg) = &r.result {
                let mut key = vec![reg.active.as_ref().map(InstanceRef::render).unwrap_or_default()];
                key.extend(reg.replicas.iter().map(InstanceRef::render));
                let e = counts.entry(key).or_insert((0, reg));
                e.0 += 1;
            }
        }
        counts.into_values().find(|(n, _)| *n >= self.majority()).map(|(_, r)| r.clone())
    }

    fn finish(&mut self) -> QuorumStep {
        self.next = self.servers;
        let update_numbers: BTreeMap<usize, u64> = self.answers.iter().map(|(s, r)| (*s, r.update_number)).collect();
        let result = match self.kind {
            CallKind::Read | CallKind::ReadAll => match self.agreeing() {
                Some(registration) => Ok(QuorumResult { registration, update_numbers }),
                None => Err(LocatorError::NoMajority),
            },
            CallKind::Mutate | CallKind::Unguarded | CallKind::Lock => {
                let ok: Vec<&Registration> = self.answers.iter().filter_map(|(_, r)| r.result.as_ref().ok()).collect();
                if ok.len() >= self.majority() {
                    Ok(QuorumResult { registration: ok[0].clone(), update_numbers })
                } else {
                    // Prefer a specific refusal over the generic one.
                    let specific = self.answers.iter().find_map(|(_, r)| match &r.result {
                        Err(e @ (LocatorError::LockHeld { .. } | LocatorError::AlreadyActive | LocatorError::LeaseHeld { .. })) => {
                            Some(e.clone())
                        }
                        _ => None,
                    });
                    Err(specific.unwrap_or(LocatorError::NoMajority))
                }
            }
        };
        QuorumStep::Done(result)
    }
}

// ---------------------------------------------------------------------------
// Startup
// ---------------------------------------------------------------------------

/// Which of the four startup situations applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// The registered system table answers.
    Running,
    /// A system table is registered but does not answer.
    Unresponsive,
    /// Fewer than a majority of locator servers answer.
    MinorityReachable,
    /// Nothing is registered.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BootOutcome {
    Joined { system_table: InstanceRef },
    CreatedSystemTable,
    RestartedSystemTable { system_table: InstanceRef },
    CannotJoin(Scenario),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BootAction {
    Call { server: usize, request: Request },
    Ping(InstanceRef),
    /// Ask `holder` to rebuild the system table from its replica.
    RequestRecreation { holder: InstanceRef, failed: InstanceRef },
    /// Create a fresh system table here; answer with `BootEvent::Created`.
    CreateLocally,
    Wait(Time),
    Done(BootOutcome),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BootEvent {
    Locator(Response),
    LocatorTimeout,
    PingOk,
    PingFailed,
    Recreated(InstanceRef),
    RecreationFailed,
    Created,
    Waited,
}

#[derive(Debug, Clone)]
enum BootPhase {
    Reading,
    Pinging(InstanceRef, Vec<InstanceRef>),
    Recreating { failed: InstanceRef, holders: Vec<InstanceRef> },
    Locking,
    Creating,
    Committing,
    Waiting,
    Done,
}

/// The startup state machine. Also used to recover from a dead system
/// table, by passing the instance already known to be dead.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    me: InstanceRef,
    servers: usize,
    known_dead: Option<InstanceRef>,
    call: QuorumCall,
    phase: BootPhase,
    attempts: u32,
    retry_delay: Time,
    pub max_attempts: u32,
    /// Replica holders registered along with a newly created system table.
    pub initial_replicas: Vec<InstanceRef>,
}

impl Bootstrap {
    pub fn new(me: InstanceRef, servers: usize, known_dead: Option<InstanceRef>, retry_delay: Time) -> Self {
        Bootstrap {
            me,
            servers,
            known_dead,
            call: QuorumCall::read_all(servers),
            phase: BootPhase::Reading,
            attempts: 0,
            retry_delay,
            max_attempts: 20,
            initial_replicas: Vec::new(),
        }
    }

    pub fn start(&mut self) -> BootAction {
        self.phase = BootPhase::Reading;
        self.call = QuorumCall::read_all(self.servers);
        let step = self.call.start();
        self.quorum(step)
    }

    fn quorum(&mut self, step: QuorumStep) -> BootAction {
        match step {
            QuorumStep::Send { server, request } => BootAction::Call { server, request },
            QuorumStep::Done(r) => self.quorum_done(r),
        }
    }

    fn quorum_done(&mut self, r: Result<QuorumResult, LocatorError>) -> BootAction {
        match (&self.phase, r) {
            (BootPhase::Reading, Err(_)) => self.finish(BootOutcome::CannotJoin(Scenario::MinorityReachable)),
            (BootPhase::Reading, Ok(res)) => match res.registration.active.clone() {
                Some(st) if st == self.me => self.finish(BootOutcome::Joined { system_table: st }),
                Some(st) if self.known_dead.as_ref() == Some(&st) => {
                    self.recreate(st, res.registration.replicas.clone(), res.update_numbers)
                }
                Some(st) => {
                    self.phase = BootPhase::Pinging(st.clone(), res.registration.replicas.clone());
                    BootAction::Ping(st)
                }
                None => {
                    self.phase = BootPhase::Locking;
                    self.call = QuorumCall::obtain_lock(self.servers, self.me.clone());
                    let step = self.call.start();
                    self.quorum(step)
                }
            },
            (BootPhase::Locking, Ok(_)) => {
                self.phase = BootPhase::Creating;
                BootAction::CreateLocally
            }
            (BootPhase::Locking, Err(_)) => self.wait(),
            (BootPhase::Committing, Ok(_)) => self.finish(BootOutcome::CreatedSystemTable),
            (BootPhase::Committing, Err(_)) => self.wait(),
            _ => self.finish(BootOutcome::CannotJoin(Scenario::MinorityReachable)),
        }
    }

    fn recreate(&mut self, failed: InstanceRef, replicas: Vec<InstanceRef>, _: BTreeMap<usize, u64>) -> BootAction {
        let mut holders: Vec<InstanceRef> = replicas.into_iter().filter(|r| *r != failed).collect();
        // Prefer rebuilding locally when this instance holds a copy.
        if let Some(i) = holders.iter().position(|h| *h == self.me) {
            let me = holders.remove(i);
            holders.insert(0, me);
        }
        self.phase = BootPhase::Recreating { failed, holders };
        self.next_holder()
    }

    fn next_holder(&mut self) -> BootAction {
        if let BootPhase::Recreating { failed, holders } = &mut self.phase {
            if holders.is_empty() {
                return self.finish(BootOutcome::CannotJoin(Scenario::Unresponsive));
            }
            let holder = holders.remove(0);
            return BootAction::RequestRecreation { holder, failed: failed.clone() };
        }
        self.finish(BootOutcome::CannotJoin(Scenario::Unresponsive))
    }

    fn wait(&mut self) -> BootAction {
        self.attempts += 1;
        if self.attempts >= self.max_attempts {
            return self.finish(BootOutcome::CannotJoin(Scenario::Empty));
        }
        self.phase = BootPhase::Waiting;
        BootAction::Wait(self.retry_delay)
    }

    fn finish(&mut self, o: BootOutcome) -> BootAction {
        self.phase = BootPhase::Done;
        BootAction::Done(o)
    }

    pub fn handle(&mut self, ev: BootEvent) -> BootAction {
        match (self.phase.clone(), ev) {
            (BootPhase::Reading | BootPhase::Locking | BootPhase::Committing, BootEvent::Locator(resp)) => {
                let step = self.call.on_response(resp);
                self.quorum(step)
            }
            (BootPhase::Reading | BootPhase::Locking | BootPhase::Committing, BootEvent::LocatorTimeout) => {
                let step = self.call.on_timeout();
                self.quorum(step)
            }
            (BootPhase::Pinging(st, _), BootEvent::PingOk) => self.finish(BootOutcome::Joined { system_table: st }),
            (BootPhase::Pinging(st, replicas), BootEvent::PingFailed) => self.recreate(st, replicas, BTreeMap::new()),
            (BootPhase::Recreating { .. }, BootEvent::Recreated(st)) => {
                self.finish(BootOutcome::RestartedSystemTable { system_table: st })
            }
            (BootPhase::Recreating { .. }, BootEvent::RecreationFailed) => self.next_holder(),
            (BootPhase::Creating, BootEvent::Created) => {
                self.phase = BootPhase::Committing;
                let known = self.call_numbers();
                self.call = QuorumCall::mutate(
                    self.servers,
                    LocatorRequest::CommitSystemTableCreation {
                        uri: self.me.clone(),
                        replicas: self.initial_replicas.clone(),
                    },
                    known,
                );
                let step = self.call.start();
                self.quorum(step)
            }
            (BootPhase::Waiting, BootEvent::Waited) => self.start(),
            (phase, ev) => panic!("bootstrap: unexpected {ev:?} in {phase:?}"),
        }
    }

    fn call_numbers(&self) -> BTreeMap<usize, u64> {
        self.call.answers.iter().map(|(s, r)| (*s, r.update_number)).collect()
    }
}

// ---------------------------------------------------------------------------
// Ownership confirmation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OwnershipMode {
    /// Quorum read before every system-table commit.
    PerCommit,
    /// A quorum-granted lease; commits only while it is valid.
    Lease,
    /// No confirmation at all.
    Unchecked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ownership {
    Confirmed,
    Deposed,
    /// No majority answered, or the answer came too late.
    Unconfirmed,
}

/// Turn a per-commit confirmation read into a verdict.
pub fn judge_ownership(me: &InstanceRef, read: &Result<QuorumResult, LocatorError>, elapsed: Time, deadline: Time) -> Ownership {
    match read {
        Ok(r) if r.registration.active.as_ref() == Some(me) && elapsed <= deadline => Ownership::Confirmed,
        Ok(r) if r.registration.active.as_ref() != Some(me) => Ownership::Deposed,
        _ => Ownership::Unconfirmed,
    }
}

// ---------------------------------------------------------------------------
// Single-system-table safety simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Hash)]
pub enum SafetyMsg {
    Locator { call: u64, req: Request },
    LocatorReply { call: u64, resp: Response },
    CallTimeout { call: u64 },
    Ping { seq: u64 },
    Pong { seq: u64 },
    PingTimeout { seq: u64 },
    Tick { gen: u64 },
    QuietDone { tenure: u64 },
    Recreate { failed: InstanceRef },
    Recreated { ok: bool, st: Option<InstanceRef> },
    Boot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SafetyParams {
    pub mode: OwnershipMode,
    pub call_timeout: Time,
    pub commit_period: Time,
    pub ping_period: Time,
}

impl SafetyParams {
    pub fn new(mode: OwnershipMode) -> Self {
        SafetyParams { mode, call_timeout: ms(20), commit_period: ms(15), ping_period: ms(30) }
    }

    /// Longest a confirmation may take: every server contacted, each
    /// timing out.
    pub fn confirmation_deadline(&self, servers: usize) -> Time {
        self.call_timeout * servers as Time
    }
}

/// A system-table commit, recorded by the instance that made it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub instance: usize,
    /// Global ordinal of the takeover that made this instance the system
    /// table, ordered by completion time.
    pub tenure: u64,
    pub window: (Time, Time),
}

#[derive(Debug, Clone)]
enum Pending {
    Boot(Box<Bootstrap>),
    Takeover(QuorumCall),
    Confirm(QuorumCall, Time),
    Lease(QuorumCall, Time),
}

pub enum SafetyNode {
    Locator,
    Contender(Box<Contender>),
}

pub struct Contender {
    index: usize,
    me: InstanceRef,
    peers: Vec<InstanceRef>,
    servers: Vec<ProcessId>,
    params: SafetyParams,
    call_seq: u64,
    current_call: Option<u64>,
    pending: Option<Pending>,
    st: Option<InstanceRef>,
    /// `Some` while acting as system table; serving starts after the
    /// quiet period.
    tenure: Option<u64>,
    serving: bool,
    lease_until: Time,
    ping_seq: u64,
    awaiting_pong: Option<u64>,
    recreating: bool,
    takeover_failed: Option<InstanceRef>,
    tick_gen: u64,
}

#[derive(Default)]
pub struct SafetyDisk {
    pub locator: LocatorState,
    pub commits: Vec<CommitRecord>,
    pub takeovers: Vec<(Time, usize)>,
}

/// Shared takeover counter lives on a well-known process's disk; to keep
/// actors independent we derive tenure ordinals from (time, index)
/// afterwards instead.
fn tenure_key(time: Time, index: usize) -> u64 {
    time * 64 + index as u64
}

impl Contender {
    fn server_pid(&self, i: usize) -> ProcessId {
        self.servers[i]
    }

    fn send_call(&mut self, ctx: &mut Ctx<'_, SafetyNode>, server: usize, req: Request) {
        self.call_seq += 1;
        let call = self.call_seq;
        self.current_call = Some(call);
        ctx.send(self.server_pid(server), SafetyMsg::Locator { call, req });
        ctx.set_timer(self.params.call_timeout, SafetyMsg::CallTimeout { call });
    }

    fn boot(&mut self, ctx: &mut Ctx<'_, SafetyNode>, known_dead: Option<InstanceRef>) {
        let mut b = Bootstrap::new(self.me.clone(), self.servers.len(), known_dead, ms(50));
        b.max_attempts = 4;
        b.initial_replicas = self.peers.iter().filter(|p| **p != self.me).cloned().collect();
        let a = b.start();
        self.pending = Some(Pending::Boot(Box::new(b)));
        self.boot_action(ctx, a);
    }

    fn boot_action(&mut self, ctx: &mut Ctx<'_, SafetyNode>, a: BootAction) {
        match a {
            BootAction::Call { server, request } => self.send_call(ctx, server, request),
            BootAction::Ping(st) => {
                self.ping(ctx, &st);
            }
            BootAction::RequestRecreation { holder, failed } => {
                if holder == self.me {
                    self.pending = None;
                    self.start_takeover(ctx, Some(failed));
                } else if let Some(i) = self.peers.iter().position(|p| *p == holder) {
                    ctx.send(ProcessId(10 + i as u32), SafetyMsg::Recreate { failed });
                    self.ping_seq += 1;
                    let seq = self.ping_seq;
                    self.awaiting_pong = Some(seq);
                    ctx.set_timer(4 * self.params.call_timeout * 3, SafetyMsg::PingTimeout { seq });
                }
            }
            BootAction::CreateLocally => {
                if let Some(Pending::Boot(b)) = &mut self.pending {
                    let a = b.handle(BootEvent::Created);
                    self.boot_action(ctx, a);
                }
            }
            BootAction::Wait(d) => ctx.set_timer(d, SafetyMsg::Boot),
            BootAction::Done(outcome) => {
                self.pending = None;
                match outcome {
                    BootOutcome::Joined { system_table } | BootOutcome::RestartedSystemTable { system_table } => {
                        if system_table == self.me {
                            self.become_st(ctx);
                        } else {
                            self.st = Some(system_table);
                        }
                    }
                    BootOutcome::CreatedSystemTable => self.become_st(ctx),
                    BootOutcome::CannotJoin(_) => {}
                }
                self.schedule_tick(ctx, self.params.ping_period);
            }
        }
    }

    fn ping(&mut self, ctx: &mut Ctx<'_, SafetyNode>, st: &InstanceRef) {
        if let Some(i) = self.peers.iter().position(|p| p == st) {
            self.ping_seq += 1;
            let seq = self.ping_seq;
            self.awaiting_pong = Some(seq);
            ctx.send(ProcessId(10 + i as u32), SafetyMsg::Ping { seq });
            ctx.set_timer(self.params.call_timeout, SafetyMsg::PingTimeout { seq });
        }
    }

    fn start_takeover(&mut self, ctx: &mut Ctx<'_, SafetyNode>, failed: Option<InstanceRef>) {
        self.takeover_failed = failed;
        let mut call = QuorumCall::read_all(self.servers.len());
        let step = call.start();
        self.recreating = true;
        self.pending = Some(Pending::Takeover(call));
        self.quorum_step(ctx, step);
    }

    fn become_st(&mut self, ctx: &mut Ctx<'_, SafetyNode>) {
        let now = ctx.now();
        ctx.disk.takeovers.push((now, self.index));
        let tenure = tenure_key(now, self.index);
        self.tenure = Some(tenure);
        self.st = Some(self.me.clone());
        self.serving = false;
        let quiet = match self.params.mode {
            OwnershipMode::PerCommit => self.params.confirmation_deadline(self.servers.len()),
            _ => 0,
        };
        ctx.set_timer(quiet, SafetyMsg::QuietDone { tenure });
    }

    fn step_down(&mut self) {
        self.tenure = None;
        self.serving = false;
        self.st = None;
    }

    fn quorum_step(&mut self, ctx: &mut Ctx<'_, SafetyNode>, step: QuorumStep) {
        match step {
            QuorumStep::Send { server, request } => self.send_call(ctx, server, request),
            QuorumStep::Done(r) => self.quorum_done(ctx, r),
        }
    }

    fn quorum_done(&mut self, ctx: &mut Ctx<'_, SafetyNode>, r: Result<QuorumResult, LocatorError>) {
        self.current_call = None;
        let now = ctx.now();
        match self.pending.take() {
            Some(Pending::Takeover(call)) => match (&r, call.kind) {
                (Ok(res), CallKind::ReadAll) => {
                    let active = res.registration.active.clone();
                    if active.is_none() || active.as_ref() == Some(&self.me) || active == self.takeover_failed {
                        let mut replicas = self.peers.clone();
                        replicas.retain(|p| *p != self.me);
                        let mut m = QuorumCall::mutate(
                            self.servers.len(),
                            LocatorRequest::SetActiveSystemTable { uri: self.me.clone(), replicas },
                            res.update_numbers.clone(),
                        );
                        let step = m.start();
                        self.pending = Some(Pending::Takeover(m));
                        self.quorum_step(ctx, step);
                    } else {
                        self.recreating = false;
                        self.schedule_tick(ctx, self.params.ping_period);
                    }
                }
                (Ok(_), CallKind::Mutate) => {
                    self.recreating = false;
                    self.become_st(ctx);
                }
                _ => {
                    self.recreating = false;
                    self.schedule_tick(ctx, self.params.ping_period);
                }
            },
            Some(Pending::Confirm(_, started)) => {
                let deadline = self.params.confirmation_deadline(self.servers.len());
                match judge_ownership(&self.me, &r, now - started, deadline) {
                    Ownership::Confirmed => {
                        if let Some(tenure) = self.tenure {
                            ctx.disk.commits.push(CommitRecord {
                                instance: self.index,
                                tenure,
                                window: (started, now),
                            });
                        }
                    }
                    Ownership::Deposed => self.step_down(),
                    Ownership::Unconfirmed => {}
                }
            }
            Some(Pending::Lease(_, started)) => {
                if r.is_ok() {
                    self.lease_until = started + ms(200);
                } else if matches!(r, Err(LocatorError::NotActive | LocatorError::LeaseHeld { .. })) {
                    self.step_down();
                }
            }
            Some(Pending::Boot(_)) | None => {}
        }
    }

    /// Restart the periodic loop, cancelling any earlier one.
    fn schedule_tick(&mut self, ctx: &mut Ctx<'_, SafetyNode>, delay: Time) {
        self.tick_gen += 1;
        ctx.set_timer(delay, SafetyMsg::Tick { gen: self.tick_gen });
    }

    fn tick(&mut self, ctx: &mut Ctx<'_, SafetyNode>) {
        let now = ctx.now();
        if self.tenure.is_some() && self.serving && self.pending.is_none() {
            match self.params.mode {
                OwnershipMode::Unchecked => {
                    let tenure = self.tenure.unwrap();
                    ctx.disk.commits.push(CommitRecord { instance: self.index, tenure, window: (now, now) });
                }
                OwnershipMode::PerCommit => {
                    let mut call = QuorumCall::read(self.servers.len());
                    let step = call.start();
                    self.pending = Some(Pending::Confirm(call, now));
                    self.quorum_step(ctx, step);
                }
                OwnershipMode::Lease => {
                    // Renew at half-life; commit only inside the lease.
                    let lease = ms(200);
                    if self.lease_until <= now + lease / 2 {
                        let mut call = QuorumCall::grant_lease(self.servers.len(), self.me.clone(), lease);
                        let step = call.start();
                        self.pending = Some(Pending::Lease(call, now));
                        self.quorum_step(ctx, step);
                    }
                    if now < self.lease_until {
                        let tenure = self.tenure.unwrap();
                        ctx.disk.commits.push(CommitRecord { instance: self.index, tenure, window: (now, now) });
                    }
                }
            }
            self.schedule_tick(ctx, self.params.commit_period);
            return;
        }
        if self.tenure.is_none() && self.pending.is_none() && !self.recreating && self.awaiting_pong.is_none() {
            match self.st.clone() {
                Some(st) => self.ping(ctx, &st),
                None => {
                    self.boot(ctx, None);
                    return;
                }
            }
        }
        self.schedule_tick(ctx, self.params.ping_period);
    }
}

impl Actor for SafetyNode {
    type Msg = SafetyMsg;
    type Disk = SafetyDisk;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Self>) {
        if matches!(self, SafetyNode::Contender(_)) {
            let delay = ctx.rng().gen_range(0..ms(20));
            ctx.set_timer(delay, SafetyMsg::Boot);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, from: ProcessId, msg: SafetyMsg) {
        let c = match self {
            SafetyNode::Locator => {
                if let SafetyMsg::Locator { call, req } = msg {
                    let now = ctx.now();
                    let resp = ctx.disk.locator.handle(now, &req);
                    ctx.send(from, SafetyMsg::LocatorReply { call, resp });
                }
                return;
            }
            SafetyNode::Contender(c) => c,
        };
        match msg {
            SafetyMsg::Boot => {
                if c.pending.is_none() && c.tenure.is_none() {
                    c.boot(ctx, None);
                } else if let Some(Pending::Boot(b)) = &mut c.pending {
                    let a = b.handle(BootEvent::Waited);
                    c.boot_action(ctx, a);
                }
            }
            SafetyMsg::LocatorReply { call, resp } if c.current_call == Some(call) => {
                c.current_call = None;
                match &mut c.pending {
                    Some(Pending::Boot(b)) => {
                        let a = b.handle(BootEvent::Locator(resp));
                        c.boot_action(ctx, a);
                    }
                    Some(Pending::Takeover(q) | Pending::Confirm(q, _) | Pending::Lease(q, _)) => {
                        let step = q.on_response(resp);
                        c.quorum_step(ctx, step);
                    }
                    None => {}
                }
            }
            SafetyMsg::CallTimeout { call } if c.current_call == Some(call) => {
                c.current_call = None;
                match &mut c.pending {
                    Some(Pending::Boot(b)) => {
                        let a = b.handle(BootEvent::LocatorTimeout);
                        c.boot_action(ctx, a);
                    }
                    Some(Pending::Takeover(q) | Pending::Confirm(q, _) | Pending::Lease(q, _)) => {
                        let step = q.on_timeout();
                        c.quorum_step(ctx, step);
                    }
                    None => {}
                }
            }
            SafetyMsg::Ping { seq } => {
                if c.tenure.is_some() {
                    ctx.send(from, SafetyMsg::Pong { seq });
                }
            }
            SafetyMsg::Pong { seq } if c.awaiting_pong == Some(seq) => {
                c.awaiting_pong = None;
                if let Some(Pending::Boot(b)) = &mut c.pending {
                    let a = b.handle(BootEvent::PingOk);
                    c.boot_action(ctx, a);
                }
            }
            SafetyMsg::PingTimeout { seq } if c.awaiting_pong == Some(seq) => {
                c.awaiting_pong = None;
                match &mut c.pending {
                    Some(Pending::Boot(b)) => {
                        let ev = if matches!(b.phase, BootPhase::Recreating { .. }) {
                            BootEvent::RecreationFailed
                        } else {
                            BootEvent::PingFailed
                        };
                        let a = b.handle(ev);
                        c.boot_action(ctx, a);
                    }
                    None if c.tenure.is_none() => {
                        let dead = c.st.take();
                        c.boot(ctx, dead);
                    }
                    _ => {}
                }
            }
            SafetyMsg::Recreate { failed } => {
                if c.tenure.is_none() && c.pending.is_none() {
                    c.start_takeover(ctx, Some(failed));
                }
                // The requester learns the outcome by pinging later.
                ctx.send(from, SafetyMsg::Recreated { ok: true, st: None });
            }
            SafetyMsg::Recreated { .. } => {
                c.awaiting_pong = None;
                // Find the new system table by pinging after the next read.
                if matches!(&c.pending, Some(Pending::Boot(b)) if matches!(b.phase, BootPhase::Recreating { .. })) {
                    c.pending = None;
                    c.st = None;
                    c.schedule_tick(ctx, c.params.ping_period);
                }
            }
            SafetyMsg::QuietDone { tenure } => {
                if c.tenure == Some(tenure) {
                    c.serving = true;
                    c.schedule_tick(ctx, 0);
                }
            }
            SafetyMsg::Tick { gen } if gen == c.tick_gen => c.tick(ctx),
            _ => {}
        }
    }
}

#[derive(Debug, Clone)]
pub struct SafetyReport {
    pub mode: OwnershipMode,
    pub commits: Vec<CommitRecord>,
    pub violations: Vec<(CommitRecord, CommitRecord)>,
    pub takeovers: usize,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Commits from an earlier tenure must finish before any commit of a later
/// tenure begins.
pub fn find_violations(commits: &[CommitRecord]) -> Vec<(CommitRecord, CommitRecord)> {
    let mut by_tenure: BTreeMap<u64, (Time, Time)> = BTreeMap::new();
    for c in commits {
        let e = by_tenure.entry(c.tenure).or_insert(c.window);
        e.0 = e.0.min(c.window.0);
        e.1 = e.1.max(c.window.1);
    }
    let mut out = Vec::new();
    for a in commits {
        for b in commits {
            if a.tenure < b.tenure && a.window.1 >= b.window.0 {
                out.push((a.clone(), b.clone()));
                if out.len() > 10 {
                    return out;
                }
            }
        }
    }
    out
}

/// Three locator servers, `contenders` instances, random partitions,
/// heals, and contender crashes over 3 simulated seconds.
pub fn run_safety_schedule(seed: u64, mode: OwnershipMode) -> SafetyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10ca_7085);
    let n_servers = 3usize;
    let contenders = rng.gen_range(2..=4usize);
    let link = LinkModel {
        base_latency: ms(2),
        jitter: ms(rng.gen_range(0..=6)),
        drop_probability: rng.gen_range(0.0..0.05),
        overrides: BTreeMap::new(),
    };
    let mut world: World<SafetyNode> = World::new(seed, link);
    let servers: Vec<ProcessId> = (0..n_servers as u32).map(ProcessId).collect();
    let peers: Vec<InstanceRef> =
        (0..contenders).map(|i| InstanceRef::new(&format!("c{i}.sim"), 9000, "db", &format!("c{i}"))).collect();
    let params = SafetyParams::new(mode);
    for s in &servers {
        world.spawn(*s, |_, _| SafetyNode::Locator);
    }
    for (i, me) in peers.iter().enumerate() {
        let (me, peers, servers) = (me.clone(), peers.clone(), servers.clone());
        world.spawn(ProcessId(10 + i as u32), move |_, _| {
            SafetyNode::Contender(Box::new(Contender {
                index: i,
                me: me.clone(),
                peers: peers.clone(),
                servers: servers.clone(),
                params,
                call_seq: 0,
                current_call: None,
                pending: None,
                st: None,
                tenure: None,
                serving: false,
                lease_until: 0,
                ping_seq: 0,
                awaiting_pong: None,
                recreating: false,
                takeover_failed: None,
                tick_gen: 0,
            }))
        });
    }
    let all: Vec<ProcessId> = servers.iter().copied().chain((0..contenders as u32).map(|i| ProcessId(10 + i))).collect();

    let horizon = ms(3000);
    let mut t = ms(100);
    while t < horizon {
        world.run_until(t);
        match rng.gen_range(0..10) {
            0..=4 => {
                let mut groups = vec![Vec::new(), Vec::new()];
                for p in &all {
                    groups[rng.gen_range(0..2)].push(*p);
                }
                world.partition(&groups);
            }
            5..=6 => world.heal(),
            7 => {
                let victim = ProcessId(10 + rng.gen_range(0..contenders as u32));
                world.kill(victim);
            }
            8 => {
                for i in 0..contenders as u32 {
                    world.restart(ProcessId(10 + i));
                }
            }
            _ => {}
        }
        t += ms(rng.gen_range(20..=300));
    }
    world.run_until(horizon);

    let mut commits: Vec<CommitRecord> = Vec::new();
    let mut takeovers = 0;
    for i in 0..contenders as u32 {
        if let Some(d) = world.disk(ProcessId(10 + i)) {
            commits.extend(d.commits.iter().cloned());
            takeovers += d.takeovers.len();
        }
    }
    commits.sort_by_key(|c| (c.window.1, c.instance));
    let violations = find_violations(&commits);
    SafetyReport { mode, commits, violations, takeovers }
}

/// A hand-built split: the system table is cut off from the locators and
/// the other instance, which takes over. Without confirmation the old
/// system table keeps committing.
pub fn run_crafted_split(mode: OwnershipMode) -> SafetyReport {
    let mut world: World<SafetyNode> = World::new(7, LinkModel::fixed(ms(2)));
    let servers: Vec<ProcessId> = (0..3).map(ProcessId).collect();
    let peers: Vec<InstanceRef> = (0..2).map(|i| InstanceRef::new(&format!("c{i}.sim"), 9000, "db", &format!("c{i}"))).collect();
    let params = SafetyParams::new(mode);
    for s in &servers {
        world.spawn(*s, |_, _| SafetyNode::Locator);
    }
    for (i, me) in peers.iter().enumerate() {
        let (me, peers, servers) = (me.clone(), peers.clone(), servers.clone());
        world.spawn(ProcessId(10 + i as u32), move |_, _| {
            SafetyNode::Contender(Box::new(Contender {
                index: i,
                me: me.clone(),
                peers: peers.clone(),
                servers: servers.clone(),
                params,
                call_seq: 0,
                current_call: None,
                pending: None,
                st: None,
                tenure: None,
                serving: false,
                lease_until: 0,
                ping_seq: 0,
                awaiting_pong: None,
                recreating: false,
                takeover_failed: None,
                tick_gen: 0,
            }))
        });
    }
    world.run_until(ms(400));
    let st_index = (0..2).find(|i| matches!(world.actor(ProcessId(10 + i)), Some(SafetyNode::Contender(c)) if c.tenure.is_some()));
    let Some(st) = st_index else {
        return SafetyReport { mode, commits: Vec::new(), violations: Vec::new(), takeovers: 0 };
    };
    let other = 1 - st;
    world.partition(&[vec![ProcessId(10 + st)], vec![ProcessId(10 + other), servers[0], servers[1], servers[2]]]);
    world.run_until(ms(1200));
    world.heal();
    world.run_until(ms(1500));
    let mut commits: Vec<CommitRecord> = Vec::new();
    let mut takeovers = 0;
    for i in 0..2 {
        if let Some(d) = world.disk(ProcessId(10 + i)) {
            commits.extend(d.commits.iter().cloned());
            takeovers += d.takeovers.len();
        }
    }
    commits.sort_by_key(|c| (c.window.1, c.instance));
    let violations = find_violations(&commits);
    SafetyReport { mode, commits, violations, takeovers }
}

impl fmt::Display for OwnershipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OwnershipMode::PerCommit => "per-commit",
            OwnershipMode::Lease => "lease",
            OwnershipMode::Unchecked => "unchecked",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(i: usize) -> InstanceRef {
        InstanceRef::new(&format!("m{i}.sim"), 9090, "db", &format!("i{i}"))
    }

    fn req(kind: LocatorRequest, last: Option<u64>) -> Request {
        Request { kind, last_seen_update_number: last }
    }

    #[test]
    fn fresh_server_is_empty() {
        let mut s = LocatorState::default();
        let r = s.handle(0, &req(LocatorRequest::GetActiveSystemTableLocation, None));
        assert_eq!(r.result.unwrap().active, None);
        assert_eq!(r.update_number, 0);
    }

    #[test]
    fn stale_mutation_rejected() {
        let mut s = LocatorState { update_number: 5, ..Default::default() };
        let r = s.handle(0, &req(LocatorRequest::SetActiveSystemTable { uri: inst(1), replicas: vec![] }, Some(3)));
        assert_eq!(r.result, Err(LocatorError::StaleRequest { current: 5 }));
        assert_eq!(s.update_number, 5);
        let r = s.handle(0, &req(LocatorRequest::SetActiveSystemTable { uri: inst(1), replicas: vec![] }, Some(5)));
        assert!(r.result.is_ok());
        assert_eq!(r.update_number, 6);
    }

    #[test]
    fn creation_lock_is_exclusive_until_expiry() {
        let mut s = LocatorState::default();
        let a = req(LocatorRequest::ObtainLockToCreateSystemTable { requester: inst(1) }, None);
        let b = req(LocatorRequest::ObtainLockToCreateSystemTable { requester: inst(2) }, None);
        assert!(s.handle(0, &a).result.is_ok());
        assert!(matches!(s.handle(ms(1), &b).result, Err(LocatorError::LockHeld { .. })));
        assert!(s.handle(CREATION_LOCK_TIMEOUT + 1, &b).result.is_ok());
    }

    #[test]
    fn creation_commit_needs_lock() {
        let mut s = LocatorState::default();
        let commit = |n| req(LocatorRequest::CommitSystemTableCreation { uri: inst(1), replicas: vec![] }, Some(n));
        assert_eq!(s.handle(0, &commit(0)).result, Err(LocatorError::NotLockHolder));
        let r = s.handle(0, &req(LocatorRequest::ObtainLockToCreateSystemTable { requester: inst(1) }, None));
        assert!(s.handle(0, &commit(r.update_number)).result.is_ok());
        assert_eq!(s.registration.active, Some(inst(1)));
        let again = s.handle(0, &req(LocatorRequest::ObtainLockToCreateSystemTable { requester: inst(2) }, None));
        assert_eq!(again.result, Err(LocatorError::AlreadyActive));
    }

    #[test]
    fn lease_blocks_replacement_until_expiry() {
        let mut s = LocatorState::default();
        s.handle(0, &req(LocatorRequest::ObtainLockToCreateSystemTable { requester: inst(1) }, None));
        s.handle(0, &req(LocatorRequest::CommitSystemTableCreation { uri: inst(1), replicas: vec![] }, Some(1)));
        let r = s.handle(0, &req(LocatorRequest::GrantLease { holder: inst(1), duration: LEASE_DURATION }, None));
        assert!(r.result.is_ok());
        let take = |n| req(LocatorRequest::SetActiveSystemTable { uri: inst(2), replicas: vec![] }, Some(n));
        let n = s.update_number;
        assert!(matches!(s.handle(ms(5000), &take(n)).result, Err(LocatorError::LeaseHeld { .. })));
        assert!(s.handle(LEASE_DURATION, &take(n)).result.is_ok());
    }

    #[test]
    fn persisted_format_round_trip() {
        let s = LocatorState {
            registration: Registration { active: Some(inst(1)), replicas: vec![inst(2), inst(3)] },
            update_number: 12,
            ..Default::default()
        };
        let line = s.persisted_line();
        assert_eq!(line.split('\t').count(), 3);
        assert!(line.starts_with("12\tjdbc:d2o:tcp://m1.sim:9090/db/i1\t"));
        assert_eq!(LocatorState::parse_persisted(&line).unwrap(), s);
        let empty = LocatorState::default();
        assert_eq!(LocatorState::parse_persisted(&empty.persisted_line()).unwrap(), empty);
    }

    #[test]
    fn descriptor_order_is_kept() {
        let d = DescriptorFile::parse("b:1\n\na:2\n# comment\nc:3\n");
        assert_eq!(d.locator_uris, vec!["b:1", "a:2", "c:3"]);
        assert_eq!(DescriptorFile::parse(&d.render()), d);
    }

    /// Drive a quorum call against in-memory servers; `None` is an
    /// unreachable server.
    fn drive(call: &mut QuorumCall, servers: &mut [Option<LocatorState>], now: Time) -> Result<QuorumResult, LocatorError> {
        let mut step = call.start();
        loop {
            match step {
                QuorumStep::Send { server, request } => {
                    step = match &mut servers[server] {
                        Some(s) => call.on_response(s.handle(now, &request)),
                        None => call.on_timeout(),
                    }
                }
                QuorumStep::Done(r) => return r,
            }
        }
    }

    #[test]
    fn quorum_majorities() {
        let mut servers = vec![Some(LocatorState::default()), None, Some(LocatorState::default())];
        assert!(drive(&mut QuorumCall::read(3), &mut servers, 0).is_ok());
        let mut lonely = vec![Some(LocatorState::default()), None, None];
        assert_eq!(drive(&mut QuorumCall::read(3), &mut lonely, 0), Err(LocatorError::NoMajority));
    }

    #[test]
    fn quorum_mutation_updates_all_reachable() {
        let mut servers = vec![Some(LocatorState::default()); 3];
        let read = drive(&mut QuorumCall::read_all(3), &mut servers, 0).unwrap();
        let m = LocatorRequest::SetActiveSystemTable { uri: inst(1), replicas: vec![] };
        drive(&mut QuorumCall::mutate(3, m, read.update_numbers), &mut servers, 0).unwrap();
        assert!(servers.iter().all(|s| s.as_ref().unwrap().registration.active == Some(inst(1))));
    }

    /// Oracle: enumerate every interleaving of two clients' sequential lock
    /// passes (each step is "contact server k"), with every reachability
    /// pattern. No interleaving gives both a majority.
    #[test]
    fn racing_lock_clients_never_both_win() {
        fn interleavings(a: usize, b: usize) -> Vec<Vec<bool>> {
            if a == 0 && b == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            if a > 0 {
                for mut rest in interleavings(a - 1, b) {
                    rest.insert(0, true);
                    out.push(rest);
                }
            }
            if b > 0 {
                for mut rest in interleavings(a, b - 1) {
                    rest.insert(0, false);
                    out.push(rest);
                }
            }
            out
        }
        let mut both_won = 0;
        let mut one_won = 0;
        for order in interleavings(3, 3) {
            for reach_a in 0..8u8 {
                for reach_b in 0..8u8 {
                    let mut servers = vec![LocatorState::default(); 3];
                    let mut calls = [QuorumCall::obtain_lock(3, inst(1)), QuorumCall::obtain_lock(3, inst(2))];
                    let reach = [reach_a, reach_b];
                    let mut steps = [calls[0].start(), calls[1].start()];
                    let mut done: [Option<bool>; 2] = [None, None];
                    for &turn_a in &order {
                        let who = usize::from(!turn_a);
                        if let QuorumStep::Send { server, request } = steps[who].clone() {
                            steps[who] = if reach[who] & (1 << server) != 0 {
                                calls[who].on_response(servers[server].handle(0, &request))
                            } else {
                                calls[who].on_timeout()
                            };
                        }
                        if let QuorumStep::Done(r) = &steps[who] {
                            done[who] = Some(r.is_ok());
                        }
                    }
                    let wins = done.iter().filter(|d| **d == Some(true)).count();
                    assert!(wins <= 1, "order {order:?} reach {reach:?}");
                    if wins == 2 {
                        both_won += 1;
                    }
                    if wins == 1 && reach_a == 7 && reach_b == 7 {
                        one_won += 1;
                    }
                }
            }
        }
        assert_eq!(both_won, 0);
        assert_eq!(one_won, 20);
    }

    /// Runs the bootstrap machine against in-memory servers and a fixed
    /// set of live instances.
    fn boot(me: InstanceRef, servers: &mut [Option<LocatorState>], live: &[InstanceRef]) -> BootOutcome {
        let mut b = Bootstrap::new(me, servers.len(), None, ms(10));
        let mut a = b.start();
        loop {
            a = match a {
                BootAction::Call { server, request } => match &mut servers[server] {
                    Some(s) => b.handle(BootEvent::Locator(s.handle(0, &request))),
                    None => b.handle(BootEvent::LocatorTimeout),
                },
                BootAction::Ping(st) => {
                    b.handle(if live.contains(&st) { BootEvent::PingOk } else { BootEvent::PingFailed })
                }
                BootAction::RequestRecreation { holder, .. } => {
                    if live.contains(&holder) {
                        b.handle(BootEvent::Recreated(holder))
                    } else {
                        b.handle(BootEvent::RecreationFailed)
                    }
                }
                BootAction::CreateLocally => b.handle(BootEvent::Created),
                BootAction::Wait(_) => b.handle(BootEvent::Waited),
                BootAction::Done(o) => return o,
            };
        }
    }

    #[test]
    fn bootstrap_scenarios() {
        let mut servers = vec![Some(LocatorState::default()); 3];
        assert_eq!(boot(inst(0), &mut servers, &[]), BootOutcome::CreatedSystemTable);
        assert!(servers.iter().all(|s| s.as_ref().unwrap().registration.active == Some(inst(0))));

        assert_eq!(boot(inst(1), &mut servers, &[inst(0)]), BootOutcome::Joined { system_table: inst(0) });

        for s in servers.iter_mut().flatten() {
            s.registration.replicas = vec![inst(2)];
        }
        assert_eq!(
            boot(inst(1), &mut servers, &[inst(2)]),
            BootOutcome::RestartedSystemTable { system_table: inst(2) }
        );
        assert_eq!(boot(inst(1), &mut servers, &[]), BootOutcome::CannotJoin(Scenario::Unresponsive));

        let mut minority = vec![Some(LocatorState::default()), None, None];
        assert_eq!(boot(inst(1), &mut minority, &[]), BootOutcome::CannotJoin(Scenario::MinorityReachable));
    }

    #[test]
    fn confirm_ownership_verdicts() {
        let me = inst(1);
        let ok = Ok(QuorumResult {
            registration: Registration { active: Some(me.clone()), replicas: vec![] },
            update_numbers: BTreeMap::new(),
        });
        assert_eq!(judge_ownership(&me, &ok, 5, 10), Ownership::Confirmed);
        assert_eq!(judge_ownership(&me, &ok, 11, 10), Ownership::Unconfirmed);
        let other = Ok(QuorumResult {
            registration: Registration { active: Some(inst(2)), replicas: vec![] },
            update_numbers: BTreeMap::new(),
        });
        assert_eq!(judge_ownership(&me, &other, 5, 10), Ownership::Deposed);
        assert_eq!(judge_ownership(&me, &Err(LocatorError::NoMajority), 5, 10), Ownership::Unconfirmed);
    }

    #[test]
    fn crafted_split_separates_modes() {
        let cp = run_crafted_split(OwnershipMode::PerCommit);
        assert!(cp.is_safe(), "{:?}", cp.violations.first());
        assert!(cp.takeovers >= 2);
        let ca = run_crafted_split(OwnershipMode::Unchecked);
        assert!(!ca.is_safe());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn update_numbers_only_grow(ops in proptest::collection::vec((0u8..5, 0usize..3, proptest::option::of(0u64..6)), 1..40)) {
            let mut s = LocatorState::default();
            for (i, (kind, who, last)) in ops.into_iter().enumerate() {
                let kind = match kind {
                    0 => LocatorRequest::GetState,
                    1 => LocatorRequest::SetActiveSystemTable { uri: inst(who), replicas: vec![] },
                    2 => LocatorRequest::SetSystemTableReplicaLocations { replicas: vec![inst(who)] },
                    3 => LocatorRequest::ObtainLockToCreateSystemTable { requester: inst(who) },
                    _ => LocatorRequest::CommitSystemTableCreation { uri: inst(who), replicas: vec![] },
                };
                let before = s.clone();
                let r = s.handle(ms(i as u64), &req(kind.clone(), last));
                if r.result.is_ok() && !kind.is_read() {
                    prop_assert_eq!(s.update_number, before.update_number + 1);
                } else {
                    prop_assert_eq!(s.update_number, before.update_number);
                    prop_assert_eq!(&s.registration, &before.registration);
                }
                if let Err(LocatorError::StaleRequest { .. }) = r.result {
                    prop_assert_ne!(last, Some(before.update_number));
                }
            }
        }

        #[test]
        fn per_commit_mode_is_safe(seed: u64) {
            let r = run_safety_schedule(seed, OwnershipMode::PerCommit);
            prop_assert!(r.is_safe(), "{:?}", r.violations.first());
        }
    }
}
