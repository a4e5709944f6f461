//! Two- and three-phase atomic commit.
//!
//! [`Coordinator`] and [`Participant`] are sans-IO state machines: they take
//! messages and timeouts and return the messages to send. The engine drives
//! them inside its instances; [`run_commit_sim`] drives them on a dedicated
//! simulated network for message accounting and failure experiments.
//!
//! A transaction may be started by one of its participants (the
//! *initiator*), which sends `Begin` with its own vote to the coordinator
//! instead of receiving a `Prepare`. Failure-free runs then cost
//! `3N - 1` messages under 2PC and `5N - 3` under 3PC.

use std::collections::{BTreeMap, BTreeSet};

use crate::simnet::{ms, Actor, Ctx, LinkModel, ProcessId, Time, World};

pub type TxnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    TwoPhase,
    ThreePhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Vote {
    Prepared,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Commit,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParticipantState {
    /// Has not seen the transaction yet.
    Idle,
    /// Voted prepared, outcome unknown.
    Prepared,
    PreCommitted,
    Committed,
    Aborted,
    /// Prepared, coordinator unreachable, no way to decide.
    Blocked,
}

impl ParticipantState {
    pub fn is_final(self) -> bool {
        matches!(self, ParticipantState::Committed | ParticipantState::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CommitMsg {
    Begin { txn: TxnId, vote: Vote, participants: Vec<ProcessId> },
    Prepare { txn: TxnId, participants: Vec<ProcessId> },
    VoteReply { txn: TxnId, vote: Vote },
    PreCommit { txn: TxnId },
    Ack { txn: TxnId },
    Commit { txn: TxnId },
    Abort { txn: TxnId },
    DecisionQuery { txn: TxnId },
    StateQuery { txn: TxnId },
    StateReply { txn: TxnId, state: ParticipantState },
}

impl CommitMsg {
    pub fn txn(&self) -> TxnId {
        match self {
            CommitMsg::Begin { txn, .. }
            | CommitMsg::Prepare { txn, .. }
            | CommitMsg::VoteReply { txn, .. }
            | CommitMsg::PreCommit { txn }
            | CommitMsg::Ack { txn }
            | CommitMsg::Commit { txn }
            | CommitMsg::Abort { txn }
            | CommitMsg::DecisionQuery { txn }
            | CommitMsg::StateQuery { txn }
            | CommitMsg::StateReply { txn, .. } => *txn,
        }
    }
}

pub type Outbox = Vec<(ProcessId, CommitMsg)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinatorPhase {
    Waiting,
    Collecting,
    PreCommitting,
    Done,
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    pub txn: TxnId,
    pub protocol: Protocol,
    pub participants: Vec<ProcessId>,
    pub initiator: Option<ProcessId>,
    pub phase: CoordinatorPhase,
    pub votes: BTreeMap<ProcessId, Vote>,
    acks: BTreeSet<ProcessId>,
    decision: Option<Decision>,
}

impl Coordinator {
    pub fn new(txn: TxnId, protocol: Protocol, participants: Vec<ProcessId>, initiator: Option<ProcessId>) -> Self {
        assert!(!participants.is_empty(), "a commit needs at least one participant");
        Coordinator {
            txn,
            protocol,
            participants,
            initiator,
            phase: CoordinatorPhase::Waiting,
            votes: BTreeMap::new(),
            acks: BTreeSet::new(),
            decision: None,
        }
    }

    pub fn decision(&self) -> Option<Decision> {
        self.decision
    }

    /// Send PREPARE to every participant that is not the initiator.
    pub fn start(&mut self) -> Outbox {
        self.phase = CoordinatorPhase::Collecting;
        let msg = CommitMsg::Prepare { txn: self.txn, participants: self.participants.clone() };
        let out: Outbox = self
            .participants
            .iter()
            .filter(|p| Some(**p) != self.initiator)
            .map(|p| (*p, msg.clone()))
            .collect();
        if out.is_empty() {
            return self.tally();
        }
        out
    }

    pub fn on_message(&mut self, from: ProcessId, msg: CommitMsg) -> Outbox {
        match msg {
            CommitMsg::Begin { vote, .. } if self.phase == CoordinatorPhase::Waiting => {
                self.votes.insert(from, vote);
                if vote == Vote::Aborted {
                    return self.decide(Decision::Abort);
                }
                self.start()
            }
            CommitMsg::VoteReply { vote, .. } if self.phase == CoordinatorPhase::Collecting => {
                self.votes.insert(from, vote);
                if vote == Vote::Aborted {
                    return self.decide(Decision::Abort);
                }
                self.tally()
            }
            CommitMsg::Ack { .. } if self.phase == CoordinatorPhase::PreCommitting => {
                self.acks.insert(from);
                if self.acks.len() == self.precommit_targets().len() {
                    return self.decide(Decision::Commit);
                }
                Vec::new()
            }
            CommitMsg::DecisionQuery { txn } => match self.decision {
                Some(Decision::Commit) => vec![(from, CommitMsg::Commit { txn })],
                Some(Decision::Abort) => vec![(from, CommitMsg::Abort { txn })],
                None => Vec::new(),
            },
            _ => Vec::new(),
        }
    }

    fn precommit_targets(&self) -> Vec<ProcessId> {
        self.participants.iter().copied().filter(|p| Some(*p) != self.initiator).collect()
    }

    fn tally(&mut self) -> Outbox {
        if self.votes.len() < self.participants.len() {
            return Vec::new();
        }
        match self.protocol {
            Protocol::TwoPhase => self.decide(Decision::Commit),
            Protocol::ThreePhase => {
                let targets = self.precommit_targets();
                if targets.is_empty() {
                    return self.decide(Decision::Commit);
                }
                self.phase = CoordinatorPhase::PreCommitting;
                targets.into_iter().map(|p| (p, CommitMsg::PreCommit { txn: self.txn })).collect()
            }
        }
    }

    fn decide(&mut self, d: Decision) -> Outbox {
        self.decision = Some(d);
        self.phase = CoordinatorPhase::Done;
        let txn = self.txn;
        match d {
            Decision::Commit => self.participants.iter().map(|p| (*p, CommitMsg::Commit { txn })).collect(),
            Decision::Abort => self
                .participants
                .iter()
                .filter(|p| self.votes.get(p) != Some(&Vote::Aborted))
                .map(|p| (*p, CommitMsg::Abort { txn }))
                .collect(),
        }
    }

    /// Vote collection timed out: abort. A missing pre-commit ack means a
    /// crashed participant; everyone voted prepared, so commit.
    pub fn on_timeout(&mut self) -> Outbox {
        match self.phase {
            CoordinatorPhase::Waiting | CoordinatorPhase::Collecting => self.decide(Decision::Abort),
            CoordinatorPhase::PreCommitting => self.decide(Decision::Commit),
            CoordinatorPhase::Done => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Participant {
    pub txn: TxnId,
    pub protocol: Protocol,
    pub me: ProcessId,
    pub coordinator: ProcessId,
    pub vote: Vote,
    pub state: ParticipantState,
    peers: Vec<ProcessId>,
    /// 3PC termination in progress: the coordinator is presumed dead and
    /// late pre-commits are ignored.
    terminating: bool,
    replies: BTreeMap<ProcessId, ParticipantState>,
    queried_coordinator: bool,
}

impl Participant {
    pub fn new(me: ProcessId, coordinator: ProcessId, txn: TxnId, protocol: Protocol, vote: Vote) -> Self {
        Participant {
            txn,
            protocol,
            me,
            coordinator,
            vote,
            state: ParticipantState::Idle,
            peers: Vec::new(),
            terminating: false,
            replies: BTreeMap::new(),
            queried_coordinator: false,
        }
    }

    /// Start the transaction as its initiator.
    pub fn initiate(&mut self, participants: Vec<ProcessId>) -> Outbox {
        self.peers = participants.iter().copied().filter(|p| *p != self.me).collect();
        self.state = match self.vote {
            Vote::Prepared => ParticipantState::Prepared,
            Vote::Aborted => ParticipantState::Aborted,
        };
        vec![(self.coordinator, CommitMsg::Begin { txn: self.txn, vote: self.vote, participants })]
    }

    /// Rebuild after a restart from a durably recorded prepared vote.
    pub fn recover(&mut self) -> Outbox {
        if self.state == ParticipantState::Prepared {
            self.queried_coordinator = true;
            return vec![(self.coordinator, CommitMsg::DecisionQuery { txn: self.txn })];
        }
        Vec::new()
    }

    /// Whether the participant is waiting on something and needs a timer.
    pub fn awaiting(&self) -> bool {
        matches!(self.state, ParticipantState::Prepared | ParticipantState::PreCommitted)
    }

    pub fn on_message(&mut self, from: ProcessId, msg: CommitMsg) -> Outbox {
        let txn = self.txn;
        match msg {
            CommitMsg::Prepare { participants, .. } => {
                self.peers = participants.into_iter().filter(|p| *p != self.me).collect();
                let vote = if self.state == ParticipantState::Idle && self.vote == Vote::Prepared {
                    self.state = ParticipantState::Prepared;
                    Vote::Prepared
                } else {
                    if !self.state.is_final() {
                        self.state = ParticipantState::Aborted;
                    }
                    Vote::Aborted
                };
                vec![(from, CommitMsg::VoteReply { txn, vote })]
            }
            CommitMsg::PreCommit { .. } => {
                if self.state == ParticipantState::Prepared && !self.terminating {
                    self.state = ParticipantState::PreCommitted;
                    return vec![(from, CommitMsg::Ack { txn })];
                }
                Vec::new()
            }
            CommitMsg::Commit { .. } => {
                if self.state != ParticipantState::Aborted {
                    self.state = ParticipantState::Committed;
                }
                Vec::new()
            }
            CommitMsg::Abort { .. } => {
                if self.state != ParticipantState::Committed {
                    self.state = ParticipantState::Aborted;
                }
                Vec::new()
            }
            CommitMsg::StateQuery { .. } => {
                match self.state {
                    ParticipantState::Idle => self.state = ParticipantState::Aborted,
                    ParticipantState::Prepared => self.terminating = true,
                    _ => {}
                }
                vec![(from, CommitMsg::StateReply { txn, state: self.state })]
            }
            CommitMsg::StateReply { state, .. } => {
                if self.terminating {
                    self.replies.insert(from, state);
                    if self.replies.len() == self.peers.len() {
                        self.resolve_termination(true);
                    }
                }
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn resolve_termination(&mut self, complete: bool) {
        if self.state != ParticipantState::Prepared && self.state != ParticipantState::Blocked {
            return;
        }
        let any = |s: &[ParticipantState]| self.replies.values().any(|r| s.contains(r));
        self.state = if any(&[ParticipantState::Committed, ParticipantState::PreCommitted]) {
            ParticipantState::Committed
        } else if any(&[ParticipantState::Aborted, ParticipantState::Idle]) || complete {
            ParticipantState::Aborted
        } else {
            ParticipantState::Blocked
        };
    }

    pub fn on_timeout(&mut self) -> Outbox {
        match (self.protocol, self.state) {
            (Protocol::TwoPhase, ParticipantState::Prepared) => {
                if self.queried_coordinator {
                    self.state = ParticipantState::Blocked;
                    Vec::new()
                } else {
                    self.queried_coordinator = true;
                    vec![(self.coordinator, CommitMsg::DecisionQuery { txn: self.txn })]
                }
            }
            (Protocol::ThreePhase, ParticipantState::PreCommitted) => {
                self.state = ParticipantState::Committed;
                Vec::new()
            }
            (Protocol::ThreePhase, ParticipantState::Prepared) => {
                if self.terminating && !self.replies.is_empty() || self.peers.is_empty() {
                    let complete = self.replies.len() == self.peers.len();
                    self.resolve_termination(complete);
                    return Vec::new();
                }
                if self.terminating && self.replies.is_empty() && self.queried_coordinator {
                    self.state = ParticipantState::Blocked;
                    return Vec::new();
                }
                self.terminating = true;
                self.queried_coordinator = true;
                self.peers.iter().map(|p| (*p, CommitMsg::StateQuery { txn: self.txn })).collect()
            }
            _ => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Stand-alone simulation
// ---------------------------------------------------------------------------

/// Where to crash a process during a simulated commit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillPoint {
    /// The coordinator crashes right after emitting this many messages.
    CoordinatorAfterSends(usize),
    /// Participant `index` (0-based) crashes after emitting this many
    /// messages.
    ParticipantAfterSends(usize, usize),
    /// Crash participant `index` at an absolute time.
    ParticipantAt(usize, Time),
}

#[derive(Debug, Clone)]
pub struct CommitSimConfig {
    pub protocol: Protocol,
    pub votes: Vec<Vote>,
    pub kill: Option<KillPoint>,
    pub seed: u64,
    pub link: LinkModel,
    /// Restart a crashed coordinator after this delay.
    pub coordinator_restart_after: Option<Time>,
}

impl CommitSimConfig {
    pub fn failure_free(protocol: Protocol, n: usize) -> Self {
        CommitSimConfig {
            protocol,
            votes: vec![Vote::Prepared; n],
            kill: None,
            seed: 1,
            link: LinkModel::default(),
            coordinator_restart_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReport {
    pub protocol: Protocol,
    pub messages_sent: u64,
    pub decision: Option<Decision>,
    pub outcomes: Vec<ParticipantState>,
    /// Participants that were down at the end of the run.
    pub crashed: Vec<bool>,
}

impl CommitReport {
    /// Committed if every live participant committed, Aborted if every one
    /// aborted, otherwise Blocked.
    pub fn outcome(&self) -> ParticipantState {
        let live: Vec<_> = self.outcomes.iter().zip(&self.crashed).filter(|(_, c)| !**c).map(|(o, _)| *o).collect();
        if !live.is_empty() && live.iter().all(|o| *o == ParticipantState::Committed) {
            ParticipantState::Committed
        } else if !live.is_empty() && live.iter().all(|o| *o == ParticipantState::Aborted) {
            ParticipantState::Aborted
        } else {
            ParticipantState::Blocked
        }
    }

    pub fn agreement_holds(&self) -> bool {
        let c = self.outcomes.contains(&ParticipantState::Committed);
        let a = self.outcomes.contains(&ParticipantState::Aborted);
        !(c && a)
    }
}

pub fn vote_timeout(link: &LinkModel) -> Time {
    10 * link.base_latency.max(ms(1))
}

fn participant_timeout(link: &LinkModel) -> Time {
    2 * vote_timeout(link) + 2 * (link.base_latency + link.jitter)
}

#[derive(Debug, Clone, Hash)]
enum SimMsg {
    Protocol(CommitMsg),
    Timeout,
}

#[derive(Default)]
struct SimDisk {
    /// Durable participant record, written before voting.
    participant: Option<ParticipantState>,
    decision: Option<Decision>,
}

struct Role {
    coordinator: Option<Coordinator>,
    participant: Option<Participant>,
    budget: Option<usize>,
    vote_timeout: Time,
    participant_timeout: Time,
}

impl Role {
    fn emit(&mut self, ctx: &mut Ctx<'_, Self>, out: Outbox) {
        for (to, msg) in out {
            if let Some(b) = &mut self.budget {
                if *b == 0 {
                    ctx.halt();
                    return;
                }
                *b -= 1;
            }
            ctx.send(to, SimMsg::Protocol(msg));
        }
        if self.budget == Some(0) {
            ctx.halt();
        }
    }

    fn persist(&self, ctx: &mut Ctx<'_, Self>) {
        if let Some(p) = &self.participant {
            ctx.disk.participant = Some(p.state);
        }
        if let Some(c) = &self.coordinator {
            ctx.disk.decision = c.decision();
        }
    }
}

impl Actor for Role {
    type Msg = SimMsg;
    type Disk = SimDisk;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Self>) {
        if let Some(p) = &mut self.participant {
            if let Some(state) = ctx.disk.participant {
                p.state = state;
                let out = p.recover();
                let t = self.participant_timeout;
                self.emit(ctx, out);
                ctx.set_timer(t, SimMsg::Timeout);
            }
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, from: ProcessId, msg: SimMsg) {
        let out = match msg {
            SimMsg::Timeout => {
                let mut out = Vec::new();
                if let Some(c) = &mut self.coordinator {
                    out.extend(c.on_timeout());
                }
                if let Some(p) = &mut self.participant {
                    out.extend(p.on_timeout());
                    if p.awaiting() {
                        ctx.set_timer(self.participant_timeout, SimMsg::Timeout);
                    }
                }
                out
            }
            SimMsg::Protocol(m) => {
                let mut out = Vec::new();
                if let Some(c) = &mut self.coordinator {
                    let before = c.phase;
                    out.extend(c.on_message(from, m.clone()));
                    if c.phase != before && c.phase != CoordinatorPhase::Done {
                        ctx.set_timer(self.vote_timeout, SimMsg::Timeout);
                    }
                }
                if let Some(p) = &mut self.participant {
                    let before = p.state;
                    let starting_termination = matches!(m, CommitMsg::StateQuery { .. });
                    out.extend(p.on_message(from, m));
                    if (p.state != before || starting_termination) && p.awaiting() {
                        ctx.set_timer(self.participant_timeout, SimMsg::Timeout);
                    }
                }
                out
            }
        };
        self.persist(ctx);
        self.emit(ctx, out);
    }
}

/// Run one transaction over `votes.len()` participants. The coordinator
/// is process 0; participant `i` is process `i + 1`; participant 0
/// initiates.
pub fn run_commit_sim(cfg: &CommitSimConfig) -> CommitReport {
    let n = cfg.votes.len();
    assert!(n >= 1);
    let protocol = cfg.protocol;
    let coord = ProcessId(0);
    let parts: Vec<ProcessId> = (1..=n as u32).map(ProcessId).collect();
    let vt = vote_timeout(&cfg.link);
    let pt = participant_timeout(&cfg.link);
    let mut world: World<Role> = World::new(cfg.seed, cfg.link.clone());

    let coord_budget = match cfg.kill {
        Some(KillPoint::CoordinatorAfterSends(k)) => Some(k),
        _ => None,
    };
    let coordinator_boot = {
        let parts = parts.clone();
        let first = parts[0];
        move |_: ProcessId, disk: &SimDisk| {
            let mut c = Coordinator::new(1, protocol, parts.clone(), Some(first));
            if let Some(d) = disk.decision {
                c.decision = Some(d);
                c.phase = CoordinatorPhase::Done;
            }
            Role { coordinator: Some(c), participant: None, budget: None, vote_timeout: vt, participant_timeout: pt }
        }
    };
    world.spawn(coord, coordinator_boot);
    if let Some(b) = coord_budget {
        set_budget(&mut world, coord, b);
    }
    for (i, p) in parts.iter().enumerate() {
        let vote = cfg.votes[i];
        world.spawn(*p, move |id, _| Role {
            coordinator: None,
            participant: Some(Participant::new(id, coord, 1, protocol, vote)),
            budget: None,
            vote_timeout: vt,
            participant_timeout: pt,
        });
        if let Some(KillPoint::ParticipantAfterSends(idx, k)) = cfg.kill {
            if idx == i {
                set_budget(&mut world, *p, k);
            }
        }
    }

    let all = parts.clone();
    world.invoke(parts[0], |role, ctx| {
        let p = role.participant.as_mut().expect("participant");
        let out = p.initiate(all);
        role.persist(ctx);
        let t = role.participant_timeout;
        role.emit(ctx, out);
        ctx.set_timer(t, SimMsg::Timeout);
    });

    let horizon = 40 * participant_timeout(&cfg.link);
    let mut restarted = false;
    loop {
        if let Some(KillPoint::ParticipantAt(idx, t)) = cfg.kill {
            if world.now() >= t {
                world.kill(parts[idx]);
            }
        }
        if let (Some(delay), false) = (cfg.coordinator_restart_after, restarted) {
            if !world.is_up(coord) {
                let at = world.now() + delay;
                world.run_until(at);
                world.restart(coord);
                restarted = true;
            }
        }
        match world.next_event_time() {
            Some(t) if t <= horizon => {
                world.step();
            }
            _ => break,
        }
    }

    let outcomes = parts
        .iter()
        .map(|p| match world.actor(*p).and_then(|r| r.participant.as_ref()) {
            Some(part) => match part.state {
                ParticipantState::Prepared | ParticipantState::PreCommitted => ParticipantState::Blocked,
                s => s,
            },
            None => world.disk(*p).and_then(|d| d.participant).unwrap_or(ParticipantState::Idle),
        })
        .collect();
    let crashed = parts.iter().map(|p| !world.is_up(*p)).collect();
    CommitReport {
        protocol,
        messages_sent: world.stats().sent,
        decision: world.disk(coord).and_then(|d| d.decision),
        outcomes,
        crashed,
    }
}

fn set_budget(world: &mut World<Role>, id: ProcessId, budget: usize) {
    world.invoke(id, |role, ctx| {
        role.budget = Some(budget);
        if budget == 0 {
            ctx.halt();
        }
    });
}

/// Number of coordinator sends before its COMMIT broadcast starts, in a
/// failure-free run with an initiator.
pub fn coordinator_sends_before_commit(protocol: Protocol, n: usize) -> usize {
    match protocol {
        Protocol::TwoPhase => n - 1,
        Protocol::ThreePhase => 2 * (n - 1),
    }
}

/// Expected failure-free message count.
pub fn expected_messages(protocol: Protocol, n: usize) -> u64 {
    let n = n as u64;
    match protocol {
        Protocol::TwoPhase => 3 * n - 1,
        Protocol::ThreePhase => 5 * n - 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(protocol: Protocol, votes: Vec<Vote>, kill: Option<KillPoint>) -> CommitSimConfig {
        CommitSimConfig { protocol, votes, kill, seed: 3, link: LinkModel::default(), coordinator_restart_after: None }
    }

    /// Independent count: one begin, a prepare and a vote per
    /// non-initiator, a commit per participant; 3PC adds a pre-commit and
    /// an ack per non-initiator.
    fn oracle(protocol: Protocol, n: u64) -> u64 {
        let base = 1 + (n - 1) + (n - 1) + n;
        match protocol {
            Protocol::TwoPhase => base,
            Protocol::ThreePhase => base + 2 * (n - 1),
        }
    }

    #[test]
    fn two_phase_three_participants() {
        let r = run_commit_sim(&CommitSimConfig::failure_free(Protocol::TwoPhase, 3));
        assert_eq!(r.messages_sent, 8);
        assert_eq!(r.outcome(), ParticipantState::Committed);
    }

    #[test]
    fn three_phase_three_participants() {
        let r = run_commit_sim(&CommitSimConfig::failure_free(Protocol::ThreePhase, 3));
        assert_eq!(r.messages_sent, 12);
        assert_eq!(r.outcome(), ParticipantState::Committed);
    }

    #[test]
    fn counts_match_oracle() {
        for n in 1..=8 {
            for p in [Protocol::TwoPhase, Protocol::ThreePhase] {
                let r = run_commit_sim(&CommitSimConfig::failure_free(p, n));
                assert_eq!(r.messages_sent, oracle(p, n as u64), "{p:?} n={n}");
                assert_eq!(r.messages_sent, expected_messages(p, n));
                assert_eq!(r.outcome(), ParticipantState::Committed);
            }
        }
    }

    #[test]
    fn one_abort_vote_aborts_everyone() {
        for p in [Protocol::TwoPhase, Protocol::ThreePhase] {
            for bad in 0..3 {
                let mut votes = vec![Vote::Prepared; 3];
                votes[bad] = Vote::Aborted;
                let r = run_commit_sim(&cfg(p, votes, None));
                assert_eq!(r.outcome(), ParticipantState::Aborted, "{p:?} bad={bad}");
            }
        }
    }

    #[test]
    fn two_phase_blocks_when_commit_is_split() {
        let n = 2;
        let kill = KillPoint::CoordinatorAfterSends(coordinator_sends_before_commit(Protocol::TwoPhase, n) + 1);
        let r = run_commit_sim(&cfg(Protocol::TwoPhase, vec![Vote::Prepared; n], Some(kill)));
        assert_eq!(r.outcomes, vec![ParticipantState::Committed, ParticipantState::Blocked]);
        assert!(r.agreement_holds());
    }

    #[test]
    fn blocked_participant_recovers_when_coordinator_returns() {
        let n = 3;
        let kill = KillPoint::CoordinatorAfterSends(coordinator_sends_before_commit(Protocol::TwoPhase, n) + 1);
        let mut c = cfg(Protocol::TwoPhase, vec![Vote::Prepared; n], Some(kill));
        c.coordinator_restart_after = Some(ms(10));
        let r = run_commit_sim(&c);
        assert_eq!(r.outcome(), ParticipantState::Committed, "{:?}", r.outcomes);
    }

    #[test]
    fn three_phase_survives_crash_after_precommit_round() {
        let n = 3;
        let kill = KillPoint::CoordinatorAfterSends(coordinator_sends_before_commit(Protocol::ThreePhase, n));
        let r = run_commit_sim(&cfg(Protocol::ThreePhase, vec![Vote::Prepared; n], Some(kill)));
        assert_eq!(r.outcomes, vec![ParticipantState::Committed; n]);
    }

    #[test]
    fn three_phase_never_blocks_after_decision() {
        for n in 1..=6 {
            let first = coordinator_sends_before_commit(Protocol::ThreePhase, n);
            // n = 1 has no pre-commit round; its decision needs no sends.
            for k in usize::from(n == 1)..n {
                let kill = KillPoint::CoordinatorAfterSends(first + k);
                let r = run_commit_sim(&cfg(Protocol::ThreePhase, vec![Vote::Prepared; n], Some(kill)));
                assert_eq!(r.outcome(), ParticipantState::Committed, "n={n} k={k} {:?}", r.outcomes);
                let two = coordinator_sends_before_commit(Protocol::TwoPhase, n);
                let kill2 = KillPoint::CoordinatorAfterSends(two + k);
                let r2 = run_commit_sim(&cfg(Protocol::TwoPhase, vec![Vote::Prepared; n], Some(kill2)));
                if k > 0 {
                    assert!(r2.outcomes.contains(&ParticipantState::Blocked), "2pc n={n} k={k}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn agreement_under_crash_stop(
            n in 1usize..6,
            protocol in prop_oneof![Just(Protocol::TwoPhase), Just(Protocol::ThreePhase)],
            aborts in proptest::collection::vec(proptest::bool::weighted(0.15), 6),
            victim in 0usize..7,
            sends in 0usize..20,
            seed: u64,
        ) {
            let votes = (0..n).map(|i| if aborts[i] { Vote::Aborted } else { Vote::Prepared }).collect();
            let kill = if victim >= n { KillPoint::CoordinatorAfterSends(sends) } else { KillPoint::ParticipantAfterSends(victim, sends % 4) };
            let mut c = cfg(protocol, votes, Some(kill));
            c.seed = seed;
            let r = run_commit_sim(&c);
            prop_assert!(r.agreement_holds(), "{:?}", r);
            if protocol == Protocol::ThreePhase && matches!(kill, KillPoint::CoordinatorAfterSends(_)) {
                prop_assert!(!r.outcomes.contains(&ParticipantState::Blocked), "{:?}", r);
            }
        }
    }
}
