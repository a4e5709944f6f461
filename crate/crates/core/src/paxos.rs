//! Single-decree Paxos and the Paxos atomic-commit variant.
//!
//! The roles are sans-IO: [`AcceptorState`], [`Proposer`] and [`Learner`]
//! consume messages and return replies. Three drivers run them on the
//! simulated network: randomized safety schedules
//! ([`run_safety_schedule`]), the two-proposer race with fixed link
//! latencies ([`run_two_proposer_race`]) and atomic commit
//! ([`run_paxos_commit`]).

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simnet::{ms, Actor, Ctx, LinkModel, ProcessId, Time, World};

pub type Ballot = u64;
pub type Value = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Proposal {
    pub number: Ballot,
    pub value: Value,
}

/// Proposal number for `round` (from 1) of proposer `index` out of
/// `count`. Distinct proposers never collide.
pub fn proposal_number(round: u64, count: u64, index: u64) -> Ballot {
    debug_assert!(index < count);
    round * count + index
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AcceptorState {
    pub promised: Ballot,
    pub accepted: Option<Proposal>,
}

impl AcceptorState {
    /// Promise if `n` is above every number seen so far; the reply carries
    /// the last accepted proposal. `None` means the request is ignored.
    pub fn handle_prepare(&mut self, n: Ballot) -> Option<Option<Proposal>> {
        if n > self.promised {
            self.promised = n;
            Some(self.accepted)
        } else {
            None
        }
    }

    /// Accept unless a higher number was promised.
    pub fn handle_accept(&mut self, n: Ballot, value: Value) -> bool {
        if n >= self.promised {
            self.promised = n;
            self.accepted = Some(Proposal { number: n, value });
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PaxosMsg {
    Prepare { n: Ballot },
    Promise { n: Ballot, accepted: Option<Proposal> },
    Accept { n: Ballot, value: Value },
    Accepted { n: Ballot, value: Value },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposerPhase {
    Idle,
    Preparing,
    Accepting,
}

#[derive(Debug, Clone)]
pub struct Proposer {
    pub index: u64,
    pub count: u64,
    pub round: u64,
    pub number: Ballot,
    pub own_value: Value,
    /// Value carried by the current accept requests.
    pub proposed: Option<Value>,
    pub phase: ProposerPhase,
    acceptors: Vec<ProcessId>,
    promises: BTreeMap<ProcessId, Option<Proposal>>,
}

impl Proposer {
    pub fn new(index: u64, count: u64, own_value: Value, acceptors: Vec<ProcessId>) -> Self {
        Proposer {
            index,
            count,
            round: 0,
            number: 0,
            own_value,
            proposed: None,
            phase: ProposerPhase::Idle,
            acceptors,
            promises: BTreeMap::new(),
        }
    }

    fn majority(&self) -> usize {
        self.acceptors.len() / 2 + 1
    }

    /// Start a new round with the next unique number.
    pub fn propose(&mut self) -> Vec<(ProcessId, PaxosMsg)> {
        self.round += 1;
        let n = proposal_number(self.round, self.count, self.index);
        self.propose_with(n)
    }

    /// Start a round with an explicit proposal number.
    pub fn propose_with(&mut self, n: Ballot) -> Vec<(ProcessId, PaxosMsg)> {
        self.number = n;
        self.phase = ProposerPhase::Preparing;
        self.proposed = None;
        self.promises.clear();
        self.acceptors.iter().map(|a| (*a, PaxosMsg::Prepare { n })).collect()
    }

    pub fn on_promise(&mut self, from: ProcessId, n: Ballot, accepted: Option<Proposal>) -> Vec<(ProcessId, PaxosMsg)> {
        if n != self.number || self.phase != ProposerPhase::Preparing {
            return Vec::new();
        }
        self.promises.insert(from, accepted);
        if self.promises.len() < self.majority() {
            return Vec::new();
        }
        let value = self
            .promises
            .values()
            .flatten()
            .max_by_key(|p| p.number)
            .map_or(self.own_value, |p| p.value);
        self.phase = ProposerPhase::Accepting;
        self.proposed = Some(value);
        self.acceptors.iter().map(|a| (*a, PaxosMsg::Accept { n, value })).collect()
    }
}

/// Tallies accept notifications. A value is chosen once a strict majority
/// of acceptors accepted the same proposal number.
#[derive(Debug, Clone)]
pub struct Learner {
    acceptors: usize,
    votes: BTreeMap<Ballot, (Value, BTreeSet<ProcessId>)>,
    pub chosen: Option<Value>,
    /// Every value that ever reached a majority; more than one entry is a
    /// safety violation.
    pub chosen_history: Vec<Value>,
}

impl Learner {
    pub fn new(acceptors: usize) -> Self {
        Learner { acceptors, votes: BTreeMap::new(), chosen: None, chosen_history: Vec::new() }
    }

    pub fn on_accepted(&mut self, from: ProcessId, n: Ballot, value: Value) -> Option<Value> {
        let entry = self.votes.entry(n).or_insert_with(|| (value, BTreeSet::new()));
        entry.1.insert(from);
        if entry.1.len() * 2 > self.acceptors {
            let v = entry.0;
            if !self.chosen_history.contains(&v) {
                self.chosen_history.push(v);
            }
            if self.chosen.is_none() {
                self.chosen = Some(v);
            }
        }
        self.chosen
    }
}

// ---------------------------------------------------------------------------
// Single-decree simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Hash)]
pub enum NodeMsg {
    Paxos(PaxosMsg),
    Retry { round: u64 },
    Start,
}

pub enum PaxosNode {
    Proposer { p: Proposer, learners: Vec<ProcessId>, retry: Time, max_rounds: u64 },
    Acceptor { learners: Vec<ProcessId> },
    Learner(Learner),
}

#[derive(Default)]
pub struct PaxosDisk {
    pub acceptor: AcceptorState,
}

impl Actor for PaxosNode {
    type Msg = NodeMsg;
    type Disk = PaxosDisk;

    fn on_start(&mut self, _: &mut Ctx<'_, Self>) {}

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, from: ProcessId, msg: NodeMsg) {
        match (self, msg) {
            (PaxosNode::Proposer { p, retry, max_rounds, .. }, NodeMsg::Start) => {
                if p.round < *max_rounds {
                    for (to, m) in p.propose() {
                        ctx.send(to, NodeMsg::Paxos(m));
                    }
                    let jitter = ctx.rng().gen_range(0..=*retry);
                    ctx.set_timer(*retry + jitter, NodeMsg::Retry { round: p.round });
                }
            }
            (PaxosNode::Proposer { p, retry, max_rounds, .. }, NodeMsg::Retry { round }) => {
                if round == p.round && p.round < *max_rounds {
                    for (to, m) in p.propose() {
                        ctx.send(to, NodeMsg::Paxos(m));
                    }
                    let jitter = ctx.rng().gen_range(0..=*retry);
                    ctx.set_timer(*retry + jitter, NodeMsg::Retry { round: p.round });
                }
            }
            (PaxosNode::Proposer { p, .. }, NodeMsg::Paxos(PaxosMsg::Promise { n, accepted })) => {
                for (to, m) in p.on_promise(from, n, accepted) {
                    ctx.send(to, NodeMsg::Paxos(m));
                }
            }
            (PaxosNode::Acceptor { .. }, NodeMsg::Paxos(PaxosMsg::Prepare { n })) => {
                if let Some(accepted) = ctx.disk.acceptor.handle_prepare(n) {
                    ctx.send(from, NodeMsg::Paxos(PaxosMsg::Promise { n, accepted }));
                }
            }
            (PaxosNode::Acceptor { learners }, NodeMsg::Paxos(PaxosMsg::Accept { n, value })) => {
                if ctx.disk.acceptor.handle_accept(n, value) {
                    for l in learners.iter() {
                        ctx.send(*l, NodeMsg::Paxos(PaxosMsg::Accepted { n, value }));
                    }
                }
            }
            (PaxosNode::Learner(l), NodeMsg::Paxos(PaxosMsg::Accepted { n, value })) => {
                l.on_accepted(from, n, value);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyReport {
    pub proposers: usize,
    pub acceptors: usize,
    /// Values that reached a majority at any point, observed directly on
    /// acceptor state.
    pub chosen_values: Vec<Value>,
    /// What each learner ended up with.
    pub learned: Vec<Option<Value>>,
    /// A learner switched its chosen value.
    pub learner_changed: bool,
    pub messages_sent: u64,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.chosen_values.len() <= 1
            && !self.learner_changed
            && self.learned.iter().flatten().all(|v| self.chosen_values.contains(v))
    }
}

/// One randomized schedule: 2-3 proposers with distinct values, 3-5
/// acceptors, 1-2 learners, jittered and lossy links, acceptor crashes and
/// restarts.
pub fn run_safety_schedule(seed: u64) -> SafetyReport {
    run_sized_schedule(seed, None, None)
}

/// As `run_safety_schedule`, with the proposer or acceptor count pinned.
pub fn run_sized_schedule(seed: u64, proposers: Option<usize>, acceptors: Option<usize>) -> SafetyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_9a70);
    // Draw regardless, so pinning one count leaves the rest of the schedule as is.
    let drawn = (rng.gen_range(2..=3usize), rng.gen_range(3..=5usize));
    let n_prop = proposers.unwrap_or(drawn.0);
    let n_acc = acceptors.unwrap_or(drawn.1);
    let n_learn = rng.gen_range(1..=2usize);
    let link = LinkModel {
        base_latency: ms(1),
        jitter: ms(rng.gen_range(0..=8)),
        drop_probability: rng.gen_range(0.0..0.3),
        overrides: BTreeMap::new(),
    };
    let mut world: World<PaxosNode> = World::new(seed, link);
    let acceptors: Vec<ProcessId> = (0..n_acc as u32).map(|i| ProcessId(100 + i)).collect();
    let learners: Vec<ProcessId> = (0..n_learn as u32).map(|i| ProcessId(200 + i)).collect();
    let proposers: Vec<ProcessId> = (0..n_prop as u32).map(ProcessId).collect();
    for a in &acceptors {
        let ls = learners.clone();
        world.spawn(*a, move |_, _| PaxosNode::Acceptor { learners: ls.clone() });
    }
    for l in &learners {
        world.spawn(*l, move |_, _| PaxosNode::Learner(Learner::new(n_acc)));
    }
    for (i, p) in proposers.iter().enumerate() {
        let accs = acceptors.clone();
        let ls = learners.clone();
        let retry = ms(rng.gen_range(5..=30));
        world.spawn(*p, move |_, _| PaxosNode::Proposer {
            p: Proposer::new(i as u64, n_prop as u64, 1000 + i as Value, accs.clone()),
            learners: ls.clone(),
            retry,
            max_rounds: 6,
        });
        let delay = ms(rng.gen_range(0..=20));
        world.invoke(*p, |_, ctx| ctx.set_timer(delay, NodeMsg::Start));
    }

    // Crash schedule for acceptors: (time, acceptor, downtime).
    let mut crashes: Vec<(Time, usize, Time)> = (0..rng.gen_range(0..=3))
        .map(|_| (ms(rng.gen_range(0..=120)), rng.gen_range(0..n_acc), ms(rng.gen_range(1..=60))))
        .collect();
    crashes.sort();
    let mut restarts: Vec<(Time, usize)> = Vec::new();

    let mut accepted_at: BTreeMap<Ballot, (Value, BTreeSet<usize>)> = BTreeMap::new();
    let mut last_seen: Vec<Option<Proposal>> = vec![None; n_acc];
    let mut learner_values: Vec<Option<Value>> = vec![None; n_learn];
    let mut learner_changed = false;
    let horizon = ms(600);

    loop {
        let next = world.next_event_time();
        let next_fault = crashes.first().map(|c| c.0).into_iter().chain(restarts.iter().map(|r| r.0)).min();
        match (next, next_fault) {
            (_, Some(f)) if next.is_none_or(|n| f <= n) && f <= horizon => {
                world.run_until(f);
                if crashes.first().is_some_and(|c| c.0 == f) {
                    let (_, a, down) = crashes.remove(0);
                    world.kill(acceptors[a]);
                    restarts.push((f + down, a));
                } else {
                    let i = restarts.iter().position(|r| r.0 == f).expect("restart");
                    let (_, a) = restarts.remove(i);
                    world.restart(acceptors[a]);
                }
            }
            (Some(n), _) if n <= horizon => {
                world.step();
            }
            _ => break,
        }
        for (i, a) in acceptors.iter().enumerate() {
            let cur = world.disk(*a).and_then(|d| d.acceptor.accepted);
            if cur != last_seen[i] {
                if let Some(p) = cur {
                    let e = accepted_at.entry(p.number).or_insert_with(|| (p.value, BTreeSet::new()));
                    assert_eq!(e.0, p.value, "two values under one proposal number");
                    e.1.insert(i);
                }
                last_seen[i] = cur;
            }
        }
        for (i, l) in learners.iter().enumerate() {
            if let Some(PaxosNode::Learner(lr)) = world.actor(*l) {
                if learner_values[i].is_some() && lr.chosen != learner_values[i] {
                    learner_changed = true;
                }
                learner_values[i] = lr.chosen;
            }
        }
    }

    let mut chosen_values: Vec<Value> = Vec::new();
    for (v, set) in accepted_at.values() {
        if set.len() * 2 > n_acc && !chosen_values.contains(v) {
            chosen_values.push(*v);
        }
    }
    SafetyReport {
        proposers: n_prop,
        acceptors: n_acc,
        chosen_values,
        learned: learner_values,
        learner_changed,
        messages_sent: world.stats().sent,
    }
}

/// Result of the two-proposer race.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceReport {
    pub chosen: Option<Value>,
    /// Value carried by each proposer's accept requests, if it got that far.
    pub proposed: Vec<Option<Value>>,
    /// Final promised number at each acceptor.
    pub promised: Vec<Ballot>,
}

/// Proposer A (n=2, v=8) and proposer B (n=4, v=5) race over acceptors
/// X, Y, Z with fixed latencies: A's prepare reaches X and Y first, B's
/// reaches Z first, and A's accepts land before B's prepares reach X and
/// Y. B must carry 8. With `late_c`, proposer C (n=6, v=7) starts after
/// everything settles and must confirm 8 too.
pub fn run_two_proposer_race(late_c: bool) -> RaceReport {
    let a = ProcessId(0);
    let b = ProcessId(1);
    let c = ProcessId(2);
    let accs = [ProcessId(10), ProcessId(11), ProcessId(12)];
    let learner = ProcessId(20);
    let mut link = LinkModel::fixed(ms(1));
    for x in [accs[0], accs[1]] {
        link.overrides.insert((b, x), ms(5));
    }
    link.overrides.insert((a, accs[2]), ms(10));
    let mut world: World<PaxosNode> = World::new(0, link);
    for x in accs {
        world.spawn(x, move |_, _| PaxosNode::Acceptor { learners: vec![learner] });
    }
    world.spawn(learner, |_, _| PaxosNode::Learner(Learner::new(3)));
    let specs = [(a, 2, 8), (b, 4, 5), (c, 6, 7)];
    for (i, &(id, _, v)) in specs.iter().enumerate() {
        world.spawn(id, move |_, _| PaxosNode::Proposer {
            p: Proposer::new(i as u64, 3, v, accs.to_vec()),
            learners: vec![learner],
            retry: ms(1000),
            max_rounds: 0,
        });
    }
    for (id, n, _) in &specs[..2] {
        world.invoke(*id, |node, ctx| {
            if let PaxosNode::Proposer { p, .. } = node {
                for (to, m) in p.propose_with(*n) {
                    ctx.send(to, NodeMsg::Paxos(m));
                }
            }
        });
    }
    world.run_until_idle(10_000);
    if late_c {
        let (id, n, _) = specs[2];
        world.invoke(id, |node, ctx| {
            if let PaxosNode::Proposer { p, .. } = node {
                for (to, m) in p.propose_with(n) {
                    ctx.send(to, NodeMsg::Paxos(m));
                }
            }
        });
        world.run_until_idle(10_000);
    }
    let chosen = match world.actor(learner) {
        Some(PaxosNode::Learner(l)) => l.chosen,
        _ => None,
    };
    let proposed = specs
        .iter()
        .map(|(id, _, _)| match world.actor(*id) {
            Some(PaxosNode::Proposer { p, .. }) => p.proposed,
            _ => None,
        })
        .collect();
    let promised = accs.iter().map(|x| world.disk(*x).map_or(0, |d| d.acceptor.promised)).collect();
    RaceReport { chosen, proposed, promised }
}

// ---------------------------------------------------------------------------
// Paxos commit
// ---------------------------------------------------------------------------

/// A site's vote: prepared or aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteVote {
    Prepared,
    Aborted,
}

impl SiteVote {
    fn value(self) -> Value {
        match self {
            SiteVote::Prepared => 1,
            SiteVote::Aborted => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommitOutcome {
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CommitMsg {
    Begin,
    Prepare,
    /// The site's direct reply to PREPARE.
    Vote(SiteVote),
    /// Ballot-0 accept request from a site to one of its acceptors.
    Accept { site: usize, value: Value },
    Accepted { site: usize, value: Value },
    Decision(CommitOutcome),
    Timeout,
}

pub enum CommitNode {
    Coordinator {
        sites: Vec<ProcessId>,
        initiator: ProcessId,
        learners: Vec<Learner>,
        decision: Option<CommitOutcome>,
        timeout: Time,
    },
    Site {
        index: usize,
        coordinator: ProcessId,
        acceptors: Vec<ProcessId>,
        vote: SiteVote,
        outcome: Option<CommitOutcome>,
    },
    Acceptor {
        coordinator: ProcessId,
    },
}

impl CommitNode {
    fn decide(&mut self, ctx: &mut Ctx<'_, Self>, d: CommitOutcome) {
        if let CommitNode::Coordinator { sites, decision, .. } = self {
            if decision.is_none() {
                *decision = Some(d);
                for s in sites.iter() {
                    ctx.send(*s, CommitMsg::Decision(d));
                }
            }
        }
    }
}

impl Actor for CommitNode {
    type Msg = CommitMsg;
    type Disk = PaxosDisk;

    fn on_start(&mut self, _: &mut Ctx<'_, Self>) {}

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, from: ProcessId, msg: CommitMsg) {
        match msg {
            CommitMsg::Begin => {
                if let CommitNode::Coordinator { sites, initiator, timeout, .. } = self {
                    for s in sites.iter().filter(|s| *s != initiator) {
                        ctx.send(*s, CommitMsg::Prepare);
                    }
                    ctx.set_timer(*timeout, CommitMsg::Timeout);
                }
            }
            CommitMsg::Prepare => {
                if let CommitNode::Site { index, acceptors, vote, .. } = self {
                    for a in acceptors.iter() {
                        ctx.send(*a, CommitMsg::Accept { site: *index, value: vote.value() });
                    }
                    ctx.send(from, CommitMsg::Vote(*vote));
                }
            }
            CommitMsg::Accept { site, value } => {
                if let CommitNode::Acceptor { coordinator } = self {
                    if ctx.disk.acceptor.handle_accept(0, value) {
                        ctx.send(*coordinator, CommitMsg::Accepted { site, value });
                    }
                }
            }
            CommitMsg::Accepted { site, value } => {
                let mut verdict = None;
                if let CommitNode::Coordinator { learners, .. } = self {
                    learners[site].on_accepted(from, 0, value);
                    if learners.iter().any(|l| l.chosen == Some(SiteVote::Aborted.value())) {
                        verdict = Some(CommitOutcome::Aborted);
                    } else if learners.iter().all(|l| l.chosen == Some(SiteVote::Prepared.value())) {
                        verdict = Some(CommitOutcome::Committed);
                    }
                }
                if let Some(d) = verdict {
                    self.decide(ctx, d);
                }
            }
            CommitMsg::Timeout => self.decide(ctx, CommitOutcome::Aborted),
            CommitMsg::Decision(d) => {
                if let CommitNode::Site { outcome, .. } = self {
                    *outcome = Some(d);
                }
            }
            CommitMsg::Vote(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaxosCommitReport {
    pub decision: Option<CommitOutcome>,
    pub site_outcomes: Vec<Option<CommitOutcome>>,
    pub messages_sent: u64,
}

/// Paxos commit over `votes.len()` sites with `acceptors_per_site`
/// acceptors each. Site 0 initiates. `dead_acceptors` lists (site,
/// acceptor) pairs that are down from the start.
pub fn run_paxos_commit(
    votes: &[SiteVote],
    acceptors_per_site: usize,
    seed: u64,
    dead_acceptors: &[(usize, usize)],
) -> PaxosCommitReport {
    let n = votes.len();
    assert!(n >= 1 && acceptors_per_site >= 1);
    let coord = ProcessId(0);
    let sites: Vec<ProcessId> = (1..=n as u32).map(ProcessId).collect();
    let acc = |s: usize, a: usize| ProcessId(1000 + (s * 100 + a) as u32);
    let link = LinkModel::default();
    let timeout = 20 * (link.base_latency + link.jitter);
    let mut world: World<CommitNode> = World::new(seed, link);
    {
        let sites = sites.clone();
        world.spawn(coord, move |_, _| CommitNode::Coordinator {
            sites: sites.clone(),
            initiator: sites[0],
            learners: (0..n).map(|_| Learner::new(acceptors_per_site)).collect(),
            decision: None,
            timeout,
        });
    }
    for (i, s) in sites.iter().enumerate() {
        let accs: Vec<ProcessId> = (0..acceptors_per_site).map(|a| acc(i, a)).collect();
        let vote = votes[i];
        world.spawn(*s, move |_, _| CommitNode::Site {
            index: i,
            coordinator: coord,
            acceptors: accs.clone(),
            vote,
            outcome: None,
        });
        for a in 0..acceptors_per_site {
            world.spawn(acc(i, a), move |_, _| CommitNode::Acceptor { coordinator: coord });
            if dead_acceptors.contains(&(i, a)) {
                world.kill(acc(i, a));
            }
        }
    }
    world.invoke(sites[0], |node, ctx| {
        if let CommitNode::Site { index, acceptors, vote, coordinator, .. } = node {
            ctx.send(*coordinator, CommitMsg::Begin);
            for a in acceptors.iter() {
                ctx.send(*a, CommitMsg::Accept { site: *index, value: vote.value() });
            }
        }
    });
    world.run_until_idle(1_000_000);
    let decision = match world.actor(coord) {
        Some(CommitNode::Coordinator { decision, .. }) => *decision,
        _ => None,
    };
    let site_outcomes = sites
        .iter()
        .map(|s| match world.actor(*s) {
            Some(CommitNode::Site { outcome, .. }) => *outcome,
            _ => None,
        })
        .collect();
    PaxosCommitReport { decision, site_outcomes, messages_sent: world.stats().sent }
}

pub fn expected_commit_messages(sites: usize, acceptors_per_site: usize) -> u64 {
    ((2 * acceptors_per_site + 3) * sites - 1) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prepare_rules() {
        let mut a = AcceptorState::default();
        assert_eq!(a.handle_prepare(2), Some(None));
        let mut b = AcceptorState { promised: 4, accepted: None };
        assert_eq!(b.handle_prepare(2), None);
        assert_eq!(b.promised, 4);
        let mut c = AcceptorState { promised: 2, accepted: Some(Proposal { number: 2, value: 8 }) };
        assert_eq!(c.handle_prepare(4), Some(Some(Proposal { number: 2, value: 8 })));
        assert_eq!(c.promised, 4);
    }

    #[test]
    fn accept_rules() {
        let mut a = AcceptorState { promised: 4, accepted: None };
        assert!(!a.handle_accept(2, 8));
        assert!(a.handle_accept(4, 8));
        assert!(a.handle_accept(5, 9));
        assert_eq!(a.accepted, Some(Proposal { number: 5, value: 9 }));
    }

    #[test]
    fn single_proposer_chooses_its_value() {
        let accs: Vec<ProcessId> = (0..3).map(ProcessId).collect();
        let mut p = Proposer::new(0, 1, 8, accs.clone());
        let mut states = [AcceptorState::default(); 3];
        let mut learner = Learner::new(3);
        let prepares = p.propose_with(2);
        let mut accepts = Vec::new();
        for (to, m) in prepares {
            let PaxosMsg::Prepare { n } = m else { unreachable!() };
            if let Some(prior) = states[to.0 as usize].handle_prepare(n) {
                accepts.extend(p.on_promise(to, n, prior));
            }
        }
        for (to, m) in accepts {
            let PaxosMsg::Accept { n, value } = m else { unreachable!() };
            if states[to.0 as usize].handle_accept(n, value) {
                learner.on_accepted(to, n, value);
            }
        }
        assert_eq!(learner.chosen, Some(8));
    }

    #[test]
    fn race_carries_first_value() {
        let r = run_two_proposer_race(false);
        assert_eq!(r.chosen, Some(8));
        assert_eq!(r.proposed[0], Some(8));
        assert_eq!(r.proposed[1], Some(8));
        assert_eq!(r.promised, vec![4, 4, 4]);
    }

    #[test]
    fn late_proposer_confirms_chosen_value() {
        let r = run_two_proposer_race(true);
        assert_eq!(r.chosen, Some(8));
        assert_eq!(r.proposed[2], Some(8));
    }

    #[test]
    fn numbers_are_unique() {
        let mut seen = BTreeSet::new();
        for count in 1..5 {
            seen.clear();
            for round in 1..50 {
                for i in 0..count {
                    assert!(seen.insert(proposal_number(round, count, i)));
                }
            }
        }
    }

    #[test]
    fn commit_two_sites() {
        let r = run_paxos_commit(&[SiteVote::Prepared, SiteVote::Prepared], 3, 1, &[]);
        assert_eq!(r.decision, Some(CommitOutcome::Committed));
        assert!(r.site_outcomes.iter().all(|o| *o == Some(CommitOutcome::Committed)));
        let r = run_paxos_commit(&[SiteVote::Prepared, SiteVote::Aborted], 3, 1, &[]);
        assert_eq!(r.decision, Some(CommitOutcome::Aborted));
    }

    #[test]
    fn commit_message_count() {
        for n in 1..=3 {
            for f in [1, 3, 5] {
                let r = run_paxos_commit(&vec![SiteVote::Prepared; n], f, 7, &[]);
                // Begin, N-1 prepares, N-1 votes, N*F accepts, N*F accepted, N decisions.
                let oracle = 1 + 2 * (n - 1) + 2 * n * f + n;
                assert_eq!(r.messages_sent, oracle as u64);
                assert_eq!(r.messages_sent, expected_commit_messages(n, f));
            }
        }
    }

    #[test]
    fn commit_survives_minority_acceptor_loss() {
        let r = run_paxos_commit(&[SiteVote::Prepared; 2], 3, 4, &[(0, 1), (1, 2)]);
        assert_eq!(r.decision, Some(CommitOutcome::Committed));
        let r = run_paxos_commit(&[SiteVote::Prepared; 2], 3, 4, &[(0, 1), (0, 2)]);
        assert_eq!(r.decision, Some(CommitOutcome::Aborted));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn randomized_schedules_are_safe(seed: u64) {
            let r = run_safety_schedule(seed);
            prop_assert!(r.is_safe(), "{:?}", r);
        }
    }
}
