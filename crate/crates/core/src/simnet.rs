//! Deterministic discrete-event network simulator.
//!
//! Processes are [`Actor`]s exchanging messages over a simulated network.
//! One seeded RNG drives latency jitter, message loss and actor
//! randomness, and events are ordered by `(deliver_time, sequence)`, so a
//! seed fully determines a run. Each process has a volatile half (the actor
//! value, dropped on kill) and a durable half (its `Disk`, kept across
//! restarts).

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Simulated time in microseconds.
pub type Time = u64;

pub const MICROS_PER_MS: Time = 1_000;

pub const fn ms(n: u64) -> Time {
    n * MICROS_PER_MS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub base_latency: Time,
    pub jitter: Time,
    pub drop_probability: f64,
    /// Fixed one-way latency for specific (from, to) links; no jitter.
    pub overrides: BTreeMap<(ProcessId, ProcessId), Time>,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { base_latency: ms(2), jitter: ms(3), drop_probability: 0.0, overrides: BTreeMap::new() }
    }
}

impl LinkModel {
    pub fn fixed(latency: Time) -> Self {
        LinkModel { base_latency: latency, jitter: 0, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessStatus {
    Up,
    Down,
}

/// A simulated process.
pub trait Actor: Sized {
    type Msg: Clone + fmt::Debug + Hash;
    type Disk: Default;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Self>);

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, from: ProcessId, msg: Self::Msg);

    /// Timers are messages to self; by default they arrive through
    /// `on_message`.
    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self>, msg: Self::Msg) {
        let me = ctx.id();
        self.on_message(ctx, me, msg);
    }

    /// Called on the durable state when the process is killed, e.g. to drop
    /// writes that were never flushed.
    fn on_crash(_disk: &mut Self::Disk) {}
}

type Boot<A> = Box<dyn Fn(ProcessId, &<A as Actor>::Disk) -> A>;

enum Effect<M> {
    Send(ProcessId, M),
    Timer(Time, M),
    Halt,
}

/// Handle given to an actor while it processes an event.
pub struct Ctx<'a, A: Actor> {
    id: ProcessId,
    now: Time,
    pub disk: &'a mut A::Disk,
    rng: &'a mut ChaCha8Rng,
    effects: &'a mut Vec<Effect<A::Msg>>,
    directory: &'a BTreeMap<String, ProcessId>,
}

impl<A: Actor> Ctx<'_, A> {
    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn send(&mut self, to: ProcessId, msg: A::Msg) {
        self.effects.push(Effect::Send(to, msg));
    }

    pub fn set_timer(&mut self, delay: Time, msg: A::Msg) {
        self.effects.push(Effect::Timer(delay, msg));
    }

    /// Crash this process once the current handler returns. Messages it
    /// already sent stay in flight.
    pub fn halt(&mut self) {
        self.effects.push(Effect::Halt);
    }

    pub fn resolve(&self, addr: &str) -> Option<ProcessId> {
        self.directory.get(addr).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Send,
    Deliver,
    Drop,
    Timer,
    Kill,
    Restart,
    Partition,
    Heal,
    Invoke,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub clock: Time,
    pub kind: EventKind,
    pub digest: u64,
}

/// Ordered record of everything that happened in a run. The running
/// SHA-256 is always kept; the event list only when recording is enabled.
#[derive(Clone)]
pub struct EventTrace {
    events: Option<Vec<TraceEvent>>,
    hasher: Sha256,
    len: u64,
}

impl EventTrace {
    fn new(record: bool) -> Self {
        EventTrace { events: record.then(Vec::new), hasher: Sha256::new(), len: 0 }
    }

    fn push(&mut self, clock: Time, kind: EventKind, digest: u64) {
        self.hasher.update(clock.to_le_bytes());
        self.hasher.update([kind as u8]);
        self.hasher.update(digest.to_le_bytes());
        self.len += 1;
        if let Some(ev) = &mut self.events {
            ev.push(TraceEvent { clock, kind, digest });
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn events(&self) -> Option<&[TraceEvent]> {
        self.events.as_deref()
    }

    /// Hex SHA-256 over every event so far.
    pub fn hash(&self) -> String {
        self.hasher.clone().finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One `clock kind digest` line per recorded event.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in self.events.iter().flatten() {
            out.push_str(&format!("{} {:?} {:016x}\n", e.clock, e.kind, e.digest));
        }
        out
    }
}

impl fmt::Debug for EventTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventTrace").field("len", &self.len).field("hash", &self.hash()).finish()
    }
}

fn digest_of<T: Hash>(value: &T) -> u64 {
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

struct Pending<M> {
    time: Time,
    seq: u64,
    to: ProcessId,
    from: ProcessId,
    incarnation: u64,
    timer: bool,
    msg: M,
}

impl<M> PartialEq for Pending<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<M> Eq for Pending<M> {}

impl<M> PartialOrd for Pending<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Pending<M> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Node<A: Actor> {
    actor: Option<A>,
    disk: A::Disk,
    boot: Boot<A>,
    incarnation: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub timers: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Idle,
    Delivered { to: ProcessId, from: ProcessId },
    TimerFired { to: ProcessId },
    Dropped { to: ProcessId },
}

pub struct World<A: Actor> {
    clock: Time,
    seq: u64,
    rng: ChaCha8Rng,
    pub link: LinkModel,
    queue: BinaryHeap<Pending<A::Msg>>,
    nodes: BTreeMap<ProcessId, Node<A>>,
    groups: Option<BTreeMap<ProcessId, usize>>,
    directory: BTreeMap<String, ProcessId>,
    trace: EventTrace,
    stats: NetStats,
    sent_by: BTreeMap<ProcessId, u64>,
}

impl<A: Actor> World<A> {
    pub fn new(seed: u64, link: LinkModel) -> Self {
        Self::with_trace(seed, link, false)
    }

    /// `record` keeps every trace event in memory, not just the hash.
    pub fn with_trace(seed: u64, link: LinkModel, record: bool) -> Self {
        World {
            clock: 0,
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            link,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            groups: None,
            directory: BTreeMap::new(),
            trace: EventTrace::new(record),
            stats: NetStats::default(),
            sent_by: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> Time {
        self.clock
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    /// Messages sent by `id` so far (timers excluded).
    pub fn sent_by(&self, id: ProcessId) -> u64 {
        self.sent_by.get(&id).copied().unwrap_or(0)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn bind(&mut self, addr: &str, id: ProcessId) {
        self.directory.insert(addr.to_string(), id);
    }

    pub fn resolve(&self, addr: &str) -> Option<ProcessId> {
        self.directory.get(addr).copied()
    }

    pub fn process_ids(&self) -> Vec<ProcessId> {
        self.nodes.keys().copied().collect()
    }

    pub fn status(&self, id: ProcessId) -> Option<ProcessStatus> {
        self.nodes.get(&id).map(|n| if n.actor.is_some() { ProcessStatus::Up } else { ProcessStatus::Down })
    }

    pub fn is_up(&self, id: ProcessId) -> bool {
        self.status(id) == Some(ProcessStatus::Up)
    }

    pub fn actor(&self, id: ProcessId) -> Option<&A> {
        self.nodes.get(&id).and_then(|n| n.actor.as_ref())
    }

    pub fn actors(&self) -> impl Iterator<Item = (ProcessId, &A)> {
        self.nodes.iter().filter_map(|(id, n)| n.actor.as_ref().map(|a| (*id, a)))
    }

    pub fn disk(&self, id: ProcessId) -> Option<&A::Disk> {
        self.nodes.get(&id).map(|n| &n.disk)
    }

    pub fn disk_mut(&mut self, id: ProcessId) -> Option<&mut A::Disk> {
        self.nodes.get_mut(&id).map(|n| &mut n.disk)
    }

    /// Add a process with empty durable state and start it.
    pub fn spawn(&mut self, id: ProcessId, boot: impl Fn(ProcessId, &A::Disk) -> A + 'static) {
        self.spawn_with_disk(id, A::Disk::default(), boot);
    }

    pub fn spawn_with_disk(
        &mut self,
        id: ProcessId,
        disk: A::Disk,
        boot: impl Fn(ProcessId, &A::Disk) -> A + 'static,
    ) {
        assert!(!self.nodes.contains_key(&id), "process {id} already exists");
        self.nodes.insert(id, Node { actor: None, disk, boot: Box::new(boot), incarnation: 0 });
        self.boot(id);
    }

    /// Add a process that stays down until [`World::restart`].
    pub fn register_down(&mut self, id: ProcessId, boot: impl Fn(ProcessId, &A::Disk) -> A + 'static) {
        assert!(!self.nodes.contains_key(&id), "process {id} already exists");
        self.nodes.insert(id, Node { actor: None, disk: A::Disk::default(), boot: Box::new(boot), incarnation: 0 });
    }

    fn boot(&mut self, id: ProcessId) {
        let node = self.nodes.get_mut(&id).expect("known process");
        node.incarnation += 1;
        let actor = (node.boot)(id, &node.disk);
        node.actor = Some(actor);
        self.with_actor(id, |a, ctx| a.on_start(ctx));
    }

    /// Crash a process: its volatile state and every event addressed to it
    /// are lost; its disk survives.
    pub fn kill(&mut self, id: ProcessId) {
        let Some(node) = self.nodes.get_mut(&id) else { return };
        if node.actor.take().is_some() {
            A::on_crash(&mut node.disk);
            node.incarnation += 1;
            self.trace.push(self.clock, EventKind::Kill, id.0 as u64);
        }
    }

    /// Boot a fresh actor from the surviving disk.
    pub fn restart(&mut self, id: ProcessId) {
        if self.nodes.get(&id).is_some_and(|n| n.actor.is_none()) {
            self.trace.push(self.clock, EventKind::Restart, id.0 as u64);
            self.boot(id);
        }
    }

    /// Split the network into groups; unlisted processes form one extra
    /// group of their own.
    pub fn partition(&mut self, groups: &[Vec<ProcessId>]) {
        let mut map = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            for p in g {
                map.insert(*p, i);
            }
        }
        self.trace.push(self.clock, EventKind::Partition, digest_of(&map));
        self.groups = Some(map);
    }

    pub fn heal(&mut self) {
        self.groups = None;
        self.trace.push(self.clock, EventKind::Heal, 0);
    }

    pub fn connected(&self, a: ProcessId, b: ProcessId) -> bool {
        match &self.groups {
            None => true,
            Some(g) => a == b || g.get(&a) == g.get(&b),
        }
    }

    /// Run `f` against a live actor as if an external event arrived now.
    pub fn invoke<R>(&mut self, id: ProcessId, f: impl FnOnce(&mut A, &mut Ctx<'_, A>) -> R) -> Option<R> {
        if !self.is_up(id) {
            return None;
        }
        self.trace.push(self.clock, EventKind::Invoke, id.0 as u64);
        self.with_actor(id, f)
    }

    /// Schedule a message from outside the actor set (or on behalf of one).
    pub fn inject(&mut self, from: ProcessId, to: ProcessId, msg: A::Msg) {
        self.transmit(from, to, msg);
    }

    fn with_actor<R>(&mut self, id: ProcessId, f: impl FnOnce(&mut A, &mut Ctx<'_, A>) -> R) -> Option<R> {
        let mut effects = Vec::new();
        let node = self.nodes.get_mut(&id)?;
        let actor = node.actor.as_mut()?;
        let mut ctx = Ctx {
            id,
            now: self.clock,
            disk: &mut node.disk,
            rng: &mut self.rng,
            effects: &mut effects,
            directory: &self.directory,
        };
        let r = f(actor, &mut ctx);
        self.apply_effects(id, effects);
        Some(r)
    }

    fn apply_effects(&mut self, id: ProcessId, effects: Vec<Effect<A::Msg>>) {
        let mut halt = false;
        for e in effects {
            match e {
                Effect::Send(to, msg) => self.transmit(id, to, msg),
                Effect::Timer(delay, msg) => {
                    let incarnation = self.nodes[&id].incarnation;
                    self.seq += 1;
                    self.queue.push(Pending {
                        time: self.clock + delay,
                        seq: self.seq,
                        to: id,
                        from: id,
                        incarnation,
                        timer: true,
                        msg,
                    });
                }
                Effect::Halt => halt = true,
            }
        }
        if halt {
            self.kill(id);
        }
    }

    fn transmit(&mut self, from: ProcessId, to: ProcessId, msg: A::Msg) {
        self.stats.sent += 1;
        *self.sent_by.entry(from).or_default() += 1;
        let digest = digest_of(&(from, to, &msg));
        self.trace.push(self.clock, EventKind::Send, digest);
        let lost = from != to && self.link.drop_probability > 0.0 && self.rng.gen_bool(self.link.drop_probability);
        let reachable = self.is_up(to) && self.connected(from, to);
        if lost || !reachable {
            self.stats.dropped += 1;
            self.trace.push(self.clock, EventKind::Drop, digest);
            return;
        }
        let latency = if from == to {
            0
        } else if let Some(l) = self.link.overrides.get(&(from, to)) {
            *l
        } else if self.link.jitter > 0 {
            self.link.base_latency + self.rng.gen_range(0..=self.link.jitter)
        } else {
            self.link.base_latency
        };
        let incarnation = self.nodes[&to].incarnation;
        self.seq += 1;
        self.queue.push(Pending { time: self.clock + latency, seq: self.seq, to, from, incarnation, timer: false, msg });
    }

    pub fn next_event_time(&self) -> Option<Time> {
        self.queue.peek().map(|p| p.time)
    }

    /// Process the earliest pending event.
    pub fn step(&mut self) -> StepOutcome {
        let Some(p) = self.queue.pop() else { return StepOutcome::Idle };
        self.clock = self.clock.max(p.time);
        let live = self.nodes.get(&p.to).is_some_and(|n| n.actor.is_some() && n.incarnation == p.incarnation);
        let digest = digest_of(&(p.from, p.to, &p.msg));
        if !live || (!p.timer && !self.connected(p.from, p.to)) {
            self.stats.dropped += 1;
            self.trace.push(self.clock, EventKind::Drop, digest);
            return StepOutcome::Dropped { to: p.to };
        }
        if p.timer {
            self.stats.timers += 1;
            self.trace.push(self.clock, EventKind::Timer, digest);
            self.with_actor(p.to, |a, ctx| a.on_timer(ctx, p.msg));
            StepOutcome::TimerFired { to: p.to }
        } else {
            self.stats.delivered += 1;
            self.trace.push(self.clock, EventKind::Deliver, digest);
            let from = p.from;
            self.with_actor(p.to, |a, ctx| a.on_message(ctx, from, p.msg));
            StepOutcome::Delivered { to: p.to, from }
        }
    }

    /// Process every event due at or before `t`, then advance the clock
    /// to `t`.
    pub fn run_until(&mut self, t: Time) {
        while self.next_event_time().is_some_and(|n| n <= t) {
            self.step();
        }
        self.clock = self.clock.max(t);
    }

    pub fn run_for(&mut self, d: Time) {
        let t = self.clock + d;
        self.run_until(t);
    }

    /// Run until no events remain or `max_steps` were processed. Returns
    /// the number of steps taken.
    pub fn run_until_idle(&mut self, max_steps: u64) -> u64 {
        let mut n = 0;
        while n < max_steps && self.step() != StepOutcome::Idle {
            n += 1;
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Echo actor: counts what it receives, persists a counter, and
    /// forwards `Hop(n)` to the next process.
    #[derive(Default)]
    struct Echo {
        received: Vec<(ProcessId, u32)>,
        started: u32,
    }

    #[derive(Default)]
    struct EchoDisk {
        persisted: u32,
        unflushed: u32,
    }

    #[derive(Debug, Clone, Hash)]
    enum M {
        Hop(u32),
        Tick,
    }

    impl Actor for Echo {
        type Msg = M;
        type Disk = EchoDisk;

        fn on_start(&mut self, ctx: &mut Ctx<'_, Self>) {
            self.started += 1;
            ctx.disk.persisted += 1;
        }

        fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, from: ProcessId, msg: M) {
            if let M::Hop(n) = msg {
                self.received.push((from, n));
                ctx.disk.unflushed += 1;
                if n > 0 {
                    let next = ProcessId((ctx.id().0 + 1) % 3);
                    ctx.send(next, M::Hop(n - 1));
                }
            }
        }

        fn on_timer(&mut self, ctx: &mut Ctx<'_, Self>, msg: M) {
            if let M::Tick = msg {
                self.received.push((ctx.id(), 999));
            }
        }

        fn on_crash(disk: &mut EchoDisk) {
            disk.unflushed = 0;
        }
    }

    fn world(seed: u64) -> World<Echo> {
        let mut w = World::with_trace(seed, LinkModel::default(), true);
        for i in 0..3 {
            w.spawn(ProcessId(i), |_, _| Echo::default());
        }
        w
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let mut w = world(seed);
            w.inject(ProcessId(0), ProcessId(1), M::Hop(50));
            w.run_until_idle(10_000);
            w.trace().hash()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn kill_keeps_disk_and_drops_pending() {
        let mut w = world(1);
        w.inject(ProcessId(0), ProcessId(1), M::Hop(0));
        w.kill(ProcessId(1));
        assert_eq!(w.step(), StepOutcome::Dropped { to: ProcessId(1) });
        w.restart(ProcessId(1));
        let disk = w.disk(ProcessId(1)).unwrap();
        assert_eq!(disk.persisted, 2);
        assert_eq!(disk.unflushed, 0);
        assert_eq!(w.actor(ProcessId(1)).unwrap().started, 1);
    }

    #[test]
    fn timers_die_with_their_incarnation() {
        let mut w = world(1);
        w.invoke(ProcessId(2), |_, ctx| ctx.set_timer(ms(5), M::Tick));
        w.kill(ProcessId(2));
        w.restart(ProcessId(2));
        w.run_until_idle(100);
        assert!(w.actor(ProcessId(2)).unwrap().received.is_empty());
        w.invoke(ProcessId(2), |_, ctx| ctx.set_timer(ms(5), M::Tick));
        w.run_until_idle(100);
        assert_eq!(w.actor(ProcessId(2)).unwrap().received, vec![(ProcessId(2), 999)]);
        assert_eq!(w.now(), ms(10));
    }

    #[test]
    fn partition_blocks_cross_group_traffic() {
        let mut w = world(3);
        w.partition(&[vec![ProcessId(0)], vec![ProcessId(1), ProcessId(2)]]);
        w.inject(ProcessId(0), ProcessId(1), M::Hop(0));
        w.inject(ProcessId(2), ProcessId(1), M::Hop(0));
        w.run_until_idle(100);
        assert_eq!(w.actor(ProcessId(1)).unwrap().received, vec![(ProcessId(2), 0)]);
        w.heal();
        w.inject(ProcessId(0), ProcessId(1), M::Hop(0));
        w.run_until_idle(100);
        assert_eq!(w.actor(ProcessId(1)).unwrap().received.len(), 2);
    }

    #[test]
    fn in_flight_messages_respect_new_partitions() {
        let mut w = world(3);
        w.inject(ProcessId(0), ProcessId(1), M::Hop(0));
        w.partition(&[vec![ProcessId(0)], vec![ProcessId(1)]]);
        w.run_until_idle(100);
        assert!(w.actor(ProcessId(1)).unwrap().received.is_empty());
    }

    #[test]
    fn halt_crashes_after_handler() {
        struct Halter;
        impl Actor for Halter {
            type Msg = u8;
            type Disk = ();
            fn on_start(&mut self, _: &mut Ctx<'_, Self>) {}
            fn on_message(&mut self, ctx: &mut Ctx<'_, Self>, _: ProcessId, _: u8) {
                ctx.send(ProcessId(1), 1);
                ctx.halt();
            }
        }
        let mut w: World<Halter> = World::new(0, LinkModel::fixed(ms(1)));
        w.spawn(ProcessId(0), |_, _| Halter);
        w.spawn(ProcessId(1), |_, _| Halter);
        w.inject(ProcessId(9), ProcessId(0), 0);
        w.step();
        assert!(!w.is_up(ProcessId(0)));
        w.step();
        assert!(!w.is_up(ProcessId(1)));
        assert_eq!(w.sent_by(ProcessId(0)), 1);
    }

    #[test]
    fn trace_dump_lists_events() {
        let mut w = world(5);
        w.inject(ProcessId(0), ProcessId(1), M::Hop(1));
        w.run_until_idle(100);
        let dump = w.trace().dump();
        assert_eq!(dump.lines().count() as u64, w.trace().len());
        assert!(dump.contains("Deliver"));
    }

    proptest! {
        #[test]
        fn clock_is_monotone(seed: u64, hops in 1u32..40) {
            let mut w = world(seed);
            w.inject(ProcessId(0), ProcessId(1), M::Hop(hops));
            w.inject(ProcessId(1), ProcessId(2), M::Hop(hops));
            let mut last = 0;
            while w.step() != StepOutcome::Idle {
                prop_assert!(w.now() >= last);
                last = w.now();
            }
            let events = w.trace().events().unwrap();
            prop_assert!(events.windows(2).all(|p| p[0].clock <= p[1].clock));
        }
    }
}
