//! Table managers: one per table, holding the lock table and the replica
//! list. A manager also drives its table back to the configured number of
//! data and meta-state replicas.

use std::collections::{BTreeMap, VecDeque};

use super::*;
use crate::autonomics::{maintain_replication_factor, NegotiationParams, PlacementAction, QueryPattern};

/// Lock owner used by the manager itself while copying replicas.
pub(super) const MAINTENANCE_TXN: TxnId = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReplicaEntry {
    pub host: ProcessId,
    pub current: bool,
}

/// Replicated table-manager state. `holders[0]` is the active site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TmState {
    pub table: String,
    pub schema: TableSchema,
    pub tm: ProcessId,
    pub replicas: Vec<ReplicaEntry>,
    pub holders: Vec<ProcessId>,
    pub version: u64,
}

impl TmState {
    pub fn current(&self) -> Vec<ProcessId> {
        self.replicas.iter().filter(|r| r.current).map(|r| r.host).collect()
    }

    fn forget(&mut self, host: ProcessId) -> bool {
        let before = (self.replicas.len(), self.holders.len());
        self.replicas.retain(|r| r.host != host);
        if host != self.tm {
            self.holders.retain(|h| *h != host);
        }
        before != (self.replicas.len(), self.holders.len())
    }
}

/// Shared/exclusive locks with a FIFO wait queue and no upgrades.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LockTable {
    pub holders: BTreeMap<TxnId, bool>,
    pub waiting: VecDeque<(TxnId, bool)>,
}

impl LockTable {
    fn compatible(&self, exclusive: bool) -> bool {
        self.holders.is_empty() || (!exclusive && self.holders.values().all(|x| !x))
    }

    /// True when granted at once; otherwise the request is queued.
    pub fn request(&mut self, txn: TxnId, exclusive: bool) -> bool {
        if self.holders.contains_key(&txn) {
            return true;
        }
        if self.waiting.is_empty() && self.compatible(exclusive) {
            self.holders.insert(txn, exclusive);
            return true;
        }
        if !self.waiting.iter().any(|(t, _)| *t == txn) {
            self.waiting.push_back((txn, exclusive));
        }
        false
    }

    /// Drop `txn` as holder or waiter. Returns whether it held an
    /// exclusive lock, and the transactions granted as a result.
    pub fn release(&mut self, txn: TxnId) -> (Option<bool>, Vec<TxnId>) {
        let held = self.holders.remove(&txn);
        self.waiting.retain(|(t, _)| *t != txn);
        let mut granted = Vec::new();
        while let Some(&(t, x)) = self.waiting.front() {
            if !self.compatible(x) {
                break;
            }
            self.waiting.pop_front();
            self.holders.insert(t, x);
            granted.push(t);
        }
        (held, granted)
    }

    /// Transactions `txn` waits for.
    pub fn blockers(&self, txn: TxnId) -> Vec<TxnId> {
        let Some(pos) = self.waiting.iter().position(|(t, _)| *t == txn) else { return Vec::new() };
        let mut out: Vec<TxnId> = self.holders.keys().copied().collect();
        out.extend(self.waiting.iter().take(pos).map(|(t, _)| *t));
        out
    }
}

#[derive(Debug, Clone)]
pub(super) enum TmCont {
    Ranked,
    Fetched(ProcessId),
    Installed(ProcessId),
    HolderInstalled(ProcessId),
    Adopted { to: ProcessId, cref: CallRef },
    Moved { cref: CallRef },
}

#[derive(Debug, Default)]
struct Maintenance {
    /// Holding or queued for the manager's own exclusive lock.
    lock: bool,
    ranked: bool,
    data_targets: VecDeque<ProcessId>,
    holder_targets: VecDeque<ProcessId>,
    copying: bool,
    holders_changed: bool,
}

#[derive(Debug)]
pub struct TableManager {
    pub state: TmState,
    pub locks: LockTable,
    pattern: QueryPattern,
    lock_replies: BTreeMap<TxnId, CallRef>,
    lock_modes: BTreeMap<TxnId, bool>,
    lazy: BTreeMap<TxnId, Vec<ProcessId>>,
    maint: Option<Maintenance>,
    handover: Option<(ProcessId, CallRef)>,
}

impl TableManager {
    /// A maintenance pass is under way.
    pub(super) fn replicating(&self) -> bool {
        self.maint.is_some()
    }

    fn new(state: TmState) -> Self {
        TableManager {
            state,
            locks: LockTable::default(),
            pattern: QueryPattern::default(),
            lock_replies: BTreeMap::new(),
            lock_modes: BTreeMap::new(),
            lazy: BTreeMap::new(),
            maint: None,
            handover: None,
        }
    }
}

impl Instance {
    /// Set up the manager and first replica of a freshly created table.
    pub(super) fn create_tm_local(&mut self, ctx: &mut Cx, schema: TableSchema) {
        let me = self.id;
        let table = schema.name.clone();
        let state = TmState {
            table: table.clone(),
            schema: schema.clone(),
            tm: me,
            replicas: vec![ReplicaEntry { host: me, current: true }],
            holders: vec![me],
            version: 0,
        };
        self.drop_local_replica(ctx, &table);
        ctx.disk.replicas.insert(table.clone(), StoredReplica { store: TableStore::new(schema), version: 0 });
        ctx.disk.tm_states.insert(table.clone(), state.clone());
        self.managers.insert(table.clone(), TableManager::new(state));
        self.tm_maintain(ctx, &table, true);
    }

    pub(super) fn start_tm(&mut self, ctx: &mut Cx, cref: CallRef, table: String, dead: Vec<ProcessId>) {
        if self.managers.contains_key(&table) {
            return self.reply(ctx, cref, Reply::Ok);
        }
        let Some(mut state) = ctx.disk.tm_states.get(&table).cloned() else {
            return self.reply(ctx, cref, Reply::Err(EngineError::Unrecoverable(table)));
        };
        let me = self.id;
        let has_local = ctx.disk.replicas.contains_key(&table);
        state.tm = me;
        // Lock state is not recovered; every listed replica that survives
        // is taken as current.
        state.replicas.retain(|r| !dead.contains(&r.host) && (r.host != me || has_local));
        for r in state.replicas.iter_mut() {
            r.current = true;
        }
        let mut holders = vec![me];
        holders.extend(state.holders.iter().copied().filter(|h| *h != me && !dead.contains(h)));
        state.holders = holders;
        let now = ctx.now();
        self.note(now, format!("table manager of {table} started"));
        self.managers.insert(table.clone(), TableManager::new(state));
        self.tm_push(ctx, &table);
        self.reply(ctx, cref, Reply::Ok);
        self.tm_maintain(ctx, &table, true);
    }

    pub(super) fn adopt_tm(&mut self, ctx: &mut Cx, cref: CallRef, state: TmState) {
        let table = state.table.clone();
        ctx.disk.tm_states.insert(table.clone(), state.clone());
        self.managers.insert(table.clone(), TableManager::new(state));
        let now = ctx.now();
        self.note(now, format!("adopted table manager of {table}"));
        self.reply(ctx, cref, Reply::Ok);
    }

    /// Persist the manager state and copy it to the other holders.
    fn tm_push(&mut self, ctx: &mut Cx, table: &str) {
        let Some(m) = self.managers.get(table) else { return };
        let state = m.state.clone();
        ctx.disk.tm_states.insert(table.to_string(), state.clone());
        let me = self.id;
        for h in state.holders.iter().copied().filter(|h| *h != me) {
            self.call(ctx, h, Call::TmReplica { state: state.clone(), install: false }, Cont::Ignore);
        }
    }

    pub(super) fn tm_call(&mut self, ctx: &mut Cx, cref: CallRef, call: Call) {
        match call {
            Call::Lock { txn, table, exclusive } => self.tm_lock(ctx, cref, txn, table, exclusive),
            Call::ReplicaFailed { table, host } => {
                self.reply(ctx, cref, Reply::Ok);
                let forgot = self.managers.get_mut(&table).is_some_and(|m| m.state.forget(host));
                if forgot {
                    let now = ctx.now();
                    self.note(now, format!("replica of {table} on {} dropped", host.0));
                    self.tm_push(ctx, &table);
                    self.tm_maintain(ctx, &table, false);
                }
                self.report_suspect(ctx, host);
            }
            Call::MemberLeft { host } => {
                self.reply(ctx, cref, Reply::Ok);
                // Transactions of a departed coordinator that never reached
                // prepare can only abort. Prepared ones wait for an outcome.
                let orphaned: Vec<TxnId> = self
                    .host_txns
                    .iter()
                    .filter(|(_, h)| h.coordinator == host && h.participant.is_none())
                    .map(|(t, _)| *t)
                    .collect();
                for txn in orphaned {
                    self.finish_host_txn(ctx, txn, false);
                }
                let queued: Vec<(String, TxnId)> = self
                    .managers
                    .iter()
                    .flat_map(|(t, m)| {
                        m.lock_replies.iter().filter(|(_, c)| c.from == host).map(move |(x, _)| (t.clone(), *x))
                    })
                    .collect();
                for (table, txn) in queued {
                    self.tm_release(ctx, &table, txn, false);
                }
                let tables: Vec<String> = self.managers.keys().cloned().collect();
                for t in tables {
                    if self.managers.get_mut(&t).is_some_and(|m| m.state.forget(host)) {
                        self.tm_push(ctx, &t);
                        self.tm_maintain(ctx, &t, false);
                    }
                }
            }
            Call::HandOverTm { table, to } => {
                let Some(m) = self.managers.get_mut(&table) else {
                    return self.reply(ctx, cref, Reply::Err(EngineError::NotTableManager(table)));
                };
                if to == self.id {
                    return self.reply(ctx, cref, Reply::Ok);
                }
                if m.handover.is_some() {
                    return self.reply(ctx, cref, Reply::Err(EngineError::Busy));
                }
                m.handover = Some((to, cref));
                let ready = m.maint.is_none() && m.locks.request(MAINTENANCE_TXN, true);
                self.reply(ctx, cref, Reply::Accepted);
                if ready {
                    self.tm_hand_over(ctx, &table);
                }
            }
            Call::DropTableLocal { table } => {
                self.reply(ctx, cref, Reply::Ok);
                if let Some(m) = self.managers.remove(&table) {
                    for (_, c) in m.lock_replies {
                        self.reply(ctx, c, Reply::Err(EngineError::NoSuchTable(table.clone())));
                    }
                    let hosts: BTreeSet<ProcessId> =
                        m.state.replicas.iter().map(|r| r.host).chain(m.state.holders.iter().copied()).collect();
                    for h in hosts {
                        self.call(ctx, h, Call::DropReplica { table: table.clone() }, Cont::Ignore);
                    }
                }
            }
            Call::CaughtUp { table, version } => {
                self.reply(ctx, cref, Reply::Ok);
                if let Some(m) = self.managers.get_mut(&table) {
                    if m.state.version == version {
                        for r in m.state.replicas.iter_mut().filter(|r| r.host == cref.from) {
                            r.current = true;
                        }
                    }
                }
            }
            _ => unreachable!("not a table-manager call"),
        }
    }

    fn tm_lock(&mut self, ctx: &mut Cx, cref: CallRef, txn: TxnId, table: String, exclusive: bool) {
        let Some(m) = self.managers.get_mut(&table) else {
            return self.reply(ctx, cref, Reply::Err(EngineError::NotTableManager(table)));
        };
        if m.handover.is_some() {
            return self.reply(ctx, cref, Reply::Err(EngineError::NotTableManager(table)));
        }
        m.pattern.record(&instance_ref(cref.from).instance_name);
        if m.state.current().is_empty() {
            return self.reply(ctx, cref, Reply::Err(EngineError::NoCurrentReplica(table)));
        }
        m.lock_modes.insert(txn, exclusive);
        if m.locks.request(txn, exclusive) {
            self.tm_grant(ctx, &table, txn, cref);
        } else {
            m.lock_replies.insert(txn, cref);
            self.reply(ctx, cref, Reply::Accepted);
        }
    }

    fn tm_grant(&mut self, ctx: &mut Cx, table: &str, txn: TxnId, cref: CallRef) {
        let me = self.id;
        let sync_limit = self.cfg.sync_replicas;
        let m = self.managers.get_mut(table).expect("manager");
        let exclusive = m.lock_modes.get(&txn).copied().unwrap_or(true);
        let current = m.state.current();
        if current.is_empty() {
            let (_, granted) = m.locks.release(txn);
            self.reply(ctx, cref, Reply::Err(EngineError::NoCurrentReplica(table.to_string())));
            return self.tm_granted(ctx, table, granted);
        }
        let read_from =
            if current.contains(&me) { me } else { current[ctx.rng().gen_range(0..current.len())] };
        let (sync, lazy) = if exclusive {
            let r = sync_limit.unwrap_or(current.len()).clamp(1, current.len());
            let mut lazy: Vec<ProcessId> = current[r..].to_vec();
            lazy.extend(m.state.replicas.iter().filter(|x| !x.current).map(|x| x.host));
            (current[..r].to_vec(), lazy)
        } else {
            (Vec::new(), Vec::new())
        };
        if !lazy.is_empty() {
            m.lazy.insert(txn, lazy.clone());
        }
        let version = m.state.version;
        self.host_txns.entry(txn).or_insert_with(|| HostTxn::new(cref.from)).locks.push(table.to_string());
        self.reply(ctx, cref, Reply::Granted { sync, lazy, read_from: Some(read_from), version });
    }

    fn tm_granted(&mut self, ctx: &mut Cx, table: &str, granted: Vec<TxnId>) {
        for txn in granted {
            if txn == MAINTENANCE_TXN {
                let m = self.managers.get_mut(table).expect("manager");
                if m.maint.is_some() {
                    self.tm_maint_step(ctx, table);
                } else if m.handover.is_some() {
                    self.tm_hand_over(ctx, table);
                }
                continue;
            }
            let Some(cref) = self.managers.get_mut(table).and_then(|m| m.lock_replies.remove(&txn)) else {
                continue;
            };
            self.tm_grant(ctx, table, txn, cref);
        }
    }

    /// A transaction ended at this host: drop its lock on `table`.
    pub(super) fn tm_release(&mut self, ctx: &mut Cx, table: &str, txn: TxnId, committed: bool) {
        let Some(m) = self.managers.get_mut(table) else { return };
        let (held, granted) = m.locks.release(txn);
        m.lock_replies.remove(&txn);
        m.lock_modes.remove(&txn);
        let lazy = m.lazy.remove(&txn);
        if held == Some(true) && committed {
            m.state.version += 1;
            for host in lazy.unwrap_or_default() {
                for r in m.state.replicas.iter_mut().filter(|r| r.host == host) {
                    r.current = false;
                }
            }
        }
        self.tm_granted(ctx, table, granted);
    }

    fn tm_release_maintenance(&mut self, ctx: &mut Cx, table: &str) {
        let Some(m) = self.managers.get_mut(table) else { return };
        let (_, granted) = m.locks.release(MAINTENANCE_TXN);
        self.tm_granted(ctx, table, granted);
    }

    // -----------------------------------------------------------------
    // Hand-off to another instance
    // -----------------------------------------------------------------

    fn tm_hand_over(&mut self, ctx: &mut Cx, table: &str) {
        let me = self.id;
        let t = self.cfg.tm_replication.max(1);
        let m = self.managers.get_mut(table).expect("manager");
        let Some((to, cref)) = m.handover else { return };
        let mut state = m.state.clone();
        state.tm = to;
        let mut holders = vec![to];
        holders.extend(state.holders.iter().copied().filter(|h| *h != to));
        holders.truncate(t.max(2));
        if !holders.contains(&me) {
            holders.push(me);
        }
        state.holders = holders;
        self.call(ctx, to, Call::AdoptTm { state }, Cont::Tm(table.to_string(), TmCont::Adopted { to, cref }));
    }

    // -----------------------------------------------------------------
    // Replication-factor maintenance
    // -----------------------------------------------------------------

    /// Start a maintenance pass if the table is short of replicas. When
    /// `urgent`, take the table lock before anything else so that
    /// transactions wait for the copies instead of racing them.
    pub(super) fn tm_maintain(&mut self, ctx: &mut Cx, table: &str, urgent: bool) {
        let (n, t) = (self.cfg.replication, self.cfg.tm_replication);
        let Some(st) = self.st_at else { return };
        let Some(m) = self.managers.get_mut(table) else { return };
        if m.maint.is_some() || m.handover.is_some() {
            return;
        }
        let data_short = m.state.current().len() < n;
        if !data_short && m.state.holders.len() >= t {
            return;
        }
        let mut maint = Maintenance::default();
        if urgent && data_short {
            maint.lock = true;
            m.locks.request(MAINTENANCE_TXN, true);
        }
        m.maint = Some(maint);
        self.call(ctx, st, Call::Ranking, Cont::Tm(table.to_string(), TmCont::Ranked));
    }

    pub(super) fn tm_resume(&mut self, ctx: &mut Cx, table: String, c: TmCont, r: Result<Reply, EngineError>) {
        match c {
            TmCont::Adopted { to, cref } => {
                let Some(m) = self.managers.get_mut(&table) else { return };
                if r.is_err() {
                    m.handover = None;
                    self.reply(ctx, cref, Reply::Err(EngineError::TargetUnreachable));
                    return self.tm_release_maintenance(ctx, &table);
                }
                let m = self.managers.remove(&table).expect("manager");
                for (_, c) in m.lock_replies {
                    self.reply(ctx, c, Reply::Err(EngineError::NotTableManager(table.clone())));
                }
                let now = ctx.now();
                self.note(now, format!("table manager of {table} moved to {}", to.0));
                let holders = {
                    let mut h = vec![to];
                    h.extend(m.state.holders.iter().copied().filter(|x| *x != to));
                    h
                };
                let mut state = m.state.clone();
                state.tm = to;
                state.holders = holders.clone();
                ctx.disk.tm_states.insert(table.clone(), state);
                match self.st_at {
                    Some(st) => {
                        let call = Call::TmMoved { table: table.clone(), to, holders };
                        self.call(ctx, st, call, Cont::Tm(table, TmCont::Moved { cref }));
                    }
                    None => self.reply(ctx, cref, Reply::Ok),
                }
            }
            TmCont::Moved { cref } => {
                let reply = match r {
                    Ok(_) => Reply::Ok,
                    Err(e) => Reply::Err(e),
                };
                self.reply(ctx, cref, reply);
            }
            TmCont::Ranked => {
                let Ok(Reply::Ranked { ranked, alive }) = r else {
                    return self.tm_maint_done(ctx, &table);
                };
                self.tm_plan(ctx, &table, ranked, alive);
            }
            TmCont::Fetched(target) => {
                let Ok(Reply::Rows { rows, version }) = r else {
                    return self.tm_maint_step(ctx, &table);
                };
                let Some(m) = self.managers.get(&table) else { return };
                let call = Call::Install { table: table.clone(), schema: m.state.schema.clone(), rows, version };
                self.call(ctx, target, call, Cont::Tm(table, TmCont::Installed(target)));
            }
            TmCont::Installed(target) => {
                if r.is_ok() {
                    if let Some(m) = self.managers.get_mut(&table) {
                        m.state.replicas.retain(|x| x.host != target);
                        m.state.replicas.push(ReplicaEntry { host: target, current: true });
                        let now = ctx.now();
                        self.note(now, format!("replica of {table} installed on {}", target.0));
                        self.tm_push(ctx, &table);
                    }
                }
                self.tm_maint_step(ctx, &table);
            }
            TmCont::HolderInstalled(target) => {
                if r.is_ok() {
                    if let Some(m) = self.managers.get_mut(&table) {
                        if !m.state.holders.contains(&target) {
                            m.state.holders.push(target);
                        }
                        if let Some(x) = m.maint.as_mut() {
                            x.holders_changed = true;
                        }
                    }
                }
                self.tm_maint_step(ctx, &table);
            }
        }
    }

    fn tm_plan(&mut self, ctx: &mut Cx, table: &str, ranked: Vec<(ProcessId, u32)>, alive: Vec<ProcessId>) {
        let (n, t) = (self.cfg.replication, self.cfg.tm_replication);
        let me = self.id;
        let Some(m) = self.managers.get_mut(table) else { return };
        let Some(maint) = m.maint.as_mut() else { return };
        // Drop replicas and state copies on hosts no longer alive.
        let mut dropped = false;
        for host in m.state.replicas.iter().map(|r| r.host).chain(m.state.holders.clone()).collect::<Vec<_>>() {
            if host != me && !alive.contains(&host) {
                dropped |= m.state.forget(host);
            }
        }
        let ranking: Vec<(InstanceRef, f64)> =
            ranked.iter().map(|(p, s)| (instance_ref(*p), *s as f64 / 1000.0)).collect();
        let plan = |current: Vec<ProcessId>, target: usize| -> VecDeque<ProcessId> {
            let current: Vec<InstanceRef> = current.into_iter().map(instance_ref).collect();
            maintain_replication_factor(
                &current,
                target,
                &ranking,
                &m.pattern,
                &BTreeMap::new(),
                NegotiationParams::default(),
            )
            .into_iter()
            .filter_map(|PlacementAction::CreateReplica { on }| instance_pid(&on))
            .collect()
        };
        maint.data_targets = plan(m.state.replicas.iter().map(|r| r.host).collect(), n);
        maint.holder_targets = plan(m.state.holders.clone(), t);
        maint.ranked = true;
        if !maint.data_targets.is_empty() && !maint.lock {
            maint.lock = true;
            if !m.locks.request(MAINTENANCE_TXN, true) {
                if dropped {
                    self.tm_push(ctx, table);
                }
                return;
            }
        }
        if dropped {
            self.tm_push(ctx, table);
        }
        if m_holds_lock(self, table) || self.managers[table].maint.as_ref().is_some_and(|x| !x.lock) {
            self.tm_maint_step(ctx, table);
        }
    }

    /// Next copy of the pass, or wrap up.
    fn tm_maint_step(&mut self, ctx: &mut Cx, table: &str) {
        let me = self.id;
        let holds_lock = m_holds_lock(self, table);
        let Some(m) = self.managers.get_mut(table) else { return };
        let Some(maint) = m.maint.as_mut() else { return };
        if !maint.ranked {
            return;
        }
        if let Some(target) = maint.data_targets.pop_front() {
            if !holds_lock {
                maint.data_targets.push_front(target);
                return;
            }
            let current = m.state.current();
            let Some(source) = (if current.contains(&me) { Some(me) } else { current.first().copied() }) else {
                maint.data_targets.clear();
                return self.tm_maint_step(ctx, table);
            };
            maint.copying = true;
            self.call(ctx, source, Call::Fetch { table: table.to_string() }, Cont::Tm(table.to_string(), TmCont::Fetched(target)));
            return;
        }
        if maint.lock {
            maint.lock = false;
            maint.copying = false;
            self.tm_release_maintenance(ctx, table);
        }
        let Some(m) = self.managers.get_mut(table) else { return };
        let Some(maint) = m.maint.as_mut() else { return };
        if let Some(target) = maint.holder_targets.pop_front() {
            let mut state = m.state.clone();
            if !state.holders.contains(&target) {
                state.holders.push(target);
            }
            let call = Call::TmReplica { state, install: true };
            self.call(ctx, target, call, Cont::Tm(table.to_string(), TmCont::HolderInstalled(target)));
            return;
        }
        self.tm_maint_done(ctx, table);
    }

    fn tm_maint_done(&mut self, ctx: &mut Cx, table: &str) {
        let Some(m) = self.managers.get_mut(table) else { return };
        let Some(maint) = m.maint.take() else { return };
        let holders = m.state.holders.clone();
        if maint.lock {
            self.tm_release_maintenance(ctx, table);
        }
        if maint.holders_changed {
            self.tm_push(ctx, table);
            if let Some(st) = self.st_at {
                let call = Call::TmHolders { table: table.to_string(), holders };
                self.call(ctx, st, call, Cont::Ignore);
            }
        }
        if self.managers.get(table).is_some_and(|m| m.handover.is_some()) {
            let m = self.managers.get_mut(table).expect("manager");
            if m.locks.request(MAINTENANCE_TXN, true) {
                self.tm_hand_over(ctx, table);
            }
        }
    }
}

fn m_holds_lock(i: &Instance, table: &str) -> bool {
    i.managers.get(table).is_some_and(|m| m.locks.holders.contains_key(&MAINTENANCE_TXN))
}

use rand::Rng;
