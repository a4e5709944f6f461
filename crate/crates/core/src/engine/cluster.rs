//! A simulated deployment: locator servers plus database instances in one
//! deterministic world, with blocking helpers for drivers and tests.

use super::*;
use crate::simnet::{LinkModel, World};

pub struct Cluster {
    pub world: World<EngineNode>,
    pub cfg: EngineConfig,
}

impl Cluster {
    /// Locators start at once; instances start on request.
    pub fn new(cfg: EngineConfig, seed: u64) -> Self {
        Self::with_link(cfg.clone(), seed, LinkModel::fixed(cfg.latency))
    }

    pub fn with_link(cfg: EngineConfig, seed: u64, link: LinkModel) -> Self {
        let mut world = World::new(seed, link);
        for i in 0..cfg.locators {
            world.spawn(locator_pid(i), |_, _| EngineNode::Locator);
        }
        Cluster { world, cfg }
    }

    pub fn now(&self) -> Time {
        self.world.now()
    }

    pub fn instance(&self, id: ProcessId) -> Option<&Instance> {
        self.world.actor(id).and_then(|a| a.instance())
    }

    /// Boot a machine (fresh, or from its surviving disk) and run until it
    /// has joined or `patience` runs out.
    pub fn start_machine(&mut self, id: ProcessId, patience: Time) -> bool {
        if self.world.status(id).is_none() {
            let cfg = self.cfg.clone();
            self.world.spawn(id, move |pid, _| EngineNode::Instance(Box::new(Instance::new(pid, cfg.clone()))));
        } else {
            self.world.restart(id);
        }
        self.run_while(patience, |c| !c.instance(id).is_some_and(|i| i.is_joined() || matches!(i.status, Status::Failed(_))));
        self.instance(id).is_some_and(|i| i.is_joined())
    }

    pub fn kill(&mut self, id: ProcessId) {
        self.world.kill(id);
    }

    pub fn run_for(&mut self, d: Time) {
        self.world.run_for(d);
    }

    /// Step until `busy` turns false or `limit` of simulated time passes.
    /// Returns whether `busy` turned false.
    pub fn run_while(&mut self, limit: Time, mut busy: impl FnMut(&Self) -> bool) -> bool {
        let end = self.world.now() + limit;
        while busy(self) {
            match self.world.next_event_time() {
                Some(t) if t <= end => {
                    self.world.step();
                }
                _ => {
                    self.world.run_until(end);
                    return !busy(self);
                }
            }
        }
        true
    }

    pub fn submit(&mut self, id: ProcessId, job: Job) -> Option<u64> {
        self.world.invoke(id, |a, ctx| a.instance_mut().map(|i| i.submit(ctx, job))).flatten()
    }

    pub fn outcome(&self, id: ProcessId, job: u64) -> Option<JobOutcome> {
        self.instance(id)?.job_outcome(job).cloned()
    }

    /// Run statements on one machine and wait for the outcome.
    pub fn execute(&mut self, id: ProcessId, stmts: Vec<Statement>, patience: Time) -> JobOutcome {
        let Some(job) = self.submit(id, Job::Statements { stmts, patience }) else {
            return JobOutcome::Failed(EngineError::Timeout(id));
        };
        self.run_while(patience + self.cfg.rpc_timeout * 4, |c| c.outcome(id, job).is_none() && c.world.is_up(id));
        self.outcome(id, job).unwrap_or(JobOutcome::Failed(EngineError::Timeout(id)))
    }

    pub fn set_paused(&mut self, id: ProcessId, paused: bool) {
        self.world.invoke(id, |a, ctx| {
            if let Some(i) = a.instance_mut() {
                i.set_paused(ctx, paused);
            }
        });
    }

    pub fn repl_factor(&self, table: &str) -> usize {
        repl_factor(&self.world, table)
    }

    pub fn meta_repl_factor(&self, table: Option<&str>) -> usize {
        meta_repl_factor(&self.world, table)
    }

    /// Every live instance's notes, in time order.
    pub fn notes(&self) -> Vec<(ProcessId, Note)> {
        let mut out: Vec<(ProcessId, Note)> = self
            .world
            .actors()
            .filter_map(|(p, a)| Some((p, a.instance()?)))
            .flat_map(|(p, i)| i.notes.iter().cloned().map(move |n| (p, n)))
            .collect();
        out.sort_by_key(|(_, n)| n.at);
        out
    }
}
