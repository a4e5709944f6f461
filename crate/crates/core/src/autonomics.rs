//! Monitoring summaries, machine ranking, threshold checks, replica
//! placement with negotiation, and the replication-factor top-up.
//!
//! Everything here is a pure function of its inputs. The engine calls these
//! from periodic timers; utilization comes from [`SyntheticSensor`].

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::InstanceRef;
use crate::simnet::{ms, Time};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutonomicsError {
    #[error("empty sampling window")]
    EmptyWindow,
    #[error("sample {0} outside [0,1]")]
    SampleOutOfRange(f64),
    #[error("no eligible instance")]
    NoEligibleInstance,
    #[error("invalid config line {line}: {reason}")]
    Config { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resource {
    Cpu,
    Memory,
    Disk,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Cpu, Resource::Memory, Resource::Disk];
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineSpec {
    pub cpu_capacity_mhz: f64,
    pub cpu_cores: u32,
    pub memory_mb: f64,
    pub disk_mb: f64,
    pub os_name: String,
}

impl MachineSpec {
    pub fn capacity(&self, r: Resource) -> f64 {
        match r {
            Resource::Cpu => self.cpu_capacity_mhz * f64::from(self.cpu_cores),
            Resource::Memory => self.memory_mb,
            Resource::Disk => self.disk_mb,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.cpu_capacity_mhz > 0.0 && self.cpu_cores > 0 && self.memory_mb > 0.0 && self.disk_mb > 0.0
    }
}

impl Default for MachineSpec {
    fn default() -> Self {
        MachineSpec {
            cpu_capacity_mhz: 2400.0,
            cpu_cores: 2,
            memory_mb: 4096.0,
            disk_mb: 160_000.0,
            os_name: "Linux".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

/// Order statistics of one window. Even-length windows take the lower
/// middle element as the median.
pub fn summarize(samples: &[f64]) -> Result<Stats, AutonomicsError> {
    if samples.is_empty() {
        return Err(AutonomicsError::EmptyWindow);
    }
    if let Some(&bad) = samples.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(AutonomicsError::SampleOutOfRange(bad));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = (sorted.iter().sum::<f64>() / sorted.len() as f64).clamp(sorted[0], sorted[sorted.len() - 1]);
    Ok(Stats { min: sorted[0], max: sorted[sorted.len() - 1], mean, median: sorted[(sorted.len() - 1) / 2] })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSummary {
    pub stats: BTreeMap<Resource, Stats>,
    pub disk_writes_per_s: f64,
    /// Samples per minute.
    pub sampling_rate: f64,
    pub window: (Time, Time),
}

impl ResourceSummary {
    pub fn from_samples(samples: &[[f64; 3]], sampling_rate: f64, window: (Time, Time)) -> Result<Self, AutonomicsError> {
        let mut stats = BTreeMap::new();
        for (i, r) in Resource::ALL.into_iter().enumerate() {
            let col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            stats.insert(r, summarize(&col)?);
        }
        Ok(ResourceSummary { stats, disk_writes_per_s: 0.0, sampling_rate, window })
    }

    /// A flat summary: every statistic equals `u`.
    pub fn uniform(cpu: f64, memory: f64, disk: f64) -> Self {
        let s = |u: f64| Stats { min: u, max: u, mean: u, median: u };
        ResourceSummary {
            stats: [(Resource::Cpu, s(cpu)), (Resource::Memory, s(memory)), (Resource::Disk, s(disk))].into(),
            disk_writes_per_s: 0.0,
            sampling_rate: 60.0,
            window: (0, 0),
        }
    }

    pub fn mean(&self, r: Resource) -> f64 {
        self.stats.get(&r).map_or(0.0, |s| s.mean)
    }
}

/// Keeps the newest summaries per instance.
#[derive(Debug, Clone, Default)]
pub struct SummaryStore {
    per_instance: BTreeMap<String, Vec<ResourceSummary>>,
}

impl SummaryStore {
    pub const RETAIN: usize = 60;

    pub fn push(&mut self, instance: &str, s: ResourceSummary) {
        let v = self.per_instance.entry(instance.to_string()).or_default();
        v.push(s);
        if v.len() > Self::RETAIN {
            v.drain(..v.len() - Self::RETAIN);
        }
    }

    pub fn latest(&self, instance: &str) -> Option<&ResourceSummary> {
        self.per_instance.get(instance).and_then(|v| v.last())
    }

    pub fn len(&self, instance: &str) -> usize {
        self.per_instance.get(instance).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.per_instance.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub cpu: f64,
    pub memory: f64,
    pub disk: f64,
}

impl Metric {
    pub fn weight(&self, r: Resource) -> f64 {
        match r {
            Resource::Cpu => self.cpu,
            Resource::Memory => self.memory,
            Resource::Disk => self.disk,
        }
    }

    pub fn is_valid(&self) -> bool {
        let ws = [self.cpu, self.memory, self.disk];
        ws.iter().all(|w| (0.0..=1.0).contains(w)) && ws.iter().any(|w| *w > 0.0)
    }

    /// `cpu=1`, `memory=0.5`, `disk=0` lines; missing keys default to 0.
    pub fn parse(text: &str) -> Result<Self, AutonomicsError> {
        let mut m = Metric { cpu: 0.0, memory: 0.0, disk: 0.0 };
        for (line, key, value) in key_values(text)? {
            let v: f64 = value.parse().map_err(|_| AutonomicsError::Config { line, reason: format!("bad number `{value}`") })?;
            match key {
                "cpu" => m.cpu = v,
                "memory" | "mem" => m.memory = v,
                "disk" => m.disk = v,
                _ => return Err(AutonomicsError::Config { line, reason: format!("unknown key `{key}`") }),
            }
        }
        if !m.is_valid() {
            return Err(AutonomicsError::Config { line: 0, reason: "weights must be in [0,1], one positive".into() });
        }
        Ok(m)
    }
}

impl Default for Metric {
    fn default() -> Self {
        Metric { cpu: 1.0, memory: 1.0, disk: 1.0 }
    }
}

fn key_values(text: &str) -> Result<Vec<(usize, &str, &str)>, AutonomicsError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| AutonomicsError::Config { line: i + 1, reason: "expected key=value".into() })?;
        out.push((i + 1, k.trim(), v.trim()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RankInput {
    pub instance: InstanceRef,
    pub spec: MachineSpec,
    pub summary: ResourceSummary,
}

/// Capacity relative to the largest ranked machine, times spare fraction,
/// times weight, summed over resources. Highest first; ties by instance
/// name.
pub fn rank_machines(machines: &[RankInput], metric: &Metric) -> Vec<(InstanceRef, f64)> {
    let res_max: BTreeMap<Resource, f64> = Resource::ALL
        .into_iter()
        .map(|r| (r, machines.iter().map(|m| m.spec.capacity(r)).fold(0.0, f64::max)))
        .collect();
    let mut out: Vec<(InstanceRef, f64)> = machines
        .iter()
        .map(|m| {
            let score = Resource::ALL
                .into_iter()
                .map(|r| {
                    let util = m.summary.mean(r).clamp(0.0, 1.0);
                    (m.spec.capacity(r) / res_max[&r]) * (1.0 - util) * metric.weight(r)
                })
                .sum();
            (m.instance.clone(), score)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.instance_name.cmp(&b.0.instance_name)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MachineType {
    DedicatedServer,
    SharedServer,
    Workstation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdConfig {
    pub machine_type: MachineType,
    pub cpu_util_max: Option<f64>,
    pub mem_util_max: Option<f64>,
    pub disk_free_min_mb: Option<f64>,
    pub disk_writes_max_per_s: Option<f64>,
}

impl ThresholdConfig {
    pub fn for_type(machine_type: MachineType) -> Self {
        let ws = ThresholdConfig {
            machine_type,
            cpu_util_max: Some(0.70),
            mem_util_max: Some(0.80),
            disk_free_min_mb: Some(4096.0),
            disk_writes_max_per_s: Some(4000.0),
        };
        match machine_type {
            MachineType::Workstation => ws,
            MachineType::SharedServer => ThresholdConfig {
                machine_type,
                cpu_util_max: Some((0.70f64 * 1.25).min(1.0)),
                mem_util_max: Some((0.80f64 * 1.25).min(1.0)),
                disk_free_min_mb: Some(4096.0 / 1.25),
                disk_writes_max_per_s: Some(4000.0 * 1.25),
            },
            MachineType::DedicatedServer => ThresholdConfig {
                machine_type,
                cpu_util_max: None,
                mem_util_max: None,
                disk_free_min_mb: None,
                disk_writes_max_per_s: None,
            },
        }
    }

    /// `type=workstation` selects defaults; other keys override them.
    pub fn parse(text: &str) -> Result<Self, AutonomicsError> {
        let kvs = key_values(text)?;
        let mut cfg = ThresholdConfig::for_type(MachineType::Workstation);
        for &(line, k, v) in &kvs {
            if k == "type" {
                let t = match v.to_ascii_lowercase().replace(['_', '-', ' '], "").as_str() {
                    "dedicatedserver" => MachineType::DedicatedServer,
                    "sharedserver" => MachineType::SharedServer,
                    "workstation" => MachineType::Workstation,
                    _ => return Err(AutonomicsError::Config { line, reason: format!("unknown machine type `{v}`") }),
                };
                cfg = ThresholdConfig::for_type(t);
            }
        }
        for (line, k, v) in kvs {
            if k == "type" {
                continue;
            }
            let n: f64 = v.parse().map_err(|_| AutonomicsError::Config { line, reason: format!("bad number `{v}`") })?;
            let slot = match k {
                "cpu_util_max" => &mut cfg.cpu_util_max,
                "mem_util_max" => &mut cfg.mem_util_max,
                "disk_free_min_mb" => &mut cfg.disk_free_min_mb,
                "disk_writes_max_per_s" => &mut cfg.disk_writes_max_per_s,
                _ => return Err(AutonomicsError::Config { line, reason: format!("unknown key `{k}`") }),
            };
            let ok = match k {
                "cpu_util_max" | "mem_util_max" => (0.0..=1.0).contains(&n),
                _ => n >= 0.0,
            };
            if !ok {
                return Err(AutonomicsError::Config { line, reason: format!("`{k}` out of range") });
            }
            *slot = Some(n);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThresholdKind {
    CpuUtilization,
    MemoryUtilization,
    DiskFree,
    DiskWrites,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdEvent {
    pub kind: ThresholdKind,
    pub observed: f64,
    pub threshold: f64,
}

pub fn check_thresholds(summary: &ResourceSummary, spec: &MachineSpec, cfg: &ThresholdConfig) -> Vec<ThresholdEvent> {
    let mut out = Vec::new();
    let mut above = |kind, observed: f64, limit: Option<f64>| {
        if let Some(t) = limit {
            if observed > t {
                out.push(ThresholdEvent { kind, observed, threshold: t });
            }
        }
    };
    above(ThresholdKind::CpuUtilization, summary.mean(Resource::Cpu), cfg.cpu_util_max);
    above(ThresholdKind::MemoryUtilization, summary.mean(Resource::Memory), cfg.mem_util_max);
    above(ThresholdKind::DiskWrites, summary.disk_writes_per_s, cfg.disk_writes_max_per_s);
    if let Some(min) = cfg.disk_free_min_mb {
        let free = spec.disk_mb * (1.0 - summary.mean(Resource::Disk));
        if free < min {
            out.push(ThresholdEvent { kind: ThresholdKind::DiskFree, observed: free, threshold: min });
        }
    }
    out
}

/// A movement the planner would make in response to a threshold event.
/// Plans are reported, never executed.
#[derive(Debug, Clone, PartialEq)]
pub enum MovePlan {
    ShedReplicas { from: String, reason: ThresholdKind },
    MoveManagers { from: String, reason: ThresholdKind },
}

pub fn plan_moves(instance: &str, events: &[ThresholdEvent]) -> Vec<MovePlan> {
    events
        .iter()
        .map(|e| match e.kind {
            ThresholdKind::DiskFree | ThresholdKind::DiskWrites => {
                MovePlan::ShedReplicas { from: instance.to_string(), reason: e.kind }
            }
            ThresholdKind::CpuUtilization | ThresholdKind::MemoryUtilization => {
                MovePlan::MoveManagers { from: instance.to_string(), reason: e.kind }
            }
        })
        .collect()
}

/// Where a table manager's queries come from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryPattern {
    pub requests: BTreeMap<String, u64>,
}

impl QueryPattern {
    pub fn record(&mut self, instance_name: &str) {
        *self.requests.entry(instance_name.to_string()).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.requests.values().sum()
    }

    pub fn share(&self, instance_name: &str) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.requests.get(instance_name).copied().unwrap_or(0) as f64 / t as f64,
        }
    }
}

pub const DEFAULT_PATTERN_WEIGHT: f64 = 0.5;

/// Best eligible instance by ranking score plus query-share bonus. Ties go
/// to the earlier entry of `ranking`.
pub fn choose_replica_location(
    ranking: &[(InstanceRef, f64)],
    pattern: &QueryPattern,
    excluded: &[InstanceRef],
    weight_q: f64,
) -> Result<InstanceRef, AutonomicsError> {
    let mut best: Option<(&InstanceRef, f64)> = None;
    for (inst, score) in ranking {
        if excluded.contains(inst) {
            continue;
        }
        let s = score + weight_q * pattern.share(&inst.instance_name);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((inst, s));
        }
    }
    best.map(|(i, _)| i.clone()).ok_or(AutonomicsError::NoEligibleInstance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Negotiation {
    Accepted,
    Rejected,
}

pub fn negotiate_placement(level_of_need: f64, willingness_to_help: f64) -> Negotiation {
    if level_of_need > 1.0 - willingness_to_help {
        Negotiation::Accepted
    } else {
        Negotiation::Rejected
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegotiationParams {
    pub initial_need: f64,
    pub escalation_step: f64,
}

impl Default for NegotiationParams {
    fn default() -> Self {
        NegotiationParams { initial_need: 0.1, escalation_step: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationResult {
    pub chosen: Option<InstanceRef>,
    pub final_need: f64,
    /// Passes over the candidate list.
    pub rounds: u32,
}

/// Ask each candidate in order; after a full pass of refusals raise the
/// level of need by one step, up to 1.
pub fn escalate(candidates: &[(InstanceRef, f64)], params: NegotiationParams) -> NegotiationResult {
    let step = params.escalation_step.max(1e-6);
    let mut need = params.initial_need.clamp(0.0, 1.0);
    let mut rounds = 0;
    loop {
        rounds += 1;
        for (inst, willingness) in candidates {
            if negotiate_placement(need, *willingness) == Negotiation::Accepted {
                return NegotiationResult { chosen: Some(inst.clone()), final_need: need, rounds };
            }
        }
        if need >= 1.0 {
            return NegotiationResult { chosen: None, final_need: need, rounds };
        }
        need = if need + step >= 1.0 - 1e-9 { 1.0 } else { need + step };
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementAction {
    CreateReplica { on: InstanceRef },
}

/// One maintenance tick: for each missing replica pick a location and
/// negotiate for it. Leaves the deficit for the next tick when no
/// candidate accepts.
pub fn maintain_replication_factor(
    current: &[InstanceRef],
    target: usize,
    ranking: &[(InstanceRef, f64)],
    pattern: &QueryPattern,
    willingness: &BTreeMap<String, f64>,
    params: NegotiationParams,
) -> Vec<PlacementAction> {
    let mut holders = current.to_vec();
    let mut out = Vec::new();
    while holders.len() < target {
        let mut excluded = holders.clone();
        let mut placed = false;
        // Try candidates in preference order until one accepts.
        while let Ok(candidate) = choose_replica_location(ranking, pattern, &excluded, DEFAULT_PATTERN_WEIGHT) {
            let w = willingness.get(&candidate.instance_name).copied().unwrap_or(1.0);
            if escalate(&[(candidate.clone(), w)], params).chosen.is_some() {
                holders.push(candidate.clone());
                out.push(PlacementAction::CreateReplica { on: candidate });
                placed = true;
                break;
            }
            excluded.push(candidate);
        }
        if !placed {
            break;
        }
    }
    out
}

/// Scripted utilization: a step function over `clock_ms,cpu,mem,disk` rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticSensor {
    pub timeline: Vec<(Time, [f64; 3])>,
}

impl SyntheticSensor {
    pub fn constant(cpu: f64, mem: f64, disk: f64) -> Self {
        SyntheticSensor { timeline: vec![(0, [cpu, mem, disk])] }
    }

    pub fn parse_csv(text: &str) -> Result<Self, AutonomicsError> {
        let mut timeline = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') || l.starts_with("clock_ms") {
                continue;
            }
            let bad = |reason: &str| AutonomicsError::Config { line: i + 1, reason: reason.to_string() };
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad("expected clock_ms,cpu,mem,disk"));
            }
            let clock: u64 = f[0].parse().map_err(|_| bad("bad clock"))?;
            let mut u = [0.0; 3];
            for (j, v) in f[1..].iter().enumerate() {
                u[j] = v.parse().map_err(|_| bad("bad utilization"))?;
                if !(0.0..=1.0).contains(&u[j]) {
                    return Err(bad("utilization outside [0,1]"));
                }
            }
            timeline.push((ms(clock), u));
        }
        timeline.sort_by_key(|(t, _)| *t);
        Ok(SyntheticSensor { timeline })
    }

    pub fn sample_at(&self, t: Time) -> [f64; 3] {
        self.timeline.iter().take_while(|(at, _)| *at <= t).last().map_or([0.0; 3], |(_, u)| *u)
    }

    /// Sample `count` points evenly over `[start, end)` and summarize.
    pub fn summary(&self, start: Time, end: Time, count: usize) -> ResourceSummary {
        let count = count.max(1);
        let span = end.saturating_sub(start);
        let samples: Vec<[f64; 3]> =
            (0..count).map(|i| self.sample_at(start + span * i as u64 / count as u64)).collect();
        let minutes = span as f64 / ms(60_000) as f64;
        let rate = if minutes > 0.0 { count as f64 / minutes } else { 0.0 };
        ResourceSummary::from_samples(&samples, rate, (start, end)).expect("sensor values are validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(name: &str) -> InstanceRef {
        InstanceRef::new(&format!("{name}.sim"), 9090, "db", name)
    }

    fn machine(name: &str, cpu_mhz: f64, util: f64) -> RankInput {
        RankInput {
            instance: inst(name),
            spec: MachineSpec { cpu_capacity_mhz: cpu_mhz, cpu_cores: 1, ..MachineSpec::default() },
            summary: ResourceSummary::uniform(util, util, util),
        }
    }

    #[test]
    fn summary_by_hand() {
        let s = summarize(&[0.2, 0.4, 0.6]).unwrap();
        assert_eq!((s.min, s.max, s.median), (0.2, 0.6, 0.4));
        assert!((s.mean - 0.4).abs() < 1e-12);
        let one = summarize(&[0.3]).unwrap();
        assert_eq!((one.min, one.max, one.mean, one.median), (0.3, 0.3, 0.3, 0.3));
        assert_eq!(summarize(&[0.1, 0.9, 0.5, 0.3]).unwrap().median, 0.3);
        assert_eq!(summarize(&[]), Err(AutonomicsError::EmptyWindow));
        assert!(summarize(&[1.5]).is_err());
    }

    #[test]
    fn summaries_are_trimmed() {
        let mut store = SummaryStore::default();
        for i in 0..100 {
            store.push("a", ResourceSummary::uniform(i as f64 / 100.0, 0.0, 0.0));
        }
        assert_eq!(store.len("a"), SummaryStore::RETAIN);
        assert_eq!(store.latest("a").unwrap().mean(Resource::Cpu), 0.99);
    }

    #[test]
    fn ranking_examples() {
        let busy = [machine("a", 2000.0, 1.0), machine("b", 3000.0, 1.0)];
        assert!(rank_machines(&busy, &Metric::default()).iter().all(|(_, s)| *s == 0.0));

        let idle = [machine("a", 2000.0, 0.0)];
        assert!((rank_machines(&idle, &Metric::default())[0].1 - 3.0).abs() < 1e-12);

        let cpu_only = Metric { cpu: 1.0, memory: 0.0, disk: 0.0 };
        let r = rank_machines(&[machine("b", 4000.0, 0.75), machine("a", 2000.0, 0.5)], &cpu_only);
        assert_eq!(r[0].0.instance_name, "a");
        assert!((r[0].1 - 0.25).abs() < 1e-12 && (r[1].1 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let ws = ThresholdConfig::for_type(MachineType::Workstation);
        let spec = MachineSpec::default();
        let cpu = check_thresholds(&ResourceSummary::uniform(0.75, 0.1, 0.1), &spec, &ws);
        assert_eq!(cpu.len(), 1);
        assert_eq!(cpu[0].kind, ThresholdKind::CpuUtilization);
        assert_eq!(cpu[0].threshold, 0.70);
        assert!(check_thresholds(&ResourceSummary::uniform(0.1, 0.1, 0.1), &spec, &ws).is_empty());

        let small = MachineSpec { disk_mb: 10_000.0, ..spec.clone() };
        let disk = check_thresholds(&ResourceSummary::uniform(0.1, 0.1, 0.7), &small, &ws);
        assert_eq!(disk.len(), 1);
        assert_eq!(disk[0].kind, ThresholdKind::DiskFree);
        assert!((disk[0].observed - 3000.0).abs() < 1e-6);

        let ded = ThresholdConfig::for_type(MachineType::DedicatedServer);
        assert!(check_thresholds(&ResourceSummary::uniform(1.0, 1.0, 1.0), &small, &ded).is_empty());
        assert_eq!(plan_moves("a", &disk), vec![MovePlan::ShedReplicas { from: "a".into(), reason: ThresholdKind::DiskFree }]);
    }

    #[test]
    fn config_files() {
        let m = Metric::parse("cpu=1\n# memory ignored\nmemory=0.5\n").unwrap();
        assert_eq!(m, Metric { cpu: 1.0, memory: 0.5, disk: 0.0 });
        assert!(Metric::parse("cpu=0\n").is_err());
        assert!(Metric::parse("gpu=1\n").is_err());
        let t = ThresholdConfig::parse("type=shared server\ncpu_util_max=0.9\n").unwrap();
        assert_eq!(t.machine_type, MachineType::SharedServer);
        assert_eq!(t.cpu_util_max, Some(0.9));
        assert!(ThresholdConfig::parse("cpu_util_max=2\n").is_err());
    }

    #[test]
    fn placement_examples() {
        let ranking = vec![(inst("x"), 1.0), (inst("y"), 1.0), (inst("z"), 1.0)];
        let mut p = QueryPattern::default();
        for _ in 0..10 {
            p.record("y");
        }
        assert_eq!(choose_replica_location(&ranking, &p, &[], 0.5).unwrap(), inst("y"));
        assert_eq!(choose_replica_location(&ranking, &QueryPattern::default(), &[], 0.5).unwrap(), inst("x"));
        assert_eq!(choose_replica_location(&ranking, &p, &[inst("x"), inst("y")], 0.5).unwrap(), inst("z"));
        let all: Vec<_> = ranking.iter().map(|r| r.0.clone()).collect();
        assert_eq!(choose_replica_location(&ranking, &p, &all, 0.5), Err(AutonomicsError::NoEligibleInstance));
    }

    #[test]
    fn negotiation_examples() {
        assert_eq!(negotiate_placement(0.8, 0.5), Negotiation::Accepted);
        assert_eq!(negotiate_placement(0.3, 0.5), Negotiation::Rejected);
        assert_eq!(negotiate_placement(0.5, 0.5), Negotiation::Rejected);
        let targets = vec![(inst("a"), 0.2), (inst("b"), 0.2)];
        let r = escalate(&targets, NegotiationParams { initial_need: 0.1, escalation_step: 0.3 });
        assert_eq!(r.chosen, Some(inst("a")));
        assert!(r.final_need > 0.8);
        // 0.1, 0.4, 0.7 refused; 1.0 accepted.
        assert_eq!(r.rounds, 4);
        let r = escalate(&[(inst("a"), 0.0)], NegotiationParams::default());
        assert_eq!(r.chosen, None);
    }

    #[test]
    fn maintenance_ticks() {
        let ranking = vec![(inst("m1"), 2.0), (inst("m2"), 1.0)];
        let none = BTreeMap::new();
        let p = QueryPattern::default();
        let acts = maintain_replication_factor(&[inst("m1")], 2, &ranking, &p, &none, NegotiationParams::default());
        assert_eq!(acts, vec![PlacementAction::CreateReplica { on: inst("m2") }]);
        let alone = vec![(inst("m1"), 2.0)];
        assert!(maintain_replication_factor(&[inst("m1")], 2, &alone, &p, &none, NegotiationParams::default()).is_empty());
        assert!(maintain_replication_factor(&[inst("m1"), inst("m2")], 2, &ranking, &p, &none, NegotiationParams::default())
            .is_empty());
        let stubborn: BTreeMap<String, f64> = [("m2".to_string(), 0.0)].into();
        assert!(maintain_replication_factor(&[inst("m1")], 2, &ranking, &p, &stubborn, NegotiationParams::default())
            .is_empty());
    }

    #[test]
    fn sensor_timeline() {
        let s = SyntheticSensor::parse_csv("clock_ms,cpu,mem,disk\n0,0.1,0.2,0.3\n1000,0.9,0.2,0.3\n").unwrap();
        assert_eq!(s.sample_at(ms(999))[0], 0.1);
        assert_eq!(s.sample_at(ms(1000))[0], 0.9);
        let sum = s.summary(0, ms(2000), 4);
        assert_eq!(sum.stats[&Resource::Cpu].min, 0.1);
        assert_eq!(sum.stats[&Resource::Cpu].max, 0.9);
        assert!(SyntheticSensor::parse_csv("0,2,0,0\n").is_err());
    }

    proptest! {
        #[test]
        fn summary_matches_bruteforce(samples in proptest::collection::vec(0.0f64..=1.0, 1..50)) {
            let s = summarize(&samples).unwrap();
            // Oracle: rank counting instead of sorting.
            let n = samples.len();
            let k = (n - 1) / 2;
            let median = samples.iter().copied().find(|x| {
                let below = samples.iter().filter(|y| *y < x).count();
                let equal = samples.iter().filter(|y| *y == x).count();
                below <= k && k < below + equal
            }).unwrap();
            prop_assert_eq!(s.median, median);
            prop_assert_eq!(s.min, samples.iter().copied().fold(f64::INFINITY, f64::min));
            prop_assert_eq!(s.max, samples.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            prop_assert!(s.min <= s.median && s.median <= s.max && s.min <= s.mean && s.mean <= s.max);
        }

        #[test]
        fn score_bounds(utils in proptest::collection::vec((100.0f64..5000.0, 0.0f64..=1.0), 1..6),
                        w in (0.0f64..=1.0, 0.0f64..=1.0, 0.01f64..=1.0)) {
            let metric = Metric { cpu: w.0, memory: w.1, disk: w.2 };
            let ms: Vec<RankInput> = utils.iter().enumerate().map(|(i, (c, u))| machine(&format!("m{i}"), *c, *u)).collect();
            for (_, s) in rank_machines(&ms, &metric) {
                prop_assert!(s >= 0.0 && s <= w.0 + w.1 + w.2 + 1e-9);
            }
        }
    }
}
