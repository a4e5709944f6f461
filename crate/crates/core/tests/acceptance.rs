//! Acceptance suite: one line per criterion, then a single verdict.

mod common;

use std::path::PathBuf;

use d2o_core::autonomics::{
    check_thresholds, negotiate_placement, rank_machines, summarize, MachineSpec, MachineType, Metric, Negotiation,
    RankInput, ResourceSummary, ThresholdConfig, ThresholdKind,
};
use d2o_core::commit::{run_commit_sim, CommitSimConfig, Decision, Protocol};
use d2o_core::engine::EngineConfig;
use d2o_core::harness::{bench, parse_script, run_script, scenario_class, BenchConfig, RunConfig, ScenarioClass, ScriptRun};
use d2o_core::locator::{run_crafted_split, OwnershipMode};
use d2o_core::model::{parse_uri, render_uri, InstanceRef};
use d2o_core::paxos::{run_paxos_commit, run_two_proposer_race, SiteVote};
use d2o_core::statements::parse_workload;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SCENARIOS: [&str; 20] = [
    "1A", "1B", "1C", "1D", "1E", "2A", "2B", "2C", "2D", "2E", "3A", "3B", "3C", "3D", "3E", "4A", "4B", "4C", "4D", "4E",
];

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn message_counts() -> Outcome {
    for n in 1..=8u64 {
        for (protocol, want) in [(Protocol::TwoPhase, 3 * n - 1), (Protocol::ThreePhase, 5 * n - 3)] {
            let r = run_commit_sim(&CommitSimConfig::failure_free(protocol, n as usize));
            ensure(r.messages_sent == want && r.decision == Some(Decision::Commit), || {
                format!("{protocol:?} n={n}: {} messages, want {want}", r.messages_sent)
            })?;
        }
    }
    for n in 1..=3u64 {
        for f in [1u64, 3, 5] {
            let want = (2 * f + 3) * n - 1;
            let r = run_paxos_commit(&vec![SiteVote::Prepared; n as usize], f as usize, 1, &[]);
            ensure(r.messages_sent == want, || format!("paxos commit n={n} f={f}: {} messages, want {want}", r.messages_sent))?;
        }
    }
    Ok("2PC 3N-1 and 3PC 5N-3 for N=1..8; paxos commit (2F+3)N-1 for 9 (N,F) pairs".into())
}

fn paxos_safety() -> Outcome {
    let schedules = 10_000u64;
    let mut decided = 0;
    for seed in 0..schedules {
        let r = d2o_core::paxos::run_safety_schedule(seed);
        ensure(r.is_safe(), || format!("seed {seed}: chosen {:?}, learned {:?}", r.chosen_values, r.learned))?;
        ensure((2..=3).contains(&r.proposers) && (3..=5).contains(&r.acceptors), || format!("seed {seed}: shape"))?;
        decided += usize::from(!r.chosen_values.is_empty());
    }
    for late_c in [false, true] {
        let r = run_two_proposer_race(late_c);
        ensure(r.chosen == Some(8), || format!("race (late C {late_c}) chose {:?}", r.chosen))?;
    }
    Ok(format!("{schedules} schedules safe ({decided} reached a decision); race chooses 8"))
}

fn single_system_table() -> Outcome {
    let schedules = 1_000u64;
    let mut takeovers = 0;
    for seed in 0..schedules {
        let r = d2o_core::locator::run_safety_schedule(seed, OwnershipMode::PerCommit);
        ensure(r.is_safe(), || format!("CP seed {seed}: {} overlapping commits", r.violations.len()))?;
        takeovers += r.takeovers;
    }
    let cp = run_crafted_split(OwnershipMode::PerCommit);
    ensure(cp.is_safe(), || "crafted split diverges in CP mode".into())?;
    let ca = run_crafted_split(OwnershipMode::Unchecked);
    ensure(!ca.is_safe(), || "crafted split did not diverge with confirmation disabled".into())?;
    Ok(format!("{schedules} CP schedules safe ({takeovers} takeovers); CA split diverges"))
}

fn scenario_matrix() -> Outcome {
    let bound = EngineConfig::new(2).recovery_bound();
    let mut runs: Vec<(&str, ScriptRun)> = Vec::new();
    for name in SCENARIOS {
        let text = std::fs::read_to_string(scenario_dir().join(format!("{name}.script"))).map_err(|e| e.to_string())?;
        let script = parse_script(&text).map_err(|e| format!("{name}: {e}"))?;
        let run = run_script(&script, &RunConfig::new(1, scenario_dir()));
        ensure(run.passed(), || format!("{name}: {}", run.report().replace('\n', "; ")))?;
        let w = run.workloads.first().ok_or_else(|| format!("{name}: no workload"))?;
        let mark = *w.series.failure_marks.first().ok_or_else(|| format!("{name}: no failure"))?;
        let rec = run.recovery.expect("marked series");
        match scenario_class(name).expect("known scenario") {
            ScenarioClass::T1 => {
                ensure(rec.recovery_time_s == 0, || format!("{name}: {} s without commits", rec.recovery_time_s))?;
                ensure(run.stall.is_some_and(|s| s <= bound), || format!("{name}: stall {:?}", run.stall))?;
            }
            ScenarioClass::T2 => {
                ensure(rec.recovered, || format!("{name}: did not recover"))?;
                ensure(run.stall.is_some_and(|s| s <= bound), || format!("{name}: gap {:?} over {bound}", run.stall))?;
            }
            ScenarioClass::T3 => {
                let second = (mark / 1_000_000) as usize;
                ensure(w.series.counts[second + 1..].iter().all(|c| *c == 0), || format!("{name}: commits after the failure"))?;
            }
        }
        runs.push((name, run));
    }
    let stall = |n: &str| runs.iter().find(|(m, _)| *m == n).and_then(|(_, r)| r.stall).unwrap_or(0);
    for (slow, fast) in [("2B", "2A"), ("3B", "3A")] {
        ensure(stall(slow) > stall(fast), || format!("{slow} gap {} not above {fast} gap {}", stall(slow), stall(fast)))?;
    }
    Ok(format!(
        "20 scenarios; gaps within {} ms; 2B {} > 2A {} ms, 3B {} > 3A {} ms",
        bound / 1000,
        stall("2B") / 1000,
        stall("2A") / 1000,
        stall("3B") / 1000,
        stall("3A") / 1000
    ))
}

fn throughput_shape() -> Outcome {
    let mut flush = Vec::new();
    let mut delayed = Vec::new();
    for n in [1, 2, 3, 5] {
        for (write_delay, out) in [(false, &mut flush), (true, &mut delayed)] {
            let cfg = BenchConfig { write_delay, ..BenchConfig::new(n) };
            out.push(bench(&cfg).map_err(|e| e.to_string())?.per_second);
        }
    }
    ensure(flush.windows(2).all(|w| w[1] <= w[0]), || format!("not non-increasing: {flush:?}"))?;
    ensure(flush[0] >= 1.2 * flush[2], || format!("n=1 {} vs n=3 {}", flush[0], flush[2]))?;
    ensure(delayed.iter().zip(&flush).all(|(d, f)| d > f), || format!("write delay {delayed:?} vs flush {flush:?}"))?;
    Ok(format!("txn/s at n=1,2,3,5: flush {flush:.1?}, write delay {delayed:.1?}"))
}

fn serializability() -> Outcome {
    let runs = 1_000u64;
    let mut commits = 0;
    for seed in 0..runs {
        let r = common::serializability_run(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        commits += r.commits;
    }
    Ok(format!("{runs} runs, {commits} committed transactions replayed serially, no wait-for cycle"))
}

fn machine(name: &str, cpu: f64, mem: f64, disk: f64, util: [f64; 3]) -> RankInput {
    RankInput {
        instance: InstanceRef::new(&format!("{name}.sim"), 9090, "db", name),
        spec: MachineSpec { cpu_capacity_mhz: cpu, cpu_cores: 1, memory_mb: mem, disk_mb: disk, os_name: "Linux".into() },
        summary: ResourceSummary::uniform(util[0], util[1], util[2]),
    }
}

fn autonomics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for w in 0..500 {
        let samples: Vec<f64> = (0..rng.gen_range(1..60)).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let s = summarize(&samples).map_err(|e| e.to_string())?;
        // Oracle: selection by rank counting, no sorting.
        let k = (samples.len() - 1) / 2;
        let kth = samples
            .iter()
            .copied()
            .find(|x| {
                let below = samples.iter().filter(|y| *y < x).count();
                below <= k && k < below + samples.iter().filter(|y| *y == x).count()
            })
            .unwrap();
        let min = samples.iter().copied().fold(1.0, f64::min);
        let max = samples.iter().copied().fold(0.0, f64::max);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        ensure(s.min == min && s.max == max && s.median == kth && (s.mean - mean).abs() < 1e-9, || {
            format!("window {w}: {s:?}")
        })?;
    }

    let cpu_only = Metric { cpu: 1.0, memory: 0.0, disk: 0.0 };
    let tie = rank_machines(
        &[machine("B", 4000.0, 1.0, 1.0, [0.75; 3]), machine("A", 2000.0, 1.0, 1.0, [0.5; 3])],
        &cpu_only,
    );
    ensure(
        tie[0].0.instance_name == "A" && (tie[0].1 - 0.25).abs() < 1e-12 && (tie[1].1 - 0.25).abs() < 1e-12,
        || format!("tie example: {tie:?}"),
    )?;
    for set in 0..500 {
        let n = rng.gen_range(1..6);
        let ms: Vec<RankInput> = (0..n)
            .map(|i| {
                let util = [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)];
                machine(
                    &format!("m{i}"),
                    rng.gen_range(500.0..5000.0),
                    rng.gen_range(512.0..65536.0),
                    rng.gen_range(1e4..1e6),
                    util,
                )
            })
            .collect();
        let metric = Metric { cpu: rng.gen_range(0.1..=1.0), memory: rng.gen_range(0.0..=1.0), disk: rng.gen_range(0.0..=1.0) };
        let base = rank_machines(&ms, &metric);
        let k = rng.gen_range(0.1..10.0);
        let scaled: Vec<RankInput> = ms
            .iter()
            .cloned()
            .map(|mut m| {
                m.spec.memory_mb *= k;
                m
            })
            .collect();
        let again = rank_machines(&scaled, &metric);
        ensure(base.iter().zip(&again).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-9), || {
            format!("set {set}: scaling memory by {k} changed the ranking")
        })?;
        let who = rng.gen_range(0..n);
        let mut busier = ms.clone();
        let cpu = busier[who].summary.mean(d2o_core::autonomics::Resource::Cpu);
        let raised = rng.gen_range(cpu..=1.0);
        busier[who].summary = ResourceSummary::uniform(
            raised,
            busier[who].summary.mean(d2o_core::autonomics::Resource::Memory),
            busier[who].summary.mean(d2o_core::autonomics::Resource::Disk),
        );
        let score = |r: &[(InstanceRef, f64)]| r.iter().find(|(i, _)| i.instance_name == format!("m{who}")).unwrap().1;
        ensure(score(&rank_machines(&busier, &metric)) <= score(&base) + 1e-12, || {
            format!("set {set}: more load raised a score")
        })?;
    }

    let ws = ThresholdConfig::for_type(MachineType::Workstation);
    let spec = MachineSpec::default();
    let cpu = check_thresholds(&ResourceSummary::uniform(0.75, 0.1, 0.1), &spec, &ws);
    ensure(cpu.len() == 1 && cpu[0].kind == ThresholdKind::CpuUtilization, || format!("cpu exemplar: {cpu:?}"))?;
    let quiet = check_thresholds(&ResourceSummary::uniform(0.5, 0.5, 0.1), &spec, &ws);
    ensure(quiet.is_empty(), || format!("quiet machine: {quiet:?}"))?;
    let small = MachineSpec { disk_mb: 10_000.0, ..spec.clone() };
    let disk = check_thresholds(&ResourceSummary::uniform(0.1, 0.1, 0.7), &small, &ws);
    ensure(disk.len() == 1 && disk[0].kind == ThresholdKind::DiskFree && (disk[0].observed - 3000.0).abs() < 1e-6, || {
        format!("disk exemplar: {disk:?}")
    })?;

    for i in 0..=20 {
        for j in 0..=20 {
            let (need, will) = (i as f64 / 20.0, j as f64 / 20.0);
            let want = if need > 1.0 - will { Negotiation::Accepted } else { Negotiation::Rejected };
            ensure(negotiate_placement(need, will) == want, || format!("need {need} willingness {will}"))?;
        }
    }
    Ok("500 summaries, tie example, 500 ranking sets, threshold exemplars, 21x21 negotiation grid".into())
}

fn parsers_and_determinism() -> Outcome {
    for name in SCENARIOS {
        let text = std::fs::read_to_string(scenario_dir().join(format!("{name}.script"))).map_err(|e| e.to_string())?;
        parse_script(&text).map_err(|e| format!("{name}: {e}"))?;
    }
    for w in ["short.workload", "st.workload"] {
        let text = std::fs::read_to_string(scenario_dir().join(w)).map_err(|e| e.to_string())?;
        parse_workload(&text).map_err(|e| format!("{w}: {e}"))?;
    }
    let uri = "jdbc:d2o:tcp://archive.cs.st-andrews.ac.uk/d2o:9090/db_files/24e9bj81ff3";
    let r = parse_uri(uri).map_err(|e| e.to_string())?;
    ensure(render_uri(&r) == uri && r.port == 9090 && r.instance_name == "24e9bj81ff3", || format!("uri: {r:?}"))?;
    for name in ["1A", "3B"] {
        let text = std::fs::read_to_string(scenario_dir().join(format!("{name}.script"))).map_err(|e| e.to_string())?;
        let script = parse_script(&text).map_err(|e| e.to_string())?;
        let a = run_script(&script, &RunConfig::new(11, scenario_dir()));
        let b = run_script(&script, &RunConfig::new(11, scenario_dir()));
        ensure(a.trace_hash == b.trace_hash && a == b, || format!("{name}: replay diverged"))?;
    }
    Ok("20 scripts and 2 workloads parse; URI round-trips; replays hash identically".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("message counts", message_counts),
        ("paxos safety", paxos_safety),
        ("single system table", single_system_table),
        ("scenario matrix", scenario_matrix),
        ("throughput shape", throughput_shape),
        ("serializability", serializability),
        ("autonomics", autonomics),
        ("parsers and determinism", parsers_and_determinism),
    ];
    let outcomes: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(f)).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("panicked".into()))).collect()
    });
    let mut failed = 0;
    for (i, ((name, _), outcome)) in criteria.iter().zip(&outcomes).enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
