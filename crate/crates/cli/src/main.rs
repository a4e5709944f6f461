use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use d2o_core::commit::{run_commit_sim, CommitSimConfig, KillPoint, Protocol};
use d2o_core::harness::{bench, parse_script, run_script, BenchCommit, BenchConfig, ReplicationMode, RunConfig};
use d2o_core::paxos::{expected_commit_messages, run_paxos_commit, run_sized_schedule, SiteVote};
use d2o_core::simnet::ms;

#[derive(Parser)]
#[command(name = "d2o", about = "Deterministic simulator for a self-healing replicated database")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a coordination script and report throughput and checks.
    RunScript {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run this many times, with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        /// Directory for throughput.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Throughput of the short workload against n replicas.
    Bench {
        /// Comma-separated replica counts.
        #[arg(long, default_value = "1,2,3,5", value_delimiter = ',')]
        replicas: Vec<usize>,
        /// `sync` or `partial:r`.
        #[arg(long, default_value = "sync")]
        mode: String,
        /// `2pc`, `3pc` or `paxos`.
        #[arg(long, default_value = "2pc")]
        commit: String,
        #[arg(long, default_value = "off")]
        write_delay: String,
        /// Simulated seconds per measurement.
        #[arg(long, default_value_t = 20)]
        seconds: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// One failure-free or crash-injected atomic commit.
    CommitSim {
        /// `2pc`, `3pc` or `paxos`.
        #[arg(long, default_value = "2pc")]
        protocol: String,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Acceptors per site, for paxos commit.
        #[arg(long, default_value_t = 1)]
        acceptors: usize,
        /// `none`, `coordinator:K` or `participant:I:K`: crash after K sends.
        #[arg(long, default_value = "none")]
        kill_at: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Randomized single-decree Paxos schedules, checked for safety.
    PaxosSim {
        #[arg(long)]
        proposers: Option<usize>,
        #[arg(long)]
        acceptors: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        schedules: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<ExitCode> {
    let ok = match Cli::parse().command {
        Cmd::RunScript { file, seed, repeats, out } => run_script_cmd(&file, seed, repeats, out.as_deref())?,
        Cmd::Bench { replicas, mode, commit, write_delay, seconds, seed } => {
            bench_cmd(&replicas, &mode, &commit, &write_delay, seconds, seed)?
        }
        Cmd::CommitSim { protocol, n, acceptors, kill_at, seed } => commit_cmd(&protocol, n, acceptors, &kill_at, seed)?,
        Cmd::PaxosSim { proposers, acceptors, schedules, seed } => paxos_cmd(proposers, acceptors, schedules, seed)?,
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run_script_cmd(file: &Path, seed: u64, repeats: u64, out: Option<&Path>) -> Result<bool> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let script = parse_script(&text)?;
    let base = file.parent().unwrap_or(Path::new("."));
    let mut all_ok = true;
    for i in 0..repeats.max(1) {
        let run = run_script(&script, &RunConfig::new(seed + i, base));
        let report = format!("seed {}\n{}", seed + i, run.report());
        print!("{report}");
        all_ok &= run.passed();
        if let Some(dir) = out {
            let dir = if repeats > 1 { dir.join(format!("run{i}")) } else { dir.to_path_buf() };
            std::fs::create_dir_all(&dir)?;
            let csv = run.workloads.first().map(|w| w.series.to_csv()).unwrap_or_else(|| "second,txns\n".into());
            std::fs::write(dir.join("throughput.csv"), csv)?;
            std::fs::write(dir.join("report.txt"), report)?;
        }
    }
    Ok(all_ok)
}

fn bench_cmd(replicas: &[usize], mode: &str, commit: &str, write_delay: &str, seconds: u64, seed: u64) -> Result<bool> {
    let mode = match mode.split_once(':') {
        None if mode == "sync" => ReplicationMode::Sync,
        Some(("partial", r)) => ReplicationMode::Partial(r.parse().context("partial:r needs a number")?),
        _ => bail!("mode must be sync or partial:r"),
    };
    let commit = match commit {
        "2pc" => BenchCommit::TwoPhase,
        "3pc" => BenchCommit::ThreePhase,
        "paxos" => BenchCommit::Paxos,
        other => bail!("unknown commit protocol {other}"),
    };
    let write_delay = match write_delay {
        "on" => true,
        "off" => false,
        other => bail!("write-delay must be on or off, not {other}"),
    };
    println!("replicas,txns_per_second");
    for n in replicas {
        let cfg = BenchConfig { replicas: *n, mode, commit, write_delay, duration: ms(seconds * 1000), seed };
        let r = bench(&cfg)?;
        println!("{n},{:.2}", r.per_second);
    }
    Ok(true)
}

fn commit_cmd(protocol: &str, n: usize, acceptors: usize, kill_at: &str, seed: u64) -> Result<bool> {
    if n == 0 {
        bail!("n must be at least 1");
    }
    let protocol = match protocol {
        "2pc" => Protocol::TwoPhase,
        "3pc" => Protocol::ThreePhase,
        "paxos" => {
            if kill_at != "none" {
                bail!("paxos commit takes no kill point");
            }
            let r = run_paxos_commit(&vec![SiteVote::Prepared; n], acceptors, seed, &[]);
            println!("messages {} expected {}", r.messages_sent, expected_commit_messages(n, acceptors));
            println!("decision {:?}", r.decision);
            return Ok(r.messages_sent == expected_commit_messages(n, acceptors));
        }
        other => bail!("unknown protocol {other}"),
    };
    let mut cfg = CommitSimConfig::failure_free(protocol, n);
    cfg.seed = seed;
    cfg.kill = parse_kill(kill_at)?;
    let r = run_commit_sim(&cfg);
    println!("messages {}", r.messages_sent);
    println!("decision {:?}", r.decision);
    println!("outcome {:?}", r.outcome());
    println!("participants {:?}", r.outcomes);
    Ok(r.agreement_holds())
}

fn parse_kill(s: &str) -> Result<Option<KillPoint>> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.parse::<usize>().with_context(|| format!("bad number in kill point {s}"));
    Ok(match parts.as_slice() {
        ["none"] => None,
        ["coordinator", k] => Some(KillPoint::CoordinatorAfterSends(num(k)?)),
        ["participant", i, k] => Some(KillPoint::ParticipantAfterSends(num(i)?, num(k)?)),
        _ => bail!("kill point must be none, coordinator:K or participant:I:K"),
    })
}

fn paxos_cmd(proposers: Option<usize>, acceptors: Option<usize>, schedules: u64, seed: u64) -> Result<bool> {
    if proposers.is_some_and(|p| p == 0) || acceptors.is_some_and(|a| a == 0) {
        bail!("need at least one proposer and one acceptor");
    }
    let mut unsafe_runs = 0;
    let mut decided = 0;
    for s in seed..seed + schedules {
        let r = run_sized_schedule(s, proposers, acceptors);
        if !r.is_safe() {
            unsafe_runs += 1;
            println!("unsafe schedule {s}: chosen {:?}", r.chosen_values);
        }
        decided += u64::from(!r.chosen_values.is_empty());
    }
    println!("schedules {schedules} decided {decided} unsafe {unsafe_runs}");
    Ok(unsafe_runs == 0)
}
