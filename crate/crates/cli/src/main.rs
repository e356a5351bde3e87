use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xshard::adversary::{configure_workers, exhaustive_replay_sweep, run_table_attack, SweepBounds};
use xshard::bench::{byzcuit_commit_messages, message_complexity, run_bench, sbac_phase1_votes, BenchConfig};
use xshard::node::Protocol;
use xshard::report::{render_tables, Report};
use xshard::scenario::{run_scenario, Scenario};
use xshard::Error;

const PASS: u8 = 0;
const ASSERTION_FAILED: u8 = 1;
const USAGE: u8 = 2;
const INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "xshard", version, about = "Cross-shard commit protocols under replay attacks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and write its report.
    Run {
        file: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reproduce one row of the attack tables.
    Attack {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        table: u8,
        #[arg(long)]
        row: u8,
        #[arg(long, value_parser = parse_protocol)]
        protocol: Protocol,
        /// Also write the attack as a scenario file.
        #[arg(long)]
        save_scenario: Option<PathBuf>,
    },
    /// Exhaustively search replay schedules of the canonical transaction.
    Sweep {
        #[arg(long, value_parser = parse_protocol)]
        protocol: Protocol,
        #[arg(long, default_value_t = 3)]
        max_shards: u16,
        #[arg(long, default_value_t = 2)]
        max_injections: u8,
    },
    /// Message counts and simulated throughput over a range of shard counts.
    Bench {
        #[arg(long, value_parser = parse_protocol)]
        protocol: Protocol,
        /// Inclusive range such as `2..10`.
        #[arg(long, value_parser = parse_range, default_value = "2..10")]
        shards: (u16, u16),
        #[arg(long, default_value_t = 360)]
        txs: u32,
    },
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|_| format!("expected one of sbac, atomix, byzcuit; got `{s}`"))
}

fn parse_range(s: &str) -> Result<(u16, u16), String> {
    let bad = || format!("expected A..B with 1 <= A <= B; got `{s}`");
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let (a, b): (u16, u16) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

/// Maps library errors onto exit codes: input problems are usage errors,
/// anything else is internal.
fn fail(e: &Error) -> u8 {
    eprintln!("error: {e}");
    match e {
        Error::Scenario { .. }
        | Error::Codec(_)
        | Error::Io(_)
        | Error::UnknownRow { .. }
        | Error::ProtocolMismatch { .. }
        | Error::SizeGuard(_)
        | Error::UnknownActor(_)
        | Error::MalformedTransaction(_) => USAGE,
        _ => INTERNAL,
    }
}

fn cmd_run(file: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<u8, Error> {
    let text = std::fs::read_to_string(&file)?;
    let mut scn = Scenario::from_toml(&text)?;
    if let Some(s) = seed {
        scn.seed = s;
    }
    let json = Report::from_outcome(&run_scenario(&scn)?).to_json()?;
    let again = Report::from_outcome(&run_scenario(&scn)?).to_json()?;
    if json != again {
        eprintln!("error: two runs of {} produced different reports", file.display());
        return Ok(INTERNAL);
    }
    let report = Report::from_json(&json)?;
    match out {
        Some(path) => std::fs::write(path, &json)?,
        None => print!("{json}"),
    }
    for a in report.assertions.iter().filter(|a| !a.passed) {
        eprintln!("assertion failed: {} {}", a.check, a.detail);
    }
    Ok(if report.passed { PASS } else { ASSERTION_FAILED })
}

fn cmd_attack(table: u8, row: u8, protocol: Protocol, save: Option<PathBuf>) -> Result<u8, Error> {
    let o = run_table_attack(table, row, protocol)?;
    if let Some(path) = save {
        std::fs::write(path, o.row.scenario.to_toml()?)?;
    }
    let report = Report::from_outcome(&o.outcome);
    println!("table {table} row {row} on {protocol}");
    print!("{}", render_tables(&report));
    println!("classification: {}", o.classification());
    for a in report.assertions.iter().filter(|a| !a.passed) {
        println!("mismatch: {} {}", a.check, a.detail);
    }
    let ok = o.matches();
    println!("{}", if ok { "matches expected outcome" } else { "does not match expected outcome" });
    Ok(if ok { PASS } else { ASSERTION_FAILED })
}

fn cmd_sweep(protocol: Protocol, max_shards: u16, max_injections: u8) -> Result<u8, Error> {
    let bounds = SweepBounds::new(max_shards, max_injections);
    let r = exhaustive_replay_sweep(protocol, bounds)?;
    println!("{protocol}: {} shards, up to {} injections", r.shards, r.max_injections);
    println!("states explored: {}", r.states);
    for (class, n) in &r.by_class {
        println!("  {class:<18} {n}");
    }
    println!("deviations from replay-free run: {}", r.deviations);
    println!("distinct inconsistent end states: {}", r.inconsistent.len());
    for e in &r.inconsistent {
        println!("  {} [{}]", e.shape, e.schedule.join(", "));
    }
    if protocol == Protocol::Byzcuit {
        println!("fresh messages left after completion: {}", r.fresh_leftovers);
        let clean = r.inconsistent_count() == 0 && r.fresh_leftovers == 0;
        return Ok(if clean { PASS } else { ASSERTION_FAILED });
    }
    Ok(PASS)
}

fn cmd_bench(protocol: Protocol, (lo, hi): (u16, u16), txs: u32) -> Result<u8, Error> {
    let mut ok = true;
    println!("shards  msgs/commit  committed  makespan  commits/1k-ticks  commits/s(host)");
    let mut last: Option<f64> = None;
    for n in lo..=hi {
        let p = run_bench(BenchConfig { protocol, shards: n, txs, force_dummies: false })?;
        println!(
            "{:>6}  {:>11.2}  {:>9}  {:>8}  {:>16.1}  {:>15.0}",
            n, p.messages_per_commit, p.committed, p.makespan, p.sim_throughput, p.wall_throughput
        );
        if protocol == Protocol::Byzcuit && last.is_some_and(|l| p.sim_throughput < l) {
            println!("  throughput fell from {:.1}", last.unwrap_or_default());
            ok = false;
        }
        last = Some(p.sim_throughput);
        if n >= 2 {
            let c = message_complexity(protocol, n)?;
            match protocol {
                Protocol::Byzcuit if c.total != byzcuit_commit_messages(n) => {
                    println!("  {n}-shard commit took {} messages, expected {}", c.total, byzcuit_commit_messages(n));
                    ok = false;
                }
                Protocol::Sbac if c.shard_votes != sbac_phase1_votes(n) => {
                    println!("  {n}-shard phase 1 took {} votes, expected {}", c.shard_votes, sbac_phase1_votes(n));
                    ok = false;
                }
                _ => {}
            }
        }
    }
    Ok(if ok { PASS } else { ASSERTION_FAILED })
}

fn main() -> ExitCode {
    configure_workers();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { file, out, seed } => cmd_run(file, out, seed),
        Cmd::Attack { table, row, protocol, save_scenario } => cmd_attack(table, row, protocol, save_scenario),
        Cmd::Sweep { protocol, max_shards, max_injections } => cmd_sweep(protocol, max_shards, max_injections),
        Cmd::Bench { protocol, shards, txs } => cmd_bench(protocol, shards, txs),
    };
    ExitCode::from(res.unwrap_or_else(|e| fail(&e)))
}
