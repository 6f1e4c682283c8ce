use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gateway_harness::{run_all, Scenario, ScenarioReport};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "harness", about = "Run the end-to-end tracking scenarios against the gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (e.g. `gated_in_context`) or `all`.
    Run {
        scenario: String,
        /// Seed for the tracker's identifiers.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Print the full transcript as JSON on stdout.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Serialize)]
struct Transcript<'a> {
    seed: u64,
    passed: bool,
    elapsed_ms: u64,
    scenarios: &'a [ScenarioReport],
}

fn summary(report: &ScenarioReport) {
    let status = if report.passed { "PASS" } else { "FAIL" };
    let v = &report.verdict;
    println!(
        "{status} {:<20} user_recognized={} website_identified={} tracking_possible={} ({} ms)",
        report.scenario, v.user_recognized, v.website_identified, report.tracking_possible, report.elapsed_ms
    );
    for check in &report.checks {
        let mark = if check.passed { "ok  " } else { "FAIL" };
        println!("    {mark} {}: {}", check.name, check.detail);
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let Command::Run { scenario, seed, json } = Cli::parse().command;
    let scenarios = if scenario.eq_ignore_ascii_case("all") {
        Scenario::ALL.to_vec()
    } else {
        match scenario.parse::<Scenario>() {
            Ok(s) => vec![s],
            Err(err) => {
                eprintln!("harness: {err}");
                return ExitCode::from(2);
            }
        }
    };

    let started = Instant::now();
    let reports = match run_all(&scenarios, seed).await {
        Ok(reports) => reports,
        Err(err) => {
            eprintln!("harness: {err}");
            return ExitCode::FAILURE;
        }
    };
    let passed = reports.iter().all(|r| r.passed);
    let transcript = Transcript { seed, passed, elapsed_ms: started.elapsed().as_millis() as u64, scenarios: &reports };
    let dump = serde_json::to_string_pretty(&transcript).expect("transcript serializes");

    if json {
        println!("{dump}");
    } else {
        reports.iter().for_each(summary);
        println!("{} in {} ms", if passed { "all passed" } else { "FAILED" }, transcript.elapsed_ms);
    }
    if passed {
        ExitCode::SUCCESS
    } else {
        if !json {
            eprintln!("{dump}");
        }
        ExitCode::FAILURE
    }
}
