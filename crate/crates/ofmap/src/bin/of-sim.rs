//! Scenario runner and world generator.
//!
//! `of-sim run` executes a scenario file end to end — spawns the servers,
//! seeds discovery, runs the queries, optionally diffs against the
//! centralized oracle — and exits 0 only when nothing violated a
//! contract. `of-sim gen` writes a seeded random world. `of-sim serve`
//! keeps a scenario's servers and DNS frontend up for `of-query`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ofmap::harness::gen::{gen_random_world, write_world, WorldParams};
use ofmap::harness::{run_scenario, serve_scenario, RunOptions};

#[derive(Parser)]
#[command(name = "of-sim", about = "Federated map scenario harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and report per-query results and oracle diffs.
    Run {
        scenario: PathBuf,
        /// Diff every supported query against the centralized oracle.
        #[arg(long)]
        oracle: bool,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a seeded random world (documents + scenario).
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        zones: usize,
        #[arg(long, default_value_t = 120)]
        nodes: usize,
        #[arg(long = "portal-density", default_value_t = 1.0)]
        portal_density: f64,
        #[arg(long = "route-queries", default_value_t = 20)]
        route_queries: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host a scenario's servers and DNS frontend until interrupted.
    Serve {
        scenario: PathBuf,
        /// UDP bind address for the DNS frontend.
        #[arg(long, default_value = "127.0.0.1:5354")]
        dns: SocketAddr,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            oracle,
            report,
        } => {
            let options = RunOptions {
                force_oracle: oracle.then_some(true),
                report_path: report,
            };
            match run_scenario(&scenario, &options).await {
                Ok(report) => {
                    for query in &report.queries {
                        let diff = match &query.diff {
                            Some(d) if d.equal => " oracle=match".to_string(),
                            Some(d) => format!(" oracle=DIVERGED ({})", d.detail),
                            None => String::new(),
                        };
                        println!(
                            "query {:>2} {:<9} {}{}",
                            query.index,
                            query.kind,
                            if query.ok { "ok" } else { "FAILED" },
                            diff
                        );
                    }
                    for violation in &report.violations {
                        eprintln!("violation: {violation}");
                    }
                    if report.ok {
                        println!("scenario {}: ok", report.scenario);
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("scenario {}: FAILED", report.scenario);
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("of-sim: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Gen {
            seed,
            zones,
            nodes,
            portal_density,
            route_queries,
            out,
        } => {
            let world = gen_random_world(&WorldParams {
                seed,
                zones,
                nodes,
                portal_density,
                route_queries,
            });
            match write_world(&world, &out) {
                Ok(path) => {
                    println!("wrote {} documents and {}", world.documents.len(), path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("of-sim: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Serve { scenario, dns } => match serve_scenario(&scenario, dns).await {
            Ok(deployment) => {
                println!("dns frontend on udp://{}", deployment.dns_addr);
                println!("suffix {}", deployment.suffix);
                println!("registration level {}", deployment.registration_level);
                for (server_id, endpoint) in &deployment.endpoints {
                    println!("server {server_id} at {endpoint}");
                }
                println!("--- zone file ---\n{}", deployment.zone_file);
                println!("serving until ctrl-c");
                let _ = tokio::signal::ctrl_c().await;
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("of-sim: {e}");
                ExitCode::from(2)
            }
        },
    }
}
