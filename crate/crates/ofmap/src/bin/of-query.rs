//! One-off federated queries against a live deployment.
//!
//! Points the federation client at a running DNS frontend (see
//! `of-sim serve`) and prints the JSON answer. Geocode and
//! address-based routing also need `--root`, the endpoint of the
//! world-scale geocoder.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ofmap::cells::CellId;
use ofmap::clock::system_clock;
use ofmap::discovery::{Resolver, ServiceKind};
use ofmap::federation::{FederationClient, FederationConfig, RouteEnd};
use ofmap::model::GeoPoint;
use ofmap::server::Credentials;

#[derive(Parser)]
#[command(name = "of-query", about = "Federated map queries against a live deployment")]
struct Cli {
    /// UDP address of the discovery DNS frontend.
    #[arg(long, default_value = "127.0.0.1:5354")]
    dns: SocketAddr,
    /// Registry suffix the deployment serves.
    #[arg(long, default_value = "maps.test")]
    suffix: String,
    /// Cell level zones registered at.
    #[arg(long, default_value_t = 16)]
    level: u8,
    /// Endpoint of the root/world geocoder (for geocode and routing by
    /// address).
    #[arg(long)]
    root: Option<String>,
    /// User token sent as X-OF-User.
    #[arg(long)]
    user: Option<String>,
    /// Application token sent as X-OF-App.
    #[arg(long)]
    app: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank the map servers covering a position.
    Discover {
        #[arg(long)]
        lat: f64,
        #[arg(long)]
        lon: f64,
        /// Only servers advertising this service.
        #[arg(long)]
        service: Option<ServiceKind>,
    },
    /// Resolve an address across the federation.
    Geocode {
        #[arg(long)]
        address: String,
    },
    /// Keyword search around a position.
    Search {
        #[arg(long = "keyword", required = true)]
        keywords: Vec<String>,
        #[arg(long)]
        lat: f64,
        #[arg(long)]
        lon: f64,
        #[arg(long, default_value_t = 500.0)]
        radius_m: f64,
    },
    /// Stitch a route between two ends (addresses or positions).
    Route {
        #[arg(long, conflicts_with_all = ["src_lat", "src_lon"])]
        src_address: Option<String>,
        #[arg(long, requires = "src_lon")]
        src_lat: Option<f64>,
        #[arg(long, requires = "src_lat")]
        src_lon: Option<f64>,
        #[arg(long, conflicts_with_all = ["dst_lat", "dst_lon"])]
        dst_address: Option<String>,
        #[arg(long, requires = "dst_lon")]
        dst_lat: Option<f64>,
        #[arg(long, requires = "dst_lat")]
        dst_lon: Option<f64>,
    },
    /// Localize from beacon readings (`--beacon id=dbm`, repeatable).
    Localize {
        #[arg(long)]
        lat: f64,
        #[arg(long)]
        lon: f64,
        #[arg(long = "beacon", required = true, value_parser = parse_beacon)]
        beacons: Vec<(String, f64)>,
    },
    /// Compose tiles for one or more cells.
    Tiles {
        #[arg(long = "cell", required = true)]
        cells: Vec<String>,
    },
}

fn parse_beacon(s: &str) -> Result<(String, f64), String> {
    let (id, dbm) = s
        .split_once('=')
        .ok_or_else(|| format!("expected id=dbm, got {s:?}"))?;
    let dbm: f64 = dbm.parse().map_err(|e| format!("bad dBm in {s:?}: {e}"))?;
    Ok((id.to_string(), dbm))
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable output")
    );
}

async fn run(cli: Cli) -> Result<(), String> {
    let resolver = Resolver::over_dns(cli.dns, &cli.suffix, system_clock());
    let client = FederationClient::new(
        Arc::new(resolver),
        FederationConfig {
            registration_level: cli.level,
            root_endpoint: cli.root.clone(),
            credentials: Credentials {
                user_token: cli.user.clone(),
                app_token: cli.app.clone(),
            },
            ..FederationConfig::default()
        },
        system_clock(),
    );

    match cli.command {
        Command::Discover { lat, lon, service } => {
            let p = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
            let found = client
                .discover_servers(p, cli.level, service)
                .await
                .map_err(|e| e.to_string())?;
            let out: Vec<serde_json::Value> = found
                .iter()
                .map(|d| {
                    serde_json::json!({
                        "server_id": d.record.server_id,
                        "endpoint": d.record.endpoint,
                        "priority": d.record.priority,
                        "depth": d.depth,
                        "services": d.record.services,
                        "localization_techs": d.record.localization_techs,
                    })
                })
                .collect();
            print_json(&out);
        }
        Command::Geocode { address } => {
            let result = client
                .federated_geocode(&address)
                .await
                .map_err(|e| e.to_string())?;
            print_json(&result);
        }
        Command::Search {
            keywords,
            lat,
            lon,
            radius_m,
        } => {
            let p = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
            let result = client
                .federated_search(&keywords, p, radius_m)
                .await
                .map_err(|e| e.to_string())?;
            print_json(&result);
        }
        Command::Route {
            src_address,
            src_lat,
            src_lon,
            dst_address,
            dst_lat,
            dst_lon,
        } => {
            let end = |address: Option<String>, lat: Option<f64>, lon: Option<f64>, name: &str| {
                match (address, lat, lon) {
                    (Some(a), _, _) => Ok(RouteEnd::Address(a)),
                    (None, Some(lat), Some(lon)) => GeoPoint::new(lat, lon)
                        .map(RouteEnd::Position)
                        .map_err(|e| e.to_string()),
                    _ => Err(format!("{name}: give either --{name}-address or --{name}-lat/--{name}-lon")),
                }
            };
            let src = end(src_address, src_lat, src_lon, "src")?;
            let dst = end(dst_address, dst_lat, dst_lon, "dst")?;
            let stitched = client
                .federated_route(&src, &dst)
                .await
                .map_err(|e| e.to_string())?;
            print_json(&stitched);
        }
        Command::Localize { lat, lon, beacons } => {
            let p = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
            let cues: BTreeMap<String, f64> = beacons.into_iter().collect();
            let result = client
                .federated_localize(p, &cues, None)
                .await
                .map_err(|e| e.to_string())?;
            print_json(&result);
        }
        Command::Tiles { cells } => {
            let viewport: Result<Vec<CellId>, _> =
                cells.iter().map(|t| CellId::from_token(t)).collect();
            let result = client
                .federated_tiles(&viewport.map_err(|e| e.to_string())?)
                .await
                .map_err(|e| e.to_string())?;
            print_json(&result);
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("of-query: {e}");
            ExitCode::FAILURE
        }
    }
}
