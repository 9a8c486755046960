//! Scenario runner: spawn servers, seed discovery, execute federated
//! queries, and diff them against the centralized oracle.
//!
//! Servers run in-process but over real HTTP on loopback ports, and the
//! optional DNS frontend serves discovery over real UDP, so a scenario
//! exercises the actual wire contracts. Time comes from a simulated
//! clock, which makes reports deterministic given the scenario.

pub mod gen;
pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::EntryRef;
use crate::cells::CellId;
use crate::clock::{Clock, SharedClock, SimClock};
use crate::discovery::{dns, DiscoveryError, NameRegistry, Resolver, ServiceKind};
use crate::federation::{
    FederationClient, FederationConfig, FederationError, LocalPrior, RouteEnd,
};
use crate::model::{
    load_map_document, registration_polygon, GeoPoint, MapDocument, ModelError,
};
use crate::server::http::{spawn_server, RunningServer};
use crate::server::{MapServer, ServerConfig, WeightRounding};

pub use oracle::OracleWorld;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

/// One server entry: a map document plus its serving configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioServer {
    pub map_path: String,
    #[serde(flatten)]
    pub config: ServerConfig,
}

/// A route endpoint in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EndSpec {
    Address { address: String },
    Position { lat: f64, lon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioQuery {
    Discover {
        lat: f64,
        lon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        level: Option<u8>,
    },
    Geocode {
        address: String,
    },
    Search {
        keywords: Vec<String>,
        lat: f64,
        lon: f64,
        radius_m: f64,
    },
    Route {
        src: EndSpec,
        dst: EndSpec,
    },
    Localize {
        lat: f64,
        lon: f64,
        beacon_rssi: BTreeMap<String, f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_speed_mps: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        advance_clock_s: Option<f64>,
    },
    Tiles {
        cells: Vec<String>,
    },
}

fn default_suffix() -> String {
    "maps.test".to_string()
}
fn default_level() -> u8 {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_suffix")]
    pub suffix: String,
    #[serde(default = "default_level")]
    pub registration_level: u8,
    #[serde(default)]
    pub weight_rounding: WeightRounding,
    #[serde(default)]
    pub oracle: bool,
    /// Route discovery through the UDP DNS frontend instead of direct
    /// registry reads.
    #[serde(default)]
    pub discovery_via_dns: bool,
    /// server_id of the world-scale geocoder the client starts from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_server: Option<String>,
    /// Allowed |federated − oracle| route cost difference.
    #[serde(default)]
    pub route_cost_tolerance: f64,
    pub servers: Vec<ScenarioServer>,
    #[serde(default)]
    pub queries: Vec<ScenarioQuery>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Override the scenario's oracle flag.
    pub force_oracle: Option<bool>,
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiffReport {
    pub equal: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryReport {
    pub index: usize,
    pub kind: String,
    pub params: serde_json::Value,
    pub latency_ms: f64,
    pub ok: bool,
    pub output: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_output: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<DiffReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub ok: bool,
    pub oracle: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub violations: Vec<String>,
    pub queries: Vec<QueryReport>,
}

/// Load, validate, execute, and (optionally) diff a scenario file.
pub async fn run_scenario(path: &Path, options: &RunOptions) -> Result<Report, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut world = ScenarioWorld::start(&scenario, base).await?;
    let use_oracle = options.force_oracle.unwrap_or(scenario.oracle);
    let oracle = if use_oracle {
        let docs: Vec<&MapDocument> = world.documents.iter().collect();
        Some(OracleWorld::build(&docs, scenario.weight_rounding)?)
    } else {
        None
    };

    let mut queries = Vec::new();
    let mut violations = Vec::new();
    let mut prior: Option<LocalPrior> = None;
    for (index, query) in scenario.queries.iter().enumerate() {
        let report = world
            .execute(index, query, oracle.as_ref(), &scenario, &mut prior)
            .await;
        if !report.ok {
            violations.push(format!("query {index} ({}) failed", report.kind));
        }
        if let Some(diff) = &report.diff {
            if !diff.equal {
                violations.push(format!(
                    "query {index} ({}) diverged from the oracle: {}",
                    report.kind, diff.detail
                ));
            }
        }
        queries.push(report);
    }

    let report = Report {
        scenario: path
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default(),
        ok: violations.is_empty(),
        oracle: use_oracle,
        warnings: world.warnings.clone(),
        violations,
        queries,
    };
    if let Some(out) = &options.report_path {
        let body = serde_json::to_string_pretty(&report).expect("report serialization");
        std::fs::write(out, body).map_err(|source| ScenarioError::Io {
            path: out.clone(),
            source,
        })?;
    }
    Ok(report)
}

/// A scenario's servers and discovery kept alive for ad-hoc querying,
/// with the DNS frontend always on. This is what `of-sim serve` hosts and
/// `of-query` talks to.
pub struct LiveDeployment {
    /// (server_id, endpoint) pairs.
    pub endpoints: Vec<(String, String)>,
    pub dns_addr: std::net::SocketAddr,
    pub suffix: String,
    pub registration_level: u8,
    pub zone_file: String,
    _servers: Vec<RunningServer>,
    _dns: dns::DnsFrontend,
}

/// Spawn a scenario's servers and DNS frontend and keep them running.
pub async fn serve_scenario(
    path: &Path,
    dns_bind: std::net::SocketAddr,
) -> Result<LiveDeployment, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    scenario.discovery_via_dns = false; // the world below wires its own
    let base = path.parent().unwrap_or(Path::new("."));
    let world = ScenarioWorld::start(&scenario, base).await?;
    let frontend = dns::serve_dns(world.registry.clone(), dns_bind)
        .await
        .map_err(|source| ScenarioError::Io {
            path: PathBuf::from("<dns frontend>"),
            source,
        })?;
    Ok(LiveDeployment {
        endpoints: world.endpoints.clone(),
        dns_addr: frontend.addr,
        suffix: scenario.suffix.clone(),
        registration_level: scenario.registration_level,
        zone_file: world.registry.export_zone_file(),
        _servers: world._servers,
        _dns: frontend,
    })
}

/// Everything a running scenario holds: servers, discovery, client.
struct ScenarioWorld {
    documents: Vec<MapDocument>,
    registry: Arc<NameRegistry>,
    endpoints: Vec<(String, String)>,
    /// Keeps the HTTP listeners alive for the scenario's lifetime.
    _servers: Vec<RunningServer>,
    _dns: Option<dns::DnsFrontend>,
    client: FederationClient,
    clock: Arc<SimClock>,
    warnings: Vec<String>,
    registration_level: u8,
}

impl ScenarioWorld {
    async fn start(scenario: &Scenario, base: &Path) -> Result<Self, ScenarioError> {
        if scenario.servers.is_empty() {
            return Err(ScenarioError::Invalid("scenario has no servers".into()));
        }
        let mut seen_server_ids = BTreeSet::new();
        for server in &scenario.servers {
            if !seen_server_ids.insert(server.config.server_id.clone()) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate server_id {}",
                    server.config.server_id
                )));
            }
        }
        // Pre-validate query parameters.
        for (i, query) in scenario.queries.iter().enumerate() {
            match query {
                ScenarioQuery::Tiles { cells } => {
                    for token in cells {
                        CellId::from_token(token).map_err(|e| {
                            ScenarioError::Invalid(format!("query {i}: bad cell token: {e}"))
                        })?;
                    }
                }
                ScenarioQuery::Discover { level, .. } => {
                    if level.unwrap_or(0) > crate::cells::MAX_LEVEL {
                        return Err(ScenarioError::Invalid(format!(
                            "query {i}: level out of range"
                        )));
                    }
                }
                _ => {}
            }
        }
        if let Some(root) = &scenario.root_server {
            if !scenario.servers.iter().any(|s| &s.config.server_id == root) {
                return Err(ScenarioError::Invalid(format!(
                    "root_server {root:?} is not among the servers"
                )));
            }
        }

        let mut documents = Vec::new();
        let mut warnings = Vec::new();
        let mut seen_map_ids = BTreeSet::new();
        let mut running = Vec::new();
        let registry = Arc::new(NameRegistry::new(&scenario.suffix));
        let mut endpoints: Vec<(String, String)> = Vec::new();

        for server in &scenario.servers {
            let doc_path = base.join(&server.map_path);
            let text = std::fs::read_to_string(&doc_path).map_err(|source| ScenarioError::Io {
                path: doc_path.clone(),
                source,
            })?;
            let (doc, doc_warnings) = load_map_document(&text)?;
            if !seen_map_ids.insert(doc.map_id.clone()) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate map_id {}",
                    doc.map_id
                )));
            }
            for w in doc_warnings {
                warnings.push(format!("{}: {w}", doc.map_id));
            }

            let mut config = server.config.clone();
            config.registration_level = scenario.registration_level;
            config.weight_rounding = scenario.weight_rounding;
            let core = Arc::new(MapServer::new(doc.clone(), config)?);
            let http = spawn_server(core.clone(), "127.0.0.1:0".parse().unwrap())
                .await
                .map_err(|source| ScenarioError::Io {
                    path: doc_path,
                    source,
                })?;

            let polygon = registration_polygon(&doc)?;
            registry.register_zone(
                &polygon,
                core.record(&http.endpoint),
                scenario.registration_level,
            )?;
            endpoints.push((server.config.server_id.clone(), http.endpoint.clone()));
            documents.push(doc);
            running.push(http);
        }

        let clock = Arc::new(SimClock::new());
        let shared_clock: SharedClock = clock.clone();
        let (resolver, dns_frontend) = if scenario.discovery_via_dns {
            let frontend = dns::serve_dns(registry.clone(), "127.0.0.1:0".parse().unwrap())
                .await
                .map_err(|source| ScenarioError::Io {
                    path: PathBuf::from("<dns frontend>"),
                    source,
                })?;
            (
                Resolver::over_dns(frontend.addr, &scenario.suffix, shared_clock.clone()),
                Some(frontend),
            )
        } else {
            (
                Resolver::in_process(registry.clone(), shared_clock.clone()),
                None,
            )
        };

        let root_endpoint = scenario.root_server.as_ref().and_then(|id| {
            endpoints
                .iter()
                .find(|(server_id, _)| server_id == id)
                .map(|(_, endpoint)| endpoint.clone())
        });
        let client = FederationClient::new(
            Arc::new(resolver),
            FederationConfig {
                registration_level: scenario.registration_level,
                root_endpoint,
                ..FederationConfig::default()
            },
            shared_clock,
        );

        Ok(Self {
            documents,
            registry,
            endpoints,
            _servers: running,
            _dns: dns_frontend,
            client,
            clock,
            warnings,
            registration_level: scenario.registration_level,
        })
    }

    async fn execute(
        &mut self,
        index: usize,
        query: &ScenarioQuery,
        oracle: Option<&OracleWorld>,
        scenario: &Scenario,
        prior: &mut Option<LocalPrior>,
    ) -> QueryReport {
        let params = serde_json::to_value(query).expect("query serialization");
        let kind = params
            .get("type")
            .and_then(|v| v.as_str())
            .unwrap_or("unknown")
            .to_string();
        let started = self.clock.now();
        let (ok, output, oracle_output, diff) = match query {
            ScenarioQuery::Discover { lat, lon, level } => {
                self.run_discover(*lat, *lon, level.unwrap_or(self.registration_level))
                    .await
            }
            ScenarioQuery::Geocode { address } => self.run_geocode(address, oracle).await,
            ScenarioQuery::Search {
                keywords,
                lat,
                lon,
                radius_m,
            } => self.run_search(keywords, *lat, *lon, *radius_m, oracle).await,
            ScenarioQuery::Route { src, dst } => {
                self.run_route(src, dst, oracle, scenario.route_cost_tolerance)
                    .await
            }
            ScenarioQuery::Localize {
                lat,
                lon,
                beacon_rssi,
                max_speed_mps,
                advance_clock_s,
            } => {
                if let Some(s) = advance_clock_s {
                    self.clock.advance(Duration::from_secs_f64(*s));
                }
                self.run_localize(*lat, *lon, beacon_rssi, max_speed_mps.unwrap_or(1.5), prior)
                    .await
            }
            ScenarioQuery::Tiles { cells } => self.run_tiles(cells, oracle).await,
        };
        QueryReport {
            index,
            kind,
            params,
            latency_ms: (self.clock.now() - started).as_secs_f64() * 1000.0,
            ok,
            output,
            oracle_output,
            diff,
        }
    }

    async fn run_discover(
        &self,
        lat: f64,
        lon: f64,
        level: u8,
    ) -> (bool, serde_json::Value, Option<serde_json::Value>, Option<DiffReport>) {
        let point = match GeoPoint::new(lat, lon) {
            Ok(p) => p,
            Err(e) => return fail(e.to_string()),
        };
        match self.client.discover_servers(point, level, None).await {
            Ok(found) => {
                let out: Vec<serde_json::Value> = found
                    .iter()
                    .map(|d| {
                        serde_json::json!({
                            "server_id": d.record.server_id,
                            "priority": d.record.priority,
                            "depth": d.depth,
                            "services": d.record.services,
                        })
                    })
                    .collect();
                (true, serde_json::Value::Array(out), None, None)
            }
            Err(e) => fail(e.to_string()),
        }
    }

    async fn run_geocode(
        &self,
        address: &str,
        oracle: Option<&OracleWorld>,
    ) -> (bool, serde_json::Value, Option<serde_json::Value>, Option<DiffReport>) {
        match self.client.federated_geocode(address).await {
            Ok(result) => {
                let output = serde_json::to_value(&result).expect("serializable");
                let (oracle_output, diff) = match oracle {
                    None => (None, None),
                    Some(oracle) => {
                        let expected = oracle.geocode(address);
                        let expected_ids: Vec<(String, String)> = expected
                            .iter()
                            .map(|(_, map, hit)| (map.clone(), hit.node_id.clone()))
                            .collect();
                        let got_ids: Vec<(String, String)> = result
                            .hits
                            .iter()
                            .map(|h| (h.map_id.clone(), h.node_id.clone()))
                            .collect();
                        let equal = expected_ids == got_ids;
                        (
                            Some(serde_json::to_value(&expected_ids).unwrap()),
                            Some(DiffReport {
                                equal,
                                detail: if equal {
                                    "candidate sequences identical".into()
                                } else {
                                    format!("federated {got_ids:?} vs oracle {expected_ids:?}")
                                },
                            }),
                        )
                    }
                };
                (true, output, oracle_output, diff)
            }
            Err(e) => fail(e.to_string()),
        }
    }

    async fn run_search(
        &self,
        keywords: &[String],
        lat: f64,
        lon: f64,
        radius_m: f64,
        oracle: Option<&OracleWorld>,
    ) -> (bool, serde_json::Value, Option<serde_json::Value>, Option<DiffReport>) {
        let point = match GeoPoint::new(lat, lon) {
            Ok(p) => p,
            Err(e) => return fail(e.to_string()),
        };
        match self.client.federated_search(keywords, point, radius_m).await {
            Ok(result) => {
                let output = serde_json::to_value(&result).expect("serializable");
                let (oracle_output, diff) = match oracle {
                    None => (None, None),
                    Some(oracle) => {
                        let expected = oracle.search(keywords, point.to_point(), radius_m);
                        let equal = expected == result.hits;
                        (
                            Some(serde_json::to_value(&expected).unwrap()),
                            Some(DiffReport {
                                equal,
                                detail: if equal {
                                    "orderings identical".into()
                                } else {
                                    format!(
                                        "federated {} hits vs oracle {} hits",
                                        result.hits.len(),
                                        expected.len()
                                    )
                                },
                            }),
                        )
                    }
                };
                (true, output, oracle_output, diff)
            }
            Err(e) => fail(e.to_string()),
        }
    }

    async fn run_route(
        &self,
        src: &EndSpec,
        dst: &EndSpec,
        oracle: Option<&OracleWorld>,
        tolerance: f64,
    ) -> (bool, serde_json::Value, Option<serde_json::Value>, Option<DiffReport>) {
        let to_end = |spec: &EndSpec| -> Result<RouteEnd, ModelError> {
            Ok(match spec {
                EndSpec::Address { address } => RouteEnd::Address(address.clone()),
                EndSpec::Position { lat, lon } => {
                    RouteEnd::Position(GeoPoint::new(*lat, *lon)?)
                }
            })
        };
        let (src_end, dst_end) = match (to_end(src), to_end(dst)) {
            (Ok(s), Ok(d)) => (s, d),
            (Err(e), _) | (_, Err(e)) => return fail(e.to_string()),
        };
        match self.client.federated_route(&src_end, &dst_end).await {
            Ok(stitched) => {
                let output = serde_json::to_value(&stitched).expect("serializable");
                let (oracle_output, diff) = match oracle {
                    None => (None, None),
                    Some(oracle) => {
                        let to_entry = |spec: &EndSpec| match spec {
                            EndSpec::Address { address } => oracle
                                .geocode(address)
                                .first()
                                .map(|(_, _, hit)| EntryRef::node(&hit.node_id)),
                            EndSpec::Position { lat, lon } => Some(EntryRef::Point {
                                x: *lon,
                                y: *lat,
                            }),
                        };
                        match (to_entry(src), to_entry(dst)) {
                            (Some(s), Some(d)) => match oracle.route(&s, &d) {
                                Ok(path) => {
                                    let delta =
                                        (stitched.total_cost_m - path.cost_m).abs();
                                    let equal = delta <= tolerance;
                                    (
                                        Some(serde_json::to_value(&path).unwrap()),
                                        Some(DiffReport {
                                            equal,
                                            detail: format!(
                                                "federated cost {} vs oracle cost {} (|Δ| = {delta})",
                                                stitched.total_cost_m, path.cost_m
                                            ),
                                        }),
                                    )
                                }
                                Err(e) => (
                                    None,
                                    Some(DiffReport {
                                        equal: false,
                                        detail: format!(
                                            "federated found a route but the oracle failed: {e}"
                                        ),
                                    }),
                                ),
                            },
                            _ => (
                                None,
                                Some(DiffReport {
                                    equal: false,
                                    detail: "oracle could not resolve the endpoints".into(),
                                }),
                            ),
                        }
                    }
                };
                (true, output, oracle_output, diff)
            }
            Err(e) => fail(e.to_string()),
        }
    }

    async fn run_localize(
        &self,
        lat: f64,
        lon: f64,
        beacon_rssi: &BTreeMap<String, f64>,
        max_speed_mps: f64,
        prior: &mut Option<LocalPrior>,
    ) -> (bool, serde_json::Value, Option<serde_json::Value>, Option<DiffReport>) {
        let point = match GeoPoint::new(lat, lon) {
            Ok(p) => p,
            Err(e) => return fail(e.to_string()),
        };
        match self
            .client
            .federated_localize(point, beacon_rssi, prior.as_ref())
            .await
        {
            Ok(result) => {
                // The accepted estimate becomes the next query's prior.
                *prior = Some(LocalPrior {
                    estimate: Some(result.estimate.clone()),
                    max_speed_mps,
                    timestamp_s: self.clock.now().as_secs_f64(),
                });
                let output = serde_json::to_value(&result).expect("serializable");
                (true, output, None, None)
            }
            Err(e) => fail(e.to_string()),
        }
    }

    async fn run_tiles(
        &self,
        cells: &[String],
        oracle: Option<&OracleWorld>,
    ) -> (bool, serde_json::Value, Option<serde_json::Value>, Option<DiffReport>) {
        let parsed: Result<Vec<CellId>, _> =
            cells.iter().map(|t| CellId::from_token(t)).collect();
        let viewport = match parsed {
            Ok(v) => v,
            Err(e) => return fail(e.to_string()),
        };
        match self.client.federated_tiles(&viewport).await {
            Ok(result) => {
                let output = serde_json::to_value(&result).expect("serializable");
                let (oracle_output, diff) = match oracle {
                    None => (None, None),
                    Some(oracle) => {
                        let mut expected: BTreeSet<String> = BTreeSet::new();
                        for cell in &viewport {
                            expected
                                .extend(oracle.tile(cell).features.into_iter().map(|f| f.id));
                        }
                        let got: BTreeSet<String> =
                            result.geo.iter().map(|f| f.id.clone()).collect();
                        let equal = expected == got;
                        (
                            Some(serde_json::to_value(&expected).unwrap()),
                            Some(DiffReport {
                                equal,
                                detail: if equal {
                                    "feature id sets identical".into()
                                } else {
                                    let missing: Vec<&String> =
                                        expected.difference(&got).collect();
                                    let extra: Vec<&String> =
                                        got.difference(&expected).collect();
                                    format!("missing {missing:?}, extra {extra:?}")
                                },
                            }),
                        )
                    }
                };
                (true, output, oracle_output, diff)
            }
            Err(e) => fail(e.to_string()),
        }
    }
}

fn fail(
    message: String,
) -> (bool, serde_json::Value, Option<serde_json::Value>, Option<DiffReport>) {
    (false, serde_json::json!({ "error": message }), None, None)
}

/// Convenience for tests and examples: needed services wide open.
pub fn open_services() -> BTreeSet<ServiceKind> {
    ServiceKind::ALL.into_iter().collect()
}
