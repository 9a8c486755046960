//! One provider's map server: the six base services over a single
//! document, behind per-service access control.
//!
//! The core is an immutable snapshot — document, node index, route graph,
//! fingerprint set — safe to share across any number of concurrent
//! requests. [`http`] puts it behind the wire API.

pub mod auth;
pub mod http;
pub mod routing;
pub mod tile;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{EntryRef, GeocodeHit, PoseEstimate, ReverseHit, SearchHit};
use crate::cells::{CellError, CellId};
use crate::discovery::{MapServerRecord, ServiceKind};
use crate::geom::{frame_distance_m, Point};
use crate::model::{GeoPoint, MapDocument, ModelError};

pub use auth::{authorize, AuthDecision, AuthMode, AuthPolicy, Credentials};
pub use routing::{RouteGraph, RoutePath, WeightRounding, SNAP_RADIUS_M};
pub use tile::{render_tile, FeatureGeometry, TileFeature, VectorTile};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not authorized: {check} check failed")]
    NotAuthorized { check: &'static str },
    #[error("service {0} is not advertised by this server")]
    NotImplemented(ServiceKind),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("snap failed: {0}")]
    SnapFailed(String),
    #[error("no route between {src} and {dst}")]
    Unreachable { src: String, dst: String },
    #[error("no fingerprint shares a beacon with the cue set")]
    NoFingerprintCoverage,
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// A stored (position, RSSI vector) pair for localization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeaconFingerprint {
    pub x: f64,
    pub y: f64,
    /// beacon id → dBm
    pub rssi: BTreeMap<String, f64>,
}

/// RSSI imputed for a beacon missing on one side of a comparison.
pub const RSSI_FLOOR_DBM: f64 = -100.0;

fn default_registration_level() -> u8 {
    16
}
fn default_search_cap() -> usize {
    50
}
fn default_ttl() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub server_id: String,
    /// Services this server advertises in its discovery record. Requests
    /// for anything else are rejected.
    pub services: BTreeSet<ServiceKind>,
    #[serde(default)]
    pub auth: BTreeMap<ServiceKind, AuthPolicy>,
    #[serde(default = "default_registration_level")]
    pub registration_level: u8,
    #[serde(default = "default_search_cap")]
    pub search_result_cap: usize,
    #[serde(default)]
    pub priority: i32,
    #[serde(default = "default_ttl")]
    pub ttl_s: u64,
    #[serde(default)]
    pub localization_techs: BTreeSet<String>,
    #[serde(default)]
    pub weight_rounding: WeightRounding,
    #[serde(default)]
    pub fingerprints: Vec<BeaconFingerprint>,
}

impl ServerConfig {
    pub fn open(server_id: &str, services: impl IntoIterator<Item = ServiceKind>) -> Self {
        Self {
            server_id: server_id.to_string(),
            services: services.into_iter().collect(),
            auth: BTreeMap::new(),
            registration_level: default_registration_level(),
            search_result_cap: default_search_cap(),
            priority: 0,
            ttl_s: default_ttl(),
            localization_techs: BTreeSet::new(),
            weight_rounding: WeightRounding::default(),
            fingerprints: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.server_id.is_empty() {
            return Err(ModelError::Integrity("server_id must be non-empty".into()));
        }
        if self.services.is_empty() {
            return Err(ModelError::Integrity(format!(
                "server {} advertises no services",
                self.server_id
            )));
        }
        for (service, policy) in &self.auth {
            policy.validate().map_err(|e| {
                ModelError::Integrity(format!("auth policy for {service}: {e}"))
            })?;
        }
        for fp in &self.fingerprints {
            if fp.rssi.is_empty() {
                return Err(ModelError::Integrity(
                    "fingerprint with no beacon readings".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The immutable serving core.
pub struct MapServer {
    document: MapDocument,
    config: ServerConfig,
    graph: RouteGraph,
}

impl MapServer {
    pub fn new(document: MapDocument, config: ServerConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let graph = RouteGraph::build(&document, config.weight_rounding)?;
        Ok(Self {
            document,
            config,
            graph,
        })
    }

    pub fn document(&self) -> &MapDocument {
        &self.document
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn graph(&self) -> &RouteGraph {
        &self.graph
    }

    fn is_geo(&self) -> bool {
        self.document.frame.is_geo()
    }

    /// The discovery record advertising this server at `endpoint`.
    pub fn record(&self, endpoint: &str) -> MapServerRecord {
        MapServerRecord {
            server_id: self.config.server_id.clone(),
            endpoint: endpoint.to_string(),
            services: self.config.services.clone(),
            localization_techs: self.config.localization_techs.clone(),
            priority: self.config.priority,
            ttl_s: self.config.ttl_s,
        }
    }

    pub fn advertises(&self, service: ServiceKind) -> bool {
        self.config.services.contains(&service)
    }

    /// Policy check for one service. Unconfigured services are open.
    pub fn authorize(&self, service: ServiceKind, credentials: &Credentials) -> AuthDecision {
        match self.config.auth.get(&service) {
            Some(policy) => authorize(policy, credentials),
            None => AuthDecision::Allow,
        }
    }

    /// Forward geocode against `address_prefix + "/" + tags["addr"]`.
    /// Exact matches rank before case-insensitive suffix matches.
    pub fn geocode(&self, address: &str) -> Result<Vec<GeocodeHit>, ServiceError> {
        if address.is_empty() {
            return Err(ServiceError::InvalidRequest("empty address".into()));
        }
        let query_lc = address.to_lowercase();
        let mut ranked: Vec<(u8, &str, GeocodeHit)> = Vec::new();
        for node in &self.document.nodes {
            let Some(addr) = node.tags.get("addr") else {
                continue;
            };
            let full = format!("{}/{}", self.document.address_prefix, addr);
            let rank = if full == address {
                0
            } else if full.to_lowercase().ends_with(&query_lc) {
                1
            } else {
                continue;
            };
            ranked.push((
                rank,
                node.id.as_str(),
                GeocodeHit {
                    node_id: node.id.clone(),
                    x: node.x,
                    y: node.y,
                    full_address: full,
                },
            ));
        }
        ranked.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
        Ok(ranked.into_iter().map(|(_, _, hit)| hit).collect())
    }

    /// Nearest nodes within `radius_m`, ascending distance, ties by id.
    pub fn reverse_geocode(
        &self,
        p: Point,
        radius_m: f64,
    ) -> Result<Vec<ReverseHit>, ServiceError> {
        if !(radius_m > 0.0) {
            return Err(ServiceError::InvalidRequest(
                "radius_m must be positive".into(),
            ));
        }
        if !p.is_finite() {
            return Err(ServiceError::InvalidRequest("non-finite point".into()));
        }
        let mut hits: Vec<ReverseHit> = self
            .document
            .nodes
            .iter()
            .filter_map(|node| {
                let d = frame_distance_m(self.is_geo(), p, node.position());
                (d <= radius_m).then(|| ReverseHit {
                    node_id: node.id.clone(),
                    x: node.x,
                    y: node.y,
                    distance_m: d,
                })
            })
            .collect();
        hits.sort_by(|a, b| {
            a.distance_m
                .total_cmp(&b.distance_m)
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        Ok(hits)
    }

    /// Keyword search over tag values around a center point in the
    /// document frame. Score is matched-keyword count over 1 + distance.
    pub fn search(
        &self,
        keywords: &[String],
        center: Point,
        radius_m: f64,
    ) -> Result<Vec<SearchHit>, ServiceError> {
        if keywords.is_empty() {
            return Err(ServiceError::InvalidRequest("no keywords".into()));
        }
        if !(radius_m > 0.0) {
            return Err(ServiceError::InvalidRequest(
                "radius_m must be positive".into(),
            ));
        }
        let hits = self.score_nodes(keywords, |node| {
            let d = frame_distance_m(self.is_geo(), center, node);
            (d <= radius_m).then_some(d)
        });
        Ok(hits)
    }

    /// Cross-frame search: a geo center cannot be expressed in a local
    /// frame, so the anchor stands in for the whole zone. Every node is a
    /// candidate at the zone's distance when the anchor disc overlaps the
    /// search disc.
    pub fn search_coarse(
        &self,
        keywords: &[String],
        center: GeoPoint,
        radius_m: f64,
    ) -> Result<Vec<SearchHit>, ServiceError> {
        if keywords.is_empty() {
            return Err(ServiceError::InvalidRequest("no keywords".into()));
        }
        let anchor = self.document.frame.anchor.as_ref().ok_or_else(|| {
            ServiceError::InvalidRequest(
                "geo-frame search against an unanchored local map".into(),
            )
        })?;
        let anchor_pos = anchor
            .position()
            .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        let zone_distance = frame_distance_m(true, center.to_point(), anchor_pos.to_point());
        if zone_distance > radius_m + anchor.uncertainty_m {
            return Ok(Vec::new());
        }
        Ok(self.score_nodes(keywords, |_| Some(zone_distance)))
    }

    fn score_nodes<F>(&self, keywords: &[String], distance: F) -> Vec<SearchHit>
    where
        F: Fn(Point) -> Option<f64>,
    {
        let keywords_lc: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
        let mut hits: Vec<SearchHit> = Vec::new();
        for node in &self.document.nodes {
            let Some(d) = distance(node.position()) else {
                continue;
            };
            let matched = keywords_lc
                .iter()
                .filter(|k| {
                    node.tags
                        .values()
                        .any(|v| v.to_lowercase().contains(k.as_str()))
                })
                .count();
            if matched > 0 {
                hits.push(SearchHit {
                    node_id: node.id.clone(),
                    score: matched as f64 / (1.0 + d),
                    distance_m: d,
                });
            }
        }
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        hits.truncate(self.config.search_result_cap);
        hits
    }

    /// Resolve a route entry to a graph vertex. Unknown node ids and
    /// points farther than [`SNAP_RADIUS_M`] from any node fail.
    fn resolve_entry(&self, entry: &EntryRef) -> Result<usize, ServiceError> {
        match entry {
            EntryRef::Node { node } => self
                .graph
                .vertex(node)
                .ok_or_else(|| ServiceError::SnapFailed(format!("unknown node id {node:?}"))),
            EntryRef::Point { x, y } => {
                let p = Point::new(*x, *y);
                if !p.is_finite() {
                    return Err(ServiceError::InvalidRequest("non-finite point".into()));
                }
                self.graph.snap(p, SNAP_RADIUS_M).ok_or_else(|| {
                    ServiceError::SnapFailed(format!(
                        "no node within {SNAP_RADIUS_M} m of ({x}, {y})"
                    ))
                })
            }
        }
    }

    pub fn route(&self, src: &EntryRef, dst: &EntryRef) -> Result<RoutePath, ServiceError> {
        let s = self.resolve_entry(src)?;
        let d = self.resolve_entry(dst)?;
        self.graph
            .shortest_path(s, d)
            .ok_or_else(|| ServiceError::Unreachable {
                src: self.graph.node_id(s).to_string(),
                dst: self.graph.node_id(d).to_string(),
            })
    }

    /// Single-source costs to every reachable portal.
    pub fn portal_costs(
        &self,
        entry: &EntryRef,
    ) -> Result<BTreeMap<String, (f64, RoutePath)>, ServiceError> {
        let s = self.resolve_entry(entry)?;
        let paths = self.graph.single_source(s);
        let mut out = BTreeMap::new();
        for &portal in self.graph.portal_vertices() {
            if let Some(path) = self.graph.path_to(&paths, portal) {
                out.insert(
                    self.graph.node_id(portal).to_string(),
                    (path.cost_m, path),
                );
            }
        }
        Ok(out)
    }

    /// Nearest fingerprint in RSSI space. Only fingerprints sharing at
    /// least one beacon id with the cues are candidates; distances are
    /// computed over the beacon union with [`RSSI_FLOOR_DBM`] imputed for
    /// missing readings.
    pub fn localize(
        &self,
        beacon_rssi: &BTreeMap<String, f64>,
    ) -> Result<PoseEstimate, ServiceError> {
        if beacon_rssi.is_empty() {
            return Err(ServiceError::InvalidRequest("no beacon readings".into()));
        }
        let mut best: Option<(f64, &BeaconFingerprint)> = None;
        for fp in &self.config.fingerprints {
            if !fp.rssi.keys().any(|b| beacon_rssi.contains_key(b)) {
                continue;
            }
            let beacons: BTreeSet<&String> =
                fp.rssi.keys().chain(beacon_rssi.keys()).collect();
            let d2: f64 = beacons
                .iter()
                .map(|b| {
                    let cue = beacon_rssi.get(*b).copied().unwrap_or(RSSI_FLOOR_DBM);
                    let stored = fp.rssi.get(*b).copied().unwrap_or(RSSI_FLOOR_DBM);
                    (cue - stored).powi(2)
                })
                .sum();
            let d = d2.sqrt();
            if best.is_none() || d < best.as_ref().unwrap().0 {
                best = Some((d, fp));
            }
        }
        let (d, fp) = best.ok_or(ServiceError::NoFingerprintCoverage)?;
        Ok(PoseEstimate {
            frame_id: self.document.frame.frame_id.clone(),
            x: fp.x,
            y: fp.y,
            heading_deg: None,
            confidence: 1.0 / (1.0 + d),
        })
    }

    pub fn render_tile(&self, cell: &CellId) -> VectorTile {
        tile::render_tile(&self.document, cell)
    }
}
