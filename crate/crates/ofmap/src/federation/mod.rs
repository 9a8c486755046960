//! The federation client: discovery fan-out, ranking, and stitching.
//!
//! One client instance is one logical session. It owns a resolver (with
//! its discovery cache), fan-out credentials, and a per-session cache of
//! portal costs. Fan-out requests run concurrently with a per-server
//! timeout and one retry; a failing server degrades the answer instead of
//! aborting it, except where nothing at all answered.

pub mod route;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{
    Envelope, ErrorBody, GeocodeRequest, LocalizeRequest, PoseEstimate, SearchHit, SearchRequest,
    TileResult, APP_HEADER, USER_HEADER,
};
use crate::cells::{cell_bounds, CellId};
use crate::clock::SharedClock;
use crate::discovery::{Discovered, DiscoveryError, Resolver, ServiceKind};
use crate::geom::frame_distance_m;
use crate::model::{GeoPoint, GEO_FRAME};
use crate::server::tile::{FeatureGeometry, TileFeature};
use crate::server::Credentials;

pub use route::{RouteEnd, RouteLeg, StitchedPath};

pub(crate) type PortalCacheEntry = Option<(String, String, crate::api::PortalCosts)>;

/// Per-server fan-out timeout.
pub const FANOUT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("root server unavailable: {0}")]
    RootUnavailable(String),
    #[error("no discovered server could answer")]
    AllServersFailed,
    #[error("no stitched route exists between the endpoints")]
    NoRoute,
    #[error("geocode failed: {0}")]
    GeocodeFailed(String),
    #[error("no localization candidate survived")]
    NoCandidates,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
}

/// How one server call failed; kept per-response so partial results can
/// carry their warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerFailure {
    pub server_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    /// Cell level zones register at; discovery walks up from here.
    pub registration_level: u8,
    /// The world-scale geocoder used to coarse-locate addresses.
    pub root_endpoint: Option<String>,
    pub credentials: Credentials,
    pub timeout: Duration,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            registration_level: 16,
            root_endpoint: None,
            credentials: Credentials::none(),
            timeout: FANOUT_TIMEOUT,
        }
    }
}

/// Outcome of one HTTP call to a map server.
#[derive(Debug)]
pub(crate) enum CallError {
    /// Connection refused, timeout, malformed body.
    Transport(String),
    /// The server answered with an error status.
    Api { status: u16, body: ErrorBody },
}

impl CallError {
    fn to_message(&self) -> String {
        match self {
            CallError::Transport(m) => m.clone(),
            CallError::Api { status, body } => format!("{status} {}: {}", body.error, body.message),
        }
    }
}

pub(crate) struct HttpClient {
    inner: reqwest::Client,
    credentials: Credentials,
}

impl HttpClient {
    fn new(credentials: Credentials, timeout: Duration) -> Self {
        let inner = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("reqwest client");
        Self { inner, credentials }
    }

    fn apply_credentials(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        let mut req = req;
        if let Some(user) = &self.credentials.user_token {
            req = req.header(USER_HEADER, user);
        }
        if let Some(app) = &self.credentials.app_token {
            req = req.header(APP_HEADER, app);
        }
        req
    }

    async fn run<T: DeserializeOwned>(
        &self,
        build: impl Fn() -> reqwest::RequestBuilder,
    ) -> Result<Envelope<T>, CallError> {
        // One retry on transport errors only; API errors are final.
        let mut last = None;
        for _ in 0..2 {
            let req = self.apply_credentials(build());
            match req.send().await {
                Err(e) => last = Some(CallError::Transport(e.to_string())),
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    if resp.status().is_success() {
                        return resp
                            .json::<Envelope<T>>()
                            .await
                            .map_err(|e| CallError::Transport(e.to_string()));
                    }
                    let body = resp.json::<ErrorBody>().await.unwrap_or(ErrorBody {
                        error: "unknown".into(),
                        message: "unparseable error body".into(),
                        reason: None,
                    });
                    return Err(CallError::Api { status, body });
                }
            }
        }
        Err(last.expect("loop ran"))
    }

    pub(crate) async fn post<Req: Serialize, T: DeserializeOwned>(
        &self,
        endpoint: &str,
        path: &str,
        req: &Req,
    ) -> Result<Envelope<T>, CallError> {
        let url = format!("{endpoint}{path}");
        let body = serde_json::to_value(req).expect("serializable request");
        self.run(move || self.inner.post(&url).json(&body)).await
    }

    pub(crate) async fn get<T: DeserializeOwned>(
        &self,
        endpoint: &str,
        path: &str,
    ) -> Result<Envelope<T>, CallError> {
        let url = format!("{endpoint}{path}");
        self.run(move || self.inner.get(&url)).await
    }
}

/// A geocode candidate with its serving map attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedGeocodeHit {
    pub map_id: String,
    pub server_id: String,
    pub frame_id: String,
    pub node_id: String,
    pub x: f64,
    pub y: f64,
    pub full_address: String,
    pub exact: bool,
    #[serde(skip)]
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedGeocode {
    /// Coarse position of the longest address prefix the root resolved.
    pub coarse: Option<GeoPoint>,
    pub hits: Vec<FederatedGeocodeHit>,
    pub failures: Vec<ServerFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedSearchHit {
    pub map_id: String,
    pub node_id: String,
    pub score: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedSearch {
    pub hits: Vec<FederatedSearchHit>,
    pub failures: Vec<ServerFailure>,
}

/// What the device already believes about its pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPrior {
    pub estimate: Option<PoseEstimate>,
    pub max_speed_mps: f64,
    /// Clock reading (seconds) when the estimate was made.
    pub timestamp_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedLocalize {
    pub map_id: String,
    pub server_id: String,
    pub depth: u8,
    pub estimate: PoseEstimate,
    pub failures: Vec<ServerFailure>,
}

/// Features of one non-geo frame, listed separately because local frames
/// cannot be drawn into geo coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub map_id: String,
    pub frame_id: String,
    pub features: Vec<TileFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileFailure {
    pub cell: String,
    pub server_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedTiles {
    /// Geo-frame features, deduplicated by (map_id, feature id), sorted.
    pub geo: Vec<TileFeature>,
    pub local: Vec<FrameFeatures>,
    pub failures: Vec<TileFailure>,
}

pub struct FederationClient {
    resolver: Arc<Resolver>,
    http: HttpClient,
    config: FederationConfig,
    clock: SharedClock,
    /// Session cache of portal-to-portal cost queries, keyed by
    /// (server_id, portal node id).
    pub(crate) portal_cache: Mutex<HashMap<(String, String), PortalCacheEntry>>,
}

impl FederationClient {
    pub fn new(resolver: Arc<Resolver>, config: FederationConfig, clock: SharedClock) -> Self {
        let http = HttpClient::new(config.credentials.clone(), config.timeout);
        Self {
            resolver,
            http,
            config,
            clock,
            portal_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub(crate) fn http(&self) -> &HttpClient {
        &self.http
    }

    /// Discovery filtered to servers advertising `service`.
    pub async fn discover_servers(
        &self,
        p: GeoPoint,
        level: u8,
        service: Option<ServiceKind>,
    ) -> Result<Vec<Discovered>, FederationError> {
        let mut found = self.resolver.discover(p, level).await?;
        if let Some(service) = service {
            found.retain(|d| d.record.services.contains(&service));
        }
        Ok(found)
    }

    /// Root-first geocoding: resolve the longest address prefix the root
    /// can place, discover finer servers there, and forward the full
    /// address to them. Exact matches rank before suffix matches.
    pub async fn federated_geocode(
        &self,
        address: &str,
    ) -> Result<FederatedGeocode, FederationError> {
        if address.is_empty() {
            return Err(FederationError::InvalidInput("empty address".into()));
        }
        let root = self
            .config
            .root_endpoint
            .clone()
            .ok_or_else(|| FederationError::RootUnavailable("no root configured".into()))?;

        // Longest resolvable prefix at the root.
        let segments: Vec<&str> = address.split('/').collect();
        let mut coarse: Option<GeoPoint> = None;
        let mut root_frame = String::new();
        for take in (1..=segments.len()).rev() {
            let prefix = segments[..take].join("/");
            let outcome: Result<Envelope<Vec<crate::api::GeocodeHit>>, CallError> = self
                .http
                .post(&root, "/v1/geocode", &GeocodeRequest { address: prefix })
                .await;
            match outcome {
                Ok(env) => {
                    if let Some(first) = env.result.first() {
                        root_frame = env.frame_id.clone();
                        if env.frame_id == GEO_FRAME {
                            coarse = GeoPoint::new(first.y, first.x).ok();
                        }
                        break;
                    }
                }
                Err(CallError::Transport(m)) => return Err(FederationError::RootUnavailable(m)),
                Err(CallError::Api { .. }) => {} // e.g. 422 on odd prefixes; keep shortening
            }
        }
        let Some(coarse_point) = coarse else {
            // The root placed nothing (or is not a geo map): nothing to
            // discover against, and nothing matched anywhere we can reach.
            let _ = root_frame;
            return Ok(FederatedGeocode {
                coarse: None,
                hits: Vec::new(),
                failures: Vec::new(),
            });
        };

        // Fan the full address out to root + discovered finer servers.
        let discovered = self
            .discover_servers(
                coarse_point,
                self.config.registration_level,
                Some(ServiceKind::Geocode),
            )
            .await?;
        let root_id = discovered
            .iter()
            .find(|d| d.record.endpoint == root)
            .map(|d| d.record.server_id.clone())
            .unwrap_or_else(|| "<root>".to_string());
        let mut targets: Vec<(String, String)> = vec![(root_id, root.clone())];
        for d in &discovered {
            if d.record.endpoint != root {
                targets.push((d.record.server_id.clone(), d.record.endpoint.clone()));
            }
        }

        let request = GeocodeRequest {
            address: address.to_string(),
        };
        let calls = targets.iter().map(|(server_id, endpoint)| {
            let request = request.clone();
            async move {
                let outcome: Result<Envelope<Vec<crate::api::GeocodeHit>>, CallError> =
                    self.http.post(endpoint, "/v1/geocode", &request).await;
                (server_id.clone(), endpoint.clone(), outcome)
            }
        });
        let mut hits = Vec::new();
        let mut failures = Vec::new();
        for (server_id, endpoint, outcome) in futures::future::join_all(calls).await {
            match outcome {
                Ok(env) => {
                    for hit in env.result {
                        hits.push(FederatedGeocodeHit {
                            map_id: env.map_id.clone(),
                            server_id: server_id.clone(),
                            frame_id: env.frame_id.clone(),
                            exact: hit.full_address == address,
                            node_id: hit.node_id,
                            x: hit.x,
                            y: hit.y,
                            full_address: hit.full_address,
                            endpoint: endpoint.clone(),
                        });
                    }
                }
                Err(e) => failures.push(ServerFailure {
                    server_id,
                    error: e.to_message(),
                }),
            }
        }
        // Exact before suffix, then (map_id, node_id); dedup on the way.
        hits.sort_by(|a, b| {
            b.exact
                .cmp(&a.exact)
                .then_with(|| a.map_id.cmp(&b.map_id))
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        hits.dedup_by(|a, b| a.map_id == b.map_id && a.node_id == b.node_id);
        Ok(FederatedGeocode {
            coarse: Some(coarse_point),
            hits,
            failures,
        })
    }

    /// Fan the same query out to every search-capable server near `p` and
    /// merge. The merge is a pure function of the response multiset.
    pub async fn federated_search(
        &self,
        keywords: &[String],
        p: GeoPoint,
        radius_m: f64,
    ) -> Result<FederatedSearch, FederationError> {
        if keywords.is_empty() {
            return Err(FederationError::InvalidInput("no keywords".into()));
        }
        let discovered = self
            .discover_servers(p, self.config.registration_level, Some(ServiceKind::Search))
            .await?;
        if discovered.is_empty() {
            return Err(FederationError::AllServersFailed);
        }
        let request = SearchRequest {
            keywords: keywords.to_vec(),
            x: p.lon,
            y: p.lat,
            radius_m,
            frame_id: Some(GEO_FRAME.to_string()),
        };
        let calls = discovered.iter().map(|d| {
            let request = request.clone();
            async move {
                let outcome: Result<Envelope<Vec<SearchHit>>, CallError> = self
                    .http
                    .post(&d.record.endpoint, "/v1/search", &request)
                    .await;
                (d.record.server_id.clone(), outcome)
            }
        });
        let mut responses = Vec::new();
        let mut failures = Vec::new();
        for (server_id, outcome) in futures::future::join_all(calls).await {
            match outcome {
                Ok(env) => responses.push((env.map_id, env.result)),
                Err(e) => failures.push(ServerFailure {
                    server_id,
                    error: e.to_message(),
                }),
            }
        }
        if responses.is_empty() {
            return Err(FederationError::AllServersFailed);
        }
        Ok(FederatedSearch {
            hits: merge_search_responses(responses),
            failures,
        })
    }

    /// Send location cues to every localize-capable server near `coarse`,
    /// gate the candidates on the motion-bound prior, and pick the most
    /// confident survivor (deeper discovery hit, then map id, on ties).
    pub async fn federated_localize(
        &self,
        coarse: GeoPoint,
        beacon_rssi: &BTreeMap<String, f64>,
        prior: Option<&LocalPrior>,
    ) -> Result<FederatedLocalize, FederationError> {
        if beacon_rssi.is_empty() {
            return Err(FederationError::InvalidInput("no beacon readings".into()));
        }
        let discovered = self
            .discover_servers(
                coarse,
                self.config.registration_level,
                Some(ServiceKind::Localize),
            )
            .await?;
        if discovered.is_empty() {
            return Err(FederationError::NoCandidates);
        }
        let request = LocalizeRequest {
            beacon_rssi: beacon_rssi.clone(),
        };
        let calls = discovered.iter().map(|d| {
            let request = request.clone();
            async move {
                let outcome: Result<Envelope<PoseEstimate>, CallError> = self
                    .http
                    .post(&d.record.endpoint, "/v1/localize", &request)
                    .await;
                (d.record.server_id.clone(), d.depth, outcome)
            }
        });
        let mut candidates = Vec::new();
        let mut failures = Vec::new();
        for (server_id, depth, outcome) in futures::future::join_all(calls).await {
            match outcome {
                Ok(env) => candidates.push((env.map_id, server_id, depth, env.result)),
                Err(e) => failures.push(ServerFailure {
                    server_id,
                    error: e.to_message(),
                }),
            }
        }

        // Motion bound: discard candidates that moved impossibly far from
        // the prior. Only applicable when the frames match.
        if let Some(prior) = prior {
            if let Some(last) = &prior.estimate {
                let elapsed =
                    (self.clock.now().as_secs_f64() - prior.timestamp_s).max(0.0);
                let budget = prior.max_speed_mps * elapsed;
                candidates.retain(|(_, _, _, pose)| {
                    if pose.frame_id != last.frame_id {
                        return true;
                    }
                    let d = frame_distance_m(
                        pose.frame_id == GEO_FRAME,
                        crate::geom::Point::new(pose.x, pose.y),
                        crate::geom::Point::new(last.x, last.y),
                    );
                    d <= budget
                });
            }
        }

        candidates.sort_by(|a, b| {
            b.3.confidence
                .total_cmp(&a.3.confidence)
                .then_with(|| b.2.cmp(&a.2))
                .then_with(|| a.0.cmp(&b.0))
        });
        let (map_id, server_id, depth, estimate) = candidates
            .into_iter()
            .next()
            .ok_or(FederationError::NoCandidates)?;
        Ok(FederatedLocalize {
            map_id,
            server_id,
            depth,
            estimate,
            failures,
        })
    }

    /// Fetch every viewport cell from every tile-capable server and
    /// compose: geo features united and deduplicated by (map, feature),
    /// local-frame features listed per frame.
    pub async fn federated_tiles(
        &self,
        viewport: &[CellId],
    ) -> Result<ComposedTiles, FederationError> {
        if viewport.is_empty() {
            return Err(FederationError::InvalidInput("empty viewport".into()));
        }
        let mut geo: BTreeMap<(String, String), TileFeature> = BTreeMap::new();
        let mut local: BTreeMap<(String, String), BTreeMap<String, TileFeature>> = BTreeMap::new();
        let mut failures = Vec::new();
        for cell in viewport {
            let level = cell.level().max(self.config.registration_level);
            let discovered = self
                .discover_servers(cell_bounds(cell).center(), level, Some(ServiceKind::Tile))
                .await?;
            let calls = discovered.iter().map(|d| async move {
                let outcome: Result<Envelope<TileResult>, CallError> = self
                    .http
                    .get(&d.record.endpoint, &format!("/v1/tile/{}", cell.token()))
                    .await;
                (d.record.server_id.clone(), outcome)
            });
            for (server_id, outcome) in futures::future::join_all(calls).await {
                match outcome {
                    Ok(env) => {
                        for feature in env.result.features {
                            if feature.frame_id == GEO_FRAME {
                                merge_feature(
                                    &mut geo,
                                    (feature.source_map_id.clone(), feature.id.clone()),
                                    feature,
                                );
                            } else {
                                let frame_key =
                                    (feature.source_map_id.clone(), feature.frame_id.clone());
                                let by_id = local.entry(frame_key).or_default();
                                merge_feature_by_id(by_id, feature);
                            }
                        }
                    }
                    Err(e) => failures.push(TileFailure {
                        cell: cell.token(),
                        server_id,
                        error: e.to_message(),
                    }),
                }
            }
        }
        Ok(ComposedTiles {
            geo: geo.into_values().collect(),
            local: local
                .into_iter()
                .map(|((map_id, frame_id), by_id)| FrameFeatures {
                    map_id,
                    frame_id,
                    features: by_id.into_values().collect(),
                })
                .collect(),
            failures,
        })
    }
}

/// Deterministic merge of per-server search responses: score descending,
/// ties by (map_id, node_id). Pure in the response multiset — arrival
/// order cannot matter.
pub fn merge_search_responses(
    responses: Vec<(String, Vec<SearchHit>)>,
) -> Vec<FederatedSearchHit> {
    let mut hits: Vec<FederatedSearchHit> = responses
        .into_iter()
        .flat_map(|(map_id, hits)| {
            hits.into_iter().map(move |h| FederatedSearchHit {
                map_id: map_id.clone(),
                node_id: h.node_id,
                score: h.score,
                distance_m: h.distance_m,
            })
        })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.map_id.cmp(&b.map_id))
            .then_with(|| a.node_id.cmp(&b.node_id))
    });
    hits
}

fn merge_feature(
    into: &mut BTreeMap<(String, String), TileFeature>,
    key: (String, String),
    feature: TileFeature,
) {
    match into.entry(key) {
        std::collections::btree_map::Entry::Vacant(v) => {
            v.insert(normalized(feature));
        }
        std::collections::btree_map::Entry::Occupied(mut o) => {
            let merged = merge_geometries(o.get().clone(), feature);
            o.insert(merged);
        }
    }
}

fn merge_feature_by_id(into: &mut BTreeMap<String, TileFeature>, feature: TileFeature) {
    match into.entry(feature.id.clone()) {
        std::collections::btree_map::Entry::Vacant(v) => {
            v.insert(normalized(feature));
        }
        std::collections::btree_map::Entry::Occupied(mut o) => {
            let merged = merge_geometries(o.get().clone(), feature);
            o.insert(merged);
        }
    }
}

/// The same feature can arrive clipped differently from different cells;
/// keep the segment union so composition is order-independent.
fn merge_geometries(a: TileFeature, b: TileFeature) -> TileFeature {
    let geometry = match (a.geometry.clone(), b.geometry) {
        (FeatureGeometry::Segments(mut sa), FeatureGeometry::Segments(sb)) => {
            sa.extend(sb);
            sort_segments(&mut sa);
            FeatureGeometry::Segments(sa)
        }
        (geometry, _) => geometry,
    };
    TileFeature { geometry, ..a }
}

fn normalized(mut feature: TileFeature) -> TileFeature {
    if let FeatureGeometry::Segments(segments) = &mut feature.geometry {
        sort_segments(segments);
    }
    feature
}

fn sort_segments(segments: &mut Vec<[[f64; 2]; 2]>) {
    segments.sort_by(|a, b| {
        let flat = |s: &[[f64; 2]; 2]| [s[0][0], s[0][1], s[1][0], s[1][1]];
        flat(a)
            .into_iter()
            .zip(flat(b))
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    segments.dedup();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(node: &str, score: f64) -> SearchHit {
        SearchHit {
            node_id: node.to_string(),
            score,
            distance_m: 1.0,
        }
    }

    #[test]
    fn search_merge_is_order_independent() {
        let a = ("mapA".to_string(), vec![hit("a:n1", 0.5), hit("a:n2", 0.9)]);
        let b = ("mapB".to_string(), vec![hit("b:n1", 0.9), hit("b:n2", 0.1)]);
        let forward = merge_search_responses(vec![a.clone(), b.clone()]);
        let backward = merge_search_responses(vec![b, a]);
        assert_eq!(forward, backward);
        let ids: Vec<&str> = forward.iter().map(|h| h.node_id.as_str()).collect();
        // 0.9 tie: mapA before mapB.
        assert_eq!(ids, vec!["a:n2", "b:n1", "a:n1", "b:n2"]);
    }

    #[test]
    fn segment_merge_dedups() {
        let mut segments = vec![
            [[1.0, 1.0], [2.0, 2.0]],
            [[0.0, 0.0], [1.0, 1.0]],
            [[1.0, 1.0], [2.0, 2.0]],
        ];
        sort_segments(&mut segments);
        assert_eq!(
            segments,
            vec![[[0.0, 0.0], [1.0, 1.0]], [[1.0, 1.0], [2.0, 2.0]]]
        );
    }
}
