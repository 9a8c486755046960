//! The HTTP face of a map server.
//!
//! Every handler runs the same gauntlet: is the service advertised, does
//! the policy allow these credentials, is the request inside the
//! contract — then hands off to the core and wraps the answer in the
//! response envelope. Handlers are stateless over the shared snapshot,
//! so requests run with arbitrary concurrency.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;

use crate::api::{
    Envelope, ErrorBody, GeocodeRequest, LocalizeRequest, PortalCosts, PortalCostsRequest,
    PortalLeg, ReverseGeocodeRequest, RouteRequest, SearchRequest, TileResult, APP_HEADER,
    USER_HEADER,
};
use crate::cells::CellId;
use crate::discovery::ServiceKind;
use crate::geom::Point;
use crate::model::GeoPoint;
use crate::server::{AuthDecision, Credentials, MapServer, ServiceError};

/// A serving HTTP endpoint. Dropping it stops the listener task.
pub struct RunningServer {
    pub endpoint: String,
    pub addr: SocketAddr,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Bind and serve. Use port 0 for an ephemeral loopback port.
pub async fn spawn_server(server: Arc<MapServer>, bind: SocketAddr) -> io::Result<RunningServer> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let app = router(server);
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(RunningServer {
        endpoint: format!("http://{addr}"),
        addr,
        task,
    })
}

pub fn router(server: Arc<MapServer>) -> Router {
    Router::new()
        .route("/v1/geocode", post(geocode))
        .route("/v1/reverse_geocode", post(reverse_geocode))
        .route("/v1/search", post(search))
        .route("/v1/route", post(route))
        .route("/v1/portal_costs", post(portal_costs))
        .route("/v1/localize", post(localize))
        .route("/v1/tile", get(tile_world))
        .route("/v1/tile/{cell}", get(tile))
        .with_state(server)
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: String) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                message,
                reason: None,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let message = e.to_string();
        match e {
            ServiceError::NotAuthorized { check } => ApiError {
                status: StatusCode::FORBIDDEN,
                body: ErrorBody {
                    error: "not_authorized".into(),
                    message,
                    reason: Some(check.to_string()),
                },
            },
            ServiceError::NotImplemented(_) => {
                ApiError::new(StatusCode::NOT_IMPLEMENTED, "not_implemented", message)
            }
            ServiceError::InvalidRequest(_) | ServiceError::Cell(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
            }
            ServiceError::SnapFailed(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "snap_failed", message)
            }
            ServiceError::Unreachable { .. } => {
                ApiError::new(StatusCode::NOT_FOUND, "unreachable", message)
            }
            ServiceError::NoFingerprintCoverage => ApiError::new(
                StatusCode::NOT_FOUND,
                "no_fingerprint_coverage",
                message,
            ),
        }
    }
}

fn credentials(headers: &HeaderMap) -> Credentials {
    let token = |name: &str| {
        headers
            .get(name)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
    };
    Credentials {
        user_token: token(USER_HEADER),
        app_token: token(APP_HEADER),
    }
}

/// Advertised-service and policy gate. Runs before any request parsing so
/// a denied caller never learns whether their body was even well-formed.
fn guard(server: &MapServer, service: ServiceKind, headers: &HeaderMap) -> Result<(), ApiError> {
    if !server.advertises(service) {
        return Err(ServiceError::NotImplemented(service).into());
    }
    match server.authorize(service, &credentials(headers)) {
        AuthDecision::Allow => Ok(()),
        AuthDecision::Deny { check } => Err(ServiceError::NotAuthorized { check }.into()),
    }
}

fn parse<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_request",
            e.to_string(),
        )
    })
}

fn envelope<T: Serialize>(server: &MapServer, result: T) -> Response {
    Json(Envelope {
        map_id: server.document().map_id.clone(),
        frame_id: server.document().frame.frame_id.clone(),
        result,
    })
    .into_response()
}

/// Point entries must arrive in the document frame; node ids are
/// frame-free.
fn check_point_frame(
    server: &MapServer,
    frame_id: &Option<String>,
    has_point: bool,
) -> Result<(), ApiError> {
    if let Some(frame) = frame_id {
        if has_point && frame != &server.document().frame.frame_id {
            return Err(ServiceError::InvalidRequest(format!(
                "point entries are in frame {frame:?} but this map's frame is {:?}",
                server.document().frame.frame_id
            ))
            .into());
        }
    }
    Ok(())
}

async fn geocode(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
    payload: Result<Json<GeocodeRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    guard(&server, ServiceKind::Geocode, &headers)?;
    let req = parse(payload)?;
    let hits = server.geocode(&req.address)?;
    Ok(envelope(&server, hits))
}

async fn reverse_geocode(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
    payload: Result<Json<ReverseGeocodeRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    guard(&server, ServiceKind::ReverseGeocode, &headers)?;
    let req = parse(payload)?;
    let hits = server.reverse_geocode(Point::new(req.x, req.y), req.radius_m)?;
    Ok(envelope(&server, hits))
}

async fn search(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
    payload: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    guard(&server, ServiceKind::Search, &headers)?;
    let req = parse(payload)?;
    let own_frame = &server.document().frame.frame_id;
    let hits = match &req.frame_id {
        None => server.search(&req.keywords, Point::new(req.x, req.y), req.radius_m)?,
        Some(frame) if frame == own_frame => {
            server.search(&req.keywords, Point::new(req.x, req.y), req.radius_m)?
        }
        Some(frame) if frame == "geo" => {
            let center = GeoPoint::new(req.y, req.x)
                .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
            server.search_coarse(&req.keywords, center, req.radius_m)?
        }
        Some(frame) => {
            return Err(ServiceError::InvalidRequest(format!(
                "cannot search frame {frame:?} on a {own_frame:?} map"
            ))
            .into())
        }
    };
    Ok(envelope(&server, hits))
}

async fn route(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
    payload: Result<Json<RouteRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    guard(&server, ServiceKind::Route, &headers)?;
    let req = parse(payload)?;
    let has_point = matches!(req.src, crate::api::EntryRef::Point { .. })
        || matches!(req.dst, crate::api::EntryRef::Point { .. });
    check_point_frame(&server, &req.frame_id, has_point)?;
    let path = server.route(&req.src, &req.dst)?;
    Ok(envelope(&server, path))
}

async fn portal_costs(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
    payload: Result<Json<PortalCostsRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    guard(&server, ServiceKind::Route, &headers)?;
    let req = parse(payload)?;
    let has_point = matches!(req.entry, crate::api::EntryRef::Point { .. });
    check_point_frame(&server, &req.frame_id, has_point)?;
    let costs = server.portal_costs(&req.entry)?;
    let portals = costs
        .into_iter()
        .map(|(id, (cost_m, path))| (id, PortalLeg { cost_m, path }))
        .collect();
    Ok(envelope(&server, PortalCosts { portals }))
}

async fn localize(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
    payload: Result<Json<LocalizeRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    guard(&server, ServiceKind::Localize, &headers)?;
    let req = parse(payload)?;
    let pose = server.localize(&req.beacon_rssi)?;
    Ok(envelope(&server, pose))
}

async fn tile(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
    Path(cell): Path<String>,
) -> Result<Response, ApiError> {
    render_tile_response(&server, &headers, &cell)
}

async fn tile_world(
    State(server): State<Arc<MapServer>>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    render_tile_response(&server, &headers, "")
}

fn render_tile_response(
    server: &MapServer,
    headers: &HeaderMap,
    token: &str,
) -> Result<Response, ApiError> {
    guard(server, ServiceKind::Tile, headers)?;
    let cell = CellId::from_token(token).map_err(ServiceError::Cell)?;
    let tile = server.render_tile(&cell);
    Ok(envelope(
        server,
        TileResult {
            cell: tile.cell.token(),
            features: tile.features,
        },
    ))
}
