//! Wire types for the map-server HTTP API.
//!
//! All endpoints speak JSON over HTTP/1.1. Successful responses are
//! wrapped in an [`Envelope`] carrying the serving map id and frame id;
//! coordinates in a response are always in that one frame, never mixed.
//! Credentials travel in the `X-OF-User` and `X-OF-App` headers.
//!
//! | Endpoint                 | Body                          | Result              |
//! |--------------------------|-------------------------------|---------------------|
//! | `POST /v1/geocode`       | `{address}`                   | `[GeocodeHit]`      |
//! | `POST /v1/reverse_geocode` | `{x, y, radius_m}`          | `[ReverseHit]`      |
//! | `POST /v1/search`        | `{keywords[], x, y, radius_m}`| `[SearchHit]`       |
//! | `POST /v1/route`         | `{src, dst}`                  | `RoutePath`         |
//! | `POST /v1/portal_costs`  | `{entry}`                     | `PortalCosts`       |
//! | `POST /v1/localize`      | `{beacon_rssi{}}`             | `PoseEstimate`      |
//! | `GET /v1/tile/{cell}`    | —                             | `VectorTile`        |
//!
//! Errors use `{error, message}` bodies: 403 when a policy denies (the
//! `error` field carries which check failed), 422 for contract
//! violations, 404 for domain misses (unreachable, snap failure, no
//! fingerprint coverage), 501 for services the server does not advertise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::server::routing::RoutePath;
use crate::server::tile::TileFeature;

pub const USER_HEADER: &str = "X-OF-User";
pub const APP_HEADER: &str = "X-OF-App";

/// Success wrapper: which map answered, in which frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub map_id: String,
    pub frame_id: String,
    pub result: T,
}

/// Error body for non-2xx responses. `reason` names the failed check on
/// 403 answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocodeRequest {
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocodeHit {
    pub node_id: String,
    pub x: f64,
    pub y: f64,
    pub full_address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseGeocodeRequest {
    pub x: f64,
    pub y: f64,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseHit {
    pub node_id: String,
    pub x: f64,
    pub y: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub keywords: Vec<String>,
    pub x: f64,
    pub y: f64,
    pub radius_m: f64,
    /// Frame the center is expressed in. Omitted means the document's own
    /// frame. `"geo"` against a local-frame map triggers the coarse
    /// anchor-based path, since the frames cannot be aligned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub node_id: String,
    pub score: f64,
    pub distance_m: f64,
}

/// A route endpoint: an existing node id, or a point to snap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntryRef {
    Node { node: String },
    Point { x: f64, y: f64 },
}

impl EntryRef {
    pub fn node(id: &str) -> Self {
        EntryRef::Node {
            node: id.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRequest {
    pub src: EntryRef,
    pub dst: EntryRef,
    /// Frame any point entries are expressed in; a mismatch with the
    /// document frame is rejected rather than snapped across frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortalCostsRequest {
    pub entry: EntryRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortalLeg {
    pub cost_m: f64,
    pub path: RoutePath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortalCosts {
    /// Reachable portals only, keyed by portal node id.
    pub portals: BTreeMap<String, PortalLeg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeRequest {
    pub beacon_rssi: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub frame_id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_deg: Option<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileResult {
    pub cell: String,
    pub features: Vec<TileFeature>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_ref_forms() {
        let node: EntryRef = serde_json::from_str(r#"{"node": "m:n1"}"#).unwrap();
        assert_eq!(node, EntryRef::node("m:n1"));
        let point: EntryRef = serde_json::from_str(r#"{"x": 1.0, "y": 2.0}"#).unwrap();
        assert_eq!(point, EntryRef::Point { x: 1.0, y: 2.0 });
    }
}
