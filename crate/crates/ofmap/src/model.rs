//! The map data model: nodes, ways, relations, and the zone boundary.
//!
//! A [`MapDocument`] is one provider's map of a region. Element ids are
//! globally-unique strings (provider-prefixed by convention, e.g.
//! `"grocery1:n42"`), which is what lets a portal node be recognized in two
//! documents without any coordinate matching between misaligned frames.
//!
//! Coordinates live in the document's frame. For the `"geo"` frame the
//! convention is `x = longitude`, `y = latitude` in degrees; any other
//! frame is planar meters with an origin private to the map. A non-geo
//! frame may carry an anchor — a coarse geographic position plus an
//! uncertainty radius — which is the only tie between the local frame and
//! geodesy.
//!
//! # Document JSON
//!
//! ```json
//! {
//!   "map_id": "grocery1",
//!   "frame": {"frame_id": "grocery1-floor",
//!             "anchor": {"lat": 40.44, "lon": -79.95, "uncertainty_m": 80.0}},
//!   "address_prefix": "US/PA/Pittsburgh/GroceryZone",
//!   "boundary": [[0.0, 0.0], [40.0, 0.0], [40.0, 25.0], [0.0, 25.0]],
//!   "nodes": [{"id": "grocery1:n1", "x": 3.0, "y": 4.0,
//!              "tags": {"addr": "Aisle 4"}, "portal": false}],
//!   "ways": [{"id": "grocery1:w1", "nodes": ["grocery1:n1", "..."], "tags": {}}],
//!   "relations": [{"id": "grocery1:r1",
//!                  "members": [{"ref": "grocery1:w1", "role": "aisle"}], "tags": {}}]
//! }
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Point, METERS_PER_DEGREE};

/// Frame id of the shared geographic frame.
pub const GEO_FRAME: &str = "geo";

/// Boundary fuzziness for inside-tests, geo frames (degrees).
pub const BOUNDARY_EPSILON_GEO_DEG: f64 = 1e-6;
/// Boundary fuzziness for inside-tests, local frames (meters).
pub const BOUNDARY_EPSILON_LOCAL_M: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("integrity error: {0}")]
    Integrity(String),
}

/// A geographic position in degrees.
///
/// Longitude is normalized into `[-180, 180)` on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(ModelError::Parse(format!(
                "non-finite geo coordinates ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(ModelError::Parse(format!("latitude {lat} out of [-90, 90]")));
        }
        let mut lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
        if lon >= 180.0 {
            lon = -180.0;
        }
        Ok(Self { lat, lon })
    }

    /// The same position as a frame point (`x = lon`, `y = lat`).
    pub fn to_point(self) -> Point {
        Point::new(self.lon, self.lat)
    }

    /// Interpret a geo-frame point as a position.
    pub fn from_point(p: Point) -> Result<Self, ModelError> {
        Self::new(p.y, p.x)
    }
}

impl<'de> Deserialize<'de> for GeoPoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lat: f64,
            lon: f64,
        }
        let raw = Raw::deserialize(d)?;
        GeoPoint::new(raw.lat, raw.lon).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Coarse geographic anchor of a local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub lat: f64,
    pub lon: f64,
    pub uncertainty_m: f64,
}

impl Anchor {
    pub fn position(&self) -> Result<GeoPoint, ModelError> {
        GeoPoint::new(self.lat, self.lon)
    }

    /// Axis-aligned geo rectangle covering the anchor disc. Used when a
    /// local-frame map registers itself for discovery.
    pub fn inflated_polygon(&self) -> Result<Vec<GeoPoint>, ModelError> {
        let pos = self.position()?;
        let dlat = self.uncertainty_m / METERS_PER_DEGREE;
        let dlon = self.uncertainty_m / (METERS_PER_DEGREE * pos.lat.to_radians().cos().max(1e-9));
        Ok(vec![
            GeoPoint::new(pos.lat - dlat, pos.lon - dlon)?,
            GeoPoint::new(pos.lat - dlat, pos.lon + dlon)?,
            GeoPoint::new(pos.lat + dlat, pos.lon + dlon)?,
            GeoPoint::new(pos.lat + dlat, pos.lon - dlon)?,
        ])
    }
}

/// The coordinate frame of a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
}

impl FrameRef {
    pub fn geo() -> Self {
        Self {
            frame_id: GEO_FRAME.to_string(),
            anchor: None,
        }
    }

    pub fn is_geo(&self) -> bool {
        self.frame_id == GEO_FRAME
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A point element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    #[serde(default, rename = "portal", skip_serializing_if = "is_false")]
    pub is_portal: bool,
}

impl MapNode {
    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// An ordered list of nodes defining a polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapWay {
    pub id: String,
    #[serde(rename = "nodes")]
    pub node_ids: Vec<String>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

/// One member of a relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMember {
    #[serde(rename = "ref")]
    pub element_id: String,
    pub role: String,
}

/// A collection of related elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRelation {
    pub id: String,
    pub members: Vec<RelationMember>,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

/// One provider's map of a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub map_id: String,
    pub frame: FrameRef,
    pub address_prefix: String,
    pub boundary: Vec<Point>,
    #[serde(default)]
    pub nodes: Vec<MapNode>,
    #[serde(default)]
    pub ways: Vec<MapWay>,
    #[serde(default)]
    pub relations: Vec<MapRelation>,
}

/// A non-fatal validation finding.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationWarning {
    /// A node sits outside the boundary polygon by more than the frame's
    /// epsilon. Boundaries are fuzzy, so this is reported, not rejected.
    NodeOutsideBoundary { node_id: String, distance: f64 },
}

impl fmt::Display for ValidationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationWarning::NodeOutsideBoundary { node_id, distance } => {
                write!(f, "node {node_id} lies {distance:.6} outside the boundary")
            }
        }
    }
}

/// Parse and validate a map document from JSON text.
pub fn load_map_document(text: &str) -> Result<(MapDocument, Vec<ValidationWarning>), ModelError> {
    let doc: MapDocument =
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let warnings = validate_document(&doc)?;
    Ok((doc, warnings))
}

impl MapDocument {
    /// Parse, validate, and discard warnings.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        load_map_document(text).map(|(doc, _)| doc)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serialization")
    }

    pub fn node(&self, id: &str) -> Option<&MapNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

/// Check every document invariant; returns warnings for the fuzzy ones.
pub fn validate_document(doc: &MapDocument) -> Result<Vec<ValidationWarning>, ModelError> {
    if doc.map_id.is_empty() {
        return Err(ModelError::Integrity("map_id must be non-empty".into()));
    }
    if doc.frame.frame_id.is_empty() {
        return Err(ModelError::Integrity("frame_id must be non-empty".into()));
    }
    if doc.frame.is_geo() && doc.frame.anchor.is_some() {
        return Err(ModelError::Integrity(
            "the geo frame must not carry an anchor".into(),
        ));
    }
    if let Some(anchor) = &doc.frame.anchor {
        anchor.position()?;
        if !(anchor.uncertainty_m.is_finite() && anchor.uncertainty_m >= 0.0) {
            return Err(ModelError::Integrity(
                "anchor uncertainty must be a finite non-negative radius".into(),
            ));
        }
    }

    if doc.boundary.len() < 3 {
        return Err(ModelError::Integrity(format!(
            "boundary needs at least 3 vertices, got {}",
            doc.boundary.len()
        )));
    }
    if !geom::polygon_is_simple(&doc.boundary) {
        return Err(ModelError::Integrity(
            "boundary polygon is not simple".into(),
        ));
    }

    let mut node_ids = HashSet::new();
    for node in &doc.nodes {
        if node.id.is_empty() {
            return Err(ModelError::Integrity("node with empty id".into()));
        }
        if !node.position().is_finite() {
            return Err(ModelError::Integrity(format!(
                "node {} has non-finite coordinates",
                node.id
            )));
        }
        if doc.frame.is_geo() {
            GeoPoint::new(node.y, node.x).map_err(|_| {
                ModelError::Integrity(format!(
                    "node {} has invalid geo coordinates ({}, {})",
                    node.id, node.y, node.x
                ))
            })?;
        }
        if !node_ids.insert(node.id.as_str()) {
            return Err(ModelError::Integrity(format!(
                "duplicate node id {}",
                node.id
            )));
        }
    }

    let mut way_ids = HashSet::new();
    let mut nodes_in_ways: HashSet<&str> = HashSet::new();
    for way in &doc.ways {
        if way.id.is_empty() {
            return Err(ModelError::Integrity("way with empty id".into()));
        }
        if !way_ids.insert(way.id.as_str()) {
            return Err(ModelError::Integrity(format!("duplicate way id {}", way.id)));
        }
        if way.node_ids.len() < 2 {
            return Err(ModelError::Integrity(format!(
                "way {} has fewer than 2 nodes",
                way.id
            )));
        }
        for pair in way.node_ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(ModelError::Integrity(format!(
                    "way {} repeats node {} consecutively",
                    way.id, pair[0]
                )));
            }
        }
        for node_id in &way.node_ids {
            if !node_ids.contains(node_id.as_str()) {
                return Err(ModelError::Integrity(format!(
                    "way {} references missing node {node_id}",
                    way.id
                )));
            }
            nodes_in_ways.insert(node_id.as_str());
        }
    }

    let mut relation_ids = HashSet::new();
    for rel in &doc.relations {
        if rel.id.is_empty() {
            return Err(ModelError::Integrity("relation with empty id".into()));
        }
        if !relation_ids.insert(rel.id.as_str()) {
            return Err(ModelError::Integrity(format!(
                "duplicate relation id {}",
                rel.id
            )));
        }
    }
    for rel in &doc.relations {
        for member in &rel.members {
            let exists = node_ids.contains(member.element_id.as_str())
                || way_ids.contains(member.element_id.as_str())
                || relation_ids.contains(member.element_id.as_str());
            if !exists {
                return Err(ModelError::Integrity(format!(
                    "relation {} references missing element {}",
                    rel.id, member.element_id
                )));
            }
        }
    }
    check_relation_cycles(doc)?;

    for node in &doc.nodes {
        if node.is_portal && !nodes_in_ways.contains(node.id.as_str()) {
            return Err(ModelError::Integrity(format!(
                "portal node {} appears in no way",
                node.id
            )));
        }
    }

    let epsilon = if doc.frame.is_geo() {
        BOUNDARY_EPSILON_GEO_DEG
    } else {
        BOUNDARY_EPSILON_LOCAL_M
    };
    let mut warnings = Vec::new();
    for node in &doc.nodes {
        let p = node.position();
        if !geom::point_in_polygon(p, &doc.boundary) {
            let d = geom::point_polygon_distance(p, &doc.boundary);
            if d > epsilon {
                warnings.push(ValidationWarning::NodeOutsideBoundary {
                    node_id: node.id.clone(),
                    distance: d,
                });
            }
        }
    }
    Ok(warnings)
}

/// Reject relations that contain themselves, directly or transitively.
fn check_relation_cycles(doc: &MapDocument) -> Result<(), ModelError> {
    let index: HashMap<&str, &MapRelation> =
        doc.relations.iter().map(|r| (r.id.as_str(), r)).collect();

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done,
    }
    let mut marks: HashMap<&str, Mark> = HashMap::new();

    fn visit<'a>(
        id: &'a str,
        index: &HashMap<&'a str, &'a MapRelation>,
        marks: &mut HashMap<&'a str, Mark>,
    ) -> Result<(), ModelError> {
        match marks.get(id) {
            Some(Mark::Done) => return Ok(()),
            Some(Mark::Visiting) => {
                return Err(ModelError::Integrity(format!(
                    "relation containment cycle through {id}"
                )))
            }
            None => {}
        }
        marks.insert(id, Mark::Visiting);
        if let Some(rel) = index.get(id) {
            for member in &rel.members {
                if index.contains_key(member.element_id.as_str()) {
                    visit(member.element_id.as_str(), index, marks)?;
                }
            }
        }
        marks.insert(id, Mark::Done);
        Ok(())
    }

    for rel in &doc.relations {
        visit(rel.id.as_str(), &index, &mut marks)?;
    }
    Ok(())
}

/// True iff `p` lies inside (or on) the document's boundary polygon.
pub fn zone_contains(doc: &MapDocument, p: Point) -> bool {
    geom::point_in_polygon(p, &doc.boundary)
}

/// The polygon under which a document registers for discovery, in the geo
/// frame. Geo documents use their boundary; local-frame documents use the
/// anchor disc inflated to a rectangle. Local frames without an anchor
/// cannot register.
pub fn registration_polygon(doc: &MapDocument) -> Result<Vec<GeoPoint>, ModelError> {
    if doc.frame.is_geo() {
        doc.boundary
            .iter()
            .map(|p| GeoPoint::from_point(*p))
            .collect()
    } else {
        let anchor = doc.frame.anchor.as_ref().ok_or_else(|| {
            ModelError::Integrity(format!(
                "local frame {} has no anchor; cannot register for discovery",
                doc.frame.frame_id
            ))
        })?;
        anchor.inflated_polygon()
    }
}
