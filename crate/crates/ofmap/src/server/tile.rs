//! Vector tile rendering: document features clipped to a spatial cell.
//!
//! Tiles are spatial cells. For a geo-frame document, ways are clipped
//! segment by segment (Cohen–Sutherland) and nodes filtered by cell
//! containment. Local-frame documents cannot be clipped against geo
//! bounds; when the requested cell touches the map's anchor disc, their
//! features are returned whole with the local frame id marked, and it is
//! the client's job to keep frames apart.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cells::{cell_bounds, CellId};
use crate::geom::{clip_segment, Point, METERS_PER_DEGREE};
use crate::model::{GeoPoint, MapDocument};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGeometry {
    /// A node position.
    Point([f64; 2]),
    /// Clipped way segments, each `[[x1, y1], [x2, y2]]`.
    Segments(Vec<[[f64; 2]; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileFeature {
    pub id: String,
    pub source_map_id: String,
    pub frame_id: String,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    pub geometry: FeatureGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorTile {
    pub cell: CellId,
    pub features: Vec<TileFeature>,
}

pub fn render_tile(doc: &MapDocument, cell: &CellId) -> VectorTile {
    let features = if doc.frame.is_geo() {
        render_geo(doc, cell)
    } else {
        render_local(doc, cell)
    };
    VectorTile {
        cell: cell.clone(),
        features,
    }
}

fn render_geo(doc: &MapDocument, cell: &CellId) -> Vec<TileFeature> {
    let bounds = cell_bounds(cell);
    let rect = bounds.to_rect();
    let mut features = Vec::new();
    for node in &doc.nodes {
        let Ok(geo) = GeoPoint::new(node.y, node.x) else {
            continue;
        };
        if bounds.contains(geo) {
            features.push(TileFeature {
                id: node.id.clone(),
                source_map_id: doc.map_id.clone(),
                frame_id: doc.frame.frame_id.clone(),
                tags: node.tags.clone(),
                geometry: FeatureGeometry::Point([node.x, node.y]),
            });
        }
    }
    let positions: BTreeMap<&str, Point> = doc
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), n.position()))
        .collect();
    for way in &doc.ways {
        let mut segments = Vec::new();
        for pair in way.node_ids.windows(2) {
            let (Some(a), Some(b)) = (
                positions.get(pair[0].as_str()),
                positions.get(pair[1].as_str()),
            ) else {
                continue;
            };
            if let Some((ca, cb)) = clip_segment(&rect, *a, *b) {
                segments.push([[ca.x, ca.y], [cb.x, cb.y]]);
            }
        }
        if !segments.is_empty() {
            features.push(TileFeature {
                id: way.id.clone(),
                source_map_id: doc.map_id.clone(),
                frame_id: doc.frame.frame_id.clone(),
                tags: way.tags.clone(),
                geometry: FeatureGeometry::Segments(segments),
            });
        }
    }
    features
}

fn render_local(doc: &MapDocument, cell: &CellId) -> Vec<TileFeature> {
    let Some(anchor) = &doc.frame.anchor else {
        return Vec::new(); // unanchored local maps are invisible to tiles
    };
    let Ok(center) = anchor.position() else {
        return Vec::new();
    };
    let bounds = cell_bounds(cell);
    let rect = bounds.to_rect();
    // Anchor disc as an ellipse in degrees.
    let r_lat = anchor.uncertainty_m / METERS_PER_DEGREE;
    let r_lon = anchor.uncertainty_m / (METERS_PER_DEGREE * center.lat.to_radians().cos().max(1e-9));
    let nearest = Point::new(
        center.lon.clamp(rect.min.x, rect.max.x),
        center.lat.clamp(rect.min.y, rect.max.y),
    );
    let dx = (nearest.x - center.lon) / r_lon.max(f64::MIN_POSITIVE);
    let dy = (nearest.y - center.lat) / r_lat.max(f64::MIN_POSITIVE);
    if dx * dx + dy * dy > 1.0 {
        return Vec::new();
    }

    let mut features = Vec::new();
    for node in &doc.nodes {
        features.push(TileFeature {
            id: node.id.clone(),
            source_map_id: doc.map_id.clone(),
            frame_id: doc.frame.frame_id.clone(),
            tags: node.tags.clone(),
            geometry: FeatureGeometry::Point([node.x, node.y]),
        });
    }
    let position = |id: &str| doc.node(id).map(|n| n.position());
    for way in &doc.ways {
        let segments: Vec<[[f64; 2]; 2]> = way
            .node_ids
            .windows(2)
            .filter_map(|pair| {
                let (a, b) = (position(&pair[0])?, position(&pair[1])?);
                Some([[a.x, a.y], [b.x, b.y]])
            })
            .collect();
        if !segments.is_empty() {
            features.push(TileFeature {
                id: way.id.clone(),
                source_map_id: doc.map_id.clone(),
                frame_id: doc.frame.frame_id.clone(),
                tags: way.tags.clone(),
                geometry: FeatureGeometry::Segments(segments),
            });
        }
    }
    features
}
