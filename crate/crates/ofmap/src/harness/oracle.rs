//! The centralized oracle: one merged map, one pipeline.
//!
//! Every geo-frame document is merged into a single world document —
//! shared node ids collapse to one node, which is exactly what makes
//! portals work — and the same per-service machinery (graph build,
//! scoring, tile clipping) runs over it. Federated answers are then
//! diffable against what a single all-seeing provider would have said.
//! Local-frame documents stay out: they cannot be merged into geo
//! coordinates, which is the point of keeping them federated.

use std::collections::BTreeMap;

use crate::api::{EntryRef, GeocodeHit};
use crate::cells::CellId;
use crate::federation::FederatedSearchHit;
use crate::geom::{frame_distance_m, Point};
use crate::model::{FrameRef, MapDocument, MapNode, MapRelation, MapWay};
use crate::server::routing::{RouteGraph, RoutePath, WeightRounding, SNAP_RADIUS_M};
use crate::server::tile::{render_tile, VectorTile};
use crate::server::ServiceError;

use super::ScenarioError;

/// A geocodable address in some source map.
#[derive(Debug, Clone)]
struct AddressEntry {
    full_address: String,
    map_id: String,
    node_id: String,
    x: f64,
    y: f64,
}

pub struct OracleWorld {
    merged: MapDocument,
    graph: RouteGraph,
    /// node id → source map id (first map in id order wins for shared
    /// nodes; portals are position-identical anyway).
    source_of: BTreeMap<String, String>,
    addresses: Vec<AddressEntry>,
}

impl OracleWorld {
    /// Merge the geo-frame documents. Shared node ids must agree on
    /// position; shared way ids must agree entirely.
    pub fn build(
        docs: &[&MapDocument],
        weight_rounding: WeightRounding,
    ) -> Result<Self, ScenarioError> {
        let mut geo_docs: Vec<&&MapDocument> =
            docs.iter().filter(|d| d.frame.is_geo()).collect();
        geo_docs.sort_by(|a, b| a.map_id.cmp(&b.map_id));
        if geo_docs.is_empty() {
            return Err(ScenarioError::Invalid(
                "oracle needs at least one geo-frame document".into(),
            ));
        }

        let mut nodes: BTreeMap<String, MapNode> = BTreeMap::new();
        let mut source_of: BTreeMap<String, String> = BTreeMap::new();
        let mut ways: BTreeMap<String, MapWay> = BTreeMap::new();
        let mut relations: BTreeMap<String, MapRelation> = BTreeMap::new();
        let mut addresses = Vec::new();
        let mut bbox: Option<(f64, f64, f64, f64)> = None;

        for doc in &geo_docs {
            for p in &doc.boundary {
                bbox = Some(match bbox {
                    None => (p.x, p.y, p.x, p.y),
                    Some((x0, y0, x1, y1)) => {
                        (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y))
                    }
                });
            }
            for node in &doc.nodes {
                match nodes.get(&node.id) {
                    Some(existing) => {
                        if existing.x != node.x || existing.y != node.y {
                            return Err(ScenarioError::Invalid(format!(
                                "node {} has conflicting positions across maps",
                                node.id
                            )));
                        }
                    }
                    None => {
                        nodes.insert(node.id.clone(), node.clone());
                        source_of.insert(node.id.clone(), doc.map_id.clone());
                    }
                }
                if let Some(addr) = node.tags.get("addr") {
                    addresses.push(AddressEntry {
                        full_address: format!("{}/{}", doc.address_prefix, addr),
                        map_id: doc.map_id.clone(),
                        node_id: node.id.clone(),
                        x: node.x,
                        y: node.y,
                    });
                }
            }
            for way in &doc.ways {
                match ways.get(&way.id) {
                    Some(existing) if existing != way => {
                        return Err(ScenarioError::Invalid(format!(
                            "way {} differs across maps",
                            way.id
                        )))
                    }
                    Some(_) => {}
                    None => {
                        ways.insert(way.id.clone(), way.clone());
                    }
                }
            }
            for rel in &doc.relations {
                relations.entry(rel.id.clone()).or_insert_with(|| rel.clone());
            }
        }

        let (x0, y0, x1, y1) =
            bbox.ok_or_else(|| ScenarioError::Invalid("empty oracle world".into()))?;
        let merged = MapDocument {
            map_id: "oracle".to_string(),
            frame: FrameRef::geo(),
            address_prefix: String::new(),
            boundary: vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
            nodes: nodes.into_values().collect(),
            ways: ways.into_values().collect(),
            relations: relations.into_values().collect(),
        };
        let graph = RouteGraph::build(&merged, weight_rounding)
            .map_err(|e| ScenarioError::Invalid(format!("oracle graph: {e}")))?;
        Ok(Self {
            merged,
            graph,
            source_of,
            addresses,
        })
    }

    pub fn document(&self) -> &MapDocument {
        &self.merged
    }

    fn resolve(&self, entry: &EntryRef) -> Result<usize, ServiceError> {
        match entry {
            EntryRef::Node { node } => self
                .graph
                .vertex(node)
                .ok_or_else(|| ServiceError::SnapFailed(format!("unknown node {node:?}"))),
            EntryRef::Point { x, y } => self
                .graph
                .snap(Point::new(*x, *y), SNAP_RADIUS_M)
                .ok_or_else(|| {
                    ServiceError::SnapFailed(format!("no node within {SNAP_RADIUS_M} m"))
                }),
        }
    }

    /// Shortest path on the merged graph.
    pub fn route(&self, src: &EntryRef, dst: &EntryRef) -> Result<RoutePath, ServiceError> {
        let s = self.resolve(src)?;
        let d = self.resolve(dst)?;
        self.graph
            .shortest_path(s, d)
            .ok_or_else(|| ServiceError::Unreachable {
                src: self.graph.node_id(s).to_string(),
                dst: self.graph.node_id(d).to_string(),
            })
    }

    /// Centralized search: the same scoring rule over the merged node
    /// set, each hit attributed to its source map, ranked exactly like
    /// the federated merge.
    pub fn search(
        &self,
        keywords: &[String],
        center: Point,
        radius_m: f64,
    ) -> Vec<FederatedSearchHit> {
        let keywords_lc: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
        let mut hits: Vec<FederatedSearchHit> = Vec::new();
        for node in &self.merged.nodes {
            let d = frame_distance_m(true, center, node.position());
            if d > radius_m {
                continue;
            }
            let matched = keywords_lc
                .iter()
                .filter(|k| {
                    node.tags
                        .values()
                        .any(|v| v.to_lowercase().contains(k.as_str()))
                })
                .count();
            if matched > 0 {
                hits.push(FederatedSearchHit {
                    map_id: self.source_of[&node.id].clone(),
                    node_id: node.id.clone(),
                    score: matched as f64 / (1.0 + d),
                    distance_m: d,
                });
            }
        }
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.map_id.cmp(&b.map_id))
                .then_with(|| a.node_id.cmp(&b.node_id))
        });
        hits
    }

    /// Centralized tile over the merged document.
    pub fn tile(&self, cell: &CellId) -> VectorTile {
        render_tile(&self.merged, cell)
    }

    /// Centralized geocode over every source map's address book, exact
    /// matches first, then (map_id, node_id).
    pub fn geocode(&self, address: &str) -> Vec<(bool, String, GeocodeHit)> {
        let query_lc = address.to_lowercase();
        let mut out: Vec<(bool, String, GeocodeHit)> = Vec::new();
        for entry in &self.addresses {
            let exact = entry.full_address == address;
            let matched = exact || entry.full_address.to_lowercase().ends_with(&query_lc);
            if matched {
                out.push((
                    exact,
                    entry.map_id.clone(),
                    GeocodeHit {
                        node_id: entry.node_id.clone(),
                        x: entry.x,
                        y: entry.y,
                        full_address: entry.full_address.clone(),
                    },
                ));
            }
        }
        out.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.node_id.cmp(&b.2.node_id))
        });
        out
    }
}
