//! Deterministic random-world generation.
//!
//! A world is a row of adjacent rectangular zones with a random geometric
//! graph inside each one. Inter-zone edges exist only as portal nodes
//! shared by both neighboring documents, so by construction every legal
//! cross-zone path runs through portals — which is what makes the
//! federated route exactly comparable to the merged-graph oracle.
//!
//! Everything derives from the seed; the same seed writes byte-identical
//! files.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::cell_from_point;
use crate::discovery::ServiceKind;
use crate::model::{FrameRef, GeoPoint, MapDocument, MapNode, MapWay};
use crate::geom::Point;
use crate::server::{ServerConfig, WeightRounding};

use super::{EndSpec, Scenario, ScenarioQuery, ScenarioServer};

/// Zone strips sit in this corner of the world.
const LAT0: f64 = 40.0;
const LON0: f64 = -80.0;
/// Zone extent in degrees, both axes.
const ZONE_SPAN: f64 = 0.08;
/// Nodes keep this margin from the zone edges (fraction of the span), so
/// only portals sit on boundaries.
const MARGIN: f64 = 0.1;
/// Cell level the generated scenarios register and discover at.
const GEN_LEVEL: u8 = 14;
/// Portals per zone boundary at density 1.0.
const MAX_PORTALS_PER_BOUNDARY: usize = 4;

const KINDS: [&str; 4] = ["cafe", "fuel", "parts", "books"];

#[derive(Debug, Clone)]
pub struct WorldParams {
    pub seed: u64,
    pub zones: usize,
    pub nodes: usize,
    /// 0.0..=1.0 of the maximum portal count per zone boundary (at least
    /// one portal always exists, or zones would be unreachable).
    pub portal_density: f64,
    pub route_queries: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            seed: 0,
            zones: 3,
            nodes: 120,
            portal_density: 1.0,
            route_queries: 20,
        }
    }
}

#[derive(Debug)]
pub struct GeneratedWorld {
    pub scenario: Scenario,
    /// (file name, document) pairs the scenario's map_paths refer to.
    pub documents: Vec<(String, MapDocument)>,
}

pub fn gen_random_world(params: &WorldParams) -> GeneratedWorld {
    assert!(params.zones >= 1, "need at least one zone");
    assert!(params.nodes >= params.zones, "need at least one node per zone");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let zone_lon = |k: usize| LON0 + k as f64 * ZONE_SPAN;
    let per_zone = params.nodes / params.zones;
    let remainder = params.nodes % params.zones;

    let mut zone_nodes: Vec<Vec<MapNode>> = Vec::with_capacity(params.zones);
    let mut zone_ways: Vec<Vec<MapWay>> = Vec::with_capacity(params.zones);
    let mut global_index = 0usize;

    for k in 0..params.zones {
        let count = per_zone + usize::from(k < remainder);
        let lon_lo = zone_lon(k) + ZONE_SPAN * MARGIN;
        let lon_hi = zone_lon(k) + ZONE_SPAN * (1.0 - MARGIN);
        let lat_lo = LAT0 + ZONE_SPAN * MARGIN;
        let lat_hi = LAT0 + ZONE_SPAN * (1.0 - MARGIN);

        let mut nodes = Vec::with_capacity(count);
        for i in 0..count {
            let kind = KINDS[rng.random_range(0..KINDS.len())];
            let mut tags = BTreeMap::new();
            tags.insert("name".to_string(), format!("poi-{global_index}"));
            tags.insert("addr".to_string(), format!("Site {global_index}"));
            tags.insert("kind".to_string(), kind.to_string());
            nodes.push(MapNode {
                id: format!("z{k}:n{i}"),
                x: rng.random_range(lon_lo..lon_hi),
                y: rng.random_range(lat_lo..lat_hi),
                tags,
                is_portal: false,
            });
            global_index += 1;
        }

        // Random spanning tree keeps the zone connected; extra edges give
        // the router something to choose between.
        let mut ways = Vec::new();
        let mut way_index = 0usize;
        for i in 1..count {
            let j = rng.random_range(0..i);
            ways.push(MapWay {
                id: format!("z{k}:w{way_index}"),
                node_ids: vec![nodes[i].id.clone(), nodes[j].id.clone()],
                tags: BTreeMap::new(),
            });
            way_index += 1;
        }
        for _ in 0..count / 2 {
            let a = rng.random_range(0..count);
            let b = rng.random_range(0..count);
            if a != b {
                ways.push(MapWay {
                    id: format!("z{k}:w{way_index}"),
                    node_ids: vec![nodes[a].id.clone(), nodes[b].id.clone()],
                    tags: BTreeMap::new(),
                });
                way_index += 1;
            }
        }
        zone_nodes.push(nodes);
        zone_ways.push(ways);
    }

    // Portals on each shared boundary, present in both documents at the
    // same geographic position and tied into both zone graphs.
    let portal_count = ((params.portal_density * MAX_PORTALS_PER_BOUNDARY as f64).round()
        as usize)
        .max(1);
    for k in 0..params.zones.saturating_sub(1) {
        let boundary_lon = zone_lon(k + 1);
        for j in 0..portal_count {
            let lat = rng.random_range(
                LAT0 + ZONE_SPAN * MARGIN..LAT0 + ZONE_SPAN * (1.0 - MARGIN),
            );
            let portal = MapNode {
                id: format!("portal:{k}-{}:{j}", k + 1),
                x: boundary_lon,
                y: lat,
                tags: BTreeMap::new(),
                is_portal: true,
            };
            for side in [k, k + 1] {
                let nearest = nearest_internal(&zone_nodes[side], portal.position());
                let way_id = format!("z{side}:wp{k}-{j}");
                zone_ways[side].push(MapWay {
                    id: way_id,
                    node_ids: vec![portal.id.clone(), nearest],
                    tags: BTreeMap::new(),
                });
                zone_nodes[side].push(portal.clone());
            }
        }
    }

    let mut documents = Vec::with_capacity(params.zones);
    let mut servers = Vec::with_capacity(params.zones);
    for k in 0..params.zones {
        let lon_lo = zone_lon(k);
        let lon_hi = zone_lon(k) + ZONE_SPAN;
        let doc = MapDocument {
            map_id: format!("z{k}"),
            frame: FrameRef::geo(),
            address_prefix: format!("GEN/Z{k}"),
            boundary: vec![
                Point::new(lon_lo, LAT0),
                Point::new(lon_hi, LAT0),
                Point::new(lon_hi, LAT0 + ZONE_SPAN),
                Point::new(lon_lo, LAT0 + ZONE_SPAN),
            ],
            nodes: std::mem::take(&mut zone_nodes[k]),
            ways: std::mem::take(&mut zone_ways[k]),
            relations: Vec::new(),
        };
        let mut config = ServerConfig::open(
            &format!("z{k}"),
            [
                ServiceKind::Geocode,
                ServiceKind::ReverseGeocode,
                ServiceKind::Search,
                ServiceKind::Route,
                ServiceKind::Tile,
            ],
        );
        config.registration_level = GEN_LEVEL;
        config.weight_rounding = WeightRounding::WholeMeters;
        servers.push(ScenarioServer {
            map_path: format!("z{k}.json"),
            config,
        });
        documents.push((format!("z{k}.json"), doc));
    }

    // Queries. Route endpoints are node positions, so they snap exactly.
    let all_nodes: Vec<(f64, f64, String)> = documents
        .iter()
        .flat_map(|(_, d)| {
            d.nodes
                .iter()
                .filter(|n| !n.is_portal)
                .map(|n| (n.y, n.x, n.tags.get("kind").cloned().unwrap_or_default()))
        })
        .collect();
    let mut queries = Vec::new();
    for _ in 0..params.route_queries {
        let (src_lat, src_lon, _) = all_nodes[rng.random_range(0..all_nodes.len())];
        let (dst_lat, dst_lon, _) = all_nodes[rng.random_range(0..all_nodes.len())];
        queries.push(ScenarioQuery::Route {
            src: EndSpec::Position {
                lat: src_lat,
                lon: src_lon,
            },
            dst: EndSpec::Position {
                lat: dst_lat,
                lon: dst_lon,
            },
        });
    }
    for _ in 0..3 {
        let (lat, lon, _) = all_nodes[rng.random_range(0..all_nodes.len())];
        queries.push(ScenarioQuery::Discover {
            lat,
            lon,
            level: None,
        });
    }
    for _ in 0..3 {
        let (lat, lon, kind) = all_nodes[rng.random_range(0..all_nodes.len())].clone();
        queries.push(ScenarioQuery::Search {
            keywords: vec![kind],
            lat,
            lon,
            // Stays under the node margin, so every candidate's zone is
            // discoverable from the center.
            radius_m: 500.0,
        });
    }
    for _ in 0..2 {
        let (lat, lon, _) = all_nodes[rng.random_range(0..all_nodes.len())];
        let cell = cell_from_point(GeoPoint::new(lat, lon).unwrap(), GEN_LEVEL).unwrap();
        queries.push(ScenarioQuery::Tiles {
            cells: vec![cell.token()],
        });
    }

    let scenario = Scenario {
        suffix: "maps.test".to_string(),
        registration_level: GEN_LEVEL,
        weight_rounding: WeightRounding::WholeMeters,
        oracle: true,
        discovery_via_dns: false,
        root_server: None,
        route_cost_tolerance: 0.0,
        servers,
        queries,
    };
    GeneratedWorld {
        scenario,
        documents,
    }
}

fn nearest_internal(nodes: &[MapNode], p: Point) -> String {
    nodes
        .iter()
        .filter(|n| !n.is_portal)
        .min_by(|a, b| {
            let da = (a.x - p.x).powi(2) + (a.y - p.y).powi(2);
            let db = (b.x - p.x).powi(2) + (b.y - p.y).powi(2);
            da.total_cmp(&db).then_with(|| a.id.cmp(&b.id))
        })
        .map(|n| n.id.clone())
        .expect("zone has internal nodes")
}

/// Write the documents and scenario into `dir`; returns the scenario path.
pub fn write_world(world: &GeneratedWorld, dir: &Path) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    for (name, doc) in &world.documents {
        std::fs::write(dir.join(name), doc.to_json_string())?;
    }
    let scenario_path = dir.join("scenario.json");
    std::fs::write(
        &scenario_path,
        serde_json::to_string_pretty(&world.scenario).expect("scenario serialization"),
    )?;
    Ok(scenario_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_document;

    #[test]
    fn same_seed_same_bytes() {
        let params = WorldParams {
            seed: 42,
            zones: 3,
            nodes: 60,
            ..WorldParams::default()
        };
        let a = gen_random_world(&params);
        let b = gen_random_world(&params);
        assert_eq!(
            serde_json::to_string(&a.scenario).unwrap(),
            serde_json::to_string(&b.scenario).unwrap()
        );
        for ((name_a, doc_a), (name_b, doc_b)) in a.documents.iter().zip(&b.documents) {
            assert_eq!(name_a, name_b);
            assert_eq!(doc_a.to_json_string(), doc_b.to_json_string());
        }
        let c = gen_random_world(&WorldParams {
            seed: 43,
            ..params
        });
        assert_ne!(
            serde_json::to_string(&a.scenario).unwrap(),
            serde_json::to_string(&c.scenario).unwrap()
        );
    }

    #[test]
    fn generated_documents_validate() {
        for seed in 0..5 {
            let world = gen_random_world(&WorldParams {
                seed,
                zones: 4,
                nodes: 80,
                ..WorldParams::default()
            });
            for (name, doc) in &world.documents {
                let reparsed = MapDocument::from_json(&doc.to_json_string())
                    .unwrap_or_else(|e| panic!("{name}: {e}"));
                let warnings = validate_document(&reparsed).unwrap();
                assert!(warnings.is_empty(), "{name}: {warnings:?}");
            }
        }
    }

    #[test]
    fn full_density_gives_max_portals() {
        let world = gen_random_world(&WorldParams {
            seed: 1,
            zones: 3,
            nodes: 30,
            portal_density: 1.0,
            route_queries: 1,
        });
        let portal_count = world.documents[0]
            .1
            .nodes
            .iter()
            .filter(|n| n.is_portal)
            .count();
        assert_eq!(portal_count, MAX_PORTALS_PER_BOUNDARY);

        let sparse = gen_random_world(&WorldParams {
            seed: 1,
            zones: 3,
            nodes: 30,
            portal_density: 0.0,
            route_queries: 1,
        });
        let portal_count = sparse.documents[0]
            .1
            .nodes
            .iter()
            .filter(|n| n.is_portal)
            .count();
        assert_eq!(portal_count, 1);
    }
}
