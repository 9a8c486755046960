//! Cross-zone route stitching over the portal meta-graph.
//!
//! No server sees more than its own zone, and frames may not even be
//! mutually alignable, so the only legal junctions between zones are
//! portal nodes — ids shared by two documents. The client asks each
//! route-capable server along the way for entry-to-portal and
//! portal-to-portal costs, assembles them into a meta-graph over
//! {source, destination} ∪ portals, runs Dijkstra there, and expands the
//! winning meta-edges back into per-zone legs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::api::{EntryRef, PortalCosts, PortalCostsRequest, RouteRequest};
use crate::cells::MAX_LEVEL;
use crate::discovery::ServiceKind;
use crate::model::{GeoPoint, GEO_FRAME};
use crate::server::routing::RoutePath;

use super::{CallError, Envelope, FederationClient, FederationError};

/// One end of a federated route request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteEnd {
    Address(String),
    Position(GeoPoint),
}

/// One in-zone stretch of a stitched route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteLeg {
    pub map_id: String,
    pub frame_id: String,
    pub path: RoutePath,
}

/// Legs joined at shared portal nodes; total cost is the exact sum of leg
/// costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchedPath {
    pub legs: Vec<RouteLeg>,
    pub total_cost_m: f64,
}

impl StitchedPath {
    /// Consecutive legs must hand off at the same node id.
    pub fn junctions_consistent(&self) -> bool {
        self.legs.windows(2).all(|pair| {
            pair[0].path.nodes.last().is_some() && pair[0].path.nodes.last() == pair[1].path.nodes.first()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum MetaVertex {
    Source,
    Portal(String),
    Destination,
}

#[derive(Debug, Clone)]
struct MetaEdge {
    to: MetaVertex,
    cost: f64,
    map_id: String,
    frame_id: String,
    /// Path oriented from the edge's tail to `to`.
    path: RoutePath,
}

#[derive(Debug, Clone)]
struct EndServer {
    server_id: String,
    map_id: String,
    endpoint: String,
}

struct ResolvedEnd {
    entry: EntryRef,
    server: Option<EndServer>,
    coarse: GeoPoint,
}

struct Target {
    server_id: String,
    endpoint: String,
}

impl FederationClient {
    /// Geocode both ends, discover route-capable servers along the
    /// straight line between them, gather portal costs, and stitch.
    pub async fn federated_route(
        &self,
        src: &RouteEnd,
        dst: &RouteEnd,
    ) -> Result<StitchedPath, FederationError> {
        let src_end = self.resolve_end(src).await?;
        let dst_end = self.resolve_end(dst).await?;

        // Route-capable servers along the way.
        let mut targets: BTreeMap<String, Target> = BTreeMap::new();
        for p in sample_line(src_end.coarse, dst_end.coarse, self.config.registration_level) {
            for d in self
                .discover_servers(p, self.config.registration_level, Some(ServiceKind::Route))
                .await?
            {
                targets.entry(d.record.server_id.clone()).or_insert(Target {
                    server_id: d.record.server_id,
                    endpoint: d.record.endpoint,
                });
            }
        }
        for end in [&src_end, &dst_end] {
            if let Some(server) = &end.server {
                targets
                    .entry(server.server_id.clone())
                    .or_insert_with(|| Target {
                        server_id: server.server_id.clone(),
                        endpoint: server.endpoint.clone(),
                    });
            }
        }
        if targets.is_empty() {
            return Err(FederationError::NoRoute);
        }

        let mut edges: BTreeMap<MetaVertex, Vec<MetaEdge>> = BTreeMap::new();
        let mut portals: BTreeSet<String> = BTreeSet::new();

        // Entry edges from the source.
        for (server_id, answer) in self.entry_costs(&src_end, &targets).await {
            let map_id = answer.0;
            let frame_id = answer.1;
            let _ = server_id;
            for (portal, leg) in answer.2.portals {
                portals.insert(portal.clone());
                edges.entry(MetaVertex::Source).or_default().push(MetaEdge {
                    to: MetaVertex::Portal(portal),
                    cost: leg.cost_m,
                    map_id: map_id.clone(),
                    frame_id: frame_id.clone(),
                    path: leg.path,
                });
            }
        }
        // Entry edges into the destination (paths arrive reversed).
        for (_server_id, answer) in self.entry_costs(&dst_end, &targets).await {
            let (map_id, frame_id, costs) = answer;
            for (portal, leg) in costs.portals {
                portals.insert(portal.clone());
                let mut path = leg.path;
                path.nodes.reverse();
                edges
                    .entry(MetaVertex::Portal(portal))
                    .or_default()
                    .push(MetaEdge {
                        to: MetaVertex::Destination,
                        cost: leg.cost_m,
                        map_id: map_id.clone(),
                        frame_id: frame_id.clone(),
                        path,
                    });
            }
        }
        // Direct source→destination edges where one server holds both ends.
        for target in targets.values() {
            let src_ok = src_end
                .server
                .as_ref()
                .map_or(matches!(src_end.entry, EntryRef::Point { .. }), |s| {
                    s.server_id == target.server_id
                });
            let dst_ok = dst_end
                .server
                .as_ref()
                .map_or(matches!(dst_end.entry, EntryRef::Point { .. }), |s| {
                    s.server_id == target.server_id
                });
            if !(src_ok && dst_ok) {
                continue;
            }
            let request = RouteRequest {
                src: src_end.entry.clone(),
                dst: dst_end.entry.clone(),
                frame_id: Some(GEO_FRAME.to_string()),
            };
            let outcome: Result<Envelope<RoutePath>, CallError> = self
                .http()
                .post(&target.endpoint, "/v1/route", &request)
                .await;
            if let Ok(env) = outcome {
                edges.entry(MetaVertex::Source).or_default().push(MetaEdge {
                    to: MetaVertex::Destination,
                    cost: env.result.cost_m,
                    map_id: env.map_id,
                    frame_id: env.frame_id,
                    path: env.result,
                });
            }
        }

        // Portal-to-portal expansion to fixpoint.
        let mut queried: HashSet<(String, String)> = HashSet::new();
        loop {
            let mut wave: Vec<(&Target, String)> = Vec::new();
            for target in targets.values() {
                for portal in &portals {
                    if !queried.contains(&(target.server_id.clone(), portal.clone())) {
                        wave.push((target, portal.clone()));
                    }
                }
            }
            if wave.is_empty() {
                break;
            }
            let calls = wave.iter().map(|(target, portal)| {
                let portal = portal.clone();
                async move {
                    let answer = self.portal_costs_cached(target, &portal).await;
                    (target.server_id.clone(), portal, answer)
                }
            });
            for (server_id, portal, answer) in futures::future::join_all(calls).await {
                queried.insert((server_id, portal.clone()));
                let Some((map_id, frame_id, costs)) = answer else {
                    continue;
                };
                for (other, leg) in costs.portals {
                    if other == portal {
                        continue;
                    }
                    portals.insert(other.clone());
                    edges
                        .entry(MetaVertex::Portal(portal.clone()))
                        .or_default()
                        .push(MetaEdge {
                            to: MetaVertex::Portal(other),
                            cost: leg.cost_m,
                            map_id: map_id.clone(),
                            frame_id: frame_id.clone(),
                            path: leg.path,
                        });
                }
            }
        }

        let meta_path = meta_dijkstra(&edges).ok_or(FederationError::NoRoute)?;
        Ok(stitch(meta_path))
    }

    async fn resolve_end(&self, end: &RouteEnd) -> Result<ResolvedEnd, FederationError> {
        match end {
            RouteEnd::Position(p) => Ok(ResolvedEnd {
                entry: EntryRef::Point { x: p.lon, y: p.lat },
                server: None,
                coarse: *p,
            }),
            RouteEnd::Address(address) => {
                let geocoded = self.federated_geocode(address).await?;
                let hit = geocoded
                    .hits
                    .first()
                    .ok_or_else(|| FederationError::GeocodeFailed(address.clone()))?;
                let coarse = if hit.frame_id == GEO_FRAME {
                    GeoPoint::new(hit.y, hit.x)
                        .map_err(|e| FederationError::GeocodeFailed(e.to_string()))?
                } else {
                    geocoded
                        .coarse
                        .ok_or_else(|| FederationError::GeocodeFailed(address.clone()))?
                };
                Ok(ResolvedEnd {
                    entry: EntryRef::node(&hit.node_id),
                    server: Some(EndServer {
                        server_id: hit.server_id.clone(),
                        map_id: hit.map_id.clone(),
                        endpoint: hit.endpoint.clone(),
                    }),
                    coarse,
                })
            }
        }
    }

    /// Portal costs from an end's entry. A node entry goes to its owning
    /// server; a point entry is tried on every target, skipping servers
    /// that cannot snap it.
    async fn entry_costs(
        &self,
        end: &ResolvedEnd,
        targets: &BTreeMap<String, Target>,
    ) -> Vec<(String, (String, String, PortalCosts))> {
        let mut calls: Vec<(String, String)> = Vec::new();
        match (&end.entry, &end.server) {
            (EntryRef::Node { .. }, Some(server)) => {
                calls.push((server.server_id.clone(), server.endpoint.clone()));
                let _ = &server.map_id;
            }
            (EntryRef::Point { .. }, _) => {
                for t in targets.values() {
                    calls.push((t.server_id.clone(), t.endpoint.clone()));
                }
            }
            (EntryRef::Node { .. }, None) => {}
        }
        let request = PortalCostsRequest {
            entry: end.entry.clone(),
            frame_id: Some(GEO_FRAME.to_string()),
        };
        let futures_iter = calls.iter().map(|(server_id, endpoint)| {
            let request = request.clone();
            async move {
                let outcome: Result<Envelope<PortalCosts>, CallError> = self
                    .http()
                    .post(endpoint, "/v1/portal_costs", &request)
                    .await;
                (server_id.clone(), outcome)
            }
        });
        futures::future::join_all(futures_iter)
            .await
            .into_iter()
            .filter_map(|(server_id, outcome)| match outcome {
                Ok(env) => Some((server_id, (env.map_id, env.frame_id, env.result))),
                Err(_) => None,
            })
            .collect()
    }

    /// Portal-keyed cost queries repeat across routes in a session; cache
    /// them. Returns None when the server does not know the portal.
    async fn portal_costs_cached(
        &self,
        target: &Target,
        portal: &str,
    ) -> Option<(String, String, PortalCosts)> {
        let key = (target.server_id.clone(), portal.to_string());
        if let Some(hit) = self.portal_cache.lock().expect("portal cache").get(&key) {
            return hit.clone();
        }
        let request = PortalCostsRequest {
            entry: EntryRef::node(portal),
            frame_id: None,
        };
        let outcome: Result<Envelope<PortalCosts>, CallError> = self
            .http()
            .post(&target.endpoint, "/v1/portal_costs", &request)
            .await;
        let entry = match outcome {
            Ok(env) => Some((env.map_id, env.frame_id, env.result)),
            Err(_) => None,
        };
        self.portal_cache
            .lock()
            .expect("portal cache")
            .insert(key, entry.clone());
        entry
    }
}

/// Sample the straight line between two coarse positions every half cell
/// at `level`, endpoints included.
fn sample_line(a: GeoPoint, b: GeoPoint, level: u8) -> Vec<GeoPoint> {
    let level = level.min(MAX_LEVEL);
    let half_lat = 90.0 / (1u64 << level) as f64;
    let half_lon = 180.0 / (1u64 << level) as f64;
    let steps_lat = ((a.lat - b.lat).abs() / half_lat).ceil();
    let steps_lon = ((a.lon - b.lon).abs() / half_lon).ceil();
    let n = (steps_lat.max(steps_lon) as usize).clamp(1, 10_000);
    (0..=n)
        .filter_map(|i| {
            let t = i as f64 / n as f64;
            GeoPoint::new(a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon)).ok()
        })
        .collect()
}

/// Deterministic Dijkstra over the meta-graph. Ties break toward the
/// lexicographically smaller vertex sequence.
fn meta_dijkstra(edges: &BTreeMap<MetaVertex, Vec<MetaEdge>>) -> Option<Vec<MetaEdge>> {
    let mut dist: BTreeMap<MetaVertex, f64> = BTreeMap::new();
    let mut pred: BTreeMap<MetaVertex, (MetaVertex, MetaEdge)> = BTreeMap::new();
    let mut settled: BTreeSet<MetaVertex> = BTreeSet::new();
    let mut heap: BinaryHeap<Reverse<(HeapCost, MetaVertex)>> = BinaryHeap::new();
    dist.insert(MetaVertex::Source, 0.0);
    heap.push(Reverse((HeapCost(0.0), MetaVertex::Source)));

    let walk = |pred: &BTreeMap<MetaVertex, (MetaVertex, MetaEdge)>, from: &MetaVertex| {
        let mut chain = vec![from.clone()];
        let mut at = from.clone();
        while let Some((prev, _)) = pred.get(&at) {
            chain.push(prev.clone());
            at = prev.clone();
        }
        chain.reverse();
        chain
    };

    while let Some(Reverse((_, u))) = heap.pop() {
        if !settled.insert(u.clone()) {
            continue;
        }
        let du = dist[&u];
        for edge in edges.get(&u).into_iter().flatten() {
            let candidate = du + edge.cost;
            let current = dist.get(&edge.to).copied();
            let better = match current {
                None => true,
                Some(d) if candidate < d => true,
                Some(d) if candidate == d => {
                    // Compare full vertex sequences with the target
                    // appended; the incumbent path may be a prefix.
                    let mut via_u = walk(&pred, &u);
                    via_u.push(edge.to.clone());
                    let incumbent = match pred.get(&edge.to) {
                        Some(_) => {
                            let mut chain = walk(&pred, &edge.to);
                            chain.push(edge.to.clone());
                            chain
                        }
                        None => vec![edge.to.clone()],
                    };
                    via_u < incumbent
                }
                _ => false,
            };
            if better {
                dist.insert(edge.to.clone(), candidate);
                pred.insert(edge.to.clone(), (u.clone(), edge.clone()));
                heap.push(Reverse((HeapCost(candidate), edge.to.clone())));
            }
        }
    }

    if !dist.contains_key(&MetaVertex::Destination) {
        return None;
    }
    let mut legs = Vec::new();
    let mut at = MetaVertex::Destination;
    while at != MetaVertex::Source {
        let (prev, edge) = pred.get(&at).expect("reachable vertex has a predecessor");
        legs.push(edge.clone());
        at = prev.clone();
    }
    legs.reverse();
    Some(legs)
}

/// Turn meta-edges into legs: merge consecutive same-map stretches and
/// drop degenerate zero-cost hops at the junctions.
fn stitch(meta_edges: Vec<MetaEdge>) -> StitchedPath {
    let mut legs: Vec<RouteLeg> = Vec::new();
    for edge in meta_edges {
        if edge.path.nodes.len() <= 1 && edge.cost == 0.0 && !legs.is_empty() {
            continue; // zero-cost self hop at a portal
        }
        if let Some(last) = legs.last_mut() {
            if last.map_id == edge.map_id {
                debug_assert_eq!(last.path.nodes.last(), edge.path.nodes.first());
                last.path.nodes.extend(edge.path.nodes.into_iter().skip(1));
                last.path.cost_m += edge.cost;
                continue;
            }
        }
        legs.push(RouteLeg {
            map_id: edge.map_id,
            frame_id: edge.frame_id,
            path: edge.path,
        });
    }
    // A lone zero-cost hop (source == destination) is a valid single leg;
    // a leading degenerate hop before a real leg is not.
    while legs.len() > 1 && legs[0].path.nodes.len() <= 1 {
        legs.remove(0);
    }
    let total_cost_m = legs.iter().map(|l| l.path.cost_m).sum();
    StitchedPath { legs, total_cost_m }
}

/// f64 heap key; costs here are finite and non-negative.
#[derive(PartialEq)]
struct HeapCost(f64);

impl Eq for HeapCost {}

impl PartialOrd for HeapCost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapCost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(to: MetaVertex, cost: f64, map: &str, nodes: &[&str]) -> MetaEdge {
        MetaEdge {
            to,
            cost,
            map_id: map.to_string(),
            frame_id: format!("{map}-frame"),
            path: RoutePath {
                nodes: nodes.iter().map(|s| s.to_string()).collect(),
                cost_m: cost,
            },
        }
    }

    #[test]
    fn two_zone_stitch() {
        // zone1: n1 –1.0– n2 –2.0– p1; zone2: p1 –3.0– n3.
        let mut edges: BTreeMap<MetaVertex, Vec<MetaEdge>> = BTreeMap::new();
        edges.insert(
            MetaVertex::Source,
            vec![edge(
                MetaVertex::Portal("p1".into()),
                3.0,
                "zone1",
                &["n1", "n2", "p1"],
            )],
        );
        edges.insert(
            MetaVertex::Portal("p1".into()),
            vec![edge(MetaVertex::Destination, 3.0, "zone2", &["p1", "n3"])],
        );
        let stitched = stitch(meta_dijkstra(&edges).unwrap());
        assert_eq!(stitched.total_cost_m, 6.0);
        assert_eq!(stitched.legs.len(), 2);
        assert_eq!(stitched.legs[0].map_id, "zone1");
        assert_eq!(stitched.legs[0].path.nodes, vec!["n1", "n2", "p1"]);
        assert_eq!(stitched.legs[1].path.nodes, vec!["p1", "n3"]);
        assert!(stitched.junctions_consistent());
    }

    #[test]
    fn cheaper_detour_wins() {
        let mut edges: BTreeMap<MetaVertex, Vec<MetaEdge>> = BTreeMap::new();
        edges.insert(
            MetaVertex::Source,
            vec![
                edge(MetaVertex::Portal("pa".into()), 1.0, "z1", &["s", "pa"]),
                edge(MetaVertex::Destination, 100.0, "z1", &["s", "x", "d"]),
            ],
        );
        edges.insert(
            MetaVertex::Portal("pa".into()),
            vec![edge(MetaVertex::Destination, 1.0, "z2", &["pa", "d"])],
        );
        let stitched = stitch(meta_dijkstra(&edges).unwrap());
        assert_eq!(stitched.total_cost_m, 2.0);
    }

    #[test]
    fn disconnected_is_none() {
        let mut edges: BTreeMap<MetaVertex, Vec<MetaEdge>> = BTreeMap::new();
        edges.insert(
            MetaVertex::Source,
            vec![edge(MetaVertex::Portal("pa".into()), 1.0, "z1", &["s", "pa"])],
        );
        assert!(meta_dijkstra(&edges).is_none());
    }

    #[test]
    fn same_map_legs_merge() {
        let mut edges: BTreeMap<MetaVertex, Vec<MetaEdge>> = BTreeMap::new();
        edges.insert(
            MetaVertex::Source,
            vec![edge(MetaVertex::Portal("p1".into()), 2.0, "z1", &["a", "p1"])],
        );
        edges.insert(
            MetaVertex::Portal("p1".into()),
            vec![edge(
                MetaVertex::Portal("p2".into()),
                2.0,
                "z1",
                &["p1", "b", "p2"],
            )],
        );
        edges.insert(
            MetaVertex::Portal("p2".into()),
            vec![edge(MetaVertex::Destination, 1.0, "z2", &["p2", "c"])],
        );
        let stitched = stitch(meta_dijkstra(&edges).unwrap());
        assert_eq!(stitched.legs.len(), 2);
        assert_eq!(stitched.legs[0].path.nodes, vec!["a", "p1", "b", "p2"]);
        assert_eq!(stitched.legs[0].path.cost_m, 4.0);
        assert_eq!(stitched.total_cost_m, 5.0);
    }

    #[test]
    fn zero_cost_portal_hops_are_dropped() {
        // Entry is itself the portal: Source→p1 costs 0 with path [p1].
        let mut edges: BTreeMap<MetaVertex, Vec<MetaEdge>> = BTreeMap::new();
        edges.insert(
            MetaVertex::Source,
            vec![edge(MetaVertex::Portal("p1".into()), 0.0, "z1", &["p1"])],
        );
        edges.insert(
            MetaVertex::Portal("p1".into()),
            vec![edge(MetaVertex::Destination, 5.0, "z2", &["p1", "d"])],
        );
        let stitched = stitch(meta_dijkstra(&edges).unwrap());
        assert_eq!(stitched.legs.len(), 1);
        assert_eq!(stitched.legs[0].path.nodes, vec!["p1", "d"]);
        assert_eq!(stitched.total_cost_m, 5.0);
    }

    #[test]
    fn line_sampling_covers_endpoints() {
        let a = GeoPoint::new(40.0, -80.0).unwrap();
        let b = GeoPoint::new(40.2, -79.8).unwrap();
        let samples = sample_line(a, b, 10);
        assert_eq!(samples.first().unwrap(), &a);
        assert_eq!(samples.last().unwrap(), &b);
        let half = 90.0 / 1024.0;
        for pair in samples.windows(2) {
            assert!((pair[0].lat - pair[1].lat).abs() <= half + 1e-12);
        }
    }
}
