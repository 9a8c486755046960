//! The in-zone route graph and shortest paths.
//!
//! Edges come from consecutive node pairs of every way, undirected, with
//! the Euclidean length in the document frame as the weight. Ties between
//! equal-cost shortest paths break toward the lexicographically smallest
//! node-id sequence, so routes are deterministic across runs and across
//! servers holding the same data.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geom::{frame_distance_m, Point};
use crate::model::{MapDocument, ModelError};

/// Maximum distance a point entry may snap to a graph node.
pub const SNAP_RADIUS_M: f64 = 50.0;

/// How edge weights are rounded when the graph is built.
///
/// `WholeMeters` keeps every weight an integral f64 (minimum 1), so path
/// costs are exact integer sums regardless of summation order — which is
/// what makes cross-server route costs comparable without tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRounding {
    #[default]
    None,
    WholeMeters,
}

/// An in-zone route: node-id sequence plus total cost in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePath {
    pub nodes: Vec<String>,
    pub cost_m: f64,
}

pub struct RouteGraph {
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    positions: Vec<Point>,
    adjacency: Vec<Vec<(usize, f64)>>,
    portal_vertices: Vec<usize>,
    geo: bool,
}

impl RouteGraph {
    pub fn build(doc: &MapDocument, rounding: WeightRounding) -> Result<Self, ModelError> {
        let node_ids: Vec<String> = doc.nodes.iter().map(|n| n.id.clone()).collect();
        let index: HashMap<String, usize> = node_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let positions: Vec<Point> = doc.nodes.iter().map(|n| n.position()).collect();
        let geo = doc.frame.is_geo();
        let mut adjacency = vec![Vec::new(); node_ids.len()];
        for way in &doc.ways {
            for pair in way.node_ids.windows(2) {
                let a = index[&pair[0]];
                let b = index[&pair[1]];
                let raw = frame_distance_m(geo, positions[a], positions[b]);
                let weight = match rounding {
                    WeightRounding::None => raw,
                    WeightRounding::WholeMeters => raw.round().max(1.0),
                };
                if weight <= 0.0 {
                    return Err(ModelError::Integrity(format!(
                        "zero-length edge between {} and {} in way {}",
                        pair[0], pair[1], way.id
                    )));
                }
                adjacency[a].push((b, weight));
                adjacency[b].push((a, weight));
            }
        }
        let portal_vertices = doc
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_portal)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            node_ids,
            index,
            positions,
            adjacency,
            portal_vertices,
            geo,
        })
    }

    pub fn vertex(&self, node_id: &str) -> Option<usize> {
        self.index.get(node_id).copied()
    }

    pub fn node_id(&self, vertex: usize) -> &str {
        &self.node_ids[vertex]
    }

    pub fn portal_vertices(&self) -> &[usize] {
        &self.portal_vertices
    }

    /// Nearest node within `max_m` of `p`, ties broken by node id.
    pub fn snap(&self, p: Point, max_m: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, pos) in self.positions.iter().enumerate() {
            let d = frame_distance_m(self.geo, p, *pos);
            if d > max_m {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, bi)) => {
                    d < bd || (d == bd && self.node_ids[i] < self.node_ids[bi])
                }
            };
            if better {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }

    /// Single-source shortest paths with the lexicographic tie-break.
    pub fn single_source(&self, src: usize) -> ShortestPaths {
        let n = self.node_ids.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut settled = vec![false; n];
        let mut heap: BinaryHeap<Reverse<(HeapCost, usize)>> = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Reverse((HeapCost(0.0), src)));
        while let Some(Reverse((_, u))) = heap.pop() {
            if settled[u] {
                continue;
            }
            settled[u] = true;
            for &(v, w) in &self.adjacency[u] {
                let candidate = dist[u] + w;
                if candidate < dist[v] {
                    dist[v] = candidate;
                    pred[v] = u;
                    heap.push(Reverse((HeapCost(candidate), v)));
                } else if candidate == dist[v] && pred[v] != usize::MAX && pred[v] != u {
                    // Equal cost: both u and pred[v] are settled, so their
                    // paths are final; pick the smaller id sequence.
                    if self.path_less(&pred, u, pred[v], v) {
                        pred[v] = u;
                    }
                }
            }
        }
        ShortestPaths { src, dist, pred }
    }

    /// Compare the settled paths through `a` and through `b`, each
    /// extended by the shared endpoint `v`, lexicographically by node id.
    /// The endpoint matters: one predecessor path may be a prefix of the
    /// other, and appending `v` can flip the order.
    fn path_less(&self, pred: &[usize], a: usize, b: usize, v: usize) -> bool {
        let walk = |mut at: usize| {
            let mut ids = vec![self.node_ids[v].as_str()];
            loop {
                ids.push(self.node_ids[at].as_str());
                if pred[at] == usize::MAX {
                    break;
                }
                at = pred[at];
            }
            ids.reverse();
            ids
        };
        walk(a) < walk(b)
    }

    /// Extract the path to `dst` from a single-source run.
    pub fn path_to(&self, paths: &ShortestPaths, dst: usize) -> Option<RoutePath> {
        if !paths.dist[dst].is_finite() {
            return None;
        }
        let mut vertices = Vec::new();
        let mut v = dst;
        loop {
            vertices.push(v);
            if v == paths.src {
                break;
            }
            v = paths.pred[v];
        }
        vertices.reverse();
        Some(RoutePath {
            nodes: vertices
                .iter()
                .map(|&i| self.node_ids[i].clone())
                .collect(),
            cost_m: paths.dist[dst],
        })
    }

    pub fn shortest_path(&self, src: usize, dst: usize) -> Option<RoutePath> {
        self.path_to(&self.single_source(src), dst)
    }
}

pub struct ShortestPaths {
    pub src: usize,
    pub dist: Vec<f64>,
    pub pred: Vec<usize>,
}

/// f64 heap key with a total order; costs are always finite and
/// non-negative here.
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
