//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ofmap::cells::{
    cell_bounds, cell_from_point, cell_to_domain, cover_polygon, domain_to_cell, CellId,
};
use ofmap::clock::{Clock, SharedClock, SimClock};
use ofmap::discovery::{dns, MapServerRecord, NameRegistry, Resolver, ServiceKind};
use ofmap::geom::point_in_polygon;
use ofmap::harness::gen::{gen_random_world, write_world, WorldParams};
use ofmap::harness::{run_scenario, RunOptions};
use ofmap::model::GeoPoint;

fn conclude(name: &str, outcome: Result<(), String>) {
    match outcome {
        Ok(()) => println!("ACCEPTANCE {name}: PASS"),
        Err(e) => {
            println!("ACCEPTANCE {name}: FAIL — {e}");
            panic!("{name}: {e}");
        }
    }
}

fn record(id: &str, ttl_s: u64) -> MapServerRecord {
    MapServerRecord {
        server_id: id.to_string(),
        endpoint: format!("http://127.0.0.1:1/{id}"),
        services: BTreeSet::from([ServiceKind::Search, ServiceKind::Route]),
        localization_techs: BTreeSet::new(),
        priority: 0,
        ttl_s,
    }
}

/// Criterion 1: federated route cost equals merged-graph Dijkstra exactly
/// on 50 seeded worlds with complete portal sets and integral weights,
/// 20 random src/dst pairs each, in under 60 seconds.
#[tokio::test(flavor = "multi_thread")]
async fn route_stitch_optimality() {
    let started = Instant::now();
    let outcome = async {
        for seed in 0..50u64 {
            let params = WorldParams {
                seed,
                zones: 3 + (seed as usize % 4),
                nodes: 100 + ((seed as usize * 83) % 401),
                portal_density: 1.0,
                route_queries: 20,
            };
            let world = gen_random_world(&params);
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let scenario_path = write_world(&world, dir.path()).map_err(|e| e.to_string())?;
            let report = run_scenario(
                &scenario_path,
                &RunOptions {
                    force_oracle: Some(true),
                    ..RunOptions::default()
                },
            )
            .await
            .map_err(|e| e.to_string())?;
            let mut routes = 0;
            for query in report.queries.iter().filter(|q| q.kind == "route") {
                routes += 1;
                if !query.ok {
                    return Err(format!("seed {seed}: route query {} failed", query.index));
                }
                let diff = query
                    .diff
                    .as_ref()
                    .ok_or_else(|| format!("seed {seed}: route query missing oracle diff"))?;
                if !diff.equal {
                    return Err(format!(
                        "seed {seed}: route query {} diverged: {}",
                        query.index, diff.detail
                    ));
                }
            }
            if routes != 20 {
                return Err(format!("seed {seed}: expected 20 route queries, ran {routes}"));
            }
        }
        let elapsed = started.elapsed();
        if elapsed >= Duration::from_secs(60) {
            return Err(format!("runtime {elapsed:?} exceeded the 60 s budget"));
        }
        Ok(())
    }
    .await;
    conclude("1 route-stitch optimality", outcome);
}

/// Criterion 2: every random point inside a registered polygon discovers
/// the owning server (10,000 points per world, 20 worlds, zero misses),
/// and every false positive lies inside a covering cell of the offending
/// record.
#[tokio::test(flavor = "multi_thread")]
async fn discovery_soundness_and_bounded_fuzziness() {
    let outcome = async {
        let level = 14u8;
        for seed in 0..20u64 {
            let world = gen_random_world(&WorldParams {
                seed,
                zones: 3 + (seed as usize % 4),
                nodes: 60,
                portal_density: 1.0,
                route_queries: 0,
            });
            let registry = Arc::new(NameRegistry::new("maps.test"));
            // polygon (as geo points) and covering per server.
            let mut zones: Vec<(String, Vec<GeoPoint>, BTreeSet<CellId>)> = Vec::new();
            for (_, doc) in &world.documents {
                let polygon: Vec<GeoPoint> = doc
                    .boundary
                    .iter()
                    .map(|p| GeoPoint::new(p.y, p.x).unwrap())
                    .collect();
                registry
                    .register_zone(&polygon, record(&doc.map_id, 300), level)
                    .map_err(|e| e.to_string())?;
                let covering = cover_polygon(&polygon, level, 4096).map_err(|e| e.to_string())?;
                zones.push((doc.map_id.clone(), polygon, covering));
            }
            let clock: SharedClock = Arc::new(SimClock::new());
            let resolver = Resolver::in_process(registry, clock);

            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15C0);
            // Soundness: points inside a polygon must discover its server.
            for _ in 0..10_000 {
                let (server_id, polygon, _) = &zones[rng.random_range(0..zones.len())];
                let lat_lo = polygon.iter().map(|p| p.lat).fold(f64::MAX, f64::min);
                let lat_hi = polygon.iter().map(|p| p.lat).fold(f64::MIN, f64::max);
                let lon_lo = polygon.iter().map(|p| p.lon).fold(f64::MAX, f64::min);
                let lon_hi = polygon.iter().map(|p| p.lon).fold(f64::MIN, f64::max);
                let p = GeoPoint::new(
                    rng.random_range(lat_lo..lat_hi),
                    rng.random_range(lon_lo..lon_hi),
                )
                .unwrap();
                let frame_poly: Vec<ofmap::geom::Point> =
                    polygon.iter().map(|g| g.to_point()).collect();
                if !point_in_polygon(p.to_point(), &frame_poly) {
                    continue; // rejection sampling keeps only inside points
                }
                let found = resolver.discover(p, level).await.map_err(|e| e.to_string())?;
                if !found.iter().any(|d| &d.record.server_id == server_id) {
                    return Err(format!(
                        "seed {seed}: point {p} inside {server_id} was not discovered"
                    ));
                }
            }
            // Bounded fuzziness: false positives stay within covering cells.
            for _ in 0..2_000 {
                let p = GeoPoint::new(
                    rng.random_range(39.9..40.2),
                    rng.random_range(-80.1..-79.5),
                )
                .unwrap();
                for d in resolver.discover(p, level).await.map_err(|e| e.to_string())? {
                    let (_, polygon, covering) = zones
                        .iter()
                        .find(|(id, _, _)| id == &d.record.server_id)
                        .expect("discovered server is registered");
                    let frame_poly: Vec<ofmap::geom::Point> =
                        polygon.iter().map(|g| g.to_point()).collect();
                    if point_in_polygon(p.to_point(), &frame_poly) {
                        continue; // true positive
                    }
                    let inside_covering = covering.iter().any(|c| cell_bounds(c).contains(p));
                    if !inside_covering {
                        return Err(format!(
                            "seed {seed}: false positive at {p} for {} lies outside every covering cell",
                            d.record.server_id
                        ));
                    }
                }
            }
        }
        Ok(())
    }
    .await;
    conclude("2 discovery soundness + bounded fuzziness", outcome);
}

/// Criterion 3: prefix nesting, bounds containment, domain-encoding
/// round trips, and covering soundness, with zero violations.
#[test]
fn cell_index_properties() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let p = GeoPoint::new(
                rng.random_range(-90.0..=90.0),
                rng.random_range(-180.0..180.0),
            )
            .unwrap();
            let a = rng.random_range(0..=24u8);
            let b = rng.random_range(a..=24u8);
            let ca = cell_from_point(p, a).map_err(|e| e.to_string())?;
            let cb = cell_from_point(p, b).map_err(|e| e.to_string())?;
            if !ca.is_ancestor_or_self_of(&cb) {
                return Err(format!("nesting violated at {p} levels {a}/{b}"));
            }
            if !cell_bounds(&cb).contains(p) {
                return Err(format!("bounds containment violated at {p} level {b}"));
            }
        }
        for _ in 0..1_000 {
            let level = rng.random_range(0..=24usize);
            let digits: Vec<u8> = (0..level).map(|_| rng.random_range(0..4u8)).collect();
            let cell = CellId::new(digits).map_err(|e| e.to_string())?;
            let domain = cell_to_domain(&cell, "maps.test");
            let back = domain_to_cell(&domain, "maps.test").map_err(|e| e.to_string())?;
            if back != cell {
                return Err(format!("domain round trip failed for {cell}"));
            }
        }
        // Covering soundness, sampled: every inside point's cell has an
        // ancestor-or-self in the covering.
        for round in 0..10 {
            let lat0 = rng.random_range(-60.0..50.0);
            let lon0 = rng.random_range(-170.0..160.0);
            let dlat = rng.random_range(0.5..4.0);
            let dlon = rng.random_range(0.5..4.0);
            let poly = vec![
                GeoPoint::new(lat0, lon0).unwrap(),
                GeoPoint::new(lat0, lon0 + dlon).unwrap(),
                GeoPoint::new(lat0 + dlat, lon0 + dlon).unwrap(),
                GeoPoint::new(lat0 + dlat, lon0).unwrap(),
            ];
            let level = rng.random_range(4..=8u8);
            let covering = cover_polygon(&poly, level, 4096).map_err(|e| e.to_string())?;
            let mut checked = 0;
            while checked < 1_000 {
                let p = GeoPoint::new(
                    rng.random_range(lat0 - 0.5..lat0 + dlat + 0.5),
                    rng.random_range(lon0 - 0.5..lon0 + dlon + 0.5),
                )
                .unwrap();
                let frame_poly: Vec<ofmap::geom::Point> =
                    poly.iter().map(|g| g.to_point()).collect();
                if !point_in_polygon(p.to_point(), &frame_poly) {
                    continue;
                }
                checked += 1;
                let cell = cell_from_point(p, level).map_err(|e| e.to_string())?;
                if !covering.iter().any(|c| c.is_ancestor_or_self_of(&cell)) {
                    return Err(format!("round {round}: covering misses {p}"));
                }
            }
        }
        Ok(())
    })();
    conclude("3 cell-index properties", outcome);
}

/// Criterion 4: an independent DNS implementation (hickory-proto) decodes
/// the UDP frontend's answers to exactly what lookup_records returns, and
/// the NXDOMAIN / NOTIMP paths behave per contract.
#[tokio::test(flavor = "multi_thread")]
async fn dns_interop_against_independent_client() {
    use hickory_proto::op::{Message, MessageType, OpCode, ResponseCode};
    use hickory_proto::rr::rdata::TXT;
    use hickory_proto::rr::{Name, RData, RecordType};
    use std::str::FromStr;

    async fn hickory_exchange(
        server: std::net::SocketAddr,
        name: &str,
        rtype: RecordType,
    ) -> Result<Message, String> {
        let mut query = Message::query();
        query.add_query(hickory_proto::op::Query::query(
            Name::from_str(&format!("{name}.")).map_err(|e| e.to_string())?,
            rtype,
        ));
        let bytes = query.to_vec().map_err(|e| e.to_string())?;
        let raw = dns::exchange(server, &bytes).await.map_err(|e| e.to_string())?;
        let response = Message::from_vec(&raw).map_err(|e| e.to_string())?;
        if response.metadata.id != query.metadata.id {
            return Err("response id mismatch".into());
        }
        if response.metadata.message_type != MessageType::Response {
            return Err("not a response".into());
        }
        if response.metadata.op_code != OpCode::Query {
            return Err("unexpected opcode".into());
        }
        Ok(response)
    }

    let outcome = async {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let registry = Arc::new(NameRegistry::new("maps.test"));
        let mut names = BTreeSet::new();
        while names.len() < 100 {
            let level = rng.random_range(0..=24usize);
            let digits: Vec<u8> = (0..level).map(|_| rng.random_range(0..4u8)).collect();
            let cell = CellId::new(digits).map_err(|e| e.to_string())?;
            let name = cell_to_domain(&cell, "maps.test");
            let copies = rng.random_range(1..=3usize);
            for i in 0..copies {
                registry
                    .insert_record(&name, record(&format!("srv-{}-{i}", names.len()), 60 + i as u64))
                    .map_err(|e| e.to_string())?;
            }
            names.insert(name);
        }
        let frontend = dns::serve_dns(registry.clone(), "127.0.0.1:0".parse().unwrap())
            .await
            .map_err(|e| e.to_string())?;

        for name in &names {
            let response = hickory_exchange(frontend.addr, name, RecordType::TXT).await?;
            if response.metadata.response_code != ResponseCode::NoError {
                return Err(format!("{name}: rcode {:?}", response.metadata.response_code));
            }
            let mut decoded: Vec<(String, u64)> = response
                .answers
                .iter()
                .map(|answer| {
                    let RData::TXT(TXT { txt_data, .. }) = &answer.rdata else {
                        return Err(format!("{name}: non-TXT answer"));
                    };
                    let text: String = txt_data
                        .iter()
                        .map(|part| String::from_utf8_lossy(part).to_string())
                        .collect();
                    Ok((text, answer.ttl as u64))
                })
                .collect::<Result<_, _>>()?;
            decoded.sort();
            let mut expected: Vec<(String, u64)> = registry
                .lookup_records(name)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|r| (r.canonical_text(), r.ttl_s))
                .collect();
            expected.sort();
            if decoded != expected {
                return Err(format!("{name}: decoded records differ from lookup_records"));
            }
        }

        // NXDOMAIN for a name that holds no records.
        let mut unused = String::from("0.0.0.0.0.0.0.0.0.0.0.0.0.maps.test");
        while names.contains(&unused) {
            unused = format!("1.{unused}");
        }
        let response = hickory_exchange(frontend.addr, &unused, RecordType::TXT).await?;
        if response.metadata.response_code != ResponseCode::NXDomain {
            return Err(format!(
                "expected NXDOMAIN for {unused}, got {:?}",
                response.metadata.response_code
            ));
        }
        if !response.answers.is_empty() {
            return Err("NXDOMAIN answer carried records".into());
        }

        // NOTIMP for an unsupported query type.
        let some_name = names.iter().next().expect("names generated");
        let response = hickory_exchange(frontend.addr, some_name, RecordType::A).await?;
        if response.metadata.response_code != ResponseCode::NotImp {
            return Err(format!(
                "expected NOTIMP for an A query, got {:?}",
                response.metadata.response_code
            ));
        }
        Ok(())
    }
    .await;
    conclude("4 DNS interop (independent decoder)", outcome);
}

/// Criterion 5: with the simulated clock, a registry mutation is
/// invisible through the resolver strictly before TTL expiry and visible
/// strictly after, across 100 randomized (ttl, probe-time) cases.
#[tokio::test(flavor = "multi_thread")]
async fn resolver_cache_semantics() {
    let outcome = async {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..100u32 {
            let ttl_s = rng.random_range(2..600u64);
            let registry = Arc::new(NameRegistry::new("maps.test"));
            let poly = vec![
                GeoPoint::new(10.0, 10.0).unwrap(),
                GeoPoint::new(10.0, 20.0).unwrap(),
                GeoPoint::new(20.0, 20.0).unwrap(),
                GeoPoint::new(20.0, 10.0).unwrap(),
            ];
            registry
                .register_zone(&poly, record("a", ttl_s), 1)
                .map_err(|e| e.to_string())?;
            let clock = Arc::new(SimClock::new());
            // Lookups may start at an arbitrary time, not only zero.
            clock.advance(Duration::from_secs(rng.random_range(0..10_000)));
            let resolver = Resolver::in_process(registry.clone(), clock.clone());

            let filled_at = clock.now();
            let before = resolver.lookup("3.maps.test").await.map_err(|e| e.to_string())?;
            if before.len() != 1 {
                return Err(format!("case {case}: expected one record before mutation"));
            }
            // Mutate at a random time strictly inside the TTL window.
            let mutate_after = rng.random_range(0..ttl_s);
            clock.set(filled_at + Duration::from_secs(mutate_after));
            registry.deregister("a");

            // Probe strictly before expiry.
            let probe = rng.random_range(mutate_after..ttl_s);
            clock.set(filled_at + Duration::from_secs(probe));
            let hidden = resolver.lookup("3.maps.test").await.map_err(|e| e.to_string())?;
            if hidden.len() != 1 {
                return Err(format!(
                    "case {case}: mutation leaked through the cache {}s before expiry",
                    ttl_s - probe
                ));
            }
            // Probe strictly after expiry.
            clock.set(filled_at + Duration::from_secs(ttl_s + 1));
            let visible = resolver.lookup("3.maps.test").await.map_err(|e| e.to_string())?;
            if !visible.is_empty() {
                return Err(format!("case {case}: stale records after expiry"));
            }
        }
        Ok(())
    }
    .await;
    conclude("5 resolver cache semantics", outcome);
}

/// Criterion 6: on split datasets, federated search ordering and
/// federated tile feature sets equal the centralized oracle's, exactly.
#[tokio::test(flavor = "multi_thread")]
async fn federated_equals_centralized_for_search_and_tiles() {
    let outcome = async {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        // One physical region, two providers, disjoint node sets.
        let (lat0, lon0, span) = (40.0, -80.0, 0.08);
        let kinds = ["cafe", "fuel", "parts"];
        let mut docs = Vec::new();
        for half in 0..2 {
            let map_id = format!("half{half}");
            let nodes: Vec<serde_json::Value> = (0..12)
                .map(|i| {
                    serde_json::json!({
                        "id": format!("{map_id}:n{i}"),
                        "x": lon0 + rng.random_range(0.1..0.9) * span,
                        "y": lat0 + rng.random_range(0.1..0.9) * span,
                        "tags": {
                            "name": format!("poi-{half}-{i}"),
                            "kind": kinds[rng.random_range(0..kinds.len())],
                        },
                    })
                })
                .collect();
            let node_ids: Vec<String> = (0..12).map(|i| format!("{map_id}:n{i}")).collect();
            let ways: Vec<serde_json::Value> = node_ids
                .windows(2)
                .enumerate()
                .map(|(i, pair)| {
                    serde_json::json!({
                        "id": format!("{map_id}:w{i}"),
                        "nodes": [pair[0], pair[1]],
                        "tags": {},
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "map_id": map_id,
                "frame": {"frame_id": "geo"},
                "address_prefix": format!("SPLIT/{map_id}"),
                "boundary": [
                    [lon0, lat0],
                    [lon0 + span, lat0],
                    [lon0 + span, lat0 + span],
                    [lon0, lat0 + span]
                ],
                "nodes": nodes,
                "ways": ways,
                "relations": [],
            });
            let path = dir.path().join(format!("{map_id}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap())
                .map_err(|e| e.to_string())?;
            docs.push(doc);
        }

        let center_lat = lat0 + span / 2.0;
        let center_lon = lon0 + span / 2.0;
        let cell14 = cell_from_point(GeoPoint::new(center_lat, center_lon).unwrap(), 14)
            .map_err(|e| e.to_string())?;
        let cell12 = cell14.ancestor_at(12).expect("coarser ancestor");
        let scenario = serde_json::json!({
            "suffix": "maps.test",
            "registration_level": 14,
            "weight_rounding": "whole_meters",
            "oracle": true,
            "servers": [
                {"map_path": "half0.json", "server_id": "half0",
                 "services": ["search", "tile"], "priority": 1, "ttl_s": 300},
                {"map_path": "half1.json", "server_id": "half1",
                 "services": ["search", "tile"], "priority": 2, "ttl_s": 300}
            ],
            "queries": [
                {"type": "search", "keywords": ["cafe"],
                 "lat": center_lat, "lon": center_lon, "radius_m": 50000.0},
                {"type": "search", "keywords": ["fuel", "parts"],
                 "lat": center_lat, "lon": center_lon, "radius_m": 50000.0},
                {"type": "tiles", "cells": [cell14.token()]},
                {"type": "tiles", "cells": [cell12.token(), cell14.token()]}
            ]
        });
        let scenario_path = dir.path().join("scenario.json");
        std::fs::write(
            &scenario_path,
            serde_json::to_string_pretty(&scenario).unwrap(),
        )
        .map_err(|e| e.to_string())?;

        let report = run_scenario(&scenario_path, &RunOptions::default())
            .await
            .map_err(|e| e.to_string())?;
        for query in &report.queries {
            if !query.ok {
                return Err(format!("query {} ({}) failed", query.index, query.kind));
            }
            let diff = query
                .diff
                .as_ref()
                .ok_or_else(|| format!("query {} missing oracle diff", query.index))?;
            if !diff.equal {
                return Err(format!(
                    "query {} ({}) diverged: {}",
                    query.index, query.kind, diff.detail
                ));
            }
            // The comparisons must not be vacuous.
            if query.kind == "search" {
                let hits = query.output["hits"].as_array().unwrap();
                if hits.is_empty() {
                    return Err(format!("query {}: no search hits", query.index));
                }
                let maps: BTreeSet<&str> = hits
                    .iter()
                    .map(|h| h["map_id"].as_str().unwrap())
                    .collect();
                if maps.len() < 2 {
                    return Err(format!(
                        "query {}: hits came from one server only; dataset not split",
                        query.index
                    ));
                }
            }
            if query.kind == "tiles" && query.output["geo"].as_array().unwrap().is_empty() {
                return Err(format!("query {}: empty tile composition", query.index));
            }
        }
        Ok(())
    }
    .await;
    conclude("6 federated = centralized (search, tiles)", outcome);
}

/// Criterion 7: the packaged grocery walkthrough — search served only by
/// the grocery map, a two-leg route joined at the storefront portal, and
/// localization switching providers as the cues change.
#[tokio::test(flavor = "multi_thread")]
async fn grocery_walkthrough() {
    let outcome = async {
        let scenario = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("scenarios/grocery/scenario.json");
        let report = run_scenario(&scenario, &RunOptions::default())
            .await
            .map_err(|e| e.to_string())?;
        if !report.ok {
            return Err(format!("scenario violations: {:?}", report.violations));
        }

        // (a) The seaweed search hit is served only by the grocery map.
        let search = report
            .queries
            .iter()
            .find(|q| q.kind == "search")
            .ok_or("no search query in the report")?;
        let hits = search.output["hits"].as_array().unwrap();
        if hits.is_empty() {
            return Err("seaweed search returned nothing".into());
        }
        if !hits.iter().all(|h| h["map_id"] == "grocery1") {
            return Err(format!("seaweed hits leaked beyond the grocery map: {hits:?}"));
        }

        // (b) Street→shelf is a two-leg stitch joined at the storefront.
        let route = report
            .queries
            .iter()
            .find(|q| q.kind == "route")
            .ok_or("no route query in the report")?;
        let legs = route.output["legs"].as_array().unwrap();
        if legs.len() != 2 {
            return Err(format!("expected 2 legs, got {}", legs.len()));
        }
        if legs[0]["map_id"] != "street" || legs[1]["map_id"] != "grocery1" {
            return Err(format!("unexpected leg maps: {legs:?}"));
        }
        let street_end = legs[0]["path"]["nodes"].as_array().unwrap().last().unwrap();
        let grocery_start = legs[1]["path"]["nodes"].as_array().unwrap().first().unwrap();
        if street_end != "pgh:storefront" || grocery_start != "pgh:storefront" {
            return Err(format!(
                "legs do not join at the storefront portal: {street_end} / {grocery_start}"
            ));
        }
        if legs[0]["frame_id"] != "geo" || legs[1]["frame_id"] != "grocery1-floor" {
            return Err("leg frames are wrong".into());
        }

        // (c) Localization switches source maps as the cues change.
        let sources: Vec<&str> = report
            .queries
            .iter()
            .filter(|q| q.kind == "localize")
            .map(|q| q.output["map_id"].as_str().unwrap())
            .collect();
        if sources != vec!["street", "grocery1"] {
            return Err(format!("localization sources were {sources:?}"));
        }
        Ok(())
    }
    .await;
    conclude("7 grocery walkthrough", outcome);
}

/// Criterion 8: the full 4-mode × 6-service auth matrix over HTTP (48
/// assertions), including open tiles beside restricted localization.
#[tokio::test(flavor = "multi_thread")]
async fn auth_matrix() {
    use ofmap::model::MapDocument;
    use ofmap::server::http::spawn_server;
    use ofmap::server::{AuthMode, AuthPolicy, BeaconFingerprint, MapServer, ServerConfig};

    fn test_doc() -> MapDocument {
        let doc = serde_json::json!({
            "map_id": "authmap",
            "frame": {"frame_id": "geo"},
            "address_prefix": "AUTH",
            "boundary": [[-80.0, 40.0], [-79.9, 40.0], [-79.9, 40.1], [-80.0, 40.1]],
            "nodes": [
                {"id": "authmap:n1", "x": -79.95, "y": 40.05,
                 "tags": {"addr": "Desk 1", "kind": "desk"}},
                {"id": "authmap:n2", "x": -79.951, "y": 40.05, "tags": {}}
            ],
            "ways": [{"id": "authmap:w1", "nodes": ["authmap:n1", "authmap:n2"], "tags": {}}],
            "relations": []
        });
        MapDocument::from_json(&doc.to_string()).unwrap()
    }

    #[derive(Clone, Copy)]
    struct Case {
        service: ServiceKind,
        method: &'static str,
        path: &'static str,
        body: &'static str,
    }
    const CASES: [Case; 6] = [
        Case {
            service: ServiceKind::Geocode,
            method: "POST",
            path: "/v1/geocode",
            body: r#"{"address": "Desk 1"}"#,
        },
        Case {
            service: ServiceKind::ReverseGeocode,
            method: "POST",
            path: "/v1/reverse_geocode",
            body: r#"{"x": -79.95, "y": 40.05, "radius_m": 100.0}"#,
        },
        Case {
            service: ServiceKind::Search,
            method: "POST",
            path: "/v1/search",
            body: r#"{"keywords": ["desk"], "x": -79.95, "y": 40.05, "radius_m": 100.0}"#,
        },
        Case {
            service: ServiceKind::Route,
            method: "POST",
            path: "/v1/route",
            body: r#"{"src": {"node": "authmap:n1"}, "dst": {"node": "authmap:n2"}}"#,
        },
        Case {
            service: ServiceKind::Localize,
            method: "POST",
            path: "/v1/localize",
            body: r#"{"beacon_rssi": {"b1": -40.0}}"#,
        },
        Case {
            service: ServiceKind::Tile,
            method: "GET",
            path: "/v1/tile/2",
            body: "",
        },
    ];

    async fn call(
        http: &reqwest::Client,
        endpoint: &str,
        case: &Case,
        user: Option<&str>,
        app: Option<&str>,
    ) -> (u16, serde_json::Value) {
        let url = format!("{endpoint}{}", case.path);
        let mut req = if case.method == "GET" {
            http.get(&url)
        } else {
            http.post(&url)
                .header("content-type", "application/json")
                .body(case.body)
        };
        if let Some(u) = user {
            req = req.header("X-OF-User", u);
        }
        if let Some(a) = app {
            req = req.header("X-OF-App", a);
        }
        let resp = req.send().await.expect("request");
        let status = resp.status().as_u16();
        let body: serde_json::Value = resp.json().await.unwrap_or(serde_json::Value::Null);
        (status, body)
    }

    let outcome = async {
        let http = reqwest::Client::new();
        let modes = [
            (AuthMode::Open, "open"),
            (AuthMode::User, "user"),
            (AuthMode::Service, "service"),
            (AuthMode::Application, "application"),
        ];
        let mut assertions = 0;
        for (mode, expected_check) in modes {
            let mut config = ServerConfig::open("authsrv", ServiceKind::ALL);
            config.fingerprints = vec![BeaconFingerprint {
                x: -79.95,
                y: 40.05,
                rssi: BTreeMap::from([("b1".to_string(), -40.0)]),
            }];
            let policy = AuthPolicy {
                mode,
                allowed_users: BTreeSet::from(["u1".to_string()]),
                allowed_apps: BTreeSet::from(["app1".to_string()]),
            };
            for service in ServiceKind::ALL {
                config.auth.insert(service, policy.clone());
            }
            let core = Arc::new(MapServer::new(test_doc(), config).map_err(|e| e.to_string())?);
            let server = spawn_server(core, "127.0.0.1:0".parse().unwrap())
                .await
                .map_err(|e| e.to_string())?;

            for case in &CASES {
                // Allowed credentials for this mode.
                let (user, app) = match mode {
                    AuthMode::Open => (None, None),
                    AuthMode::User | AuthMode::Service => (Some("u1"), None),
                    AuthMode::Application => (None, Some("app1")),
                };
                let (status, body) = call(&http, &server.endpoint, case, user, app).await;
                if status != 200 {
                    return Err(format!(
                        "{expected_check}/{}: allowed case got {status}: {body}",
                        case.service
                    ));
                }
                assertions += 1;

                // Denied (or, for open, absent) credentials.
                let (user, app) = match mode {
                    AuthMode::Open => (None, None),
                    AuthMode::User | AuthMode::Service => (Some("u2"), Some("app1")),
                    AuthMode::Application => (Some("u1"), Some("rogue")),
                };
                let (status, body) = call(&http, &server.endpoint, case, user, app).await;
                match mode {
                    AuthMode::Open => {
                        if status != 200 {
                            return Err(format!(
                                "open/{}: anonymous case got {status}",
                                case.service
                            ));
                        }
                    }
                    _ => {
                        if status != 403 {
                            return Err(format!(
                                "{expected_check}/{}: denied case got {status}: {body}",
                                case.service
                            ));
                        }
                        if body["reason"] != expected_check {
                            return Err(format!(
                                "{expected_check}/{}: deny reason was {}",
                                case.service, body["reason"]
                            ));
                        }
                    }
                }
                assertions += 1;
            }
        }
        if assertions != 48 {
            return Err(format!("expected 48 assertions, made {assertions}"));
        }

        // Tiles open while localization is user-restricted.
        let mut config = ServerConfig::open("mixed", ServiceKind::ALL);
        config.fingerprints = vec![BeaconFingerprint {
            x: -79.95,
            y: 40.05,
            rssi: BTreeMap::from([("b1".to_string(), -40.0)]),
        }];
        config.auth.insert(ServiceKind::Tile, AuthPolicy::open());
        config.auth.insert(
            ServiceKind::Localize,
            AuthPolicy {
                mode: AuthMode::User,
                allowed_users: BTreeSet::from(["u1".to_string()]),
                allowed_apps: BTreeSet::new(),
            },
        );
        let core = Arc::new(MapServer::new(test_doc(), config).map_err(|e| e.to_string())?);
        let server = spawn_server(core, "127.0.0.1:0".parse().unwrap())
            .await
            .map_err(|e| e.to_string())?;
        let tile = &CASES[5];
        let localize = &CASES[4];
        let (status, _) = call(&http, &server.endpoint, tile, None, None).await;
        if status != 200 {
            return Err(format!("open tile denied: {status}"));
        }
        let (status, body) = call(&http, &server.endpoint, localize, Some("u2"), None).await;
        if status != 403 || body["reason"] != "user" {
            return Err(format!("restricted localize not denied properly: {status} {body}"));
        }
        let (status, _) = call(&http, &server.endpoint, localize, Some("u1"), None).await;
        if status != 200 {
            return Err(format!("allowed localize denied: {status}"));
        }
        Ok(())
    }
    .await;
    conclude("8 auth matrix (4 modes × 6 services)", outcome);
}
