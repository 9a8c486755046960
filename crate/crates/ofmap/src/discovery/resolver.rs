//! TTL-caching resolver and walk-up discovery.
//!
//! Discovery is read-dominated, so answers are cached per name for the
//! record TTL; empty answers are cached too (negative caching). A cached
//! entry is served strictly before its expiry and refreshed at or after
//! it, so registry mutations become visible exactly when the TTL runs out.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::cells;
use crate::clock::SharedClock;
use crate::model::GeoPoint;

use super::{dns, DiscoveryError, MapServerRecord, NameRegistry, DEFAULT_NEGATIVE_TTL_S};

/// A record returned by discovery, with the level it was found at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discovered {
    pub record: MapServerRecord,
    /// Level of the cell domain the record was found under. Deeper hits
    /// are more specific.
    pub depth: u8,
}

enum Backend {
    /// Direct reads from an in-process registry.
    Local(Arc<NameRegistry>),
    /// TXT queries against a DNS wire frontend.
    Dns(SocketAddr),
}

struct CacheEntry {
    records: Vec<MapServerRecord>,
    expires_at: Duration,
}

/// Resolves cell domains to map-server records, cache first.
pub struct Resolver {
    backend: Backend,
    suffix: String,
    cache: Mutex<HashMap<String, CacheEntry>>,
    clock: SharedClock,
    negative_ttl: Duration,
}

impl Resolver {
    pub fn in_process(registry: Arc<NameRegistry>, clock: SharedClock) -> Self {
        let suffix = registry.suffix().to_string();
        Self {
            backend: Backend::Local(registry),
            suffix,
            cache: Mutex::new(HashMap::new()),
            clock,
            negative_ttl: Duration::from_secs(DEFAULT_NEGATIVE_TTL_S),
        }
    }

    pub fn over_dns(server: SocketAddr, suffix: &str, clock: SharedClock) -> Self {
        Self {
            backend: Backend::Dns(server),
            suffix: suffix.to_ascii_lowercase(),
            cache: Mutex::new(HashMap::new()),
            clock,
            negative_ttl: Duration::from_secs(DEFAULT_NEGATIVE_TTL_S),
        }
    }

    pub fn with_negative_ttl(mut self, ttl: Duration) -> Self {
        self.negative_ttl = ttl;
        self
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("resolver cache lock").clear();
    }

    /// Look up one exact name, serving from cache when fresh.
    pub async fn lookup(&self, name: &str) -> Result<Vec<MapServerRecord>, DiscoveryError> {
        let now = self.clock.now();
        if let Some(entry) = self.cache.lock().expect("resolver cache lock").get(name) {
            if now < entry.expires_at {
                return Ok(entry.records.clone());
            }
        }
        let records = match &self.backend {
            Backend::Local(registry) => registry.lookup_records(name)?,
            Backend::Dns(server) => dns::resolve_txt(*server, name).await?,
        };
        let ttl = records
            .iter()
            .map(|r| Duration::from_secs(r.ttl_s))
            .min()
            .unwrap_or(self.negative_ttl);
        self.cache.lock().expect("resolver cache lock").insert(
            name.to_string(),
            CacheEntry {
                records: records.clone(),
                expires_at: now + ttl,
            },
        );
        Ok(records)
    }

    /// Walk-up discovery: query the point's cell domain at `level` and
    /// every ancestor down to the world cell, deduplicate by server id
    /// keeping the deepest hit, and rank by (depth desc, priority asc,
    /// server_id asc).
    pub async fn discover(
        &self,
        p: GeoPoint,
        level: u8,
    ) -> Result<Vec<Discovered>, DiscoveryError> {
        let mut seen: HashMap<String, Discovered> = HashMap::new();
        for l in (0..=level).rev() {
            let cell = cells::cell_from_point(p, l)?;
            let name = cells::cell_to_domain(&cell, &self.suffix);
            for record in self.lookup(&name).await? {
                seen.entry(record.server_id.clone())
                    .or_insert(Discovered { record, depth: l });
            }
        }
        let mut out: Vec<Discovered> = seen.into_values().collect();
        out.sort_by(|a, b| {
            b.depth
                .cmp(&a.depth)
                .then(a.record.priority.cmp(&b.record.priority))
                .then(a.record.server_id.cmp(&b.record.server_id))
        });
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::clock::SimClock;
    use crate::discovery::ServiceKind;

    fn record(id: &str, priority: i32, ttl_s: u64) -> MapServerRecord {
        MapServerRecord {
            server_id: id.to_string(),
            endpoint: format!("http://127.0.0.1:0/{id}"),
            services: BTreeSet::from([ServiceKind::Search]),
            localization_techs: BTreeSet::new(),
            priority,
            ttl_s,
        }
    }

    fn rect(lat0: f64, lat1: f64, lon0: f64, lon1: f64) -> Vec<GeoPoint> {
        vec![
            GeoPoint::new(lat0, lon0).unwrap(),
            GeoPoint::new(lat0, lon1).unwrap(),
            GeoPoint::new(lat1, lon1).unwrap(),
            GeoPoint::new(lat1, lon0).unwrap(),
        ]
    }

    #[tokio::test]
    async fn discover_finds_registered_zone() {
        let registry = Arc::new(NameRegistry::new("maps.test"));
        registry
            .register_zone(&rect(10.0, 20.0, 10.0, 20.0), record("a", 1, 300), 4)
            .unwrap();
        let clock: SharedClock = Arc::new(SimClock::new());
        let resolver = Resolver::in_process(registry, clock);

        let inside = GeoPoint::new(15.0, 15.0).unwrap();
        let hits = resolver.discover(inside, 4).await.unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.server_id, "a");
        assert_eq!(hits[0].depth, 4);

        let far = GeoPoint::new(-50.0, -120.0).unwrap();
        assert!(resolver.discover(far, 4).await.unwrap().is_empty());
    }

    #[tokio::test]
    async fn ranking_depth_then_priority() {
        let registry = Arc::new(NameRegistry::new("maps.test"));
        // Same polygon, same depth, different priorities.
        let poly = rect(10.0, 20.0, 10.0, 20.0);
        registry.register_zone(&poly, record("p2", 2, 300), 1).unwrap();
        registry.register_zone(&poly, record("p1", 1, 300), 1).unwrap();
        // A deeper, more specific registration wins the ranking.
        registry
            .register_zone(&rect(14.0, 16.0, 14.0, 16.0), record("deep", 9, 300), 4)
            .unwrap();
        let clock: SharedClock = Arc::new(SimClock::new());
        let resolver = Resolver::in_process(registry, clock);

        let ids: Vec<String> = resolver
            .discover(GeoPoint::new(15.0, 15.0).unwrap(), 4)
            .await
            .unwrap()
            .into_iter()
            .map(|d| d.record.server_id)
            .collect();
        assert_eq!(ids, vec!["deep", "p1", "p2"]);
    }

    #[tokio::test]
    async fn cache_hides_mutations_until_expiry() {
        let registry = Arc::new(NameRegistry::new("maps.test"));
        let poly = rect(10.0, 20.0, 10.0, 20.0);
        registry.register_zone(&poly, record("a", 1, 60), 1).unwrap();

        let clock = Arc::new(SimClock::new());
        let resolver = Resolver::in_process(registry.clone(), clock.clone());

        assert_eq!(resolver.lookup("3.maps.test").await.unwrap().len(), 1);
        registry.deregister("a");

        // Strictly before expiry the cache still answers with the old state.
        clock.advance(Duration::from_secs(59));
        assert_eq!(resolver.lookup("3.maps.test").await.unwrap().len(), 1);

        // Strictly after expiry the mutation is visible.
        clock.advance(Duration::from_secs(2));
        assert!(resolver.lookup("3.maps.test").await.unwrap().is_empty());
    }

    #[tokio::test]
    async fn negative_answers_are_cached() {
        let registry = Arc::new(NameRegistry::new("maps.test"));
        let clock = Arc::new(SimClock::new());
        let resolver = Resolver::in_process(registry.clone(), clock.clone())
            .with_negative_ttl(Duration::from_secs(30));

        assert!(resolver.lookup("3.maps.test").await.unwrap().is_empty());
        registry
            .register_zone(&rect(10.0, 20.0, 10.0, 20.0), record("a", 1, 300), 1)
            .unwrap();

        clock.advance(Duration::from_secs(29));
        assert!(resolver.lookup("3.maps.test").await.unwrap().is_empty());

        clock.advance(Duration::from_secs(2));
        assert_eq!(resolver.lookup("3.maps.test").await.unwrap().len(), 1);
    }
}
