//! The spatial naming layer: map-server records keyed by cell domains.
//!
//! A zone registers by covering its polygon with spatial cells and storing
//! its [`MapServerRecord`] under each covering cell's domain name. Lookups
//! are exact-name only; the [`resolver`] walks the ancestor chain instead,
//! which keeps storage linear and mirrors how DNS hierarchies are
//! traversed. Multiple records may live at one name — overlapping maps are
//! the normal case, not a conflict.
//!
//! The registry also speaks real DNS over UDP (see [`dns`]) and round-trips
//! through a plain zone file, so any stock resolver infrastructure can serve
//! as the spatial database.

pub mod dns;
pub mod resolver;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cells::{self, CellError};
use crate::model::GeoPoint;

pub use resolver::{Discovered, Resolver};

/// Default cap on covering size at registration.
pub const DEFAULT_MAX_COVER_CELLS: usize = 256;

/// Default TTL for cached empty answers, seconds.
pub const DEFAULT_NEGATIVE_TTL_S: u64 = 30;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("name {name:?} is outside the registry suffix {suffix:?}")]
    NameOutsideSuffix { name: String, suffix: String },
    #[error("resolution failure: {0}")]
    ResolutionFailure(String),
    #[error("malformed record text {0:?}")]
    MalformedRecord(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// One of the six base services a map server can offer.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Geocode,
    ReverseGeocode,
    Search,
    Route,
    Localize,
    Tile,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 6] = [
        ServiceKind::Geocode,
        ServiceKind::ReverseGeocode,
        ServiceKind::Search,
        ServiceKind::Route,
        ServiceKind::Localize,
        ServiceKind::Tile,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            ServiceKind::Geocode => "geocode",
            ServiceKind::ReverseGeocode => "reverse_geocode",
            ServiceKind::Search => "search",
            ServiceKind::Route => "route",
            ServiceKind::Localize => "localize",
            ServiceKind::Tile => "tile",
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ServiceKind {
    type Err = DiscoveryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| DiscoveryError::MalformedRecord(format!("unknown service {s:?}")))
    }
}

/// A discovery record: who serves a region and what they offer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapServerRecord {
    pub server_id: String,
    pub endpoint: String,
    pub services: BTreeSet<ServiceKind>,
    #[serde(default)]
    pub localization_techs: BTreeSet<String>,
    pub priority: i32,
    pub ttl_s: u64,
}

impl MapServerRecord {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        if self.server_id.is_empty() {
            return Err(DiscoveryError::InvalidRecord("empty server_id".into()));
        }
        if self.endpoint.is_empty() {
            return Err(DiscoveryError::InvalidRecord("empty endpoint".into()));
        }
        if self.services.is_empty() {
            return Err(DiscoveryError::InvalidRecord(format!(
                "record {} offers no services",
                self.server_id
            )));
        }
        for field in [&self.server_id, &self.endpoint] {
            if field.contains(';') || field.contains('=') || field.contains('"') {
                return Err(DiscoveryError::InvalidRecord(format!(
                    "{field:?} contains a character reserved by the record text form"
                )));
            }
        }
        for tech in &self.localization_techs {
            if tech.contains(';') || tech.contains(',') || tech.contains('=') {
                return Err(DiscoveryError::InvalidRecord(format!(
                    "localization tech {tech:?} contains a reserved character"
                )));
            }
        }
        Ok(())
    }

    /// Canonical single-string form, also used as TXT RDATA and as the
    /// zone-file right-hand side. The TTL travels in the DNS TTL field,
    /// not in the text.
    pub fn canonical_text(&self) -> String {
        let svc = ServiceKind::ALL
            .iter()
            .filter(|k| self.services.contains(k))
            .map(|k| k.token())
            .collect::<Vec<_>>()
            .join(",");
        let loc = self
            .localization_techs
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "v=of1;id={};ep={};svc={};loc={};pri={}",
            self.server_id, self.endpoint, svc, loc, self.priority
        )
    }

    /// Parse the canonical text form; `ttl_s` comes from the carrier.
    pub fn from_canonical_text(text: &str, ttl_s: u64) -> Result<Self, DiscoveryError> {
        let malformed = || DiscoveryError::MalformedRecord(text.to_string());
        let mut fields = BTreeMap::new();
        for part in text.split(';') {
            let (k, v) = part.split_once('=').ok_or_else(malformed)?;
            fields.insert(k, v);
        }
        if fields.get("v") != Some(&"of1") {
            return Err(malformed());
        }
        let server_id = fields.get("id").ok_or_else(malformed)?.to_string();
        let endpoint = fields.get("ep").ok_or_else(malformed)?.to_string();
        let mut services = BTreeSet::new();
        for token in fields
            .get("svc")
            .ok_or_else(malformed)?
            .split(',')
            .filter(|s| !s.is_empty())
        {
            services.insert(token.parse::<ServiceKind>()?);
        }
        let localization_techs = fields
            .get("loc")
            .ok_or_else(malformed)?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let priority = fields
            .get("pri")
            .ok_or_else(malformed)?
            .parse::<i32>()
            .map_err(|_| malformed())?;
        let rec = Self {
            server_id,
            endpoint,
            services,
            localization_techs,
            priority,
            ttl_s,
        };
        rec.validate()?;
        Ok(rec)
    }
}

/// Split a domain into lowercase labels.
fn labels_of(name: &str) -> Vec<String> {
    name.split('.')
        .filter(|l| !l.is_empty())
        .map(|l| l.to_ascii_lowercase())
        .collect()
}

#[derive(Default)]
struct RegistryNode {
    children: BTreeMap<String, RegistryNode>,
    /// server_id → record. One record per (name, server_id).
    records: BTreeMap<String, MapServerRecord>,
}

/// The hierarchical record store, rooted at a configured suffix.
///
/// Readers run concurrently; writers are mutually excluded. A lookup
/// observes either the pre- or post-write state of a mutation, never a
/// partial one.
pub struct NameRegistry {
    suffix: String,
    suffix_labels: Vec<String>,
    max_cover_cells: usize,
    root: RwLock<RegistryNode>,
}

impl NameRegistry {
    pub fn new(suffix: &str) -> Self {
        Self {
            suffix: suffix.to_ascii_lowercase(),
            suffix_labels: labels_of(suffix),
            max_cover_cells: DEFAULT_MAX_COVER_CELLS,
            root: RwLock::new(RegistryNode::default()),
        }
    }

    pub fn with_max_cover_cells(mut self, max_cells: usize) -> Self {
        self.max_cover_cells = max_cells;
        self
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    /// Tree path from the suffix to `name`, shallowest label first.
    fn relative_path(&self, name: &str) -> Result<Vec<String>, DiscoveryError> {
        let labels = labels_of(name);
        if labels.len() < self.suffix_labels.len()
            || labels[labels.len() - self.suffix_labels.len()..] != self.suffix_labels[..]
        {
            return Err(DiscoveryError::NameOutsideSuffix {
                name: name.to_string(),
                suffix: self.suffix.clone(),
            });
        }
        let mut rel = labels[..labels.len() - self.suffix_labels.len()].to_vec();
        rel.reverse();
        Ok(rel)
    }

    /// Store a record at an exact name. Re-inserting for the same
    /// (name, server_id) replaces the previous record.
    pub fn insert_record(&self, name: &str, record: MapServerRecord) -> Result<(), DiscoveryError> {
        record.validate()?;
        let path = self.relative_path(name)?;
        let mut guard = self.root.write().expect("registry lock");
        let mut node = &mut *guard;
        for label in &path {
            node = node.children.entry(label.clone()).or_default();
        }
        node.records.insert(record.server_id.clone(), record);
        Ok(())
    }

    /// Cover the zone polygon and store the record under every covering
    /// cell's domain. Returns the domains, in cell order. Idempotent per
    /// (server_id, domain).
    pub fn register_zone(
        &self,
        boundary: &[GeoPoint],
        record: MapServerRecord,
        level: u8,
    ) -> Result<Vec<String>, DiscoveryError> {
        record.validate()?;
        let cover = cells::cover_polygon(boundary, level, self.max_cover_cells)?;
        let mut domains = Vec::with_capacity(cover.len());
        for cell in &cover {
            let domain = cells::cell_to_domain(cell, &self.suffix);
            self.insert_record(&domain, record.clone())?;
            domains.push(domain);
        }
        Ok(domains)
    }

    /// Remove every record with this server id. Returns how many names
    /// held one.
    pub fn deregister(&self, server_id: &str) -> usize {
        fn walk(node: &mut RegistryNode, server_id: &str) -> usize {
            let mut removed = usize::from(node.records.remove(server_id).is_some());
            for child in node.children.values_mut() {
                removed += walk(child, server_id);
            }
            removed
        }
        let mut guard = self.root.write().expect("registry lock");
        walk(&mut guard, server_id)
    }

    /// Records stored at exactly `name`. No ancestor walking here — that
    /// is the resolver's job.
    pub fn lookup_records(&self, name: &str) -> Result<Vec<MapServerRecord>, DiscoveryError> {
        let path = self.relative_path(name)?;
        let guard = self.root.read().expect("registry lock");
        let mut node = &*guard;
        for label in &path {
            match node.children.get(label) {
                Some(child) => node = child,
                None => return Ok(Vec::new()),
            }
        }
        Ok(node.records.values().cloned().collect())
    }

    /// Every (domain, records) pair currently stored, sorted
    /// lexicographically by reversed labels.
    pub fn dump(&self) -> Vec<(String, Vec<MapServerRecord>)> {
        fn walk(
            node: &RegistryNode,
            rel: &mut Vec<String>,
            suffix: &str,
            out: &mut Vec<(String, Vec<MapServerRecord>)>,
        ) {
            if !node.records.is_empty() {
                let mut labels: Vec<&str> = rel.iter().map(String::as_str).collect();
                labels.reverse();
                let name = if labels.is_empty() {
                    suffix.to_string()
                } else {
                    format!("{}.{}", labels.join("."), suffix)
                };
                out.push((name, node.records.values().cloned().collect()));
            }
            for (label, child) in &node.children {
                rel.push(label.clone());
                walk(child, rel, suffix, out);
                rel.pop();
            }
        }
        let guard = self.root.read().expect("registry lock");
        let mut out = Vec::new();
        walk(&guard, &mut Vec::new(), &self.suffix, &mut out);
        // BTreeMap traversal yields reversed-label order already, but make
        // the contract explicit.
        out.sort_by_key(|(name, _)| {
            let mut labels = labels_of(name);
            labels.reverse();
            labels
        });
        out
    }

    /// One line per record: `<domain> <ttl> IN TXT "<canonical text>"`.
    pub fn export_zone_file(&self) -> String {
        let mut out = String::new();
        for (name, records) in self.dump() {
            for rec in records {
                out.push_str(&format!(
                    "{} {} IN TXT \"{}\"\n",
                    name,
                    rec.ttl_s,
                    rec.canonical_text()
                ));
            }
        }
        out
    }

    /// Load records from zone-file text into this registry.
    pub fn import_zone_file(&self, text: &str) -> Result<usize, DiscoveryError> {
        let mut count = 0;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let mut parts = line.splitn(5, ' ');
            let (name, ttl, class, rtype, rdata) = (
                parts.next(),
                parts.next(),
                parts.next(),
                parts.next(),
                parts.next(),
            );
            let (Some(name), Some(ttl), Some("IN"), Some("TXT"), Some(rdata)) =
                (name, ttl, class, rtype, rdata)
            else {
                return Err(DiscoveryError::MalformedRecord(line.to_string()));
            };
            let ttl: u64 = ttl
                .parse()
                .map_err(|_| DiscoveryError::MalformedRecord(line.to_string()))?;
            let rdata = rdata
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .ok_or_else(|| DiscoveryError::MalformedRecord(line.to_string()))?;
            let record = MapServerRecord::from_canonical_text(rdata, ttl)?;
            self.insert_record(name, record)?;
            count += 1;
        }
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, priority: i32) -> MapServerRecord {
        MapServerRecord {
            server_id: id.to_string(),
            endpoint: format!("http://127.0.0.1:0/{id}"),
            services: BTreeSet::from([ServiceKind::Search, ServiceKind::Route]),
            localization_techs: BTreeSet::from(["beacon-fingerprint".to_string()]),
            priority,
            ttl_s: 300,
        }
    }

    fn ne_rectangle() -> Vec<GeoPoint> {
        vec![
            GeoPoint::new(10.0, 10.0).unwrap(),
            GeoPoint::new(10.0, 20.0).unwrap(),
            GeoPoint::new(20.0, 20.0).unwrap(),
            GeoPoint::new(20.0, 10.0).unwrap(),
        ]
    }

    #[test]
    fn canonical_text_round_trip() {
        let rec = record("srv1", 2);
        let text = rec.canonical_text();
        assert_eq!(
            text,
            "v=of1;id=srv1;ep=http://127.0.0.1:0/srv1;svc=search,route;loc=beacon-fingerprint;pri=2"
        );
        assert!(!text.contains(' '));
        let parsed = MapServerRecord::from_canonical_text(&text, 300).unwrap();
        assert_eq!(parsed, rec);
    }

    #[test]
    fn malformed_record_text_rejected() {
        assert!(MapServerRecord::from_canonical_text("v=of2;id=a", 0).is_err());
        assert!(MapServerRecord::from_canonical_text("not a record", 0).is_err());
        assert!(
            MapServerRecord::from_canonical_text("v=of1;id=a;ep=e;svc=teleport;loc=;pri=0", 0)
                .is_err()
        );
    }

    #[test]
    fn register_single_cell_zone() {
        let reg = NameRegistry::new("maps.test");
        let domains = reg
            .register_zone(&ne_rectangle(), record("a", 1), 1)
            .unwrap();
        assert_eq!(domains, vec!["3.maps.test".to_string()]);
        let records = reg.lookup_records("3.maps.test").unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].server_id, "a");
    }

    #[test]
    fn registration_is_idempotent() {
        let reg = NameRegistry::new("maps.test");
        reg.register_zone(&ne_rectangle(), record("a", 1), 1).unwrap();
        reg.register_zone(&ne_rectangle(), record("a", 1), 1).unwrap();
        assert_eq!(reg.lookup_records("3.maps.test").unwrap().len(), 1);
    }

    #[test]
    fn overlapping_zones_coexist() {
        let reg = NameRegistry::new("maps.test");
        reg.register_zone(&ne_rectangle(), record("a", 1), 1).unwrap();
        reg.register_zone(&ne_rectangle(), record("b", 2), 1).unwrap();
        let records = reg.lookup_records("3.maps.test").unwrap();
        assert_eq!(records.len(), 2);
    }

    #[test]
    fn lookup_is_exact_name_only() {
        let reg = NameRegistry::new("maps.test");
        reg.register_zone(&ne_rectangle(), record("a", 1), 1).unwrap();
        assert!(reg.lookup_records("0.3.maps.test").unwrap().is_empty());
        assert!(matches!(
            reg.lookup_records("3.other.test"),
            Err(DiscoveryError::NameOutsideSuffix { .. })
        ));
    }

    #[test]
    fn deregister_removes_everywhere() {
        let reg = NameRegistry::new("maps.test");
        reg.register_zone(&ne_rectangle(), record("a", 1), 1).unwrap();
        reg.register_zone(&ne_rectangle(), record("a", 1), 1).unwrap();
        assert_eq!(reg.deregister("a"), 1); // one domain, one record
        assert!(reg.lookup_records("3.maps.test").unwrap().is_empty());
        assert_eq!(reg.deregister("missing"), 0);
    }

    #[test]
    fn zone_file_round_trip() {
        let reg = NameRegistry::new("maps.test");
        reg.register_zone(&ne_rectangle(), record("a", 1), 2).unwrap();
        reg.register_zone(&ne_rectangle(), record("b", 2), 1).unwrap();
        let exported = reg.export_zone_file();
        assert!(exported.contains("IN TXT \"v=of1;id=a;"));

        let other = NameRegistry::new("maps.test");
        let n = other.import_zone_file(&exported).unwrap();
        assert!(n >= 2);
        assert_eq!(other.export_zone_file(), exported);
    }

    #[test]
    fn reversed_label_sort_order() {
        let reg = NameRegistry::new("maps.test");
        reg.insert_record("1.maps.test", record("x", 0)).unwrap();
        reg.insert_record("0.1.maps.test", record("y", 0)).unwrap();
        reg.insert_record("0.maps.test", record("z", 0)).unwrap();
        let names: Vec<String> = reg.dump().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["0.maps.test", "1.maps.test", "0.1.maps.test"]);
    }
}
