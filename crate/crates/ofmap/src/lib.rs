//! ofmap — a desk-scale federated mapping infrastructure.
//!
//! Independently operated map servers each hold one map document (an
//! OSM-style model of nodes, ways, and relations bounded by a zone
//! polygon) and expose location-based services over HTTP: geocoding,
//! search, routing, beacon-fingerprint localization, and vector tiles.
//! A DNS-like discovery layer maps hierarchical spatial cells to server
//! records, and a federation client composes answers across servers —
//! stitching multi-zone routes at shared portal nodes, merging search
//! results, and arbitrating localization candidates.
//!
//! # Crate layout
//!
//! - [`model`] — the map document model and validation
//! - [`cells`] — the quadtree spatial index and cell↔domain encoding
//! - [`discovery`] — the record registry, TTL-caching resolver, and the
//!   UDP DNS frontend
//! - [`server`] — one provider's map server: services, auth, HTTP API
//! - [`federation`] — the client: discovery fan-out, ranking, stitching
//! - [`harness`] — scenario runner, centralized oracle, and world
//!   generator
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run -p ofmap --example cells              # spatial index tour
//! cargo run -p ofmap --example discovery          # register + discover
//! cargo run -p ofmap --example dns_frontend       # discovery over real UDP
//! cargo run -p ofmap --example map_server         # one server over HTTP
//! cargo run -p ofmap --example federated_search   # fan-out + merge
//! cargo run -p ofmap --example route_stitching    # cross-zone routing
//! cargo run -p ofmap --example localization       # fingerprints + prior
//! cargo run -p ofmap --example tiles              # tile composition
//! cargo run -p ofmap --example grocery_walkthrough # end-to-end scenario
//! cargo run -p ofmap --example random_world       # generated worlds + oracle
//! ```
//!
//! The `of-sim` binary runs scenario files (optionally diffing every
//! query against a centralized oracle) and generates random worlds; the
//! `of-query` binary issues one-off federated queries against a live
//! deployment.

pub mod api;
pub mod cells;
pub mod clock;
pub mod geom;
pub mod discovery;
pub mod federation;
pub mod harness;
pub mod model;
pub mod server;

pub use cells::{cell_bounds, cell_from_point, cell_to_domain, cover_polygon, domain_to_cell};
pub use cells::{CellBounds, CellError, CellId};
pub use clock::{Clock, SharedClock, SimClock, SystemClock};
pub use geom::Point;
pub use model::{
    load_map_document, registration_polygon, zone_contains, GeoPoint, MapDocument, ModelError,
};
