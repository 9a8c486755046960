//! Hierarchical spatial index: a plate-carrée quadtree over lat/lon.
//!
//! A cell is identified by its digit path from the world cell. Each digit
//! picks a quadrant: `0` SW, `1` SE, `2` NW, `3` NE (bit 1 = north half,
//! bit 0 = east half, midpoint ties go north/east). Level 0 is the whole
//! world; the maximum level is 24, about 2.1 m of longitude at the equator.
//!
//! Cells double as DNS names: one label per digit, deepest level leftmost,
//! so the DNS suffix hierarchy mirrors spatial containment. The cell with
//! digits `[3, 2, 0]` under the suffix `maps.test` is `0.2.3.maps.test`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Point, Rect};
use crate::model::GeoPoint;

/// Deepest supported level.
pub const MAX_LEVEL: u8 = 24;

#[derive(Debug, Error)]
pub enum CellError {
    #[error("level {0} out of range 0..={MAX_LEVEL}")]
    LevelOutOfRange(u32),
    #[error("normalized covering has {cells} cells, more than the {max_cells} allowed; lower the level")]
    CoverTooLarge { cells: usize, max_cells: usize },
    #[error("malformed cell domain {0:?}")]
    MalformedCellDomain(String),
}

/// A quadtree cell, as the digit path from the world cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId {
    digits: Vec<u8>,
}

impl CellId {
    /// The level-0 world cell.
    pub fn world() -> Self {
        Self { digits: Vec::new() }
    }

    pub fn new(digits: Vec<u8>) -> Result<Self, CellError> {
        if digits.len() > MAX_LEVEL as usize {
            return Err(CellError::LevelOutOfRange(digits.len() as u32));
        }
        if let Some(bad) = digits.iter().find(|d| **d > 3) {
            return Err(CellError::MalformedCellDomain(format!("digit {bad}")));
        }
        Ok(Self { digits })
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    pub fn level(&self) -> u8 {
        self.digits.len() as u8
    }

    pub fn parent(&self) -> Option<Self> {
        if self.digits.is_empty() {
            None
        } else {
            Some(Self {
                digits: self.digits[..self.digits.len() - 1].to_vec(),
            })
        }
    }

    pub fn child(&self, digit: u8) -> Result<Self, CellError> {
        let mut digits = self.digits.clone();
        digits.push(digit);
        Self::new(digits)
    }

    /// Ancestor at `level`, or self when `level` is this cell's level.
    pub fn ancestor_at(&self, level: u8) -> Option<Self> {
        if level as usize > self.digits.len() {
            return None;
        }
        Some(Self {
            digits: self.digits[..level as usize].to_vec(),
        })
    }

    pub fn is_ancestor_or_self_of(&self, other: &CellId) -> bool {
        other.digits.starts_with(&self.digits)
    }

    /// Digit-string form used by the CLI and tile paths: `"320"`, empty
    /// string for the world cell.
    pub fn token(&self) -> String {
        self.digits.iter().map(|d| (b'0' + d) as char).collect()
    }

    pub fn from_token(token: &str) -> Result<Self, CellError> {
        let mut digits = Vec::with_capacity(token.len());
        for c in token.chars() {
            match c {
                '0'..='3' => digits.push(c as u8 - b'0'),
                _ => return Err(CellError::MalformedCellDomain(token.to_string())),
            }
        }
        Self::new(digits)
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.token())
    }
}

impl Serialize for CellId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.token())
    }
}

impl<'de> Deserialize<'de> for CellId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let token = String::deserialize(d)?;
        CellId::from_token(&token).map_err(serde::de::Error::custom)
    }
}

/// Lat/lon extent of a cell. Containment is half-open on the north/east
/// sides except at the world's top edge, matching the bisection tie rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl CellBounds {
    pub fn world() -> Self {
        Self {
            lat_min: -90.0,
            lat_max: 90.0,
            lon_min: -180.0,
            lon_max: 180.0,
        }
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(
            (self.lat_min + self.lat_max) / 2.0,
            (self.lon_min + self.lon_max) / 2.0,
        )
        .expect("cell center is always in range")
    }

    /// Which cell does this point belong to, per the tie rule? North/east
    /// edges belong to the neighbor, except latitude 90 at the world top.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let lat_ok = p.lat >= self.lat_min && (p.lat < self.lat_max || self.lat_max == 90.0);
        let lon_ok = p.lon >= self.lon_min && p.lon < self.lon_max;
        lat_ok && lon_ok
    }

    /// The bounds as a closed frame rectangle (`x = lon`, `y = lat`).
    pub fn to_rect(&self) -> Rect {
        Rect::new(
            Point::new(self.lon_min, self.lat_min),
            Point::new(self.lon_max, self.lat_max),
        )
    }

    fn quadrant(&self, digit: u8) -> Self {
        let lat_mid = (self.lat_min + self.lat_max) / 2.0;
        let lon_mid = (self.lon_min + self.lon_max) / 2.0;
        let north = digit & 2 != 0;
        let east = digit & 1 != 0;
        Self {
            lat_min: if north { lat_mid } else { self.lat_min },
            lat_max: if north { self.lat_max } else { lat_mid },
            lon_min: if east { lon_mid } else { self.lon_min },
            lon_max: if east { self.lon_max } else { lon_mid },
        }
    }
}

/// The level-`level` cell containing `p`.
pub fn cell_from_point(p: GeoPoint, level: u8) -> Result<CellId, CellError> {
    if level > MAX_LEVEL {
        return Err(CellError::LevelOutOfRange(level as u32));
    }
    let mut bounds = CellBounds::world();
    let mut digits = Vec::with_capacity(level as usize);
    for _ in 0..level {
        let lat_mid = (bounds.lat_min + bounds.lat_max) / 2.0;
        let lon_mid = (bounds.lon_min + bounds.lon_max) / 2.0;
        let digit = 2 * u8::from(p.lat >= lat_mid) + u8::from(p.lon >= lon_mid);
        bounds = bounds.quadrant(digit);
        digits.push(digit);
    }
    Ok(CellId { digits })
}

/// Replay the digit path from the world bounds.
pub fn cell_bounds(cell: &CellId) -> CellBounds {
    let mut bounds = CellBounds::world();
    for &digit in &cell.digits {
        bounds = bounds.quadrant(digit);
    }
    bounds
}

/// All level-`level` cells whose bounds intersect the polygon, normalized:
/// whenever all four children of a parent are present they are replaced by
/// the parent, repeated to fixpoint.
pub fn cover_polygon(
    poly: &[GeoPoint],
    level: u8,
    max_cells: usize,
) -> Result<BTreeSet<CellId>, CellError> {
    if level > MAX_LEVEL {
        return Err(CellError::LevelOutOfRange(level as u32));
    }
    let frame_poly: Vec<Point> = poly.iter().map(|p| p.to_point()).collect();
    let mut out = BTreeSet::new();
    descend(
        &CellId::world(),
        &cell_bounds(&CellId::world()),
        &frame_poly,
        level,
        &mut out,
    );
    if out.len() > max_cells {
        return Err(CellError::CoverTooLarge {
            cells: out.len(),
            max_cells,
        });
    }
    Ok(out)
}

/// Recursive covering with bottom-up collapse. Returns true when the cell
/// itself ended up in the set (so the caller can collapse four full
/// children into their parent).
fn descend(
    cell: &CellId,
    bounds: &CellBounds,
    poly: &[Point],
    level: u8,
    out: &mut BTreeSet<CellId>,
) -> bool {
    let rect = bounds.to_rect();
    if !geom::rect_intersects_polygon(&rect, poly) {
        return false;
    }
    if cell.level() == level || geom::rect_inside_polygon(&rect, poly) {
        // Fully-contained cells stand in for all their descendants, which
        // is exactly what the collapse rule would produce.
        out.insert(cell.clone());
        return true;
    }
    let mut full_children = 0;
    for digit in 0..4u8 {
        let child = cell.child(digit).expect("level checked by caller");
        let child_bounds = bounds.quadrant(digit);
        if descend(&child, &child_bounds, poly, level, out) {
            full_children += 1;
        }
    }
    if full_children == 4 {
        for digit in 0..4u8 {
            out.remove(&cell.child(digit).expect("level checked"));
        }
        out.insert(cell.clone());
        return true;
    }
    false
}

/// Encode a cell as a domain name under `suffix`: one label per digit,
/// deepest level leftmost. The world cell maps to the suffix itself.
pub fn cell_to_domain(cell: &CellId, suffix: &str) -> String {
    if cell.digits.is_empty() {
        return suffix.to_string();
    }
    let mut labels: Vec<String> = cell
        .digits
        .iter()
        .rev()
        .map(|d| ((b'0' + d) as char).to_string())
        .collect();
    labels.push(suffix.to_string());
    labels.join(".")
}

/// Inverse of [`cell_to_domain`]. The name must end with `suffix`
/// (case-insensitive) and every label above it must be a quadrant digit.
pub fn domain_to_cell(name: &str, suffix: &str) -> Result<CellId, CellError> {
    let name_lc = name.to_ascii_lowercase();
    let suffix_lc = suffix.to_ascii_lowercase();
    if name_lc == suffix_lc {
        return Ok(CellId::world());
    }
    let prefix = name_lc
        .strip_suffix(&suffix_lc)
        .and_then(|p| p.strip_suffix('.'))
        .ok_or_else(|| CellError::MalformedCellDomain(name.to_string()))?;
    let mut digits = Vec::new();
    for label in prefix.split('.').rev() {
        match label {
            "0" => digits.push(0),
            "1" => digits.push(1),
            "2" => digits.push(2),
            "3" => digits.push(3),
            _ => return Err(CellError::MalformedCellDomain(name.to_string())),
        }
    }
    CellId::new(digits)
}
