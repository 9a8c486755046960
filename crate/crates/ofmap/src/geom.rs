//! Planar geometry shared by the map model, spatial index, and tiles.
//!
//! Everything here works on plain `(x, y)` coordinates in a document frame.
//! For frames whose `frame_id` is `"geo"`, the convention throughout the
//! crate is `x = longitude`, `y = latitude`, both in degrees. Local frames
//! are planar meters.

use serde::{Deserialize, Serialize};

/// Meters per degree of latitude (and of longitude at the equator).
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// A point in a document frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// An axis-aligned rectangle, closed on all sides unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn contains_strict(&self, p: Point) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            self.min,
            Point::new(self.max.x, self.min.y),
            self.max,
            Point::new(self.min.x, self.max.y),
        ]
    }

    pub fn edges(&self) -> [(Point, Point); 4] {
        let c = self.corners();
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }

    pub fn center(&self) -> Point {
        Point::new((self.min.x + self.max.x) / 2.0, (self.min.y + self.max.y) / 2.0)
    }
}

/// Twice the signed area of triangle (a, b, c). Positive when c lies to the
/// left of a→b.
fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// True when `p` lies on the closed segment a–b.
pub fn on_segment(p: Point, a: Point, b: Point) -> bool {
    if cross(a, b, p) != 0.0 {
        return false;
    }
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// True when segments a1–a2 and b1–b2 intersect, endpoint touching included.
pub fn segments_intersect(a1: Point, a2: Point, b1: Point, b2: Point) -> bool {
    let d1 = cross(b1, b2, a1);
    let d2 = cross(b1, b2, a2);
    let d3 = cross(a1, a2, b1);
    let d4 = cross(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a1, b1, b2))
        || (d2 == 0.0 && on_segment(a2, b1, b2))
        || (d3 == 0.0 && on_segment(b1, a1, a2))
        || (d4 == 0.0 && on_segment(b2, a1, a2))
}

/// Point-in-polygon by ray casting. Points on the boundary count as inside.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if on_segment(p, poly[i], poly[(i + 1) % n]) {
            return true;
        }
    }
    // Half-open edge rule keeps vertices from being counted twice.
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if x_cross > p.x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Minimum distance from `p` to the closed segment a–b.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return ((p.x - a.x).powi(2) + (p.y - a.y).powi(2)).sqrt();
    }
    let t = (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0);
    let qx = a.x + t * abx;
    let qy = a.y + t * aby;
    ((p.x - qx).powi(2) + (p.y - qy).powi(2)).sqrt()
}

/// Minimum distance from `p` to the polygon outline.
pub fn point_polygon_distance(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let d = point_segment_distance(p, poly[i], poly[(i + 1) % n]);
        if d < best {
            best = d;
        }
    }
    best
}

/// A polygon is simple when no two non-adjacent edges intersect and
/// adjacent edges meet only at their shared vertex.
pub fn polygon_is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for p in poly {
        if !p.is_finite() {
            return false;
        }
    }
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        if a1 == a2 {
            return false; // zero-length edge
        }
        for j in (i + 1)..n {
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Shared endpoint is fine; collinear overlap is not.
                let shared = if j == i + 1 { a2 } else { a1 };
                let other_a = if j == i + 1 { a1 } else { a2 };
                let other_b = if j == i + 1 { b2 } else { b1 };
                if cross(shared, other_a, other_b) == 0.0
                    && (on_segment(other_a, shared, other_b)
                        || on_segment(other_b, shared, other_a))
                {
                    return false;
                }
            } else if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

pub fn polygon_bbox(poly: &[Point]) -> Rect {
    let mut min = Point::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    Rect::new(min, max)
}

/// True when the closed rectangle and the polygon share at least one point.
pub fn rect_intersects_polygon(rect: &Rect, poly: &[Point]) -> bool {
    for p in poly {
        if rect.contains(*p) {
            return true;
        }
    }
    for c in rect.corners() {
        if point_in_polygon(c, poly) {
            return true;
        }
    }
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for (r1, r2) in rect.edges() {
            if segments_intersect(a, b, r1, r2) {
                return true;
            }
        }
    }
    false
}

/// True when the closed rectangle lies entirely within the polygon.
pub fn rect_inside_polygon(rect: &Rect, poly: &[Point]) -> bool {
    for c in rect.corners() {
        if !point_in_polygon(c, poly) {
            return false;
        }
    }
    // A polygon edge crossing the rectangle would carve part of it out.
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if rect.contains_strict(a) || rect.contains_strict(b) {
            return false;
        }
        for (r1, r2) in rect.edges() {
            if segments_intersect(a, b, r1, r2) {
                return false;
            }
        }
    }
    true
}

// Cohen–Sutherland outcodes.
const INSIDE: u8 = 0;
const LEFT: u8 = 1;
const RIGHT: u8 = 2;
const BOTTOM: u8 = 4;
const TOP: u8 = 8;

fn outcode(rect: &Rect, p: Point) -> u8 {
    let mut code = INSIDE;
    if p.x < rect.min.x {
        code |= LEFT;
    } else if p.x > rect.max.x {
        code |= RIGHT;
    }
    if p.y < rect.min.y {
        code |= BOTTOM;
    } else if p.y > rect.max.y {
        code |= TOP;
    }
    code
}

/// Cohen–Sutherland segment clip against a closed rectangle. Returns the
/// clipped segment, or `None` when the segment lies entirely outside.
pub fn clip_segment(rect: &Rect, mut a: Point, mut b: Point) -> Option<(Point, Point)> {
    let mut code_a = outcode(rect, a);
    let mut code_b = outcode(rect, b);
    loop {
        if code_a | code_b == 0 {
            return Some((a, b));
        }
        if code_a & code_b != 0 {
            return None;
        }
        let code_out = if code_a != 0 { code_a } else { code_b };
        let p = if code_out & TOP != 0 {
            Point::new(
                a.x + (b.x - a.x) * (rect.max.y - a.y) / (b.y - a.y),
                rect.max.y,
            )
        } else if code_out & BOTTOM != 0 {
            Point::new(
                a.x + (b.x - a.x) * (rect.min.y - a.y) / (b.y - a.y),
                rect.min.y,
            )
        } else if code_out & RIGHT != 0 {
            Point::new(
                rect.max.x,
                a.y + (b.y - a.y) * (rect.max.x - a.x) / (b.x - a.x),
            )
        } else {
            Point::new(
                rect.min.x,
                a.y + (b.y - a.y) * (rect.min.x - a.x) / (b.x - a.x),
            )
        };
        if code_out == code_a {
            a = p;
            code_a = outcode(rect, a);
        } else {
            b = p;
            code_b = outcode(rect, b);
        }
    }
}

/// Distance between two points of a frame, in meters.
///
/// Geo frames use the equirectangular approximation: one degree of latitude
/// is [`METERS_PER_DEGREE`]; longitude shrinks with the cosine of the
/// midpoint latitude. Local frames are already meters.
pub fn frame_distance_m(geo: bool, a: Point, b: Point) -> f64 {
    if geo {
        let mid_lat = ((a.y + b.y) / 2.0).to_radians();
        let dy = (a.y - b.y) * METERS_PER_DEGREE;
        let dx = (a.x - b.x) * METERS_PER_DEGREE * mid_lat.cos();
        (dx * dx + dy * dy).sqrt()
    } else {
        ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
    }
}
