//! Planar geometry in a projected metric CRS.
//!
//! Everything here works on `f64` metres. Rings are stored open (the closing
//! vertex is not repeated). Predicates treat boundary contact as intersection.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point { x: v[0], y: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }

    pub fn midpoint(self, o: Point) -> Point {
        Point::new((self.x + o.x) / 2.0, (self.y + o.y) / 2.0)
    }

    /// Lexicographic comparison on (x, y), used for deterministic tie-breaks.
    pub fn lex_cmp(&self, o: &Point) -> std::cmp::Ordering {
        self.x.total_cmp(&o.x).then(self.y.total_cmp(&o.y))
    }
}

/// Twice the signed area of triangle (o, a, b); positive when counter-clockwise.
pub fn orient(o: Point, a: Point, b: Point) -> f64 {
    a.sub(o).cross(b.sub(o))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn of(points: &[Point]) -> Option<BBox> {
        let first = *points.first()?;
        let mut bb = BBox { min: first, max: first };
        for p in &points[1..] {
            bb.min.x = bb.min.x.min(p.x);
            bb.min.y = bb.min.y.min(p.y);
            bb.max.x = bb.max.x.max(p.x);
            bb.max.y = bb.max.y.max(p.y);
        }
        Some(bb)
    }

    pub fn intersects(&self, o: &BBox) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Shoelace signed area of an open ring.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += ring[i].cross(ring[(i + 1) % n]);
    }
    acc / 2.0
}

pub fn perimeter(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].dist(ring[(i + 1) % n])).sum()
}

/// Area-weighted centroid of a simple ring.
pub fn centroid(ring: &[Point]) -> Point {
    let a = signed_area(ring);
    if a.abs() < f64::EPSILON {
        let n = ring.len().max(1) as f64;
        let s = ring.iter().fold(Point::new(0.0, 0.0), |acc, p| acc.add(*p));
        return s.scale(1.0 / n);
    }
    // Shift to the first vertex to keep the products small for large
    // projected coordinates.
    let o = ring[0];
    let n = ring.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let p = ring[i].sub(o);
        let q = ring[(i + 1) % n].sub(o);
        let c = p.cross(q);
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    Point::new(o.x + cx / (6.0 * a), o.y + cy / (6.0 * a))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test; touching and collinear overlap count.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Even-odd ray casting. Points exactly on the boundary may land either way.
pub fn point_in_ring(p: Point, ring: &[Point]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Closest point to `p` on the closed segment [a, b].
pub fn closest_on_segment(p: Point, a: Point, b: Point) -> Point {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return a;
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    a.add(ab.scale(t))
}

/// Closest point on a polyline; the first segment wins on exact ties.
pub fn closest_on_polyline(p: Point, line: &[Point]) -> Option<(Point, f64)> {
    let mut best: Option<(Point, f64)> = None;
    for w in line.windows(2) {
        let c = closest_on_segment(p, w[0], w[1]);
        let d = p.dist(c);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best
}

/// True when no two non-adjacent edges of the ring touch and adjacent edges
/// share only their common vertex.
pub fn is_simple_ring(ring: &[Point]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges fold back on each other only when collinear
                // and pointing in opposite directions.
                let shared = if j == i + 1 { b } else { a };
                let other_a = if j == i + 1 { a } else { b };
                let other_b = if j == i + 1 { d } else { c };
                let u = other_a.sub(shared);
                let v = other_b.sub(shared);
                if u.cross(v) == 0.0 && u.dot(v) > 0.0 {
                    return false;
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Angle in degrees between two non-zero vectors, in [0, 180].
pub fn angle_between_deg(u: Point, v: Point) -> f64 {
    let c = (u.dot(v) / (u.norm() * v.norm())).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Compass bearing from `from` to `to`, degrees clockwise from grid north (+y), in [0, 360).
pub fn bearing_deg(from: Point, to: Point) -> f64 {
    let d = to.sub(from);
    let b = d.x.atan2(d.y).to_degrees();
    let b = if b < 0.0 { b + 360.0 } else { b };
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}
