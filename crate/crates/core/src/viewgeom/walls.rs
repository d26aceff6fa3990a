use serde::{Deserialize, Serialize};

use crate::geom::{self, Point};
use crate::registry::FootprintRecord;

/// One façade section of a footprint: consecutive ring edges merged while
/// their direction stays within the collinearity tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub building_uuid: String,
    pub wall_id: u32,
    pub a: Point,
    pub b: Point,
    pub midpoint: Point,
    pub outward_normal: Point,
    pub width_m: f64,
    /// Index of the first ring edge in this wall and the number of edges.
    pub edges: [usize; 2],
}

impl WallSegment {
    /// Ring edge indices covered by this wall.
    pub fn edge_indices(&self, ring_len: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges[1]).map(move |k| (self.edges[0] + k) % ring_len)
    }

    pub fn covers_edge(&self, edge: usize, ring_len: usize) -> bool {
        let offset = (edge + ring_len - self.edges[0]) % ring_len;
        offset < self.edges[1]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WallError {
    #[error("degenerate footprint {building_uuid}: {reason}")]
    Degenerate { building_uuid: String, reason: String },
}

fn turn_deg(u: Point, v: Point) -> f64 {
    geom::angle_between_deg(u, v)
}

/// Splits the exterior ring into walls.
///
/// Walls start at the first vertex where the ring turns by at least
/// `collinear_merge_deg`. An edge joins the current wall while its direction
/// differs from the wall's first edge by less than the tolerance, so gentle
/// curves still break into several walls.
pub fn extract_walls(footprint: &FootprintRecord, collinear_merge_deg: f64) -> Result<Vec<WallSegment>, WallError> {
    let ring = &footprint.ring;
    let n = ring.len();
    let degenerate = |reason: &str| WallError::Degenerate {
        building_uuid: footprint.building_uuid.clone(),
        reason: reason.to_string(),
    };
    if n < 3 {
        return Err(degenerate("fewer than 3 vertices"));
    }
    let area = geom::signed_area(ring);
    if area.abs() <= 1e-9 * geom::perimeter(ring).powi(2).max(1.0) {
        return Err(degenerate("area ≈ 0"));
    }
    let dirs: Vec<Point> = (0..n).map(|i| ring[(i + 1) % n].sub(ring[i])).collect();
    if dirs.iter().any(|d| d.norm() == 0.0) {
        return Err(degenerate("repeated vertex"));
    }

    let start = (0..n).find(|&i| turn_deg(dirs[(i + n - 1) % n], dirs[i]) >= collinear_merge_deg).unwrap_or(0);
    let mut walls = Vec::new();
    let mut k = 0;
    while k < n {
        let first = (start + k) % n;
        let mut count = 1;
        while k + count < n {
            let next = (start + k + count) % n;
            if turn_deg(dirs[first], dirs[next]) < collinear_merge_deg {
                count += 1;
            } else {
                break;
            }
        }
        let a = ring[first];
        let b = ring[(first + count) % n];
        let chord = b.sub(a);
        let width = chord.norm();
        if width == 0.0 {
            return Err(degenerate("zero-width wall"));
        }
        // Counter-clockwise ring: the interior is on the left, so the
        // outward normal is the right-hand perpendicular.
        let normal = Point::new(chord.y / width, -chord.x / width);
        walls.push(WallSegment {
            building_uuid: footprint.building_uuid.clone(),
            wall_id: walls.len() as u32,
            a,
            b,
            midpoint: a.midpoint(b),
            outward_normal: normal,
            width_m: width,
            edges: [first, count],
        });
        k += count;
    }
    Ok(walls)
}
