use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::WallSegment;
use crate::config::{PipelineConfig, ViewpointGrouping};
use crate::geom::{self, BBox, Point};
use crate::index::GridIndex;
use crate::registry::{FootprintRecord, RoadPolyline};

/// Camera point on a road centreline looking at a wall midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sightline {
    pub building_uuid: String,
    pub wall_id: u32,
    pub road_id: String,
    pub camera_point: Point,
    pub wall_midpoint: Point,
    pub length_m: f64,
    /// Angle between the sightline (wall → camera) and the wall's outward normal.
    pub deviation_deg: f64,
    /// Ring edges of the target wall, see [`WallSegment::edges`].
    pub wall_edges: [usize; 2],
}

impl Sightline {
    fn tie_break(&self, other: &Sightline) -> Ordering {
        self.length_m
            .total_cmp(&other.length_m)
            .then_with(|| self.road_id.cmp(&other.road_id))
            .then_with(|| self.camera_point.lex_cmp(&other.camera_point))
    }
}

/// Projects each wall midpoint onto every road; every projection within
/// `initial_sightline_m` becomes a candidate. Zero-length projections (a road
/// running through the midpoint) are skipped.
pub fn build_sightlines(walls: &[WallSegment], roads: &[RoadPolyline], config: &PipelineConfig) -> Vec<Sightline> {
    let radius = config.initial_sightline_m;
    let index = GridIndex::new(
        roads.iter().map(|r| BBox::of(&r.points).expect("road has points")).collect(),
        radius.max(1.0),
    );
    walls
        .par_iter()
        .flat_map_iter(|w| {
            let m = w.midpoint;
            let q = BBox { min: Point::new(m.x - radius, m.y - radius), max: Point::new(m.x + radius, m.y + radius) };
            index
                .query(&q)
                .into_iter()
                .filter_map(|ri| {
                    let road = &roads[ri];
                    let (cam, len) = geom::closest_on_polyline(m, &road.points)?;
                    if len > radius || len <= 0.0 {
                        return None;
                    }
                    Some(Sightline {
                        building_uuid: w.building_uuid.clone(),
                        wall_id: w.wall_id,
                        road_id: road.road_id.clone(),
                        camera_point: cam,
                        wall_midpoint: m,
                        length_m: len,
                        deviation_deg: geom::angle_between_deg(cam.sub(m), w.outward_normal),
                        wall_edges: w.edges,
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Why a candidate was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SightlineRejection {
    Distance,
    Deviation,
    Obstructed,
}

/// Evaluates the three retention clauses in order; `None` means retained.
pub fn rejection_reason(
    s: &Sightline,
    footprints: &[FootprintRecord],
    index: &GridIndex,
    by_uuid: &HashMap<&str, usize>,
    config: &PipelineConfig,
) -> Option<SightlineRejection> {
    if s.length_m > config.max_sightline_m {
        return Some(SightlineRejection::Distance);
    }
    if s.deviation_deg > config.max_deviation_deg {
        return Some(SightlineRejection::Deviation);
    }
    if is_obstructed(s, footprints, index, by_uuid) {
        return Some(SightlineRejection::Obstructed);
    }
    None
}

/// The segment camera → wall midpoint is obstructed when it touches any other
/// footprint, when the camera stands inside the target, or when it meets any
/// edge of the target outside the target wall itself.
pub fn is_obstructed(
    s: &Sightline,
    footprints: &[FootprintRecord],
    index: &GridIndex,
    by_uuid: &HashMap<&str, usize>,
) -> bool {
    let (p, q) = (s.camera_point, s.wall_midpoint);
    let target = by_uuid.get(s.building_uuid.as_str()).copied();
    let bb = BBox::of(&[p, q]).expect("two points");
    for fi in index.query(&bb) {
        let f = &footprints[fi];
        let ring = &f.ring;
        let n = ring.len();
        let is_target = Some(fi) == target;
        if geom::point_in_ring(p, ring) {
            return true;
        }
        for e in 0..n {
            if is_target {
                let offset = (e + n - s.wall_edges[0]) % n;
                if offset < s.wall_edges[1] {
                    continue;
                }
            }
            if geom::segments_intersect(p, q, ring[e], ring[(e + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Retains candidates that are short, near-perpendicular and unobstructed.
pub fn filter_sightlines(cands: &[Sightline], footprints: &[FootprintRecord], config: &PipelineConfig) -> Vec<Sightline> {
    let ctx = FilterContext::new(footprints);
    cands
        .par_iter()
        .filter(|s| rejection_reason(s, footprints, &ctx.index, &ctx.by_uuid, config).is_none())
        .cloned()
        .collect()
}

/// Footprint lookup structures shared by filter calls.
pub struct FilterContext<'a> {
    pub index: GridIndex,
    pub by_uuid: HashMap<&'a str, usize>,
}

impl<'a> FilterContext<'a> {
    pub fn new(footprints: &'a [FootprintRecord]) -> Self {
        FilterContext {
            index: GridIndex::new(footprints.iter().map(FootprintRecord::bbox).collect(), 50.0),
            by_uuid: footprints.iter().enumerate().map(|(i, f)| (f.building_uuid.as_str(), i)).collect(),
        }
    }
}

/// Counts of dropped candidates per clause, first failing clause wins.
pub fn rejection_counts(
    cands: &[Sightline],
    footprints: &[FootprintRecord],
    config: &PipelineConfig,
) -> BTreeMap<SightlineRejection, usize> {
    let ctx = FilterContext::new(footprints);
    let mut out = BTreeMap::new();
    for s in cands {
        if let Some(r) = rejection_reason(s, footprints, &ctx.index, &ctx.by_uuid, config) {
            *out.entry(r).or_insert(0) += 1;
        }
    }
    out
}

/// Keeps the shortest sightline per wall or per building. Ties go to the
/// smaller road id, then the lexicographically smaller camera point. Output
/// is sorted by (building, wall).
pub fn select_viewpoints(retained: &[Sightline], per: ViewpointGrouping) -> Vec<Sightline> {
    let mut best: BTreeMap<(String, Option<u32>), &Sightline> = BTreeMap::new();
    for s in retained {
        let key = match per {
            ViewpointGrouping::Wall => (s.building_uuid.clone(), Some(s.wall_id)),
            ViewpointGrouping::Building => (s.building_uuid.clone(), None),
        };
        best.entry(key)
            .and_modify(|cur| {
                if s.tie_break(cur) == Ordering::Less {
                    *cur = s;
                }
            })
            .or_insert(s);
    }
    let mut out: Vec<Sightline> = best.into_values().cloned().collect();
    out.sort_by(|a, b| a.building_uuid.cmp(&b.building_uuid).then(a.wall_id.cmp(&b.wall_id)));
    out
}
