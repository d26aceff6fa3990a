//! Viewpoint planning: façade walls, road-side camera points, sightline
//! filtering and camera parameters.

mod pose;
mod sightlines;
mod walls;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::registry::{EpcRecord, MatchedBuilding, RoadPolyline};

pub use pose::{camera_pose, estimated_height, fov_deg, pitch_deg, raw_fov_deg, CameraPose, FloorsSource, PoseError};
pub use sightlines::{
    build_sightlines, filter_sightlines, is_obstructed, rejection_counts, rejection_reason, select_viewpoints,
    FilterContext, Sightline, SightlineRejection,
};
pub use walls::{extract_walls, WallError, WallSegment};

/// Counts from one planning run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub buildings: usize,
    pub walls: usize,
    pub candidates: usize,
    pub rejected: BTreeMap<SightlineRejection, usize>,
    pub retained: usize,
    pub viewpoints: usize,
    pub buildings_with_viewpoint: usize,
    pub poses_with_default_floors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewPlan {
    pub sightlines: Vec<Sightline>,
    pub poses: Vec<CameraPose>,
    pub wall_errors: Vec<String>,
    pub stats: PlanStats,
}

/// Walls of every matched building; failures are reported, not fatal.
pub fn all_walls(buildings: &[MatchedBuilding], config: &PipelineConfig) -> (Vec<WallSegment>, Vec<String>) {
    let mut walls = Vec::new();
    let mut errors = Vec::new();
    for b in buildings {
        match extract_walls(&b.footprint, config.collinear_merge_deg) {
            Ok(w) => walls.extend(w),
            Err(e) => errors.push(e.to_string()),
        }
    }
    (walls, errors)
}

/// Selects viewpoints among retained sightlines and computes their poses.
pub fn poses_from_sightlines(
    retained: &[Sightline],
    walls: &[WallSegment],
    buildings: &[MatchedBuilding],
    epcs: &[EpcRecord],
    config: &PipelineConfig,
) -> (Vec<Sightline>, Vec<CameraPose>) {
    let selected = select_viewpoints(retained, config.viewpoints_per);
    let wall_lookup: HashMap<(&str, u32), &WallSegment> =
        walls.iter().map(|w| ((w.building_uuid.as_str(), w.wall_id), w)).collect();
    let building_epc: HashMap<&str, Option<&str>> =
        buildings.iter().map(|b| (b.building_uuid.as_str(), b.epc_id.as_deref())).collect();
    let floors_by_epc: HashMap<&str, u32> = epcs.iter().map(|e| (e.epc_id.as_str(), e.floors)).collect();
    let mut poses = Vec::new();
    for s in &selected {
        let Some(wall) = wall_lookup.get(&(s.building_uuid.as_str(), s.wall_id)) else { continue };
        let epc_id = building_epc.get(s.building_uuid.as_str()).copied().flatten();
        let floors = epc_id.and_then(|e| floors_by_epc.get(e).copied());
        // Lengths are positive by construction.
        if let Ok(p) = camera_pose(s, floors, wall, epc_id.map(str::to_string), config) {
            poses.push(p);
        }
    }
    (selected, poses)
}

pub fn buildings_with_pose(poses: &[CameraPose]) -> usize {
    poses.iter().map(|p| p.target_building_uuid.as_str()).collect::<std::collections::HashSet<_>>().len()
}

/// Runs wall extraction through camera poses for every matched building.
pub fn plan_viewpoints(
    buildings: &[MatchedBuilding],
    epcs: &[EpcRecord],
    roads: &[RoadPolyline],
    config: &PipelineConfig,
) -> ViewPlan {
    let (walls, wall_errors) = all_walls(buildings, config);
    let footprints: Vec<_> = buildings.iter().map(|b| b.footprint.clone()).collect();
    let candidates = build_sightlines(&walls, roads, config);
    let retained = filter_sightlines(&candidates, &footprints, config);
    let (selected, poses) = poses_from_sightlines(&retained, &walls, buildings, epcs, config);
    let stats = PlanStats {
        buildings: buildings.len(),
        walls: walls.len(),
        candidates: candidates.len(),
        rejected: rejection_counts(&candidates, &footprints, config),
        retained: retained.len(),
        viewpoints: poses.len(),
        buildings_with_viewpoint: buildings_with_pose(&poses),
        poses_with_default_floors: poses.iter().filter(|p| p.floors_source == FloorsSource::Default).count(),
    };
    ViewPlan { sightlines: selected, poses, wall_errors, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ViewpointGrouping;
    use crate::geom::Point;
    use crate::registry::FootprintRecord;

    fn square(id: &str, x: f64, y: f64, s: f64) -> FootprintRecord {
        FootprintRecord::new(
            id,
            vec![Point::new(x, y), Point::new(x + s, y), Point::new(x + s, y + s), Point::new(x, y + s)],
        )
        .unwrap()
    }

    fn road(id: &str, pts: &[(f64, f64)]) -> RoadPolyline {
        RoadPolyline::new(id, pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    fn wall_facing_south() -> WallSegment {
        // Wall on the south side of a 10×10 square centred on x = 0.
        let f = square("B", -5.0, 0.0, 10.0);
        extract_walls(&f, 1.0).unwrap().into_iter().find(|w| w.outward_normal.y < -0.5).unwrap()
    }

    #[test]
    fn perpendicular_drop_has_zero_deviation() {
        let w = wall_facing_south();
        assert_eq!(w.midpoint, Point::new(0.0, 0.0));
        let s = build_sightlines(&[w], &[road("R", &[(-100.0, -30.0), (100.0, -30.0)])], &PipelineConfig::default());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].camera_point, Point::new(0.0, -30.0));
        assert_eq!(s[0].length_m, 30.0);
        assert_eq!(s[0].deviation_deg, 0.0);
    }

    #[test]
    fn road_behind_building_has_180_deviation_and_is_filtered() {
        let w = wall_facing_south();
        let cfg = PipelineConfig::default();
        let s = build_sightlines(&[w], &[road("R", &[(-100.0, 30.0), (100.0, 30.0)])], &cfg);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].deviation_deg, 180.0);
        let fps = vec![square("B", -5.0, 0.0, 10.0)];
        assert!(filter_sightlines(&s, &fps, &cfg).is_empty());
    }

    #[test]
    fn roads_out_of_range_give_no_candidates() {
        let w = wall_facing_south();
        let s = build_sightlines(&[w], &[road("R", &[(-100.0, -130.0), (100.0, -130.0)])], &PipelineConfig::default());
        assert!(s.is_empty());
    }

    fn cand(len: f64, dev: f64) -> Sightline {
        Sightline {
            building_uuid: "B".into(),
            wall_id: 0,
            road_id: "R".into(),
            camera_point: Point::new(0.0, -len),
            wall_midpoint: Point::new(0.0, 0.0),
            length_m: len,
            deviation_deg: dev,
            wall_edges: [0, 1],
        }
    }

    #[test]
    fn distance_and_deviation_clauses() {
        let cfg = PipelineConfig::default();
        let fps = vec![square("B", -5.0, 0.0, 10.0)];
        let keep = |s: Sightline| !filter_sightlines(&[s], &fps, &cfg).is_empty();
        assert!(!keep(cand(60.0, 0.0)));
        assert!(keep(cand(30.0, 2.9)));
        assert!(!keep(cand(30.0, 3.1)));
    }

    #[test]
    fn crossing_second_building_is_obstructed() {
        let cfg = PipelineConfig::default();
        let target = square("B", -5.0, 0.0, 10.0);
        let blocker = square("X", -2.0, -20.0, 4.0);
        let walls = extract_walls(&target, 1.0).unwrap();
        let s = build_sightlines(&walls, &[road("R", &[(-100.0, -30.0), (100.0, -30.0)])], &cfg);
        let south: Vec<_> = s.into_iter().filter(|c| c.deviation_deg < 1.0).collect();
        assert_eq!(south.len(), 1);
        assert_eq!(filter_sightlines(&south, std::slice::from_ref(&target), &cfg).len(), 1);
        assert!(filter_sightlines(&south, &[target, blocker], &cfg).is_empty());
    }

    #[test]
    fn viewpoint_selection() {
        let mut a = cand(30.0, 0.0);
        let b = cand(45.0, 0.0);
        let got = select_viewpoints(&[b.clone(), a.clone()], ViewpointGrouping::Wall);
        assert_eq!(got, vec![a.clone()]);

        a.wall_id = 1;
        assert_eq!(select_viewpoints(&[a.clone(), b.clone()], ViewpointGrouping::Wall).len(), 2);
        assert_eq!(select_viewpoints(&[a.clone(), b.clone()], ViewpointGrouping::Building), vec![a]);

        let mut r1 = cand(30.0, 0.0);
        r1.road_id = "R2".into();
        let mut r2 = cand(30.0, 0.0);
        r2.road_id = "R1".into();
        r2.camera_point = Point::new(5.0, -30.0);
        let got = select_viewpoints(&[r1.clone(), r2.clone()], ViewpointGrouping::Wall);
        assert_eq!(got[0].road_id, "R1");
        assert_eq!(select_viewpoints(&[r2, r1], ViewpointGrouping::Wall)[0].road_id, "R1");
    }

    #[test]
    fn degenerate_footprint_walls_rejected() {
        let f = FootprintRecord {
            building_uuid: "D".into(),
            ring: vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)],
            centroid: Point::new(1.0, 0.0),
        };
        assert!(matches!(extract_walls(&f, 1.0), Err(WallError::Degenerate { .. })));
    }
}
