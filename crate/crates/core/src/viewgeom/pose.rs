use serde::{Deserialize, Serialize};

use super::{Sightline, WallSegment};
use crate::config::PipelineConfig;
use crate::geom::{self, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorsSource {
    Epc,
    /// No certificate linked; `default_floors` was used.
    Default,
}

/// Street-level camera parameters for one façade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub target_building_uuid: String,
    pub target_wall_id: u32,
    pub epc_id: Option<String>,
    pub road_id: String,
    pub camera_point: Point,
    /// Degrees clockwise from grid north, in [0, 360).
    pub heading_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
    pub est_height_m: f64,
    pub floors: u32,
    pub floors_source: FloorsSource,
    pub length_m: f64,
    pub wall_width_m: f64,
    pub wall_midpoint: Point,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("degenerate sightline for {building_uuid}/{wall_id}: length {length_m} m")]
    Degenerate { building_uuid: String, wall_id: u32, length_m: f64 },
}

/// Height from floor count.
pub fn estimated_height(floors: u32, config: &PipelineConfig) -> f64 {
    f64::from(floors) * config.floor_height_m
}

/// Upward tilt that aims at `pitch_aim_fraction` of the façade height.
pub fn pitch_deg(height_m: f64, length_m: f64, config: &PipelineConfig) -> f64 {
    (config.pitch_aim_fraction * height_m / length_m).atan().to_degrees()
}

/// Field of view framing the larger of wall width and height with a margin.
pub fn raw_fov_deg(width_m: f64, height_m: f64, length_m: f64, config: &PipelineConfig) -> f64 {
    2.0 * (config.fov_margin * width_m.max(height_m) / (2.0 * length_m)).atan().to_degrees()
}

pub fn fov_deg(width_m: f64, height_m: f64, length_m: f64, config: &PipelineConfig) -> f64 {
    raw_fov_deg(width_m, height_m, length_m, config).clamp(config.fov_min_deg, config.fov_max_deg)
}

pub fn camera_pose(
    s: &Sightline,
    floors: Option<u32>,
    wall: &WallSegment,
    epc_id: Option<String>,
    config: &PipelineConfig,
) -> Result<CameraPose, PoseError> {
    if s.length_m.is_nan() || s.length_m <= 0.0 {
        return Err(PoseError::Degenerate {
            building_uuid: s.building_uuid.clone(),
            wall_id: s.wall_id,
            length_m: s.length_m,
        });
    }
    let (floors, floors_source) = match floors {
        Some(f) => (f, FloorsSource::Epc),
        None => (config.default_floors, FloorsSource::Default),
    };
    let height = estimated_height(floors, config);
    Ok(CameraPose {
        target_building_uuid: s.building_uuid.clone(),
        target_wall_id: s.wall_id,
        epc_id,
        road_id: s.road_id.clone(),
        camera_point: s.camera_point,
        heading_deg: geom::bearing_deg(s.camera_point, wall.midpoint),
        pitch_deg: pitch_deg(height, s.length_m, config),
        fov_deg: fov_deg(wall.width_m, height, s.length_m, config),
        est_height_m: height,
        floors,
        floors_source,
        length_m: s.length_m,
        wall_width_m: wall.width_m,
        wall_midpoint: wall.midpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sightline(length: f64) -> Sightline {
        Sightline {
            building_uuid: "B".into(),
            wall_id: 0,
            road_id: "R".into(),
            camera_point: Point::new(0.0, -length),
            wall_midpoint: Point::new(0.0, 0.0),
            length_m: length,
            deviation_deg: 0.0,
            wall_edges: [0, 1],
        }
    }

    fn wall(width: f64) -> WallSegment {
        WallSegment {
            building_uuid: "B".into(),
            wall_id: 0,
            a: Point::new(-width / 2.0, 0.0),
            b: Point::new(width / 2.0, 0.0),
            midpoint: Point::new(0.0, 0.0),
            outward_normal: Point::new(0.0, -1.0),
            width_m: width,
            edges: [0, 1],
        }
    }

    #[test]
    fn three_floors_thirty_metres() {
        let c = PipelineConfig::default();
        let p = camera_pose(&sightline(30.0), Some(3), &wall(10.0), None, &c).unwrap();
        assert_eq!(p.est_height_m, 9.0);
        assert!((p.pitch_deg - 8.531).abs() < 1e-3, "{}", p.pitch_deg);
        // 2·atan(1.1·10 / 60)
        assert!((p.fov_deg - 20.778).abs() < 1e-3, "{}", p.fov_deg);
        assert_eq!(p.heading_deg, 0.0);
        assert_eq!(p.floors_source, FloorsSource::Epc);
    }

    #[test]
    fn fov_clamps_at_both_ends() {
        let c = PipelineConfig::default();
        assert_eq!(fov_deg(10.0, 6.0, 1.0, &c), 120.0);
        assert_eq!(fov_deg(1.0, 3.0, 49.0, &c), 10.0);
    }

    #[test]
    fn missing_floors_use_default() {
        let c = PipelineConfig::default();
        let p = camera_pose(&sightline(20.0), None, &wall(10.0), None, &c).unwrap();
        assert_eq!(p.floors, 2);
        assert_eq!(p.est_height_m, 6.0);
        assert_eq!(p.floors_source, FloorsSource::Default);
    }

    #[test]
    fn zero_length_is_an_error() {
        let c = PipelineConfig::default();
        assert!(camera_pose(&sightline(0.0), Some(3), &wall(10.0), None, &c).is_err());
    }

    #[test]
    fn pitch_decreases_with_distance() {
        let c = PipelineConfig::default();
        let mut prev = f64::INFINITY;
        for d in 1..200 {
            let p = pitch_deg(9.0, f64::from(d) * 0.5, &c);
            assert!(p < prev);
            prev = p;
        }
    }
}
