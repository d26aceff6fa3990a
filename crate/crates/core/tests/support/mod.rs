//! Independent oracles and fixture generators shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use heritage_core::assessor::{generate_assessment, AssessmentRecord, OrNa};
use heritage_core::config::PipelineConfig;
use heritage_core::geom::Point;
use heritage_core::heritage::{EpcAssessment, HeritageGroup};
use heritage_core::registry::{Category, EpcRecord, FootprintRecord, ProtectionSource, RoadPolyline};
use heritage_core::viewgeom::{build_sightlines, extract_walls, filter_sightlines, WallSegment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- scenes

pub struct Scene {
    pub footprints: Vec<FootprintRecord>,
    pub roads: Vec<RoadPolyline>,
}

fn rotate(p: (f64, f64), deg: f64) -> (f64, f64) {
    let (s, c) = deg.to_radians().sin_cos();
    (p.0 * c - p.1 * s, p.0 * s + p.1 * c)
}

/// A 200 m square with up to 5 near-axis roads and up to 20 near-axis
/// rectangles or L-shapes, so that many candidates sit close to the
/// deviation limit.
pub fn random_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_roads = rng.random_range(1..=5);
    let mut roads = Vec::new();
    for i in 0..n_roads {
        let horizontal = rng.random_bool(0.5);
        let off = rng.random_range(0.0..200.0);
        let tilt = rng.random_range(-2.0..2.0_f64).to_radians().tan();
        let mut pts = Vec::new();
        let bends = rng.random_range(0..=2);
        for k in 0..=(bends + 1) {
            let t = -20.0 + 240.0 * k as f64 / (bends + 1) as f64;
            let wobble = if k > 0 && k <= bends { rng.random_range(-3.0..3.0) } else { 0.0 };
            let along = off + t * tilt + wobble;
            pts.push(if horizontal { Point::new(t, along) } else { Point::new(along, t) });
        }
        roads.push(RoadPolyline::new(format!("R{i}"), pts).expect("distinct points"));
    }
    let n_buildings = rng.random_range(1..=20);
    let mut footprints = Vec::new();
    for i in 0..n_buildings {
        let (cx, cy) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let (w, h) = (rng.random_range(6.0..30.0), rng.random_range(6.0..30.0));
        let angle = if rng.random_bool(0.5) { 0.0 } else { 90.0 } + rng.random_range(-3.0..3.0);
        let shape: Vec<(f64, f64)> = if rng.random_bool(0.3) {
            let (a, b) = (w * rng.random_range(0.3..0.7), h * rng.random_range(0.3..0.7));
            vec![(0.0, 0.0), (w, 0.0), (w, b), (a, b), (a, h), (0.0, h)]
        } else {
            vec![(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
        };
        let ring = shape
            .into_iter()
            .map(|(x, y)| {
                let (rx, ry) = rotate((x - w / 2.0, y - h / 2.0), angle);
                Point::new(cx + rx, cy + ry)
            })
            .collect();
        footprints.push(FootprintRecord::new(format!("B{i:02}"), ring).expect("valid footprint"));
    }
    Scene { footprints, roads }
}

pub fn scene_walls(scene: &Scene, cfg: &PipelineConfig) -> Vec<WallSegment> {
    scene.footprints.iter().flat_map(|f| extract_walls(f, cfg.collinear_merge_deg).expect("walls")).collect()
}

pub type SightKey = (String, u32, String);

/// Library result as (building, wall, road) keys.
pub fn library_retained(scene: &Scene, cfg: &PipelineConfig) -> BTreeSet<SightKey> {
    let walls = scene_walls(scene, cfg);
    let cands = build_sightlines(&walls, &scene.roads, cfg);
    filter_sightlines(&cands, &scene.footprints, cfg)
        .into_iter()
        .map(|s| (s.building_uuid, s.wall_id, s.road_id))
        .collect()
}

fn o_cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn o_on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection by the four orientation tests.
pub fn oracle_segments_touch(p1: (f64, f64), p2: (f64, f64), q1: (f64, f64), q2: (f64, f64)) -> bool {
    let d1 = o_cross(q1, q2, p1);
    let d2 = o_cross(q1, q2, p2);
    let d3 = o_cross(p1, p2, q1);
    let d4 = o_cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && o_on_segment(p1, q1, q2))
        || (d2 == 0.0 && o_on_segment(p2, q1, q2))
        || (d3 == 0.0 && o_on_segment(q1, p1, p2))
        || (d4 == 0.0 && o_on_segment(q2, p1, p2))
}

/// Even-odd ray casting.
pub fn oracle_inside(p: (f64, f64), ring: &[Point]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if (a.y > p.1) != (b.y > p.1) {
            let x = a.x + (p.1 - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn oracle_closest_on_road(m: (f64, f64), road: &RoadPolyline) -> ((f64, f64), f64) {
    let mut best = ((0.0, 0.0), f64::INFINITY);
    for w in road.points.windows(2) {
        let (a, b) = ((w[0].x, w[0].y), (w[1].x, w[1].y));
        let d = (b.0 - a.0, b.1 - a.1);
        let t = (((m.0 - a.0) * d.0 + (m.1 - a.1) * d.1) / (d.0 * d.0 + d.1 * d.1)).clamp(0.0, 1.0);
        let c = (a.0 + t * d.0, a.1 + t * d.1);
        let dist = ((m.0 - c.0).powi(2) + (m.1 - c.1).powi(2)).sqrt();
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

/// Exhaustive projection of every wall midpoint on every road followed by
/// brute-force distance, deviation and obstruction checks.
pub fn oracle_retained(scene: &Scene, cfg: &PipelineConfig) -> BTreeSet<SightKey> {
    let mut out = BTreeSet::new();
    for f in &scene.footprints {
        let ring = &f.ring;
        let n = ring.len();
        for w in extract_walls(f, cfg.collinear_merge_deg).expect("walls") {
            let m = ((w.a.x + w.b.x) / 2.0, (w.a.y + w.b.y) / 2.0);
            let chord = (w.b.x - w.a.x, w.b.y - w.a.y);
            // Counter-clockwise ring: outward is the right-hand side.
            let normal = (chord.1, -chord.0);
            let wall_edges: BTreeSet<usize> = (0..w.edges[1]).map(|k| (w.edges[0] + k) % n).collect();
            for road in &scene.roads {
                let (cam, len) = oracle_closest_on_road(m, road);
                if len <= 0.0 || len > cfg.initial_sightline_m || len > cfg.max_sightline_m {
                    continue;
                }
                let v = (cam.0 - m.0, cam.1 - m.1);
                let cos = (v.0 * normal.0 + v.1 * normal.1) / (len * (normal.0.hypot(normal.1)));
                let dev = cos.clamp(-1.0, 1.0).acos().to_degrees();
                if dev > cfg.max_deviation_deg {
                    continue;
                }
                let mut blocked = false;
                for g in &scene.footprints {
                    if oracle_inside(cam, &g.ring) {
                        blocked = true;
                    }
                    let k = g.ring.len();
                    for e in 0..k {
                        if g.building_uuid == f.building_uuid && wall_edges.contains(&e) {
                            continue;
                        }
                        let (a, b) = (g.ring[e], g.ring[(e + 1) % k]);
                        if oracle_segments_touch(cam, m, (a.x, a.y), (b.x, b.y)) {
                            blocked = true;
                        }
                    }
                }
                if !blocked {
                    out.insert((f.building_uuid.clone(), w.wall_id, road.road_id.clone()));
                }
            }
        }
    }
    out
}

// ----------------------------------------------------------- aggregation

pub fn epc_record(id: &str, category: Category, year: i32, floors: u32, area: f64) -> EpcRecord {
    EpcRecord {
        epc_id: id.into(),
        building_uuids: vec![format!("B-{id}")],
        category,
        construction_year: year,
        floors,
        heated_floor_area_m2: area,
        centroid: Point::new(0.0, 0.0),
        address: None,
    }
}

/// Records over `n_epcs` certificates. Visibility straddles the limit, scores
/// collide often, and a few records are unparsed or unlinked.
pub fn aggregation_fixture(seed: u64, n_records: usize, n_epcs: usize) -> (Vec<AssessmentRecord>, Vec<EpcRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epcs: Vec<EpcRecord> =
        (0..n_epcs).map(|i| epc_record(&format!("E{i:04}"), Category::Multifamily, 1950, 3, 100.0)).collect();
    let mut records = Vec::new();
    for i in 0..n_records {
        let mut a = generate_assessment(&mut rng);
        a.visibility_score = match rng.random_range(0..10) {
            0 => OrNa::NotAvailable,
            1 | 2 => OrNa::Value(49),
            3 | 4 => OrNa::Value(50),
            _ => OrNa::Value(rng.random_range(1..=100)),
        };
        a.predicted_heritage_value =
            if rng.random_bool(0.05) { OrNa::NotAvailable } else { OrNa::Value(5 * rng.random_range(1..=20)) };
        let epc_id = match rng.random_range(0..50) {
            0 => None,
            1 => Some("E-UNKNOWN".to_string()),
            _ => Some(format!("E{:04}", rng.random_range(0..n_epcs))),
        };
        let parsed = if rng.random_bool(0.05) { None } else { Some(a) };
        records.push(AssessmentRecord {
            building_uuid: format!("B{i}"),
            wall_id: 0,
            epc_id,
            image_id: format!("img{:05}", rng.random_range(0..100_000)),
            address: String::new(),
            address_placeholder: true,
            raw_response: String::new(),
            parsed,
            validation_errors: Vec::new(),
            model_id: "oracle".into(),
            prompt_hash: "oracle".into(),
            timestamp: chrono::DateTime::UNIX_EPOCH,
        });
    }
    (records, epcs)
}

/// Naive group-by: (max score, chosen image, visible count) per certificate.
pub fn oracle_aggregate(
    records: &[AssessmentRecord],
    epcs: &[EpcRecord],
    visibility_min: u8,
) -> BTreeMap<String, (Option<u8>, Option<String>, usize)> {
    let mut out = BTreeMap::new();
    for e in epcs {
        let mut visible: Vec<&AssessmentRecord> = Vec::new();
        for r in records {
            let Some(p) = &r.parsed else { continue };
            let vis = match p.visibility_score {
                OrNa::Value(v) => v,
                OrNa::NotAvailable => continue,
            };
            if vis >= visibility_min && r.epc_id.as_deref() == Some(e.epc_id.as_str()) {
                visible.push(r);
            }
        }
        let score = |r: &AssessmentRecord| match r.parsed.as_ref().unwrap().predicted_heritage_value {
            OrNa::Value(v) => Some(v),
            OrNa::NotAvailable => None,
        };
        let vis = |r: &AssessmentRecord| r.parsed.as_ref().unwrap().visibility_score.value().unwrap();
        let max = visible.iter().map(|r| score(r)).max().flatten();
        let mut best: Option<&AssessmentRecord> = None;
        for r in &visible {
            let better = match best {
                None => true,
                Some(b) => {
                    let (sr, sb) = (score(r), score(b));
                    sr > sb || (sr == sb && (vis(r) > vis(b) || (vis(r) == vis(b) && r.image_id < b.image_id)))
                }
            };
            if better {
                best = Some(r);
            }
        }
        out.insert(e.epc_id.clone(), (max, best.map(|r| r.image_id.clone()), visible.len()));
    }
    out
}

// ------------------------------------------------------------ assignment

/// Random certificates covering protection, the age rule, the default year
/// and every score including none.
pub fn random_epcs(seed: u64, n: usize) -> Vec<EpcAssessment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut protection = BTreeSet::new();
            if rng.random_bool(0.05) {
                protection.insert(ProtectionSource::NationalListed);
            }
            if rng.random_bool(0.1) {
                protection.insert(ProtectionSource::PlanProtected);
            }
            let construction_year = match rng.random_range(0..10) {
                0 => 1929,
                1 | 2 => rng.random_range(1700..1920),
                _ => rng.random_range(1900..2024),
            };
            let observed = rng.random_bool(0.7);
            let predicted_heritage_value = if observed && rng.random_bool(0.95) { Some(rng.random_range(1..=100)) } else { None };
            EpcAssessment {
                epc_id: format!("E{i:05}"),
                category: if rng.random_bool(0.6) { Category::Multifamily } else { Category::Nonresidential },
                construction_year,
                floors: rng.random_range(1..=8),
                heated_floor_area_m2: (rng.random_range(50_000..5_000_000) as f64) / 1000.0,
                building_uuids: vec![format!("B{i:05}")],
                protection,
                income_band: None,
                region_flag: None,
                region_name: None,
                best_observation: None,
                predicted_heritage_value,
                n_observations: usize::from(observed),
            }
        })
        .collect()
}

// --------------------------------------------------------------- reports

/// Integer floor areas shaped like the predicted-heritage-value column of
/// the paper's group table, totalling 5,000,000 m². The 95 bin holds the
/// rounding residual so the column sums to exactly 100 %.
pub const PREDICTED_COLUMN_M2: [(u8, u64); 9] = [
    (50, 3_829_850),
    (60, 460_050),
    (65, 26_200),
    (70, 241_300),
    (75, 75_150),
    (80, 246_550),
    (85, 120_350),
    (90, 400),
    (95, 150),
];

/// One predicted certificate per bin, carrying that bin's area.
pub fn predicted_column_fixture() -> Vec<EpcAssessment> {
    PREDICTED_COLUMN_M2
        .iter()
        .map(|&(v, m2)| EpcAssessment {
            epc_id: format!("P{v}"),
            category: Category::Multifamily,
            construction_year: 1970,
            floors: 4,
            heated_floor_area_m2: m2 as f64,
            building_uuids: vec![format!("B{v}")],
            protection: BTreeSet::new(),
            income_band: None,
            region_flag: None,
            region_name: None,
            best_observation: None,
            predicted_heritage_value: Some(v),
            n_observations: 1,
        })
        .collect()
}

pub fn group_counts(groups: impl IntoIterator<Item = HeritageGroup>) -> BTreeMap<HeritageGroup, usize> {
    let mut out = BTreeMap::new();
    for g in groups {
        *out.entry(g).or_insert(0) += 1;
    }
    out
}
