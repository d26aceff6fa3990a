//! Seeded synthetic town: footprints along parallel streets, certificates,
//! protection registers, income and region areas and a panorama manifest.
//!
//! The main grid is surveyed every 10 m. A small hamlet far from it has no
//! panoramas, so its certificates end up without an image. Each street strip
//! also has a few backyard buildings that are mostly hidden from the road.

use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::artifacts::{self, ArtifactError};
use crate::imagery::Panorama;

pub const CRS: &str = "urn:ogc:def:crs:EPSG::3006";
const X0: f64 = 670_000.0;
const Y0: f64 = 6_575_000.0;
const STRIP: f64 = 80.0;
const STREET_LEN: f64 = 560.0;
pub const REGION_NAMES: [&str; 5] = ["Visby", "Nässjö", "Gothenburg", "Uppsala", "Stockholm"];
const INCOMES: [f64; 5] = [250.0, 350.0, 450.0, 550.0, 650.0];

#[derive(Debug, Clone)]
pub struct Building {
    pub uuid: String,
    pub ring: Vec<(f64, f64)>,
    pub street: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct EpcRow {
    pub epc_id: String,
    pub building_uuids: Vec<String>,
    pub category: &'static str,
    pub construction_year: i32,
    pub floors: u32,
    pub heated_floor_area_m2: f64,
    pub x: f64,
    pub y: f64,
    pub address: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Town {
    pub buildings: Vec<Building>,
    pub roads: Vec<(String, Vec<(f64, f64)>)>,
    pub epcs: Vec<EpcRow>,
    /// Rows that ingest must reject: (epc_id, line).
    pub bad_epc_lines: Vec<String>,
    pub national: Vec<String>,
    pub plan: Vec<String>,
    pub income_areas: Vec<(String, [f64; 4], f64)>,
    pub regions: Vec<(String, [f64; 4])>,
    pub panoramas: Vec<Panorama>,
}

fn rect(x: f64, y: f64, w: f64, d: f64) -> Vec<(f64, f64)> {
    vec![(x, y), (x + w, y), (x + w, y + d), (x, y + d)]
}

fn centroid(ring: &[(f64, f64)]) -> (f64, f64) {
    let n = ring.len() as f64;
    (ring.iter().map(|p| p.0).sum::<f64>() / n, ring.iter().map(|p| p.1).sum::<f64>() / n)
}

fn area(ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].0 * ring[(i + 1) % n].1 - ring[(i + 1) % n].0 * ring[i].1).sum::<f64>().abs() / 2.0
}

fn construction_year(rng: &mut ChaCha8Rng) -> i32 {
    match rng.random_range(0..100) {
        0..15 => rng.random_range(1700..1900),
        15..18 => 1929,
        18..38 => rng.random_range(1900..1945),
        _ => rng.random_range(1945..=2020),
    }
}

/// Builds a town with `n` buildings (at least 50).
pub fn synth_town(seed: u64, n: usize) -> Town {
    let n = n.max(50);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hamlet_n = n / 25;
    let backyard_n = n / 25;
    let front_n = n - hamlet_n - backyard_n;
    let per_side = 23;
    let strips = front_n.div_ceil(2 * per_side);

    let mut buildings = Vec::new();
    let mut roads = Vec::new();
    for k in 0..=strips {
        let y = Y0 + k as f64 * STRIP;
        roads.push((format!("R{k:02}"), vec![(X0 - 20.0, y), (X0 + STREET_LEN, y)]));
    }
    let mut placed = 0;
    'strips: for k in 0..strips {
        let south = Y0 + k as f64 * STRIP;
        for side in 0..2 {
            let mut x = X0 + rng.random_range(0.0..6.0);
            for _ in 0..per_side {
                if placed == front_n {
                    break 'strips;
                }
                let w = rng.random_range(14.0..20.0);
                let d = rng.random_range(10.0..16.0);
                let setback = rng.random_range(6.0..18.0);
                let (y, street) = if side == 0 { (south + setback, k) } else { (south + STRIP - setback - d, k + 1) };
                buildings.push(Building { uuid: format!("B{:04}", buildings.len()), ring: rect(x, y, w, d), street: Some(street) });
                x += w + rng.random_range(3.0..7.0);
                placed += 1;
            }
        }
    }
    for i in 0..backyard_n {
        let k = i % strips;
        let x = X0 + 20.0 + (i / strips) as f64 * 90.0 + rng.random_range(0.0..30.0);
        let y = Y0 + k as f64 * STRIP + 36.0;
        buildings.push(Building { uuid: format!("B{:04}", buildings.len()), ring: rect(x, y, 12.0, 8.0), street: None });
    }
    let hx = X0 + STREET_LEN + 1000.0;
    roads.push(("H01".into(), vec![(hx - 10.0, Y0), (hx + hamlet_n as f64 * 25.0 + 10.0, Y0)]));
    for i in 0..hamlet_n {
        let x = hx + i as f64 * 25.0;
        buildings.push(Building { uuid: format!("B{:04}", buildings.len()), ring: rect(x, Y0 + 10.0, 16.0, 10.0), street: None });
    }

    let mut epcs = Vec::new();
    let mut i = 0;
    while i < buildings.len() {
        let b = &buildings[i];
        let roll = rng.random_range(0..100);
        if roll < 8 {
            i += 1;
            continue;
        }
        let multi = roll < 11 && i + 1 < buildings.len() && buildings[i + 1].street == b.street && b.street.is_some();
        let members: Vec<&Building> = if multi { vec![b, &buildings[i + 1]] } else { vec![b] };
        let nonres = rng.random_bool(0.35);
        let floors = if nonres { rng.random_range(1..=4) } else { rng.random_range(1..=8) };
        let footprint: f64 = members.iter().map(|m| area(&m.ring)).sum();
        let c = centroid(&b.ring);
        // Some certificates only carry a location inside the footprint.
        let uuids = if rng.random_bool(0.05) { Vec::new() } else { members.iter().map(|m| m.uuid.clone()).collect() };
        let address = (b.street.is_some() && rng.random_bool(0.6))
            .then(|| format!("Gata {} nr {}", b.street.unwrap_or(0) + 1, epcs.len() + 1));
        epcs.push(EpcRow {
            epc_id: format!("E{:05}", epcs.len()),
            building_uuids: uuids,
            category: if nonres { "nonresidential" } else { "multifamily" },
            construction_year: construction_year(&mut rng),
            floors,
            heated_floor_area_m2: (footprint * f64::from(floors) * 0.85 * 10.0).round() / 10.0,
            x: c.0,
            y: c.1,
            address,
        });
        i += members.len();
    }
    let bad_epc_lines = vec![
        format!("EBAD1,B0000,multifamily,950,3,100.0,{X0},{Y0},"),
        format!("EBAD2,B0001,multifamily,1950,0,100.0,{X0},{Y0},"),
    ];

    let linked: Vec<&String> = epcs.iter().flat_map(|e| e.building_uuids.iter()).collect();
    let mut national = Vec::new();
    let mut plan = Vec::new();
    for u in &linked {
        match rng.random_range(0..100) {
            0..2 => national.push(u.to_string()),
            2..8 => plan.push(u.to_string()),
            _ => {}
        }
    }
    plan.push("B9999-unknown".into());

    let top = Y0 + strips as f64 * STRIP;
    let band = (top - Y0) / 5.0;
    let income_areas = (0..5)
        .map(|j| {
            let y = Y0 + j as f64 * band;
            (format!("A{j}"), [X0 - 50.0, y, X0 + STREET_LEN + 50.0, y + band], INCOMES[j])
        })
        .collect();
    let slice = (STREET_LEN + 100.0) / 5.0;
    let regions = (0..5)
        .map(|j| {
            let x = X0 - 50.0 + j as f64 * slice;
            (REGION_NAMES[j].to_string(), [x, Y0 - 50.0, x + slice, top + 50.0])
        })
        .collect();

    let mut panoramas = Vec::new();
    for (id, pts) in roads.iter().filter(|r| r.0.starts_with('R')) {
        let (a, b) = (pts[0], pts[1]);
        let steps = ((b.0 - a.0) / 10.0).floor() as usize;
        for s in 0..=steps {
            let year = rng.random_range(2009..=2023);
            let month = rng.random_range(4..=9);
            let capture_date = (!rng.random_bool(0.02)).then(|| NaiveDate::from_ymd_opt(year, month, 1).expect("valid"));
            panoramas.push(Panorama { pano_id: format!("P-{id}-{s:03}"), x: a.0 + s as f64 * 10.0, y: a.1, capture_date });
        }
    }

    Town { buildings, roads, epcs, bad_epc_lines, national, plan, income_areas, regions, panoramas }
}

fn collection(features: Vec<Value>) -> Value {
    json!({
        "type": "FeatureCollection",
        "crs": {"type": "name", "properties": {"name": CRS}},
        "features": features,
    })
}

fn closed(ring: &[(f64, f64)]) -> Vec<[f64; 2]> {
    ring.iter().chain(ring.first()).map(|p| [p.0, p.1]).collect()
}

fn bbox_ring(b: [f64; 4]) -> Vec<(f64, f64)> {
    vec![(b[0], b[1]), (b[2], b[1]), (b[2], b[3]), (b[0], b[3])]
}

fn write_json_pretty(path: &Path, v: &Value) -> Result<(), ArtifactError> {
    artifacts::write_atomic(path, serde_json::to_string_pretty(v).expect("json").as_bytes())
}

fn to_io(e: ArtifactError) -> io::Error {
    io::Error::other(e.to_string())
}

impl Town {
    /// Writes every input plus `config.toml` into `dir` and returns the
    /// config path.
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let fp: Vec<Value> = self
            .buildings
            .iter()
            .map(|b| {
                json!({"type": "Feature", "properties": {"building_uuid": b.uuid},
                       "geometry": {"type": "Polygon", "coordinates": [closed(&b.ring)]}})
            })
            .collect();
        write_json_pretty(&dir.join("footprints.geojson"), &collection(fp)).map_err(to_io)?;
        let roads: Vec<Value> = self
            .roads
            .iter()
            .map(|(id, pts)| {
                let c: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
                json!({"type": "Feature", "properties": {"road_id": id}, "geometry": {"type": "LineString", "coordinates": c}})
            })
            .collect();
        write_json_pretty(&dir.join("roads.geojson"), &collection(roads)).map_err(to_io)?;
        let income: Vec<Value> = self
            .income_areas
            .iter()
            .map(|(id, b, inc)| {
                json!({"type": "Feature", "properties": {"area_id": id, "avg_disposable_income_ksek": inc},
                       "geometry": {"type": "Polygon", "coordinates": [closed(&bbox_ring(*b))]}})
            })
            .collect();
        write_json_pretty(&dir.join("income_areas.geojson"), &collection(income)).map_err(to_io)?;
        let regions: Vec<Value> = self
            .regions
            .iter()
            .map(|(name, b)| {
                json!({"type": "Feature", "properties": {"name": name},
                       "geometry": {"type": "Polygon", "coordinates": [closed(&bbox_ring(*b))]}})
            })
            .collect();
        write_json_pretty(&dir.join("regions.geojson"), &collection(regions)).map_err(to_io)?;

        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["epc_id", "building_uuids", "category", "construction_year", "floors", "heated_floor_area_m2", "x", "y", "address"])?;
        for e in &self.epcs {
            w.write_record([
                e.epc_id.clone(),
                e.building_uuids.join(";"),
                e.category.to_string(),
                e.construction_year.to_string(),
                e.floors.to_string(),
                e.heated_floor_area_m2.to_string(),
                format!("{:.3}", e.x),
                format!("{:.3}", e.y),
                e.address.clone().unwrap_or_default(),
            ])?;
        }
        let mut epc_csv = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        for l in &self.bad_epc_lines {
            epc_csv.extend_from_slice(l.as_bytes());
            epc_csv.push(b'\n');
        }
        artifacts::write_atomic(&dir.join("epcs.csv"), &epc_csv).map_err(to_io)?;

        for (file, source, rows) in
            [("register_national.csv", "national_listed", &self.national), ("register_plan.csv", "plan_protected", &self.plan)]
        {
            let mut body = String::from("building_uuid,source,note\n");
            for u in rows {
                body.push_str(&format!("{u},{source},\n"));
            }
            artifacts::write_atomic(&dir.join(file), body.as_bytes()).map_err(to_io)?;
        }

        let pano_dir = dir.join("panoramas");
        artifacts::write_jsonl(&pano_dir.join(crate::imagery::FixtureImageProvider::MANIFEST), &self.panoramas)
            .map_err(to_io)?;

        let config = r#"[inputs]
footprints = "footprints.geojson"
roads = "roads.geojson"
epcs = "epcs.csv"
registers = ["register_national.csv", "register_plan.csv"]
income_areas = "income_areas.geojson"
regions = "regions.geojson"

[imagery]
provider = "fixture"
fixture_dir = "panoramas"
image_width = 96
image_height = 96
concurrency = 4

[assessor]
provider = "mock"
concurrency = 4

[assessor.mock]
seed = 7
fault_rate = 0.05
"#;
        let path = dir.join("config.toml");
        artifacts::write_atomic(&path, config.as_bytes()).map_err(to_io)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::registry::{load_datasets, DatasetPaths, LoadOptions};

    #[test]
    fn town_has_requested_size_and_loads() {
        let t = synth_town(1, 500);
        assert_eq!(t.buildings.len(), 500);
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = t.write(dir.path()).unwrap();
        let cfg = Config::load(&cfg_path).unwrap();
        let ds = load_datasets(&DatasetPaths::from(&cfg.inputs), LoadOptions { current_year: 2024 }).unwrap();
        assert_eq!(ds.footprints.len(), 500);
        assert_eq!(ds.epcs.len(), t.epcs.len());
        assert_eq!(ds.rejected_rows("epcs"), 2);
        assert_eq!(ds.regions.len(), 5);
    }

    #[test]
    fn seeded() {
        let a = synth_town(3, 200);
        let b = synth_town(3, 200);
        assert_eq!(a.epcs.len(), b.epcs.len());
        assert_eq!(a.buildings[10].ring, b.buildings[10].ring);
    }
}
