//! Loading of the input datasets.
//!
//! Geometric inputs are GeoJSON FeatureCollections that declare a projected
//! CRS through the `crs` member; tabular inputs are UTF-8 CSV with a header
//! row. Rows that fail a type or invariant check are kept in a rejects report
//! with the original row and a reason.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    AreaPolygon, Category, EpcRecord, FootprintRecord, HeritageRegisterEntry, IncomeArea, ProtectionSource, RegionArea,
    RoadPolyline,
};
use crate::geom::Point;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} is not a GeoJSON FeatureCollection: {message}")]
    GeoJson { path: PathBuf, message: String },
    #[error("{path}: malformed CSV: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing CSV column `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("CRS mismatch: {0}")]
    CrsMismatch(String),
    #[error("duplicate epc_id `{0}`")]
    DuplicateEpc(String),
    #[error("no path configured for dataset `{0}`")]
    MissingInput(&'static str),
}

/// A row that failed validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub dataset: String,
    /// 1-based data row (CSV) or feature index (GeoJSON).
    pub row: usize,
    pub reason: String,
    pub original: String,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetPaths {
    pub footprints: Option<PathBuf>,
    pub roads: Option<PathBuf>,
    pub epcs: Option<PathBuf>,
    pub registers: Vec<PathBuf>,
    pub income_areas: Option<PathBuf>,
    pub regions: Option<PathBuf>,
}

impl From<&crate::config::InputPaths> for DatasetPaths {
    fn from(p: &crate::config::InputPaths) -> Self {
        DatasetPaths {
            footprints: p.footprints.clone(),
            roads: p.roads.clone(),
            epcs: p.epcs.clone(),
            registers: p.registers.clone(),
            income_areas: p.income_areas.clone(),
            regions: p.regions.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub current_year: i32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        use chrono::Datelike;
        LoadOptions { current_year: chrono::Utc::now().year() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Datasets {
    /// Declared CRS shared by the geometric inputs.
    pub crs: Option<String>,
    pub epcs: Vec<EpcRecord>,
    pub footprints: Vec<FootprintRecord>,
    pub roads: Vec<RoadPolyline>,
    pub registers: Vec<HeritageRegisterEntry>,
    pub income_areas: Vec<IncomeArea>,
    pub regions: Vec<RegionArea>,
    pub rejects: Vec<Reject>,
    /// Input rows per dataset, for the loaded + rejected = input check.
    pub input_rows: Vec<(String, usize)>,
}

impl Datasets {
    pub fn loaded_rows(&self, dataset: &str) -> usize {
        match dataset {
            "epcs" => self.epcs.len(),
            "footprints" => self.footprints.len(),
            "roads" => self.roads.len(),
            "registers" => self.registers.len(),
            "income_areas" => self.income_areas.len(),
            "regions" => self.regions.len(),
            _ => 0,
        }
    }

    pub fn rejected_rows(&self, dataset: &str) -> usize {
        self.rejects.iter().filter(|r| r.dataset == dataset).count()
    }
}

const GEOGRAPHIC: &[&str] = &["EPSG:4326", "OGC:CRS84", "EPSG:4258", "EPSG:4619", "OGC:CRS83"];

/// Normalises `urn:ogc:def:crs:EPSG::3006` style names to `EPSG:3006`.
fn normalize_crs(name: &str) -> String {
    let n = name.trim();
    if let Some(rest) = n.strip_prefix("urn:ogc:def:crs:") {
        let parts: Vec<&str> = rest.split(':').filter(|s| !s.is_empty()).collect();
        if parts.len() >= 2 {
            return format!("{}:{}", parts[0].to_uppercase(), parts[parts.len() - 1].to_uppercase());
        }
    }
    n.to_uppercase()
}

struct FeatureCollection {
    crs: String,
    features: Vec<Value>,
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn read_collection(path: &Path) -> Result<FeatureCollection, IngestError> {
    let text = read_text(path)?;
    let bad = |message: String| IngestError::GeoJson { path: path.to_path_buf(), message };
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if v.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(bad("top-level type must be FeatureCollection".into()));
    }
    // Absent `crs` means WGS84 longitude/latitude.
    let crs = v
        .pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .map(normalize_crs)
        .unwrap_or_else(|| "OGC:CRS84".to_string());
    let features = match v.get("features") {
        Some(Value::Array(a)) => a.clone(),
        _ => return Err(bad("`features` must be an array".into())),
    };
    Ok(FeatureCollection { crs, features })
}

fn parse_position(v: &Value) -> Result<Point, String> {
    let a = v.as_array().ok_or("position is not an array")?;
    if a.len() < 2 {
        return Err("position needs two coordinates".into());
    }
    let x = a[0].as_f64().ok_or("coordinate is not a number")?;
    let y = a[1].as_f64().ok_or("coordinate is not a number")?;
    Ok(Point::new(x, y))
}

fn parse_line(v: &Value) -> Result<Vec<Point>, String> {
    v.as_array().ok_or("coordinates are not an array")?.iter().map(parse_position).collect()
}

/// Exterior rings of a Polygon or MultiPolygon geometry.
fn exterior_rings(geometry: &Value) -> Result<Vec<Vec<Point>>, String> {
    let kind = geometry.get("type").and_then(Value::as_str).ok_or("geometry without type")?;
    let coords = geometry.get("coordinates").ok_or("geometry without coordinates")?;
    let polygon_exterior = |c: &Value| -> Result<Vec<Point>, String> {
        let rings = c.as_array().ok_or("polygon coordinates are not an array")?;
        let ext = rings.first().ok_or("polygon without exterior ring")?;
        let mut ring = parse_line(ext)?;
        if ring.len() >= 2 && ring.first() == ring.last() {
            ring.pop();
        }
        Ok(ring)
    };
    match kind {
        "Polygon" => Ok(vec![polygon_exterior(coords)?]),
        "MultiPolygon" => coords
            .as_array()
            .ok_or("multipolygon coordinates are not an array")?
            .iter()
            .map(polygon_exterior)
            .collect(),
        other => Err(format!("expected Polygon geometry, found {other}")),
    }
}

fn prop_str(feature: &Value, key: &str) -> Result<String, String> {
    match feature.pointer(&format!("/properties/{key}")) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        _ => Err(format!("missing property `{key}`")),
    }
}

fn prop_f64(feature: &Value, key: &str) -> Result<f64, String> {
    match feature.pointer(&format!("/properties/{key}")) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| format!("property `{key}` is not a number")),
        Some(Value::String(s)) => s.trim().parse().map_err(|_| format!("property `{key}` is not a number")),
        _ => Err(format!("missing property `{key}`")),
    }
}

fn geometry(feature: &Value) -> Result<&Value, String> {
    feature.get("geometry").filter(|g| !g.is_null()).ok_or_else(|| "feature without geometry".to_string())
}

/// Parses every feature of a collection, collecting failures as rejects.
fn parse_features<T>(
    dataset: &str,
    fc: &FeatureCollection,
    rejects: &mut Vec<Reject>,
    mut parse: impl FnMut(&Value) -> Result<T, String>,
) -> Vec<T> {
    let mut out = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.iter().enumerate() {
        match parse(f) {
            Ok(t) => out.push(t),
            Err(reason) => rejects.push(Reject {
                dataset: dataset.to_string(),
                row: i + 1,
                reason,
                original: f.to_string(),
            }),
        }
    }
    out
}

fn parse_footprint(f: &Value) -> Result<FootprintRecord, String> {
    let uuid = prop_str(f, "building_uuid")?;
    let mut rings = exterior_rings(geometry(f)?)?;
    if rings.len() != 1 {
        return Err(format!("footprint must be a single polygon, found {}", rings.len()));
    }
    FootprintRecord::new(uuid, rings.remove(0))
}

fn parse_road(f: &Value) -> Result<RoadPolyline, String> {
    let id = prop_str(f, "road_id")?;
    let g = geometry(f)?;
    match g.get("type").and_then(Value::as_str) {
        Some("LineString") => RoadPolyline::new(id, parse_line(g.get("coordinates").ok_or("geometry without coordinates")?)?),
        Some(other) => Err(format!("expected LineString geometry, found {other}")),
        None => Err("geometry without type".into()),
    }
}

fn parse_income(f: &Value) -> Result<IncomeArea, String> {
    let area_id = prop_str(f, "area_id")?;
    let income = prop_f64(f, "avg_disposable_income_ksek")?;
    if !(income.is_finite() && income > 0.0) {
        return Err("invariant: avg_disposable_income_ksek > 0".into());
    }
    let rings = exterior_rings(geometry(f)?)?;
    Ok(IncomeArea { area_id, polygon: AreaPolygon { rings }, avg_disposable_income_ksek: income })
}

fn parse_region(f: &Value) -> Result<RegionArea, String> {
    let name = prop_str(f, "name")?;
    let rings = exterior_rings(geometry(f)?)?;
    Ok(RegionArea { name, polygon: AreaPolygon { rings } })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(file))
}

fn record_to_line(rec: &csv::StringRecord) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    w.write_record(rec).expect("in-memory write");
    let bytes = w.into_inner().expect("in-memory flush");
    String::from_utf8_lossy(&bytes).trim_end().to_string()
}

fn column(headers: &csv::StringRecord, path: &Path, name: &'static str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or(IngestError::MissingColumn { path: path.to_path_buf(), column: name })
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str, String> {
    rec.get(idx).ok_or_else(|| format!("missing value for `{name}`"))
}

fn parse_epc_row(rec: &csv::StringRecord, cols: &EpcColumns, current_year: i32) -> Result<EpcRecord, String> {
    let epc_id = field(rec, cols.epc_id, "epc_id")?.to_string();
    if epc_id.is_empty() {
        return Err("invariant: epc_id non-empty".into());
    }
    let building_uuids: Vec<String> = field(rec, cols.building_uuids, "building_uuids")?
        .split(';')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let category: Category = field(rec, cols.category, "category")?.parse()?;
    let construction_year: i32 = field(rec, cols.construction_year, "construction_year")?
        .parse()
        .map_err(|_| "type: construction_year is not an integer".to_string())?;
    if !(1000..=current_year).contains(&construction_year) {
        return Err(format!("invariant: 1000 ≤ construction_year ≤ {current_year}"));
    }
    let floors: i64 = field(rec, cols.floors, "floors")?.parse().map_err(|_| "type: floors is not an integer".to_string())?;
    if floors < 1 {
        return Err("invariant: floors ≥ 1".into());
    }
    let area: f64 = field(rec, cols.area, "heated_floor_area_m2")?
        .parse()
        .map_err(|_| "type: heated_floor_area_m2 is not a number".to_string())?;
    if !(area.is_finite() && area >= 0.0) {
        return Err("invariant: heated_floor_area_m2 ≥ 0".into());
    }
    let x: f64 = field(rec, cols.x, "x")?.parse().map_err(|_| "type: x is not a number".to_string())?;
    let y: f64 = field(rec, cols.y, "y")?.parse().map_err(|_| "type: y is not a number".to_string())?;
    let address = cols.address.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()).map(str::to_string);
    Ok(EpcRecord {
        epc_id,
        building_uuids,
        category,
        construction_year,
        floors: floors as u32,
        heated_floor_area_m2: area,
        centroid: Point::new(x, y),
        address,
    })
}

struct EpcColumns {
    epc_id: usize,
    building_uuids: usize,
    category: usize,
    construction_year: usize,
    floors: usize,
    area: usize,
    x: usize,
    y: usize,
    address: Option<usize>,
}

/// Parses the certificate CSV. Columns: `epc_id, building_uuids` (semicolon
/// separated), `category, construction_year, floors, heated_floor_area_m2, x,
/// y` and an optional `address`.
pub fn parse_epc_csv(
    path: &Path,
    opts: LoadOptions,
    rejects: &mut Vec<Reject>,
) -> Result<(Vec<EpcRecord>, usize), IngestError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?.clone();
    let cols = EpcColumns {
        epc_id: column(&headers, path, "epc_id")?,
        building_uuids: column(&headers, path, "building_uuids")?,
        category: column(&headers, path, "category")?,
        construction_year: column(&headers, path, "construction_year")?,
        floors: column(&headers, path, "floors")?,
        area: column(&headers, path, "heated_floor_area_m2")?,
        x: column(&headers, path, "x")?,
        y: column(&headers, path, "y")?,
        address: headers.iter().position(|h| h == "address"),
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
        rows += 1;
        match parse_epc_row(&rec, &cols, opts.current_year) {
            Ok(epc) => {
                if !seen.insert(epc.epc_id.clone()) {
                    return Err(IngestError::DuplicateEpc(epc.epc_id));
                }
                out.push(epc);
            }
            Err(reason) => rejects.push(Reject {
                dataset: "epcs".into(),
                row: i + 1,
                reason,
                original: record_to_line(&rec),
            }),
        }
    }
    Ok((out, rows))
}

/// Parses a protection register CSV with columns `building_uuid, source, note`.
pub fn parse_register_csv(
    path: &Path,
    rejects: &mut Vec<Reject>,
) -> Result<(Vec<HeritageRegisterEntry>, usize), IngestError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?.clone();
    let uuid_col = column(&headers, path, "building_uuid")?;
    let source_col = column(&headers, path, "source")?;
    let note_col = headers.iter().position(|h| h == "note");
    let mut out = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
        rows += 1;
        let parsed = (|| -> Result<HeritageRegisterEntry, String> {
            let building_uuid = field(&rec, uuid_col, "building_uuid")?.to_string();
            if building_uuid.is_empty() {
                return Err("invariant: building_uuid non-empty".into());
            }
            let source: ProtectionSource = field(&rec, source_col, "source")?.parse()?;
            let note = note_col.and_then(|c| rec.get(c)).unwrap_or("").to_string();
            Ok(HeritageRegisterEntry { building_uuid, source, note })
        })();
        match parsed {
            Ok(e) => out.push(e),
            Err(reason) => rejects.push(Reject {
                dataset: "registers".into(),
                row: i + 1,
                reason,
                original: record_to_line(&rec),
            }),
        }
    }
    Ok((out, rows))
}

fn check_crs(crs_seen: &mut [(String, String)]) -> Result<Option<String>, IngestError> {
    for (name, crs) in crs_seen.iter() {
        if GEOGRAPHIC.contains(&crs.as_str()) {
            let others: Vec<String> = crs_seen.iter().filter(|(n, _)| n != name).map(|(n, c)| format!("{n}={c}")).collect();
            return Err(IngestError::CrsMismatch(format!(
                "{name} is in geographic CRS {crs}; all geometric inputs must share one projected metric CRS{}",
                if others.is_empty() { String::new() } else { format!(" (others: {})", others.join(", ")) }
            )));
        }
    }
    if let Some((first_name, first)) = crs_seen.first() {
        for (name, crs) in crs_seen.iter().skip(1) {
            if crs != first {
                return Err(IngestError::CrsMismatch(format!("{first_name} is {first} but {name} is {crs}")));
            }
        }
        return Ok(Some(first.clone()));
    }
    Ok(None)
}

/// Loads every configured dataset. Footprints, roads and certificates are
/// required; registers, income areas and regions are optional.
pub fn load_datasets(paths: &DatasetPaths, opts: LoadOptions) -> Result<Datasets, IngestError> {
    let mut ds = Datasets::default();
    let mut crs_seen = Vec::new();

    let fp_path = paths.footprints.as_deref().ok_or(IngestError::MissingInput("footprints"))?;
    let fc = read_collection(fp_path)?;
    crs_seen.push(("footprints".to_string(), fc.crs.clone()));
    ds.input_rows.push(("footprints".into(), fc.features.len()));
    ds.footprints = parse_features("footprints", &fc, &mut ds.rejects, parse_footprint);

    let road_path = paths.roads.as_deref().ok_or(IngestError::MissingInput("roads"))?;
    let fc = read_collection(road_path)?;
    crs_seen.push(("roads".to_string(), fc.crs.clone()));
    ds.input_rows.push(("roads".into(), fc.features.len()));
    ds.roads = parse_features("roads", &fc, &mut ds.rejects, parse_road);

    if let Some(p) = &paths.income_areas {
        let fc = read_collection(p)?;
        crs_seen.push(("income_areas".to_string(), fc.crs.clone()));
        ds.input_rows.push(("income_areas".into(), fc.features.len()));
        ds.income_areas = parse_features("income_areas", &fc, &mut ds.rejects, parse_income);
    }
    if let Some(p) = &paths.regions {
        let fc = read_collection(p)?;
        crs_seen.push(("regions".to_string(), fc.crs.clone()));
        ds.input_rows.push(("regions".into(), fc.features.len()));
        ds.regions = parse_features("regions", &fc, &mut ds.rejects, parse_region);
    }
    ds.crs = check_crs(&mut crs_seen)?;

    // Duplicate footprint ids would make the UUID join ambiguous.
    let mut seen = HashSet::new();
    let mut dupes = Vec::new();
    ds.footprints.retain(|f| {
        if seen.insert(f.building_uuid.clone()) {
            true
        } else {
            dupes.push(f.building_uuid.clone());
            false
        }
    });
    for d in dupes {
        ds.rejects.push(Reject {
            dataset: "footprints".into(),
            row: 0,
            reason: "invariant: building_uuid unique".into(),
            original: d,
        });
    }

    let epc_path = paths.epcs.as_deref().ok_or(IngestError::MissingInput("epcs"))?;
    let (epcs, rows) = parse_epc_csv(epc_path, opts, &mut ds.rejects)?;
    ds.epcs = epcs;
    ds.input_rows.push(("epcs".into(), rows));

    let mut reg_rows = 0;
    for p in &paths.registers {
        let (entries, rows) = parse_register_csv(p, &mut ds.rejects)?;
        ds.registers.extend(entries);
        reg_rows += rows;
    }
    ds.input_rows.push(("registers".into(), reg_rows));
    Ok(ds)
}

/// Writes the rejects report: dataset, row, reason and the original row.
pub fn write_rejects_csv<W: std::io::Write>(rejects: &[Reject], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "row", "reason", "original"])?;
    for r in rejects {
        w.write_record([r.dataset.as_str(), &r.row.to_string(), r.reason.as_str(), r.original.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crs_names_normalised() {
        assert_eq!(normalize_crs("urn:ogc:def:crs:EPSG::3006"), "EPSG:3006");
        assert_eq!(normalize_crs("urn:ogc:def:crs:OGC:1.3:CRS84"), "OGC:CRS84");
        assert_eq!(normalize_crs("epsg:3006"), "EPSG:3006");
    }

    #[test]
    fn geographic_crs_rejected() {
        let mut seen = vec![("footprints".to_string(), "EPSG:4326".to_string()), ("roads".to_string(), "EPSG:3006".to_string())];
        assert!(matches!(check_crs(&mut seen), Err(IngestError::CrsMismatch(_))));
        let mut seen = vec![("footprints".to_string(), "EPSG:3006".to_string()), ("roads".to_string(), "EPSG:3021".to_string())];
        assert!(matches!(check_crs(&mut seen), Err(IngestError::CrsMismatch(_))));
        let mut seen = vec![("footprints".to_string(), "EPSG:3006".to_string()), ("roads".to_string(), "EPSG:3006".to_string())];
        assert_eq!(check_crs(&mut seen).unwrap().as_deref(), Some("EPSG:3006"));
    }
}
