//! Street-level image source: coverage queries, façade image retrieval by
//! camera pose, a content-addressed cache, and coverage statistics.

mod fixture;
mod live;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, ArtifactError, JsonlAppender};
use crate::exec::{parallel_map, RetryPolicy, Retryable, TokenBucket};
use crate::geom::Point;
use crate::viewgeom::CameraPose;

pub use fixture::{synthesize_png, FixtureImageProvider, Panorama};
pub use live::LiveImageProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("no image: {0}")]
    NotFound(String),
    #[error("provider error: {0}")]
    Permanent(String),
}

impl Retryable for ImageError {
    fn is_transient(&self) -> bool {
        matches!(self, ImageError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub available: bool,
    pub nearest_capture_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedImage {
    pub bytes: Vec<u8>,
    pub extension: String,
    pub capture_date: Option<NaiveDate>,
}

/// Parameters every provider request is derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRequest {
    pub camera_point: Point,
    pub heading_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl ImageRequest {
    pub fn from_pose(pose: &CameraPose, width: u32, height: u32) -> Self {
        ImageRequest {
            camera_point: pose.camera_point,
            heading_deg: pose.heading_deg,
            pitch_deg: pose.pitch_deg,
            fov_deg: pose.fov_deg,
            width,
            height,
        }
    }

    /// Canonical text form: centimetre positions, hundredth-degree angles.
    pub fn canonical(&self, snapshot: &str) -> String {
        format!(
            "x={:.2};y={:.2};heading={:.2};pitch={:.2};fov={:.2};size={}x{};provider={}",
            self.camera_point.x,
            self.camera_point.y,
            self.heading_deg,
            self.pitch_deg,
            self.fov_deg,
            self.width,
            self.height,
            snapshot
        )
    }

    pub fn pose_hash(&self, snapshot: &str) -> String {
        artifacts::sha256_hex(self.canonical(snapshot).as_bytes())
    }
}

pub trait ImageProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    /// Identifies the provider's data state; part of every pose hash.
    fn snapshot_id(&self) -> String;
    fn coverage(&self, point: Point, radius_m: f64) -> Result<CoverageResult, ImageError>;
    fn fetch(&self, request: &ImageRequest, pose_hash: &str) -> Result<FetchedImage, ImageError>;
}

/// One cached image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Pose hash; also the cache file stem.
    pub image_id: String,
    pub file: String,
    pub camera_point: Point,
    pub heading_deg: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
    pub capture_date: Option<NaiveDate>,
    pub provider: ProviderKind,
    pub content_sha256: String,
}

/// Content-addressed image cache: `<dir>/<pose-hash>.<ext>` plus `manifest.jsonl`.
pub struct ImageCache {
    dir: PathBuf,
    index: Mutex<HashMap<String, ImageRecord>>,
    manifest: JsonlAppender,
}

impl ImageCache {
    pub fn open(dir: &Path) -> Result<Self, ArtifactError> {
        let (manifest, existing) = JsonlAppender::open::<ImageRecord>(&dir.join("manifest.jsonl"))?;
        let mut index = HashMap::new();
        for r in existing {
            if dir.join(&r.file).is_file() {
                index.insert(r.image_id.clone(), r);
            }
        }
        Ok(ImageCache { dir: dir.to_path_buf(), index: Mutex::new(index), manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, image_id: &str) -> Option<ImageRecord> {
        self.index.lock().expect("cache poisoned").get(image_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores image bytes; concurrent writers of the same id are last-writer-wins
    /// on identical content and the manifest keeps one line per id.
    pub fn put(&self, record: ImageRecord, bytes: &[u8]) -> Result<ImageRecord, ArtifactError> {
        artifacts::write_atomic(&self.dir.join(&record.file), bytes)?;
        let mut idx = self.index.lock().expect("cache poisoned");
        if let Some(existing) = idx.get(&record.image_id) {
            return Ok(existing.clone());
        }
        self.manifest.append(&record)?;
        idx.insert(record.image_id.clone(), record.clone());
        Ok(record)
    }

    pub fn read_bytes(&self, record: &ImageRecord) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.dir.join(&record.file))
    }
}

/// Coverage query with retries. Exhausted retries count as unavailable and
/// the error text is returned alongside.
pub fn check_coverage(
    point: Point,
    radius_m: f64,
    provider: &dyn ImageProvider,
    policy: &RetryPolicy,
) -> (CoverageResult, Option<String>) {
    match policy.run(|_| provider.coverage(point, radius_m)) {
        Ok(r) => (r, None),
        Err((e, _)) => (CoverageResult { available: false, nearest_capture_date: None }, Some(e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchFailure {
    #[error("no usable image: {0}")]
    NoUsableImage(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("cache write failed: {0}")]
    Cache(String),
}

/// Fetches (or reuses) the image for a pose.
pub fn fetch_facade_image(
    pose: &CameraPose,
    provider: &dyn ImageProvider,
    cache: &ImageCache,
    policy: &RetryPolicy,
    size: (u32, u32),
) -> Result<ImageRecord, FetchFailure> {
    let request = ImageRequest::from_pose(pose, size.0, size.1);
    let hash = request.pose_hash(&provider.snapshot_id());
    if let Some(hit) = cache.get(&hash) {
        return Ok(hit);
    }
    let img = policy.run(|_| provider.fetch(&request, &hash)).map_err(|(e, attempts)| match e {
        ImageError::NotFound(m) | ImageError::Permanent(m) => FetchFailure::NoUsableImage(m),
        ImageError::Transient(message) => FetchFailure::Transport { attempts, message },
    })?;
    let record = ImageRecord {
        image_id: hash.clone(),
        file: format!("{hash}.{}", img.extension),
        camera_point: request.camera_point,
        heading_deg: request.heading_deg,
        pitch_deg: request.pitch_deg,
        fov_deg: request.fov_deg,
        capture_date: img.capture_date,
        provider: provider.kind(),
        content_sha256: artifacts::sha256_hex(&img.bytes),
    };
    cache.put(record, &img.bytes).map_err(|e| FetchFailure::Cache(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingCoverage {
    pub building_uuid: String,
    pub available: bool,
    pub nearest_capture_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    NoUsableImage,
    TransportFailed,
}

/// Result of fetching one viewpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchOutcome {
    pub building_uuid: String,
    pub wall_id: u32,
    pub epc_id: Option<String>,
    pub status: FetchStatus,
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Queries coverage at each footprint centroid, in parallel.
pub fn query_coverage(
    buildings: &[(String, Point)],
    radius_m: f64,
    provider: &dyn ImageProvider,
    policy: &RetryPolicy,
    concurrency: usize,
    limiter: &TokenBucket,
) -> Vec<BuildingCoverage> {
    parallel_map(buildings, concurrency, |(uuid, c)| {
        limiter.acquire();
        let (r, error) = check_coverage(*c, radius_m, provider, policy);
        BuildingCoverage {
            building_uuid: uuid.clone(),
            available: r.available,
            nearest_capture_date: r.nearest_capture_date,
            error,
        }
    })
}

/// Fetches every pose whose building has coverage; uncovered buildings are
/// recorded as having no usable image without a provider call.
#[allow(clippy::too_many_arguments)]
pub fn fetch_all(
    poses: &[CameraPose],
    coverage: &[BuildingCoverage],
    provider: &dyn ImageProvider,
    cache: &ImageCache,
    policy: &RetryPolicy,
    size: (u32, u32),
    concurrency: usize,
    limiter: &TokenBucket,
) -> Vec<FetchOutcome> {
    let covered: HashMap<&str, bool> = coverage.iter().map(|c| (c.building_uuid.as_str(), c.available)).collect();
    parallel_map(poses, concurrency, |pose| {
        let base = FetchOutcome {
            building_uuid: pose.target_building_uuid.clone(),
            wall_id: pose.target_wall_id,
            epc_id: pose.epc_id.clone(),
            status: FetchStatus::NoUsableImage,
            image_id: None,
            detail: None,
        };
        if !covered.get(pose.target_building_uuid.as_str()).copied().unwrap_or(false) {
            return FetchOutcome { detail: Some("no coverage within radius".into()), ..base };
        }
        limiter.acquire();
        match fetch_facade_image(pose, provider, cache, policy, size) {
            Ok(rec) => FetchOutcome { status: FetchStatus::Ok, image_id: Some(rec.image_id), ..base },
            Err(FetchFailure::NoUsableImage(m)) => FetchOutcome { detail: Some(m), ..base },
            Err(e) => FetchOutcome { status: FetchStatus::TransportFailed, detail: Some(e.to_string()), ..base },
        }
    })
}

/// Buildings split into those with at least one image and those without.
pub fn image_states(building_uuids: &[String], outcomes: &[FetchOutcome]) -> (BTreeSet<String>, BTreeSet<String>) {
    let with: BTreeSet<String> = outcomes
        .iter()
        .filter(|o| o.status == FetchStatus::Ok)
        .map(|o| o.building_uuid.clone())
        .filter(|u| building_uuids.contains(u))
        .collect();
    let without = building_uuids.iter().filter(|u| !with.contains(*u)).cloned().collect();
    (with, without)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub buildings: usize,
    pub covered: usize,
    /// `None` when no building was queried.
    pub pct_within_radius: Option<f64>,
    pub by_capture_year: BTreeMap<i32, usize>,
    pub pct_by_capture_year: BTreeMap<i32, f64>,
    pub undated: usize,
}

pub fn coverage_report(results: &[BuildingCoverage]) -> CoverageStats {
    let buildings = results.len();
    let covered = results.iter().filter(|r| r.available).count();
    let mut by_year = BTreeMap::new();
    let mut undated = 0;
    for r in results.iter().filter(|r| r.available) {
        match r.nearest_capture_date {
            Some(d) => *by_year.entry(d.year()).or_insert(0) += 1,
            None => undated += 1,
        }
    }
    let pct_by_year = by_year.iter().map(|(&y, &n)| (y, 100.0 * n as f64 / covered as f64)).collect();
    CoverageStats {
        buildings,
        covered,
        pct_within_radius: (buildings > 0).then(|| 100.0 * covered as f64 / buildings as f64),
        by_capture_year: by_year,
        pct_by_capture_year: pct_by_year,
        undated,
    }
}

impl CoverageStats {
    /// Share of covered buildings captured within `[from, to]`.
    pub fn pct_captured_between(&self, from: i32, to: i32) -> Option<f64> {
        if self.covered == 0 {
            return None;
        }
        let n: usize = self.by_capture_year.range(from..=to).map(|(_, n)| n).sum();
        Some(100.0 * n as f64 / self.covered as f64)
    }

    pub fn to_markdown(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |p| format!("{p:.1}%"));
        let mut s = String::new();
        s.push_str("| Measure | Value |\n|---|---|\n");
        s.push_str(&format!("| Buildings queried | {} |\n", self.buildings));
        s.push_str(&format!("| Buildings with coverage | {} |\n", self.covered));
        s.push_str(&format!("| Share with coverage | {} |\n", pct(self.pct_within_radius)));
        s.push_str(&format!("| Covered, undated | {} |\n", self.undated));
        s.push_str("\n| Capture year | Buildings | Share of covered |\n|---|---|---|\n");
        for (y, n) in &self.by_capture_year {
            s.push_str(&format!("| {y} | {n} | {} |\n", pct(self.pct_by_capture_year.get(y).copied())));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov(id: &str, available: bool, year: Option<i32>) -> BuildingCoverage {
        BuildingCoverage {
            building_uuid: id.into(),
            available,
            nearest_capture_date: year.map(|y| NaiveDate::from_ymd_opt(y, 6, 1).unwrap()),
            error: None,
        }
    }

    #[test]
    fn coverage_rate_of_433_in_500() {
        let rs: Vec<_> = (0..500).map(|i| cov(&format!("B{i}"), i < 433, Some(2020))).collect();
        let s = coverage_report(&rs);
        assert_eq!(s.covered, 433);
        assert_eq!(format!("{:.1}", s.pct_within_radius.unwrap()), "86.6");
    }

    #[test]
    fn empty_report_renders_na() {
        let s = coverage_report(&[]);
        assert_eq!(s.pct_within_radius, None);
        assert!(s.to_markdown().contains("n/a"));
    }

    #[test]
    fn all_covered_is_100() {
        let rs: Vec<_> = (0..7).map(|i| cov(&format!("B{i}"), true, Some(2016 + i))).collect();
        let s = coverage_report(&rs);
        assert_eq!(s.pct_within_radius, Some(100.0));
        assert_eq!(s.by_capture_year.len(), 7);
        let recent = s.pct_captured_between(2019, 2024).unwrap();
        assert!((recent - 400.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn image_states_partition_buildings() {
        let ids: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let outcomes = vec![
            FetchOutcome {
                building_uuid: "A".into(),
                wall_id: 0,
                epc_id: None,
                status: FetchStatus::Ok,
                image_id: Some("x".into()),
                detail: None,
            },
            FetchOutcome {
                building_uuid: "B".into(),
                wall_id: 0,
                epc_id: None,
                status: FetchStatus::NoUsableImage,
                image_id: None,
                detail: None,
            },
        ];
        let (with, without) = image_states(&ids, &outcomes);
        assert_eq!(with.len() + without.len(), 3);
        assert!(with.contains("A"));
        assert!(without.contains("B") && without.contains("C"));
    }
}
