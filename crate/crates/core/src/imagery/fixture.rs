//! Offline provider backed by a panorama manifest; images are either read from
//! disk or synthesised deterministically from the pose hash.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};

use chrono::NaiveDate;
use image::{ImageBuffer, ImageFormat, Rgb};
use serde::{Deserialize, Serialize};

use super::{CoverageResult, FetchedImage, ImageError, ImageProvider, ImageRequest, ProviderKind};
use crate::artifacts;
use crate::geom::Point;
use crate::index::GridIndex;
use crate::geom::BBox;

/// One street-level capture location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panorama {
    pub pano_id: String,
    pub x: f64,
    pub y: f64,
    pub capture_date: Option<NaiveDate>,
}

pub struct FixtureImageProvider {
    panoramas: Vec<Panorama>,
    index: GridIndex,
    snap_radius_m: f64,
    image_dir: Option<PathBuf>,
    snapshot: String,
    transient_failures: AtomicU32,
}

impl FixtureImageProvider {
    pub const MANIFEST: &'static str = "panoramas.jsonl";

    pub fn new(panoramas: Vec<Panorama>, snap_radius_m: f64) -> Self {
        let boxes = panoramas.iter().map(|p| BBox::of(&[Point::new(p.x, p.y)]).expect("one point")).collect();
        let bytes = artifacts::to_jsonl(&panoramas);
        FixtureImageProvider {
            index: GridIndex::new(boxes, 100.0),
            panoramas,
            snap_radius_m,
            image_dir: None,
            snapshot: format!("fixture:{}", &artifacts::sha256_hex(&bytes)[..16]),
            transient_failures: AtomicU32::new(0),
        }
    }

    /// Loads `<dir>/panoramas.jsonl`; pre-rendered images are looked up as
    /// `<dir>/images/<pose-hash>.png`.
    pub fn open(dir: &Path, snap_radius_m: f64) -> Result<Self, artifacts::ArtifactError> {
        let panos = artifacts::read_jsonl(&dir.join(Self::MANIFEST))?;
        let mut p = Self::new(panos, snap_radius_m);
        p.image_dir = Some(dir.join("images"));
        Ok(p)
    }

    /// The next `n` provider calls fail with a transient error.
    pub fn inject_transient_failures(&self, n: u32) {
        self.transient_failures.store(n, Ordering::SeqCst);
    }

    fn maybe_fail(&self) -> Result<(), ImageError> {
        let prev = self
            .transient_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .unwrap_or(0);
        if prev > 0 {
            return Err(ImageError::Transient("injected failure".into()));
        }
        Ok(())
    }

    fn nearest(&self, p: Point, radius: f64) -> Option<&Panorama> {
        let q = BBox { min: Point::new(p.x - radius, p.y - radius), max: Point::new(p.x + radius, p.y + radius) };
        self.index
            .query(&q)
            .into_iter()
            .map(|i| &self.panoramas[i])
            .map(|pano| (p.dist(Point::new(pano.x, pano.y)), pano))
            .filter(|(d, _)| *d <= radius)
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.pano_id.cmp(&b.1.pano_id)))
            .map(|(_, pano)| pano)
    }
}

impl ImageProvider for FixtureImageProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Fixture
    }

    fn snapshot_id(&self) -> String {
        self.snapshot.clone()
    }

    fn coverage(&self, point: Point, radius_m: f64) -> Result<CoverageResult, ImageError> {
        self.maybe_fail()?;
        Ok(match self.nearest(point, radius_m) {
            Some(p) => CoverageResult { available: true, nearest_capture_date: p.capture_date },
            None => CoverageResult { available: false, nearest_capture_date: None },
        })
    }

    fn fetch(&self, request: &ImageRequest, pose_hash: &str) -> Result<FetchedImage, ImageError> {
        self.maybe_fail()?;
        let pano = self
            .nearest(request.camera_point, self.snap_radius_m)
            .ok_or_else(|| ImageError::NotFound("no panorama within snap radius".into()))?;
        if let Some(dir) = &self.image_dir {
            let f = dir.join(format!("{pose_hash}.png"));
            if f.is_file() {
                let bytes = std::fs::read(&f).map_err(|e| ImageError::Permanent(format!("{}: {e}", f.display())))?;
                return Ok(FetchedImage { bytes, extension: "png".into(), capture_date: pano.capture_date });
            }
        }
        Ok(FetchedImage {
            bytes: synthesize_png(pose_hash, request.width, request.height),
            extension: "png".into(),
            capture_date: pano.capture_date,
        })
    }
}

/// Deterministic placeholder façade: sky, a wall colour and a window grid
/// derived from the hash bytes.
pub fn synthesize_png(pose_hash: &str, width: u32, height: u32) -> Vec<u8> {
    let seed = artifacts::sha256_hex(pose_hash.as_bytes());
    let b = hex::decode(seed).expect("hex digest");
    let wall = Rgb([b[0] / 2 + 100, b[1] / 2 + 60, b[2] / 2 + 40]);
    let sky = Rgb([170, 200, 230]);
    let glass = Rgb([40, 50, 70]);
    let cols = 3 + (b[3] % 5) as u32;
    let rows = 2 + (b[4] % 4) as u32;
    let roof = height / 5 + (b[5] as u32 % (height / 5).max(1));
    let img = ImageBuffer::from_fn(width.max(1), height.max(1), |x, y| {
        if y < roof {
            return sky;
        }
        let cw = (width / cols).max(1);
        let rh = ((height - roof) / rows).max(1);
        let (cx, cy) = (x % cw, (y - roof) % rh);
        if cx > cw / 4 && cx < 3 * cw / 4 && cy > rh / 4 && cy < 3 * rh / 4 {
            glass
        } else {
            wall
        }
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encode to memory");
    out.into_inner()
}
