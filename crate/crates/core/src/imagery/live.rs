//! HTTP provider for a street-level imagery service with a metadata endpoint
//! (coverage and capture date) and a static image endpoint.

use std::time::Duration;

use chrono::NaiveDate;
use proj4rs::proj::Proj;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;

use super::{CoverageResult, FetchedImage, ImageError, ImageProvider, ImageRequest, ProviderKind};
use crate::config::LiveImageryConfig;
use crate::geom::Point;

const WGS84: &str = "+proj=longlat +ellps=WGS84 +datum=WGS84 +no_defs";

pub struct LiveImageProvider {
    cfg: LiveImageryConfig,
    key: String,
    src: Proj,
    dst: Proj,
    client: Client,
}

#[derive(Debug, Deserialize)]
struct Metadata {
    status: String,
    #[serde(default)]
    date: Option<String>,
}

impl LiveImageProvider {
    pub fn new(cfg: &LiveImageryConfig) -> Result<Self, ImageError> {
        let key = std::env::var(&cfg.key_env)
            .map_err(|_| ImageError::Permanent(format!("environment variable {} is not set", cfg.key_env)))?;
        let src = Proj::from_proj_string(&cfg.source_proj)
            .map_err(|e| ImageError::Permanent(format!("source_proj: {e}")))?;
        let dst = Proj::from_proj_string(WGS84).expect("valid WGS84 definition");
        let timeout = Duration::from_secs(if cfg.timeout_s == 0 { 30 } else { cfg.timeout_s });
        let client = Client::builder().timeout(timeout).build().map_err(|e| ImageError::Permanent(e.to_string()))?;
        Ok(LiveImageProvider { cfg: cfg.clone(), key, src, dst, client })
    }

    /// Projected point to "lat,lng" in degrees.
    fn location(&self, p: Point) -> Result<String, ImageError> {
        let (lng, lat) = proj4rs::adaptors::transform_xy(&self.src, &self.dst, p.x, p.y)
            .map_err(|e| ImageError::Permanent(format!("coordinate transform: {e}")))?;
        Ok(format!("{:.7},{:.7}", lat.to_degrees(), lng.to_degrees()))
    }

    fn get(&self, url: &str, query: &[(String, String)]) -> Result<reqwest::blocking::Response, ImageError> {
        let resp = self.client.get(url).query(query).send().map_err(|e| ImageError::Transient(e.to_string()))?;
        classify(resp.status())?;
        Ok(resp)
    }
}

fn classify(status: StatusCode) -> Result<(), ImageError> {
    if status.is_success() {
        Ok(())
    } else if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        Err(ImageError::Transient(format!("HTTP {status}")))
    } else if status == StatusCode::NOT_FOUND {
        Err(ImageError::NotFound(format!("HTTP {status}")))
    } else {
        Err(ImageError::Permanent(format!("HTTP {status}")))
    }
}

/// Accepts "YYYY-MM" or "YYYY-MM-DD".
pub(crate) fn parse_capture_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").ok())
}

impl ImageProvider for LiveImageProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn snapshot_id(&self) -> String {
        format!("live:{}", self.cfg.image_url)
    }

    fn coverage(&self, point: Point, radius_m: f64) -> Result<CoverageResult, ImageError> {
        let p = &self.cfg.params;
        let q = vec![
            (p.location.clone(), self.location(point)?),
            (p.radius.clone(), format!("{}", radius_m.round() as i64)),
            (p.key.clone(), self.key.clone()),
        ];
        let meta: Metadata = self
            .get(&self.cfg.metadata_url, &q)?
            .json()
            .map_err(|e| ImageError::Transient(format!("metadata body: {e}")))?;
        match meta.status.as_str() {
            "OK" => Ok(CoverageResult {
                available: true,
                nearest_capture_date: meta.date.as_deref().and_then(parse_capture_date),
            }),
            "ZERO_RESULTS" | "NOT_FOUND" => Ok(CoverageResult { available: false, nearest_capture_date: None }),
            "OVER_QUERY_LIMIT" | "UNKNOWN_ERROR" => Err(ImageError::Transient(meta.status)),
            other => Err(ImageError::Permanent(other.to_string())),
        }
    }

    fn fetch(&self, request: &ImageRequest, _pose_hash: &str) -> Result<FetchedImage, ImageError> {
        let coverage = self.coverage(request.camera_point, 50.0)?;
        if !coverage.available {
            return Err(ImageError::NotFound("no imagery at camera point".into()));
        }
        let p = &self.cfg.params;
        let q = vec![
            (p.location.clone(), self.location(request.camera_point)?),
            (p.heading.clone(), format!("{:.2}", request.heading_deg)),
            (p.pitch.clone(), format!("{:.2}", request.pitch_deg)),
            (p.fov.clone(), format!("{:.2}", request.fov_deg)),
            (p.size.clone(), format!("{}x{}", request.width, request.height)),
            (p.key.clone(), self.key.clone()),
        ];
        let resp = self.get(&self.cfg.image_url, &q)?;
        let extension = match resp.headers().get(reqwest::header::CONTENT_TYPE).and_then(|v| v.to_str().ok()) {
            Some(t) if t.contains("png") => "png",
            _ => "jpg",
        };
        let bytes = resp.bytes().map_err(|e| ImageError::Transient(e.to_string()))?.to_vec();
        Ok(FetchedImage { bytes, extension: extension.into(), capture_date: coverage.nearest_capture_date })
    }
}
