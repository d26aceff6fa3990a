//! Pipeline configuration.
//!
//! Every numeric threshold the pipeline uses lives in [`PipelineConfig`]; the
//! surrounding [`Config`] adds input paths and provider settings. The on-disk
//! form is TOML with the same field names. Unknown keys are rejected with
//! their full key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

/// Which sightline survives per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViewpointGrouping {
    #[default]
    Wall,
    Building,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_sightline_m: f64,
    /// Search radius for candidate camera points before filtering.
    pub initial_sightline_m: f64,
    pub max_deviation_deg: f64,
    pub floor_height_m: f64,
    pub fov_margin: f64,
    pub fov_min_deg: f64,
    pub fov_max_deg: f64,
    /// Fraction of the estimated height the camera aims at (0.5 = vertical midpoint).
    pub pitch_aim_fraction: f64,
    /// Floors assumed when a building has no matched certificate.
    pub default_floors: u32,
    pub visibility_min: u32,
    pub heritage_threshold: u32,
    /// `true`: a score equal to the threshold qualifies.
    pub threshold_inclusive: bool,
    pub collinear_merge_deg: f64,
    pub match_radius_m: f64,
    pub age_cutoff_year: i32,
    pub default_uncertain_year: i32,
    pub viewpoints_per: ViewpointGrouping,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_sightline_m: 50.0,
            initial_sightline_m: 100.0,
            max_deviation_deg: 3.0,
            floor_height_m: 3.0,
            fov_margin: 1.1,
            fov_min_deg: 10.0,
            fov_max_deg: 120.0,
            pitch_aim_fraction: 0.5,
            default_floors: 2,
            visibility_min: 50,
            heritage_threshold: 50,
            threshold_inclusive: true,
            collinear_merge_deg: 1.0,
            match_radius_m: 25.0,
            age_cutoff_year: 1920,
            default_uncertain_year: 1929,
            viewpoints_per: ViewpointGrouping::Wall,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive: [(&'static str, f64); 11] = [
            ("pipeline.max_sightline_m", self.max_sightline_m),
            ("pipeline.initial_sightline_m", self.initial_sightline_m),
            ("pipeline.max_deviation_deg", self.max_deviation_deg),
            ("pipeline.floor_height_m", self.floor_height_m),
            ("pipeline.fov_margin", self.fov_margin),
            ("pipeline.fov_min_deg", self.fov_min_deg),
            ("pipeline.fov_max_deg", self.fov_max_deg),
            ("pipeline.pitch_aim_fraction", self.pitch_aim_fraction),
            ("pipeline.visibility_min", f64::from(self.visibility_min)),
            ("pipeline.collinear_merge_deg", self.collinear_merge_deg),
            ("pipeline.match_radius_m", self.match_radius_m),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid { key, message: format!("must be positive, got {v}") });
            }
        }
        if self.fov_min_deg >= self.fov_max_deg {
            return Err(ConfigError::Invalid {
                key: "pipeline.fov_min_deg",
                message: format!("must be below fov_max_deg ({} >= {})", self.fov_min_deg, self.fov_max_deg),
            });
        }
        if self.fov_max_deg >= 180.0 {
            return Err(ConfigError::Invalid { key: "pipeline.fov_max_deg", message: "must be below 180".into() });
        }
        if !(1..=100).contains(&self.heritage_threshold) {
            return Err(ConfigError::Invalid {
                key: "pipeline.heritage_threshold",
                message: format!("must lie in [1, 100], got {}", self.heritage_threshold),
            });
        }
        if self.default_floors == 0 {
            return Err(ConfigError::Invalid { key: "pipeline.default_floors", message: "must be at least 1".into() });
        }
        if self.age_cutoff_year <= 0 || self.default_uncertain_year <= 0 {
            return Err(ConfigError::Invalid { key: "pipeline.age_cutoff_year", message: "years must be positive".into() });
        }
        Ok(())
    }

    /// Threshold comparator shared by assignment, share tables and sweeps.
    pub fn meets_threshold(&self, score: u32) -> bool {
        meets(score, self.heritage_threshold, self.threshold_inclusive)
    }
}

pub fn meets(score: u32, threshold: u32, inclusive: bool) -> bool {
    if inclusive {
        score >= threshold
    } else {
        score > threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InputPaths {
    pub footprints: Option<PathBuf>,
    pub roads: Option<PathBuf>,
    pub epcs: Option<PathBuf>,
    pub registers: Vec<PathBuf>,
    pub income_areas: Option<PathBuf>,
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig { max_attempts: 3, base_delay_ms: 250 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImageProviderKind {
    #[default]
    Fixture,
    Live,
}

/// Query parameter names sent to the live street-level image service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageParamNames {
    pub location: String,
    pub heading: String,
    pub pitch: String,
    pub fov: String,
    pub radius: String,
    pub size: String,
    pub key: String,
}

impl Default for ImageParamNames {
    fn default() -> Self {
        ImageParamNames {
            location: "location".into(),
            heading: "heading".into(),
            pitch: "pitch".into(),
            fov: "fov".into(),
            radius: "radius".into(),
            size: "size".into(),
            key: "key".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LiveImageryConfig {
    pub metadata_url: String,
    pub image_url: String,
    /// Name of the environment variable holding the API key.
    pub key_env: String,
    /// proj string of the working CRS, used to convert camera points to lat/lng.
    pub source_proj: String,
    pub params: ImageParamNames,
    pub timeout_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageryConfig {
    pub provider: ImageProviderKind,
    pub fixture_dir: Option<PathBuf>,
    pub image_width: u32,
    pub image_height: u32,
    /// Coverage query radius around each footprint centroid.
    pub coverage_radius_m: f64,
    /// Fixture provider: a panorama must lie this close to the camera point.
    pub snap_radius_m: f64,
    pub concurrency: usize,
    /// Requests per second; 0 disables the limiter.
    pub rate_per_sec: f64,
    pub retry: RetryConfig,
    pub live: LiveImageryConfig,
}

impl Default for ImageryConfig {
    fn default() -> Self {
        ImageryConfig {
            provider: ImageProviderKind::Fixture,
            fixture_dir: None,
            image_width: 640,
            image_height: 640,
            coverage_radius_m: 100.0,
            snap_radius_m: 50.0,
            concurrency: 4,
            rate_per_sec: 0.0,
            retry: RetryConfig::default(),
            live: LiveImageryConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelProviderKind {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockModelConfig {
    pub seed: u64,
    /// Share of responses replaced by an injected fault, in [0, 1].
    pub fault_rate: f64,
    /// Modes drawn from when injecting, e.g. `"out_of_range:rarity"`; empty means all.
    pub fault_modes: Vec<String>,
    /// Simulated response latency per call.
    pub latency_ms: u64,
}

impl Default for MockModelConfig {
    fn default() -> Self {
        MockModelConfig { seed: 7, fault_rate: 0.0, fault_modes: Vec::new(), latency_ms: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveModelConfig {
    /// OpenAI-compatible chat completions endpoint.
    pub endpoint: String,
    pub api_key_env: String,
    pub timeout_s: u64,
    pub max_tokens: u32,
}

impl Default for LiveModelConfig {
    fn default() -> Self {
        LiveModelConfig {
            endpoint: String::new(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 120,
            max_tokens: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessorConfig {
    pub provider: ModelProviderKind,
    pub model_id: String,
    pub concurrency: usize,
    pub rate_per_sec: f64,
    pub retry: RetryConfig,
    pub mock: MockModelConfig,
    pub live: LiveModelConfig,
}

impl Default for AssessorConfig {
    fn default() -> Self {
        AssessorConfig {
            provider: ModelProviderKind::Mock,
            model_id: "mock-facade-v1".into(),
            concurrency: 4,
            rate_per_sec: 0.0,
            retry: RetryConfig::default(),
            mock: MockModelConfig::default(),
            live: LiveModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Decimals used for rendered percentages in column-normalised tables.
    pub percent_decimals: usize,
    /// Decimals used for rendered shares in threshold share tables.
    pub share_decimals: usize,
    pub sweep_thresholds: Vec<u32>,
    /// Region name whose buildings are flagged `stockholm`.
    pub capital_region: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { percent_decimals: 3, share_decimals: 2, sweep_thresholds: (0..=101).collect(), capital_region: "Stockholm".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub inputs: InputPaths,
    pub imagery: ImageryConfig,
    pub assessor: AssessorConfig,
    pub reports: ReportConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Key {
            key: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        cfg.pipeline.validate()?;
        if !(0.0..=1.0).contains(&cfg.assessor.mock.fault_rate) {
            return Err(ConfigError::Invalid {
                key: "assessor.mock.fault_rate",
                message: format!("must lie in [0, 1], got {}", cfg.assessor.mock.fault_rate),
            });
        }
        for m in &cfg.assessor.mock.fault_modes {
            m.parse::<crate::assessor::FaultMode>()
                .map_err(|e| ConfigError::Invalid { key: "assessor.mock.fault_modes", message: e.to_string() })?;
        }
        Ok(cfg)
    }

    /// Loads a config file; relative input paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Config::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.footprints, &mut i.roads, &mut i.epcs, &mut i.income_areas, &mut i.regions]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        i.registers.iter_mut().for_each(fix);
        if let Some(p) = self.imagery.fixture_dir.as_mut() {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Hash of the canonical serialisation, recorded in the run log.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
