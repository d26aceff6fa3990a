//! Stage orchestration over a workspace directory.
//!
//! Every stage checks that its prerequisite artifacts exist, writes its own
//! artifacts atomically and appends one line to `run.log`. Stages hold an
//! exclusive lock on the workspace while they run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytics::{self, Funnel, ReportInputs, Sample};
use crate::artifacts::{self, Artifact, ArtifactError, JsonlAppender, Workspace};
use crate::assessor::{
    completed_image_ids, latest_records, run_batch, summarize, AssessmentRecord, BatchItem, BatchOptions, LiveModel,
    MockModel, ModelProvider, RecordStatus,
};
use crate::config::{Config, ConfigError, ImageProviderKind, ModelProviderKind};
use crate::exec::{RetryPolicy, TokenBucket};
use crate::heritage::{
    aggregate_per_epc, assign_all, filter_visibility, read_assignments_csv, write_assignments_csv, AggregationResidual,
    EpcAssessment, Exclusion, HeritageAssignment,
};
use crate::imagery::{
    coverage_report, fetch_all, query_coverage, BuildingCoverage, CoverageStats, FetchOutcome, FetchStatus,
    FixtureImageProvider, ImageCache, ImageProvider, LiveImageProvider,
};
use crate::registry::{
    attach_context, attach_registers, load_datasets, match_epc_to_footprints, write_rejects_csv, DatasetPaths,
    Datasets, EpcMatch, LoadOptions, MatchedBuilding, RegisterResidual, UnmatchedEpc,
};
use crate::viewgeom::{
    all_walls, build_sightlines, buildings_with_pose, filter_sightlines, poses_from_sightlines, rejection_counts,
    CameraPose, Sightline, SightlineRejection,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing artifact: {0}")]
    MissingArtifact(&'static str),
    #[error("provider exhausted: {0}")]
    ProviderExhausted(String),
    #[error("{name} is unreadable: {source}")]
    Corrupt { name: &'static str, source: ArtifactError },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Ingest(#[from] crate::registry::IngestError),
    #[error("workspace {0} is locked by another run")]
    Locked(PathBuf),
    #[error("{0}")]
    Other(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact(_) => 3,
            PipelineError::ProviderExhausted(_) => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Match,
    Sightlines,
    PlanViews,
    Fetch,
    Assess,
    Aggregate,
    Assign,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Match,
        Stage::Sightlines,
        Stage::PlanViews,
        Stage::Fetch,
        Stage::Assess,
        Stage::Aggregate,
        Stage::Assign,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Match => "match",
            Stage::Sightlines => "sightlines",
            Stage::PlanViews => "plan-views",
            Stage::Fetch => "fetch",
            Stage::Assess => "assess",
            Stage::Aggregate => "aggregate",
            Stage::Assign => "assign",
            Stage::Report => "report",
        }
    }

    /// Checked in order; the first missing one is reported.
    pub fn prerequisites(self) -> &'static [Artifact] {
        use Artifact::*;
        match self {
            Stage::Ingest => &[],
            Stage::Match => &[Datasets],
            Stage::Sightlines => &[Datasets, Matched],
            Stage::PlanViews => &[Sightlines, Datasets, Matched],
            Stage::Fetch => &[Viewpoints, Matched],
            Stage::Assess => &[ImagesManifest, FetchResults, Datasets],
            Stage::Aggregate => &[Assessments, Datasets, Matched],
            Stage::Assign => &[EpcAssessments],
            Stage::Report => &[Assignments, EpcAssessments, Coverage, FetchResults, Viewpoints, Matched, Datasets],
        }
    }

    pub fn outputs(self) -> &'static [Artifact] {
        use Artifact::*;
        match self {
            Stage::Ingest => &[Datasets, Rejects],
            Stage::Match => &[Matched, MatchReport],
            Stage::Sightlines => &[Sightlines, SightlineStats],
            Stage::PlanViews => &[Viewpoints],
            Stage::Fetch => &[Coverage, ImagesManifest, FetchResults],
            Stage::Assess => &[Assessments],
            Stage::Aggregate => &[EpcAssessments, AggregationResiduals],
            Stage::Assign => &[Assignments],
            Stage::Report => &[ReportsIndex],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub timestamp: DateTime<Utc>,
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_ms: u64,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub footprints: usize,
    pub epcs: usize,
    pub linked_buildings: usize,
    pub matches: Vec<EpcMatch>,
    pub unmatched: Vec<UnmatchedEpc>,
    pub register_residuals: Vec<RegisterResidual>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SightlineStats {
    pub buildings: usize,
    pub walls: usize,
    pub wall_errors: Vec<String>,
    pub candidates: usize,
    pub rejected: BTreeMap<SightlineRejection, usize>,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageArtifact {
    pub stats: CoverageStats,
    pub results: Vec<BuildingCoverage>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregationResiduals {
    pub exclusions: Vec<Exclusion>,
    pub residuals: Vec<AggregationResidual>,
}

/// Per-stage flags.
#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Assess: stop after this many provider calls.
    pub max_new: Option<usize>,
    /// Ingest: upper bound for construction years; defaults to the current year.
    pub current_year: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub summary: Value,
    pub warnings: Vec<String>,
}

/// Exclusive advisory lock on `<workspace>/.lock`, released on drop or when
/// the process dies.
pub struct WorkspaceLock {
    _file: File,
}

impl WorkspaceLock {
    pub fn acquire(root: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(root).map_err(|source| ArtifactError::Io { path: root.to_path_buf(), source })?;
        let path = root.join(".lock");
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|source| ArtifactError::Io { path: path.clone(), source })?;
        match file.try_lock() {
            Ok(()) => Ok(WorkspaceLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(PipelineError::Locked(root.to_path_buf())),
            Err(fs::TryLockError::Error(source)) => Err(ArtifactError::Io { path, source }.into()),
        }
    }
}

/// Removes temporary files left by interrupted atomic writes.
pub fn sweep_temp_files(root: &Path) -> usize {
    let mut removed = 0;
    for dir in [root.to_path_buf(), root.join("images"), root.join("reports")] {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for e in entries.flatten() {
            if e.file_name().to_str().is_some_and(artifacts::is_temp_name) && fs::remove_file(e.path()).is_ok() {
                removed += 1;
            }
        }
    }
    removed
}

pub struct Pipeline {
    pub workspace: Workspace,
    pub config: Config,
    image_provider: Option<Arc<dyn ImageProvider>>,
    model: Option<Arc<dyn ModelProvider>>,
}

fn load_json<T: DeserializeOwned>(ws: &Workspace, a: Artifact) -> Result<T, PipelineError> {
    if !ws.exists(a) {
        return Err(PipelineError::MissingArtifact(a.display_name()));
    }
    artifacts::read_json(&ws.path(a)).map_err(|source| PipelineError::Corrupt { name: a.display_name(), source })
}

fn load_jsonl<T: DeserializeOwned>(ws: &Workspace, a: Artifact) -> Result<Vec<T>, PipelineError> {
    if !ws.exists(a) {
        return Err(PipelineError::MissingArtifact(a.display_name()));
    }
    artifacts::read_jsonl(&ws.path(a)).map_err(|source| PipelineError::Corrupt { name: a.display_name(), source })
}

pub fn load_datasets_artifact(ws: &Workspace) -> Result<Datasets, PipelineError> {
    load_json(ws, Artifact::Datasets)
}

pub fn load_matched(ws: &Workspace) -> Result<Vec<MatchedBuilding>, PipelineError> {
    load_json(ws, Artifact::Matched)
}

pub fn load_viewpoints(ws: &Workspace) -> Result<Vec<CameraPose>, PipelineError> {
    load_jsonl(ws, Artifact::Viewpoints)
}

pub fn load_fetch_results(ws: &Workspace) -> Result<Vec<FetchOutcome>, PipelineError> {
    load_jsonl(ws, Artifact::FetchResults)
}

pub fn load_coverage(ws: &Workspace) -> Result<CoverageArtifact, PipelineError> {
    load_json(ws, Artifact::Coverage)
}

pub fn load_epc_assessments(ws: &Workspace) -> Result<Vec<EpcAssessment>, PipelineError> {
    load_json(ws, Artifact::EpcAssessments)
}

/// Latest record per image, from the append-only assessment log.
pub fn load_assessments(ws: &Workspace) -> Result<Vec<AssessmentRecord>, PipelineError> {
    let a = Artifact::Assessments;
    if !ws.exists(a) {
        return Err(PipelineError::MissingArtifact(a.display_name()));
    }
    let (records, _) = artifacts::read_log::<AssessmentRecord>(&ws.path(a))
        .map_err(|source| PipelineError::Corrupt { name: a.display_name(), source })?;
    Ok(latest_records(records))
}

pub fn load_assignments(ws: &Workspace) -> Result<Vec<HeritageAssignment>, PipelineError> {
    let a = Artifact::Assignments;
    if !ws.exists(a) {
        return Err(PipelineError::MissingArtifact(a.display_name()));
    }
    let path = ws.path(a);
    let file = File::open(&path).map_err(|source| ArtifactError::Io { path: path.clone(), source })?;
    read_assignments_csv(file).map_err(|e| PipelineError::Corrupt {
        name: a.display_name(),
        source: ArtifactError::Corrupt { path, message: e.to_string() },
    })
}

fn limiter(rate: f64, concurrency: usize) -> TokenBucket {
    if rate > 0.0 {
        TokenBucket::new(rate, concurrency.max(1))
    } else {
        TokenBucket::unlimited()
    }
}

fn hashes(ws: &Workspace, list: &[Artifact]) -> BTreeMap<String, String> {
    list.iter()
        .filter_map(|a| {
            let p = ws.path(*a);
            artifacts::file_sha256(&p).ok().map(|h| (a.file_name().to_string(), h))
        })
        .collect()
}

impl Pipeline {
    pub fn new(root: impl Into<PathBuf>, config: Config) -> Self {
        Pipeline { workspace: Workspace::new(root), config, image_provider: None, model: None }
    }

    pub fn with_image_provider(mut self, p: Arc<dyn ImageProvider>) -> Self {
        self.image_provider = Some(p);
        self
    }

    pub fn with_model(mut self, m: Arc<dyn ModelProvider>) -> Self {
        self.model = Some(m);
        self
    }

    fn image_provider(&self) -> Result<Arc<dyn ImageProvider>, PipelineError> {
        if let Some(p) = &self.image_provider {
            return Ok(p.clone());
        }
        let img = &self.config.imagery;
        match img.provider {
            ImageProviderKind::Fixture => {
                let dir = img.fixture_dir.as_deref().ok_or(ConfigError::Invalid {
                    key: "imagery.fixture_dir",
                    message: "required for the fixture provider".into(),
                })?;
                Ok(Arc::new(FixtureImageProvider::open(dir, img.snap_radius_m)?))
            }
            ImageProviderKind::Live => LiveImageProvider::new(&img.live)
                .map(|p| Arc::new(p) as Arc<dyn ImageProvider>)
                .map_err(|e| ConfigError::Invalid { key: "imagery.live", message: e.to_string() }.into()),
        }
    }

    fn model(&self) -> Result<Arc<dyn ModelProvider>, PipelineError> {
        if let Some(m) = &self.model {
            return Ok(m.clone());
        }
        let a = &self.config.assessor;
        match a.provider {
            ModelProviderKind::Mock => MockModel::new(&a.mock)
                .map(|m| Arc::new(m) as Arc<dyn ModelProvider>)
                .map_err(|e| ConfigError::Invalid { key: "assessor.mock.fault_modes", message: e.to_string() }.into()),
            ModelProviderKind::Live => LiveModel::new(&a.live, &a.model_id)
                .map(|m| Arc::new(m) as Arc<dyn ModelProvider>)
                .map_err(|e| ConfigError::Invalid { key: "assessor.live", message: e.to_string() }.into()),
        }
    }

    fn input_files(&self) -> Vec<PathBuf> {
        let i = &self.config.inputs;
        [&i.footprints, &i.roads, &i.epcs, &i.income_areas, &i.regions]
            .into_iter()
            .flatten()
            .cloned()
            .chain(i.registers.iter().cloned())
            .collect()
    }

    /// Runs one stage under the workspace lock.
    pub fn run_stage(&self, stage: Stage, opts: &StageOptions) -> Result<StageReport, PipelineError> {
        let _lock = WorkspaceLock::acquire(self.workspace.root())?;
        sweep_temp_files(self.workspace.root());
        for a in stage.prerequisites() {
            if !self.workspace.exists(*a) {
                return Err(PipelineError::MissingArtifact(a.display_name()));
            }
        }
        let mut inputs = hashes(&self.workspace, stage.prerequisites());
        if stage == Stage::Ingest {
            for p in self.input_files() {
                if let Ok(h) = artifacts::file_sha256(&p) {
                    inputs.insert(p.display().to_string(), h);
                }
            }
        }
        let start = Instant::now();
        let result = match stage {
            Stage::Ingest => self.ingest(opts),
            Stage::Match => self.match_stage(),
            Stage::Sightlines => self.sightlines(),
            Stage::PlanViews => self.plan_views(),
            Stage::Fetch => self.fetch(),
            Stage::Assess => self.assess(opts),
            Stage::Aggregate => self.aggregate(),
            Stage::Assign => self.assign(),
            Stage::Report => self.report(),
        };
        let outcome = match &result {
            Ok(_) => "ok".to_string(),
            Err(e @ PipelineError::ProviderExhausted(_)) => format!("exit {}: {e}", e.exit_code()),
            Err(_) => return result,
        };
        let entry = RunLogEntry {
            timestamp: Utc::now(),
            stage: stage.as_str().into(),
            config_hash: self.config.hash(),
            inputs,
            outputs: hashes(&self.workspace, stage.outputs()),
            duration_ms: start.elapsed().as_millis() as u64,
            outcome,
        };
        let (log, _) = JsonlAppender::open::<RunLogEntry>(&self.workspace.run_log())?;
        log.append(&entry)?;
        result
    }

    /// Runs every stage in order.
    pub fn run_all(&self, opts: &StageOptions) -> Result<Vec<StageReport>, PipelineError> {
        Stage::ALL.iter().map(|s| self.run_stage(*s, opts)).collect()
    }

    fn ingest(&self, opts: &StageOptions) -> Result<StageReport, PipelineError> {
        let load = match opts.current_year {
            Some(current_year) => LoadOptions { current_year },
            None => LoadOptions::default(),
        };
        let ds = load_datasets(&DatasetPaths::from(&self.config.inputs), load)?;
        let mut rejects = Vec::new();
        write_rejects_csv(&ds.rejects, &mut rejects).map_err(|e| PipelineError::Other(e.to_string()))?;
        artifacts::write_atomic(&self.workspace.path(Artifact::Rejects), &rejects)?;
        artifacts::write_json(&self.workspace.path(Artifact::Datasets), &ds)?;
        let per: BTreeMap<&str, Value> = ds
            .input_rows
            .iter()
            .map(|(name, rows)| {
                (name.as_str(), json!({"input": rows, "loaded": ds.loaded_rows(name), "rejected": ds.rejected_rows(name)}))
            })
            .collect();
        Ok(StageReport { stage: Stage::Ingest, summary: json!({"crs": ds.crs, "datasets": per}), warnings: Vec::new() })
    }

    fn match_stage(&self) -> Result<StageReport, PipelineError> {
        let ds = load_datasets_artifact(&self.workspace)?;
        let mut out = match_epc_to_footprints(&ds.epcs, &ds.footprints, self.config.pipeline.match_radius_m);
        let residuals = attach_registers(&mut out.buildings, &ds.registers);
        attach_context(&mut out.buildings, &ds.income_areas, &ds.regions, &self.config.reports.capital_region);
        let linked = out.buildings.iter().filter(|b| b.epc_id.is_some()).count();
        let report = MatchReport {
            footprints: ds.footprints.len(),
            epcs: ds.epcs.len(),
            linked_buildings: linked,
            matches: out.matches,
            unmatched: out.unmatched,
            register_residuals: residuals,
        };
        artifacts::write_json(&self.workspace.path(Artifact::Matched), &out.buildings)?;
        artifacts::write_json(&self.workspace.path(Artifact::MatchReport), &report)?;
        let mut by_method: BTreeMap<String, usize> = BTreeMap::new();
        for m in &report.matches {
            let key = serde_json::to_value(m.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            *by_method.entry(key).or_default() += 1;
        }
        Ok(StageReport {
            stage: Stage::Match,
            summary: json!({
                "footprints": report.footprints, "epcs": report.epcs, "linked_buildings": linked,
                "matched_epcs": by_method, "unmatched_epcs": report.unmatched.len(),
                "register_residuals": report.register_residuals.len(),
            }),
            warnings: Vec::new(),
        })
    }

    fn sightlines(&self) -> Result<StageReport, PipelineError> {
        let ds = load_datasets_artifact(&self.workspace)?;
        let buildings = load_matched(&self.workspace)?;
        let cfg = &self.config.pipeline;
        let (walls, wall_errors) = all_walls(&buildings, cfg);
        let footprints: Vec<_> = buildings.iter().map(|b| b.footprint.clone()).collect();
        let candidates = build_sightlines(&walls, &ds.roads, cfg);
        let mut retained = filter_sightlines(&candidates, &footprints, cfg);
        retained.sort_by(|a, b| {
            (a.building_uuid.as_str(), a.wall_id).cmp(&(b.building_uuid.as_str(), b.wall_id)).then_with(|| a.road_id.cmp(&b.road_id)).then_with(|| a.length_m.total_cmp(&b.length_m))
        });
        let stats = SightlineStats {
            buildings: buildings.len(),
            walls: walls.len(),
            wall_errors,
            candidates: candidates.len(),
            rejected: rejection_counts(&candidates, &footprints, cfg),
            retained: retained.len(),
        };
        artifacts::write_jsonl(&self.workspace.path(Artifact::Sightlines), &retained)?;
        artifacts::write_json(&self.workspace.path(Artifact::SightlineStats), &stats)?;
        Ok(StageReport {
            stage: Stage::Sightlines,
            summary: serde_json::to_value(&stats).expect("serialisable"),
            warnings: Vec::new(),
        })
    }

    fn plan_views(&self) -> Result<StageReport, PipelineError> {
        let ds = load_datasets_artifact(&self.workspace)?;
        let buildings = load_matched(&self.workspace)?;
        let retained: Vec<Sightline> = load_jsonl(&self.workspace, Artifact::Sightlines)?;
        let (walls, _) = all_walls(&buildings, &self.config.pipeline);
        let (_, poses) = poses_from_sightlines(&retained, &walls, &buildings, &ds.epcs, &self.config.pipeline);
        artifacts::write_jsonl(&self.workspace.path(Artifact::Viewpoints), &poses)?;
        let defaults = poses.iter().filter(|p| p.floors_source == crate::viewgeom::FloorsSource::Default).count();
        Ok(StageReport {
            stage: Stage::PlanViews,
            summary: json!({
                "viewpoints": poses.len(), "buildings_with_viewpoint": buildings_with_pose(&poses),
                "buildings": buildings.len(), "poses_with_default_floors": defaults,
            }),
            warnings: Vec::new(),
        })
    }

    fn fetch(&self) -> Result<StageReport, PipelineError> {
        let buildings = load_matched(&self.workspace)?;
        let poses = load_viewpoints(&self.workspace)?;
        let provider = self.image_provider()?;
        let img = &self.config.imagery;
        let policy = RetryPolicy::from(&img.retry);
        let lim = limiter(img.rate_per_sec, img.concurrency);
        let points: Vec<(String, crate::geom::Point)> =
            buildings.iter().map(|b| (b.building_uuid.clone(), b.footprint.centroid)).collect();
        let coverage = query_coverage(&points, img.coverage_radius_m, provider.as_ref(), &policy, img.concurrency, &lim);
        let stats = coverage_report(&coverage);
        let cache = ImageCache::open(&self.workspace.images_dir())?;
        let outcomes = fetch_all(
            &poses,
            &coverage,
            provider.as_ref(),
            &cache,
            &policy,
            (img.image_width, img.image_height),
            img.concurrency,
            &lim,
        );
        artifacts::write_json(
            &self.workspace.path(Artifact::Coverage),
            &CoverageArtifact { stats: stats.clone(), results: coverage.clone() },
        )?;
        artifacts::write_jsonl(&self.workspace.path(Artifact::FetchResults), &outcomes)?;
        let count = |s: FetchStatus| outcomes.iter().filter(|o| o.status == s).count();
        let (ok, none, failed) = (count(FetchStatus::Ok), count(FetchStatus::NoUsableImage), count(FetchStatus::TransportFailed));
        let coverage_errors = coverage.iter().filter(|c| c.error.is_some()).count();
        let summary = json!({
            "buildings_queried": stats.buildings, "buildings_covered": stats.covered,
            "coverage_pct": stats.pct_within_radius, "coverage_errors": coverage_errors,
            "viewpoints": poses.len(), "images": ok, "no_usable_image": none, "transport_failed": failed,
            "cached_images": cache.len(),
        });
        let mut warnings = Vec::new();
        if failed > 0 {
            warnings.push(format!("{failed} viewpoints failed after retries; rerun fetch to retry them"));
        }
        let attempted = ok + failed;
        if (attempted > 0 && failed == attempted) || (!coverage.is_empty() && coverage_errors == coverage.len()) {
            return Err(PipelineError::ProviderExhausted(format!(
                "image provider failed for every request ({failed} fetches, {coverage_errors} coverage queries)"
            )));
        }
        Ok(StageReport { stage: Stage::Fetch, summary, warnings })
    }

    fn assess(&self, opts: &StageOptions) -> Result<StageReport, PipelineError> {
        let ds = load_datasets_artifact(&self.workspace)?;
        let outcomes = load_fetch_results(&self.workspace)?;
        let cache = ImageCache::open(&self.workspace.images_dir())
            .map_err(|source| PipelineError::Corrupt { name: Artifact::ImagesManifest.display_name(), source })?;
        let address: HashMap<&str, &str> =
            ds.epcs.iter().filter_map(|e| e.address.as_deref().map(|a| (e.epc_id.as_str(), a))).collect();
        let items: Vec<BatchItem> = outcomes
            .iter()
            .filter(|o| o.status == FetchStatus::Ok)
            .filter_map(|o| {
                Some(BatchItem {
                    building_uuid: o.building_uuid.clone(),
                    wall_id: o.wall_id,
                    epc_id: o.epc_id.clone(),
                    image_id: o.image_id.clone()?,
                    address: o.epc_id.as_deref().and_then(|e| address.get(e)).unwrap_or(&"").to_string(),
                })
            })
            .collect();
        let model = self.model()?;
        let a = &self.config.assessor;
        let (log, existing) = JsonlAppender::open::<AssessmentRecord>(&self.workspace.path(Artifact::Assessments))
            .map_err(|source| PipelineError::Corrupt { name: Artifact::Assessments.display_name(), source })?;
        let existing = latest_records(existing);
        let done = completed_image_ids(&existing);
        let load_image = |id: &str| -> Result<Vec<u8>, String> {
            let rec = cache.get(id).ok_or_else(|| format!("image {id} is not in the cache"))?;
            cache.read_bytes(&rec).map_err(|e| e.to_string())
        };
        let batch = BatchOptions { policy: RetryPolicy::from(&a.retry), concurrency: a.concurrency, max_new: opts.max_new };
        let new = run_batch(&items, &done, model.as_ref(), &load_image, &log, &limiter(a.rate_per_sec, a.concurrency), &batch)?;
        let mut all = existing;
        all.extend(new.iter().cloned());
        let all = latest_records(all);
        let mut summary = summarize(&items, &all);
        summary.new_calls = new.len();
        summary.skipped_existing = items.iter().filter(|i| done.contains(&i.image_id)).count();
        let failed_now = new.iter().filter(|r| r.status() == RecordStatus::TransportFailed).count();
        let mut warnings = Vec::new();
        if summary.transport_failed > 0 {
            warnings.push(format!("{} images failed in transport; rerun assess to retry them", summary.transport_failed));
        }
        if !new.is_empty() && failed_now == new.len() {
            return Err(PipelineError::ProviderExhausted(format!(
                "model provider failed for all {failed_now} calls in this run"
            )));
        }
        Ok(StageReport { stage: Stage::Assess, summary: serde_json::to_value(&summary).expect("serialisable"), warnings })
    }

    fn aggregate(&self) -> Result<StageReport, PipelineError> {
        let ds = load_datasets_artifact(&self.workspace)?;
        let buildings = load_matched(&self.workspace)?;
        let records = load_assessments(&self.workspace)?;
        let (visible, exclusions) = filter_visibility(&records, &self.config.pipeline);
        let agg = aggregate_per_epc(&visible, &ds.epcs, &buildings);
        artifacts::write_json(&self.workspace.path(Artifact::EpcAssessments), &agg.epcs)?;
        let residuals = AggregationResiduals { exclusions, residuals: agg.residuals };
        artifacts::write_json(&self.workspace.path(Artifact::AggregationResiduals), &residuals)?;
        let observed = agg.epcs.iter().filter(|e| e.n_observations > 0).count();
        Ok(StageReport {
            stage: Stage::Aggregate,
            summary: json!({
                "records": records.len(), "visible": visible.len(), "excluded": residuals.exclusions.len(),
                "epcs": agg.epcs.len(), "observed_epcs": observed, "residuals": residuals.residuals.len(),
            }),
            warnings: Vec::new(),
        })
    }

    fn assign(&self) -> Result<StageReport, PipelineError> {
        let epcs = load_epc_assessments(&self.workspace)?;
        let assignments = assign_all(&epcs, &self.config.pipeline);
        let mut buf = Vec::new();
        write_assignments_csv(&assignments, &mut buf).map_err(|e| PipelineError::Other(e.to_string()))?;
        artifacts::write_atomic(&self.workspace.path(Artifact::Assignments), &buf)?;
        let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &assignments {
            *groups.entry(a.group.as_str()).or_default() += 1;
        }
        Ok(StageReport { stage: Stage::Assign, summary: json!({ "epcs": assignments.len(), "groups": groups }), warnings: Vec::new() })
    }

    /// Funnel counts from the stage artifacts.
    pub fn funnel(&self) -> Result<Funnel, PipelineError> {
        let ds = load_datasets_artifact(&self.workspace)?;
        let buildings = load_matched(&self.workspace)?;
        let poses = load_viewpoints(&self.workspace)?;
        let outcomes = load_fetch_results(&self.workspace)?;
        let epcs = load_epc_assessments(&self.workspace)?;
        let with_viewpoint: BTreeSet<String> = poses.iter().map(|p| p.target_building_uuid.clone()).collect();
        let with_image: BTreeSet<String> =
            outcomes.iter().filter(|o| o.status == FetchStatus::Ok).map(|o| o.building_uuid.clone()).collect();
        Ok(analytics::funnel(&ds.epcs, &buildings, &with_viewpoint, &with_image, &epcs))
    }

    fn report(&self) -> Result<StageReport, PipelineError> {
        let epcs = load_epc_assessments(&self.workspace)?;
        let assignments = load_assignments(&self.workspace)?;
        let coverage = load_coverage(&self.workspace)?;
        let funnel = self.funnel()?;
        let tables = analytics::build_reports(&ReportInputs {
            epcs: &epcs,
            assignments: &assignments,
            funnel: Some(&funnel),
            coverage: Some(&coverage.stats),
            pipeline: &self.config.pipeline,
            report: &self.config.reports,
        });
        let written = analytics::export_all(&tables, &self.workspace.reports_dir())?;
        let mut warnings = Vec::new();
        if !funnel.is_consistent() {
            warnings.push("funnel category rows do not sum to the totals".into());
        }
        Ok(StageReport {
            stage: Stage::Report,
            summary: json!({
                "tables": tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
                "files": written.len(),
            }),
            warnings,
        })
    }

    /// Seeded review sample; read-only.
    pub fn sample(&self, n: usize, min_score: u32, regions: Option<&[String]>, seed: u64) -> Result<Sample, PipelineError> {
        let epcs = load_epc_assessments(&self.workspace)?;
        Ok(analytics::sample_for_review(&epcs, n, min_score, regions, seed))
    }
}
