//! HTTP service over a finished workspace.
//!
//! Artifacts are read per request so a rerun pipeline is picked up without a
//! restart. Only review posts write, and they are serialised on one log.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use heritage_core::analytics::{sample_for_review, threshold_sweep};
use heritage_core::artifacts::{self, Artifact, Workspace};
use heritage_core::config::Config;
use heritage_core::geom::BBox;
use heritage_core::heritage::{EpcAssessment, HeritageAssignment, HeritageGroup};
use heritage_core::imagery::ImageRecord;
use heritage_core::pipeline::{
    load_assignments, load_datasets_artifact, load_epc_assessments, load_matched, PipelineError,
};
use heritage_core::registry::MatchedBuilding;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::reviews::{ReviewLog, ReviewVerdict, Verdict};

pub struct AppState {
    pub workspace: Workspace,
    pub config: Config,
    reviews: Mutex<ReviewLog>,
}

impl AppState {
    pub fn open(root: impl Into<PathBuf>, config: Config) -> anyhow::Result<Arc<Self>> {
        let workspace = Workspace::new(root);
        std::fs::create_dir_all(workspace.root())?;
        let reviews = ReviewLog::open(&workspace.path(Artifact::Reviews))?;
        Ok(Arc::new(AppState { workspace, config, reviews: Mutex::new(reviews) }))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match e {
            PipelineError::MissingArtifact(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<artifacts::ArtifactError> for ApiError {
    fn from(e: artifacts::ArtifactError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/buildings", get(buildings))
        .route("/api/buildings/{epc_id}", get(building_detail))
        .route("/api/buildings/{epc_id}/image", get(building_image))
        .route("/api/buildings/{epc_id}/review", post(post_review))
        .route("/api/reviews", get(reviews))
        .route("/api/sample", get(sample))
        .route("/api/stats/threshold-sweep", get(sweep))
        .route("/api/reports/{name}", get(report))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Certificates, their assignments and the footprints of linked buildings.
struct Joined {
    epcs: Vec<EpcAssessment>,
    assignments: HashMap<String, HeritageAssignment>,
    buildings: HashMap<String, MatchedBuilding>,
}

fn load_joined(ws: &Workspace) -> ApiResult<Joined> {
    let epcs = load_epc_assessments(ws)?;
    let assignments = load_assignments(ws)?.into_iter().map(|a| (a.epc_id.clone(), a)).collect();
    let buildings = load_matched(ws)?.into_iter().map(|b| (b.building_uuid.clone(), b)).collect();
    Ok(Joined { epcs, assignments, buildings })
}

fn parse_bbox(s: &str) -> ApiResult<BBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ApiError::bad_request(format!("bbox `{s}` is not four numbers")))?;
    match v[..] {
        [a, b, c, d] if a <= c && b <= d && v.iter().all(|x| x.is_finite()) => {
            Ok(BBox { min: [a, b].into(), max: [c, d].into() })
        }
        _ => Err(ApiError::bad_request(format!("bbox `{s}` must be minx,miny,maxx,maxy"))),
    }
}

fn parse_regions(s: Option<&str>) -> Option<Vec<String>> {
    let v: Vec<String> = s?.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect();
    (!v.is_empty()).then_some(v)
}

fn polygons<'a>(e: &EpcAssessment, buildings: &'a HashMap<String, MatchedBuilding>) -> Vec<&'a MatchedBuilding> {
    e.building_uuids.iter().filter_map(|u| buildings.get(u)).collect()
}

fn geometry(parts: &[&MatchedBuilding]) -> Value {
    let coords: Vec<Value> = parts
        .iter()
        .map(|b| {
            let ring = &b.footprint.ring;
            let mut pts: Vec<[f64; 2]> = ring.iter().map(|p| [p.x, p.y]).collect();
            pts.push([ring[0].x, ring[0].y]);
            json!([pts])
        })
        .collect();
    json!({ "type": "MultiPolygon", "coordinates": coords })
}

fn properties(e: &EpcAssessment, a: Option<&HeritageAssignment>) -> Value {
    json!({
        "epc_id": e.epc_id,
        "group": a.map(|a| a.group.as_str()),
        "group_label": a.map(|a| a.group.label()),
        "predicted_heritage_value": e.predicted_heritage_value,
        "construction_year": e.construction_year,
        "floors": e.floors,
        "category": e.category.as_str(),
        "region": e.region_name,
        "region_flag": e.region_flag,
        "income_band": e.income_band,
        "protection": e.protection,
        "heated_floor_area_m2": e.heated_floor_area_m2,
        "has_image": e.best_observation.is_some(),
    })
}

#[derive(Debug, Default, Deserialize)]
struct BuildingsQuery {
    bbox: Option<String>,
    min_score: Option<u32>,
    group: Option<String>,
    region: Option<String>,
}

async fn buildings(State(st): State<Arc<AppState>>, Query(q): Query<BuildingsQuery>) -> ApiResult<Json<Value>> {
    let bbox = q.bbox.as_deref().map(parse_bbox).transpose()?;
    let group = q.group.as_deref().map(HeritageGroup::from_str).transpose().map_err(ApiError::bad_request)?;
    let regions = parse_regions(q.region.as_deref());
    let j = load_joined(&st.workspace)?;
    let mut features = Vec::new();
    for e in &j.epcs {
        let a = j.assignments.get(&e.epc_id);
        if let Some(min) = q.min_score {
            if !e.predicted_heritage_value.is_some_and(|v| u32::from(v) >= min) {
                continue;
            }
        }
        if group.is_some() && a.map(|a| a.group) != group {
            continue;
        }
        if let Some(rs) = &regions {
            let name = e.region_name.as_deref().unwrap_or("");
            if !rs.iter().any(|r| r.eq_ignore_ascii_case(name)) {
                continue;
            }
        }
        let parts = polygons(e, &j.buildings);
        if let Some(bb) = &bbox {
            if !parts.iter().any(|b| b.footprint.bbox().intersects(bb)) {
                continue;
            }
        }
        features.push(json!({
            "type": "Feature",
            "id": e.epc_id,
            "geometry": if parts.is_empty() { Value::Null } else { geometry(&parts) },
            "properties": properties(e, a),
        }));
    }
    let crs = load_datasets_artifact(&st.workspace).ok().and_then(|d| d.crs);
    Ok(Json(json!({ "type": "FeatureCollection", "crs": crs, "features": features })))
}

fn find_epc(j: &Joined, epc_id: &str) -> ApiResult<usize> {
    j.epcs.iter().position(|e| e.epc_id == epc_id).ok_or_else(|| ApiError::not_found(format!("unknown epc `{epc_id}`")))
}

async fn building_detail(State(st): State<Arc<AppState>>, Path(epc_id): Path<String>) -> ApiResult<Json<Value>> {
    let j = load_joined(&st.workspace)?;
    let e = &j.epcs[find_epc(&j, &epc_id)?];
    let a = j.assignments.get(&e.epc_id);
    let parts = polygons(e, &j.buildings);
    let reviews = st.reviews.lock().expect("review log poisoned").for_epc(&epc_id);
    Ok(Json(json!({
        "epc": e,
        "assignment": a,
        "properties": properties(e, a),
        "geometry": if parts.is_empty() { Value::Null } else { geometry(&parts) },
        "reviews": reviews,
    })))
}

fn content_type(file: &str) -> &'static str {
    match file.rsplit('.').next().map(|x| x.to_ascii_lowercase()).as_deref() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn building_image(State(st): State<Arc<AppState>>, Path(epc_id): Path<String>) -> ApiResult<Response> {
    let epcs = load_epc_assessments(&st.workspace)?;
    let e = epcs.iter().find(|e| e.epc_id == epc_id).ok_or_else(|| ApiError::not_found(format!("unknown epc `{epc_id}`")))?;
    let obs = e.best_observation.as_ref().ok_or_else(|| ApiError::not_found(format!("no image for `{epc_id}`")))?;
    let manifest = st.workspace.path(Artifact::ImagesManifest);
    let (records, _) = artifacts::read_log::<ImageRecord>(&manifest).map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{} is unreadable: {e}", Artifact::ImagesManifest.display_name()))
    })?;
    let rec = records
        .into_iter()
        .find(|r| r.image_id == obs.image_id)
        .ok_or_else(|| ApiError::not_found(format!("image {} is not cached", obs.image_id)))?;
    let bytes = std::fs::read(st.workspace.images_dir().join(&rec.file))
        .map_err(|_| ApiError::not_found(format!("image {} is not cached", obs.image_id)))?;
    Ok(([(header::CONTENT_TYPE, content_type(&rec.file))], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct ReviewBody {
    #[serde(default)]
    reviewer: Option<String>,
    verdict: Verdict,
    #[serde(default)]
    note: String,
}

async fn post_review(
    State(st): State<Arc<AppState>>,
    Path(epc_id): Path<String>,
    Json(body): Json<ReviewBody>,
) -> ApiResult<(StatusCode, Json<ReviewVerdict>)> {
    let epcs = load_epc_assessments(&st.workspace)?;
    if !epcs.iter().any(|e| e.epc_id == epc_id) {
        return Err(ApiError::not_found(format!("unknown epc `{epc_id}`")));
    }
    let reviewer = body.reviewer.map(|r| r.trim().to_string()).filter(|r| !r.is_empty()).unwrap_or_else(|| "anonymous".into());
    let v = ReviewVerdict { epc_id, reviewer, verdict: body.verdict, note: body.note, timestamp: Utc::now() };
    st.reviews.lock().expect("review log poisoned").append(v.clone())?;
    Ok((StatusCode::CREATED, Json(v)))
}

#[derive(Debug, Default, Deserialize)]
struct ReviewsQuery {
    #[serde(default)]
    all: bool,
    epc_id: Option<String>,
}

async fn reviews(State(st): State<Arc<AppState>>, Query(q): Query<ReviewsQuery>) -> Json<Vec<ReviewVerdict>> {
    let log = st.reviews.lock().expect("review log poisoned");
    let mut out = if q.all { log.entries().to_vec() } else { log.current() };
    if let Some(id) = q.epc_id {
        out.retain(|v| v.epc_id == id);
    }
    Json(out)
}

#[derive(Debug, Deserialize)]
struct SampleQuery {
    n: usize,
    #[serde(default)]
    min_score: Option<u32>,
    #[serde(default)]
    seed: u64,
    region: Option<String>,
}

async fn sample(State(st): State<Arc<AppState>>, Query(q): Query<SampleQuery>) -> ApiResult<Json<Value>> {
    let epcs = load_epc_assessments(&st.workspace)?;
    let min = q.min_score.unwrap_or(st.config.pipeline.heritage_threshold);
    let regions = parse_regions(q.region.as_deref());
    let s = sample_for_review(&epcs, q.n, min, regions.as_deref(), q.seed);
    Ok(Json(json!({ "epc_ids": s.epc_ids, "warnings": s.warnings, "min_score": min, "seed": q.seed })))
}

async fn sweep(State(st): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let epcs = load_epc_assessments(&st.workspace)?;
    let inclusive = st.config.pipeline.threshold_inclusive;
    let points = threshold_sweep(&epcs, &st.config.reports.sweep_thresholds, inclusive);
    Ok(Json(json!({ "inclusive": inclusive, "points": points })))
}

async fn report(State(st): State<Arc<AppState>>, Path(name): Path<String>) -> ApiResult<Response> {
    let (stem, ext) = match name.rsplit_once('.') {
        Some((s, e)) if e == "md" || e == "csv" => (s, e),
        Some(_) => return Err(ApiError::bad_request(format!("unsupported report format `{name}`"))),
        None => (name.as_str(), "md"),
    };
    if stem.is_empty() || !stem.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(ApiError::bad_request(format!("invalid report name `{name}`")));
    }
    let path = st.workspace.reports_dir().join(format!("{stem}.{ext}"));
    let body = std::fs::read(&path).map_err(|_| ApiError::not_found(format!("no report `{stem}.{ext}`")))?;
    let ct = if ext == "csv" { "text/csv; charset=utf-8" } else { "text/markdown; charset=utf-8" };
    Ok(([(header::CONTENT_TYPE, ct)], body).into_response())
}
