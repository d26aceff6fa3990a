//! Prompting a vision-language model per façade image and strictly validating
//! its JSON answer.

mod live;
mod mock;
mod prompt;
mod schema;

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::artifacts::{ArtifactError, JsonlAppender};
use crate::exec::{parallel_map, RetryPolicy, Retryable, TokenBucket};

pub use live::LiveModel;
pub use mock::{generate as generate_assessment, respond as mock_respond, FaultMode, FaultModeError, MockModel};
pub use mock::EXTRA_FIELD_NAME;
pub use prompt::{build_prompt, template as prompt_template, Prompt, PLACEHOLDER_ADDRESS};
pub use schema::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("transient model failure: {0}")]
    Transient(String),
    #[error("model request failed: {0}")]
    Permanent(String),
}

impl Retryable for ModelError {
    fn is_transient(&self) -> bool {
        matches!(self, ModelError::Transient(_))
    }
}

pub struct ModelRequest<'a> {
    pub prompt: &'a Prompt,
    pub image: &'a [u8],
    pub image_id: &'a str,
}

pub trait ModelProvider: Send + Sync {
    fn model_id(&self) -> String;
    fn complete(&self, req: &ModelRequest<'_>) -> Result<String, ModelError>;
}

/// One model call and its validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub building_uuid: String,
    pub wall_id: u32,
    pub epc_id: Option<String>,
    pub image_id: String,
    pub address: String,
    pub address_placeholder: bool,
    pub raw_response: String,
    pub parsed: Option<FacadeAssessment>,
    pub validation_errors: Vec<FieldError>,
    pub model_id: String,
    pub prompt_hash: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Accepted,
    Rejected,
    TransportFailed,
}

impl AssessmentRecord {
    pub fn status(&self) -> RecordStatus {
        if self.parsed.is_some() {
            RecordStatus::Accepted
        } else if self.validation_errors.iter().any(|e| e.field == TRANSPORT_FIELD) {
            RecordStatus::TransportFailed
        } else {
            RecordStatus::Rejected
        }
    }

    pub fn visibility(&self) -> Option<u8> {
        self.parsed.as_ref().and_then(|p| p.visibility_score.value())
    }

    pub fn heritage_value(&self) -> Option<u8> {
        self.parsed.as_ref().and_then(|p| p.predicted_heritage_value.value())
    }
}

/// One image to assess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub building_uuid: String,
    pub wall_id: u32,
    pub epc_id: Option<String>,
    pub image_id: String,
    pub address: String,
}

/// Calls the provider with retries and validates the answer.
pub fn assess_one(
    item: &BatchItem,
    provider: &dyn ModelProvider,
    policy: &RetryPolicy,
    image: Result<Vec<u8>, String>,
) -> AssessmentRecord {
    let prompt = build_prompt(&item.address);
    let called = image.and_then(|bytes| {
        let req = ModelRequest { prompt: &prompt, image: &bytes, image_id: &item.image_id };
        policy.run(|_| provider.complete(&req)).map_err(|(e, n)| format!("{e} (after {n} attempts)"))
    });
    let (raw_response, parsed, validation_errors) = match called {
        Ok(raw) => match parse_assessment(&raw) {
            Ok(a) => (raw, Some(a), Vec::new()),
            Err(errs) => (raw, None, errs),
        },
        Err(reason) => (String::new(), None, vec![FieldError::new(TRANSPORT_FIELD, reason)]),
    };
    AssessmentRecord {
        building_uuid: item.building_uuid.clone(),
        wall_id: item.wall_id,
        epc_id: item.epc_id.clone(),
        image_id: item.image_id.clone(),
        address: if prompt.address_placeholder { PLACEHOLDER_ADDRESS.into() } else { item.address.trim().into() },
        address_placeholder: prompt.address_placeholder,
        raw_response,
        parsed,
        validation_errors,
        model_id: provider.model_id(),
        prompt_hash: prompt.hash,
        timestamp: Utc::now(),
    }
}

/// The last record per image id; later lines supersede earlier ones.
pub fn latest_records(records: Vec<AssessmentRecord>) -> Vec<AssessmentRecord> {
    let mut pos: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<AssessmentRecord> = Vec::new();
    for r in records {
        match pos.get(&r.image_id) {
            Some(&i) => out[i] = r,
            None => {
                pos.insert(r.image_id.clone(), out.len());
                out.push(r);
            }
        }
    }
    out
}

/// Image ids that need no further provider call. Transport failures are retried.
pub fn completed_image_ids(records: &[AssessmentRecord]) -> HashSet<String> {
    latest_records(records.to_vec())
        .into_iter()
        .filter(|r| r.status() != RecordStatus::TransportFailed)
        .map(|r| r.image_id)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub items: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub transport_failed: usize,
    /// Items with no record yet (run stopped early).
    pub pending: usize,
    pub rejected_by_field: BTreeMap<String, usize>,
    pub new_calls: usize,
    pub skipped_existing: usize,
}

/// Counts over the latest record of every item; the four status counts
/// partition `items`.
pub fn summarize(items: &[BatchItem], records: &[AssessmentRecord]) -> BatchSummary {
    let latest: HashMap<&str, &AssessmentRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut s = BatchSummary::default();
    let mut seen = HashSet::new();
    for it in items {
        if !seen.insert(it.image_id.as_str()) {
            continue;
        }
        s.items += 1;
        match latest.get(it.image_id.as_str()) {
            None => s.pending += 1,
            Some(r) => match r.status() {
                RecordStatus::Accepted => s.accepted += 1,
                RecordStatus::TransportFailed => s.transport_failed += 1,
                RecordStatus::Rejected => {
                    s.rejected += 1;
                    let fields: HashSet<&str> = r.validation_errors.iter().map(|e| e.field.as_str()).collect();
                    for f in fields {
                        *s.rejected_by_field.entry(f.to_string()).or_insert(0) += 1;
                    }
                }
            },
        }
    }
    s
}

pub struct BatchOptions {
    pub policy: RetryPolicy,
    pub concurrency: usize,
    /// Stop after this many provider calls.
    pub max_new: Option<usize>,
}

/// Assesses every item not yet completed, appending one record per call to
/// `log` as soon as it is produced. Returns the records written this run.
pub fn run_batch(
    items: &[BatchItem],
    done: &HashSet<String>,
    provider: &dyn ModelProvider,
    load_image: &(dyn Fn(&str) -> Result<Vec<u8>, String> + Sync),
    log: &JsonlAppender,
    limiter: &TokenBucket,
    opts: &BatchOptions,
) -> Result<Vec<AssessmentRecord>, ArtifactError> {
    let mut seen = HashSet::new();
    let todo: Vec<&BatchItem> = items
        .iter()
        .filter(|it| !done.contains(&it.image_id) && seen.insert(it.image_id.as_str()))
        .take(opts.max_new.unwrap_or(usize::MAX))
        .collect();
    let results = parallel_map(&todo, opts.concurrency, |it| {
        limiter.acquire();
        let rec = assess_one(it, provider, &opts.policy, load_image(&it.image_id));
        log.append(&rec).map(|_| rec)
    });
    log.sync()?;
    results.into_iter().collect()
}
