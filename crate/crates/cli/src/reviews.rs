//! Append-only log of reviewer verdicts.
//!
//! The current state is a pure replay of the file: the last verdict per
//! (epc_id, reviewer) wins.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use heritage_core::artifacts::{ArtifactError, JsonlAppender};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    Reject,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub epc_id: String,
    pub reviewer: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
    pub timestamp: DateTime<Utc>,
}

/// Latest verdict per (epc_id, reviewer), in key order.
pub fn current(log: &[ReviewVerdict]) -> Vec<ReviewVerdict> {
    let mut latest: BTreeMap<(&str, &str), &ReviewVerdict> = BTreeMap::new();
    for v in log {
        latest.insert((&v.epc_id, &v.reviewer), v);
    }
    latest.into_values().cloned().collect()
}

pub struct ReviewLog {
    appender: JsonlAppender,
    entries: Vec<ReviewVerdict>,
}

impl ReviewLog {
    /// Opens or creates the log, dropping a torn final line.
    pub fn open(path: &Path) -> Result<Self, ArtifactError> {
        let (appender, entries) = JsonlAppender::open(path)?;
        Ok(ReviewLog { appender, entries })
    }

    /// Durable before it becomes visible.
    pub fn append(&mut self, v: ReviewVerdict) -> Result<(), ArtifactError> {
        self.appender.append(&v)?;
        self.appender.sync()?;
        self.entries.push(v);
        Ok(())
    }

    pub fn entries(&self) -> &[ReviewVerdict] {
        &self.entries
    }

    pub fn current(&self) -> Vec<ReviewVerdict> {
        current(&self.entries)
    }

    pub fn for_epc(&self, epc_id: &str) -> Vec<ReviewVerdict> {
        self.current().into_iter().filter(|v| v.epc_id == epc_id).collect()
    }
}
