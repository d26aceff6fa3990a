//! Workspace layout and crash-safe artifact IO.
//!
//! Stage outputs are written to a temporary sibling and renamed into place, so
//! a killed stage never leaves a partial file under the final name. Append-only
//! JSON Lines logs tolerate a torn final line, which is dropped on reopen.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: corrupt artifact: {message}")]
    Corrupt { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

static TMP_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Infix of temporary files left behind by an interrupted atomic write.
pub const TMP_MARKER: &str = ".tmp-";

pub fn is_temp_name(name: &str) -> bool {
    name.starts_with('.') && name.contains(TMP_MARKER)
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let n = TMP_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let tmp = path.with_file_name(format!(".{name}{TMP_MARKER}{}-{n}", std::process::id()));
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| ArtifactError::Corrupt { path: path.to_path_buf(), message: e.to_string() })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ArtifactError> {
    let text = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&text).map_err(|e| ArtifactError::Corrupt { path: path.to_path_buf(), message: e.to_string() })
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("serialisable");
        out.push(b'\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ArtifactError> {
    write_atomic(path, &to_jsonl(items))
}

/// Reads a JSON Lines file written atomically; any bad line is corruption.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ArtifactError::Corrupt {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Reads an append-only log. A final line without newline or that fails to
/// parse is treated as torn and reported through the second value.
pub fn read_log<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Option<u64>), ArtifactError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes).map_err(io_err(path))?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(io_err(path)(e)),
    }
    let mut out = Vec::new();
    let mut offset = 0usize;
    let mut good_end = 0usize;
    while offset < bytes.len() {
        let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
        let (line, next) = match end {
            Some(e) => (&bytes[offset..e], e + 1),
            None => (&bytes[offset..], bytes.len()),
        };
        let complete = end.is_some();
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = next;
            if complete {
                good_end = next;
            }
            continue;
        }
        match serde_json::from_slice::<T>(line) {
            Ok(v) if complete => {
                out.push(v);
                good_end = next;
            }
            _ if next >= bytes.len() => return Ok((out, Some(good_end as u64))),
            Err(e) => {
                return Err(ArtifactError::Corrupt { path: path.to_path_buf(), message: format!("byte {offset}: {e}") })
            }
            Ok(_) => unreachable!("incomplete line is always last"),
        }
        offset = next;
    }
    Ok((out, None))
}

/// Append-only JSON Lines writer; one flushed line per record.
pub struct JsonlAppender {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlAppender {
    /// Opens the log, truncating a torn final line if present.
    pub fn open<T: DeserializeOwned>(path: &Path) -> Result<(Self, Vec<T>), ArtifactError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let (existing, torn_at) = read_log::<T>(path)?;
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path).map_err(io_err(path))?;
        if let Some(len) = torn_at {
            file.set_len(len).map_err(io_err(path))?;
            file.seek(SeekFrom::End(0)).map_err(io_err(path))?;
        }
        Ok((JsonlAppender { path: path.to_path_buf(), file: Mutex::new(file) }, existing))
    }

    pub fn append<T: Serialize>(&self, record: &T) -> Result<(), ArtifactError> {
        let mut line = serde_json::to_vec(record).expect("serialisable");
        line.push(b'\n');
        let mut f = self.file.lock().expect("appender poisoned");
        f.write_all(&line).map_err(io_err(&self.path))?;
        f.flush().map_err(io_err(&self.path))
    }

    pub fn sync(&self) -> Result<(), ArtifactError> {
        self.file.lock().expect("appender poisoned").sync_data().map_err(io_err(&self.path))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, ArtifactError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

/// Named artifacts inside a workspace directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Datasets,
    Rejects,
    Matched,
    MatchReport,
    Sightlines,
    SightlineStats,
    Viewpoints,
    Coverage,
    ImagesManifest,
    FetchResults,
    Assessments,
    EpcAssessments,
    AggregationResiduals,
    Assignments,
    ReportsIndex,
    Reviews,
}

impl Artifact {
    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Datasets => "datasets.json",
            Artifact::Rejects => "rejects.csv",
            Artifact::Matched => "matched.json",
            Artifact::MatchReport => "match_report.json",
            Artifact::Sightlines => "sightlines.jsonl",
            Artifact::SightlineStats => "sightline_stats.json",
            Artifact::Viewpoints => "viewpoints.jsonl",
            Artifact::Coverage => "coverage.json",
            Artifact::ImagesManifest => "images/manifest.jsonl",
            Artifact::FetchResults => "fetch_results.jsonl",
            Artifact::Assessments => "assessments.jsonl",
            Artifact::EpcAssessments => "epc_assessments.json",
            Artifact::AggregationResiduals => "aggregation_residuals.json",
            Artifact::Assignments => "assignments.csv",
            Artifact::ReportsIndex => "reports/index.md",
            Artifact::Reviews => "reviews.jsonl",
        }
    }

    /// Human name used in error messages.
    pub fn display_name(self) -> &'static str {
        match self {
            Artifact::Datasets => "datasets",
            Artifact::Rejects => "rejects report",
            Artifact::Matched => "matched buildings",
            Artifact::MatchReport => "match report",
            Artifact::Sightlines => "sightlines",
            Artifact::SightlineStats => "sightline stats",
            Artifact::Viewpoints => "viewpoints",
            Artifact::Coverage => "coverage report",
            Artifact::ImagesManifest => "images manifest",
            Artifact::FetchResults => "fetch results",
            Artifact::Assessments => "assessments",
            Artifact::EpcAssessments => "epc assessments",
            Artifact::AggregationResiduals => "aggregation residuals",
            Artifact::Assignments => "assignments",
            Artifact::ReportsIndex => "reports index",
            Artifact::Reviews => "review log",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, a: Artifact) -> PathBuf {
        self.root.join(a.file_name())
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn run_log(&self) -> PathBuf {
        self.root.join("run.log")
    }

    pub fn exists(&self, a: Artifact) -> bool {
        self.path(a).is_file()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: u32,
    }

    #[test]
    fn torn_line_is_dropped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        fs::write(&p, b"{\"id\":1}\n{\"id\":2}\n{\"id\":").unwrap();
        let (app, existing) = JsonlAppender::open::<Rec>(&p).unwrap();
        assert_eq!(existing, vec![Rec { id: 1 }, Rec { id: 2 }]);
        app.append(&Rec { id: 3 }).unwrap();
        drop(app);
        let (all, torn) = read_log::<Rec>(&p).unwrap();
        assert_eq!(all.len(), 3);
        assert!(torn.is_none());
    }

    #[test]
    fn complete_but_unterminated_line_counts_as_torn() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        fs::write(&p, b"{\"id\":1}\n{\"id\":2}").unwrap();
        let (v, torn) = read_log::<Rec>(&p).unwrap();
        assert_eq!(v, vec![Rec { id: 1 }]);
        assert_eq!(torn, Some(9));
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        fs::write(&p, b"{\"id\":1}\nnot json\n{\"id\":2}\n").unwrap();
        assert!(matches!(read_log::<Rec>(&p), Err(ArtifactError::Corrupt { .. })));
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        write_json(&p, &Rec { id: 9 }).unwrap();
        let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert_eq!(read_json::<Rec>(&p).unwrap(), Rec { id: 9 });
    }
}
