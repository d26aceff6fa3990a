use heritage_core::artifacts::{is_temp_name, Artifact};
use heritage_core::config::Config;
use heritage_core::fixtures::synth_town;
use heritage_core::pipeline::{Pipeline, PipelineError, Stage, StageOptions};

fn town(n: usize) -> (tempfile::TempDir, Pipeline) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth_town(5, n).write(&dir.path().join("town")).unwrap();
    let p = Pipeline::new(dir.path().join("ws"), Config::load(&cfg).unwrap());
    (dir, p)
}

#[test]
fn full_run_produces_consistent_funnel_and_every_artifact() {
    let (_dir, p) = town(200);
    p.run_all(&StageOptions::default()).unwrap();
    let f = p.funnel().unwrap();
    assert!(f.is_consistent());
    for (i, total) in f.total.iter().enumerate() {
        let sum: u64 = f.by_category.values().map(|v| v[i]).sum();
        assert_eq!(sum, *total, "stage {}", f.stages[i]);
    }
    for w in f.total.windows(2).skip(1) {
        assert!(w[0] >= w[1], "building stages only shrink: {:?}", f.total);
    }
    for a in [Artifact::Datasets, Artifact::Matched, Artifact::Viewpoints, Artifact::ImagesManifest, Artifact::Assessments, Artifact::EpcAssessments, Artifact::Assignments, Artifact::ReportsIndex] {
        assert!(p.workspace.exists(a), "{}", a.file_name());
    }
    let leftovers: Vec<_> = walk(p.workspace.root()).into_iter().filter(|n| is_temp_name(n)).collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn stages_refuse_to_run_without_prerequisites() {
    let (_dir, p) = town(50);
    let e = p.run_stage(Stage::Assess, &StageOptions::default()).unwrap_err();
    assert!(matches!(e, PipelineError::MissingArtifact(_)));
    assert_eq!(e.to_string(), "missing artifact: images manifest");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn rerunning_report_is_byte_identical() {
    let (_dir, p) = town(100);
    p.run_all(&StageOptions::default()).unwrap();
    let read = || {
        let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(p.workspace.reports_dir())
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|path| (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap()))
            .collect();
        v.sort();
        v
    };
    let before = read();
    p.run_stage(Stage::Report, &StageOptions::default()).unwrap();
    assert_eq!(read(), before);
}

#[test]
fn resumed_assessment_skips_finished_images() {
    let (_dir, p) = town(100);
    for s in &Stage::ALL[..5] {
        p.run_stage(*s, &StageOptions::default()).unwrap();
    }
    let first = p.run_stage(Stage::Assess, &StageOptions { max_new: Some(10), ..Default::default() }).unwrap();
    assert_eq!(first.summary["new_calls"], 10);
    let second = p.run_stage(Stage::Assess, &StageOptions::default()).unwrap();
    assert_eq!(second.summary["skipped_existing"], 10);
    assert_eq!(second.summary["pending"], 0);
}

fn walk(dir: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    out
}
