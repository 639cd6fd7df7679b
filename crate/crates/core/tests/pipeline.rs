use std::fs;
use std::path::{Path, PathBuf};

use webalign_core::pipeline::{
    cmd_all, cmd_evaluate, cmd_generate, cmd_train_graph, read_record, run_command, staleness,
    DirLock, PipelineConfig, Stage, METRICS, STAGES, USERS_EMB,
};
use webalign_core::Error;

fn smoke(dir: &Path) -> PipelineConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    PipelineConfig {
        artifact_dir: dir.to_path_buf(),
        ..PipelineConfig::load(&path).unwrap()
    }
}

fn ran(outcomes: &[webalign_core::pipeline::StageOutcome]) -> Vec<Stage> {
    outcomes.iter().filter(|o| o.ran).map(|o| o.stage).collect()
}

#[test]
fn second_run_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke(tmp.path());
    assert_eq!(ran(&cmd_all(&cfg, false).unwrap()), STAGES.to_vec());
    let records: Vec<_> = STAGES
        .iter()
        .map(|&s| read_record(tmp.path(), s).unwrap())
        .collect();
    let metrics = fs::read(tmp.path().join(METRICS)).unwrap();

    assert!(ran(&cmd_all(&cfg, false).unwrap()).is_empty());
    let again: Vec<_> = STAGES
        .iter()
        .map(|&s| read_record(tmp.path(), s).unwrap())
        .collect();
    assert_eq!(records, again);
    assert_eq!(metrics, fs::read(tmp.path().join(METRICS)).unwrap());
    assert!(!tmp.path().join(".lock").exists());

    assert_eq!(ran(&cmd_all(&cfg, true).unwrap()), STAGES.to_vec());
    assert_eq!(metrics, fs::read(tmp.path().join(METRICS)).unwrap());
}

#[test]
fn config_edit_reruns_only_downstream_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke(tmp.path());
    cmd_all(&cfg, false).unwrap();
    cfg.align.temperature = 0.05;
    assert_eq!(staleness(&cfg, Stage::TrainGraph).unwrap(), None);
    assert!(staleness(&cfg, Stage::TrainAlign).unwrap().is_some());
    assert_eq!(
        ran(&cmd_all(&cfg, false).unwrap()),
        vec![Stage::TrainAlign, Stage::Evaluate]
    );

    cfg.evaluate.hidden = 12;
    assert_eq!(ran(&cmd_all(&cfg, false).unwrap()), vec![Stage::Evaluate]);
}

#[test]
fn missing_artifact_names_its_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke(tmp.path());
    cmd_generate(&cfg, false).unwrap();
    cmd_train_graph(&cfg, false).unwrap();
    let e = cmd_evaluate(&cfg, false).unwrap_err();
    assert!(
        matches!(
            e,
            Error::MissingArtifact {
                producer: "train-align",
                ..
            }
        ),
        "{e}"
    );
    assert!(e.to_string().contains("train-align"));
    assert!(!tmp.path().join(METRICS).exists());
}

#[test]
fn stale_dependency_refused_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke(tmp.path());
    cmd_all(&cfg, false).unwrap();
    cfg.graph.train.epochs = 4;
    let e = run_command(&cfg, Stage::Evaluate, false).unwrap_err();
    match &e {
        Error::StaleArtifact { producer, .. } => assert_eq!(*producer, "train-graph"),
        other => panic!("expected a stale error, got {other}"),
    }
    assert!(e.to_string().contains("--force"));
    run_command(&cfg, Stage::Evaluate, true).unwrap();
}

#[test]
fn tampered_output_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke(tmp.path());
    cmd_all(&cfg, false).unwrap();
    let path = tmp.path().join(USERS_EMB);
    let original = fs::read(&path).unwrap();
    let mut bytes = original.clone();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();
    let why = staleness(&cfg, Stage::TrainGraph).unwrap().unwrap();
    assert!(why.contains(USERS_EMB), "{why}");
    // Retraining restores identical bytes, so downstream digests still match.
    assert_eq!(ran(&cmd_all(&cfg, false).unwrap()), vec![Stage::TrainGraph]);
    assert_eq!(fs::read(&path).unwrap(), original);

    fs::remove_file(tmp.path().join(METRICS)).unwrap();
    assert!(staleness(&cfg, Stage::Evaluate)
        .unwrap()
        .unwrap()
        .contains("missing"));
}

#[test]
fn locked_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke(tmp.path());
    let lock = DirLock::acquire(tmp.path()).unwrap();
    assert!(matches!(cmd_all(&cfg, false), Err(Error::Locked(_))));
    assert!(matches!(
        run_command(&cfg, Stage::Generate, false),
        Err(Error::Locked(_))
    ));
    drop(lock);
    run_command(&cfg, Stage::Generate, false).unwrap();
}

#[test]
fn fresh_runs_match_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_all(&smoke(a.path()), false).unwrap();
    cmd_all(&smoke(b.path()), false).unwrap();
    for stage in STAGES {
        for out in stage.outputs() {
            assert_eq!(
                fs::read(a.path().join(&out)).unwrap(),
                fs::read(b.path().join(&out)).unwrap(),
                "{out}"
            );
        }
    }
}
