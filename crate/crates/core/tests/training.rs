use candle_core::DType;

use synapse::config::{ExperimentConfig, TaskName};
use synapse::data::{generate_phantom, prepare_case, PhantomSpec, PreparedCase};
use synapse::modality::Modality;
use synapse::train::{Trainer, LOG_FILE, NAN_DUMP_FILE};
use synapse::Error;

fn cases(n: usize, seed: u64) -> Vec<PreparedCase> {
    let spec = PhantomSpec::lesion(n, &[Modality::Flair, Modality::T1w], (6, 32, 32), seed);
    generate_phantom(&spec).unwrap().iter().map(|c| prepare_case(c, (32, 32)).unwrap()).collect()
}

fn config(steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk(TaskName::Wmh, 32, steps);
    cfg.profile.optimizer.batch_size = 6;
    cfg.profile.optimizer.seed = 3;
    cfg
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = cases(2, 71);
    let cfg = config(4);
    let mut whole = Trainer::new(&cfg, data.clone(), vec![], DType::F32).unwrap();
    whole.run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(&cfg, data.clone(), vec![], DType::F32).unwrap();
    first.run_until(3).unwrap();
    first.save_checkpoint(&dir.path().join("mid")).unwrap();
    let mut second = Trainer::resume(&dir.path().join("mid"), data, vec![], DType::F32).unwrap();
    assert_eq!(second.step, 3);
    second.run().unwrap();

    assert_eq!(whole.model.params().digest().unwrap(), second.model.params().digest().unwrap());
    assert_eq!(whole.history, second.history);
}

#[test]
fn zero_learning_rate_and_decay_leave_weights_unchanged() {
    let mut cfg = config(3);
    cfg.profile.optimizer.lr = 0.0;
    cfg.profile.optimizer.weight_decay = 0.0;
    let mut t = Trainer::new(&cfg, cases(1, 72), vec![], DType::F32).unwrap();
    let before = t.model.params().digest().unwrap();
    t.run().unwrap();
    assert_eq!(t.step, 3);
    assert_eq!(before, t.model.params().digest().unwrap());
}

#[test]
fn non_finite_loss_aborts_with_a_batch_dump() {
    let mut data = cases(1, 73);
    data[0].image.fill(f32::NAN);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&config(3), data, vec![], DType::F32).unwrap().with_output(dir.path()).unwrap();
    match t.run() {
        Err(e @ Error::NonFinite { step: 0, .. }) => assert_eq!(e.exit_code(), 4),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(NAN_DUMP_FILE)).unwrap()).unwrap();
    assert_eq!(dump["step"], 0);
    assert!(!dump["slices"].as_array().unwrap().is_empty());
}

#[test]
fn log_has_one_line_per_step_and_one_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(&config(3), cases(1, 74), cases(1, 75), DType::F32)
        .unwrap()
        .with_output(dir.path())
        .unwrap();
    t.run().unwrap();
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let kinds: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "step").count(), 3);
    assert_eq!(kinds.iter().filter(|k| *k == "epoch").count(), t.history.len());
    assert!(t.history.iter().all(|e| e.val_dsc.is_some()));
    assert!(dir.path().join("last").is_dir());
}
