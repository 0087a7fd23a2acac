//! Trains on a small lesion phantom, tunes post-processing on validation subjects and scores a
//! held-out test cohort.
//!
//! cargo run --release --example train_phantom -- [steps]

use candle_core::DType;
use synapse::config::{ExperimentConfig, TaskName};
use synapse::data::{generate_phantom, prepare_case, PhantomSpec, PreparedCase, Split};
use synapse::inference::{evaluate_test, predict_case, tune_with_config, TuningCase};
use synapse::metrics::MatchRule;
use synapse::modality::Modality;
use synapse::train::Trainer;

fn cohort(n: usize, depth: usize, seed: u64) -> synapse::Result<Vec<PreparedCase>> {
    let spec = PhantomSpec::lesion(n, &[Modality::Flair, Modality::T1w], (depth, 32, 32), seed);
    generate_phantom(&spec)?.iter().map(|c| prepare_case(c, (32, 32))).collect()
}

fn main() -> synapse::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let (train, val, test) = (cohort(8, 50, 11)?, cohort(2, 16, 12)?, cohort(3, 16, 13)?);

    let cfg = ExperimentConfig::desk(TaskName::Wmh, 32, steps);
    let mut trainer = Trainer::new(&cfg, train, vec![], DType::F32)?;
    while trainer.step < trainer.total_steps() {
        let rec = trainer.advance()?;
        if rec.step % 10 == 0 {
            println!("step {:>4} loss {:.4} lr {:.2e}", rec.step, rec.loss, rec.lr);
        }
    }

    let tuning = val
        .iter()
        .map(|c| {
            Ok(TuningCase {
                subject_id: c.subject_id.clone(),
                split: Split::Validation,
                probs: predict_case(&trainer.model, c, &cfg.inference)?.probs,
                truth: c.original_mask.data.clone(),
            })
        })
        .collect::<synapse::Result<Vec<_>>>()?;
    let record = tune_with_config(&tuning, &cfg.inference)?;
    println!("tuned tau {} s_min {} (validation DSC {:.4})", record.tau, record.s_min, record.mean_dsc);

    let test: Vec<_> = test.into_iter().map(|c| (c, Split::Test)).collect();
    let report = evaluate_test(&trainer.model, &test, &record, &cfg.inference, MatchRule::Overlap)?;
    print!("{}", report.to_csv()?);
    Ok(())
}
