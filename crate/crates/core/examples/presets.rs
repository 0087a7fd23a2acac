//! Writes the task presets, their desk-scale variants and two phantom specs as JSON.
//!
//! cargo run --example presets -- configs

use std::path::PathBuf;

use synapse::config::{ExperimentConfig, TaskName};
use synapse::data::PhantomSpec;
use synapse::modality::Modality;

fn write<T: serde::Serialize>(dir: &std::path::Path, name: &str, value: &T) -> synapse::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| synapse::Error::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> synapse::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    std::fs::create_dir_all(&dir).map_err(|e| synapse::Error::io(&dir, e))?;
    for (task, name) in [(TaskName::Wmh, "wmh"), (TaskName::Isles, "isles"), (TaskName::Brats, "brats")] {
        let cfg = ExperimentConfig::for_task(task);
        let o = &cfg.profile.optimizer;
        println!(
            "{name}: lr {:e}, {} epochs, batch {}, decay {:e}, modalities {:?}",
            o.lr, o.epochs, o.batch_size, o.weight_decay, cfg.profile.modalities
        );
        write(&dir, &format!("{name}.json"), &cfg)?;
        write(&dir, &format!("{name}_desk.json"), &ExperimentConfig::desk(task, 32, 200))?;
    }
    let lesion = PhantomSpec::lesion(8, &[Modality::Flair, Modality::T1w], (16, 32, 32), 7);
    write(&dir, "phantom_lesion.json", &lesion)?;
    let mods = [Modality::T1w, Modality::T1c, Modality::T2w, Modality::Flair];
    write(&dir, "phantom_tumor.json", &PhantomSpec::tumor(8, &mods, (8, 32, 32), 7))?;
    Ok(())
}
