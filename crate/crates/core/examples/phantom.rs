//! Generates a lesion phantom in the raw on-disk layout and summarises it.
//!
//! cargo run --example phantom -- /tmp/phantom

use std::path::PathBuf;

use synapse::data::io::write_raw_case;
use synapse::data::{generate_phantom, PhantomSpec};
use synapse::modality::Modality;

fn main() -> synapse::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantom".into()));
    let spec = PhantomSpec::lesion(4, &[Modality::Flair, Modality::T1w], (16, 64, 64), 5);
    for case in generate_phantom(&spec)? {
        let lesion = case.mask.class(0).iter().filter(|&&v| v > 0).count();
        let dir = write_raw_case(&out, &case, Some(spec.seed))?;
        println!("{} lesion voxels {lesion:>5} -> {}", case.volume.subject_id, dir.display());
    }
    Ok(())
}
