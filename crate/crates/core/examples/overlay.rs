//! Writes PNG overlays for a phantom subject against a shifted copy of its mask.
//!
//! cargo run --example overlay -- /tmp/overlay

use std::path::PathBuf;

use ndarray::s;
use synapse::data::{generate_phantom, PhantomSpec};
use synapse::modality::Modality;
use synapse::overlay::write_overlays;

fn main() -> synapse::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "overlay".into()));
    let case = generate_phantom(&PhantomSpec::lesion(1, &[Modality::Flair], (6, 64, 64), 9))?.remove(0);
    let truth = case.mask.class(0).mapv(|v| v > 0);
    let mut pred = truth.clone();
    pred.fill(false);
    pred.slice_mut(s![.., 3.., ..]).assign(&truth.slice(s![.., ..61, ..]));
    let written = write_overlays(&out, case.volume.channel(0), pred.view(), truth.view())?;
    println!("{} slices written to {}", written.len(), out.display());
    Ok(())
}
