//! Prints how the bottleneck groups streams for common modality sets.
//!
//! cargo run --example pairing

use synapse::modality::Modality::{self, *};
use synapse::model::pair_streams;

fn main() {
    let sets: [&[Modality]; 6] = [
        &[T1w, T1c, T2w, Flair],
        &[T1w, T1c, Dwi],
        &[Flair, T1w],
        &[Dwi, Adc],
        &[T1w, T1c, Flair, T2w, Dwi, Adc],
        &[Flair],
    ];
    for mods in sets {
        match pair_streams(mods) {
            Ok(plan) => println!("{:<40} {:<28} {:?}", format!("{mods:?}"), plan.describe(mods), plan.branch),
            Err(e) => println!("{:<40} rejected: {e}", format!("{mods:?}")),
        }
    }
}
