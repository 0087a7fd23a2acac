//! Scores a perturbed phantom mask against the original and runs a paired t-test.
//!
//! cargo run --example metrics

use ndarray::Axis;
use synapse::data::{generate_phantom, PhantomSpec};
use synapse::metrics::{ClassMetrics, MatchRule};
use synapse::modality::Modality;
use synapse::report::paired_t_test;

fn main() -> synapse::Result<()> {
    let cases = generate_phantom(&PhantomSpec::lesion(5, &[Modality::Flair], (12, 48, 48), 3))?;
    let (mut eroded, mut shifted) = (Vec::new(), Vec::new());
    for case in &cases {
        let gt = case.mask.class(0).mapv(|v| v > 0);
        // Erode in-plane by one voxel.
        let mut a = gt.clone();
        for ((z, y, x), v) in a.indexed_iter_mut() {
            let (h, w) = (gt.len_of(Axis(1)), gt.len_of(Axis(2)));
            *v = gt[[z, y, x]]
                && y > 0
                && x > 0
                && y + 1 < h
                && x + 1 < w
                && gt[[z, y - 1, x]]
                && gt[[z, y + 1, x]]
                && gt[[z, y, x - 1]]
                && gt[[z, y, x + 1]];
        }
        // Shift two voxels along x.
        let mut b = gt.clone();
        b.fill(false);
        let w = gt.len_of(Axis(2));
        b.slice_mut(ndarray::s![.., .., 2..]).assign(&gt.slice(ndarray::s![.., .., ..w - 2]));
        let spacing = case.volume.spacing;
        for (pred, out) in [(&a, &mut eroded), (&b, &mut shifted)] {
            let m = ClassMetrics::compute("lesion", pred.view(), gt.view(), spacing, MatchRule::Overlap);
            out.push(m.dsc);
        }
        let m = ClassMetrics::compute("lesion", a.view(), gt.view(), spacing, MatchRule::Iou(0.5));
        println!(
            "{}: eroded DSC {:.3} HD95 {:.2} AVD {:.1}% lesion F1 {:.2}",
            case.volume.subject_id,
            m.dsc,
            m.hd95,
            m.avd,
            m.lesion_f1
        );
    }
    let t = paired_t_test(&eroded, &shifted)?;
    println!("eroded vs shifted DSC: t = {:.3}, p = {:.4}, dof {}", t.t, t.p, t.dof);
    Ok(())
}
