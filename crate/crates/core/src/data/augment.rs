//! Random geometric and photometric augmentation of `[M, H, W]` image / `[K, H, W]` mask pairs.
//!
//! Geometric transforms (flip, rotation/scaling, elastic warp) move image and mask together, the
//! mask with nearest-neighbour sampling so it stays binary. Photometric jitter and channel
//! dropout only touch the image.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::AugmentationConfig;

/// Mirrors the last (width) axis.
pub fn flip_width<T: Clone>(x: &Array3<T>) -> Array3<T> {
    let mut y = x.clone();
    y.invert_axis(Axis(2));
    y.as_standard_layout().into_owned()
}

/// Source coordinate `(row, col)` of every output pixel.
struct SamplingGrid {
    rows: Array2<f64>,
    cols: Array2<f64>,
}

impl SamplingGrid {
    fn identity(h: usize, w: usize) -> Self {
        SamplingGrid {
            rows: Array2::from_shape_fn((h, w), |(r, _)| r as f64),
            cols: Array2::from_shape_fn((h, w), |(_, c)| c as f64),
        }
    }

    /// Rotation by `angle` (radians) and isotropic scaling about the slice centre.
    fn affine(&mut self, angle: f64, scale: f64) {
        let (h, w) = self.rows.dim();
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = angle.sin_cos();
        for (r, c) in self.rows.iter_mut().zip(self.cols.iter_mut()) {
            let (y, x) = ((*r - cy) / scale, (*c - cx) / scale);
            *r = cos * y + sin * x + cy;
            *c = -sin * y + cos * x + cx;
        }
    }

    /// Adds a smooth displacement interpolated bilinearly from a coarse control grid.
    fn elastic<R: Rng>(&mut self, spacing: f64, sigma: f64, rng: &mut R) {
        let (h, w) = self.rows.dim();
        let nodes = |n: usize| ((n.max(2) - 1) as f64 / spacing).ceil() as usize + 1;
        let (gh, gw) = (nodes(h), nodes(w));
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let dy = Array2::from_shape_fn((gh, gw), |_| normal.sample(rng));
        let dx = Array2::from_shape_fn((gh, gw), |_| normal.sample(rng));
        for ((r, c), (sr, sc)) in ndarray::indices((h, w)).into_iter().zip(self.rows.iter_mut().zip(self.cols.iter_mut())) {
            let (gy, gx) = (r as f64 / spacing, c as f64 / spacing);
            *sr += bilinear(&dy, gy, gx);
            *sc += bilinear(&dx, gy, gx);
        }
    }
}

/// Bilinear sample of `a` at `(y, x)`, zero outside.
fn bilinear(a: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = a.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |r: f64, c: f64| -> f64 {
        if r < 0.0 || c < 0.0 || r >= h as f64 || c >= w as f64 {
            0.0
        } else {
            a[[r as usize, c as usize]]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1.0))
        + fy * ((1.0 - fx) * at(y0 + 1.0, x0) + fx * at(y0 + 1.0, x0 + 1.0))
}

fn warp_image(x: &Array3<f32>, g: &SamplingGrid) -> Array3<f32> {
    let mut out = Array3::<f32>::zeros(x.dim());
    for (ch, mut o) in x.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let plane = ch.mapv(|v| v as f64);
        for ((v, &r), &c) in o.iter_mut().zip(g.rows.iter()).zip(g.cols.iter()) {
            *v = bilinear(&plane, r, c) as f32;
        }
    }
    out
}

fn warp_mask(m: &Array3<u8>, g: &SamplingGrid) -> Array3<u8> {
    let (_, h, w) = m.dim();
    let mut out = Array3::<u8>::zeros(m.dim());
    for (ch, mut o) in m.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        for ((v, &r), &c) in o.iter_mut().zip(g.rows.iter()).zip(g.cols.iter()) {
            let (r, c) = (r.round(), c.round());
            if r >= 0.0 && c >= 0.0 && r < h as f64 && c < w as f64 {
                *v = ch[[r as usize, c as usize]];
            }
        }
    }
    out
}

/// Gamma on the channel's min-max range, then brightness shift and contrast scaling about the mean.
fn photometric<R: Rng>(image: &mut Array3<f32>, cfg: &AugmentationConfig, rng: &mut R) {
    for mut ch in image.axis_iter_mut(Axis(0)) {
        let gamma = rng.random_range(cfg.gamma_range[0]..=cfg.gamma_range[1]);
        let brightness = rng.random_range(-cfg.brightness..=cfg.brightness);
        let contrast = 1.0 + rng.random_range(-cfg.contrast..=cfg.contrast);
        let (lo, hi) = ch.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v as f64), b.max(v as f64))
        });
        let range = hi - lo;
        if range > 0.0 {
            ch.mapv_inplace(|v| (lo + range * ((v as f64 - lo) / range).powf(gamma)) as f32);
        }
        let mean = ch.iter().map(|&v| v as f64).sum::<f64>() / ch.len().max(1) as f64;
        ch.mapv_inplace(|v| ((v as f64 - mean) * contrast + mean + brightness) as f32);
    }
}

/// One random augmentation of an image/mask pair. All randomness comes from `rng`, so a replayed
/// generator reproduces the output exactly.
pub fn augment<R: Rng>(
    image: &Array3<f32>,
    mask: &Array3<u8>,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> (Array3<f32>, Array3<u8>) {
    let mut image = image.clone();
    let mut mask = mask.clone();
    if rng.random::<f64>() < cfg.flip_prob {
        image = flip_width(&image);
        mask = flip_width(&mask);
    }
    let (_, h, w) = image.dim();
    let mut grid = None;
    if rng.random::<f64>() < cfg.affine_prob {
        let angle = rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg).to_radians();
        let scale = 1.0 + rng.random_range(-cfg.scale_frac..=cfg.scale_frac);
        grid.get_or_insert_with(|| SamplingGrid::identity(h, w)).affine(angle, scale);
    }
    if rng.random::<f64>() < cfg.elastic_prob {
        grid.get_or_insert_with(|| SamplingGrid::identity(h, w))
            .elastic(cfg.elastic_spacing, cfg.elastic_sigma, rng);
    }
    if let Some(g) = grid {
        image = warp_image(&image, &g);
        mask = warp_mask(&mask, &g);
    }
    let [lo, hi] = cfg.photometric_prob;
    let p = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if rng.random::<f64>() < p {
        photometric(&mut image, cfg, rng);
    }
    let m = image.dim().0;
    if rng.random::<f64>() < cfg.channel_dropout_prob && m > 1 {
        let drop = rng.random_range(0..m);
        image.index_axis_mut(Axis(0), drop).fill(0.0);
    }
    (image, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    fn sample() -> (Array3<f32>, Array3<u8>) {
        let image = Array3::from_shape_fn((2, 16, 16), |(m, r, c)| (m * 7 + r * 3 + c) as f32 / 10.0);
        let mask = Array3::from_shape_fn((1, 16, 16), |(_, r, c)| u8::from((4..9).contains(&r) && (3..12).contains(&c)));
        (image, mask)
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let (image, mask) = sample();
        let (a, b) = augment(&image, &mask, &AugmentationConfig::none(), &mut seeded_rng(1));
        assert_eq!(a, image);
        assert_eq!(b, mask);
    }

    #[test]
    fn flip_is_an_involution() {
        let (image, _) = sample();
        assert_eq!(flip_width(&flip_width(&image)), image);
        assert_ne!(flip_width(&image), image);
    }

    #[test]
    fn replay_is_bitwise_identical_and_mask_stays_binary() {
        let (image, mask) = sample();
        let cfg = AugmentationConfig::wmh();
        for seed in 0..20 {
            let a = augment(&image, &mask, &cfg, &mut seeded_rng(seed));
            let b = augment(&image, &mask, &cfg, &mut seeded_rng(seed));
            assert_eq!(a, b);
            assert!(a.1.iter().all(|&v| v <= 1));
            assert!(a.0.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn dropout_zeroes_exactly_one_channel() {
        let (image, mask) = sample();
        let mut cfg = AugmentationConfig::none();
        cfg.channel_dropout_prob = 1.0;
        let (a, b) = augment(&image, &mask, &cfg, &mut seeded_rng(3));
        let zeroed = a.axis_iter(Axis(0)).filter(|c| c.iter().all(|&v| v == 0.0)).count();
        assert_eq!(zeroed, 1);
        assert_eq!(b, mask);
    }

    #[test]
    fn quarter_turn_rotates_mask() {
        let mut grid = SamplingGrid::identity(5, 5);
        grid.affine(std::f64::consts::FRAC_PI_2, 1.0);
        let mut m = Array3::<u8>::zeros((1, 5, 5));
        m[[0, 0, 2]] = 1;
        let r = warp_mask(&m, &grid);
        assert_eq!(r.iter().filter(|&&v| v == 1).count(), 1);
        assert_eq!(r[[0, 2, 0]] + r[[0, 2, 4]], 1);
    }
}
