//! Difficulty-aware slice sampling: slices with small lesions are drawn more often.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::config::SamplerConfig;
use crate::error::{Error, Result};
use crate::metrics::percentile;

/// Sampling distribution over slices given their lesion areas in pixels. Slices whose area is
/// positive and at most the `size_percentile` of positive areas get `oversample_factor` times the
/// weight of the others. The result sums to 1.
pub fn difficulty_weights(areas: &[usize], cfg: &SamplerConfig) -> Vec<f64> {
    let n = areas.len();
    if n == 0 {
        return Vec::new();
    }
    let positive: Vec<f64> = areas.iter().filter(|&&a| a > 0).map(|&a| a as f64).collect();
    let raw: Vec<f64> = if positive.is_empty() || !cfg.enabled {
        vec![1.0; n]
    } else {
        let threshold = percentile(&positive, cfg.size_percentile);
        areas
            .iter()
            .map(|&a| if a > 0 && a as f64 <= threshold { cfg.oversample_factor } else { 1.0 })
            .collect()
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Draws slice indices with replacement from a weight vector.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let dist = WeightedIndex::new(weights).map_err(|e| Error::config(format!("sampling weights: {e}")))?;
        Ok(WeightedSampler { dist })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn no_lesions_gives_uniform() {
        let w = difficulty_weights(&[0, 0, 0, 0], &SamplerConfig::default());
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn small_lesions_below_quartile_are_tripled() {
        let areas: Vec<usize> = (1..=100).collect();
        let w = difficulty_weights(&areas, &SamplerConfig::default());
        // P25 of 1..=100 is 25.75, so areas 1..=25 are oversampled.
        let total = 25.0 * 3.0 + 75.0;
        for (a, &x) in areas.iter().zip(&w) {
            let expected = if *a <= 25 { 3.0 } else { 1.0 } / total;
            assert!((x - expected).abs() < 1e-15, "area {a}");
        }
    }

    #[test]
    fn factor_one_is_uniform() {
        let cfg = SamplerConfig { oversample_factor: 1.0, ..Default::default() };
        let w = difficulty_weights(&[0, 3, 50, 7], &cfg);
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn weights_form_a_distribution(areas in proptest::collection::vec(0usize..200, 1..60),
                                       factor in 1.0f64..5.0) {
            let cfg = SamplerConfig { oversample_factor: factor, ..Default::default() };
            let w = difficulty_weights(&areas, &cfg);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let positive: Vec<f64> = areas.iter().filter(|&&a| a > 0).map(|&a| a as f64).collect();
            if !positive.is_empty() && factor > 1.0 {
                let t = percentile(&positive, 25.0);
                let raw: Vec<f64> = areas.iter().map(|&a| if a > 0 && (a as f64) <= t { factor } else { 1.0 }).collect();
                let total: f64 = raw.iter().sum();
                for (r, x) in raw.iter().zip(&w) {
                    prop_assert!((x - r / total).abs() < 1e-12);
                }
            }
        }
    }
}
