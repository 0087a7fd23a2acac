//! Warmup + cosine learning-rate schedule and Adam with decoupled weight decay.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};

use crate::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Schedule multiplier in `[0, 1]`: linear ramp over `warmup` steps, then half-cosine to 0 at `total`.
pub fn schedule(step: usize, total: usize, warmup: usize) -> f64 {
    let step = step.min(total);
    if warmup > 0 && step < warmup {
        return step as f64 / warmup as f64;
    }
    if total <= warmup {
        return 1.0;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Learning rate at `step` of `total`.
pub fn lr_at(step: usize, total: usize, warmup: usize, lr: f64) -> f64 {
    lr * schedule(step, total, warmup)
}

/// Adam with decoupled weight decay: `p <- p - eta (lr * m_hat / (sqrt(v_hat) + eps) + wd * p)`,
/// where `eta` is the schedule multiplier. With `lr = 0` weights still decay when `wd > 0`.
#[derive(Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Updates applied so far.
    pub t: usize,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        AdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            betas: cfg.betas,
            eps: cfg.eps,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every parameter; parameters without a gradient get a zero gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, eta: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, var) in params.iter() {
            let p = var.as_tensor();
            let g = match grads.get(p) {
                Some(g) => g.clone(),
                None => p.zeros_like()?,
            };
            let (m, v) = match self.moments.remove(name) {
                Some(mv) => mv,
                None => (p.zeros_like()?, p.zeros_like()?),
            };
            let m = ((m * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((v * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let adam = ((&m / bc1)? / denom)?;
            let decayed = (p * (1.0 - eta * self.weight_decay))?;
            let next = (decayed - (adam * (eta * self.lr))?)?;
            var.set(&next)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = HashMap::new();
        for (name, (m, v)) in &self.moments {
            map.insert(format!("m.{name}"), m.clone());
            map.insert(format!("v.{name}"), v.clone());
        }
        map.insert("t".to_string(), Tensor::new(&[self.t as u32], &candle_core::Device::Cpu)?);
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path, dtype: DType) -> Result<()> {
        let map = candle_core::safetensors::load(path, &candle_core::Device::Cpu)?;
        let t = map.get("t").ok_or_else(|| Error::config("optimizer state lacks a step count"))?;
        self.t = t.to_vec1::<u32>()?[0] as usize;
        self.moments.clear();
        for (key, m) in &map {
            if let Some(name) = key.strip_prefix("m.") {
                let v = map
                    .get(&format!("v.{name}"))
                    .ok_or_else(|| Error::config(format!("optimizer state lacks v.{name}")))?;
                self.moments.insert(name.to_string(), (m.to_dtype(dtype)?, v.to_dtype(dtype)?));
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients, and the gradients scaled down to `max_norm` when above it.
pub fn clip_grad_norm(params: &ParamStore, grads: &mut GradStore, max_norm: Option<f64>) -> Result<f64> {
    let mut sq = 0.0;
    for (_, var) in params.iter() {
        if let Some(g) = grads.get(var.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if let Some(max) = max_norm {
        if norm > max && norm.is_finite() {
            let scale = max / norm;
            for (_, var) in params.iter() {
                let p = var.as_tensor();
                if let Some(g) = grads.remove(p) {
                    grads.insert(p, (g * scale)?);
                }
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{seeded_rng, Init};

    #[test]
    fn schedule_landmarks() {
        assert_eq!(lr_at(0, 100, 10, 1e-3), 0.0);
        assert_eq!(lr_at(10, 100, 10, 1e-3), 1e-3);
        assert!((lr_at(55, 100, 10, 1e-3) - 5e-4).abs() < 1e-15);
        assert!(lr_at(100, 100, 10, 1e-3).abs() < 1e-18);
        assert_eq!(lr_at(5, 100, 10, 1e-3), 5e-4);
    }

    fn store() -> ParamStore {
        let mut s = ParamStore::new(DType::F64);
        let mut rng = seeded_rng(0);
        Init::new(&mut s, &mut rng).uniform("w", &[3, 4], 1.0).unwrap();
        s
    }

    fn grads_of(s: &ParamStore) -> GradStore {
        let w = s.get("w").unwrap().as_tensor();
        (w.sqr().unwrap().sum_all().unwrap()).backward().unwrap()
    }

    #[test]
    fn zero_lr_without_decay_leaves_weights() {
        let s = store();
        let before = s.digest().unwrap();
        let cfg = OptimizerConfig { lr: 0.0, weight_decay: 0.0, ..crate::config::TaskProfile::wmh().optimizer };
        let mut opt = AdamW::new(&cfg);
        for _ in 0..5 {
            let g = grads_of(&s);
            opt.step(&s, &g, 1.0).unwrap();
        }
        assert_eq!(s.digest().unwrap(), before);
    }

    #[test]
    fn zero_lr_decay_shrinks_multiplicatively() {
        let s = store();
        let w0 = s.get("w").unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let cfg = OptimizerConfig { lr: 0.0, weight_decay: 0.1, ..crate::config::TaskProfile::wmh().optimizer };
        let mut opt = AdamW::new(&cfg);
        for _ in 0..3 {
            let g = grads_of(&s);
            opt.step(&s, &g, 0.5).unwrap();
        }
        let w = s.get("w").unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in w0.iter().zip(&w) {
            assert!((b - a * 0.95f64.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let s = store();
        let w0 = s.get("w").unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let cfg = OptimizerConfig { lr: 0.01, weight_decay: 0.0, eps: 0.0, ..crate::config::TaskProfile::wmh().optimizer };
        let mut opt = AdamW::new(&cfg);
        let g = grads_of(&s);
        opt.step(&s, &g, 1.0).unwrap();
        let w = s.get("w").unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in w0.iter().zip(&w) {
            assert!((b - (a - 0.01 * a.signum())).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let s = store();
        let mut g = grads_of(&s);
        let n = clip_grad_norm(&s, &mut g, Some(0.5)).unwrap();
        assert!(n > 0.5);
        let after = clip_grad_norm(&s, &mut g, None).unwrap();
        assert!((after - 0.5).abs() < 1e-12);
    }

    #[test]
    fn state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        let cfg = crate::config::TaskProfile::wmh().optimizer;
        let mut a = AdamW::new(&cfg);
        let g = grads_of(&s);
        a.step(&s, &g, 1.0).unwrap();
        a.save(&dir.path().join("o.safetensors")).unwrap();
        let mut b = AdamW::new(&cfg);
        b.load(&dir.path().join("o.safetensors"), DType::F64).unwrap();
        assert_eq!(b.t, 1);
        assert_eq!(b.moments.len(), 1);
        let (ma, mb) = (&a.moments["w"].0, &b.moments["w"].0);
        assert_eq!(ma.to_vec2::<f64>().unwrap(), mb.to_vec2::<f64>().unwrap());
    }
}
