//! Named trainable parameters with deterministic, seed-driven initialization.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every trainable tensor of a model keyed by a dotted path, in sorted order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, t: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Names under `prefix` (a dotted path segment).
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.vars
            .keys()
            .filter(move |k| k.as_str() == prefix || k.starts_with(&format!("{prefix}.")))
    }

    /// Overwrites a parameter in place; shape must match.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if var.shape() != value.shape() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                var.shape(),
                value.shape()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn to_map(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Loads every tensor of `map` into the same-named parameter. Missing or extra names are errors.
    pub fn load_map(&self, map: &HashMap<String, Tensor>) -> Result<()> {
        if map.len() != self.vars.len() {
            return Err(Error::config(format!(
                "checkpoint holds {} tensors, model has {}",
                map.len(),
                self.vars.len()
            )));
        }
        for name in self.vars.keys() {
            let t = map
                .get(name)
                .ok_or_else(|| Error::config(format!("checkpoint is missing `{name}`")))?;
            self.set(name, t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.to_map(), path)?;
        Ok(())
    }

    pub fn load(&self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &self.device)?;
        self.load_map(&map)
    }

    /// SHA-256 over names, shapes and little-endian values in sorted name order.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Parameter factory scoped to a dotted prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Init {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn pp(&mut self, name: impl AsRef<str>) -> Init<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    fn from_values(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &self.store.device)?;
        let path = self.path(name);
        self.store.insert(path, t)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.from_values(name, shape, values)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
        let values = (0..n).map(|_| dist.sample(&mut *self.rng)).collect();
        self.from_values(name, shape, values)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.from_values(name, shape, vec![value; n])
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        self.uniform(name, shape, 1.0 / (fan_in.max(1) as f64).sqrt())
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(seed: u64) -> ParamStore {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = seeded_rng(seed);
        let mut init = Init::new(&mut store, &mut rng);
        init.pp("enc").pp("conv1").uniform("weight", &[4, 2, 3, 3], 0.3).unwrap();
        init.pp("enc").constant("bias", &[4], 0.0).unwrap();
        store
    }

    #[test]
    fn same_seed_same_digest() {
        assert_eq!(build(3).digest().unwrap(), build(3).digest().unwrap());
        assert_ne!(build(3).digest().unwrap(), build(4).digest().unwrap());
    }

    #[test]
    fn names_are_dotted_and_unique() {
        let store = build(0);
        let names: Vec<_> = store.iter().map(|(k, _)| k.clone()).collect();
        assert_eq!(names, vec!["enc.bias", "enc.conv1.weight"]);
        assert_eq!(store.names_with_prefix("enc.conv1").count(), 1);
        let mut store = store;
        let mut rng = seeded_rng(0);
        let mut init = Init::new(&mut store, &mut rng);
        assert!(init.pp("enc").constant("bias", &[4], 1.0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = build(1);
        let path = dir.path().join("w.safetensors");
        a.save(&path).unwrap();
        let b = build(2);
        b.load(&path).unwrap();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }
}
