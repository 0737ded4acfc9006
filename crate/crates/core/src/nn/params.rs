use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::checkpoint::TensorBlob;

/// Deterministic RNG for a named stream of a run seed.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Named, ordered collection of trainable tensors.
///
/// A store can hand out a frozen view whose tensors share storage with the
/// originals but are detached from the autograd graph.
#[derive(Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    vars: BTreeMap<String, Var>,
    frozen_view: bool,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("dtype", &self.dtype)
            .field("tensors", &self.vars.len())
            .field("frozen_view", &self.frozen_view)
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { dtype, device: Device::Cpu, vars: BTreeMap::new(), frozen_view: false }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }

    /// Same storage, no gradient tracking.
    pub fn frozen(&self) -> Self {
        Self { frozen_view: true, ..self.clone() }
    }

    /// Independent copy of all values (used to snapshot before fine-tuning).
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = ParamStore::new(self.dtype);
        for (k, v) in &self.vars {
            out.vars.insert(k.clone(), Var::from_tensor(&v.as_tensor().copy()?)?);
        }
        out.frozen_view = self.frozen_view;
        Ok(out)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::arg(format!("duplicate parameter {name}")));
        }
        let v = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        let out = v.as_tensor().clone();
        self.vars.insert(name.to_string(), v);
        Ok(out)
    }

    pub fn from_values(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &self.device)?;
        self.insert(name, t)
    }

    pub fn normal(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std.max(0.0)).map_err(|e| Error::arg(e.to_string()))?;
        let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
        self.from_values(name, values, shape)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.from_values(name, vec![0.0; n], shape)
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        Ok(if self.frozen_view { v.as_tensor().detach() } else { v.as_tensor().clone() })
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    /// Overwrites the value of an existing parameter in place.
    pub fn set(&self, name: &str, t: &Tensor) -> Result<()> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        v.set(&t.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Flat parameter vector in name order (for finite differences).
    pub fn flat_values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
    }

    pub fn set_flat_values(&self, name: &str, values: Vec<f64>) -> Result<()> {
        let shape = self.get(name)?.dims().to_vec();
        let t = Tensor::from_vec(values, shape, &self.device)?;
        self.set(name, &t)
    }

    pub fn to_blobs(&self) -> Result<BTreeMap<String, TensorBlob>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), TensorBlob::from_tensor(v.as_tensor())?)))
            .collect()
    }

    pub fn from_blobs(blobs: &BTreeMap<String, TensorBlob>, dtype: DType) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        for (k, b) in blobs {
            let t = b.to_tensor(&store.device)?;
            store.insert(k, t)?;
        }
        Ok(store)
    }

    /// Replaces every value with the matching blob; names and shapes must agree.
    pub fn load_blobs(&self, blobs: &BTreeMap<String, TensorBlob>) -> Result<()> {
        if blobs.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: checkpoint {}, model {}",
                blobs.len(),
                self.vars.len()
            )));
        }
        for (k, v) in &self.vars {
            let b = blobs
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks {k}")))?;
            if b.shape != v.dims() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {k}: {:?} vs {:?}",
                    b.shape,
                    v.dims()
                )));
            }
            v.set(&b.to_tensor(&self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Bitwise equality of all values.
    pub fn same_values(&self, other: &ParamStore) -> Result<bool> {
        if self.vars.len() != other.vars.len() {
            return Ok(false);
        }
        for (k, v) in &self.vars {
            let Some(o) = other.vars.get(k) else { return Ok(false) };
            if TensorBlob::from_tensor(v.as_tensor())? != TensorBlob::from_tensor(o.as_tensor())? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn all_finite(&self) -> Result<bool> {
        for v in self.vars.values() {
            let s = v.as_tensor().to_dtype(DType::F64)?.abs()?.sum_all()?.to_scalar::<f64>()?;
            if !s.is_finite() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Adaptive-moment optimizer over a fixed set of variables.
pub struct Adam {
    inner: AdamW,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(Self { inner: AdamW::new(vars, params)? })
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.inner.step(grads)?;
        Ok(())
    }

    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let grads = loss.backward()?;
        self.step(&grads)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.inner.set_learning_rate(lr);
    }
}

/// Log-linear decay from `lr0` at step 0 to `lr1` at `total`.
pub fn lr_schedule(lr0: f64, lr1: f64, step: usize, total: usize) -> f64 {
    if total <= 1 || lr0 <= 0.0 || lr1 <= 0.0 {
        return lr0;
    }
    let f = step.min(total - 1) as f64 / (total - 1) as f64;
    lr0 * (lr1 / lr0).powf(f)
}
