use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{from_f64, scalar_f64, to_vec_f64};
use crate::nn::{Linear, ParamStore};

/// Time grid of the fixed-step solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solver {
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl Default for Solver {
    fn default() -> Self {
        Self { t0: 0.0, t1: 1.0, steps: 40 }
    }
}

/// Right-hand side `f(v, t, a)` of the flow ODE.
pub trait Dynamics {
    fn dim(&self) -> usize;

    /// Per-batch conditioning precomputed once per integration.
    fn condition(&self, a: &Tensor) -> Result<Tensor>;

    /// `(f, tr ∂f/∂v)` for a `(B, D)` state; the trace is `(B,)`.
    fn eval(&self, v: &Tensor, t: f64, cond: &Tensor, trace: bool) -> Result<(Tensor, Option<Tensor>)>;
}

/// `dv/dt = A v`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    at: Tensor,
    trace: f64,
}

impl LinearDynamics {
    pub fn new(a: &[Vec<f64>]) -> Result<Self> {
        let d = a.len();
        if a.iter().any(|r| r.len() != d) {
            return Err(Error::arg("linear dynamics need a square matrix"));
        }
        let at: Vec<f64> = (0..d).flat_map(|j| a.iter().map(move |r| r[j])).collect();
        let trace = (0..d).map(|i| a[i][i]).sum();
        Ok(Self { at: from_f64(at, &[d, d], DType::F64)?, trace })
    }

    pub fn zero(d: usize) -> Result<Self> {
        Self::new(&vec![vec![0.0; d]; d])
    }
}

impl Dynamics for LinearDynamics {
    fn dim(&self) -> usize {
        self.at.dims()[0]
    }

    fn condition(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.clone())
    }

    fn eval(&self, v: &Tensor, _t: f64, _cond: &Tensor, trace: bool) -> Result<(Tensor, Option<Tensor>)> {
        let f = v.matmul(&self.at.to_dtype(v.dtype())?)?;
        let tr = if trace { Some(Tensor::full(self.trace, v.dim(0)?, v.device())?.to_dtype(v.dtype())?) } else { None };
        Ok((f, tr))
    }
}

pub const TIME_FEATURES: usize = 3;

fn time_embedding(t: f64) -> [f64; TIME_FEATURES] {
    let w = std::f64::consts::PI * t;
    [t, w.sin(), w.cos()]
}

/// Two tanh hidden layers on `[v; γ(t); a]` plus a linear skip in `v`.
///
/// The final layer and the skip start at zero, so a fresh network is the
/// identity flow.
#[derive(Debug, Clone)]
pub struct MlpDynamics {
    l1v: Linear,
    l1t: Tensor,
    l1a: Tensor,
    l2: Linear,
    l3: Linear,
    skip: Tensor,
}

impl MlpDynamics {
    pub fn init(store: &mut ParamStore, name: &str, d: usize, k: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let fan = (d + TIME_FEATURES + k) as f64;
        Linear::init(store, &format!("{name}.l1v"), d, hidden, (d as f64 / fan).sqrt(), rng)?;
        store.normal(&format!("{name}.l1t"), &[TIME_FEATURES, hidden], 1.0 / fan.sqrt(), rng)?;
        store.normal(&format!("{name}.l1a"), &[k, hidden], 1.0 / fan.sqrt(), rng)?;
        Linear::init(store, &format!("{name}.l2"), hidden, hidden, 1.0, rng)?;
        Linear::init_zero(store, &format!("{name}.l3"), hidden, d)?;
        store.zeros(&format!("{name}.skip"), &[d, d])?;
        Ok(())
    }

    pub fn load(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            l1v: Linear::load(store, &format!("{name}.l1v"))?,
            l1t: store.get(&format!("{name}.l1t"))?,
            l1a: store.get(&format!("{name}.l1a"))?,
            l2: Linear::load(store, &format!("{name}.l2"))?,
            l3: Linear::load(store, &format!("{name}.l3"))?,
            skip: store.get(&format!("{name}.skip"))?,
        })
    }

    pub fn attributes(&self) -> usize {
        self.l1a.dims()[0]
    }

    pub fn hidden(&self) -> usize {
        self.l2.in_dim()
    }

    /// Frobenius norm of the attribute input weights.
    pub fn attribute_path_norm(&self) -> Result<f64> {
        scalar_f64(&self.l1a.sqr()?.sum_all()?.sqrt()?)
    }
}

impl Dynamics for MlpDynamics {
    fn dim(&self) -> usize {
        self.l1v.in_dim()
    }

    fn condition(&self, a: &Tensor) -> Result<Tensor> {
        if a.dim(1)? != self.attributes() {
            return Err(Error::arg(format!("flow expects {} attributes, got {}", self.attributes(), a.dim(1)?)));
        }
        Ok(a.matmul(&self.l1a)?.broadcast_add(self.l1v.bias())?)
    }

    fn eval(&self, v: &Tensor, t: f64, cond: &Tensor, trace: bool) -> Result<(Tensor, Option<Tensor>)> {
        let te = from_f64(time_embedding(t).to_vec(), &[1, TIME_FEATURES], v.dtype())?.matmul(&self.l1t)?;
        let h1 = v.matmul(self.l1v.weight())?.broadcast_add(&te)?.add(cond)?.tanh()?;
        let h2 = self.l2.forward(&h1)?.tanh()?;
        let f = (self.l3.forward(&h2)? + v.matmul(&self.skip)?)?;
        if !trace {
            return Ok((f, None));
        }
        // tr J = Σ_{k,h} s1_k s2_h W2[k,h] (W3 W1v)[h,k] + tr(skip)
        let s1 = (1.0 - h1.sqr()?)?;
        let s2 = (1.0 - h2.sqr()?)?;
        let q = self.l3.weight().matmul(self.l1v.weight())?;
        let r = (self.l2.weight() * q.t()?)?;
        let eye = Tensor::eye(self.dim(), v.dtype(), v.device())?;
        let diag_skip = (&self.skip * eye)?.sum_all()?.reshape(1)?;
        let tr = s1.matmul(&r)?.mul(&s2)?.sum(D::Minus1)?.broadcast_add(&diag_skip)?;
        Ok((f, Some(tr)))
    }
}

/// Result of one integration.
#[derive(Debug, Clone)]
pub struct Integrated {
    pub v: Tensor,
    /// `∫_{t_from}^{t_to} tr(∂f/∂v) dt` per sample, when requested.
    pub trace_integral: Option<Tensor>,
}

/// Classical RK4 with `solver.steps` uniform steps from `t_from` to `t_to`
/// (either direction). With `check`, every step is tested for finiteness.
pub fn integrate<F: Dynamics + ?Sized>(
    f: &F,
    v: &Tensor,
    a: &Tensor,
    t_from: f64,
    t_to: f64,
    steps: usize,
    trace: bool,
    check: bool,
) -> Result<Integrated> {
    if steps == 0 {
        return Err(Error::arg("solver needs at least one step"));
    }
    if v.dim(1)? != f.dim() {
        return Err(Error::arg(format!("flow state has {} dims, dynamics expect {}", v.dim(1)?, f.dim())));
    }
    let cond = f.condition(a)?;
    let h = (t_to - t_from) / steps as f64;
    let mut v = v.clone();
    let mut acc: Option<Tensor> = None;
    for i in 0..steps {
        let t = t_from + h * i as f64;
        let (k1, r1) = f.eval(&v, t, &cond, trace)?;
        let (k2, r2) = f.eval(&(&v + (&k1 * (h / 2.0))?)?, t + h / 2.0, &cond, trace)?;
        let (k3, r3) = f.eval(&(&v + (&k2 * (h / 2.0))?)?, t + h / 2.0, &cond, trace)?;
        let (k4, r4) = f.eval(&(&v + (&k3 * h)?)?, t + h, &cond, trace)?;
        let inc = ((k1 + (k2 * 2.0)?)? + ((k3 * 2.0)? + k4)?)?;
        v = (v + (inc * (h / 6.0))?)?;
        if let (Some(r1), Some(r2), Some(r3), Some(r4)) = (r1, r2, r3, r4) {
            let step = (((r1 + (r2 * 2.0)?)? + ((r3 * 2.0)? + r4)?)? * (h / 6.0))?;
            acc = Some(match acc {
                Some(a) => (a + step)?,
                None => step,
            });
        }
        if check && !scalar_f64(&v.sum_all()?)?.is_finite() {
            return Err(Error::Numerical(format!("flow integration became non-finite at step {}", i + 1)));
        }
    }
    Ok(Integrated { v, trace_integral: acc })
}

/// `log N(z; 0, I)` per row.
pub fn standard_normal_log_density(z: &Tensor) -> Result<Tensor> {
    let d = z.dim(1)? as f64;
    Ok(((z.sqr()?.sum(D::Minus1)? * -0.5)? - 0.5 * d * (2.0 * std::f64::consts::PI).ln())?)
}

/// `log p(w | a) = log N(z) − ∫_{t0}^{t1} tr(∂f/∂v) dt`, with `z` the state
/// integrated back from `t1` to `t0`.
pub fn log_likelihood<F: Dynamics + ?Sized>(f: &F, w: &Tensor, a: &Tensor, solver: &Solver, check: bool) -> Result<Tensor> {
    let out = integrate(f, w, a, solver.t1, solver.t0, solver.steps, true, check)?;
    let tr = out.trace_integral.expect("trace requested");
    Ok((standard_normal_log_density(&out.v)? + tr)?)
}

pub fn rows_tensor(rows: &[Vec<f64>], dtype: DType) -> Result<Tensor> {
    let k = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::arg("ragged rows"));
    }
    from_f64(rows.concat(), &[rows.len(), k], dtype)
}

pub fn tensor_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let k = t.dim(1)?;
    Ok(to_vec_f64(t)?.chunks(k).map(|c| c.to_vec()).collect())
}
