//! Small differentiable helpers built from candle primitives.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, DType, Device, Layout, Shape, Tensor, D};

use crate::error::Result;

/// `log(1 + e^x)` in the overflow-free form `max(x,0) + log(1 + e^{-|x|})`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Leaky ReLU as a fused op with a single-pass backward.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    let x = x.contiguous()?;
    Ok(x.apply_op1(LeakyRelu { slope })?)
}

struct LeakyRelu {
    slope: f64,
}

struct LeakyReluGrad {
    slope: f64,
}

fn contiguous_slice<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("fused op requires a contiguous input"),
    }
}

impl CustomOp1 for LeakyRelu {
    fn name(&self) -> &'static str {
        "leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(v) => {
                let a = self.slope as f32;
                CpuStorage::F32(contiguous_slice(v, l)?.iter().map(|&x| if x > 0.0 { x } else { a * x }).collect())
            }
            CpuStorage::F64(v) => {
                let a = self.slope;
                CpuStorage::F64(contiguous_slice(v, l)?.iter().map(|&x| if x > 0.0 { x } else { a * x }).collect())
            }
            _ => candle_core::bail!("leaky-relu supports f32 and f64"),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let g = grad.contiguous()?;
        Ok(Some(arg.apply_op2_no_bwd(&g, &LeakyReluGrad { slope: self.slope })?))
    }
}

impl CustomOp2 for LeakyReluGrad {
    fn name(&self) -> &'static str {
        "leaky-relu-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                let a = self.slope as f32;
                let (x, g) = (contiguous_slice(x, l1)?, contiguous_slice(g, l2)?);
                CpuStorage::F32(x.iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { a * g }).collect())
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                let a = self.slope;
                let (x, g) = (contiguous_slice(x, l1)?, contiguous_slice(g, l2)?);
                CpuStorage::F64(x.iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { a * g }).collect())
            }
            _ => candle_core::bail!("leaky-relu-grad dtype mismatch"),
        };
        Ok((out, l1.shape().clone()))
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Half-pixel-centred bilinear interpolation matrix `(2n, n)` with edge clamping.
pub fn upsample2_matrix(n: usize) -> Vec<f64> {
    let m = 2 * n;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let f = src - lo as f64;
        out[i * n + lo] += 1.0 - f;
        out[i * n + hi] += f;
    }
    out
}

/// Fixed 2x bilinear upsampling of `(B, C, H, W)` as two matrix products, so
/// gradients flow through it.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let dev = x.device();
    let uh = Tensor::from_vec(upsample2_matrix(h), (2 * h, h), dev)?.to_dtype(x.dtype())?;
    let uw = Tensor::from_vec(upsample2_matrix(w), (2 * w, w), dev)?
        .to_dtype(x.dtype())?
        .t()?
        .contiguous()?;
    let flat = x.reshape((b * c, h, w))?;
    let y = flat.broadcast_matmul(&uw)?;
    let y = uh.broadcast_matmul(&y)?;
    Ok(y.reshape((b, c, 2 * h, 2 * w))?)
}

/// Exclusive prefix sum along the last dimension.
pub fn exclusive_cumsum_last(x: &Tensor) -> Result<Tensor> {
    let n = x.dim(D::Minus1)?;
    let mut tri = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            tri[i * n + j] = 1.0;
        }
    }
    let tri = Tensor::from_vec(tri, (n, n), x.device())?.to_dtype(x.dtype())?;
    Ok(x.broadcast_matmul(&tri)?)
}

pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn to_vec_f64(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn from_f64(values: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Per-sample Euclidean norm over all but the first dimension.
/// A `1e-24` floor keeps the gradient finite at exact zero.
pub fn per_sample_l2(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    let sq = x.reshape((b, ()))?.sqr()?.sum(1)?;
    Ok(sq.maximum(1e-24)?.sqrt()?)
}

/// Per-sample L1 norm over all but the first dimension.
pub fn per_sample_l1(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.abs()?.sum(1)?)
}
