use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, ConvNet, ConvNetSpec, ParamStore, Pool};

/// Fixed, seeded, randomly initialized conv feature extractor.
#[derive(Debug, Clone)]
pub struct RandomFeatures {
    net: ConvNet,
}

impl RandomFeatures {
    pub fn new(channels: &[usize], seed: u64, dtype: DType) -> Result<Self> {
        let spec = ConvNetSpec {
            in_channels: 3,
            in_res: 1 << channels.len(),
            channels: channels.to_vec(),
            head: vec![],
            pool: Pool::Mean,
            slope: 0.2,
        };
        let mut store = ParamStore::new(dtype);
        ConvNet::init(&mut store, "features", &spec, false, &mut seeded_rng(seed, "random-features"))?;
        Ok(Self { net: ConvNet::load(&store.frozen(), "features", &spec)? })
    }

    /// Input image plus the activations of every block.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = vec![x.clone()];
        out.extend(self.net.features(x)?);
        Ok(out)
    }

    /// Per-sample `Σ_l ‖φ_l(x) − φ_l(y)‖₂ / √n_l` as a `(B,)` tensor.
    pub fn distance(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        if x.dims() != y.dims() {
            return Err(Error::arg(format!("shape mismatch {:?} vs {:?}", x.dims(), y.dims())));
        }
        let b = x.dim(0)?;
        let fx = self.net.features(x)?;
        let fy = self.net.features(y)?;
        let mut total: Option<Tensor> = None;
        for (a, c) in fx.iter().zip(&fy) {
            let n = a.elem_count() / b;
            let d = (a - c)?.reshape((b, n))?.sqr()?.sum(1)?.maximum(1e-24)?.sqrt()?;
            let d = (d / (n as f64).sqrt())?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        total.ok_or_else(|| Error::arg("feature extractor has no layers"))
    }

    /// Spatially pooled multi-layer descriptors, `(B, Σ C_l)`.
    pub fn descriptors(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = self.net.features(x)?.iter().map(|f| f.mean((2, 3))).collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Tensor::cat(&pooled, 1)?)
    }
}

/// Diagonal Fréchet distance between two descriptor sets (rows are samples).
pub fn diagonal_frechet(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 || a[0].len() != b[0].len() {
        return Err(Error::arg("need at least two descriptors per set of equal width"));
    }
    let stats = |s: &[Vec<f64>]| {
        let n = s.len() as f64;
        let k = s[0].len();
        let mut mu = vec![0.0; k];
        for r in s {
            for (m, v) in mu.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; k];
        for r in s {
            for ((q, v), m) in var.iter_mut().zip(r).zip(&mu) {
                *q += (v - m).powi(2) / (n - 1.0);
            }
        }
        (mu, var)
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    Ok(ma
        .iter()
        .zip(&mb)
        .zip(va.iter().zip(&vb))
        .map(|((x, y), (p, q))| (x - y).powi(2) + p + q - 2.0 * (p * q).sqrt())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::to_vec_f64;
    use candle_core::Device;

    #[test]
    fn distance_is_zero_on_identity_and_symmetric() {
        let f = RandomFeatures::new(&[4, 8], 1, DType::F64).unwrap();
        let x = Tensor::rand(0f64, 1.0, (2, 3, 8, 8), &Device::Cpu).unwrap();
        let y = Tensor::rand(0f64, 1.0, (2, 3, 8, 8), &Device::Cpu).unwrap();
        assert!(to_vec_f64(&f.distance(&x, &x).unwrap()).unwrap().iter().all(|v| *v < 1e-10));
        let a = to_vec_f64(&f.distance(&x, &y).unwrap()).unwrap();
        let b = to_vec_f64(&f.distance(&y, &x).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frechet_of_identical_sets_is_zero() {
        let s = vec![vec![0.0, 1.0], vec![1.0, 3.0], vec![2.0, 2.0]];
        assert!(diagonal_frechet(&s, &s).unwrap().abs() < 1e-12);
        let shifted: Vec<Vec<f64>> = s.iter().map(|r| vec![r[0] + 1.0, r[1]]).collect();
        assert!((diagonal_frechet(&s, &shifted).unwrap() - 1.0).abs() < 1e-12);
    }
}
