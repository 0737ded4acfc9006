use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn::ops::exclusive_cumsum_last;

/// Composites one ray. Returns the accumulated feature and the residual
/// transmittance `T_{S+1}`.
pub fn volume_render_ray(densities: &[f64], features: &[Vec<f64>], deltas: &[f64]) -> Result<(Vec<f64>, f64)> {
    let s = densities.len();
    if s == 0 || features.len() != s || deltas.len() != s {
        return Err(Error::arg("densities, features and deltas must share a nonzero length"));
    }
    if densities.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::arg("densities must be non-negative"));
    }
    if deltas.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::arg("deltas must be positive"));
    }
    let f = features[0].len();
    if features.iter().any(|r| r.len() != f) {
        return Err(Error::arg("ragged feature matrix"));
    }
    let mut out = vec![0.0; f];
    let mut optical = 0.0f64;
    for i in 0..s {
        let t = (-optical).exp();
        let tau = densities[i] * deltas[i];
        let w = t * -(-tau).exp_m1();
        for (o, x) in out.iter_mut().zip(&features[i]) {
            *o += w * x;
        }
        optical += tau;
    }
    Ok((out, (-optical).exp()))
}

/// Batched compositing weights.
///
/// `sigma_delta` has shape `(.., S)`; returns `(weights (.., S), T_{S+1} (..))`.
pub fn composite_weights(sigma_delta: &Tensor) -> Result<(Tensor, Tensor)> {
    let before = exclusive_cumsum_last(sigma_delta)?;
    let trans = before.neg()?.exp()?;
    let alpha = (1.0 - sigma_delta.neg()?.exp()?)?;
    let weights = (trans * alpha)?;
    let last = sigma_delta.sum(D::Minus1)?.neg()?.exp()?;
    Ok((weights, last))
}
