use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::{per_sample_l1, per_sample_l2, scalar_f64, softplus};
use crate::nn::{Mlp, ParamStore, RandomFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_style: f64,
    pub lambda_view: f64,
    pub lambda_adv: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_style, self.lambda_view, self.lambda_adv].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::arg("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

impl From<&crate::config::InversionConfig> for LossWeights {
    fn from(c: &crate::config::InversionConfig) -> Self {
        Self { lambda_style: c.lambda_style, lambda_view: c.lambda_view, lambda_adv: c.lambda_adv }
    }
}

/// Non-saturating GAN losses from raw logits:
/// `loss_D = mean softplus(−l_real) + mean softplus(l_fake)`,
/// `loss_E = mean softplus(−l_fake)`.
pub fn adv_losses_from_logits(real: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
    let loss_d = (softplus(&real.neg()?)?.mean_all()? + softplus(fake)?.mean_all()?)?;
    let loss_e = softplus(&fake.neg()?)?.mean_all()?;
    Ok((loss_d, loss_e))
}

/// Fully connected discriminator on concatenated `(w_geo, w_tex)`.
pub struct LatentDiscriminator {
    store: ParamStore,
    mlp: Mlp,
}

impl LatentDiscriminator {
    pub fn new(d_w: usize, width: usize, layers: usize, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        if layers < 1 {
            return Err(Error::arg("discriminator needs at least one layer"));
        }
        let mut widths = vec![2 * d_w];
        widths.extend(std::iter::repeat_n(width, layers - 1));
        widths.push(1);
        let mut store = ParamStore::new(dtype);
        Mlp::init(&mut store, "disc", &widths, 0.2, rng)?;
        let mlp = Mlp::load(&store, "disc", layers, 0.2)?;
        Ok(Self { store, mlp })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn logits(&self, w_geo: &Tensor, w_tex: &Tensor) -> Result<Tensor> {
        let x = Tensor::cat(&[w_geo, w_tex], 1)?.to_dtype(self.store.dtype())?;
        Ok(self.mlp.forward(&x)?.squeeze(1)?)
    }

    /// `(loss_D, loss_E)` for prior samples `real` and encoder outputs `fake`.
    pub fn adv_losses(&self, real: (&Tensor, &Tensor), fake: (&Tensor, &Tensor)) -> Result<(Tensor, Tensor)> {
        adv_losses_from_logits(&self.logits(real.0, real.1)?, &self.logits(fake.0, fake.1)?)
    }
}

/// Per-sample perceptual distance, `(B,)`.
pub fn perceptual_distance(features: &RandomFeatures, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    features.distance(x, y)
}

/// Ground-truth codes of a batch, each `(B, ·)`.
pub struct CodeTargets<'a> {
    pub w_geo: &'a Tensor,
    pub w_tex: &'a Tensor,
    pub d: &'a Tensor,
}

/// Predicted codes of a batch.
pub struct CodePreds<'a> {
    pub w_geo: &'a Tensor,
    pub w_tex: &'a Tensor,
    pub d: &'a Tensor,
}

/// Batch-mean loss components; `total` is differentiable.
pub struct RecLoss {
    pub total: Tensor,
    pub l2: f64,
    pub perceptual: f64,
    pub sim: f64,
    pub style: f64,
    pub view: f64,
    pub total_value: f64,
}

/// `L_sim + λ_style L_style + λ_view L_view`, with
/// `L_sim = ‖x − x̂‖₂ + perceptual(x, x̂)`,
/// `L_style = ‖w_geo − w_geo*‖₁ + ‖w_tex − w_tex*‖₁`, `L_view = ‖d − d*‖₁`,
/// all per sample then averaged over the batch. Without targets only `L_sim`
/// is used.
pub fn rec_loss(
    x: &Tensor,
    recon: &Tensor,
    preds: &CodePreds,
    targets: Option<&CodeTargets>,
    weights: &LossWeights,
    features: &RandomFeatures,
) -> Result<RecLoss> {
    if x.dims() != recon.dims() {
        return Err(Error::arg("image and reconstruction shapes differ"));
    }
    let l2 = per_sample_l2(&(x - recon)?)?.mean_all()?;
    let perc = perceptual_distance(features, x, recon)?.mean_all()?;
    let sim = (&l2 + &perc)?;
    let (total, style_v, view_v) = match targets {
        Some(t) => {
            let style = (per_sample_l1(&(preds.w_geo - t.w_geo)?)? + per_sample_l1(&(preds.w_tex - t.w_tex)?)?)?.mean_all()?;
            let view = per_sample_l1(&(preds.d - t.d)?)?.mean_all()?;
            let total = ((&sim + (&style * weights.lambda_style)?)? + (&view * weights.lambda_view)?)?;
            (total, scalar_f64(&style)?, scalar_f64(&view)?)
        }
        None => (sim.clone(), 0.0, 0.0),
    };
    Ok(RecLoss {
        l2: scalar_f64(&l2)?,
        perceptual: scalar_f64(&perc)?,
        sim: scalar_f64(&sim)?,
        style: style_v,
        view: view_v,
        total_value: scalar_f64(&total)?,
        total,
    })
}

/// `tr Cov(w) / tr Cov_prior` for rows of concatenated codes.
pub fn variance_ratio(codes: &[Vec<f64>], prior_trace: f64) -> f64 {
    let n = codes.len();
    if n < 2 || prior_trace <= 0.0 {
        return 0.0;
    }
    let k = codes[0].len();
    let mut tr = 0.0;
    for j in 0..k {
        let mean = codes.iter().map(|c| c[j]).sum::<f64>() / n as f64;
        tr += codes.iter().map(|c| (c[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    tr / prior_trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::to_vec_f64;
    use crate::nn::seeded_rng;
    use candle_core::Device;

    #[test]
    fn constant_half_probability_gives_two_log_two() {
        let z = Tensor::zeros(8, DType::F64, &Device::Cpu).unwrap();
        let (d, e) = adv_losses_from_logits(&z, &z).unwrap();
        assert!((scalar_f64(&d).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((scalar_f64(&e).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_has_vanishing_loss() {
        let real = Tensor::new(&[60.0f64, 80.0], &Device::Cpu).unwrap();
        let fake = Tensor::new(&[-60.0f64, -70.0], &Device::Cpu).unwrap();
        let (d, _) = adv_losses_from_logits(&real, &fake).unwrap();
        assert!(scalar_f64(&d).unwrap() < 1e-20);
        let extreme = Tensor::new(&[1e4f64], &Device::Cpu).unwrap();
        let (d, e) = adv_losses_from_logits(&extreme, &extreme).unwrap();
        assert!(scalar_f64(&d).unwrap().is_finite() && scalar_f64(&e).unwrap().is_finite());
    }

    #[test]
    fn exact_inversion_has_zero_reconstruction_loss() {
        let f = RandomFeatures::new(&[4, 4], 3, DType::F64).unwrap();
        let x = Tensor::rand(0f64, 1.0, (2, 3, 8, 8), &Device::Cpu).unwrap();
        let w = Tensor::rand(0f64, 1.0, (2, 5), &Device::Cpu).unwrap();
        let p = CodePreds { w_geo: &w, w_tex: &w, d: &w };
        let t = CodeTargets { w_geo: &w, w_tex: &w, d: &w };
        let weights = LossWeights { lambda_style: 0.5, lambda_view: 5.0, lambda_adv: 0.1 };
        let r = rec_loss(&x, &x, &p, Some(&t), &weights, &f).unwrap();
        assert!(r.total_value.abs() < 1e-10 && r.style == 0.0 && r.view == 0.0);
    }

    #[test]
    fn discriminator_logits_are_finite() {
        let d = LatentDiscriminator::new(4, 16, 3, DType::F64, &mut seeded_rng(1, "d")).unwrap();
        let w = Tensor::rand(-3f64, 3.0, (5, 4), &Device::Cpu).unwrap();
        assert!(to_vec_f64(&d.logits(&w, &w).unwrap()).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn variance_ratio_of_copies_is_zero() {
        assert_eq!(variance_ratio(&vec![vec![1.0, 2.0]; 4], 1.0), 0.0);
        let r = variance_ratio(&[vec![0.0], vec![2.0]], 2.0);
        assert!((r - 1.0).abs() < 1e-12);
    }
}
