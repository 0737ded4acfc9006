use std::collections::BTreeMap;

use crate::config::{CoeffRanges, RegressorConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{ConvNetSpec, ConvRegressor, FitReport, TensorBlob};
use crate::scene::{MorphCoeffs, D_COEFFS};
use crate::trainlog::TrainingLog;

pub(crate) const PREFIX: &str = "regressor.";

/// Conv net predicting all normalized morphable coefficients of an image.
#[derive(Debug, Clone)]
pub struct CoeffRegressor {
    inner: ConvRegressor,
}

impl CoeffRegressor {
    pub fn new(cfg: &RegressorConfig, resolution: usize, seed: u64) -> Result<Self> {
        let spec = ConvRegressor::spec_for(cfg, resolution, D_COEFFS);
        Ok(Self { inner: ConvRegressor::new(spec, seed, "coeff-regressor")? })
    }

    pub fn is_trained(&self) -> bool {
        self.inner.is_trained()
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.inner.report()
    }

    pub fn predict_normalized(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        self.inner.predict(images)
    }

    /// Predictions clipped to the sampling ranges.
    pub fn predict(&self, images: &[Image], ranges: &CoeffRanges) -> Result<Vec<MorphCoeffs>> {
        self.predict_normalized(images)?
            .into_iter()
            .map(|v| {
                let clipped: Vec<f64> = v.iter().map(|x| if x.is_finite() { x.clamp(-1.0, 1.0) } else { 0.0 }).collect();
                MorphCoeffs::from_normalized(&clipped, ranges)
            })
            .collect()
    }

    pub(crate) fn to_blobs(&self) -> Result<BTreeMap<String, TensorBlob>> {
        self.inner.to_blobs(PREFIX)
    }

    pub(crate) fn header(&self) -> serde_json::Value {
        serde_json::json!({ "spec": self.inner.spec(), "report": self.inner.report() })
    }

    pub(crate) fn from_header(h: &serde_json::Value, blobs: &BTreeMap<String, TensorBlob>) -> Result<Self> {
        let spec: ConvNetSpec =
            serde_json::from_value(h["spec"].clone()).map_err(|e| Error::Checkpoint(format!("regressor spec: {e}")))?;
        let report: Option<FitReport> =
            serde_json::from_value(h["report"].clone()).map_err(|e| Error::Checkpoint(format!("regressor report: {e}")))?;
        Ok(Self { inner: ConvRegressor::from_blobs(spec, report, blobs, PREFIX)? })
    }
}

/// Fits the coefficient regressor on labelled renders with an L2 loss.
pub fn train_coeff_regressor(
    coeffs: &[MorphCoeffs],
    images: &[Image],
    cfg: &RegressorConfig,
    ranges: &CoeffRanges,
    seed: u64,
    log: &mut TrainingLog,
) -> Result<CoeffRegressor> {
    let res = images.first().ok_or_else(|| Error::arg("empty training set"))?.resolution();
    let mut r = CoeffRegressor::new(cfg, res, seed)?;
    let targets: Vec<Vec<f64>> = coeffs.iter().map(|c| c.normalized(ranges)).collect();
    let rep = r.inner.fit(images, &targets, cfg, seed, "coeff-regressor", log)?;
    log::info!("coefficient regressor: val MAE {:.4}", rep.val_mae);
    Ok(r)
}
