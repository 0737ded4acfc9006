use std::path::Path;

use crate::config::{ExperimentConfig, RegressorConfig, CODE_VERSION};
use crate::error::{Error, Result};
use crate::generator::TrainMeta;
use crate::image::Image;
use crate::nn::{Checkpoint, ConvNetSpec, ConvRegressor, FitReport};
use crate::scene::{AttributeVector, K};
use crate::trainlog::TrainingLog;

pub const PREDICTOR_KIND: &str = "attribute-predictor";

/// Small conv regressor from an image to its `K` attributes.
#[derive(Debug, Clone)]
pub struct AttributePredictor {
    inner: ConvRegressor,
}

impl AttributePredictor {
    pub fn new(cfg: &RegressorConfig, resolution: usize, seed: u64) -> Result<Self> {
        let spec = ConvRegressor::spec_for(cfg, resolution, K);
        Ok(Self { inner: ConvRegressor::new(spec, seed, "attribute-predictor")? })
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.inner.report()
    }

    pub fn resolution(&self) -> usize {
        self.inner.spec().in_res
    }

    /// Predictions clipped to `[0, 1]`.
    pub fn predict(&self, images: &[Image]) -> Result<Vec<AttributeVector>> {
        if !self.inner.is_trained() {
            return Err(Error::arg("attribute predictor is untrained"));
        }
        self.inner.predict(images)?.iter().map(|v| AttributeVector::clipped(v)).collect()
    }

    pub fn to_checkpoint(&self, meta: &TrainMeta) -> Result<Checkpoint> {
        let header = serde_json::json!({ "spec": self.inner.spec(), "report": self.inner.report(), "meta": meta });
        Ok(Checkpoint { kind: PREDICTOR_KIND.into(), header, tensors: self.inner.to_blobs("")? })
    }

    pub fn save(&self, path: &Path, meta: &TrainMeta) -> Result<()> {
        self.to_checkpoint(meta)?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainMeta)> {
        ck.expect_kind(PREDICTOR_KIND)?;
        let spec: ConvNetSpec = ck.header_field("spec")?;
        let report: Option<FitReport> = ck.header_field("report")?;
        let meta: TrainMeta = ck.header_field("meta")?;
        if report.is_none() {
            return Err(Error::Checkpoint("attribute predictor checkpoint is untrained".into()));
        }
        Ok((Self { inner: ConvRegressor::from_blobs(spec, report, &ck.tensors, "")? }, meta))
    }

    pub fn load(path: &Path) -> Result<(Self, TrainMeta)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Fits on labelled images; the last tenth validates.
pub fn train_attribute_predictor(
    images: &[Image],
    attributes: &[AttributeVector],
    cfg: &RegressorConfig,
    seed: u64,
    log: &mut TrainingLog,
) -> Result<AttributePredictor> {
    let res = images.first().ok_or_else(|| Error::arg("empty training set"))?.resolution();
    let mut p = AttributePredictor::new(cfg, res, seed)?;
    let targets: Vec<Vec<f64>> = attributes.iter().map(|a| a.values().to_vec()).collect();
    let rep = p.inner.fit(images, &targets, cfg, seed, "attribute-predictor", log)?;
    log::info!("attribute predictor: val MAE {:.4}", rep.val_mae);
    Ok(p)
}

pub fn predictor_meta(cfg: &ExperimentConfig, p: &AttributePredictor) -> TrainMeta {
    TrainMeta {
        steps: cfg.eval.predictor.steps,
        seed: cfg.stage_seed("predictor"),
        config_hash: cfg.hash(),
        code_version: CODE_VERSION.into(),
        notes: serde_json::to_value(p.report()).unwrap_or_default(),
    }
}
