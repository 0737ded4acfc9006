use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::RegressorConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::ops::{scalar_f64, to_vec_f64};
use crate::nn::{lr_schedule, seeded_rng, Adam, ConvNet, ConvNetSpec, ParamStore, Pool, TensorBlob};
use crate::trainlog::TrainingLog;

/// Validation summary of a fitted regressor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub val_mae_per_output: Vec<f64>,
}

/// Image → vector conv regressor with a flattening head.
#[derive(Debug, Clone)]
pub struct ConvRegressor {
    spec: ConvNetSpec,
    store: ParamStore,
    net: ConvNet,
    report: Option<FitReport>,
}

fn mae(pred: &[Vec<f64>], target: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let k = target[0].len();
    let mut per = vec![0.0; k];
    for (p, t) in pred.iter().zip(target) {
        for j in 0..k {
            per[j] += (p[j] - t[j]).abs() / target.len() as f64;
        }
    }
    (per.iter().sum::<f64>() / k as f64, per)
}

impl ConvRegressor {
    pub fn spec_for(cfg: &RegressorConfig, in_res: usize, outputs: usize) -> ConvNetSpec {
        ConvNetSpec {
            in_channels: 3,
            in_res,
            channels: (0..cfg.blocks).map(|i| cfg.base_channels << i).collect(),
            head: vec![cfg.hidden, outputs],
            pool: Pool::Flatten,
            slope: 0.2,
        }
    }

    pub fn new(spec: ConvNetSpec, seed: u64, stream: &str) -> Result<Self> {
        let mut store = ParamStore::new(DType::F32);
        ConvNet::init(&mut store, "net", &spec, false, &mut seeded_rng(seed, stream))?;
        let net = ConvNet::load(&store, "net", &spec)?;
        Ok(Self { spec, store, net, report: None })
    }

    pub fn spec(&self) -> &ConvNetSpec {
        &self.spec
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    pub fn is_trained(&self) -> bool {
        self.report.is_some()
    }

    pub fn outputs(&self) -> usize {
        self.spec.out_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(&x.to_dtype(DType::F32)?)
    }

    pub fn predict(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let k = self.outputs();
        let frozen = ConvNet::load(&self.store.frozen(), "net", &self.spec)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let y = frozen.forward(&Image::batch_to_tensor(&refs, DType::F32, &Device::Cpu)?)?;
            out.extend(to_vec_f64(&y)?.chunks(k).map(|c| c.to_vec()));
        }
        Ok(out)
    }

    /// Fits with mean squared error; the last tenth of the data validates.
    pub fn fit(
        &mut self,
        images: &[Image],
        targets: &[Vec<f64>],
        cfg: &RegressorConfig,
        seed: u64,
        stage: &str,
        log: &mut TrainingLog,
    ) -> Result<FitReport> {
        let k = self.outputs();
        if images.len() != targets.len() || images.len() < 4 || targets.iter().any(|t| t.len() != k) {
            return Err(Error::arg("regressor needs at least four aligned samples with matching target width"));
        }
        let n_val = (images.len() / 10).max(1);
        let n_train = images.len() - n_val;
        let mut opt = Adam::new(self.store.vars(), cfg.lr)?;
        let mut rng = seeded_rng(seed, stage);
        let mut order: Vec<usize> = (0..n_train).collect();
        let mut cursor = order.len();
        let batch = cfg.batch.min(n_train).max(1);
        for step in 0..cfg.steps {
            opt.set_lr(lr_schedule(cfg.lr, cfg.lr_final, step, cfg.steps));
            let mut idx = Vec::with_capacity(batch);
            while idx.len() < batch {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let refs: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
            let x = Image::batch_to_tensor(&refs, DType::F32, &Device::Cpu)?;
            let t: Vec<f32> = idx.iter().flat_map(|&i| targets[i].iter().map(|&v| v as f32)).collect();
            let t = Tensor::from_vec(t, (batch, k), &Device::Cpu)?;
            let loss = (self.net.forward(&x)? - t)?.sqr()?.mean_all()?;
            let lv = scalar_f64(&loss)?;
            if !lv.is_finite() {
                return Err(Error::Numerical(format!("{stage}: non-finite loss at step {step}")));
            }
            opt.backward_step(&loss)?;
            log.record(stage, step, &serde_json::json!({ "loss": lv }))?;
        }
        let pred_val = self.predict(&images[n_train..])?;
        let (val_mae, per) = mae(&pred_val, &targets[n_train..]);
        let m = n_train.min(256);
        let (train_mae, _) = mae(&self.predict(&images[..m])?, &targets[..m]);
        let report = FitReport { steps: cfg.steps, train_mae, val_mae, val_mae_per_output: per };
        if val_mae > cfg.max_val_mae {
            log::warn!("{stage}: val MAE {val_mae:.4} above the configured bound {:.4}", cfg.max_val_mae);
        }
        self.report = Some(report.clone());
        Ok(report)
    }

    pub fn to_blobs(&self, prefix: &str) -> Result<BTreeMap<String, TensorBlob>> {
        Ok(self.store.to_blobs()?.into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect())
    }

    /// Restores from blobs whose names start with `prefix`.
    pub fn from_blobs(
        spec: ConvNetSpec,
        report: Option<FitReport>,
        blobs: &BTreeMap<String, TensorBlob>,
        prefix: &str,
    ) -> Result<Self> {
        let own: BTreeMap<String, TensorBlob> = blobs
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        let store = ParamStore::from_blobs(&own, DType::F32)?;
        let net = ConvNet::load(&store, "net", &spec).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { spec, store, net, report })
    }
}
