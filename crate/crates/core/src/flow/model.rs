use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cnf::{integrate, log_likelihood, rows_tensor, tensor_rows, MlpDynamics, Solver};
use crate::config::{Branch, ExperimentConfig, FlowConfig, CODE_VERSION};
use crate::error::{Error, Result};
use crate::generator::TrainMeta;
use crate::nn::ops::scalar_f64;
use crate::nn::{lr_schedule, seeded_rng, Adam, Checkpoint, ParamStore};
use crate::scene::{attribute_index, AttributeVector, ATTRIBUTE_NAMES, K};
use crate::trainlog::TrainingLog;

pub const FLOW_KIND: &str = "flow";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowArch {
    pub d_w: usize,
    pub hidden: usize,
    pub attributes: Vec<String>,
    pub solver: Solver,
    pub routing: BTreeMap<String, Branch>,
}

impl FlowArch {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let f = &cfg.flow;
        Self {
            d_w: cfg.generator.d_w,
            hidden: f.hidden,
            attributes: ATTRIBUTE_NAMES.iter().map(|s| s.to_string()).collect(),
            solver: Solver { t0: f.t0, t1: f.t1, steps: f.steps },
            routing: f.routing.clone(),
        }
    }
}

/// One training triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub w_geo: Vec<f64>,
    pub w_tex: Vec<f64>,
    pub attributes: AttributeVector,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FlowReport {
    /// Mean per-dimension NLL over the first and last 50 steps per branch.
    pub initial_nll: BTreeMap<String, f64>,
    pub final_nll: BTreeMap<String, f64>,
    pub steps: usize,
}

/// The two conditional flows `φ_geo`, `φ_tex` (always `f64`).
#[derive(Debug, Clone)]
pub struct FlowModel {
    arch: FlowArch,
    store: ParamStore,
    geo: MlpDynamics,
    tex: MlpDynamics,
}

impl FlowModel {
    pub fn init(arch: FlowArch, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(DType::F64);
        for b in [Branch::Geo, Branch::Tex] {
            let mut rng = seeded_rng(seed, &format!("flow-{}", b.name()));
            MlpDynamics::init(&mut store, b.name(), arch.d_w, arch.attributes.len(), arch.hidden, &mut rng)?;
        }
        Self::from_parts(arch, store)
    }

    fn from_parts(arch: FlowArch, store: ParamStore) -> Result<Self> {
        if arch.attributes.len() != K || arch.attributes.iter().zip(ATTRIBUTE_NAMES).any(|(a, b)| a != b) {
            return Err(Error::Checkpoint("flow attribute schema does not match this build".into()));
        }
        let geo = MlpDynamics::load(&store, "geo")?;
        let tex = MlpDynamics::load(&store, "tex")?;
        Ok(Self { arch, store, geo, tex })
    }

    pub fn arch(&self) -> &FlowArch {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dynamics(&self, b: Branch) -> &MlpDynamics {
        match b {
            Branch::Geo => &self.geo,
            Branch::Tex => &self.tex,
        }
    }

    pub fn branch_of(&self, attribute: &str) -> Result<Branch> {
        attribute_index(attribute)?;
        self.arch
            .routing
            .get(attribute)
            .copied()
            .ok_or_else(|| Error::arg(format!("routing table has no branch for `{attribute}`")))
    }

    fn attr_tensor(a: &[&AttributeVector]) -> Result<Tensor> {
        rows_tensor(&a.iter().map(|v| v.values().to_vec()).collect::<Vec<_>>(), DType::F64)
    }

    fn check_code(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.arch.d_w {
            return Err(Error::arg(format!("style code has {} entries, flow expects {}", w.len(), self.arch.d_w)));
        }
        Ok(())
    }

    /// Integrates `v` between two times for a single code.
    pub fn integrate_code(&self, b: Branch, v: &[f64], a: &AttributeVector, t_from: f64, t_to: f64) -> Result<Vec<f64>> {
        self.check_code(v)?;
        let out = integrate(
            self.dynamics(b),
            &rows_tensor(&[v.to_vec()], DType::F64)?,
            &Self::attr_tensor(&[a])?,
            t_from,
            t_to,
            self.arch.solver.steps,
            false,
            true,
        )?;
        Ok(tensor_rows(&out.v)?.remove(0))
    }

    /// `z = v(t0)` starting from `v(t1) = w`.
    pub fn invert_code(&self, b: Branch, w: &[f64], a: &AttributeVector) -> Result<Vec<f64>> {
        self.integrate_code(b, w, a, self.arch.solver.t1, self.arch.solver.t0)
    }

    /// `w' = v(t1)` starting from `v(t0) = z`, conditioned on `a'`.
    pub fn edit_code(&self, b: Branch, z: &[f64], a_edited: &AttributeVector) -> Result<Vec<f64>> {
        self.integrate_code(b, z, a_edited, self.arch.solver.t0, self.arch.solver.t1)
    }

    pub fn log_likelihood(&self, b: Branch, w: &[f64], a: &AttributeVector) -> Result<f64> {
        self.check_code(w)?;
        let lp = log_likelihood(
            self.dynamics(b),
            &rows_tensor(&[w.to_vec()], DType::F64)?,
            &Self::attr_tensor(&[a])?,
            &self.arch.solver,
            true,
        )?;
        scalar_f64(&lp.sum_all()?)
    }

    /// Applies `edits` to `(w_geo, w_tex)` whose attributes are `a`.
    ///
    /// Each edited attribute is routed to one branch; a branch without edits
    /// is returned unchanged. An empty edit map is a no-op.
    pub fn edit_codes(
        &self,
        w_geo: &[f64],
        w_tex: &[f64],
        a: &AttributeVector,
        edits: &BTreeMap<String, f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut targets: BTreeMap<Branch, AttributeVector> = BTreeMap::new();
        for (name, value) in edits {
            let b = self.branch_of(name)?;
            let cur = targets.get(&b).unwrap_or(a).clone();
            targets.insert(b, cur.with(name, *value)?);
        }
        let mut out = (w_geo.to_vec(), w_tex.to_vec());
        for (b, a_edited) in &targets {
            let w = match b {
                Branch::Geo => &mut out.0,
                Branch::Tex => &mut out.1,
            };
            let z = self.invert_code(*b, w, a)?;
            *w = self.edit_code(*b, &z, a_edited)?;
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, meta: &TrainMeta, report: Option<&FlowReport>) -> Result<Checkpoint> {
        let header = serde_json::json!({ "arch": self.arch, "meta": meta, "report": report });
        Ok(Checkpoint { kind: FLOW_KIND.into(), header, tensors: self.store.to_blobs()? })
    }

    pub fn save(&self, path: &Path, meta: &TrainMeta, report: Option<&FlowReport>) -> Result<()> {
        self.to_checkpoint(meta, report)?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, TrainMeta)> {
        ck.expect_kind(FLOW_KIND)?;
        let arch: FlowArch = ck.header_field("arch")?;
        let meta: TrainMeta = ck.header_field("meta")?;
        let store = ParamStore::from_blobs(&ck.tensors, DType::F64).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let m = Self::from_parts(arch, store).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((m, meta))
    }

    pub fn load(path: &Path) -> Result<(Self, TrainMeta)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Maximum-likelihood training of both branches, independently.
///
/// Codes get Gaussian dequantization noise each step. Fails with a numerical
/// error (model rolled back to the last finite state) on divergence.
pub fn train_flows(model: &mut FlowModel, samples: &[FlowSample], cfg: &FlowConfig, seed: u64, log: &mut TrainingLog) -> Result<FlowReport> {
    if samples.len() < 2 {
        return Err(Error::arg("flow training needs at least two samples"));
    }
    let d = model.arch.d_w;
    for s in samples {
        model.check_code(&s.w_geo)?;
        model.check_code(&s.w_tex)?;
    }
    let mut report = FlowReport { steps: cfg.train_steps, ..Default::default() };
    let solver = model.arch.solver;
    for b in [Branch::Geo, Branch::Tex] {
        let mut rng = seeded_rng(seed, &format!("flow-train-{}", b.name()));
        let mut opt = Adam::new(model.store.vars_with_prefix(&format!("{}.", b.name())), cfg.lr)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut cursor = order.len();
        let mut last_good = model.store.deep_clone()?;
        let mut history = Vec::with_capacity(cfg.train_steps);
        let batch = cfg.batch.min(samples.len());
        for step in 0..cfg.train_steps {
            let mut idx = Vec::with_capacity(batch);
            while idx.len() < batch {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let w: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let src = match b {
                        Branch::Geo => &samples[i].w_geo,
                        Branch::Tex => &samples[i].w_tex,
                    };
                    src.iter().map(|x| x + cfg.dequant_noise * rng.sample::<f64, _>(StandardNormal)).collect()
                })
                .collect();
            let a: Vec<Vec<f64>> = idx.iter().map(|&i| samples[i].attributes.values().to_vec()).collect();
            let lp = log_likelihood(model.dynamics(b), &rows_tensor(&w, DType::F64)?, &rows_tensor(&a, DType::F64)?, &solver, false)?;
            let loss = (lp.mean_all()? * (-1.0 / d as f64))?;
            let nll = scalar_f64(&loss)?;
            if !nll.is_finite() {
                model.store.load_blobs(&last_good.to_blobs()?)?;
                return Err(Error::Numerical(format!("{} flow diverged at step {step}", b.name())));
            }
            opt.set_lr(lr_schedule(cfg.lr, cfg.lr_final, step, cfg.train_steps));
            opt.backward_step(&loss)?;
            if !model.store.all_finite()? {
                model.store.load_blobs(&last_good.to_blobs()?)?;
                return Err(Error::Numerical(format!("{} flow parameters became non-finite at step {step}", b.name())));
            }
            if step % 50 == 49 {
                last_good = model.store.deep_clone()?;
            }
            log.record("flow", step, &serde_json::json!({ "branch": b.name(), "nll": nll }))?;
            history.push(nll);
            if step % 100 == 0 {
                log::info!("flow {} step {step}: nll/dim {nll:.4}", b.name());
            }
        }
        let k = history.len().min(50);
        if k > 0 {
            report.initial_nll.insert(b.name().into(), history[..k].iter().sum::<f64>() / k as f64);
            report.final_nll.insert(b.name().into(), history[history.len() - k..].iter().sum::<f64>() / k as f64);
        }
    }
    *model = FlowModel::from_parts(model.arch.clone(), model.store.clone())?;
    log.flush()?;
    Ok(report)
}

pub fn flow_meta(cfg: &ExperimentConfig, report: &FlowReport) -> TrainMeta {
    TrainMeta {
        steps: report.steps,
        seed: cfg.stage_seed("flow"),
        config_hash: cfg.hash(),
        code_version: CODE_VERSION.into(),
        notes: serde_json::to_value(report).unwrap_or_default(),
    }
}
