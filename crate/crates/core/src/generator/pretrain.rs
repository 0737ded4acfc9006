use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::Serialize;

use super::model::{Generator, GeneratorArch, TrainMeta};
use crate::config::{ExperimentConfig, CODE_VERSION};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::ops::{scalar_f64, softplus, to_vec_f64};
use crate::nn::{diagonal_frechet, lr_schedule, seeded_rng, Adam, ConvNet, ConvNetSpec, ParamStore, Pool, RandomFeatures};
use crate::exec::{try_map_range, ExecPolicy};
use crate::scene::{silhouette_reference, DatasetHandle, RenderOptions, SceneSpec};
use crate::trainlog::TrainingLog;

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub steps_run: usize,
    pub stopped_early: bool,
    /// `(step, fid_proxy)` at every evaluation.
    pub fid_history: Vec<(usize, f64)>,
    pub disc_accuracy_before: f64,
    pub disc_accuracy_after: f64,
}

#[derive(Serialize)]
struct StepRecord {
    loss_rec: f64,
    loss_perc: f64,
    loss_adv: f64,
    loss_sil: f64,
    loss_disc: f64,
    lr: f64,
}

/// Small image discriminator used during pretraining.
pub struct ImageDiscriminator {
    store: ParamStore,
    net: ConvNet,
}

impl ImageDiscriminator {
    pub fn new(res: usize, base: usize, seed: u64) -> Result<Self> {
        let spec = ConvNetSpec {
            in_channels: 3,
            in_res: res,
            channels: vec![base, 2 * base, 4 * base],
            head: vec![1],
            pool: Pool::Flatten,
            slope: 0.2,
        };
        let mut store = ParamStore::new(DType::F32);
        ConvNet::init(&mut store, "disc", &spec, false, &mut seeded_rng(seed, "image-disc"))?;
        let net = ConvNet::load(&store, "disc", &spec)?;
        Ok(Self { store, net })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.net.forward(x)?.squeeze(1)?)
    }

    /// Fraction of images classified as real.
    pub fn accuracy_real(&self, images: &[Image]) -> Result<f64> {
        let mut hits = 0usize;
        for chunk in images.chunks(32) {
            let refs: Vec<&Image> = chunk.iter().collect();
            let l = to_vec_f64(&self.logits(&Image::batch_to_tensor(&refs, DType::F32, &Device::Cpu)?)?)?;
            hits += l.iter().filter(|v| **v > 0.0).count();
        }
        Ok(hits as f64 / images.len().max(1) as f64)
    }
}

fn images_tensor(images: &[Image], idx: &[usize]) -> Result<Tensor> {
    let refs: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
    Image::batch_to_tensor(&refs, DType::F32, &Device::Cpu)
}

/// Renders the ground-truth codes of `specs` in batches.
pub fn render_specs(g: &Generator, specs: &[&SceneSpec], batch: usize) -> Result<Vec<Image>> {
    let d_d = g.arch().d_d;
    let res = g.arch().output_resolution;
    let mut out = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(batch.max(1)) {
        let mut wg = Vec::new();
        let mut wt = Vec::new();
        let mut vs = Vec::new();
        for s in chunk {
            let (a, b, d) = g.prior().codes(&s.coeffs, d_d);
            wg.push(a);
            wt.push(b);
            vs.push(d);
        }
        out.extend(Image::batch_from_tensor(&g.render_codes(&wg, &wt, &vs, res)?.image)?);
    }
    Ok(out)
}

/// Diagonal Fréchet distance between random-feature descriptors of two sets.
pub fn fid_proxy(features: &RandomFeatures, real: &[Image], fake: &[Image]) -> Result<f64> {
    let desc = |imgs: &[Image]| -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&Image> = imgs.iter().collect();
        let t = features.descriptors(&Image::batch_to_tensor(&refs, DType::F32, &Device::Cpu)?)?;
        let k = t.dim(1)?;
        Ok(to_vec_f64(&t)?.chunks(k).map(|c| c.to_vec()).collect())
    };
    diagonal_frechet(&desc(real)?, &desc(fake)?)
}

pub fn pretrain_from_dataset(
    data: &DatasetHandle,
    cfg: &ExperimentConfig,
    log: &mut TrainingLog,
) -> Result<(Generator, PretrainReport)> {
    let specs: Vec<SceneSpec> = data.records().iter().map(|r| r.spec()).collect();
    pretrain_generator(&specs, &data.load_images()?, cfg, log)
}

/// Reference opacity of each scene at the NeRF resolution (box-filtered
/// from the output resolution).
pub fn reference_silhouettes(specs: &[&SceneSpec], out_res: usize, nerf_res: usize) -> Result<Vec<Vec<f32>>> {
    let f = out_res / nerf_res;
    try_map_range(ExecPolicy::default(), specs.len(), |i| -> Result<Vec<f32>> {
        let full = silhouette_reference(&specs[i].coeffs, out_res, RenderOptions { exec: ExecPolicy::Sequential, ..Default::default() })?;
        let mut out = vec![0.0f32; nerf_res * nerf_res];
        for y in 0..out_res {
            for x in 0..out_res {
                out[(y / f) * nerf_res + x / f] += (full[y * out_res + x] / (f * f) as f64) as f32;
            }
        }
        Ok(out)
    })
}

/// Fits the generator to procedural renders.
///
/// Each step renders the ground-truth codes of a batch of scenes and
/// minimizes pixel L2 plus perceptual distance to the matching renders, with
/// a small non-saturating adversarial term from an image discriminator that
/// is updated alternately. The NeRF opacity is also matched to the
/// reference silhouette of each scene. The last tenth of the data is held out for the
/// feature-distance proxy and the discriminator accuracy probe.
pub fn pretrain_generator(
    specs: &[SceneSpec],
    images: &[Image],
    cfg: &ExperimentConfig,
    log: &mut TrainingLog,
) -> Result<(Generator, PretrainReport)> {
    let gc = &cfg.generator;
    let pc = &gc.pretrain;
    if specs.len() != images.len() || specs.len() < 4 {
        return Err(Error::arg("pretraining needs at least four aligned (spec, image) pairs"));
    }
    if images.iter().any(|i| i.resolution() != gc.output_resolution) {
        return Err(Error::arg("dataset resolution must equal the generator output resolution"));
    }
    let seed = cfg.stage_seed("generator");
    let gen = Generator::init(GeneratorArch::from(gc), cfg.scene.ranges.clone(), seed, DType::F32)?;
    let disc = ImageDiscriminator::new(gc.output_resolution, pc.disc_channels, seed)?;
    let features = RandomFeatures::new(&cfg.inversion.perceptual_channels, cfg.inversion.perceptual_seed, DType::F32)?;

    let n_hold = (specs.len() / 10).max(2);
    let n_train = specs.len() - n_hold;
    let held_specs: Vec<&SceneSpec> = specs[n_train..].iter().take(pc.eval_samples.max(2)).collect();
    let held_imgs: Vec<Image> = images[n_train..].iter().take(held_specs.len()).cloned().collect();

    let nerf = gc.nerf_resolution;
    let silhouettes = if pc.lambda_silhouette > 0.0 {
        let train: Vec<&SceneSpec> = specs[..n_train].iter().collect();
        reference_silhouettes(&train, gc.output_resolution, nerf)?
    } else {
        Vec::new()
    };

    let mut g_opt = Adam::new(gen.store().vars(), pc.lr)?;
    let mut d_opt = Adam::new(disc.store.vars(), pc.disc_lr)?;
    let mut rng = seeded_rng(seed, "pretrain-batches");
    let disc_accuracy_before = disc.accuracy_real(&held_imgs)?;
    let mut fid_history = Vec::new();
    let mut stopped_early = false;
    let mut steps_run = 0;
    let d_d = gc.d_d;

    for step in 0..pc.steps {
        let lr = lr_schedule(pc.lr, pc.lr_final, step, pc.steps);
        g_opt.set_lr(lr);
        let idx: Vec<usize> = (0..pc.batch).map(|_| rng.random_range(0..n_train)).collect();
        let real = images_tensor(images, &idx)?;
        let (mut wg, mut wt, mut vs) = (Vec::new(), Vec::new(), Vec::new());
        for &i in &idx {
            let (a, b, d) = gen.prior().codes(&specs[i].coeffs, d_d);
            wg.push(a);
            wt.push(b);
            vs.push(d);
        }
        let out = gen.render_codes(&wg, &wt, &vs, gc.output_resolution)?;
        let fake = out.image;
        let sil = if silhouettes.is_empty() {
            Tensor::zeros((), DType::F32, &Device::Cpu)?
        } else {
            let t: Vec<f32> = idx.iter().flat_map(|&i| silhouettes[i].iter().copied()).collect();
            let t = Tensor::from_vec(t, (idx.len(), nerf * nerf), &Device::Cpu)?;
            (&out.silhouette - t)?.sqr()?.mean_all()?
        };

        let loss_d = (softplus(&disc.logits(&real)?.neg()?)?.mean_all()?
            + softplus(&disc.logits(&fake.detach())?)?.mean_all()?)?;
        d_opt.backward_step(&loss_d)?;

        let rec = (&fake - &real)?.sqr()?.mean_all()?;
        let perc = features.distance(&fake, &real)?.mean_all()?;
        let adv = softplus(&disc.logits(&fake)?.neg()?)?.mean_all()?;
        let total = ((&rec * pc.lambda_reconstruction)? + (&perc * pc.lambda_perceptual)? + (&adv * pc.lambda_adv)?)?
            .add(&(&sil * pc.lambda_silhouette)?)?;
        let rec_v = scalar_f64(&rec)?;
        let total_v = scalar_f64(&total)?;
        if !total_v.is_finite() {
            return Err(Error::Numerical(format!(
                "generator pretraining diverged at step {step}: rec={rec_v}, loss_d={}",
                scalar_f64(&loss_d)?
            )));
        }
        g_opt.backward_step(&total)?;
        steps_run = step + 1;
        log.record(
            "pretrain",
            step,
            &StepRecord {
                loss_rec: rec_v,
                loss_perc: scalar_f64(&perc)?,
                loss_adv: scalar_f64(&adv)?,
                loss_sil: scalar_f64(&sil)?,
                loss_disc: scalar_f64(&loss_d)?,
                lr,
            },
        )?;
        let eval_now = pc.eval_every > 0 && (steps_run % pc.eval_every == 0 || steps_run == pc.steps);
        if eval_now {
            let fake_imgs = render_specs(&gen.frozen()?, &held_specs, 16)?;
            let fid = fid_proxy(&features, &held_imgs, &fake_imgs)?;
            log::info!("pretrain step {steps_run}: rec {rec_v:.5} fid-proxy {fid:.5}");
            fid_history.push((steps_run, fid));
            if fid < pc.fid_threshold {
                stopped_early = true;
                break;
            }
        }
    }
    let disc_accuracy_after = disc.accuracy_real(&held_imgs)?;
    log.flush()?;
    let report = PretrainReport { steps_run, stopped_early, fid_history, disc_accuracy_before, disc_accuracy_after };
    Ok((gen, report))
}

pub fn pretrain_meta(cfg: &ExperimentConfig, report: &PretrainReport) -> TrainMeta {
    TrainMeta {
        steps: report.steps_run,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        code_version: CODE_VERSION.into(),
        notes: serde_json::to_value(report).unwrap_or_default(),
    }
}
