use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{rec_loss, variance_ratio, CodePreds, CodeTargets, LatentDiscriminator, LossWeights};
use crate::config::{CoeffRanges, ExperimentConfig, MorphMode, CODE_VERSION};
use crate::encoder::{coeff_tensors, Encoder, EncoderArch};
use crate::error::{Error, Result};
use crate::generator::{Generator, InversionCorpus, TrainMeta};
use crate::image::Image;
use crate::nn::ops::{from_f64, to_vec_f64};
use crate::nn::{seeded_rng, Adam, RandomFeatures};
use crate::scene::MorphCoeffs;
use crate::trainlog::TrainingLog;

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub no_discriminator: bool,
    /// Train on images without stored codes using `L_sim` only.
    pub real_data_only: bool,
    /// Where to write the last good encoder if training diverges.
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLosses {
    pub l2: f64,
    pub perceptual: f64,
    pub sim: f64,
    pub style: f64,
    pub view: f64,
    pub rec_total: f64,
    pub loss_d: f64,
    pub loss_e: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionReport {
    pub steps: usize,
    pub first: Option<StepLosses>,
    /// Component means over the final 50 steps.
    pub last: Option<StepLosses>,
    /// `(step, variance ratio)` of encoded codes vs the prior.
    pub variance_history: Vec<(usize, f64)>,
    pub no_discriminator: bool,
    pub real_data_only: bool,
}

/// Training images with their morphable coefficients and optional targets.
pub struct InversionData<'a> {
    pub images: &'a [Image],
    pub coeffs: Vec<MorphCoeffs>,
    pub codes: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl<'a> InversionData<'a> {
    /// Corpus records with coefficients extracted by `enc` in `mode`.
    pub fn from_corpus(corpus: &'a InversionCorpus, enc: &Encoder, mode: MorphMode) -> Result<Self> {
        let oracle: Vec<MorphCoeffs> = corpus.specs.iter().map(|s| s.coeffs.clone()).collect();
        let coeffs = enc.extract_morph_coeffs(&corpus.images, mode, Some(&oracle))?;
        let codes = (
            corpus.codes.iter().map(|c| c.w_geo.clone()).collect(),
            corpus.codes.iter().map(|c| c.w_tex.clone()).collect(),
            corpus.codes.iter().map(|c| c.d.clone()).collect(),
        );
        Ok(Self { images: &corpus.images, coeffs, codes: Some(codes) })
    }

    /// Images without codes; coefficients from `mode`.
    pub fn unlabelled(images: &'a [Image], oracle: Option<&[MorphCoeffs]>, enc: &Encoder, mode: MorphMode) -> Result<Self> {
        Ok(Self { images, coeffs: enc.extract_morph_coeffs(images, mode, oracle)?, codes: None })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn rows(v: &[Vec<f64>], idx: &[usize], dtype: DType) -> Result<Tensor> {
    let k = v[0].len();
    from_f64(idx.iter().flat_map(|&i| v[i].iter().copied()).collect(), &[idx.len(), k], dtype)
}

fn mean_losses(v: &[StepLosses]) -> Option<StepLosses> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let m = |f: fn(&StepLosses) -> f64| v.iter().map(f).sum::<f64>() / n;
    Some(StepLosses {
        l2: m(|s| s.l2),
        perceptual: m(|s| s.perceptual),
        sim: m(|s| s.sim),
        style: m(|s| s.style),
        view: m(|s| s.view),
        rec_total: m(|s| s.rec_total),
        loss_d: m(|s| s.loss_d),
        loss_e: m(|s| s.loss_e),
        total: m(|s| s.total),
    })
}

/// Encoded `(w_geo ‖ w_tex)` rows for variance monitoring.
pub fn encoded_rows(enc: &Encoder, images: &[Image], coeffs: &[MorphCoeffs]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (ims, cs) in images.chunks(64).zip(coeffs.chunks(64)) {
        for (s, _) in enc.encode_with_coeffs(ims, cs)?.to_codes()? {
            out.push([s.w_geo, s.w_tex].concat());
        }
    }
    Ok(out)
}

pub fn new_encoder(cfg: &ExperimentConfig, dtype: DType) -> Result<Encoder> {
    Encoder::init(EncoderArch::from_config(cfg), cfg.encoder.zero_head, cfg.stage_seed("encoder"), dtype)
}

/// Alternating latent-discriminator / encoder optimization against a frozen
/// generator. `enc` is updated in place.
pub fn train_encoder(
    enc: &mut Encoder,
    data: &InversionData,
    gen: &Generator,
    cfg: &ExperimentConfig,
    opts: &TrainOptions,
    log: &mut TrainingLog,
) -> Result<InversionReport> {
    let ic = &cfg.inversion;
    let weights = LossWeights::from(ic);
    weights.validate()?;
    let targets = if opts.real_data_only { None } else { data.codes.as_ref() };
    if !opts.real_data_only && targets.is_none() {
        return Err(Error::arg("training data lacks ground-truth codes; enable real-data-only mode"));
    }
    if data.len() < 2 {
        return Err(Error::arg("need at least two training images"));
    }
    let dtype = enc.dtype();
    let gen = gen.frozen()?;
    let res = gen.arch().output_resolution;
    let features = RandomFeatures::new(&ic.perceptual_channels, ic.perceptual_seed, dtype)?;
    let seed = cfg.stage_seed("inversion");
    let mut rng = seeded_rng(seed, "inversion-batches");
    let disc = if opts.no_discriminator {
        None
    } else {
        Some(LatentDiscriminator::new(gen.arch().d_w, ic.disc_width, ic.disc_layers, dtype, &mut seeded_rng(seed, "latent-disc"))?)
    };
    let mut e_opt = Adam::new(enc.store().vars(), ic.lr_encoder)?;
    let mut d_opt = match &disc {
        Some(d) => Some(Adam::new(d.store().vars(), ic.lr_disc)?),
        None => None,
    };
    let ranges: &CoeffRanges = &enc.arch().ranges.clone();
    let (cg, ct, cc) = coeff_tensors(&data.coeffs, ranges, dtype)?;
    let n = data.len();
    let n_mon = ic.monitor_samples.min(n);
    let prior_trace = gen.prior().covariance_trace();
    let mut history = Vec::new();
    let mut all = Vec::with_capacity(ic.steps);
    let mut last_good = enc.store().deep_clone()?;
    let d_d = gen.arch().d_d;

    let monitor = |enc: &Encoder| -> Result<f64> {
        let rows = encoded_rows(&enc.frozen()?, &data.images[..n_mon], &data.coeffs[..n_mon])?;
        Ok(variance_ratio(&rows, prior_trace))
    };
    history.push((0, monitor(enc)?));

    for step in 0..ic.steps {
        let idx: Vec<usize> = (0..ic.batch).map(|_| rng.random_range(0..n)).collect();
        let refs: Vec<&Image> = idx.iter().map(|&i| &data.images[i]).collect();
        let x = Image::batch_to_tensor(&refs, dtype, &Device::Cpu)?;
        let it = Tensor::new(idx.iter().map(|&i| i as u32).collect::<Vec<_>>(), &Device::Cpu)?;
        let out = enc.encode_tensor(&x, &cg.index_select(&it, 0)?, &ct.index_select(&it, 0)?, &cc.index_select(&it, 0)?)?;

        let mut loss_d_v = 0.0;
        if let (Some(d), Some(opt)) = (&disc, &mut d_opt) {
            let draws: Vec<_> = (0..ic.batch).map(|_| gen.prior().sample_mixed(&mut rng, d_d)).collect();
            let rg = from_f64(draws.iter().flat_map(|m| m.w_geo.clone()).collect(), &[ic.batch, gen.arch().d_w], dtype)?;
            let rt = from_f64(draws.iter().flat_map(|m| m.w_tex.clone()).collect(), &[ic.batch, gen.arch().d_w], dtype)?;
            let (ld, _) = d.adv_losses((&rg, &rt), (&out.w_geo.detach(), &out.w_tex.detach()))?;
            loss_d_v = crate::nn::ops::scalar_f64(&ld)?;
            opt.backward_step(&ld)?;
        }

        let views: Vec<Vec<f64>> = to_vec_f64(&out.d)?.chunks(d_d).map(|c| c.to_vec()).collect();
        let recon = gen.render(&out.w_geo, &out.w_tex, &views, res)?.image;
        let tg = match targets {
            Some((g, t, d)) => Some((rows(g, &idx, dtype)?, rows(t, &idx, dtype)?, rows(d, &idx, dtype)?)),
            None => None,
        };
        let tgt = tg.as_ref().map(|(g, t, d)| CodeTargets { w_geo: g, w_tex: t, d });
        let preds = CodePreds { w_geo: &out.w_geo, w_tex: &out.w_tex, d: &out.d };
        let rec = rec_loss(&x, &recon, &preds, tgt.as_ref(), &weights, &features)?;
        let (total, loss_e_v) = match &disc {
            Some(d) => {
                let le = d.logits(&out.w_geo, &out.w_tex)?;
                let le = crate::nn::ops::softplus(&le.neg()?)?.mean_all()?;
                let v = crate::nn::ops::scalar_f64(&le)?;
                ((&rec.total + (le * weights.lambda_adv)?)?, v)
            }
            None => (rec.total.clone(), 0.0),
        };
        let total_v = crate::nn::ops::scalar_f64(&total)?;
        if !total_v.is_finite() {
            if let Some(p) = &opts.snapshot {
                enc.store().load_blobs(&last_good.to_blobs()?)?;
                enc.save(p, &TrainMeta { steps: step, seed: cfg.seed, config_hash: cfg.hash(), code_version: CODE_VERSION.into(), notes: serde_json::Value::Null })?;
            }
            return Err(Error::Numerical(format!("encoder training produced a non-finite loss at step {step}")));
        }
        e_opt.backward_step(&total)?;
        let rec_v = StepLosses {
            l2: rec.l2,
            perceptual: rec.perceptual,
            sim: rec.sim,
            style: rec.style,
            view: rec.view,
            rec_total: rec.total_value,
            loss_d: loss_d_v,
            loss_e: loss_e_v,
            total: total_v,
        };
        log.record("inversion", step, &rec_v)?;
        all.push(rec_v);
        if ic.monitor_every > 0 && (step + 1) % ic.monitor_every == 0 {
            let r = monitor(enc)?;
            log::info!("inversion step {}: sim {:.4} style {:.4} view {:.4} var-ratio {:.3}", step + 1, rec.sim, rec.style, rec.view, r);
            history.push((step + 1, r));
            last_good = enc.store().deep_clone()?;
        }
    }
    log.flush()?;
    let tail = all.len().saturating_sub(50);
    Ok(InversionReport {
        steps: ic.steps,
        first: all.first().cloned(),
        last: mean_losses(&all[tail..]),
        variance_history: history,
        no_discriminator: opts.no_discriminator,
        real_data_only: opts.real_data_only,
    })
}

pub fn encoder_meta(cfg: &ExperimentConfig, report: &InversionReport) -> TrainMeta {
    TrainMeta {
        steps: report.steps,
        seed: cfg.stage_seed("encoder"),
        config_hash: cfg.hash(),
        code_version: CODE_VERSION.into(),
        notes: serde_json::to_value(report).unwrap_or_default(),
    }
}

/// Fresh encoder trained on a corpus: in regressor mode the coefficient
/// regressor is fitted first, on the corpus images plus any `extra`
/// labelled images, then the encoder itself.
pub fn fit_encoder(
    corpus: &InversionCorpus,
    gen: &Generator,
    cfg: &ExperimentConfig,
    opts: &TrainOptions,
    extra: Option<(&[Image], &[MorphCoeffs])>,
    log: &mut TrainingLog,
) -> Result<(Encoder, InversionReport)> {
    let mut enc = new_encoder(cfg, DType::F32)?;
    let mode = cfg.encoder.morph_mode;
    if mode == MorphMode::Regressor {
        let mut images = corpus.images.clone();
        let mut coeffs: Vec<MorphCoeffs> = corpus.specs.iter().map(|s| s.coeffs.clone()).collect();
        if let Some((im, co)) = extra {
            images.extend_from_slice(im);
            coeffs.extend_from_slice(co);
        }
        // interleave so the validation tail holds both sources
        let order = interleave(corpus.len(), images.len());
        let images: Vec<Image> = order.iter().map(|&i| images[i].clone()).collect();
        let coeffs: Vec<MorphCoeffs> = order.iter().map(|&i| coeffs[i].clone()).collect();
        let r = crate::encoder::train_coeff_regressor(
            &coeffs,
            &images,
            &cfg.encoder.regressor,
            &cfg.scene.ranges,
            cfg.stage_seed("coeff-regressor"),
            log,
        )?;
        enc.set_regressor(r);
    }
    let data = if opts.real_data_only {
        let oracle: Vec<MorphCoeffs> = corpus.specs.iter().map(|s| s.coeffs.clone()).collect();
        InversionData::unlabelled(&corpus.images, Some(&oracle), &enc, mode)?
    } else {
        InversionData::from_corpus(corpus, &enc, mode)?
    };
    let report = train_encoder(&mut enc, &data, gen, cfg, opts, log)?;
    Ok((enc, report))
}

/// Index order alternating between `[0, a)` and `[a, n)` proportionally.
fn interleave(a: usize, n: usize) -> Vec<usize> {
    let b = n - a;
    if b == 0 {
        return (0..n).collect();
    }
    let mut out = Vec::with_capacity(n);
    let (mut i, mut j) = (0, a);
    while out.len() < n {
        if j == n || (i < a && i * b <= (j - a) * a) {
            out.push(i);
            i += 1;
        } else {
            out.push(j);
            j += 1;
        }
    }
    out
}
