use std::collections::BTreeMap;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::sequence::FrameCode;
use crate::config::{MorphMode, VideoConfig};
use crate::encoder::{with_identity, Encoder, StyleCode};
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::flow::FlowModel;
use crate::generator::Generator;
use crate::image::Image;
use crate::nn::ops::{from_f64, scalar_f64};
use crate::nn::{Adam, RandomFeatures};
use crate::scene::{AttributeVector, MorphCoeffs, D_ALBEDO, D_SHAPE};
use crate::trainlog::TrainingLog;

/// Componentwise mean of shape `β` and albedo `α` over all frames.
///
/// Computed as `x₀ + Σ (xᵢ − x₀)/n`, so identical frames give their value
/// back exactly.
pub fn extract_frame_irrelevant(coeffs: &[MorphCoeffs]) -> Result<([f64; D_SHAPE], [f64; D_ALBEDO])> {
    let first = coeffs.first().ok_or_else(|| Error::arg("cannot average an empty sequence"))?;
    let n = coeffs.len() as f64;
    let mut beta = first.shape;
    let mut alpha = first.albedo;
    for k in 0..D_SHAPE {
        beta[k] += coeffs.iter().map(|c| (c.shape[k] - first.shape[k]) / n).sum::<f64>();
    }
    for k in 0..D_ALBEDO {
        alpha[k] += coeffs.iter().map(|c| (c.albedo[k] - first.albedo[k]) / n).sum::<f64>();
    }
    Ok((beta, alpha))
}

/// Per-frame coefficients with `β` and `α` replaced by the shared values.
pub fn canonicalize(coeffs: &[MorphCoeffs], beta: &[f64], alpha: &[f64]) -> Result<Vec<MorphCoeffs>> {
    coeffs.iter().map(|c| with_identity(c, beta, alpha)).collect()
}

/// Encodes every frame with its own coefficients except the shared identity.
pub fn encode_sequence(
    enc: &Encoder,
    frames: &[Image],
    coeffs: &[MorphCoeffs],
    beta: &[f64],
    alpha: &[f64],
) -> Result<Vec<FrameCode>> {
    encode_frames(enc, frames, &canonicalize(coeffs, beta, alpha)?)
}

/// Encodes frames with the given per-frame coefficients.
pub fn encode_frames(enc: &Encoder, frames: &[Image], coeffs: &[MorphCoeffs]) -> Result<Vec<FrameCode>> {
    if frames.len() != coeffs.len() {
        return Err(Error::arg("frames and coefficients differ in length"));
    }
    let mut out = Vec::with_capacity(frames.len());
    for (f, c) in frames.chunks(32).zip(coeffs.chunks(32)) {
        out.extend(enc.encode_with_coeffs(f, c)?.to_codes()?.into_iter().map(|(w, d)| FrameCode { w, d }));
    }
    Ok(out)
}

fn blend(a: &[f64], b: &[f64], weight: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| weight * x + (1.0 - weight) * y).collect()
}

/// Two-frame weighted smoothing `w̃ᵢ = weight·wᵢ + (1 − weight)·wᵢ₋₁`, with
/// the first frame kept as is.
pub fn smooth_codes(codes: &[FrameCode], weight: f64, smooth_view: bool) -> Result<Vec<FrameCode>> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::arg("smoothing weight must lie in [0, 1]"));
    }
    if weight == 1.0 {
        return Ok(codes.to_vec());
    }
    Ok(codes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                return c.clone();
            }
            let p = &codes[i - 1];
            FrameCode {
                w: StyleCode { w_geo: blend(&c.w.w_geo, &p.w.w_geo, weight), w_tex: blend(&c.w.w_tex, &p.w.w_tex, weight) },
                d: if smooth_view { blend(&c.d, &p.d, weight) } else { c.d.clone() },
            }
        })
        .collect())
}

/// Renders frame codes in batches.
pub fn render_frames(gen: &Generator, codes: &[FrameCode]) -> Result<Vec<Image>> {
    let res = gen.arch().output_resolution;
    let mut out = Vec::with_capacity(codes.len());
    for chunk in codes.chunks(16) {
        let g: Vec<Vec<f64>> = chunk.iter().map(|c| c.w.w_geo.clone()).collect();
        let t: Vec<Vec<f64>> = chunk.iter().map(|c| c.w.w_tex.clone()).collect();
        let d: Vec<Vec<f64>> = chunk.iter().map(|c| c.d.clone()).collect();
        out.extend(Image::batch_from_tensor(&gen.render_codes(&g, &t, &d, res)?.image)?);
    }
    Ok(out)
}

pub fn mean_psnr(a: &[Image], b: &[Image], cap: f64) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += psnr(x, y, cap)?;
    }
    Ok(s / a.len().max(1) as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub steps: usize,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub losses: Vec<f64>,
}

/// Tunes every generator parameter to reproduce the frames from their fixed
/// codes with L2 plus perceptual distance. Batches cycle through the frames
/// in order.
pub fn finetune_generator(
    gen: &Generator,
    frames: &[Image],
    codes: &[FrameCode],
    cfg: &VideoConfig,
    features: &RandomFeatures,
    log: &mut TrainingLog,
) -> Result<(Generator, FinetuneReport)> {
    if frames.len() != codes.len() || frames.is_empty() {
        return Err(Error::arg("fine-tuning needs one code per frame"));
    }
    let tuned = gen.deep_clone()?;
    let before = mean_psnr(&render_frames(&tuned.frozen()?, codes)?, frames, 99.0)?;
    let mut losses = Vec::with_capacity(cfg.finetune_steps);
    if cfg.finetune_steps > 0 {
        let dtype = tuned.dtype();
        let res = tuned.arch().output_resolution;
        let mut opt = Adam::new(tuned.store().vars(), cfg.finetune_lr)?;
        let b = cfg.finetune_batch.clamp(1, frames.len());
        let dw = tuned.arch().d_w;
        for step in 0..cfg.finetune_steps {
            let idx: Vec<usize> = (0..b).map(|k| (step * b + k) % frames.len()).collect();
            let g = from_f64(idx.iter().flat_map(|&i| codes[i].w.w_geo.clone()).collect(), &[b, dw], dtype)?;
            let t = from_f64(idx.iter().flat_map(|&i| codes[i].w.w_tex.clone()).collect(), &[b, dw], dtype)?;
            let d: Vec<Vec<f64>> = idx.iter().map(|&i| codes[i].d.clone()).collect();
            let refs: Vec<&Image> = idx.iter().map(|&i| &frames[i]).collect();
            let x = Image::batch_to_tensor(&refs, dtype, &Device::Cpu)?;
            let y = tuned.render(&g, &t, &d, res)?.image;
            let l2 = (&y - &x)?.sqr()?.mean_all()?;
            let loss = (l2 + (features.distance(&y, &x)?.mean_all()? * cfg.lambda_perceptual)?)?;
            let v = scalar_f64(&loss)?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("generator fine-tuning diverged at step {step}")));
            }
            opt.backward_step(&loss)?;
            log.record("finetune", step, &serde_json::json!({ "loss": v }))?;
            losses.push(v);
        }
    }
    let tuned = tuned.frozen()?;
    let after = mean_psnr(&render_frames(&tuned, codes)?, frames, 99.0)?;
    log.flush()?;
    Ok((tuned, FinetuneReport { steps: cfg.finetune_steps, psnr_before: before, psnr_after: after, losses }))
}

/// Edits every frame with the same targets and renders with per-frame views.
pub fn edit_sequence(
    gen: &Generator,
    flows: Option<&FlowModel>,
    codes: &[FrameCode],
    attributes: &[AttributeVector],
    edits: &BTreeMap<String, f64>,
) -> Result<Vec<Image>> {
    if attributes.len() != codes.len() {
        return Err(Error::arg("need one attribute vector per frame"));
    }
    if edits.is_empty() {
        return render_frames(gen, codes);
    }
    let flows = flows.ok_or_else(|| Error::arg("editing needs a flow checkpoint"))?;
    let edited = codes
        .iter()
        .zip(attributes)
        .map(|(c, a)| {
            let (g, t) = flows.edit_codes(&c.w.w_geo, &c.w.w_tex, a, edits)?;
            Ok(FrameCode { w: StyleCode { w_geo: g, w_tex: t }, d: c.d.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    render_frames(gen, &edited)
}

/// Which stages of the video pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoStages {
    pub share_identity: bool,
    pub smooth: bool,
    pub finetune: bool,
}

impl VideoStages {
    pub const FULL: Self = Self { share_identity: true, smooth: true, finetune: true };
    pub const PER_FRAME: Self = Self { share_identity: false, smooth: false, finetune: false };
}

pub struct VideoOutput {
    pub codes: Vec<FrameCode>,
    pub edited: Vec<Image>,
    pub finetune: Option<FinetuneReport>,
    pub tuned: Option<Generator>,
}

/// Inverts, optionally canonicalizes, smooths and fine-tunes, then edits.
#[allow(clippy::too_many_arguments)]
pub fn run_video(
    gen: &Generator,
    enc: &Encoder,
    flows: Option<&FlowModel>,
    frames: &[Image],
    oracle: Option<&[MorphCoeffs]>,
    mode: MorphMode,
    attributes: &[AttributeVector],
    edits: &BTreeMap<String, f64>,
    stages: VideoStages,
    cfg: &VideoConfig,
    features: &RandomFeatures,
    log: &mut TrainingLog,
) -> Result<VideoOutput> {
    let coeffs = enc.extract_morph_coeffs(frames, mode, oracle)?;
    let mut codes = if stages.share_identity {
        let (beta, alpha) = extract_frame_irrelevant(&coeffs)?;
        encode_sequence(enc, frames, &coeffs, &beta, &alpha)?
    } else {
        encode_frames(enc, frames, &coeffs)?
    };
    if stages.smooth {
        codes = smooth_codes(&codes, cfg.smoothing_weight, cfg.smooth_view)?;
    }
    let (tuned, report) = if stages.finetune {
        let (g, r) = finetune_generator(gen, frames, &codes, cfg, features, log)?;
        (Some(g), Some(r))
    } else {
        (None, None)
    };
    let edited = edit_sequence(tuned.as_ref().unwrap_or(gen), flows, &codes, attributes, edits)?;
    Ok(VideoOutput { codes, edited, finetune: report, tuned })
}

/// Stable digest of a code sequence.
pub fn codes_digest(codes: &[FrameCode]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for c in codes {
        for v in c.w.w_geo.iter().chain(&c.w.w_tex).chain(&c.d) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
