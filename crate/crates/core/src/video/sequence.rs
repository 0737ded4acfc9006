use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CoeffRanges, VideoConfig};
use crate::encoder::StyleCode;
use crate::error::{Error, Result};
use crate::exec::{try_map_range, ExecPolicy};
use crate::image::Image;
use crate::nn::{seeded_rng, write_atomic};
use crate::scene::{render_reference_with, sample_coeffs, MorphCoeffs, RenderOptions};

const MANIFEST_FILE: &str = "sequence.json";
const MANIFEST_VERSION: u32 = 1;

/// Code of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCode {
    pub w: StyleCode,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub identity_id: u64,
    pub frames: Vec<Image>,
    /// Ground-truth coefficients, when known.
    pub coeffs: Option<Vec<MorphCoeffs>>,
    pub codes: Option<Vec<FrameCode>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub version: u32,
    pub identity_id: u64,
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<MorphCoeffs>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes: Option<Vec<FrameCode>>,
}

impl FrameSequence {
    pub fn new(identity_id: u64, frames: Vec<Image>) -> Result<Self> {
        let s = Self { identity_id, frames, coeffs: None, codes: None };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or_else(|| Error::arg("frame sequence is empty"))?;
        if self.frames.iter().any(|f| f.resolution() != first.resolution()) {
            return Err(Error::arg("frames differ in resolution"));
        }
        if self.coeffs.as_ref().is_some_and(|c| c.len() != self.frames.len())
            || self.codes.as_ref().is_some_and(|c| c.len() != self.frames.len())
        {
            return Err(Error::arg("per-frame annotations do not match the frame count"));
        }
        Ok(())
    }

    /// Writes `frame_{i:04}.png` files and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let mut names = Vec::with_capacity(self.len());
        for (i, f) in self.frames.iter().enumerate() {
            let name = format!("frame_{i:04}.png");
            f.save_png(&dir.join(&name))?;
            names.push(name);
        }
        let m = SequenceManifest {
            version: MANIFEST_VERSION,
            identity_id: self.identity_id,
            frames: names,
            coeffs: self.coeffs.clone(),
            codes: self.codes.clone(),
        };
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)?.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: SequenceManifest =
            serde_json::from_str(&text).map_err(|e| Error::arg(format!("bad sequence manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::arg(format!("unsupported sequence manifest version {}", m.version)));
        }
        let frames = m.frames.iter().map(|n| Image::load_png(&dir.join(n))).collect::<Result<Vec<_>>>()?;
        let s = Self { identity_id: m.identity_id, frames, coeffs: m.coeffs, codes: m.codes };
        s.validate()?;
        Ok(s)
    }
}

/// Coefficients of a toy portrait video: one identity, yaw sweeping across
/// `yaw_span`, a slow pitch wobble and a smoothly varying expression.
pub fn toy_video_coeffs(seed: u64, frames: usize, yaw_span: f64, ranges: &CoeffRanges) -> Result<Vec<MorphCoeffs>> {
    if frames == 0 {
        return Err(Error::arg("a video needs at least one frame"));
    }
    let mut rng = seeded_rng(seed, "toy-video");
    let base = sample_coeffs(&mut rng, ranges);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let start = rng.random_range(ranges.yaw[0]..(ranges.yaw[1] - yaw_span).max(ranges.yaw[0] + 1e-9));
    let e_mid = 0.5 * (ranges.expression[0] + ranges.expression[1]);
    let e_amp = 0.25 * (ranges.expression[1] - ranges.expression[0]);
    Ok((0..frames)
        .map(|i| {
            let s = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.0 };
            let mut c = base.clone();
            c.pose[0] = (start + yaw_span * s).clamp(ranges.yaw[0], ranges.yaw[1]);
            c.pose[1] = (base.pose[1] + 0.05 * (std::f64::consts::TAU * s + phase).sin()).clamp(ranges.pitch[0], ranges.pitch[1]);
            for (k, e) in c.expression.iter_mut().enumerate() {
                *e = e_mid + e_amp * (std::f64::consts::PI * s + phase + k as f64).sin();
            }
            c
        })
        .collect())
}

/// Renders a toy video with ground-truth coefficients attached.
pub fn toy_video(seed: u64, identity_id: u64, cfg: &VideoConfig, ranges: &CoeffRanges, resolution: usize) -> Result<FrameSequence> {
    let coeffs = toy_video_coeffs(seed, cfg.frames, cfg.yaw_span, ranges)?;
    let opts = RenderOptions { exec: ExecPolicy::Sequential, ..Default::default() };
    let frames = try_map_range(ExecPolicy::default(), coeffs.len(), |i| render_reference_with(&coeffs[i], resolution, opts))?;
    Ok(FrameSequence { identity_id, frames, coeffs: Some(coeffs), codes: None })
}

/// Face cropping and alignment. Procedural frames are already aligned.
pub fn crop_align(seq: FrameSequence) -> FrameSequence {
    seq
}
