//! Procedural "face world": parametric scenes with ground-truth coefficients,
//! an analytic reference renderer and a deterministic attribute oracle.

mod attributes;
mod dataset;
mod render;
mod sample;

use serde::{Deserialize, Serialize};

use crate::config::CoeffRanges;
use crate::error::{Error, Result};

pub use attributes::{attribute_index, attribute_oracle, attributes_of, AttributeVector, ATTRIBUTE_NAMES, K};
pub use dataset::{read_dataset, write_dataset, DatasetHandle, DatasetIndex, SampleCodes, SampleRecord};
pub use render::{render_reference, render_reference_with, silhouette_reference, RenderOptions};
pub use sample::{sample_coeffs, sample_scene_coeffs};

pub const D_SHAPE: usize = 8;
pub const D_EXPR: usize = 4;
pub const D_DISP: usize = 4;
pub const D_ALBEDO: usize = 6;
pub const D_LIGHT: usize = 3;
pub const D_CAM: usize = 2;
pub const D_POSE: usize = 3;

pub const D_GEO: usize = D_SHAPE + D_EXPR + D_DISP;
pub const D_TEX: usize = D_ALBEDO + D_LIGHT;
pub const D_VIEW: usize = D_CAM + D_POSE;
pub const D_COEFFS: usize = D_GEO + D_TEX + D_VIEW;

/// Morphable-prior coefficient bundle.
///
/// `camera = [fov (rad), distance]`, `pose = [yaw, pitch, roll]` in radians;
/// every other group is dimensionless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphCoeffs {
    pub shape: [f64; D_SHAPE],
    pub expression: [f64; D_EXPR],
    pub displacement: [f64; D_DISP],
    pub albedo: [f64; D_ALBEDO],
    pub light: [f64; D_LIGHT],
    pub camera: [f64; D_CAM],
    pub pose: [f64; D_POSE],
}

impl MorphCoeffs {
    /// Midpoint of every range, frontal pose.
    pub fn neutral(ranges: &CoeffRanges) -> Self {
        let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
        Self {
            shape: [mid(ranges.shape); D_SHAPE],
            expression: [mid(ranges.expression); D_EXPR],
            displacement: [mid(ranges.displacement); D_DISP],
            albedo: [mid(ranges.albedo); D_ALBEDO],
            light: [mid(ranges.light); D_LIGHT],
            camera: [mid(ranges.fov), mid(ranges.distance)],
            pose: [0.0; D_POSE],
        }
    }

    /// `g = [shape; expression; displacement]`.
    pub fn geometry(&self) -> Vec<f64> {
        [&self.shape[..], &self.expression[..], &self.displacement[..]].concat()
    }

    /// `t = [albedo; light]`.
    pub fn texture(&self) -> Vec<f64> {
        [&self.albedo[..], &self.light[..]].concat()
    }

    /// `c = [camera; pose]`.
    pub fn view(&self) -> Vec<f64> {
        [&self.camera[..], &self.pose[..]].concat()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [self.geometry(), self.texture(), self.view()].concat()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != D_COEFFS {
            return Err(Error::arg(format!("expected {D_COEFFS} coefficients, got {}", v.len())));
        }
        let mut it = v.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
        let out = Self {
            shape: take(D_SHAPE).try_into().expect("len"),
            expression: take(D_EXPR).try_into().expect("len"),
            displacement: take(D_DISP).try_into().expect("len"),
            albedo: take(D_ALBEDO).try_into().expect("len"),
            light: take(D_LIGHT).try_into().expect("len"),
            camera: take(D_CAM).try_into().expect("len"),
            pose: take(D_POSE).try_into().expect("len"),
        };
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::arg("non-finite coefficient"));
        }
        let pi = std::f64::consts::PI;
        if self.pose.iter().any(|a| !(-pi..=pi).contains(a)) {
            return Err(Error::arg("pose angle outside [-pi, pi]"));
        }
        Ok(())
    }

    /// Per-coefficient `(lo, hi)` in flat order.
    pub fn flat_ranges(ranges: &CoeffRanges) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(D_COEFFS);
        out.extend(std::iter::repeat_n(ranges.shape, D_SHAPE));
        out.extend(std::iter::repeat_n(ranges.expression, D_EXPR));
        out.extend(std::iter::repeat_n(ranges.displacement, D_DISP));
        out.extend(std::iter::repeat_n(ranges.albedo, D_ALBEDO));
        out.extend(std::iter::repeat_n(ranges.light, D_LIGHT));
        out.push(ranges.fov);
        out.push(ranges.distance);
        out.push(ranges.yaw);
        out.push(ranges.pitch);
        out.push(ranges.roll);
        out
    }

    /// Affine map of every coefficient to `[-1, 1]` over its sampling range.
    pub fn normalized(&self, ranges: &CoeffRanges) -> Vec<f64> {
        self.to_flat()
            .iter()
            .zip(Self::flat_ranges(ranges))
            .map(|(v, r)| 2.0 * (v - r[0]) / (r[1] - r[0]) - 1.0)
            .collect()
    }

    pub fn from_normalized(v: &[f64], ranges: &CoeffRanges) -> Result<Self> {
        if v.len() != D_COEFFS {
            return Err(Error::arg(format!("expected {D_COEFFS} coefficients, got {}", v.len())));
        }
        let raw: Vec<f64> = v
            .iter()
            .zip(Self::flat_ranges(ranges))
            .map(|(x, r)| r[0] + (x + 1.0) * 0.5 * (r[1] - r[0]))
            .collect();
        Self::from_flat(&raw)
    }

    /// Style mixing: geometry from `self`, texture from `tex`, view from `self`.
    pub fn mixed_with(&self, tex: &MorphCoeffs) -> Self {
        Self { albedo: tex.albedo, light: tex.light, ..self.clone() }
    }
}

pub fn normalized_geometry(n: &[f64]) -> &[f64] {
    &n[..D_GEO]
}

pub fn normalized_texture(n: &[f64]) -> &[f64] {
    &n[D_GEO..D_GEO + D_TEX]
}

pub fn normalized_view(n: &[f64]) -> &[f64] {
    &n[D_GEO + D_TEX..]
}

/// One procedural scene; specs with equal `identity_id` share shape and albedo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub coeffs: MorphCoeffs,
    pub identity_id: u64,
    pub seed: u64,
}
