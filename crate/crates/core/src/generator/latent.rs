//! The generator's latent prior and view embedding.
//!
//! Style codes live on a fixed linear embedding of the normalized scene
//! coefficients: `w_geo = s_geo · U_geo · ĝ`, `w_tex = s_tex · U_tex · t̂`, with
//! `U` having orthonormal columns and `s` chosen so every entry of `w` has unit
//! variance under uniform sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::config::CoeffRanges;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::scene::{
    normalized_geometry, normalized_texture, sample_coeffs, MorphCoeffs, D_GEO, D_TEX,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub d_w: usize,
    /// Row-major `d_w × D_GEO`.
    pub u_geo: Vec<f64>,
    /// Row-major `d_w × D_TEX`.
    pub u_tex: Vec<f64>,
    pub ranges: CoeffRanges,
}

/// One style-mixed draw: geometry and view from `geo_source`, texture from
/// `tex_source`.
#[derive(Debug, Clone)]
pub struct MixedDraw {
    pub geo_source: MorphCoeffs,
    pub tex_source: MorphCoeffs,
    pub coeffs: MorphCoeffs,
    pub w_geo: Vec<f64>,
    pub w_tex: Vec<f64>,
    pub d: Vec<f64>,
}

fn orthonormal_columns(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..cols {
        for k in 0..j {
            let dot: f64 = (0..rows).map(|i| m[j][i] * m[k][i]).sum();
            for i in 0..rows {
                m[j][i] -= dot * m[k][i];
            }
        }
        let n = m[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        m[j].iter_mut().for_each(|v| *v /= n);
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = m[j][i];
        }
    }
    out
}

fn embed(u: &[f64], cols: usize, scale: f64, x: &[f64]) -> Vec<f64> {
    u.chunks(cols).map(|row| scale * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).collect()
}

fn project(u: &[f64], cols: usize, scale: f64, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, wi) in u.chunks(cols).zip(w) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * wi / scale;
        }
    }
    out
}

impl LatentPrior {
    pub fn new(d_w: usize, seed: u64, ranges: CoeffRanges) -> Result<Self> {
        if d_w < D_GEO.max(D_TEX) {
            return Err(Error::arg(format!("d_w must be at least {}", D_GEO.max(D_TEX))));
        }
        let mut rng = seeded_rng(seed, "latent-prior");
        let u_geo = orthonormal_columns(d_w, D_GEO, &mut rng);
        let u_tex = orthonormal_columns(d_w, D_TEX, &mut rng);
        Ok(Self { d_w, u_geo, u_tex, ranges })
    }

    pub fn scale_geo(&self) -> f64 {
        (3.0 * self.d_w as f64 / D_GEO as f64).sqrt()
    }

    pub fn scale_tex(&self) -> f64 {
        (3.0 * self.d_w as f64 / D_TEX as f64).sqrt()
    }

    pub fn w_geo(&self, g_norm: &[f64]) -> Vec<f64> {
        embed(&self.u_geo, D_GEO, self.scale_geo(), g_norm)
    }

    pub fn w_tex(&self, t_norm: &[f64]) -> Vec<f64> {
        embed(&self.u_tex, D_TEX, self.scale_tex(), t_norm)
    }

    /// Least-squares normalized geometry coefficients of a code.
    pub fn project_geo(&self, w: &[f64]) -> Vec<f64> {
        project(&self.u_geo, D_GEO, self.scale_geo(), w)
    }

    pub fn project_tex(&self, w: &[f64]) -> Vec<f64> {
        project(&self.u_tex, D_TEX, self.scale_tex(), w)
    }

    /// Ground-truth codes of a coefficient bundle.
    pub fn codes(&self, c: &MorphCoeffs, d_d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = c.normalized(&self.ranges);
        (self.w_geo(normalized_geometry(&n)), self.w_tex(normalized_texture(&n)), view_code(c, d_d))
    }

    pub fn sample_mixed(&self, rng: &mut impl Rng, d_d: usize) -> MixedDraw {
        let geo_source = sample_coeffs(rng, &self.ranges);
        let tex_source = sample_coeffs(rng, &self.ranges);
        let coeffs = geo_source.mixed_with(&tex_source);
        let (w_geo, w_tex, d) = self.codes(&coeffs, d_d);
        MixedDraw { geo_source, tex_source, coeffs, w_geo, w_tex, d }
    }

    /// Prior covariance trace of the concatenated `(w_geo, w_tex)`.
    pub fn covariance_trace(&self) -> f64 {
        // Uniform on [-1, 1] has variance 1/3 per coordinate.
        self.scale_geo().powi(2) * D_GEO as f64 / 3.0 + self.scale_tex().powi(2) * D_TEX as f64 / 3.0
    }
}

/// `d = [fov, distance, yaw, pitch, roll, harmonics...]`, where the harmonics
/// cycle `sin kθ, cos kθ` over yaw, pitch, roll for k = 1, 2, ...
pub fn view_code(c: &MorphCoeffs, d_d: usize) -> Vec<f64> {
    view_code_parts(&c.camera, &c.pose, d_d)
}

fn view_code_parts(camera: &[f64], pose: &[f64], d_d: usize) -> Vec<f64> {
    let mut d = vec![camera[0], camera[1], pose[0], pose[1], pose[2]];
    let mut k = 1.0;
    'outer: loop {
        for &a in pose {
            for v in [(k * a).sin(), (k * a).cos()] {
                if d.len() >= d_d {
                    break 'outer;
                }
                d.push(v);
            }
        }
        k += 1.0;
    }
    d.truncate(d_d);
    d
}

/// The same view with the yaw replaced.
pub fn with_yaw(d: &[f64], yaw: f64) -> Result<Vec<f64>> {
    if d.len() < 5 {
        return Err(Error::arg("view code must hold at least five values"));
    }
    Ok(view_code_parts(&d[..2], &[yaw, d[3], d[4]], d.len()))
}

/// Camera placed by the first five view-code entries. Field of view and
/// distance are clamped to a physically valid interval.
pub fn camera_from_view(d: &[f64]) -> Result<Camera> {
    if d.len() < 5 || d.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("view code must hold at least five finite values"));
    }
    Ok(Camera::new(d[0].clamp(0.1, 2.5), d[1].clamp(1.5, 10.0), d[2], d[3], d[4]))
}
