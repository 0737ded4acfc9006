//! Analytic reference renderer.
//!
//! The head is an ellipsoid with a small cosine surface displacement, smoothly
//! unioned with two eye ellipsoids and a nose ellipsoid. The signed distance
//! is turned into density `κ·sigmoid(−sdf/τ)` and integrated with midpoint
//! quadrature along each camera ray, so images vary smoothly with every
//! coefficient. Colours come from the albedo coefficients (skin, eyes, mouth
//! region, background) under Lambertian shading from the light coefficients.

use super::{MorphCoeffs, SceneSpec};
use crate::camera::{add, dot, normalize, scale, Camera, Vec3};
use crate::error::{Error, Result};
use crate::exec::{map_range, ExecPolicy};
use crate::image::Image;

const KAPPA: f64 = 50.0;
const TAU: f64 = 0.012;
const BOUND_RADIUS: f64 = 1.35;
const DEPTH_HALF_RANGE: f64 = 1.4;
const NORMAL_EPS: f64 = 1e-3;
const SUPPORTED_RES: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub samples_per_ray: usize,
    pub exec: ExecPolicy,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { samples_per_ray: 64, exec: ExecPolicy::Parallel }
    }
}

struct Ellipsoid {
    centre: Vec3,
    radii: Vec3,
}

impl Ellipsoid {
    fn sdf(&self, p: Vec3) -> f64 {
        let q = [p[0] - self.centre[0], p[1] - self.centre[1], p[2] - self.centre[2]];
        let a = [q[0] / self.radii[0], q[1] / self.radii[1], q[2] / self.radii[2]];
        let b = [a[0] / self.radii[0], a[1] / self.radii[1], a[2] / self.radii[2]];
        let k0 = dot(a, a).sqrt();
        let k1 = dot(b, b).sqrt();
        if k1 < 1e-12 {
            return -self.radii.iter().cloned().fold(f64::INFINITY, f64::min);
        }
        k0 * (k0 - 1.0) / k1
    }
}

fn smin(a: f64, b: f64, k: f64) -> f64 {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    b * (1.0 - h) + a * h - k * h * (1.0 - h)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Vec3 {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

struct Scene {
    head: Ellipsoid,
    disp: [f64; 4],
    eyes: [Ellipsoid; 2],
    nose: Ellipsoid,
    mouth: [f64; 4],
    skin: Vec3,
    eye_rgb: Vec3,
    mouth_rgb: Vec3,
    bg: Vec3,
    light_dir: Vec3,
    light_gain: f64,
}

impl Scene {
    fn new(c: &MorphCoeffs) -> Self {
        let b = &c.shape;
        let e = &c.expression;
        let al = &c.albedo;
        let l = &c.light;
        let head_r = [0.62 + 0.10 * b[0], 0.80 + 0.12 * b[1], 0.60 + 0.08 * b[2]];
        let surface_z = |x: f64, y: f64| {
            let s = 1.0 - (x / head_r[0]).powi(2) - (y / head_r[1]).powi(2);
            head_r[2] * s.max(0.05).sqrt()
        };

        let ex = 0.25 + 0.05 * b[5];
        let ey = 0.16 + 0.06 * b[6];
        let shift = 0.04 * b[7];
        let re = 0.105 + 0.035 * b[3];
        let re_y = re * (1.0 - 0.25 * e[2]);
        let eye = |sx: f64| {
            let x = sx * ex + shift;
            Ellipsoid { centre: [x, ey, surface_z(x, ey) - 0.35 * re], radii: [re, re_y, re] }
        };
        let nose_r = [0.06 + 0.025 * b[4], 0.11 + 0.035 * b[4], 0.09 + 0.035 * b[4]];
        let nose = Ellipsoid { centre: [0.0, -0.04, surface_z(0.0, -0.04) - 0.03], radii: nose_r };

        let mouth = [
            0.05 * e[3],
            -0.36 * head_r[1] / 0.8,
            0.20 + 0.06 * e[0],
            0.035 + 0.015 * (e[1] + 1.0),
        ];

        let hue = 0.40 * 0.5 * (al[0] + 1.0);
        let skin = hsv_to_rgb(hue, 0.55 + 0.15 * al[1], 0.80 + 0.12 * al[2]);
        let eb = 0.10 + 0.06 * al[3];
        let eye_rgb = [eb, eb, 1.4 * eb];
        let mouth_rgb = [0.55 + 0.15 * al[4], 0.10, 0.14];
        let g = 0.22 + 0.08 * al[5];
        let bg = [g, g, 1.05 * g];

        let az = 0.8 * l[0];
        let el = 0.6 * l[1];
        let light_dir = [el.cos() * az.sin(), el.sin(), el.cos() * az.cos()];

        Self {
            head: Ellipsoid { centre: [0.0; 3], radii: head_r },
            disp: c.displacement,
            eyes: [eye(-1.0), eye(1.0)],
            nose,
            mouth,
            skin,
            eye_rgb,
            mouth_rgb,
            bg,
            light_dir,
            light_gain: 0.75 + 0.25 * l[2],
        }
    }

    /// Returns (scene sdf, eye sdf).
    fn sdf(&self, p: Vec3) -> (f64, f64) {
        let d = &self.disp;
        let ripple = 0.012
            * (d[0] * (9.0 * p[1]).cos()
                + d[1] * (9.0 * p[0]).cos()
                + d[2] * (7.0 * p[2]).cos()
                + d[3] * (6.0 * p[0]).cos() * (6.0 * p[1]).cos());
        let head = self.head.sdf(p) - ripple;
        let eye = self.eyes[0].sdf(p).min(self.eyes[1].sdf(p));
        let s = smin(head, eye, 0.03);
        (smin(s, self.nose.sdf(p), 0.04), eye)
    }

    fn normal(&self, p: Vec3) -> Vec3 {
        let h = NORMAL_EPS;
        let g = |i: usize| {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            self.sdf(a).0 - self.sdf(b).0
        };
        normalize([g(0), g(1), g(2)])
    }

    fn shade(&self, p: Vec3, eye_sdf: f64) -> Vec3 {
        let [mx, my, mw, mh] = self.mouth;
        let m = 1.0 - ((p[0] - mx) / mw).powi(2) - ((p[1] - my) / mh).powi(2);
        let mouth_w = sigmoid(m / 0.12) * sigmoid(p[2] / 0.05);
        let eye_w = sigmoid(-(eye_sdf - 0.005) / 0.008);
        let mut albedo = lerp3(self.skin, self.mouth_rgb, mouth_w * (1.0 - eye_w));
        albedo = lerp3(albedo, self.eye_rgb, eye_w);
        let n = self.normal(p);
        let lambert = dot(n, self.light_dir).max(0.0);
        scale(albedo, 0.30 + 0.70 * self.light_gain * lambert)
    }

    /// Returns (rgb, opacity).
    fn trace(&self, origin: Vec3, dir: Vec3, near: f64, far: f64, samples: usize) -> (Vec3, f64) {
        let delta = (far - near) / samples as f64;
        let mut trans = 1.0;
        let mut rgb = [0.0; 3];
        for k in 0..samples {
            let t = near + (k as f64 + 0.5) * delta;
            let p = add(origin, scale(dir, t));
            if dot(p, p) > BOUND_RADIUS * BOUND_RADIUS {
                continue;
            }
            let (sdf, eye) = self.sdf(p);
            let sigma = KAPPA * sigmoid(-sdf / TAU);
            let alpha = 1.0 - (-sigma * delta).exp();
            if alpha > 1e-9 {
                let c = self.shade(p, eye);
                let w = trans * alpha;
                rgb = add(rgb, scale(c, w));
            }
            trans *= 1.0 - alpha;
        }
        (add(rgb, scale(self.bg, trans)), 1.0 - trans)
    }
}

fn check_res(resolution: usize) -> Result<()> {
    if !SUPPORTED_RES.contains(&resolution) {
        return Err(Error::arg(format!(
            "unsupported resolution {resolution}; expected one of {SUPPORTED_RES:?}"
        )));
    }
    Ok(())
}

fn render_rows(
    c: &MorphCoeffs,
    resolution: usize,
    opts: RenderOptions,
) -> Result<Vec<Vec<(Vec3, f64)>>> {
    c.validate()?;
    if opts.samples_per_ray == 0 {
        return Err(Error::arg("samples_per_ray must be positive"));
    }
    let scene = Scene::new(c);
    let cam = Camera::new(c.camera[0], c.camera[1], c.pose[0], c.pose[1], c.pose[2]);
    let near = cam.distance - DEPTH_HALF_RANGE;
    let far = cam.distance + DEPTH_HALF_RANGE;
    Ok(map_range(opts.exec, resolution, |row| {
        (0..resolution)
            .map(|col| {
                let dir = cam.ray_dir(row, col, resolution);
                scene.trace(cam.origin, dir, near, far, opts.samples_per_ray)
            })
            .collect()
    }))
}

/// Renders a scene at `resolution` (32, 64 or 128) with default options.
pub fn render_reference(spec: &SceneSpec, resolution: usize) -> Result<Image> {
    render_reference_with(&spec.coeffs, resolution, RenderOptions::default())
}

pub fn render_reference_with(c: &MorphCoeffs, resolution: usize, opts: RenderOptions) -> Result<Image> {
    check_res(resolution)?;
    let rows = render_rows(c, resolution, opts)?;
    let mut img = Image::filled(resolution, [0.0; 3]);
    for (y, row) in rows.iter().enumerate() {
        for (x, (rgb, _)) in row.iter().enumerate() {
            for ch in 0..3 {
                img.set(ch, y, x, rgb[ch].clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(img)
}

/// Per-pixel opacity `1 − T` of the reference scene, row-major.
pub fn silhouette_reference(c: &MorphCoeffs, resolution: usize, opts: RenderOptions) -> Result<Vec<f64>> {
    check_res(resolution)?;
    Ok(render_rows(c, resolution, opts)?.into_iter().flatten().map(|(_, a)| a).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CoeffRanges;

    fn symmetric() -> MorphCoeffs {
        let mut c = MorphCoeffs::neutral(&CoeffRanges::default());
        c.shape = [0.3, -0.4, 0.2, 0.5, -0.6, 0.1, -0.2, 0.0];
        c.expression = [0.4, -0.3, 0.2, 0.0];
        c.displacement = [0.5, -0.5, 0.3, 0.8];
        c.albedo = [0.2, -0.1, 0.3, 0.4, -0.2, 0.1];
        c.light = [0.0, 0.5, 0.3];
        c
    }

    fn spec(c: MorphCoeffs) -> SceneSpec {
        SceneSpec { coeffs: c, identity_id: 0, seed: 0 }
    }

    #[test]
    fn frontal_symmetric_scene_is_mirror_symmetric() {
        let img = render_reference(&spec(symmetric()), 32).unwrap();
        assert!(img.max_abs_diff(&img.mirror_x()) <= 1e-6);
    }

    #[test]
    fn opposite_yaw_mirrors() {
        let mut a = symmetric();
        a.pose = [0.35, 0.0, 0.0];
        let mut b = symmetric();
        b.pose = [-0.35, 0.0, 0.0];
        let ia = render_reference(&spec(a), 32).unwrap();
        let ib = render_reference(&spec(b), 32).unwrap();
        assert!(ia.max_abs_diff(&ib.mirror_x()) <= 1e-6);
        assert!(ia.max_abs_diff(&ib) > 1e-3);
    }

    #[test]
    fn deterministic_and_in_range() {
        let s = spec(symmetric());
        let a = render_reference(&s, 32).unwrap();
        let b = render_reference(&s, 32).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let c = symmetric();
        let p = render_reference_with(&c, 32, RenderOptions { samples_per_ray: 32, exec: ExecPolicy::Parallel }).unwrap();
        let s = render_reference_with(&c, 32, RenderOptions { samples_per_ray: 32, exec: ExecPolicy::Sequential }).unwrap();
        assert_eq!(p, s);
    }

    #[test]
    fn unsupported_resolution() {
        assert!(render_reference(&spec(symmetric()), 48).is_err());
    }

    #[test]
    fn head_is_opaque_at_centre_and_clear_at_corner() {
        let sil = silhouette_reference(&symmetric(), 32, RenderOptions::default()).unwrap();
        assert!(sil[16 * 32 + 16] > 0.99);
        assert!(sil[0] < 1e-3);
    }
}
