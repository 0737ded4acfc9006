use std::path::Path;

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use super::latent::{camera_from_view, LatentPrior};
use super::volume::composite_weights;
use crate::config::{CoeffRanges, GeneratorConfig};
use crate::error::{Error, Result};
use crate::nn::ops::{from_f64, leaky_relu, sigmoid, softplus, upsample2x};
use crate::nn::{seeded_rng, Checkpoint, Conv2d, Linear, ParamStore};

/// Number of style-modulation slots.
pub const N_STYLES: usize = 21;
/// Slots `1..=GEO_STYLES` read `w_geo`; the rest read `w_tex`.
pub const GEO_STYLES: usize = 7;

pub const GENERATOR_KIND: &str = "generator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub d_w: usize,
    pub d_d: usize,
    pub nerf_resolution: usize,
    pub samples_per_ray: usize,
    pub output_resolution: usize,
    pub trunk_width: usize,
    pub feature_dim: usize,
    pub channels: usize,
    pub pos_freqs: usize,
    pub slope: f64,
    pub depth_half_range: f64,
    pub n_styles: usize,
}

impl From<&GeneratorConfig> for GeneratorArch {
    fn from(g: &GeneratorConfig) -> Self {
        Self {
            d_w: g.d_w,
            d_d: g.d_d,
            nerf_resolution: g.nerf_resolution,
            samples_per_ray: g.samples_per_ray,
            output_resolution: g.output_resolution,
            trunk_width: g.trunk_width,
            feature_dim: g.feature_dim,
            channels: g.upsampler_channels,
            pos_freqs: g.pos_freqs,
            slope: g.slope,
            depth_half_range: g.depth_half_range,
            n_styles: N_STYLES,
        }
    }
}

impl GeneratorArch {
    fn pe_dim(&self) -> usize {
        3 + 6 * self.pos_freqs
    }

    /// Output width of every style affine, indexed by slot (1-based).
    pub fn style_dims(&self) -> [usize; N_STYLES] {
        let (w, f, c) = (self.trunk_width, self.feature_dim, self.channels);
        [w, w, w, w, w, w, w, f, c, c, c, c, 3, c, c, c, c, c, 3, 3, 3]
    }
}

/// Training metadata stored with a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub steps: usize,
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
    #[serde(default)]
    pub notes: serde_json::Value,
}

pub struct RenderOutput {
    /// `(B, 3, H, W)` in `[0, 1]`.
    pub image: Tensor,
    /// Opacity `1 − T_{S+1}` per NeRF ray, `(B, r·r)`.
    pub silhouette: Tensor,
    /// Pre-upsampling density field, `(B, r·r, S)`.
    pub density: Tensor,
}

struct Net {
    styles: Vec<Linear>,
    trunk: Vec<Linear>,
    density: Linear,
    feature: Linear,
    bg: Tensor,
    c16a: Conv2d,
    c16b: Conv2d,
    rgb16: Conv2d,
    c32a: Conv2d,
    c32b: Conv2d,
    rgb32: Conv2d,
}

impl Net {
    fn load(store: &ParamStore) -> Result<Self> {
        let styles = (1..=N_STYLES)
            .map(|i| Linear::load(store, &format!("style.{i:02}")))
            .collect::<Result<Vec<_>>>()?;
        let trunk = (0..3).map(|i| Linear::load(store, &format!("trunk.{i}"))).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            styles,
            trunk,
            density: Linear::load(store, "density")?,
            feature: Linear::load(store, "feature")?,
            bg: store.get("background")?,
            c16a: Conv2d::load(store, "up.c16a", 1, 1)?,
            c16b: Conv2d::load(store, "up.c16b", 1, 1)?,
            rgb16: Conv2d::load(store, "up.rgb16", 1, 0)?,
            c32a: Conv2d::load(store, "up.c32a", 1, 1)?,
            c32b: Conv2d::load(store, "up.c32b", 1, 1)?,
            rgb32: Conv2d::load(store, "up.rgb32", 1, 0)?,
        })
    }
}

/// Style-conditioned NeRF with a 2D upsampler.
///
/// Slots 1–6 are FiLM scale/shift pairs on the three trunk layers and slot 7
/// scales the head input, so density and features depend on `w_geo` only.
/// Slots 8–21 modulate the upsampler convolutions and the final colour
/// affine.
pub struct Generator {
    arch: GeneratorArch,
    prior: LatentPrior,
    store: ParamStore,
    net: Net,
}

fn modulate(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (b, c) = s.dims2()?;
    Ok(x.broadcast_mul(&(s + 1.0)?.reshape((b, c, 1, 1))?)?)
}

fn shift(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (b, c) = s.dims2()?;
    Ok(x.broadcast_add(&s.reshape((b, c, 1, 1))?)?)
}

/// Repeats `(w_geo, w_tex)` of shape `(B, D_w)` into `(B, 21, D_w)`.
pub fn expand_styles(w_geo: &Tensor, w_tex: &Tensor) -> Result<Tensor> {
    let (b, d) = w_geo.dims2()?;
    if w_tex.dims2()? != (b, d) {
        return Err(Error::arg("w_geo and w_tex shapes differ"));
    }
    let g = w_geo.unsqueeze(1)?.broadcast_as((b, GEO_STYLES, d))?;
    let t = w_tex.unsqueeze(1)?.broadcast_as((b, N_STYLES - GEO_STYLES, d))?;
    Ok(Tensor::cat(&[g, t], 1)?.contiguous()?)
}

impl Generator {
    pub fn init(arch: GeneratorArch, ranges: CoeffRanges, seed: u64, dtype: DType) -> Result<Self> {
        let prior = LatentPrior::new(arch.d_w, seed, ranges)?;
        let mut rng = seeded_rng(seed, "generator-init");
        let mut store = ParamStore::new(dtype);
        let g = (2.0 / (1.0 + arch.slope * arch.slope)).sqrt();
        for (i, &dim) in arch.style_dims().iter().enumerate() {
            Linear::init(&mut store, &format!("style.{:02}", i + 1), arch.d_w, dim, 0.25, &mut rng)?;
        }
        let w = arch.trunk_width;
        Linear::init(&mut store, "trunk.0", arch.pe_dim(), w, g, &mut rng)?;
        Linear::init(&mut store, "trunk.1", w, w, g, &mut rng)?;
        Linear::init(&mut store, "trunk.2", w, w, g, &mut rng)?;
        Linear::init(&mut store, "density", w, 1, 1.0, &mut rng)?;
        Linear::init(&mut store, "feature", w + 3, arch.feature_dim, 1.0, &mut rng)?;
        store.normal("background", &[arch.feature_dim], 0.5, &mut rng)?;
        let (f, c) = (arch.feature_dim, arch.channels);
        Conv2d::init(&mut store, "up.c16a", f, c, 3, g, &mut rng)?;
        Conv2d::init(&mut store, "up.c16b", c, c, 3, g, &mut rng)?;
        Conv2d::init(&mut store, "up.rgb16", c, 3, 1, 1.0, &mut rng)?;
        Conv2d::init(&mut store, "up.c32a", c, c, 3, g, &mut rng)?;
        Conv2d::init(&mut store, "up.c32b", c, c, 3, g, &mut rng)?;
        Conv2d::init(&mut store, "up.rgb32", c, 3, 1, 1.0, &mut rng)?;
        let net = Net::load(&store)?;
        Ok(Self { arch, prior, store, net })
    }

    fn from_parts(arch: GeneratorArch, prior: LatentPrior, store: ParamStore) -> Result<Self> {
        let net = Net::load(&store)?;
        Ok(Self { arch, prior, store, net })
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    /// Same parameters with a different number of samples per ray.
    pub fn with_samples(&self, samples: usize) -> Result<Self> {
        let mut arch = self.arch.clone();
        arch.samples_per_ray = samples;
        Self::from_parts(arch, self.prior.clone(), self.store.clone())
    }

    pub fn prior(&self) -> &LatentPrior {
        &self.prior
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Same parameters, detached from autograd.
    pub fn frozen(&self) -> Result<Self> {
        Self::from_parts(self.arch.clone(), self.prior.clone(), self.store.frozen())
    }

    /// Independent trainable copy.
    pub fn deep_clone(&self) -> Result<Self> {
        Self::from_parts(self.arch.clone(), self.prior.clone(), self.store.deep_clone()?)
    }

    /// Copy with parameters cast to `dtype`.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let store = ParamStore::from_blobs(&self.store.to_blobs()?, dtype)?;
        Self::from_parts(self.arch.clone(), self.prior.clone(), store)
    }

    pub fn check_resolution(&self, resolution: usize) -> Result<usize> {
        let base = self.arch.nerf_resolution;
        let ok = resolution >= 2 * base && resolution % base == 0 && (resolution / base).is_power_of_two();
        if !ok && resolution != self.arch.output_resolution {
            return Err(Error::arg(format!(
                "resolution {resolution} is not a power-of-two multiple (at least 2x) of the NeRF resolution {base}"
            )));
        }
        Ok(resolution / 2)
    }

    /// Ray sample positions and directions for a batch of view codes.
    fn ray_inputs(&self, views: &[Vec<f64>], r: usize) -> Result<(Tensor, Tensor)> {
        let s = self.arch.samples_per_ray;
        let h = self.arch.depth_half_range;
        let delta = 2.0 * h / s as f64;
        let b = views.len();
        let n = r * r * s;
        let mut pts = Vec::with_capacity(b * n * 3);
        let mut dirs = Vec::with_capacity(b * n * 3);
        for v in views {
            if v.len() != self.arch.d_d {
                return Err(Error::arg(format!("view code length {} != {}", v.len(), self.arch.d_d)));
            }
            let cam = camera_from_view(v)?;
            let near = cam.distance - h;
            for row in 0..r {
                for col in 0..r {
                    let dir = cam.ray_dir(row, col, r);
                    for k in 0..s {
                        let t = near + (k as f64 + 0.5) * delta;
                        for a in 0..3 {
                            pts.push((cam.origin[a] + t * dir[a]) / h);
                            dirs.push(dir[a]);
                        }
                    }
                }
            }
        }
        let dt = self.dtype();
        Ok((from_f64(pts, &[b, n, 3], dt)?, from_f64(dirs, &[b, n, 3], dt)?))
    }

    fn encode_positions(&self, p: &Tensor) -> Result<Tensor> {
        let mut parts = vec![p.clone()];
        for k in 0..self.arch.pos_freqs {
            let x = (p * (std::f64::consts::PI * 2f64.powi(k as i32)))?;
            parts.push(x.sin()?);
            parts.push(x.cos()?);
        }
        Ok(Tensor::cat(&parts, D::Minus1)?)
    }

    fn style(&self, styles: &Tensor, slot: usize) -> Result<Tensor> {
        let row = styles.narrow(1, slot - 1, 1)?.squeeze(1)?;
        self.net.styles[slot - 1].forward(&row)
    }

    /// Density `(B, N)` and features `(B, N, F)` for flattened samples.
    ///
    /// FiLM scales are folded into per-sample weight matrices so each trunk
    /// layer is one batched matmul.
    fn field(&self, styles: &Tensor, pts: &Tensor, dirs: &Tensor) -> Result<(Tensor, Tensor)> {
        let slope = self.arch.slope;
        let mut h = self.encode_positions(pts)?;
        for (i, layer) in self.net.trunk.iter().enumerate() {
            let scale = (self.style(styles, 2 * i + 1)? + 1.0)?;
            let sh = self.style(styles, 2 * i + 2)?;
            let w = layer.weight().unsqueeze(0)?.broadcast_mul(&scale.unsqueeze(1)?)?;
            let b = (layer.bias().unsqueeze(0)?.broadcast_mul(&scale)? + sh)?;
            h = leaky_relu(&h.matmul(&w)?.broadcast_add(&b.unsqueeze(1)?)?, slope)?;
        }
        let s7 = (self.style(styles, 7)? + 1.0)?.unsqueeze(2)?;
        let width = self.arch.trunk_width;
        let fw = self.net.feature.weight();
        let head_w = Tensor::cat(&[self.net.density.weight(), &fw.narrow(0, 0, width)?], 1)?;
        let head_w = head_w.unsqueeze(0)?.broadcast_mul(&s7)?;
        let out = h.matmul(&head_w)?;
        // Radial prior: dense inside the unit ball, empty towards the bound.
        let radius = pts.sqr()?.sum(D::Minus1)?.sqrt()?;
        let prior = ((radius * -6.0)? + 3.5)?;
        let raw = (out.narrow(2, 0, 1)?.squeeze(2)? + prior)?.broadcast_add(self.net.density.bias())?;
        let sigma = softplus(&raw)?;
        let dir_w = fw.narrow(0, width, 3)?;
        let feats = (out.narrow(2, 1, self.arch.feature_dim)? + dirs.broadcast_matmul(&dir_w)?)?
            .broadcast_add(self.net.feature.bias())?;
        Ok((sigma, feats))
    }

    /// Renders a batch. `styles` is `(B, 21, D_w)`; one view code per sample.
    pub fn render_styles(&self, styles: &Tensor, views: &[Vec<f64>], resolution: usize) -> Result<RenderOutput> {
        let (b, n_styles, dw) = styles.dims3()?;
        if n_styles != N_STYLES || dw != self.arch.d_w || b != views.len() {
            return Err(Error::arg(format!(
                "style tensor {:?} does not match ({}, {N_STYLES}, {})",
                styles.dims(),
                views.len(),
                self.arch.d_w
            )));
        }
        let styles = styles.to_dtype(self.dtype())?;
        let r = self.check_resolution(resolution)?;
        let s = self.arch.samples_per_ray;
        let f = self.arch.feature_dim;
        let (pts, dirs) = self.ray_inputs(views, r)?;
        let (sigma, feats) = self.field(&styles, &pts, &dirs)?;
        let delta = 2.0 * self.arch.depth_half_range / s as f64;
        let density = sigma.reshape((b, r * r, s))?;
        let (weights, last) = composite_weights(&(&density * delta)?)?;
        let w = weights.reshape((b * r * r, 1, s))?;
        let fe = feats.reshape((b * r * r, s, f))?;
        let acc = w.matmul(&fe)?.reshape((b, r * r, f))?;
        let bg = last.unsqueeze(D::Minus1)?.broadcast_mul(&self.net.bg.reshape((1, 1, f))?)?;
        let fmap = (acc + bg)?.reshape((b, r, r, f))?.permute((0, 3, 1, 2))?.contiguous()?;
        let image = self.upsample(&styles, &fmap)?;
        let silhouette = (1.0 - last)?;
        Ok(RenderOutput { image, silhouette, density })
    }

    fn upsample(&self, styles: &Tensor, fmap: &Tensor) -> Result<Tensor> {
        let slope = self.arch.slope;
        let st = |slot: usize| self.style(styles, slot);
        let n = &self.net;
        let block = |x: &Tensor, conv: &Conv2d, a: usize| -> Result<Tensor> {
            let y = shift(&conv.forward(&modulate(x, &st(a)?)?)?, &st(a + 1)?)?;
            leaky_relu(&y, slope)
        };
        let h = block(fmap, &n.c16a, 8)?;
        let h = block(&h, &n.c16b, 10)?;
        let rgb16 = shift(&n.rgb16.forward(&modulate(&h, &st(12)?)?)?, &st(13)?)?;
        let h = upsample2x(&h)?;
        let h = block(&h, &n.c32a, 14)?;
        let h = block(&h, &n.c32b, 16)?;
        let rgb = (shift(&n.rgb32.forward(&modulate(&h, &st(18)?)?)?, &st(19)?)? + upsample2x(&rgb16)?)?;
        sigmoid(&shift(&modulate(&rgb, &st(20)?)?, &st(21)?)?)
    }

    /// Renders `(w_geo, w_tex)` rows of `(B, D_w)` tensors.
    pub fn render(&self, w_geo: &Tensor, w_tex: &Tensor, views: &[Vec<f64>], resolution: usize) -> Result<RenderOutput> {
        self.render_styles(&expand_styles(w_geo, w_tex)?, views, resolution)
    }

    /// Convenience wrapper over plain vectors.
    pub fn render_codes(
        &self,
        w_geo: &[Vec<f64>],
        w_tex: &[Vec<f64>],
        views: &[Vec<f64>],
        resolution: usize,
    ) -> Result<RenderOutput> {
        let b = w_geo.len();
        let d = self.arch.d_w;
        if w_tex.len() != b || w_geo.iter().chain(w_tex).any(|w| w.len() != d) {
            return Err(Error::arg(format!("style codes must be {b} vectors of length {d}")));
        }
        let g = from_f64(w_geo.concat(), &[b, d], self.dtype())?;
        let t = from_f64(w_tex.concat(), &[b, d], self.dtype())?;
        self.render(&g, &t, views, resolution)
    }

    pub fn to_checkpoint(&self, meta: &TrainMeta) -> Result<Checkpoint> {
        let header = serde_json::json!({
            "arch": self.arch,
            "prior": self.prior,
            "meta": meta,
            "dtype": format!("{:?}", self.dtype()),
        });
        Ok(Checkpoint { kind: GENERATOR_KIND.into(), header, tensors: self.store.to_blobs()? })
    }

    pub fn save(&self, path: &Path, meta: &TrainMeta) -> Result<()> {
        self.to_checkpoint(meta)?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType) -> Result<(Self, TrainMeta)> {
        ck.expect_kind(GENERATOR_KIND)?;
        let arch: GeneratorArch = ck.header_field("arch")?;
        let prior: LatentPrior = ck.header_field("prior")?;
        let meta: TrainMeta = ck.header_field("meta")?;
        if arch.n_styles != N_STYLES {
            return Err(Error::Checkpoint(format!("expected {N_STYLES} style slots, found {}", arch.n_styles)));
        }
        let store = ParamStore::from_blobs(&ck.tensors, dtype).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let g = Self::from_parts(arch, prior, store).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((g, meta))
    }

    pub fn load(path: &Path, dtype: DType) -> Result<(Self, TrainMeta)> {
        Self::from_checkpoint(&Checkpoint::load(path)?, dtype)
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }
}
