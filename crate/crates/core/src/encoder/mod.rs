//! The 3D-aware encoder: morphable coefficients through mapping networks plus
//! image detail codes, summed into `(w_geo, w_tex, d)`.

mod regressor;

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use regressor::{train_coeff_regressor, CoeffRegressor};

use crate::config::{CoeffRanges, ExperimentConfig, MorphMode};
use crate::error::{Error, Result};
use crate::generator::{TrainMeta, GEO_STYLES, N_STYLES};
use crate::image::Image;
use crate::nn::ops::{from_f64, to_vec_f64};
use crate::nn::{seeded_rng, Checkpoint, ConvNet, ConvNetSpec, Mlp, ParamStore, Pool};
use crate::scene::{normalized_geometry, normalized_texture, normalized_view, MorphCoeffs, D_GEO, D_SHAPE, D_TEX, D_VIEW};

pub const ENCODER_KIND: &str = "encoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleCode {
    pub w_geo: Vec<f64>,
    pub w_tex: Vec<f64>,
}

/// Rows 1–7 are `w_geo`, rows 8–21 are `w_tex`.
pub fn assemble_style_tensor(w: &StyleCode) -> Result<Vec<Vec<f64>>> {
    if w.w_geo.len() != w.w_tex.len() {
        return Err(Error::arg("w_geo and w_tex lengths differ"));
    }
    Ok((0..N_STYLES).map(|i| if i < GEO_STYLES { w.w_geo.clone() } else { w.w_tex.clone() }).collect())
}

/// Inverse of [`assemble_style_tensor`]: reads rows 1 and 8.
pub fn collapse_style_tensor(rows: &[Vec<f64>]) -> Result<StyleCode> {
    if rows.len() != N_STYLES {
        return Err(Error::arg(format!("style tensor needs {N_STYLES} rows")));
    }
    Ok(StyleCode { w_geo: rows[0].clone(), w_tex: rows[GEO_STYLES].clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub d_w: usize,
    pub d_d: usize,
    pub resolution: usize,
    pub hidden: usize,
    pub geo_layers: usize,
    pub tex_layers: usize,
    pub cam_layers: usize,
    pub slope: f64,
    pub detail: ConvNetSpec,
    pub ranges: CoeffRanges,
}

impl EncoderArch {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let e = &cfg.encoder;
        let g = &cfg.generator;
        Self {
            d_w: g.d_w,
            d_d: g.d_d,
            resolution: g.output_resolution,
            hidden: e.mapping_hidden,
            geo_layers: e.geo_layers,
            tex_layers: e.tex_layers,
            cam_layers: e.cam_layers,
            slope: e.slope,
            detail: ConvNetSpec {
                in_channels: 3,
                in_res: g.output_resolution,
                channels: (0..e.detail_blocks).map(|i| e.detail_base_channels << i).collect(),
                head: vec![g.d_w],
                pool: Pool::Mean,
                slope: e.slope,
            },
            ranges: cfg.scene.ranges.clone(),
        }
    }

    fn widths(&self, inp: usize, out: usize, layers: usize) -> Vec<usize> {
        let mut w = vec![inp];
        w.extend(std::iter::repeat_n(self.hidden, layers - 1));
        w.push(out);
        w
    }
}

/// Batched encoder outputs, each `(B, ·)`.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub w_geo: Tensor,
    pub w_tex: Tensor,
    pub d: Tensor,
}

impl Encoded {
    pub fn to_codes(&self) -> Result<Vec<(StyleCode, Vec<f64>)>> {
        let dw = self.w_geo.dim(1)?;
        let dd = self.d.dim(1)?;
        let g = to_vec_f64(&self.w_geo)?;
        let t = to_vec_f64(&self.w_tex)?;
        let d = to_vec_f64(&self.d)?;
        Ok(g.chunks(dw)
            .zip(t.chunks(dw))
            .zip(d.chunks(dd))
            .map(|((a, b), c)| (StyleCode { w_geo: a.to_vec(), w_tex: b.to_vec() }, c.to_vec()))
            .collect())
    }
}

/// Normalized `(g, t, c)` coefficient tensors of a batch.
pub fn coeff_tensors(coeffs: &[MorphCoeffs], ranges: &CoeffRanges, dtype: DType) -> Result<(Tensor, Tensor, Tensor)> {
    let b = coeffs.len();
    let (mut g, mut t, mut c) = (Vec::new(), Vec::new(), Vec::new());
    for m in coeffs {
        let n = m.normalized(ranges);
        g.extend_from_slice(normalized_geometry(&n));
        t.extend_from_slice(normalized_texture(&n));
        c.extend_from_slice(normalized_view(&n));
    }
    Ok((from_f64(g, &[b, D_GEO], dtype)?, from_f64(t, &[b, D_TEX], dtype)?, from_f64(c, &[b, D_VIEW], dtype)?))
}

/// Replaces shape and albedo, keeping every other coefficient.
pub fn with_identity(c: &MorphCoeffs, shape: &[f64], albedo: &[f64]) -> Result<MorphCoeffs> {
    let mut out = c.clone();
    out.shape = shape.try_into().map_err(|_| Error::arg("shape override length"))?;
    out.albedo = albedo.try_into().map_err(|_| Error::arg("albedo override length"))?;
    Ok(out)
}

pub struct Encoder {
    arch: EncoderArch,
    store: ParamStore,
    m_geo: Mlp,
    m_tex: Mlp,
    m_cam: Mlp,
    e_geo: ConvNet,
    e_tex: ConvNet,
    regressor: Option<CoeffRegressor>,
}

impl Encoder {
    pub fn init(arch: EncoderArch, zero_head: bool, seed: u64, dtype: DType) -> Result<Self> {
        if arch.geo_layers < 2 || arch.tex_layers < 2 || arch.cam_layers < 2 {
            return Err(Error::arg("mapping networks need at least two layers"));
        }
        let mut rng = seeded_rng(seed, "encoder-init");
        let mut store = ParamStore::new(dtype);
        Mlp::init(&mut store, "m_geo", &arch.widths(D_GEO, arch.d_w, arch.geo_layers), arch.slope, &mut rng)?;
        Mlp::init(&mut store, "m_tex", &arch.widths(D_TEX, arch.d_w, arch.tex_layers), arch.slope, &mut rng)?;
        Mlp::init(&mut store, "m_cam", &arch.widths(D_VIEW, arch.d_d, arch.cam_layers), arch.slope, &mut rng)?;
        ConvNet::init(&mut store, "e_geo", &arch.detail, zero_head, &mut rng)?;
        ConvNet::init(&mut store, "e_tex", &arch.detail, zero_head, &mut rng)?;
        Self::from_parts(arch, store, None)
    }

    fn from_parts(arch: EncoderArch, store: ParamStore, regressor: Option<CoeffRegressor>) -> Result<Self> {
        Ok(Self {
            m_geo: Mlp::load(&store, "m_geo", arch.geo_layers, arch.slope)?,
            m_tex: Mlp::load(&store, "m_tex", arch.tex_layers, arch.slope)?,
            m_cam: Mlp::load(&store, "m_cam", arch.cam_layers, arch.slope)?,
            e_geo: ConvNet::load(&store, "e_geo", &arch.detail)?,
            e_tex: ConvNet::load(&store, "e_tex", &arch.detail)?,
            arch,
            store,
            regressor,
        })
    }

    pub fn arch(&self) -> &EncoderArch {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn frozen(&self) -> Result<Self> {
        Self::from_parts(self.arch.clone(), self.store.frozen(), self.regressor.clone())
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let store = ParamStore::from_blobs(&self.store.to_blobs()?, dtype)?;
        Self::from_parts(self.arch.clone(), store, self.regressor.clone())
    }

    /// `(M_geo, M_tex, M_cam)` layer counts.
    pub fn mapping_layer_counts(&self) -> (usize, usize, usize) {
        (self.m_geo.num_layers(), self.m_tex.num_layers(), self.m_cam.num_layers())
    }

    pub fn mapping_nets(&self) -> (&Mlp, &Mlp, &Mlp) {
        (&self.m_geo, &self.m_tex, &self.m_cam)
    }

    pub fn set_regressor(&mut self, r: CoeffRegressor) {
        self.regressor = Some(r);
    }

    pub fn regressor(&self) -> Option<&CoeffRegressor> {
        self.regressor.as_ref()
    }

    /// Morphable coefficients of each image.
    ///
    /// Oracle mode passes `oracle` through unchanged and fails without it;
    /// regressor mode predicts them with the trained coefficient regressor.
    pub fn extract_morph_coeffs(
        &self,
        images: &[Image],
        mode: MorphMode,
        oracle: Option<&[MorphCoeffs]>,
    ) -> Result<Vec<MorphCoeffs>> {
        match mode {
            MorphMode::Oracle => {
                let o = oracle.ok_or_else(|| Error::arg("oracle mode needs the ground-truth scene of every image"))?;
                if o.len() != images.len() {
                    return Err(Error::arg("oracle coefficients do not align with the images"));
                }
                Ok(o.to_vec())
            }
            MorphMode::Regressor => {
                let r = self
                    .regressor
                    .as_ref()
                    .filter(|r| r.is_trained())
                    .ok_or_else(|| Error::arg("regressor mode needs a trained coefficient regressor"))?;
                r.predict(images, &self.arch.ranges)
            }
        }
    }

    /// `(M_geo(g), M_tex(t), M_cam(c))` from normalized coefficient tensors.
    pub fn map_normalized(&self, g: &Tensor, t: &Tensor, c: &Tensor) -> Result<Encoded> {
        Ok(Encoded { w_geo: self.m_geo.forward(g)?, w_tex: self.m_tex.forward(t)?, d: self.m_cam.forward(c)? })
    }

    pub fn map_morph_to_codes(&self, coeffs: &[MorphCoeffs]) -> Result<Encoded> {
        let (g, t, c) = coeff_tensors(coeffs, &self.arch.ranges, self.dtype())?;
        self.map_normalized(&g, &t, &c)
    }

    /// `(Δ_geo, Δ_tex)` for a `(B, 3, R, R)` image tensor.
    pub fn encode_details(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h != self.arch.resolution || w != self.arch.resolution {
            return Err(Error::arg(format!(
                "detail encoders expect 3x{r}x{r} images, got {c}x{h}x{w}",
                r = self.arch.resolution
            )));
        }
        let x = x.to_dtype(self.dtype())?;
        Ok((self.e_geo.forward(&x)?, self.e_tex.forward(&x)?))
    }

    /// Morphable codes plus detail codes.
    pub fn encode_tensor(&self, x: &Tensor, g: &Tensor, t: &Tensor, c: &Tensor) -> Result<Encoded> {
        let m = self.map_normalized(g, t, c)?;
        let (dg, dt) = self.encode_details(x)?;
        Ok(Encoded { w_geo: (m.w_geo + dg)?, w_tex: (m.w_tex + dt)?, d: m.d })
    }

    pub fn encode_with_coeffs(&self, images: &[Image], coeffs: &[MorphCoeffs]) -> Result<Encoded> {
        let refs: Vec<&Image> = images.iter().collect();
        let x = Image::batch_to_tensor(&refs, self.dtype(), &Device::Cpu)?;
        let (g, t, c) = coeff_tensors(coeffs, &self.arch.ranges, self.dtype())?;
        self.encode_tensor(&x, &g, &t, &c)
    }

    /// `E_w(x), E_d(x)` for every image.
    pub fn encode(
        &self,
        images: &[Image],
        mode: MorphMode,
        oracle: Option<&[MorphCoeffs]>,
    ) -> Result<Vec<(StyleCode, Vec<f64>)>> {
        let coeffs = self.extract_morph_coeffs(images, mode, oracle)?;
        let mut out = Vec::with_capacity(images.len());
        for (ims, cs) in images.chunks(64).zip(coeffs.chunks(64)) {
            out.extend(self.encode_with_coeffs(ims, cs)?.to_codes()?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, meta: &TrainMeta) -> Result<Checkpoint> {
        let mut tensors = self.store.to_blobs()?;
        let mut header = serde_json::json!({ "arch": self.arch, "meta": meta });
        if let Some(r) = &self.regressor {
            tensors.extend(r.to_blobs()?);
            header["regressor"] = r.header();
        }
        Ok(Checkpoint { kind: ENCODER_KIND.into(), header, tensors })
    }

    pub fn save(&self, path: &Path, meta: &TrainMeta) -> Result<()> {
        self.to_checkpoint(meta)?.save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType) -> Result<(Self, TrainMeta)> {
        ck.expect_kind(ENCODER_KIND)?;
        let arch: EncoderArch = ck.header_field("arch")?;
        let meta: TrainMeta = ck.header_field("meta")?;
        let regressor = match ck.header.get("regressor") {
            Some(h) => Some(CoeffRegressor::from_header(h, &ck.tensors)?),
            None => None,
        };
        let own = ck.tensors.iter().filter(|(k, _)| !k.starts_with(regressor::PREFIX)).map(|(k, v)| (k.clone(), v.clone())).collect();
        let store = ParamStore::from_blobs(&own, dtype).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let enc = Self::from_parts(arch, store, regressor).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((enc, meta))
    }

    pub fn load(path: &Path, dtype: DType) -> Result<(Self, TrainMeta)> {
        Self::from_checkpoint(&Checkpoint::load(path)?, dtype)
    }
}

/// Predicted shape coefficients, used as an identity embedding.
pub fn shape_of(c: &MorphCoeffs) -> &[f64] {
    &c.shape[..D_SHAPE]
}
