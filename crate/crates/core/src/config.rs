//! The single experiment configuration document.
//!
//! Every tunable default lives here. Unknown keys are rejected and the hash of
//! the fully-resolved document is embedded in every artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub scene: SceneConfig,
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    pub inversion: InversionConfig,
    pub flow: FlowConfig,
    pub video: VideoConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 2024,
            scene: SceneConfig::default(),
            generator: GeneratorConfig::default(),
            encoder: EncoderConfig::default(),
            inversion: InversionConfig::default(),
            flow: FlowConfig::default(),
            video: VideoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Uniform sampling ranges of the procedural coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoeffRanges {
    pub shape: [f64; 2],
    pub expression: [f64; 2],
    pub displacement: [f64; 2],
    pub albedo: [f64; 2],
    pub light: [f64; 2],
    /// Vertical field of view, radians.
    pub fov: [f64; 2],
    /// Camera distance from the head centre.
    pub distance: [f64; 2],
    pub yaw: [f64; 2],
    pub pitch: [f64; 2],
    pub roll: [f64; 2],
}

impl Default for CoeffRanges {
    fn default() -> Self {
        Self {
            shape: [-1.0, 1.0],
            expression: [-1.0, 1.0],
            displacement: [-1.0, 1.0],
            albedo: [-1.0, 1.0],
            light: [-1.0, 1.0],
            fov: [0.56, 0.68],
            distance: [2.7, 3.3],
            yaw: [-0.6, 0.6],
            pitch: [-0.25, 0.25],
            roll: [-0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub ranges: CoeffRanges,
    pub resolution: usize,
    pub samples_per_ray: usize,
    /// Bound on the max per-pixel change for a 1e-3 coefficient perturbation.
    pub smoothness_max_pixel_delta: f64,
    pub dataset_size: usize,
    pub identities: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            ranges: CoeffRanges::default(),
            resolution: 32,
            samples_per_ray: 64,
            smoothness_max_pixel_delta: 0.05,
            dataset_size: 2000,
            identities: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub d_w: usize,
    pub d_d: usize,
    pub nerf_resolution: usize,
    pub samples_per_ray: usize,
    pub output_resolution: usize,
    pub trunk_width: usize,
    pub feature_dim: usize,
    pub upsampler_channels: usize,
    pub pos_freqs: usize,
    pub slope: f64,
    /// Half depth of the sampled segment around the head centre.
    pub depth_half_range: f64,
    pub pretrain: PretrainConfig,
    pub corpus_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_w: 64,
            d_d: 16,
            nerf_resolution: 16,
            samples_per_ray: 24,
            output_resolution: 32,
            trunk_width: 32,
            feature_dim: 8,
            upsampler_channels: 16,
            pos_freqs: 3,
            slope: 0.2,
            depth_half_range: 1.3,
            pretrain: PretrainConfig::default(),
            corpus_size: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub disc_lr: f64,
    pub disc_channels: usize,
    pub lambda_reconstruction: f64,
    pub lambda_perceptual: f64,
    pub lambda_adv: f64,
    /// Weight of the NeRF opacity match against the reference silhouette.
    pub lambda_silhouette: f64,
    /// Early stop once the feature-distance proxy falls below this value.
    pub fid_threshold: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 8,
            lr: 3e-3,
            lr_final: 3e-4,
            disc_lr: 1e-3,
            disc_channels: 16,
            lambda_reconstruction: 1.0,
            lambda_perceptual: 0.1,
            lambda_adv: 0.01,
            lambda_silhouette: 1.0,
            fid_threshold: 0.0,
            eval_every: 250,
            eval_samples: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MorphMode {
    Oracle,
    #[default]
    Regressor,
}

impl std::str::FromStr for MorphMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(MorphMode::Oracle),
            "regressor" => Ok(MorphMode::Regressor),
            other => Err(Error::arg(format!("unknown morph mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub mapping_hidden: usize,
    pub geo_layers: usize,
    pub tex_layers: usize,
    pub cam_layers: usize,
    pub slope: f64,
    pub detail_base_channels: usize,
    pub detail_blocks: usize,
    pub zero_head: bool,
    pub morph_mode: MorphMode,
    pub regressor: RegressorConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            mapping_hidden: 128,
            geo_layers: 5,
            tex_layers: 5,
            cam_layers: 3,
            slope: 0.2,
            detail_base_channels: 16,
            detail_blocks: 4,
            zero_head: true,
            morph_mode: MorphMode::Regressor,
            regressor: RegressorConfig::default(),
        }
    }
}

/// Shared settings for the small convolutional regressors (coefficients and attributes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    pub base_channels: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_final: f64,
    /// Validation threshold: mean absolute error (normalized units).
    pub max_val_mae: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            blocks: 4,
            hidden: 128,
            steps: 3000,
            batch: 32,
            lr: 2e-3,
            lr_final: 1e-4,
            max_val_mae: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub lambda_style: f64,
    pub lambda_view: f64,
    pub lambda_adv: f64,
    pub lr_encoder: f64,
    pub lr_disc: f64,
    pub batch: usize,
    pub steps: usize,
    pub disc_width: usize,
    pub disc_layers: usize,
    pub perceptual_channels: Vec<usize>,
    pub perceptual_seed: u64,
    /// Anti-collapse monitor: minimum encoded/prior variance ratio.
    pub collapse_fraction: f64,
    pub monitor_every: usize,
    pub monitor_samples: usize,
    pub no_discriminator: bool,
    pub real_data_only: bool,
    pub min_psnr: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            lambda_style: 0.5,
            lambda_view: 5.0,
            lambda_adv: 0.1,
            lr_encoder: 1e-4,
            lr_disc: 1e-4,
            batch: 16,
            steps: 2000,
            disc_width: 128,
            disc_layers: 3,
            perceptual_channels: vec![8, 16, 16],
            perceptual_seed: 7919,
            collapse_fraction: 0.5,
            monitor_every: 100,
            monitor_samples: 128,
            no_discriminator: false,
            real_data_only: false,
            min_psnr: 22.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Geo,
    Tex,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Geo => "geo",
            Branch::Tex => "tex",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub hidden: usize,
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub batch: usize,
    pub train_steps: usize,
    pub dequant_noise: f64,
    pub routing: BTreeMap<String, Branch>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let routing = [
            ("elongation", Branch::Geo),
            ("feature_size", Branch::Geo),
            ("hue", Branch::Tex),
            ("light_elevation", Branch::Tex),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            hidden: 64,
            t0: 0.0,
            t1: 1.0,
            steps: 40,
            lr: 2e-3,
            lr_final: 2e-4,
            batch: 64,
            train_steps: 1000,
            dequant_noise: 0.1,
            routing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VideoConfig {
    pub smoothing_weight: f64,
    pub smooth_view: bool,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub finetune_batch: usize,
    pub lambda_perceptual: f64,
    pub frames: usize,
    pub yaw_span: f64,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            smoothing_weight: 0.5,
            smooth_view: false,
            finetune_steps: 300,
            finetune_lr: 1e-4,
            finetune_batch: 4,
            lambda_perceptual: 1.0,
            frames: 32,
            yaw_span: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub psnr_cap: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub identity_threshold: f64,
    pub predictor: RegressorConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            psnr_cap: 99.0,
            ssim_window: 7,
            ssim_sigma: 1.5,
            identity_threshold: 0.9,
            predictor: RegressorConfig { max_val_mae: 0.05, ..RegressorConfig::default() },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!("unsupported config version {}", self.version));
        }
        for (name, r) in [
            ("shape", self.scene.ranges.shape),
            ("expression", self.scene.ranges.expression),
            ("displacement", self.scene.ranges.displacement),
            ("albedo", self.scene.ranges.albedo),
            ("light", self.scene.ranges.light),
            ("fov", self.scene.ranges.fov),
            ("distance", self.scene.ranges.distance),
            ("yaw", self.scene.ranges.yaw),
            ("pitch", self.scene.ranges.pitch),
            ("roll", self.scene.ranges.roll),
        ] {
            if !(r[0] < r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return fail(format!("range `{name}` must satisfy lo < hi"));
            }
        }
        let pi = std::f64::consts::PI;
        for r in [self.scene.ranges.yaw, self.scene.ranges.pitch, self.scene.ranges.roll] {
            if r[0] < -pi || r[1] > pi {
                return fail("pose ranges must lie in [-pi, pi]".into());
            }
        }
        if ![32, 64, 128].contains(&self.scene.resolution) {
            return fail("scene.resolution must be 32, 64 or 128".into());
        }
        let g = &self.generator;
        if g.output_resolution % g.nerf_resolution != 0
            || !(g.output_resolution / g.nerf_resolution).is_power_of_two()
            || g.output_resolution < 2 * g.nerf_resolution
        {
            return fail("generator output resolution must be a power-of-two multiple of the NeRF resolution".into());
        }
        if g.d_w < crate::scene::D_GEO.max(crate::scene::D_TEX) {
            return fail(format!("generator.d_w must be at least {}", crate::scene::D_GEO));
        }
        if g.d_d < 5 {
            return fail("generator.d_d must be at least 5 (camera parameters)".into());
        }
        if self.encoder.geo_layers < 2 || self.encoder.tex_layers < 2 || self.encoder.cam_layers < 2 {
            return fail("mapping networks need at least two layers".into());
        }
        for (k, _) in &self.flow.routing {
            if !crate::scene::ATTRIBUTE_NAMES.contains(&k.as_str()) {
                return fail(format!("routing names unknown attribute `{k}`"));
            }
        }
        if !(self.flow.t0 < self.flow.t1) || self.flow.steps == 0 {
            return fail("flow requires t0 < t1 and steps > 0".into());
        }
        if !(0.0..=1.0).contains(&self.video.smoothing_weight) {
            return fail("video.smoothing_weight must lie in [0, 1]".into());
        }
        for w in [self.inversion.lambda_style, self.inversion.lambda_view, self.inversion.lambda_adv] {
            if w < 0.0 {
                return fail("loss weights must be nonnegative".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Derived seed for one pipeline stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(stage.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}
