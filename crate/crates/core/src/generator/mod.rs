//! Style-conditioned NeRF generator: latent prior, volume rendering,
//! pretraining on procedural renders and corpus sampling.

mod corpus;
mod latent;
mod model;
mod pretrain;
mod volume;

pub use corpus::{sample_training_corpus, InversionCorpus};
pub use latent::{camera_from_view, view_code, with_yaw, LatentPrior, MixedDraw};
pub use model::{expand_styles, Generator, GeneratorArch, RenderOutput, TrainMeta, GENERATOR_KIND, GEO_STYLES, N_STYLES};
pub use pretrain::{fid_proxy, pretrain_from_dataset, pretrain_generator, pretrain_meta, render_specs, ImageDiscriminator, PretrainReport};
pub use volume::{composite_weights, volume_render_ray};
