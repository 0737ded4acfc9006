//! Encoder training against the frozen generator: latent adversarial loss,
//! reconstruction objective and the anti-collapse variance monitor.

mod losses;
mod train;

pub use losses::{
    adv_losses_from_logits, perceptual_distance, rec_loss, variance_ratio, CodePreds, CodeTargets,
    LatentDiscriminator, LossWeights, RecLoss,
};
pub use train::{encoded_rows, encoder_meta, fit_encoder, new_encoder, train_encoder, InversionData, InversionReport, StepLosses, TrainOptions};
