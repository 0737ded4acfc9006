//! Portrait-video editing: shared identity coefficients, code smoothing,
//! fixed-code generator fine-tuning and sequence editing.

mod pipeline;
mod sequence;

pub use pipeline::{
    canonicalize, codes_digest, edit_sequence, encode_frames, encode_sequence, extract_frame_irrelevant,
    finetune_generator, mean_psnr, render_frames, run_video, smooth_codes, FinetuneReport, VideoOutput, VideoStages,
};
pub use sequence::{crop_align, toy_video, toy_video_coeffs, FrameCode, FrameSequence, SequenceManifest};
