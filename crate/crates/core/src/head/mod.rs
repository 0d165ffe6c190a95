//! The trainable head: classifier over the fused concept bottleneck, the
//! three-term loss, AdamW and the training loop, plus the last-layer
//! baseline and JSON checkpoints.

mod checkpoint;
mod config;
mod forward;
mod loss;
mod optim;
mod params;
mod train;
mod verify;

pub use checkpoint::Checkpoint;
pub use config::{Mode, TrainConfig};
pub use forward::{
    argmax, attach_loss, baseline_forward, encode_samples, encode_tokens, hard_sparsity, head_forward, infer,
    trainable, EncodedSample, Encoder, HeadVars, Inference, LossVars, ParamVars,
};
pub use loss::{classify, concept_loss, sparse_loss_surrogate, total_loss};
pub use optim::{AdamW, Slot};
pub use params::{HeadParams, INITIAL_TAU, PARAM_NAMES};
pub use train::{
    batch_pass, fit, fit_encoded, fit_from, sample_pass, EpochReport, SamplePass, TrainReport, TrainingSet,
};
pub use verify::{gradient_check, GradCheckOptions};
