//! Hybrid regularization for reward-model fine-tuning: label smoothing,
//! energy-adaptive mixup and FGM adversarial training on the encoder output.

pub mod eam;
pub mod fgm;
pub mod objective;
pub mod smoothing;

pub use eam::{
    eam_mix, mix_on_tape, mix_pair, mix_with_plan, plan_mix, EamConfig, MixAudit, MixBatch, MixDraw,
};
pub use fgm::{fgm_delta, fgm_perturb, AdvConfig, FGM_GRAD_FLOOR};
pub use objective::{combine, emo_loss, ser_loss, RegFlags, SerConfig, SerDiagnostics, SerOutput};
pub use smoothing::{ls_loss, smooth_class, smooth_label, SoftLabel};
