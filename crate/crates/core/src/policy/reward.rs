use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::model::RmVars;
use crate::regularization::{ls_loss, ser_loss, smooth_class, SerConfig};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    /// `R = -L_LS(rm(frames), smooth(target))` per rollout.
    PlainLs,
    /// `R = -L_ser` over the whole rollout batch, mixup and FGM included.
    BatchSer,
}

impl RewardMode {
    pub fn name(self) -> &'static str {
        match self {
            RewardMode::PlainLs => "plain-ls",
            RewardMode::BatchSer => "batch-ser",
        }
    }

    pub fn parse(s: &str) -> Option<RewardMode> {
        [RewardMode::PlainLs, RewardMode::BatchSer]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardSpec {
    pub mode: RewardMode,
    /// Smoothing of the target label. The objective settings in `ser` are
    /// used only by `BatchSer`.
    pub eps_ls: f64,
    pub ser: SerConfig,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            mode: RewardMode::PlainLs,
            eps_ls: 0.1,
            ser: SerConfig::default(),
        }
    }
}

/// Mean reward of decoded rollouts `frames` for their `targets` under a
/// reward model bound to `tape` (bind it as constants to keep it frozen).
pub fn reward(
    tape: &mut Tape,
    rm: &RmVars,
    frames: &[Var],
    targets: &[usize],
    spec: &RewardSpec,
    rng: &mut Rng,
) -> Result<Var> {
    if frames.is_empty() || frames.len() != targets.len() {
        return Err(invalid(format!(
            "{} rollouts for {} targets",
            frames.len(),
            targets.len()
        )));
    }
    match spec.mode {
        RewardMode::PlainLs => {
            let mut losses = Vec::with_capacity(frames.len());
            for (&f, &y) in frames.iter().zip(targets) {
                let logits = rm.forward(tape, f)?;
                let target = smooth_class(rm.dims.classes, y, spec.eps_ls)?;
                losses.push(ls_loss(tape, logits, &target));
            }
            let total = tape.add_all(&losses);
            Ok(tape.scale(total, -1.0 / frames.len() as f64))
        }
        RewardMode::BatchSer => {
            if frames.len() < 2 {
                return Err(invalid(
                    "batch-ser reward needs a rollout batch of at least 2",
                ));
            }
            let cfg = SerConfig {
                classes: rm.dims.classes,
                eps_ls: spec.eps_ls,
                ..spec.ser.clone()
            };
            let out = ser_loss(tape, rm, frames, targets, &cfg, rng, None)?;
            Ok(tape.scale(out.loss, -1.0))
        }
    }
}
