use super::{decode, PolicyParams};
use crate::autodiff::Tape;
use crate::corpus::{artifact_energy, OracleJudge};
use crate::error::{invalid, Result};
use crate::features::FeatureSequence;
use crate::model::RmParams;
use crate::regularization::{ls_loss, smooth_class};
use crate::rng::Rng;

/// Reward-model score, oracle agreement and shortcut-channel activity of a
/// policy's hard rollouts. Hacking shows up as high reward together with low
/// oracle accuracy and artifact energy above the natural level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HackingReport {
    pub rollouts: usize,
    /// Mean `-L_LS` of the reward model on the rollouts.
    pub mean_reward: f64,
    /// Fraction of rollouts the oracle assigns to their conditioning class.
    pub oracle_accuracy: f64,
    pub artifact_energy: f64,
}

/// Score `n_rollouts` hard (argmax one-hot) rollouts of `steps` tokens, with
/// conditions cycling over the classes.
pub fn hacking_gap(
    policy: &PolicyParams,
    rm: &RmParams,
    oracle: &OracleJudge,
    n_rollouts: usize,
    steps: usize,
    eps_ls: f64,
    rng: &mut Rng,
) -> Result<HackingReport> {
    if n_rollouts == 0 {
        return Err(invalid("hacking gap needs at least one rollout"));
    }
    let classes = policy.dims.classes;
    let (mut reward, mut hits, mut energy) = (0.0, 0usize, 0.0);
    for i in 0..n_rollouts {
        let target = i % classes;
        let mut tape = Tape::new();
        let pv = policy.bind(&mut tape, false);
        let traj = pv.rollout(&mut tape, target, steps, 1.0, true, rng)?;
        let f = decode(&mut tape, &traj, pv.codebook())?;
        let frames = FeatureSequence::new(tape.value(f).clone())?;
        let rmv = rm.bind(&mut tape, false);
        let logits = rmv.forward(&mut tape, f)?;
        let loss = ls_loss(&mut tape, logits, &smooth_class(classes, target, eps_ls)?);
        reward -= tape.value(loss).item();
        if oracle.predict(&frames)? == target {
            hits += 1;
        }
        energy += artifact_energy(&frames);
    }
    let n = n_rollouts as f64;
    Ok(HackingReport {
        rollouts: n_rollouts,
        mean_reward: reward / n,
        oracle_accuracy: hits as f64 / n,
        artifact_energy: energy / n,
    })
}
