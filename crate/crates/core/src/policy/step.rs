use super::codebook::{project_codebook, tokenize, MAX_CODEBOOK_NORM};
use super::reward::{reward, RewardSpec};
use super::{decode, PolicyParams};
use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::corpus::{artifact_energy, Sample};
use crate::error::{invalid, Result};
use crate::features::FeatureSequence;
use crate::model::{ParamSet, RmParams};
use crate::optim::{clip_global_norm, Adam};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct RrpoConfig {
    /// Rollouts per step.
    pub batch: usize,
    /// Tokens per rollout.
    pub steps: usize,
    pub temp: f64,
    pub straight_through: bool,
    /// Global gradient-norm clip; `0` disables it.
    pub clip: f64,
    pub train_codebook: bool,
}

impl Default for RrpoConfig {
    fn default() -> Self {
        RrpoConfig {
            batch: 8,
            steps: 24,
            temp: 1.0,
            straight_through: true,
            clip: 5.0,
            train_codebook: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub reward: f64,
    pub grad_norm: f64,
    /// Mean artifact energy of this step's decoded rollouts.
    pub artifact_energy: f64,
    /// Set when the gradient was non-finite and no update was made.
    pub skipped: bool,
}

/// Index of the codebook in `PolicyParams::tensors_mut`.
pub const CODEBOOK: usize = 7;

/// One policy update: sample a batch of rollouts with random targets, decode,
/// score with the frozen reward model and ascend the reward gradient.
pub fn rrpo_step(
    policy: &mut PolicyParams,
    rm: &RmParams,
    spec: &RewardSpec,
    opt: &mut Adam,
    cfg: &RrpoConfig,
    rng: &mut Rng,
) -> Result<StepReport> {
    if cfg.batch == 0 {
        return Err(invalid("rollout batch must be positive"));
    }
    let mut tape = Tape::new();
    let pv = policy.bind(&mut tape, true);
    let rmv = rm.bind(&mut tape, false);
    let mut frames = Vec::with_capacity(cfg.batch);
    let mut targets = Vec::with_capacity(cfg.batch);
    let mut energy = 0.0;
    for _ in 0..cfg.batch {
        let target = rng.below(policy.dims.classes);
        let traj = pv.rollout(
            &mut tape,
            target,
            cfg.steps,
            cfg.temp,
            cfg.straight_through,
            rng,
        )?;
        let f = decode(&mut tape, &traj, pv.codebook())?;
        energy += artifact_energy(&FeatureSequence::new(tape.value(f).clone())?);
        frames.push(f);
        targets.push(target);
    }
    let r = reward(&mut tape, &rmv, &frames, &targets, spec, rng)?;
    let value = tape.value(r).item();
    let neg = tape.scale(r, -1.0);
    let mut grads = tape.gradients(neg, pv.all())?;
    if !cfg.train_codebook {
        grads[CODEBOOK].fill(0.0);
    }
    let artifact_energy = energy / cfg.batch as f64;
    if !value.is_finite() || grads.iter().any(|g| !g.all_finite()) {
        return Ok(StepReport {
            reward: value,
            grad_norm: f64::NAN,
            artifact_energy,
            skipped: true,
        });
    }
    let grad_norm = clip_global_norm(&mut grads, cfg.clip);
    opt.step(&mut policy.tensors_mut(), &grads);
    project_codebook(&mut policy.codebook, MAX_CODEBOOK_NORM);
    Ok(StepReport {
        reward: value,
        grad_norm,
        artifact_energy,
        skipped: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SftReport {
    pub loss: f64,
    pub grad_norm: f64,
}

/// One teacher-forced step on corpus utterances tokenized against the
/// policy's codebook, conditioned on their labels. The codebook is not updated.
pub fn sft_step(
    policy: &mut PolicyParams,
    opt: &mut Adam,
    batch: &[&Sample],
    clip: f64,
) -> Result<SftReport> {
    if batch.is_empty() {
        return Err(invalid("empty SFT batch"));
    }
    let mut tape = Tape::new();
    let pv = policy.bind(&mut tape, true);
    let mut losses: Vec<Var> = Vec::with_capacity(batch.len());
    for s in batch {
        let toks = tokenize(&s.feats, &policy.codebook);
        losses.push(pv.sequence_nll(&mut tape, s.label, &toks)?);
    }
    let total = tape.add_all(&losses);
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    let value = tape.value(loss).item();
    let mut grads = tape.gradients(loss, pv.all())?;
    grads[CODEBOOK] = Array::zeros(policy.codebook.shape());
    if !value.is_finite() || grads.iter().any(|g| !g.all_finite()) {
        return Err(crate::error::Error::NonFinite(format!("SFT loss {value}")));
    }
    let grad_norm = clip_global_norm(&mut grads, clip);
    opt.step(&mut policy.tensors_mut(), &grads);
    Ok(SftReport {
        loss: value,
        grad_norm,
    })
}

/// An optimizer sized for `policy`.
pub fn policy_optimizer(policy: &PolicyParams, config: crate::optim::AdamConfig) -> Adam {
    let shapes = policy.shapes();
    let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    Adam::new(config, &refs)
}
