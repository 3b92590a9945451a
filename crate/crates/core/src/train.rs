//! Reward-model training loop and evaluation.

use crate::autodiff::{Tape, Var};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::model::{ParamSet, RmParams};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::regularization::{ser_loss, SerConfig, SerDiagnostics};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip: f64,
    /// Learning rate at the last step as a fraction of `adam.lr`, reached linearly.
    pub lr_final: f64,
    pub ser: SerConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 300,
            batch: 8,
            adam: AdamConfig::default(),
            clip: 5.0,
            lr_final: 1.0,
            ser: SerConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepStats {
    pub step: usize,
    pub diag: SerDiagnostics,
    pub grad_norm: f64,
}

/// Draws minibatches by walking shuffled epochs.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    pub fn new(n: usize) -> Self {
        Batcher {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// One optimizer step of the regularized objective on `batch`.
pub fn rm_step(
    params: &mut RmParams,
    opt: &mut Adam,
    batch: &[&Sample],
    cfg: &FitConfig,
    rng: &mut Rng,
) -> Result<(SerDiagnostics, f64)> {
    let mut tape = Tape::new();
    let rm = params.bind(&mut tape, true);
    let feats: Vec<Var> = batch
        .iter()
        .map(|s| tape.constant(s.feats.frames().clone()))
        .collect();
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let out = ser_loss(&mut tape, &rm, &feats, &labels, &cfg.ser, rng, None)?;
    let diag = out.diagnostics(&tape);
    if !diag.loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss became {}",
            diag.loss
        )));
    }
    let mut grads = tape.gradients(out.loss, rm.all())?;
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::NonFinite("non-finite reward-model gradient".into()));
    }
    let norm = clip_global_norm(&mut grads, cfg.clip);
    opt.step(&mut params.tensors_mut(), &grads);
    Ok((diag, norm))
}

const BATCH_STREAM: u64 = 0x4241_5443_48;

/// Train `params` for `cfg.steps` steps. `hook` sees every step after the update.
///
/// Minibatch order comes from a substream of `rng`, so runs that differ only in
/// regularization flags see the same batches.
pub fn fit_rm(
    params: &mut RmParams,
    data: &[Sample],
    cfg: &FitConfig,
    rng: &mut Rng,
    mut hook: impl FnMut(&StepStats, &RmParams) -> bool,
) -> Result<()> {
    if data.len() < 2 {
        return Err(crate::error::invalid("training needs at least 2 samples"));
    }
    let shapes = params.shapes();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut opt = Adam::new(cfg.adam.clone(), &shape_refs);
    let mut batcher = Batcher::new(data.len());
    let mut batch_rng = rng.substream(BATCH_STREAM);
    for step in 1..=cfg.steps {
        let frac = if cfg.steps > 1 {
            (step - 1) as f64 / (cfg.steps - 1) as f64
        } else {
            0.0
        };
        opt.config.lr = cfg.adam.lr * (1.0 - (1.0 - cfg.lr_final) * frac);
        let idx = batcher.next(cfg.batch.max(2), &mut batch_rng);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &data[i]).collect();
        let (diag, grad_norm) = rm_step(params, &mut opt, &batch, cfg, rng)?;
        if !hook(
            &StepStats {
                step,
                diag,
                grad_norm,
            },
            params,
        ) {
            break;
        }
    }
    Ok(())
}

/// Fraction of samples whose argmax logit matches the label.
pub fn accuracy(params: &RmParams, data: &[Sample]) -> Result<f64> {
    accuracy_with(data, |s| params.predict(&s.feats))
}

pub fn accuracy_with(
    data: &[Sample],
    mut predict: impl FnMut(&Sample) -> Result<usize>,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for s in data {
        if predict(s)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
