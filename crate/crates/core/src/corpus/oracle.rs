//! The oracle judge, a classifier that never sees the shortcut channel, and
//! the artifact-energy meter for that channel.

use std::io::{Read, Write};

use super::{Corpus, Sample};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::model::{RmDims, RmParams};
use crate::optim::AdamConfig;
use crate::regularization::{RegFlags, SerConfig};
use crate::rng::Rng;
use crate::train::{accuracy_with, fit_rm, FitConfig};

/// Mean squared value of the shortcut channel (the last dimension).
pub fn artifact_energy(feats: &FeatureSequence) -> f64 {
    let ch = feats.channel(feats.dim() - 1);
    ch.iter().map(|x| x * x).sum::<f64>() / ch.len() as f64
}

/// Mean artifact energy over a corpus: the natural reference level.
pub fn natural_band(corpus: &Corpus) -> f64 {
    corpus
        .samples
        .iter()
        .map(|s| artifact_energy(&s.feats))
        .sum::<f64>()
        / corpus.len().max(1) as f64
}

/// Copy of the genuine dimensions `0..D-1`.
pub fn genuine_part(feats: &FeatureSequence) -> FeatureSequence {
    let (l, d) = feats.frames().dims2();
    let mut data = Vec::with_capacity(l * (d - 1));
    for t in 0..l {
        data.extend_from_slice(&feats.frame(t)[..d - 1]);
    }
    FeatureSequence::new(Array::new(&[l, d - 1], data))
        .expect("a slice of a valid sequence is valid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleJudge {
    /// Feature dim of the corpora it judges (one more than the model sees).
    pub dim: usize,
    pub params: RmParams,
}

impl OracleJudge {
    pub fn logits(&self, feats: &FeatureSequence) -> Result<Vec<f64>> {
        if feats.dim() != self.dim {
            return Err(crate::error::invalid(format!(
                "oracle expects dim {}, got {}",
                self.dim,
                feats.dim()
            )));
        }
        self.params.logits(&genuine_part(feats))
    }

    pub fn predict(&self, feats: &FeatureSequence) -> Result<usize> {
        Ok(crate::array::argmax(&self.logits(feats)?))
    }

    pub fn accuracy(&self, data: &[Sample]) -> Result<f64> {
        accuracy_with(data, |s| self.predict(&s.feats))
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        self.params.save(w)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let params = RmParams::load(r)?;
        Ok(OracleJudge {
            dim: params.dims.feat + 1,
            params,
        })
    }
}

#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub max_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub eval_every: usize,
    /// Training stops once held-out accuracy reaches this.
    pub stop_accuracy: f64,
    /// Below this at the end of training the oracle is rejected.
    pub min_accuracy: f64,
    pub hidden: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_steps: 2000,
            batch: 16,
            lr: 3e-3,
            eval_every: 50,
            stop_accuracy: 0.97,
            min_accuracy: 0.9,
            hidden: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub steps: usize,
    pub heldout_accuracy: f64,
    /// `(step, held-out accuracy)` at each evaluation.
    pub curve: Vec<(usize, f64)>,
}

/// Train the oracle on the genuine dimensions of `train`, evaluating on
/// `heldout`. Fails if held-out accuracy stays below `cfg.min_accuracy`.
pub fn train_oracle(
    train: &Corpus,
    heldout: &Corpus,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<(OracleJudge, OracleReport)> {
    let classes = train
        .samples
        .iter()
        .map(|s| s.label)
        .max()
        .map_or(0, |m| m + 1)
        .max(2);
    let dims = RmDims {
        feat: train.dim - 1,
        hidden: cfg.hidden,
        classes,
    };
    let mut params = RmParams::init(seed, dims)?;
    let view = |c: &Corpus| -> Vec<Sample> {
        c.samples
            .iter()
            .map(|s| Sample {
                feats: genuine_part(&s.feats),
                label: s.label,
            })
            .collect()
    };
    let (train_g, held_g) = (view(train), view(heldout));
    let fit = FitConfig {
        steps: cfg.max_steps,
        batch: cfg.batch,
        adam: AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        clip: 5.0,
        lr_final: 1.0,
        ser: SerConfig {
            classes,
            flags: RegFlags::NONE,
            ..SerConfig::default()
        },
    };
    let mut rng = Rng::new(seed, 0x4f52_4143_4c45);
    let mut curve = Vec::new();
    let mut last = (0, 0.0);
    let mut eval_err = None;
    fit_rm(&mut params, &train_g, &fit, &mut rng, |st, p| {
        if st.step % cfg.eval_every != 0 && st.step != cfg.max_steps {
            return true;
        }
        match accuracy_with(&held_g, |s| p.predict(&s.feats)) {
            Ok(acc) => {
                curve.push((st.step, acc));
                last = (st.step, acc);
                acc < cfg.stop_accuracy
            }
            Err(e) => {
                eval_err = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    let report = OracleReport {
        steps: last.0,
        heldout_accuracy: last.1,
        curve,
    };
    if report.heldout_accuracy < cfg.min_accuracy {
        return Err(Error::Calibration(format!(
            "oracle reached only {:.3} held-out accuracy after {} steps (need {})",
            report.heldout_accuracy, report.steps, cfg.min_accuracy
        )));
    }
    Ok((
        OracleJudge {
            dim: train.dim,
            params,
        },
        report,
    ))
}
