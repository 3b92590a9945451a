//! Energy-adaptive mixup over variable-length feature sequences.
//!
//! For each sample `i` a partner `j` is taken from a random permutation, a
//! segment of `j` is rescaled to sit `r` dB below the energy of the matching
//! segment of `i` and added onto it. The mixing coefficient is
//! `lambda_i = (l_mix / L_i) * E'_j / (E_i + E'_j)`.
//!
//! Random choices are made once by [`plan_mix`]; [`mix_pair`] (plain arrays)
//! and [`mix_on_tape`] (differentiable in the features) both consume a plan.

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::features::FeatureSequence;
use crate::rng::Rng;

use super::smoothing::{smooth_class, SoftLabel};

#[derive(Clone, Debug, PartialEq)]
pub struct EamConfig {
    /// SNR range in dB for the rescaled partner segment.
    pub r_min: f64,
    pub r_max: f64,
    /// Samples whose segment energy is at or below this are not mixed.
    pub energy_floor: f64,
}

impl Default for EamConfig {
    fn default() -> Self {
        EamConfig {
            r_min: 0.0,
            r_max: 10.0,
            energy_floor: 1e-10,
        }
    }
}

impl EamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min <= self.r_max) {
            return Err(invalid(format!(
                "EAM needs r_min <= r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if !(self.energy_floor >= 0.0) {
            return Err(invalid("EAM energy_floor must be non-negative"));
        }
        Ok(())
    }
}

/// The random choices for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MixDraw {
    pub partner: usize,
    pub l_mix: usize,
    pub b_i: usize,
    pub b_j: usize,
    /// SNR in dB.
    pub r: f64,
}

/// Everything that went into one mixed sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MixAudit {
    pub partner: usize,
    pub l_mix: usize,
    pub b_i: usize,
    pub b_j: usize,
    pub e_i: f64,
    pub e_j: f64,
    pub e_j_target: f64,
    pub r: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct MixBatch {
    pub mixed: Vec<FeatureSequence>,
    pub paired_labels: Vec<SoftLabel>,
    pub lambdas: Vec<f64>,
    pub audit: Vec<MixAudit>,
}

/// Draw partners and segment geometry for a batch with the given lengths.
///
/// Draw order per sample is fixed (`l_mix`, `b_i`, `b_j`, `r`) and every draw
/// is consumed even when the sample later turns out to be skipped.
pub fn plan_mix(lengths: &[usize], cfg: &EamConfig, rng: &mut Rng) -> Result<Vec<MixDraw>> {
    cfg.validate()?;
    let b = lengths.len();
    if b < 2 {
        return Err(invalid(format!("EAM needs a batch of at least 2, got {b}")));
    }
    if let Some(l) = lengths.iter().find(|&&l| l < 2) {
        return Err(invalid(format!(
            "EAM needs sequences of length >= 2, got {l}"
        )));
    }
    let perm = rng.permutation(b);
    let mut plan = Vec::with_capacity(b);
    for i in 0..b {
        let mut j = perm[i];
        if j == i {
            j = (i + 1) % b;
        }
        let (li, lj) = (lengths[i], lengths[j]);
        let half = li as f64 / 2.0;
        let u = rng.uniform();
        let mut l_mix = if half <= 1.0 {
            1
        } else {
            (1.0 + (half - 1.0) * u).floor() as usize
        };
        l_mix = l_mix.min(lj);
        let b_i = rng.below(li - l_mix + 1);
        let b_j = rng.below(lj - l_mix + 1);
        let r = rng.uniform_range(cfg.r_min, cfg.r_max);
        plan.push(MixDraw {
            partner: j,
            l_mix,
            b_i,
            b_j,
            r,
        });
    }
    Ok(plan)
}

/// Mean of squares over `len` frames starting at `start`, all dimensions.
pub fn segment_energy(f: &FeatureSequence, start: usize, len: usize) -> f64 {
    let rows = &f.frames().data()[start * f.dim()..(start + len) * f.dim()];
    rows.iter().map(|x| x * x).sum::<f64>() / rows.len() as f64
}

/// `lambda = (l_mix / L_i) * E'_j / (E_i + E'_j)`.
pub fn mixing_coefficient(l_mix: usize, len_i: usize, e_i: f64, e_j_target: f64) -> f64 {
    (l_mix as f64 / len_i as f64) * (e_j_target / (e_i + e_j_target))
}

/// `E'_j = E_i / 10^(r/10)`.
pub fn target_energy(e_i: f64, r_db: f64) -> f64 {
    e_i / 10f64.powf(r_db / 10.0)
}

/// Mix `f_j` into `f_i` according to `draw`. Returns the mixed sequence and `lambda`.
pub fn mix_pair(
    f_i: &FeatureSequence,
    f_j: &FeatureSequence,
    draw: &MixDraw,
    cfg: &EamConfig,
) -> (FeatureSequence, f64, MixAudit) {
    let MixDraw {
        partner,
        l_mix,
        b_i,
        b_j,
        r,
    } = *draw;
    let e_i = segment_energy(f_i, b_i, l_mix);
    let e_j = segment_energy(f_j, b_j, l_mix);
    let e_j_target = target_energy(e_i, r);
    let skipped = e_i <= cfg.energy_floor || e_j <= cfg.energy_floor;
    let audit = MixAudit {
        partner,
        l_mix,
        b_i,
        b_j,
        e_i,
        e_j,
        e_j_target,
        r,
        skipped,
    };
    if skipped {
        return (f_i.clone(), 0.0, audit);
    }
    let scale = (e_j_target / e_j).sqrt();
    let mut out = f_i.frames().clone();
    for t in 0..l_mix {
        let src = f_j.frame(b_j + t);
        for (dst, s) in out.row_slice_mut(b_i + t).iter_mut().zip(src) {
            *dst += scale * s;
        }
    }
    let lambda = mixing_coefficient(l_mix, f_i.len(), e_i, e_j_target);
    (
        FeatureSequence::new(out).expect("mixing finite inputs stays finite"),
        lambda,
        audit,
    )
}

fn check_batch(batch: &[FeatureSequence], labels: &[usize]) -> Result<()> {
    if batch.len() != labels.len() {
        return Err(invalid(format!(
            "{} sequences but {} labels",
            batch.len(),
            labels.len()
        )));
    }
    if let Some(f) = batch.iter().find(|f| f.dim() != batch[0].dim()) {
        return Err(invalid(format!(
            "mixed feature dims {} and {}",
            batch[0].dim(),
            f.dim()
        )));
    }
    Ok(())
}

/// Full batch mixup. Paired labels are the smoothed partner labels, or the
/// sample's own label when it was skipped for low energy.
pub fn eam_mix(
    batch: &[FeatureSequence],
    labels: &[usize],
    classes: usize,
    eps: f64,
    cfg: &EamConfig,
    rng: &mut Rng,
) -> Result<MixBatch> {
    check_batch(batch, labels)?;
    let lengths: Vec<usize> = batch.iter().map(FeatureSequence::len).collect();
    let plan = plan_mix(&lengths, cfg, rng)?;
    mix_with_plan(batch, labels, classes, eps, cfg, &plan)
}

/// [`eam_mix`] with the random choices supplied.
pub fn mix_with_plan(
    batch: &[FeatureSequence],
    labels: &[usize],
    classes: usize,
    eps: f64,
    cfg: &EamConfig,
    plan: &[MixDraw],
) -> Result<MixBatch> {
    check_batch(batch, labels)?;
    let mut out = MixBatch {
        mixed: Vec::new(),
        paired_labels: Vec::new(),
        lambdas: Vec::new(),
        audit: Vec::new(),
    };
    for (i, draw) in plan.iter().enumerate() {
        let (mixed, lambda, audit) = mix_pair(&batch[i], &batch[draw.partner], draw, cfg);
        let paired = if audit.skipped {
            labels[i]
        } else {
            labels[draw.partner]
        };
        out.paired_labels.push(smooth_class(classes, paired, eps)?);
        out.mixed.push(mixed);
        out.lambdas.push(lambda);
        out.audit.push(audit);
    }
    Ok(out)
}

/// One sample mixed on a tape: the value plus what the loss needs to know.
#[derive(Clone, Debug)]
pub struct TapeMix {
    pub mixed: Var,
    pub lambda: f64,
    pub audit: MixAudit,
}

/// Apply `plan` to sequences already on `tape`. Gradients flow into both the
/// host and the partner features, including through the energy rescaling.
pub fn mix_on_tape(
    tape: &mut Tape,
    feats: &[Var],
    plan: &[MixDraw],
    cfg: &EamConfig,
) -> Vec<TapeMix> {
    let energy = |tape: &mut Tape, s: Var| {
        let sq = tape.mul(s, s);
        tape.mean(sq)
    };
    let mut out = Vec::with_capacity(plan.len());
    for (i, draw) in plan.iter().enumerate() {
        let MixDraw {
            partner,
            l_mix,
            b_i,
            b_j,
            r,
        } = *draw;
        let (fi, fj) = (feats[i], feats[partner]);
        let len_i = tape.shape(fi)[0];
        let s_i = tape.slice(fi, 0, b_i, l_mix);
        let s_j = tape.slice(fj, 0, b_j, l_mix);
        let e_i = energy(tape, s_i);
        let e_j = energy(tape, s_j);
        let (ei, ej) = (tape.value(e_i).item(), tape.value(e_j).item());
        let e_j_target = target_energy(ei, r);
        let skipped = ei <= cfg.energy_floor || ej <= cfg.energy_floor;
        let audit = MixAudit {
            partner,
            l_mix,
            b_i,
            b_j,
            e_i: ei,
            e_j: ej,
            e_j_target,
            r,
            skipped,
        };
        if skipped {
            out.push(TapeMix {
                mixed: fi,
                lambda: 0.0,
                audit,
            });
            continue;
        }
        // sqrt(E'_j / E_j) = exp(0.5 (ln E_i - ln E_j) - r ln10 / 20)
        let lei = tape.log(e_i);
        let lej = tape.log(e_j);
        let d = tape.sub(lei, lej);
        let d = tape.scale(d, 0.5);
        let d = tape.offset(d, -r * std::f64::consts::LN_10 / 20.0);
        let scale = tape.exp(d);
        let scaled = tape.mul(s_j, scale);
        let mid = tape.add(s_i, scaled);
        let mut parts = Vec::with_capacity(3);
        if b_i > 0 {
            parts.push(tape.slice(fi, 0, 0, b_i));
        }
        parts.push(mid);
        if b_i + l_mix < len_i {
            parts.push(tape.slice(fi, 0, b_i + l_mix, len_i - b_i - l_mix));
        }
        let mixed = if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat(&parts, 0)
        };
        let lambda = mixing_coefficient(l_mix, len_i, ei, e_j_target);
        out.push(TapeMix {
            mixed,
            lambda,
            audit,
        });
    }
    out
}

/// Convenience for tests and demos: an array copy of a tape mix.
pub fn tape_mix_value(tape: &Tape, m: &TapeMix) -> Array {
    tape.value(m.mixed).clone()
}
