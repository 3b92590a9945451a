use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};

/// A probability vector over the emotion classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabel {
    probs: Vec<f64>,
}

impl SoftLabel {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn to_array(&self) -> Array {
        Array::row(&self.probs)
    }
}

/// `y'_k = (1 - eps) y_k + eps / K` for a one-hot `y`.
pub fn smooth_label(one_hot: &[f64], eps: f64) -> Result<SoftLabel> {
    if !(0.0..1.0).contains(&eps) {
        return Err(invalid(format!(
            "smoothing eps must lie in [0, 1), got {eps}"
        )));
    }
    let ones = one_hot.iter().filter(|&&v| v == 1.0).count();
    let zeros = one_hot.iter().filter(|&&v| v == 0.0).count();
    if one_hot.is_empty() || ones != 1 || ones + zeros != one_hot.len() {
        return Err(invalid(format!("label is not one-hot: {one_hot:?}")));
    }
    let k = one_hot.len() as f64;
    Ok(SoftLabel {
        probs: one_hot.iter().map(|&y| (1.0 - eps) * y + eps / k).collect(),
    })
}

/// Smoothed label for class index `class` out of `classes`.
pub fn smooth_class(classes: usize, class: usize, eps: f64) -> Result<SoftLabel> {
    if class >= classes {
        return Err(invalid(format!(
            "class {class} out of range for {classes} classes"
        )));
    }
    let mut y = vec![0.0; classes];
    y[class] = 1.0;
    smooth_label(&y, eps)
}

/// Soft-target cross-entropy `-sum_k t_k log softmax(logits)_k` on the tape.
///
/// Log-probabilities are `z - m - log sum exp(z - m)` with `m = max z` held
/// constant, so the log never sees an argument below 1.
pub fn ls_loss(tape: &mut Tape, logits: Var, target: &SoftLabel) -> Var {
    let m = tape
        .value(logits)
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.offset(logits, -m);
    let e = tape.exp(shifted);
    let z = tape.sum(e);
    let lse = tape.log(z);
    let logp = tape.sub(shifted, lse);
    let t = tape.constant(Array::new(tape.shape(logits), target.probs.clone()));
    let weighted = tape.mul(logp, t);
    let s = tape.sum(weighted);
    tape.scale(s, -1.0)
}
