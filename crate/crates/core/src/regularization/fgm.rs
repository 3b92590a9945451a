use crate::array::Array;
use crate::autodiff::{Tape, Var};

/// Gradients with an L2 norm below this produce no perturbation.
pub const FGM_GRAD_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AdvConfig {
    pub eps_adv: f64,
    /// Weight of the adversarial term in the combined loss.
    pub alpha: f64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            eps_adv: 0.5,
            alpha: 0.5,
        }
    }
}

/// `delta = eps_adv * g / ||g||_2`, with the norm over every entry of `g`.
pub fn fgm_delta(grad: &Array, eps_adv: f64) -> Array {
    let n = grad.l2_norm();
    if !(n >= FGM_GRAD_FLOOR) {
        return Array::zeros(grad.shape());
    }
    grad.map(|g| eps_adv * g / n)
}

/// Shift each embedding by its own normalized gradient. The shift enters the
/// tape as a constant; gradients still reach the embedding itself.
pub fn fgm_perturb(
    tape: &mut Tape,
    h_batch: &[Var],
    grads: &[Array],
    eps_adv: f64,
) -> (Vec<Var>, Vec<Array>) {
    let deltas: Vec<Array> = grads.iter().map(|g| fgm_delta(g, eps_adv)).collect();
    let perturbed = apply_deltas(tape, h_batch, &deltas);
    (perturbed, deltas)
}

pub(crate) fn apply_deltas(tape: &mut Tape, h_batch: &[Var], deltas: &[Array]) -> Vec<Var> {
    h_batch
        .iter()
        .zip(deltas)
        .map(|(&h, d)| {
            let dv = tape.constant(d.clone());
            tape.add(h, dv)
        })
        .collect()
}
