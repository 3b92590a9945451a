//! Mixed label-smoothing loss and the combined clean + adversarial objective.

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::model::RmVars;
use crate::rng::Rng;

use super::eam::{mix_on_tape, plan_mix, EamConfig, MixAudit};
use super::fgm::{apply_deltas, fgm_perturb, AdvConfig};
use super::smoothing::{ls_loss, smooth_class, SoftLabel};

/// Which regularizers are active. Each level requires the one before it:
/// `eam` needs `ls`, `adv` needs `eam`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegFlags {
    pub ls: bool,
    pub eam: bool,
    pub adv: bool,
}

impl RegFlags {
    pub const NONE: RegFlags = RegFlags {
        ls: false,
        eam: false,
        adv: false,
    };
    pub const LS: RegFlags = RegFlags {
        ls: true,
        eam: false,
        adv: false,
    };
    pub const LS_EAM: RegFlags = RegFlags {
        ls: true,
        eam: true,
        adv: false,
    };
    pub const FULL: RegFlags = RegFlags {
        ls: true,
        eam: true,
        adv: true,
    };

    /// The four nested settings, weakest first.
    pub const LADDER: [RegFlags; 4] = [Self::NONE, Self::LS, Self::LS_EAM, Self::FULL];

    pub fn validate(&self) -> Result<()> {
        if self.eam && !self.ls {
            return Err(invalid("EAM requires label smoothing (--eam needs --ls)"));
        }
        if self.adv && !self.eam {
            return Err(invalid(
                "adversarial training requires EAM (--adv needs --eam)",
            ));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match (self.ls, self.eam, self.adv) {
            (false, false, false) => "baseline",
            (true, false, false) => "+ls",
            (true, true, false) => "+ls+eam",
            (true, true, true) => "+ls+eam+adv",
            _ => "invalid",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SerConfig {
    pub classes: usize,
    pub eps_ls: f64,
    pub eam: EamConfig,
    pub adv: AdvConfig,
    pub flags: RegFlags,
}

impl Default for SerConfig {
    fn default() -> Self {
        SerConfig {
            classes: 5,
            eps_ls: 0.1,
            eam: EamConfig::default(),
            adv: AdvConfig::default(),
            flags: RegFlags::FULL,
        }
    }
}

impl SerConfig {
    /// Smoothing actually applied: `eps_ls` with `ls` on, zero otherwise.
    pub fn effective_eps(&self) -> f64 {
        if self.flags.ls {
            self.eps_ls
        } else {
            0.0
        }
    }
}

/// `(1/B) sum_i [(1 - lambda_i) L_LS(y_i, own_i) + lambda_i L_LS(y_i, paired_i)]`.
pub fn emo_loss(
    tape: &mut Tape,
    logits: &[Var],
    own: &[SoftLabel],
    paired: &[SoftLabel],
    lambdas: &[f64],
) -> Result<Var> {
    let b = logits.len();
    if b == 0 || own.len() != b || paired.len() != b || lambdas.len() != b {
        return Err(invalid(format!(
            "emo_loss length mismatch: {} logits, {} labels, {} paired, {} lambdas",
            b,
            own.len(),
            paired.len(),
            lambdas.len()
        )));
    }
    let mut terms = Vec::with_capacity(b);
    for i in 0..b {
        let lam = lambdas[i];
        let own_loss = ls_loss(tape, logits[i], &own[i]);
        let term = if lam == 0.0 {
            own_loss
        } else {
            let a = tape.scale(own_loss, 1.0 - lam);
            let paired_loss = ls_loss(tape, logits[i], &paired[i]);
            let p = tape.scale(paired_loss, lam);
            tape.add(a, p)
        };
        terms.push(term);
    }
    let total = tape.add_all(&terms);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Tape handles and scalar diagnostics from one evaluation of the objective.
#[derive(Clone, Debug)]
pub struct SerOutput {
    pub loss: Var,
    pub emo: Var,
    pub adv: Option<Var>,
    pub lambdas: Vec<f64>,
    pub audit: Vec<MixAudit>,
    /// FGM shifts used for the adversarial pass (empty when `adv` is off).
    pub deltas: Vec<Array>,
    pub logits: Vec<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SerDiagnostics {
    pub loss: f64,
    pub emo: f64,
    pub adv: f64,
    pub mean_lambda: f64,
}

impl SerOutput {
    pub fn diagnostics(&self, tape: &Tape) -> SerDiagnostics {
        let n = self.lambdas.len().max(1) as f64;
        SerDiagnostics {
            loss: tape.value(self.loss).item(),
            emo: tape.value(self.emo).item(),
            adv: self.adv.map_or(0.0, |a| tape.value(a).item()),
            mean_lambda: self.lambdas.iter().sum::<f64>() / n,
        }
    }
}

/// `L_emo + alpha * L_adv`.
pub fn combine(tape: &mut Tape, emo: Var, adv: Var, alpha: f64) -> Var {
    let weighted = tape.scale(adv, alpha);
    tape.add(emo, weighted)
}

/// The hybrid-regularized objective `L_ser = L_emo + alpha * L_adv`.
///
/// Pipeline: mixup on the input features, encode, classify, `L_emo`; then the
/// gradient of `L_emo` with respect to each frame-level embedding gives the
/// FGM shift, the shifted embeddings go through pooling and the head only, and
/// `L_adv` reuses the same coefficients and paired labels. Everything stays on
/// `tape`, so one `backward(loss)` yields parameter gradients.
///
/// `pinned_deltas` replaces the FGM shifts, which lets a finite-difference
/// check hold them fixed while parameters move.
pub fn ser_loss(
    tape: &mut Tape,
    rm: &RmVars,
    feats: &[Var],
    labels: &[usize],
    cfg: &SerConfig,
    rng: &mut Rng,
    pinned_deltas: Option<&[Array]>,
) -> Result<SerOutput> {
    cfg.flags.validate()?;
    let b = feats.len();
    if b < 2 {
        return Err(invalid(format!(
            "the regularized objective needs a batch of at least 2, got {b}"
        )));
    }
    if labels.len() != b {
        return Err(invalid(format!(
            "{b} sequences but {} labels",
            labels.len()
        )));
    }
    let eps = cfg.effective_eps();
    let own: Vec<SoftLabel> = labels
        .iter()
        .map(|&y| smooth_class(cfg.classes, y, eps))
        .collect::<Result<_>>()?;

    let (inputs, lambdas, paired, audit) = if cfg.flags.eam {
        let lengths: Vec<usize> = feats.iter().map(|&f| tape.shape(f)[0]).collect();
        let plan = plan_mix(&lengths, &cfg.eam, rng)?;
        let mixes = mix_on_tape(tape, feats, &plan, &cfg.eam);
        let paired = mixes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if m.audit.skipped {
                    Ok(own[i].clone())
                } else {
                    smooth_class(cfg.classes, labels[m.audit.partner], eps)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        (
            mixes.iter().map(|m| m.mixed).collect::<Vec<_>>(),
            mixes.iter().map(|m| m.lambda).collect::<Vec<_>>(),
            paired,
            mixes.into_iter().map(|m| m.audit).collect::<Vec<_>>(),
        )
    } else {
        (feats.to_vec(), vec![0.0; b], own.clone(), Vec::new())
    };

    let mut hs = Vec::with_capacity(b);
    let mut logits = Vec::with_capacity(b);
    for &x in &inputs {
        let h = rm.encode(tape, x)?;
        logits.push(rm.classify(tape, h));
        hs.push(h);
    }
    let emo = emo_loss(tape, &logits, &own, &paired, &lambdas)?;

    if !cfg.flags.adv {
        return Ok(SerOutput {
            loss: emo,
            emo,
            adv: None,
            lambdas,
            audit,
            deltas: Vec::new(),
            logits,
        });
    }

    let (h_adv, deltas) = match pinned_deltas {
        Some(d) => {
            if d.len() != b {
                return Err(invalid(format!(
                    "{} pinned deltas for a batch of {b}",
                    d.len()
                )));
            }
            (apply_deltas(tape, &hs, d), d.to_vec())
        }
        None => {
            let grads = tape.gradients(emo, &hs)?;
            fgm_perturb(tape, &hs, &grads, cfg.adv.eps_adv)
        }
    };
    let adv_logits: Vec<Var> = h_adv.iter().map(|&h| rm.classify(tape, h)).collect();
    let adv = emo_loss(tape, &adv_logits, &own, &paired, &lambdas)?;
    let loss = combine(tape, emo, adv, cfg.adv.alpha);
    Ok(SerOutput {
        loss,
        emo,
        adv: Some(adv),
        lambdas,
        audit,
        deltas,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_logits(tape: &mut Tape, rows: &[[f64; 3]]) -> Vec<Var> {
        rows.iter().map(|r| tape.constant(Array::row(r))).collect()
    }

    #[test]
    fn flag_lattice() {
        for f in RegFlags::LADDER {
            assert!(f.validate().is_ok());
        }
        assert!(RegFlags {
            ls: false,
            eam: true,
            adv: false
        }
        .validate()
        .is_err());
        assert!(RegFlags {
            ls: true,
            eam: false,
            adv: true
        }
        .validate()
        .is_err());
        assert!(RegFlags {
            ls: false,
            eam: false,
            adv: true
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_lambda_is_plain_mean() {
        let mut t = Tape::new();
        let logits = const_logits(&mut t, &[[0.3, -1.0, 2.0], [1.0, 0.0, 0.5]]);
        let own = vec![
            smooth_class(3, 2, 0.1).unwrap(),
            smooth_class(3, 0, 0.1).unwrap(),
        ];
        let paired = vec![
            smooth_class(3, 0, 0.1).unwrap(),
            smooth_class(3, 1, 0.1).unwrap(),
        ];
        let e = emo_loss(&mut t, &logits, &own, &paired, &[0.0, 0.0]).unwrap();
        let a = ls_loss(&mut t, logits[0], &own[0]);
        let b = ls_loss(&mut t, logits[1], &own[1]);
        let expect = (t.value(a).item() + t.value(b).item()) / 2.0;
        assert_eq!(t.value(e).item(), expect);
    }

    #[test]
    fn unit_lambda_is_paired_loss() {
        let mut t = Tape::new();
        let logits = const_logits(&mut t, &[[0.3, -1.0, 2.0]]);
        let own = vec![smooth_class(3, 2, 0.1).unwrap()];
        let paired = vec![smooth_class(3, 0, 0.1).unwrap()];
        let e = emo_loss(&mut t, &logits, &own, &paired, &[1.0]).unwrap();
        let p = ls_loss(&mut t, logits[0], &paired[0]);
        assert_eq!(t.value(e).item(), t.value(p).item());
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut t = Tape::new();
        let logits = const_logits(&mut t, &[[0.0; 3], [0.0; 3]]);
        let own = vec![smooth_class(3, 0, 0.0).unwrap()];
        assert!(emo_loss(&mut t, &logits, &own, &own, &[0.0, 0.0]).is_err());
    }
}
