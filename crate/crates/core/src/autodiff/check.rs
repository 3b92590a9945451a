//! Central finite-difference validation of tape gradients.

use super::tape::{Tape, Var};
use crate::array::Array;

/// Gradient magnitudes below this are compared in absolute rather than
/// relative terms.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub index: usize,
    /// `max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf, FD_SCALE_FLOOR)`
    /// over the entries that were not flagged.
    pub max_rel_err: f64,
    /// Entries whose perturbations crossed a log-floor clamp; excluded from the error.
    pub non_smooth: Vec<usize>,
    pub non_finite: bool,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub params: Vec<ParamReport>,
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn non_smooth_count(&self) -> usize {
        self.params.iter().map(|p| p.non_smooth.len()).sum()
    }
}

fn evaluate<F>(f: &F, params: &[Array]) -> (f64, usize)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars);
    (tape.value(out).item(), tape.clamp_events())
}

/// Compare reverse-mode gradients of the scalar graph built by `f` against
/// central differences `(f(p+h) - f(p-h)) / 2h`, entry by entry.
///
/// `f` must be deterministic: any randomness it uses has to be replayed
/// from a fixed seed on every call.
pub fn finite_diff_check<F>(f: F, params: &[Array], h: f64, tol: f64) -> FdReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars);
    let base_value = tape.value(out).item();
    let base_clamps = tape.clamp_events();
    let analytic: Vec<Array> = match tape.backward(out) {
        Ok(()) => vars.iter().map(|&v| tape.grad_of(v)).collect(),
        Err(_) => params
            .iter()
            .map(|p| Array::full(p.shape(), f64::NAN))
            .collect(),
    };

    let mut work: Vec<Array> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (pi, param) in params.iter().enumerate() {
        let mut numeric = vec![0.0; param.len()];
        let mut non_smooth = Vec::new();
        let mut non_finite = !base_value.is_finite() || !analytic[pi].all_finite();
        for k in 0..param.len() {
            let orig = param.data()[k];
            work[pi].data_mut()[k] = orig + h;
            let (fp, cp) = evaluate(&f, &work);
            work[pi].data_mut()[k] = orig - h;
            let (fm, cm) = evaluate(&f, &work);
            work[pi].data_mut()[k] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                non_finite = true;
            }
            if cp != cm || cp != base_clamps {
                non_smooth.push(k);
            }
            numeric[k] = (fp - fm) / (2.0 * h);
        }
        let a = analytic[pi].data();
        let scale = non_smooth_filtered(a, &non_smooth)
            .chain(non_smooth_filtered(&numeric, &non_smooth))
            .fold(FD_SCALE_FLOOR, |m, x| m.max(x.abs()));
        let mut max_rel_err = 0.0f64;
        for k in 0..param.len() {
            if non_smooth.binary_search(&k).is_ok() {
                continue;
            }
            let e = (a[k] - numeric[k]).abs() / scale;
            max_rel_err = if e.is_nan() {
                f64::INFINITY
            } else {
                max_rel_err.max(e)
            };
        }
        let pass = !non_finite && max_rel_err < tol;
        reports.push(ParamReport {
            index: pi,
            max_rel_err,
            non_smooth,
            non_finite,
            pass,
        });
    }
    FdReport {
        params: reports,
        tol,
    }
}

fn non_smooth_filtered<'a>(xs: &'a [f64], skip: &'a [usize]) -> impl Iterator<Item = f64> + 'a {
    xs.iter()
        .enumerate()
        .filter(move |(k, _)| skip.binary_search(k).is_err())
        .map(|(_, &x)| x)
}
