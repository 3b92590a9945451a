//! The token policy: a conditioned recurrent cell sampled with Gumbel-Softmax,
//! whose relaxed token rows are decoded into feature frames through a
//! codebook.
//!
//! ```text
//! h_t = tanh(x_t W_x + h_{t-1} W_h + E_cond[c] + b_h)
//! y_t = gumbel_softmax(h_t W_out + b_out)
//! x_{t+1} = y_t E_tok
//! frames = Y C
//! ```

mod codebook;
mod gap;
mod reward;
mod step;

use std::io::{Read, Write};

pub use codebook::{kmeans_codebook, project_codebook, tokenize, MAX_CODEBOOK_NORM};
pub use gap::{hacking_gap, HackingReport};
pub use reward::{reward, RewardMode, RewardSpec};
pub use step::{
    policy_optimizer, rrpo_step, sft_step, RrpoConfig, SftReport, StepReport, CODEBOOK,
};

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{invalid, Error, Result};
use crate::model::ParamSet;
use crate::rng::Rng;

const INIT_STREAM: u64 = 0x504f_4c49_4359;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyDims {
    pub vocab: usize,
    pub embed: usize,
    pub classes: usize,
    /// Feature dim of decoded frames.
    pub feat: usize,
}

impl Default for PolicyDims {
    fn default() -> Self {
        PolicyDims {
            vocab: 32,
            embed: 32,
            classes: 5,
            feat: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub dims: PolicyDims,
    pub tok_emb: Array,
    pub cond_emb: Array,
    pub w_x: Array,
    pub w_h: Array,
    pub b_h: Array,
    pub w_out: Array,
    pub b_out: Array,
    pub codebook: Array,
}

impl ParamSet for PolicyParams {
    fn tensors(&self) -> Vec<&Array> {
        vec![
            &self.tok_emb,
            &self.cond_emb,
            &self.w_x,
            &self.w_h,
            &self.b_h,
            &self.w_out,
            &self.b_out,
            &self.codebook,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array> {
        vec![
            &mut self.tok_emb,
            &mut self.cond_emb,
            &mut self.w_x,
            &mut self.w_h,
            &mut self.b_h,
            &mut self.w_out,
            &mut self.b_out,
            &mut self.codebook,
        ]
    }
}

fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Array {
    Array::new(
        &[rows, cols],
        (0..rows * cols)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect(),
    )
}

impl PolicyParams {
    /// Random network weights around the given `codebook` (`vocab x feat`).
    pub fn init(seed: u64, dims: PolicyDims, codebook: Array) -> Result<Self> {
        let PolicyDims {
            vocab,
            embed,
            classes,
            feat,
        } = dims;
        if vocab < 2 || embed == 0 || classes == 0 || feat == 0 {
            return Err(invalid(format!(
                "policy dims must be positive with vocab >= 2: {dims:?}"
            )));
        }
        if codebook.shape() != [vocab, feat] {
            return Err(invalid(format!(
                "codebook shape {:?}, expected [{vocab}, {feat}]",
                codebook.shape()
            )));
        }
        let mut rng = Rng::new(seed, INIT_STREAM);
        let xav = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
        Ok(PolicyParams {
            dims,
            tok_emb: uniform_init(&mut rng, vocab, embed, xav(vocab, embed)),
            cond_emb: uniform_init(&mut rng, classes, embed, xav(classes, embed)),
            w_x: uniform_init(&mut rng, embed, embed, xav(embed, embed)),
            w_h: uniform_init(&mut rng, embed, embed, xav(embed, embed)),
            b_h: Array::zeros(&[1, embed]),
            w_out: uniform_init(&mut rng, embed, vocab, xav(embed, vocab)),
            b_out: Array::zeros(&[1, vocab]),
            codebook,
        })
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> PolicyVars {
        let vars = self
            .tensors()
            .into_iter()
            .map(|a| {
                if trainable {
                    tape.leaf(a.clone())
                } else {
                    tape.constant(a.clone())
                }
            })
            .collect();
        PolicyVars {
            dims: self.dims,
            vars,
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dims;
        let mut tensors = self.tensors();
        // The class count rides along as an extra 1x1 array so the header stays a triple.
        let classes = Array::new(&[1, 1], vec![d.classes as f64]);
        tensors.push(&classes);
        write_checkpoint(w, [d.vocab as u32, d.embed as u32, d.feat as u32], &tensors)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (d, mut arrays) = read_checkpoint(r)?;
        let classes = arrays
            .pop()
            .ok_or_else(|| Error::Format("empty policy checkpoint".into()))?;
        if classes.shape() != [1, 1] {
            return Err(Error::Format(
                "policy checkpoint is missing its class count".into(),
            ));
        }
        let dims = PolicyDims {
            vocab: d[0] as usize,
            embed: d[1] as usize,
            classes: classes.item() as usize,
            feat: d[2] as usize,
        };
        let mut p = PolicyParams::init(0, dims, Array::zeros(&[dims.vocab, dims.feat]))?;
        let shapes = p.shapes();
        if arrays.len() != shapes.len() {
            return Err(Error::Format(format!(
                "expected {} arrays, found {}",
                shapes.len(),
                arrays.len()
            )));
        }
        for ((slot, a), shape) in p.tensors_mut().into_iter().zip(arrays).zip(shapes) {
            if a.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "array shape {:?}, expected {:?}",
                    a.shape(),
                    shape
                )));
            }
            *slot = a;
        }
        Ok(p)
    }
}

/// Policy tensors bound to a tape, in [`ParamSet`] order.
#[derive(Clone, Debug)]
pub struct PolicyVars {
    pub dims: PolicyDims,
    vars: Vec<Var>,
}

/// An autoregressive sample of relaxed one-hot rows, `[T, V]` on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Trajectory {
    pub soft_tokens: Var,
    pub condition: usize,
    pub temperature: f64,
}

/// Gumbel noise `-ln(-ln u)` for `n` draws.
pub fn gumbel_noise(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| -(-rng.uniform_open().ln()).ln()).collect()
}

/// `softmax((logits + g) / temp)` with fresh Gumbel noise `g`. With
/// `straight_through` the forward value is the argmax one-hot and the
/// gradient is that of the soft sample.
pub fn gumbel_softmax(
    tape: &mut Tape,
    logits: Var,
    temp: f64,
    rng: &mut Rng,
    straight_through: bool,
) -> Result<Var> {
    if !(temp > 0.0) {
        return Err(invalid(format!(
            "Gumbel temperature must be positive, got {temp}"
        )));
    }
    let shape = tape.shape(logits).to_vec();
    let n = shape.iter().product();
    let g = tape.constant(Array::new(&shape, gumbel_noise(n, rng)));
    let z = tape.add(logits, g);
    let z = tape.scale(z, 1.0 / temp);
    let y = tape.softmax(z);
    Ok(if straight_through {
        tape.straight_through(y)
    } else {
        y
    })
}

/// Plain-array Gumbel-Softmax sample of one logit row.
pub fn gumbel_softmax_values(
    logits: &[f64],
    temp: f64,
    rng: &mut Rng,
    straight_through: bool,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let l = tape.constant(Array::row(logits));
    let y = gumbel_softmax(&mut tape, l, temp, rng, straight_through)?;
    Ok(tape.value(y).data().to_vec())
}

impl PolicyVars {
    /// Wrap tape nodes already holding the tensors in [`ParamSet`] order.
    pub fn from_vars(dims: PolicyDims, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), 8, "policy has 8 tensors");
        PolicyVars { dims, vars }
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    pub fn codebook(&self) -> Var {
        self.vars[7]
    }

    /// One recurrent step from input row `x` and state `h`; returns the new
    /// state and the token logits.
    fn cell(&self, tape: &mut Tape, x: Var, h: Var, cond: Var) -> (Var, Var) {
        let v = &self.vars;
        let a = tape.matmul(x, v[2]);
        let b = tape.matmul(h, v[3]);
        let s = tape.add(a, b);
        let s = tape.add(s, cond);
        let s = tape.add(s, v[4]);
        let h = tape.tanh(s);
        let logits = tape.affine(h, v[5], v[6]);
        (h, logits)
    }

    fn condition_row(&self, tape: &mut Tape, condition: usize) -> Result<Var> {
        if condition >= self.dims.classes {
            return Err(invalid(format!(
                "condition {condition} out of range for {} classes",
                self.dims.classes
            )));
        }
        Ok(tape.slice(self.vars[1], 0, condition, 1))
    }

    /// Sample `steps` relaxed tokens conditioned on `condition`, all on `tape`.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        condition: usize,
        steps: usize,
        temp: f64,
        straight_through: bool,
        rng: &mut Rng,
    ) -> Result<Trajectory> {
        if steps == 0 {
            return Err(invalid("rollout needs at least one step"));
        }
        let cond = self.condition_row(tape, condition)?;
        let e = self.dims.embed;
        let mut x = tape.constant(Array::zeros(&[1, e]));
        let mut h = tape.constant(Array::zeros(&[1, e]));
        let mut rows = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (h_next, logits) = self.cell(tape, x, h, cond);
            let y = gumbel_softmax(tape, logits, temp, rng, straight_through)?;
            x = tape.matmul(y, self.vars[0]);
            h = h_next;
            rows.push(y);
        }
        let soft_tokens = if rows.len() == 1 {
            rows[0]
        } else {
            tape.concat(&rows, 0)
        };
        Ok(Trajectory {
            soft_tokens,
            condition,
            temperature: temp,
        })
    }

    /// Teacher-forced mean next-token cross-entropy of `tokens` under `condition`.
    pub fn sequence_nll(&self, tape: &mut Tape, condition: usize, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(invalid("empty token sequence"));
        }
        let cond = self.condition_row(tape, condition)?;
        let (v, e) = (self.dims.vocab, self.dims.embed);
        let mut x = tape.constant(Array::zeros(&[1, e]));
        let mut h = tape.constant(Array::zeros(&[1, e]));
        let mut logit_rows = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let (h_next, logits) = self.cell(tape, x, h, cond);
            logit_rows.push(logits);
            x = tape.slice(self.vars[0], 0, tok, 1);
            h = h_next;
        }
        let all = if logit_rows.len() == 1 {
            logit_rows[0]
        } else {
            tape.concat(&logit_rows, 0)
        };
        let probs = tape.softmax(all);
        let logp = tape.log(probs);
        let mut targets = Array::zeros(&[tokens.len(), v]);
        for (t, &tok) in tokens.iter().enumerate() {
            targets.set2(t, tok, 1.0);
        }
        let tgt = tape.constant(targets);
        let picked = tape.mul(logp, tgt);
        let total = tape.sum(picked);
        Ok(tape.scale(total, -1.0 / tokens.len() as f64))
    }
}

/// Decode relaxed tokens into frames: `soft_tokens [T,V] x codebook [V,D]`.
pub fn decode(tape: &mut Tape, traj: &Trajectory, codebook: Var) -> Result<Var> {
    let (ts, cs) = (
        tape.shape(traj.soft_tokens).to_vec(),
        tape.shape(codebook).to_vec(),
    );
    if ts.len() != 2 || cs.len() != 2 || ts[1] != cs[0] {
        return Err(invalid(format!(
            "cannot decode tokens {ts:?} with codebook {cs:?}"
        )));
    }
    Ok(tape.matmul(traj.soft_tokens, codebook))
}
