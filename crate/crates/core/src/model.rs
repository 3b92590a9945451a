//! The emotion reward model: a one-block transformer encoder over feature
//! frames followed by mean pooling and a linear classification head.
//!
//! ```text
//! x  = F W_in + b_in + P W_pos          (P: fixed sinusoidal positions)
//! x2 = x + MHA(LN(x)) W_o               (2 heads)
//! h  = x2 + tanh(LN(x2) W_1 + b_1) W_2 + b_2
//! logits = mean_t(h) W_head + b_head
//! ```

use std::io::{Read, Write};

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{invalid, Error, Result};
use crate::features::FeatureSequence;
use crate::rng::Rng;

pub const HEADS: usize = 2;
pub const FF_HIDDEN: usize = 64;
pub const POS_DIM: usize = 8;
const POS_BASE: f64 = 100.0;
const INIT_STREAM: u64 = 0x524d_494e_4954;

/// Parameter containers that can be flattened in declaration order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Array>;
    fn tensors_mut(&mut self) -> Vec<&mut Array>;

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|a| a.shape().to_vec()).collect()
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|a| a.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|a| a.all_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RmDims {
    pub feat: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for RmDims {
    fn default() -> Self {
        RmDims {
            feat: 16,
            hidden: 32,
            classes: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmParams {
    pub dims: RmDims,
    pub w_in: Array,
    pub b_in: Array,
    pub w_pos: Array,
    pub w_q: Array,
    pub w_k: Array,
    pub w_v: Array,
    pub w_o: Array,
    pub w_ff1: Array,
    pub b_ff1: Array,
    pub w_ff2: Array,
    pub b_ff2: Array,
    pub w_head: Array,
    pub b_head: Array,
}

fn xavier(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Array {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Array::new(&[fan_in, fan_out], data)
}

impl RmParams {
    pub fn zeros(dims: RmDims) -> Self {
        let RmDims {
            feat,
            hidden,
            classes,
        } = dims;
        RmParams {
            dims,
            w_in: Array::zeros(&[feat, hidden]),
            b_in: Array::zeros(&[1, hidden]),
            w_pos: Array::zeros(&[POS_DIM, hidden]),
            w_q: Array::zeros(&[hidden, hidden]),
            w_k: Array::zeros(&[hidden, hidden]),
            w_v: Array::zeros(&[hidden, hidden]),
            w_o: Array::zeros(&[hidden, hidden]),
            w_ff1: Array::zeros(&[hidden, FF_HIDDEN]),
            b_ff1: Array::zeros(&[1, FF_HIDDEN]),
            w_ff2: Array::zeros(&[FF_HIDDEN, hidden]),
            b_ff2: Array::zeros(&[1, hidden]),
            w_head: Array::zeros(&[hidden, classes]),
            b_head: Array::zeros(&[1, classes]),
        }
    }

    /// Scaled-uniform weights, zero biases; a pure function of `(seed, dims)`.
    pub fn init(seed: u64, dims: RmDims) -> Result<Self> {
        if dims.feat == 0 || dims.hidden == 0 || dims.classes == 0 {
            return Err(invalid(format!(
                "reward model dims must be positive: {dims:?}"
            )));
        }
        if dims.hidden % HEADS != 0 {
            return Err(invalid(format!(
                "hidden width {} not divisible by {HEADS} heads",
                dims.hidden
            )));
        }
        let mut rng = Rng::new(seed, INIT_STREAM);
        let RmDims {
            feat,
            hidden,
            classes,
        } = dims;
        let mut p = RmParams::zeros(dims);
        p.w_in = xavier(&mut rng, feat, hidden);
        p.w_pos = xavier(&mut rng, POS_DIM, hidden);
        p.w_q = xavier(&mut rng, hidden, hidden);
        p.w_k = xavier(&mut rng, hidden, hidden);
        p.w_v = xavier(&mut rng, hidden, hidden);
        p.w_o = xavier(&mut rng, hidden, hidden);
        p.w_ff1 = xavier(&mut rng, hidden, FF_HIDDEN);
        p.w_ff2 = xavier(&mut rng, FF_HIDDEN, hidden);
        p.w_head = xavier(&mut rng, hidden, classes);
        Ok(p)
    }

    /// Put every tensor on `tape`, as trainable leaves or frozen constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> RmVars {
        let vars: Vec<Var> = self
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
        RmVars {
            dims: self.dims,
            vars,
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dims;
        write_checkpoint(
            w,
            [d.feat as u32, d.hidden as u32, d.classes as u32],
            &self.tensors(),
        )
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (d, arrays) = read_checkpoint(r)?;
        let dims = RmDims {
            feat: d[0] as usize,
            hidden: d[1] as usize,
            classes: d[2] as usize,
        };
        let mut p = RmParams::zeros(dims);
        let expected = p.shapes();
        if arrays.len() != expected.len() {
            return Err(Error::Format(format!(
                "expected {} arrays, found {}",
                expected.len(),
                arrays.len()
            )));
        }
        for ((slot, a), shape) in p.tensors_mut().into_iter().zip(arrays).zip(expected) {
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

    /// Logits for one sequence, evaluated on a scratch tape.
    pub fn logits(&self, feats: &FeatureSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let rm = self.bind(&mut tape, false);
        let x = tape.constant(feats.frames().clone());
        let y = rm.forward(&mut tape, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn predict(&self, feats: &FeatureSequence) -> Result<usize> {
        Ok(crate::array::argmax(&self.logits(feats)?))
    }
}

impl ParamSet for RmParams {
    fn tensors(&self) -> Vec<&Array> {
        vec![
            &self.w_in,
            &self.b_in,
            &self.w_pos,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
            &self.w_head,
            &self.b_head,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array> {
        vec![
            &mut self.w_in,
            &mut self.b_in,
            &mut self.w_pos,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
            &mut self.w_head,
            &mut self.b_head,
        ]
    }
}

/// Sinusoidal position table, `[len, POS_DIM]`.
pub fn positional_table(len: usize) -> Array {
    let mut data = Vec::with_capacity(len * POS_DIM);
    for t in 0..len {
        for i in 0..POS_DIM / 2 {
            let freq = POS_BASE.powf(-((2 * i) as f64) / POS_DIM as f64);
            data.push((t as f64 * freq).sin());
            data.push((t as f64 * freq).cos());
        }
    }
    Array::new(&[len, POS_DIM], data)
}

/// Reward-model tensors bound to a tape, in [`ParamSet`] order.
#[derive(Clone, Debug)]
pub struct RmVars {
    pub dims: RmDims,
    vars: Vec<Var>,
}

impl RmVars {
    /// Wrap tape nodes already holding the tensors in [`ParamSet`] order.
    pub fn from_vars(dims: RmDims, vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), 13, "reward model has 13 tensors");
        RmVars { dims, vars }
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    /// Frame-level embeddings `h'`, shape `[L, hidden]`.
    pub fn encode(&self, tape: &mut Tape, feats: Var) -> Result<Var> {
        let shape = tape.shape(feats).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(invalid(format!(
                "encode needs a non-empty [L, D] input, got {shape:?}"
            )));
        }
        if shape[1] != self.dims.feat {
            return Err(invalid(format!(
                "feature dim {} does not match model dim {}",
                shape[1], self.dims.feat
            )));
        }
        let len = shape[0];
        let v = &self.vars;
        let (w_in, b_in, w_pos, w_q, w_k, w_v, w_o) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
        let (w_ff1, b_ff1, w_ff2, b_ff2) = (v[7], v[8], v[9], v[10]);

        let proj = tape.affine(feats, w_in, b_in);
        let pos = tape.constant(positional_table(len));
        let pos = tape.matmul(pos, w_pos);
        let x = tape.add(proj, pos);

        let a = tape.layer_norm(x);
        let q = tape.matmul(a, w_q);
        let k = tape.matmul(a, w_k);
        let val = tape.matmul(a, w_v);
        let dh = self.dims.hidden / HEADS;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(HEADS);
        for h in 0..HEADS {
            let qh = tape.slice(q, 1, h * dh, dh);
            let kh = tape.slice(k, 1, h * dh, dh);
            let vh = tape.slice(val, 1, h * dh, dh);
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt);
            let s = tape.scale(s, scale);
            let att = tape.softmax(s);
            heads.push(tape.matmul(att, vh));
        }
        let cat = tape.concat(&heads, 1);
        let o = tape.matmul(cat, w_o);
        let x2 = tape.add(x, o);

        let n2 = tape.layer_norm(x2);
        let f = tape.affine(n2, w_ff1, b_ff1);
        let f = tape.tanh(f);
        let f = tape.affine(f, w_ff2, b_ff2);
        Ok(tape.add(x2, f))
    }

    /// Mean-pool over frames and project to `[1, classes]` logits.
    pub fn classify(&self, tape: &mut Tape, h: Var) -> Var {
        let pooled = tape.mean_rows(h);
        tape.affine(pooled, self.vars[11], self.vars[12])
    }

    pub fn forward(&self, tape: &mut Tape, feats: Var) -> Result<Var> {
        let h = self.encode(tape, feats)?;
        Ok(self.classify(tape, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_for_default_dims() {
        // 16*32 + 32 + 8*32 + 4*32*32 + 32*64 + 64 + 64*32 + 32 + 32*5 + 5
        let p = RmParams::init(0, RmDims::default()).unwrap();
        assert_eq!(p.param_count(), 9253);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = RmParams::init(11, RmDims::default()).unwrap();
        let b = RmParams::init(11, RmDims::default()).unwrap();
        let c = RmParams::init(12, RmDims::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / 48.0).sqrt();
        assert!(a.w_in.max_abs() <= bound);
        assert_eq!(a.b_in.max_abs(), 0.0);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(RmParams::init(
            0,
            RmDims {
                feat: 0,
                hidden: 32,
                classes: 5
            }
        )
        .is_err());
    }

    #[test]
    fn zero_model_on_zero_input_is_zero() {
        let p = RmParams::zeros(RmDims::default());
        let mut t = Tape::new();
        let rm = p.bind(&mut t, false);
        let x = t.constant(Array::zeros(&[10, 16]));
        let h = rm.encode(&mut t, x).unwrap();
        assert_eq!(t.shape(h), &[10, 32]);
        assert_eq!(t.value(h).max_abs(), 0.0);
        let logits = rm.classify(&mut t, h);
        assert_eq!(t.shape(logits), &[1, 5]);
        let probs = t.softmax(logits);
        for &p in t.value(probs).data() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs_rejected() {
        let p = RmParams::init(1, RmDims::default()).unwrap();
        let mut t = Tape::new();
        let rm = p.bind(&mut t, false);
        let x = t.constant(Array::zeros(&[0, 16]));
        assert!(rm.encode(&mut t, x).is_err());
        let y = t.constant(Array::zeros(&[4, 15]));
        assert!(rm.encode(&mut t, y).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = RmParams::init(5, RmDims::default()).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        assert_eq!(RmParams::load(buf.as_slice()).unwrap(), p);
    }
}
