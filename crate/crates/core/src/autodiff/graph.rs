//! Random smooth computation graphs for exercising the tape.

use super::tape::{Tape, Var};
use crate::array::Array;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
enum Step {
    Tanh(usize),
    Exp(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm(usize),
    SoftAbs(usize),
    Scale(usize, f64),
    Offset(usize, f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a b^T c`, shape-preserving.
    Gram(usize, usize, usize),
    /// Column means broadcast back over rows.
    RowMean(usize),
    /// Swap the two column halves via slice and concat.
    Rotate(usize),
}

/// A recipe for a random scalar function of `n_inputs` matrices of one shape.
///
/// Only smooth primitives are used (no relu, no log near zero, no exp of
/// unbounded arguments), so central differences are meaningful everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomGraph {
    pub rows: usize,
    pub cols: usize,
    pub n_inputs: usize,
    steps: Vec<Step>,
    readout: Array,
}

impl RandomGraph {
    pub fn sample(rng: &mut Rng, n_inputs: usize, n_ops: usize) -> Self {
        assert!(n_inputs >= 1);
        let rows = 1 + rng.below(3);
        let cols = 2 + rng.below(3);
        let mut steps = Vec::with_capacity(n_ops);
        let mut pool = n_inputs;
        for _ in 0..n_ops {
            let pick = |rng: &mut Rng| rng.below(pool);
            let s = match rng.below(14) {
                0 => Step::Tanh(pick(rng)),
                1 => Step::Exp(pick(rng)),
                2 => Step::Softmax(pick(rng)),
                3 => Step::LogSoftmax(pick(rng)),
                4 => Step::LayerNorm(pick(rng)),
                5 => Step::SoftAbs(pick(rng)),
                6 => Step::Scale(pick(rng), rng.uniform_range(-1.5, 1.5)),
                7 => Step::Offset(pick(rng), rng.uniform_range(-1.0, 1.0)),
                8 => Step::Add(pick(rng), pick(rng)),
                9 => Step::Sub(pick(rng), pick(rng)),
                10 => Step::Mul(pick(rng), pick(rng)),
                11 => Step::Gram(pick(rng), pick(rng), pick(rng)),
                12 => Step::RowMean(pick(rng)),
                _ => Step::Rotate(pick(rng)),
            };
            steps.push(s);
            pool += 1;
        }
        let readout = Array::new(
            &[rows, cols],
            (0..rows * cols).map(|_| rng.normal()).collect(),
        );
        RandomGraph {
            rows,
            cols,
            n_inputs,
            steps,
            readout,
        }
    }

    /// Standard-normal inputs of the recipe's shape.
    pub fn inputs(&self, rng: &mut Rng) -> Vec<Array> {
        (0..self.n_inputs)
            .map(|_| {
                Array::new(
                    &[self.rows, self.cols],
                    (0..self.rows * self.cols).map(|_| rng.normal()).collect(),
                )
            })
            .collect()
    }

    pub fn op_count(&self) -> usize {
        self.steps.len()
    }

    /// Build the graph over `inputs` and reduce the last node to a scalar.
    pub fn build(&self, tape: &mut Tape, inputs: &[Var]) -> Var {
        assert_eq!(inputs.len(), self.n_inputs);
        let mut pool: Vec<Var> = inputs.to_vec();
        for s in &self.steps {
            let v = match *s {
                Step::Tanh(a) => tape.tanh(pool[a]),
                Step::Exp(a) => {
                    let t = tape.tanh(pool[a]);
                    tape.exp(t)
                }
                Step::Softmax(a) => tape.softmax(pool[a]),
                Step::LogSoftmax(a) => {
                    let p = tape.softmax(pool[a]);
                    tape.log(p)
                }
                Step::LayerNorm(a) => tape.layer_norm(pool[a]),
                Step::SoftAbs(a) => {
                    let sq = tape.mul(pool[a], pool[a]);
                    let sh = tape.offset(sq, 1.0);
                    tape.sqrt(sh)
                }
                Step::Scale(a, c) => tape.scale(pool[a], c),
                Step::Offset(a, c) => tape.offset(pool[a], c),
                Step::Add(a, b) => tape.add(pool[a], pool[b]),
                Step::Sub(a, b) => tape.sub(pool[a], pool[b]),
                Step::Mul(a, b) => tape.mul(pool[a], pool[b]),
                Step::Gram(a, b, c) => {
                    let bt = tape.transpose(pool[b]);
                    let ab = tape.matmul(pool[a], bt);
                    let abc = tape.matmul(ab, pool[c]);
                    tape.scale(abc, 1.0 / self.cols as f64)
                }
                Step::RowMean(a) => {
                    let m = tape.mean_rows(pool[a]);
                    tape.repeat_rows(m, self.rows)
                }
                Step::Rotate(a) => {
                    let k = self.cols / 2;
                    let left = tape.slice(pool[a], 1, 0, k);
                    let right = tape.slice(pool[a], 1, k, self.cols - k);
                    tape.concat(&[right, left], 1)
                }
            };
            pool.push(v);
        }
        let w = tape.constant(self.readout.clone());
        let last = *pool.last().expect("non-empty pool");
        let weighted = tape.mul(last, w);
        let s = tape.sum(weighted);
        let n = tape.l2_norm(last);
        tape.add(s, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    #[test]
    fn sampled_graphs_are_deterministic_and_checkable() {
        let g = RandomGraph::sample(&mut Rng::new(3, 0), 2, 12);
        assert_eq!(g, RandomGraph::sample(&mut Rng::new(3, 0), 2, 12));
        let xs = g.inputs(&mut Rng::new(3, 1));
        let report = finite_diff_check(|t, v| g.build(t, v), &xs, 1e-5, 1e-4);
        assert!(report.passed(), "{report:?}");
    }
}
