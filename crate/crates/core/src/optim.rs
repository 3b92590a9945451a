//! Adaptive moment estimation.

use crate::array::Array;

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array>,
    v: Vec<Array>,
    scale: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Adam {
            config,
            m: shapes.iter().map(|s| Array::zeros(s)).collect(),
            v: shapes.iter().map(|s| Array::zeros(s)).collect(),
            scale: vec![1.0; shapes.len()],
            t: 0,
        }
    }

    /// Multiplies the learning rate of tensor `index` by `factor`.
    pub fn set_lr_scale(&mut self, index: usize, factor: f64) {
        self.scale[index] = factor;
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `params` and `grads` must be in the order the optimizer was built with.
    pub fn step(&mut self, params: &mut [&mut Array], grads: &[Array]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((((p, g), m), v), &k) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(&self.scale)
        {
            let lr = lr * k;
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                if lr != 0.0 {
                    *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                }
            }
        }
    }
}

/// Global L2 norm across a gradient set.
pub fn global_norm(grads: &[Array]) -> f64 {
    grads
        .iter()
        .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescale `grads` in place so their global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if max_norm > 0.0 && n > max_norm {
        let s = max_norm / n;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = Array::new(&[2], vec![3.0, -2.0]);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &[&[2]],
        );
        for _ in 0..2000 {
            let g = x.map(|v| 2.0 * v);
            opt.step(&mut [&mut x], &[g]);
        }
        assert!(x.max_abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut x = Array::new(&[2], vec![3.0, -2.0]);
        let before = x.clone();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            &[&[2]],
        );
        opt.step(&mut [&mut x], &[Array::ones(&[2])]);
        assert_eq!(x, before);
    }
}
