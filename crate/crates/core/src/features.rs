use crate::array::Array;
use crate::error::{invalid, Result};

/// An `L x D` matrix of frame-level features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence(Array);

impl FeatureSequence {
    /// Wraps `frames`; it must be rank 2, non-empty and finite.
    pub fn new(frames: Array) -> Result<Self> {
        if frames.rank() != 2 || frames.shape()[0] == 0 || frames.shape()[1] == 0 {
            return Err(invalid(format!(
                "feature sequence needs a non-empty L x D matrix, got {:?}",
                frames.shape()
            )));
        }
        if !frames.all_finite() {
            return Err(invalid("feature sequence contains non-finite values"));
        }
        Ok(FeatureSequence(frames))
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn frames(&self) -> &Array {
        &self.0
    }

    pub fn into_frames(self) -> Array {
        self.0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.0.row_slice(t)
    }

    /// Values of one feature dimension across all frames.
    pub fn channel(&self, d: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.0.get2(t, d)).collect()
    }

    /// Mean over frames, one value per dimension.
    pub fn mean_frame(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for t in 0..self.len() {
            for (o, v) in m.iter_mut().zip(self.frame(t)) {
                *o += v;
            }
        }
        m.iter_mut().for_each(|x| *x /= self.len() as f64);
        m
    }
}
