//! Codebook construction and nearest-row tokenization.

use crate::array::Array;
use crate::corpus::Corpus;
use crate::error::{invalid, Result};
use crate::features::FeatureSequence;
use crate::rng::Rng;

/// Upper bound on the L2 norm of any codebook row.
pub const MAX_CODEBOOK_NORM: f64 = 10.0;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(codebook: &Array, frame: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for r in 0..codebook.shape()[0] {
        let d = sq_dist(codebook.row_slice(r), frame);
        if d < best.1 {
            best = (r, d);
        }
    }
    best.0
}

/// Index of the nearest codebook row for every frame.
pub fn tokenize(feats: &FeatureSequence, codebook: &Array) -> Vec<usize> {
    (0..feats.len())
        .map(|t| nearest(codebook, feats.frame(t)))
        .collect()
}

/// Scale down any row whose L2 norm exceeds `max_norm`.
pub fn project_codebook(codebook: &mut Array, max_norm: f64) {
    for r in 0..codebook.shape()[0] {
        let row = codebook.row_slice_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > max_norm {
            row.iter_mut().for_each(|x| *x *= max_norm / n);
        }
    }
}

/// k-means codebook over all frames of `corpus`. A quarter of the rows are
/// fitted to frames with an active shortcut channel (last dimension above 0.5)
/// and the rest to the other frames, so both kinds survive tokenization.
/// Falls back to a single pool when either side has too few frames.
pub fn kmeans_codebook(corpus: &Corpus, k: usize, iters: usize, rng: &mut Rng) -> Result<Array> {
    let frames: Vec<&[f64]> = corpus
        .samples
        .iter()
        .flat_map(|s| (0..s.feats.len()).map(move |t| s.feats.frame(t)))
        .collect();
    if frames.len() < k || k == 0 {
        return Err(invalid(format!(
            "k-means needs at least {k} frames, corpus has {}",
            frames.len()
        )));
    }
    let d = corpus.dim;
    let (active, quiet): (Vec<&[f64]>, Vec<&[f64]>) = frames.iter().partition(|f| f[d - 1] > 0.5);
    let k_active = k / 4;
    let mut centres = if k_active > 0 && active.len() >= k_active && quiet.len() >= k - k_active {
        let a = lloyd(&active, k_active, d, iters, rng);
        let q = lloyd(&quiet, k - k_active, d, iters, rng);
        let mut data = q.data().to_vec();
        data.extend_from_slice(a.data());
        Array::new(&[k, d], data)
    } else {
        lloyd(&frames, k, d, iters, rng)
    };
    project_codebook(&mut centres, MAX_CODEBOOK_NORM);
    Ok(centres)
}

/// Lloyd's algorithm seeded with distinct random frames. Empty clusters keep
/// their previous centre.
fn lloyd(frames: &[&[f64]], k: usize, d: usize, iters: usize, rng: &mut Rng) -> Array {
    let picks = rng.permutation(frames.len());
    let mut centres = Array::zeros(&[k, d]);
    for (r, &i) in picks.iter().take(k).enumerate() {
        centres.row_slice_mut(r).copy_from_slice(frames[i]);
    }
    let mut assign = vec![usize::MAX; frames.len()];
    for _ in 0..iters {
        let mut changed = false;
        for (i, f) in frames.iter().enumerate() {
            let a = nearest(&centres, f);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array::zeros(&[k, d]);
        let mut counts = vec![0usize; k];
        for (f, &a) in frames.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums.row_slice_mut(a).iter_mut().zip(*f) {
                *s += v;
            }
        }
        for r in 0..k {
            if counts[r] > 0 {
                let c = counts[r] as f64;
                for (dst, s) in centres.row_slice_mut(r).iter_mut().zip(sums.row_slice(r)) {
                    *dst = s / c;
                }
            }
        }
    }
    centres
}
