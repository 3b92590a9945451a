//! Synthetic emotional feature corpora.
//!
//! Each utterance is an `L x D` matrix. Dimensions `0..D-1` carry the genuine
//! class signal: a class-keyed sinusoid across the dimension index plus
//! Gaussian noise. Dimension `D-1` is the shortcut channel: sparse unit spikes
//! whose count per 16-frame block is `class + 1` when a per-sample coin with
//! probability `shortcut_correlation` lands heads, and a random class's count
//! otherwise.

mod format;
mod oracle;

use std::f64::consts::{PI, TAU};

pub use format::{read_corpus, write_corpus, CORPUS_MAGIC, CORPUS_VERSION};
pub use oracle::{
    artifact_energy, natural_band, train_oracle, OracleConfig, OracleJudge, OracleReport,
};

use crate::array::Array;
use crate::error::{invalid, Result};
use crate::features::FeatureSequence;
use crate::rng::{mix64, Rng};

/// Frames per shortcut block.
pub const SPIKE_BLOCK: usize = 16;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Pretrain,
    Finetune,
    EvalShifted,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Pretrain, Domain::Finetune, Domain::EvalShifted];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Pretrain => "pretrain",
            Domain::Finetune => "finetune",
            Domain::EvalShifted => "eval-shifted",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.name() == s)
    }

    fn tag(self) -> u64 {
        match self {
            Domain::Pretrain => 1,
            Domain::Finetune => 2,
            Domain::EvalShifted => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub n_samples: usize,
    pub classes: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub dim: usize,
    pub domain: Domain,
    pub shortcut_correlation: f64,
    /// Amplitude of the class sinusoid on the genuine dimensions.
    pub signal_scale: f64,
    /// Standard deviation of the Gaussian noise on the genuine dimensions.
    pub noise_scale: f64,
    /// Half-width of the per-utterance, per-dimension gain applied to the
    /// genuine dimensions (`0` disables it).
    pub scale_jitter: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub const DEFAULT_NOISE: f64 = 1.0;
    pub const DEFAULT_SIGNAL: f64 = 0.25;
    pub const DEFAULT_JITTER: f64 = 0.5;
    /// Pretraining data carries a much fainter genuine cue than the curated
    /// fine-tuning data, so the shortcut is the easy way to fit it.
    pub const PRETRAIN_SIGNAL_FACTOR: f64 = 0.2;

    /// Defaults for a domain: pretrain is shortcut-correlated at 0.95 with a
    /// faint genuine signal, the other two are clean, and eval-shifted doubles
    /// the noise and adds gain jitter.
    pub fn for_domain(domain: Domain, n_samples: usize, seed: u64) -> Self {
        let (corr, signal, noise, jitter) = match domain {
            Domain::Pretrain => (
                0.95,
                Self::PRETRAIN_SIGNAL_FACTOR * Self::DEFAULT_SIGNAL,
                Self::DEFAULT_NOISE,
                0.0,
            ),
            Domain::Finetune => (0.0, Self::DEFAULT_SIGNAL, Self::DEFAULT_NOISE, 0.0),
            Domain::EvalShifted => (
                0.0,
                Self::DEFAULT_SIGNAL,
                2.0 * Self::DEFAULT_NOISE,
                Self::DEFAULT_JITTER,
            ),
        };
        CorpusSpec {
            n_samples,
            classes: 5,
            len_min: 16,
            len_max: 48,
            dim: 16,
            domain,
            shortcut_correlation: corr,
            signal_scale: signal,
            noise_scale: noise,
            scale_jitter: jitter,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.shortcut_correlation) {
            return Err(invalid(format!(
                "shortcut_correlation must lie in [0, 1], got {}",
                self.shortcut_correlation
            )));
        }
        if self.classes < 2 || self.dim < 2 {
            return Err(invalid(format!(
                "corpus needs >= 2 classes and >= 2 dims, got {} and {}",
                self.classes, self.dim
            )));
        }
        if self.len_min < 2 || self.len_min > self.len_max {
            return Err(invalid(format!(
                "bad length range [{}, {}]",
                self.len_min, self.len_max
            )));
        }
        if self.classes + 1 > SPIKE_BLOCK {
            return Err(invalid(format!(
                "{} classes do not fit the {SPIKE_BLOCK}-frame spike code",
                self.classes
            )));
        }
        if !(self.noise_scale >= 0.0
            && self.signal_scale >= 0.0
            && (0.0..1.0).contains(&self.scale_jitter))
        {
            return Err(invalid(
                "noise_scale and signal_scale must be >= 0 and scale_jitter in [0, 1)",
            ));
        }
        Ok(())
    }

    fn stream(&self, index: usize) -> Rng {
        Rng::new(self.seed, mix64(self.domain.tag() << 56 ^ index as u64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub feats: FeatureSequence,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dim: usize,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Split into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Corpus, Corpus) {
        let n = n.min(self.len());
        (
            Corpus {
                dim: self.dim,
                samples: self.samples[..n].to_vec(),
            },
            Corpus {
                dim: self.dim,
                samples: self.samples[n..].to_vec(),
            },
        )
    }

    pub fn class_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }
}

/// Mean of the genuine dimensions for `class`: a sinusoid across the
/// dimension index whose frequency and phase depend on the class.
pub fn class_pattern(class: usize, genuine_dims: usize) -> Vec<f64> {
    let freq = (class + 1) as f64 / genuine_dims as f64;
    let phase = class as f64 * PI / 5.0;
    (0..genuine_dims)
        .map(|d| (TAU * freq * d as f64 + phase).sin())
        .collect()
}

/// Number of spikes expected in a block of `block_len` frames for `count`
/// spikes per full block.
fn spikes_in_block(count: usize, block_len: usize) -> usize {
    if block_len == SPIKE_BLOCK {
        count
    } else {
        (count * block_len + SPIKE_BLOCK / 2) / SPIKE_BLOCK
    }
}

/// One utterance; a pure function of `(spec, class, index)`.
pub fn gen_utterance(class: usize, spec: &CorpusSpec, index: usize) -> Result<Sample> {
    spec.validate()?;
    if class >= spec.classes {
        return Err(invalid(format!(
            "class {class} out of range for {} classes",
            spec.classes
        )));
    }
    let mut rng = spec.stream(index);
    let len = spec.len_min + rng.below(spec.len_max - spec.len_min + 1);
    let g = spec.dim - 1;
    let pattern = class_pattern(class, g);
    let gains: Vec<f64> = (0..g)
        .map(|_| {
            let u = rng.uniform_range(-1.0, 1.0);
            1.0 + spec.scale_jitter * u
        })
        .collect();
    let mut frames = Array::zeros(&[len, spec.dim]);
    for t in 0..len {
        let row = frames.row_slice_mut(t);
        for d in 0..g {
            row[d] = gains[d] * (spec.signal_scale * pattern[d] + spec.noise_scale * rng.normal());
        }
    }
    let honest = rng.bernoulli(spec.shortcut_correlation);
    let shown = if honest {
        class
    } else {
        rng.below(spec.classes)
    };
    let mut start = 0;
    while start < len {
        let block = SPIKE_BLOCK.min(len - start);
        let n = spikes_in_block(shown + 1, block);
        let mut slots: Vec<usize> = (0..block).collect();
        for k in 0..n {
            let pick = k + rng.below(block - k);
            slots.swap(k, pick);
            frames.set2(start + slots[k], g, 1.0);
        }
        start += block;
    }
    Ok(Sample {
        feats: FeatureSequence::new(frames)?,
        label: class,
    })
}

/// A class-balanced corpus (`label = index mod K` before shuffling), shuffled
/// with a stream derived from the seed.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut samples = (0..spec.n_samples)
        .map(|i| gen_utterance(i % spec.classes, spec, i))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = Rng::new(spec.seed, mix64(SHUFFLE_STREAM ^ spec.domain.tag()));
    rng.shuffle(&mut samples);
    Ok(Corpus {
        dim: spec.dim,
        samples,
    })
}

/// Spikes in the shortcut channel per full block, averaged over blocks.
pub fn spike_rate(feats: &FeatureSequence) -> f64 {
    let ch = feats.channel(feats.dim() - 1);
    ch.iter().filter(|&&v| v > 0.5).count() as f64 * SPIKE_BLOCK as f64 / ch.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_index_same_bits() {
        let spec = CorpusSpec::for_domain(Domain::Pretrain, 10, 7);
        assert_eq!(
            gen_utterance(3, &spec, 4).unwrap(),
            gen_utterance(3, &spec, 4).unwrap()
        );
        assert_ne!(
            gen_utterance(3, &spec, 4).unwrap(),
            gen_utterance(3, &spec, 5).unwrap()
        );
    }

    #[test]
    fn honest_spikes_encode_the_class() {
        let mut spec = CorpusSpec::for_domain(Domain::Pretrain, 10, 1);
        spec.shortcut_correlation = 1.0;
        spec.len_min = 32;
        spec.len_max = 32;
        for c in 0..5 {
            let s = gen_utterance(c, &spec, c).unwrap();
            assert_eq!(spike_rate(&s.feats), (c + 1) as f64);
        }
    }

    #[test]
    fn lengths_within_range() {
        let spec = CorpusSpec::for_domain(Domain::Finetune, 200, 3);
        let c = gen_corpus(&spec).unwrap();
        assert!(c.samples.iter().all(|s| (16..=48).contains(&s.feats.len())));
        assert_eq!(c.len(), 200);
    }

    #[test]
    fn bad_specs_rejected() {
        let mut spec = CorpusSpec::for_domain(Domain::Finetune, 10, 0);
        spec.shortcut_correlation = 1.5;
        assert!(gen_corpus(&spec).is_err());
        let mut spec = CorpusSpec::for_domain(Domain::Finetune, 10, 0);
        spec.len_min = 1;
        assert!(gen_corpus(&spec).is_err());
    }

    #[test]
    fn split_keeps_order() {
        let c = gen_corpus(&CorpusSpec::for_domain(Domain::Finetune, 20, 3)).unwrap();
        let (a, b) = c.split_at(5);
        assert_eq!(a.samples[..], c.samples[..5]);
        assert_eq!(b.len(), 15);
    }
}
