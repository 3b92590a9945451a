//! Three small views onto the core library, exported to JavaScript.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`
//! and serve `crates/web/www`.

use wasm_bindgen::prelude::*;

use rrpo_core::autodiff::Tape;
use rrpo_core::corpus::{gen_corpus, CorpusSpec, Domain};
use rrpo_core::policy::gumbel_softmax_values;
use rrpo_core::regularization::{ls_loss, mix_pair, plan_mix, smooth_class, EamConfig};
use rrpo_core::{Array, FeatureSequence, Rng};

/// Monte Carlo summary of relaxed samples from one categorical.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct GumbelStats {
    probs: Vec<f64>,
    mean_sample: Vec<f64>,
    argmax_freq: Vec<f64>,
    example: Vec<f64>,
}

#[wasm_bindgen]
impl GumbelStats {
    /// `softmax(logits)`, the law of the hard sample.
    #[wasm_bindgen(getter)]
    pub fn probs(&self) -> Vec<f64> {
        self.probs.clone()
    }

    #[wasm_bindgen(getter, js_name = meanSample)]
    pub fn mean_sample(&self) -> Vec<f64> {
        self.mean_sample.clone()
    }

    #[wasm_bindgen(getter, js_name = argmaxFreq)]
    pub fn argmax_freq(&self) -> Vec<f64> {
        self.argmax_freq.clone()
    }

    /// The first relaxed draw.
    #[wasm_bindgen(getter)]
    pub fn example(&self) -> Vec<f64> {
        self.example.clone()
    }
}

/// Draw `draws` Gumbel-Softmax samples at `temperature`.
#[wasm_bindgen(js_name = gumbelExplore)]
pub fn gumbel_explore(
    logits: Vec<f64>,
    temperature: f64,
    draws: u32,
    seed: u64,
) -> Result<GumbelStats, JsError> {
    if logits.is_empty() || draws == 0 {
        return Err(JsError::new("need at least one logit and one draw"));
    }
    let k = logits.len();
    let mut rng = Rng::new(seed, 0);
    let mut mean = vec![0.0; k];
    let mut freq = vec![0.0; k];
    let mut example = Vec::new();
    for d in 0..draws {
        let y = gumbel_softmax_values(&logits, temperature, &mut rng, false)
            .map_err(|e| JsError::new(&e.to_string()))?;
        for (m, v) in mean.iter_mut().zip(&y) {
            *m += v / draws as f64;
        }
        freq[rrpo_core::array::argmax(&y)] += 1.0 / draws as f64;
        if d == 0 {
            example = y;
        }
    }
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(GumbelStats {
        probs: e.iter().map(|v| v / z).collect(),
        mean_sample: mean,
        argmax_freq: freq,
        example,
    })
}

/// One energy-adaptive mix of two synthetic utterances.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct MixView {
    base: Vec<f64>,
    partner: Vec<f64>,
    mixed: Vec<f64>,
    start: usize,
    len: usize,
    lambda: f64,
    labels: Vec<u32>,
}

#[wasm_bindgen]
impl MixView {
    /// Per-frame energy of the base utterance.
    #[wasm_bindgen(getter)]
    pub fn base(&self) -> Vec<f64> {
        self.base.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn partner(&self) -> Vec<f64> {
        self.partner.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mixed(&self) -> Vec<f64> {
        self.mixed.clone()
    }

    /// First mixed frame of the base utterance.
    #[wasm_bindgen(getter)]
    pub fn start(&self) -> usize {
        self.start
    }

    #[wasm_bindgen(getter)]
    pub fn len(&self) -> usize {
        self.len
    }

    #[wasm_bindgen(getter)]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Emotion classes of base and partner.
    #[wasm_bindgen(getter)]
    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }
}

fn frame_energy(f: &FeatureSequence) -> Vec<f64> {
    (0..f.len())
        .map(|t| f.frame(t).iter().map(|v| v * v).sum::<f64>() / f.dim() as f64)
        .collect()
}

/// Mix utterance 1 into utterance 0 of a two-sample corpus at ratio `r_db`.
#[wasm_bindgen(js_name = mixDemo)]
pub fn mix_demo(seed: u64, r_db: f64) -> Result<MixView, JsError> {
    let err = |e: rrpo_core::Error| JsError::new(&e.to_string());
    let corpus = gen_corpus(&CorpusSpec::for_domain(Domain::Finetune, 2, seed)).map_err(err)?;
    let (a, b) = (&corpus.samples[0], &corpus.samples[1]);
    let cfg = EamConfig {
        r_min: r_db,
        r_max: r_db,
        ..EamConfig::default()
    };
    let mut rng = Rng::new(seed, 1);
    let draw = loop {
        let plan = plan_mix(&[a.feats.len(), b.feats.len()], &cfg, &mut rng).map_err(err)?;
        if plan[0].partner == 1 {
            break plan[0].clone();
        }
    };
    let (mixed, lambda, audit) = mix_pair(&a.feats, &b.feats, &draw, &cfg);
    Ok(MixView {
        base: frame_energy(&a.feats),
        partner: frame_energy(&b.feats),
        mixed: frame_energy(&mixed),
        start: audit.b_i,
        len: audit.l_mix,
        lambda,
        labels: vec![a.label as u32, b.label as u32],
    })
}

/// Smoothed cross-entropy as the target logit sweeps `[-range, range]` with
/// the other logits at zero. Returns `points` pairs `(logit, loss)` flattened.
#[wasm_bindgen(js_name = smoothingCurve)]
pub fn smoothing_curve(
    eps: f64,
    classes: usize,
    range: f64,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    if classes < 2 || points < 2 {
        return Err(JsError::new("need at least 2 classes and 2 points"));
    }
    let target = smooth_class(classes, 0, eps).map_err(|e| JsError::new(&e.to_string()))?;
    let mut out = Vec::with_capacity(2 * points);
    for i in 0..points {
        let z = -range + 2.0 * range * i as f64 / (points - 1) as f64;
        let mut logits = vec![0.0; classes];
        logits[0] = z;
        out.push(z);
        let mut tape = Tape::new();
        let x = tape.constant(Array::row(&logits));
        let loss = ls_loss(&mut tape, x, &target);
        out.push(tape.value(loss).item());
    }
    Ok(out)
}
