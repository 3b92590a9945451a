use rrpo_core::autodiff::{finite_diff_check, Tape, Var};
use rrpo_core::corpus::{gen_corpus, CorpusSpec, Domain, Sample};
use rrpo_core::model::{ParamSet, RmDims, RmParams};
use rrpo_core::optim::AdamConfig;
use rrpo_core::policy::*;
use rrpo_core::regularization::SerConfig;
use rrpo_core::{Array, Rng};

fn toy_policy(seed: u64, vocab: usize, feat: usize) -> PolicyParams {
    let dims = PolicyDims {
        vocab,
        embed: 5,
        classes: 3,
        feat,
    };
    let mut rng = Rng::new(seed, 3);
    let cb = Array::new(
        &[vocab, feat],
        (0..vocab * feat).map(|_| rng.normal()).collect(),
    );
    PolicyParams::init(seed, dims, cb).unwrap()
}

fn toy_rm(seed: u64, feat: usize) -> RmParams {
    RmParams::init(
        seed,
        RmDims {
            feat,
            hidden: 8,
            classes: 3,
        },
    )
    .unwrap()
}

/// Policy vars with the tensor at `slot` replaced by `var`.
fn policy_with(tape: &mut Tape, p: &PolicyParams, slot: usize, var: Var) -> PolicyVars {
    let vars = p
        .tensors()
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            if i == slot {
                var
            } else {
                tape.constant(a.clone())
            }
        })
        .collect();
    PolicyVars::from_vars(p.dims, vars)
}

#[test]
fn gumbel_max_frequencies_match_softmax() {
    let logits = [1.0, 0.0, 0.0];
    let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
    let mut counts = [0usize; 3];
    let mut rng = Rng::new(2024, 7);
    let n = 20_000;
    for _ in 0..n {
        let g = gumbel_noise(3, &mut rng);
        let k = (0..3)
            .max_by(|&a, &b| (logits[a] + g[a]).total_cmp(&(logits[b] + g[b])))
            .unwrap();
        counts[k] += 1;
    }
    for k in 0..3 {
        let p = logits[k].exp() / z;
        assert!(
            (counts[k] as f64 / n as f64 - p).abs() < 0.02,
            "class {k}: {counts:?}"
        );
    }
}

#[test]
fn gumbel_draws_are_addressable() {
    let a = gumbel_softmax_values(&[0.5, -0.5, 0.1], 0.7, &mut Rng::at(5, 6, 100), false).unwrap();
    let b = gumbel_softmax_values(&[0.5, -0.5, 0.1], 0.7, &mut Rng::at(5, 6, 100), false).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_step_rollout_gradient_matches_fd() {
    let p = toy_policy(1, 6, 4);
    let w = Array::new(&[1, 4], vec![0.3, -1.1, 0.7, 0.2]);
    let report = finite_diff_check(
        |t, v| {
            let pv = policy_with(t, &p, 5, v[0]);
            let traj = pv
                .rollout(t, 2, 1, 0.8, false, &mut Rng::new(11, 12))
                .unwrap();
            let f = decode(t, &traj, pv.codebook()).unwrap();
            let wc = t.constant(w.clone());
            let m = t.mul(f, wc);
            t.sum(m)
        },
        &[p.w_out.clone()],
        1e-5,
        1e-4,
    );
    assert!(report.passed(), "{report:?}");
}

#[test]
fn decode_gradient_is_codebook_action() {
    let p = toy_policy(4, 5, 3);
    let mut rng = Rng::new(0, 1);
    let soft = Array::new(&[3, 5], (0..15).map(|_| rng.uniform()).collect());
    let w = Array::new(&[3, 3], (0..9).map(|_| rng.normal()).collect());
    let report = finite_diff_check(
        |t, v| {
            let cb = t.constant(p.codebook.clone());
            let traj = Trajectory {
                soft_tokens: v[0],
                condition: 0,
                temperature: 1.0,
            };
            let f = decode(t, &traj, cb).unwrap();
            let wc = t.constant(w.clone());
            let m = t.mul(f, wc);
            t.sum(m)
        },
        &[soft.clone()],
        1e-5,
        1e-4,
    );
    assert!(report.passed(), "{report:?}");
    // Exact gradient is W C^T.
    let mut t = Tape::new();
    let s = t.leaf(soft);
    let cb = t.constant(p.codebook.clone());
    let f = decode(
        &mut t,
        &Trajectory {
            soft_tokens: s,
            condition: 0,
            temperature: 1.0,
        },
        cb,
    )
    .unwrap();
    let wc = t.constant(w.clone());
    let m = t.mul(f, wc);
    let root = t.sum(m);
    t.backward(root).unwrap();
    let expect = w.matmul(&p.codebook.transpose());
    for (a, b) in t.grad_of(s).data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn reward_bounds() {
    let rm = RmParams::zeros(RmDims {
        feat: 4,
        hidden: 8,
        classes: 5,
    });
    let mut t = Tape::new();
    let rv = rm.bind(&mut t, false);
    let f = t.constant(Array::ones(&[6, 4]));
    let spec = RewardSpec {
        eps_ls: 0.1,
        ..RewardSpec::default()
    };
    let r = reward(&mut t, &rv, &[f], &[3], &spec, &mut Rng::new(0, 0)).unwrap();
    assert!((t.value(r).item() + 5f64.ln()).abs() < 1e-12);

    let mut confident = RmParams::zeros(RmDims {
        feat: 4,
        hidden: 8,
        classes: 5,
    });
    confident.b_head = Array::row(&[-40.0, -40.0, 40.0, -40.0, -40.0]);
    let mut t = Tape::new();
    let rv = confident.bind(&mut t, false);
    let f = t.constant(Array::ones(&[6, 4]));
    let spec = RewardSpec {
        eps_ls: 0.0,
        ..RewardSpec::default()
    };
    let r = reward(&mut t, &rv, &[f], &[2], &spec, &mut Rng::new(0, 0)).unwrap();
    assert!(t.value(r).item().abs() < 1e-12);
    assert!(t.value(r).item() <= 0.0);
}

fn reward_for_target_logit(z: f64, eps: f64) -> f64 {
    let mut rm = RmParams::zeros(RmDims {
        feat: 4,
        hidden: 8,
        classes: 5,
    });
    rm.b_head = Array::row(&[0.0, z, 0.0, -0.3, 0.1]);
    let mut t = Tape::new();
    let rv = rm.bind(&mut t, false);
    let f = t.constant(Array::ones(&[6, 4]));
    let spec = RewardSpec {
        eps_ls: eps,
        ..RewardSpec::default()
    };
    let r = reward(&mut t, &rv, &[f], &[1], &spec, &mut Rng::new(0, 0)).unwrap();
    t.value(r).item()
}

#[test]
fn reward_increases_with_target_confidence() {
    // Plain cross-entropy: strictly increasing over the whole range.
    let mut last = f64::NEG_INFINITY;
    for k in 0..30 {
        let r = reward_for_target_logit(-5.0 + 0.5 * k as f64, 0.0);
        assert!(r > last, "step {k}: {r} <= {last}");
        last = r;
    }
    // Smoothed target: increasing while the target probability is below 1 - eps + eps / K.
    let mut last = f64::NEG_INFINITY;
    for k in 0..20 {
        let r = reward_for_target_logit(-3.0 + 0.3 * k as f64, 0.1);
        assert!(r > last, "smoothed step {k}: {r} <= {last}");
        last = r;
    }
    // Past that point smoothing caps the reward.
    assert!(reward_for_target_logit(30.0, 0.1) < reward_for_target_logit(3.0, 0.1));
}

#[test]
fn reward_gradient_wrt_frames_matches_fd() {
    let rm = toy_rm(3, 4);
    let mut rng = Rng::new(9, 9);
    let frames = Array::new(&[5, 4], (0..20).map(|_| rng.normal()).collect());
    let spec = RewardSpec::default();
    let report = finite_diff_check(
        |t, v| {
            let rv = rm.bind(t, false);
            reward(t, &rv, &[v[0]], &[1], &spec, &mut Rng::new(0, 0)).unwrap()
        },
        &[frames],
        1e-5,
        1e-4,
    );
    assert!(report.passed(), "{report:?}");
}

#[test]
fn literal_mode_needs_a_batch() {
    let rm = toy_rm(3, 4);
    let mut t = Tape::new();
    let rv = rm.bind(&mut t, false);
    let f = t.constant(Array::ones(&[6, 4]));
    let spec = RewardSpec {
        mode: RewardMode::BatchSer,
        ser: SerConfig {
            classes: 3,
            ..SerConfig::default()
        },
        ..RewardSpec::default()
    };
    assert!(reward(&mut t, &rv, &[f], &[0], &spec, &mut Rng::new(0, 0)).is_err());
    let g = t.constant(Array::full(&[7, 4], 0.5));
    let r = reward(&mut t, &rv, &[f, g], &[0, 2], &spec, &mut Rng::new(0, 0)).unwrap();
    assert!(t.value(r).item().is_finite());
}

/// Full chain: policy parameters -> Gumbel rollout -> decode -> frozen RM -> reward.
#[test]
fn end_to_end_reward_gradient_matches_fd() {
    let p = toy_policy(6, 4, 3);
    let rm = toy_rm(8, 3);
    let spec = RewardSpec::default();
    for slot in [0usize, 1, 2, 3, 5, 6, 7] {
        let report = finite_diff_check(
            |t, v| {
                let pv = policy_with(t, &p, slot, v[0]);
                let rv = rm.bind(t, false);
                let mut rng = Rng::new(21, 22);
                let a = pv.rollout(t, 0, 2, 1.0, false, &mut rng).unwrap();
                let b = pv.rollout(t, 2, 2, 1.0, false, &mut rng).unwrap();
                let fa = decode(t, &a, pv.codebook()).unwrap();
                let fb = decode(t, &b, pv.codebook()).unwrap();
                reward(t, &rv, &[fa, fb], &[0, 2], &spec, &mut rng).unwrap()
            },
            &[p.tensors()[slot].clone()],
            1e-5,
            1e-4,
        );
        assert!(report.passed(), "tensor {slot}: {report:?}");
    }
}

#[test]
fn rrpo_step_leaves_rm_untouched_and_lr_zero_is_noop() {
    let p0 = toy_policy(2, 6, 4);
    let rm = toy_rm(5, 4);
    let rm_before = rm.clone();
    let spec = RewardSpec::default();
    let cfg = RrpoConfig {
        batch: 3,
        steps: 4,
        ..RrpoConfig::default()
    };

    let mut p = p0.clone();
    let mut opt = policy_optimizer(
        &p,
        AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        },
    );
    let rep = rrpo_step(&mut p, &rm, &spec, &mut opt, &cfg, &mut Rng::new(1, 1)).unwrap();
    assert!(!rep.skipped);
    assert_eq!(p, p0);

    let mut opt = policy_optimizer(&p, AdamConfig::default());
    rrpo_step(&mut p, &rm, &spec, &mut opt, &cfg, &mut Rng::new(1, 1)).unwrap();
    assert_ne!(p, p0);
    assert_eq!(rm, rm_before);
    assert!(p
        .codebook
        .data()
        .chunks(4)
        .all(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt() <= MAX_CODEBOOK_NORM + 1e-12));
}

#[test]
fn rrpo_step_is_deterministic() {
    let rm = toy_rm(5, 4);
    let run = || {
        let mut p = toy_policy(2, 6, 4);
        let mut opt = policy_optimizer(&p, AdamConfig::default());
        let cfg = RrpoConfig {
            batch: 2,
            steps: 3,
            ..RrpoConfig::default()
        };
        let mut rng = Rng::new(4, 4);
        let reps: Vec<f64> = (0..3)
            .map(|_| {
                rrpo_step(
                    &mut p,
                    &rm,
                    &RewardSpec::default(),
                    &mut opt,
                    &cfg,
                    &mut rng,
                )
                .unwrap()
                .reward
            })
            .collect();
        (p, reps)
    };
    assert_eq!(run(), run());
}

fn sft_fixture() -> (PolicyParams, Vec<Sample>) {
    let corpus = gen_corpus(&CorpusSpec::for_domain(Domain::Finetune, 256, 12)).unwrap();
    let cb = kmeans_codebook(&corpus, 32, 10, &mut Rng::new(0, 5)).unwrap();
    (
        PolicyParams::init(3, PolicyDims::default(), cb).unwrap(),
        corpus.samples,
    )
}

#[test]
fn sft_initial_loss_near_ln_vocab_and_decreasing() {
    let (mut p, data) = sft_fixture();
    let mut opt = policy_optimizer(
        &p,
        AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
    );
    let mut rng = Rng::new(8, 8);
    let mut losses = Vec::new();
    for _ in 0..200 {
        let batch: Vec<&Sample> = (0..4).map(|_| &data[rng.below(data.len())]).collect();
        losses.push(sft_step(&mut p, &mut opt, &batch, 5.0).unwrap().loss);
    }
    assert!(
        (losses[0] - 32f64.ln()).abs() < 0.5,
        "initial loss {}",
        losses[0]
    );
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < head - 0.1, "loss {head} -> {tail}");
}

#[test]
fn untrained_policy_scores_near_chance() {
    let (p, _) = sft_fixture();
    let rm = RmParams::zeros(RmDims::default());
    let oracle = rrpo_core::corpus::OracleJudge {
        dim: 16,
        params: RmParams::init(
            1,
            RmDims {
                feat: 15,
                hidden: 8,
                classes: 5,
            },
        )
        .unwrap(),
    };
    let rep = hacking_gap(&p, &rm, &oracle, 100, 24, 0.1, &mut Rng::new(3, 3)).unwrap();
    assert!((rep.mean_reward + 5f64.ln()).abs() < 1e-9);
    assert!(rep.oracle_accuracy < 0.45, "{rep:?}");
}
