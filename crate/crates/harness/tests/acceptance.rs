//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line
//! with its measurement and runtime; the test fails if any criterion does.
//!
//! The criteria run one after another inside a single test so their
//! runtimes are not distorted by other tests competing for the CPU.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rrpo_core::autodiff::{finite_diff_check, RandomGraph, Tape, Var};
use rrpo_core::model::{ParamSet, RmDims, RmParams, RmVars};
use rrpo_core::policy::{decode, reward, PolicyDims, PolicyParams, PolicyVars, RewardSpec};
use rrpo_core::regularization::eam::{mixing_coefficient, segment_energy, target_energy};
use rrpo_core::regularization::*;
use rrpo_core::{Array, FeatureSequence, Rng};
use rrpo_harness::config::{NameList, RunConfig, SeedList};
use rrpo_harness::output::strip_timing;
use rrpo_harness::pipeline;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Run one criterion, print its line straight to stdout and return whether it passed.
fn criterion(n: usize, name: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let o = body();
    let took = t0.elapsed();
    let in_time = took <= limit;
    let pass = o.pass && in_time;
    let line = format!(
        "[{}] criterion {n} {name}: {} ({:.1}s, limit {}s{})\n",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", over time" }
    );
    // bypass the test harness capture so the line is always shown
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass
}

fn seq(rng: &mut Rng, len: usize, dim: usize, scale: f64) -> FeatureSequence {
    FeatureSequence::new(Array::new(
        &[len, dim],
        (0..len * dim).map(|_| scale * rng.normal()).collect(),
    ))
    .unwrap()
}

fn gradient_fidelity() -> Outcome {
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for k in 0..100 {
        let mut rng = Rng::new(2024, k);
        let (n_inputs, n_ops) = (1 + rng.below(3), 4 + rng.below(12));
        let g = RandomGraph::sample(&mut rng, n_inputs, n_ops);
        let xs = g.inputs(&mut rng);
        let r = finite_diff_check(|t, v| g.build(t, v), &xs, 1e-5, 1e-4);
        worst = worst.max(r.max_rel_err());
        if !r.passed() {
            failed.push(k);
        }
    }

    // full regularized objective: mixup replayed from a seed, FGM shifts pinned
    let dims = RmDims {
        feat: 5,
        hidden: 6,
        classes: 5,
    };
    let rm = RmParams::init(17, dims).unwrap();
    let mut rng = Rng::new(5, 5);
    let feats: Vec<Array> = (0..4)
        .map(|k| seq(&mut rng, 5 + 2 * k, 5, 1.0).into_frames())
        .collect();
    let labels = [4, 0, 2, 1];
    let cfg = SerConfig {
        flags: RegFlags::FULL,
        ..SerConfig::default()
    };
    let deltas = {
        let mut t = Tape::new();
        let rv = rm.bind(&mut t, true);
        let xs: Vec<Var> = feats.iter().map(|f| t.constant(f.clone())).collect();
        ser_loss(&mut t, &rv, &xs, &labels, &cfg, &mut Rng::new(31, 0), None)
            .unwrap()
            .deltas
    };
    let params: Vec<Array> = rm.tensors().into_iter().cloned().collect();
    let ser = finite_diff_check(
        |t, v| {
            let rv = RmVars::from_vars(dims, v.to_vec());
            let xs: Vec<Var> = feats.iter().map(|f| t.constant(f.clone())).collect();
            ser_loss(
                t,
                &rv,
                &xs,
                &labels,
                &cfg,
                &mut Rng::new(31, 0),
                Some(&deltas),
            )
            .unwrap()
            .loss
        },
        &params,
        1e-5,
        1e-4,
    );

    // policy -> Gumbel rollout -> decode -> frozen reward model, draws replayed
    let pdims = PolicyDims {
        vocab: 5,
        embed: 4,
        classes: 5,
        feat: 5,
    };
    let mut crng = Rng::new(8, 8);
    let codebook = Array::new(&[5, 5], (0..25).map(|_| crng.normal()).collect());
    let policy = PolicyParams::init(3, pdims, codebook).unwrap();
    let pparams: Vec<Array> = policy.tensors().into_iter().cloned().collect();
    let spec = RewardSpec::default();
    let pol = finite_diff_check(
        |t, v| {
            let pv = PolicyVars::from_vars(pdims, v.to_vec());
            let rv = rm.bind(t, false);
            let mut g = Rng::new(77, 1);
            let a = pv.rollout(t, 1, 3, 0.7, false, &mut g).unwrap();
            let b = pv.rollout(t, 3, 3, 0.7, false, &mut g).unwrap();
            let fa = decode(t, &a, pv.codebook()).unwrap();
            let fb = decode(t, &b, pv.codebook()).unwrap();
            reward(t, &rv, &[fa, fb], &[1, 3], &spec, &mut g).unwrap()
        },
        &pparams,
        1e-5,
        1e-4,
    );
    let pass = failed.is_empty() && worst < 1e-4 && ser.passed() && pol.passed();
    outcome(
        pass,
        format!(
            "random graphs max rel err {worst:.2e} ({} of 100 failed), regularized objective {:.2e}, policy reward {:.2e}",
            failed.len(),
            ser.max_rel_err(),
            pol.max_rel_err()
        ),
    )
}

fn closed_forms() -> Outcome {
    let mut bad = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            bad.push(name.to_string());
        }
    };
    let s = smooth_class(5, 0, 0.1).unwrap();
    check(
        "smoothing 0.92/0.02",
        (s.probs()[0] - 0.92).abs() <= 1e-12
            && s.probs()[1..].iter().all(|p| (p - 0.02).abs() <= 1e-12),
    );
    let s3 = smooth_class(3, 2, 0.3).unwrap();
    check(
        "smoothing K=3",
        (s3.probs()[2] - 0.8).abs() <= 1e-12 && (s3.probs()[0] - 0.1).abs() <= 1e-12,
    );

    let mut t = Tape::new();
    let z = t.constant(Array::row(&[0.4, -1.2, 2.0, 0.1, 0.0]));
    let own = smooth_class(5, 1, 0.1).unwrap();
    let paired = smooth_class(5, 3, 0.1).unwrap();
    let l_own = ls_loss(&mut t, z, &own);
    let l_paired = ls_loss(&mut t, z, &paired);
    let at0 = emo_loss(&mut t, &[z], &[own.clone()], &[paired.clone()], &[0.0]).unwrap();
    let at1 = emo_loss(&mut t, &[z], &[own.clone()], &[paired.clone()], &[1.0]).unwrap();
    let at_q = emo_loss(&mut t, &[z], &[own], &[paired], &[0.25]).unwrap();
    let (o, p) = (t.value(l_own).item(), t.value(l_paired).item());
    check(
        "interpolation at 0",
        (t.value(at0).item() - o).abs() <= 1e-12,
    );
    check(
        "interpolation at 1",
        (t.value(at1).item() - p).abs() <= 1e-12,
    );
    check(
        "interpolation at 1/4",
        (t.value(at_q).item() - (0.75 * o + 0.25 * p)).abs() <= 1e-12,
    );

    let mut rng = Rng::new(1, 1);
    for k in 0..50 {
        let (r, c) = (1 + rng.below(6), 1 + rng.below(6));
        let scale = 10f64.powi(k % 7 - 3);
        let g = Array::new(&[r, c], (0..r * c).map(|_| scale * rng.normal()).collect());
        let d = fgm_delta(&g, 0.5);
        if (d.l2_norm() - 0.5).abs() > 1e-9 {
            check("fgm norm", false);
        }
    }

    let e = t.scalar(1.25);
    let a = t.scalar(0.75);
    let l = combine(&mut t, e, a, 0.5);
    check(
        "objective algebra",
        (t.value(l).item() - 1.625).abs() <= 1e-12,
    );
    let l0 = combine(&mut t, e, a, 0.0);
    check("objective at alpha 0", t.value(l0).item() == 1.25);

    check(
        "lambda 0.2",
        (mixing_coefficient(4, 10, 1.0, target_energy(1.0, 0.0)) - 0.2).abs() <= 1e-12,
    );
    check(
        "lambda 0.4/11",
        (mixing_coefficient(4, 10, 1.0, target_energy(1.0, 10.0)) - 0.036_363_636_363_636).abs()
            <= 1e-12,
    );
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "all identities hold".to_string()
        } else {
            format!("failed: {}", bad.join(", "))
        },
    )
}

fn random_batch(rng: &mut Rng) -> (Vec<FeatureSequence>, Vec<usize>) {
    let b = 2 + rng.below(6);
    let dim = 1 + rng.below(6);
    let feats = (0..b)
        .map(|_| {
            let len = 2 + rng.below(30);
            let scale = 10f64.powf(rng.uniform_range(-3.0, 3.0));
            seq(rng, len, dim, scale)
        })
        .collect();
    (feats, (0..b).map(|_| rng.below(5)).collect())
}

fn eam_properties() -> Outcome {
    const TRIALS: u64 = 1000;
    let cfg = EamConfig::default();
    let (mut locality, mut energy, mut bounds, mut monotone, mut skip) = (0, 0, 0, 0, 0);
    let mut mixed_pairs = 0;
    for trial in 0..TRIALS {
        let mut rng = Rng::new(trial, 40);
        let (feats, labels) = random_batch(&mut rng);
        let mix = eam_mix(&feats, &labels, 5, 0.1, &cfg, &mut rng).unwrap();
        let mut local_ok = true;
        let mut energy_ok = true;
        let mut bounds_ok = true;
        for (i, a) in mix.audit.iter().enumerate() {
            let (orig, out) = (feats[i].frames(), mix.mixed[i].frames());
            for t in 0..feats[i].len() {
                if (a.skipped || t < a.b_i || t >= a.b_i + a.l_mix)
                    && orig.row_slice(t) != out.row_slice(t)
                {
                    local_ok = false;
                }
            }
            let lam = mix.lambdas[i];
            if !(0.0..=1.0).contains(&lam) {
                bounds_ok = false;
            }
            if !a.skipped {
                mixed_pairs += 1;
                let j = &feats[a.partner];
                let scale = (a.e_j_target / a.e_j).sqrt();
                let sq: f64 = (0..a.l_mix)
                    .flat_map(|t| j.frame(a.b_j + t).iter())
                    .map(|v| (scale * v).powi(2))
                    .sum();
                let e = sq / (a.l_mix * j.dim()) as f64;
                if (e - a.e_j_target).abs() > 1e-9 * a.e_j_target
                    || (a.e_i - segment_energy(&feats[i], a.b_i, a.l_mix)).abs() > 1e-12 * a.e_i
                {
                    energy_ok = false;
                }
            }
        }
        locality += local_ok as usize;
        energy += energy_ok as usize;
        bounds += bounds_ok as usize;

        let (li, lj) = (2 + rng.below(30), 2 + rng.below(30));
        let fi = seq(&mut rng, li, 3, 1.0);
        let fj = seq(&mut rng, lj, 3, 1.0);
        let l_mix = 1 + rng.below(li.min(lj));
        let b_i = rng.below(li - l_mix + 1);
        let b_j = rng.below(lj - l_mix + 1);
        let r1 = rng.uniform_range(-20.0, 30.0);
        let r2 = r1 + rng.uniform_range(1e-3, 20.0);
        let lam = |r: f64| {
            mix_pair(
                &fi,
                &fj,
                &MixDraw {
                    partner: 1,
                    l_mix,
                    b_i,
                    b_j,
                    r,
                },
                &cfg,
            )
            .1
        };
        monotone += (lam(r2) < lam(r1)) as usize;

        let silent = FeatureSequence::new(Array::full(&[lj, 3], 1e-7)).unwrap();
        let (m, lam0, audit) = mix_pair(
            &fi,
            &silent,
            &MixDraw {
                partner: 1,
                l_mix,
                b_i,
                b_j,
                r: r1,
            },
            &cfg,
        );
        skip += (audit.skipped && lam0 == 0.0 && m == fi) as usize;
    }
    let n = TRIALS as usize;
    let pass = [locality, energy, bounds, monotone, skip]
        .iter()
        .all(|&c| c == n);
    outcome(
        pass,
        format!(
            "{TRIALS} trials each: locality {locality}, energy {energy} ({mixed_pairs} mixed pairs), lambda in [0,1] {bounds}, monotone in r {monotone}, silent skip {skip}"
        ),
    )
}

fn fgm_ascent() -> Outcome {
    let trials = 200;
    let mut up = 0;
    for trial in 0..trials {
        let mut rng = Rng::new(trial, 55);
        let rm = RmParams::init(
            trial,
            RmDims {
                feat: 8,
                hidden: 8,
                classes: 5,
            },
        )
        .unwrap();
        let len = 3 + rng.below(30);
        let f = seq(&mut rng, len, 8, 1.0);
        let target = smooth_class(5, rng.below(5), 0.1).unwrap();
        let mut t = Tape::new();
        let rv = rm.bind(&mut t, false);
        let x = t.constant(f.into_frames());
        let h = rv.encode(&mut t, x).unwrap();
        let z = rv.classify(&mut t, h);
        let clean = ls_loss(&mut t, z, &target);
        let g = t.gradients(clean, &[h]).unwrap();
        let (shifted, _) = fgm_perturb(&mut t, &[h], &g, 1e-3);
        let z2 = rv.classify(&mut t, shifted[0]);
        let adv = ls_loss(&mut t, z2, &target);
        up += (t.value(adv).item() >= t.value(clean).item()) as usize;
    }
    outcome(
        up * 100 >= 95 * trials as usize,
        format!("perturbed loss >= clean loss in {up}/{trials} trials"),
    )
}

fn default_config(dir: &Path) -> RunConfig {
    RunConfig {
        out_dir: dir.display().to_string(),
        ..RunConfig::default()
    }
}

/// Corpora, oracle and vanilla reward model shared by the hacking and ablation runs.
fn prepare(cfg: &RunConfig) {
    pipeline::gen_data(cfg, false).unwrap();
    pipeline::run_train_oracle(cfg, false).unwrap();
    pipeline::pretrain_rm(cfg, false).unwrap();
}

fn hacking(cfg: &RunConfig) -> Outcome {
    pipeline::finetune_rm(cfg, RegFlags::FULL, false).unwrap();
    let mut c = cfg.clone();
    for &seed in &cfg.seeds.0 {
        for rm in ["vanilla", "full"] {
            c.seed = seed;
            c.policy_rm = rm.into();
            pipeline::train_policy(&c, false).unwrap();
        }
    }
    let c = RunConfig {
        eval_rms: NameList(vec!["vanilla".into(), "full".into()]),
        ..cfg.clone()
    };
    let res = pipeline::eval(&c, false).unwrap();
    let band = res.natural_band;
    let (v_r, v_acc, v_e) = res.mean("vanilla", "rrpo").unwrap();
    let (s_r, _, _) = res.mean("vanilla", "sft").unwrap();
    let (_, f_acc, f_e) = res.mean("full", "rrpo").unwrap();
    let a = v_r >= s_r;
    let b = v_acc <= f_acc - 0.15;
    let c3 = v_e >= 3.0 * band;
    let d = f_e <= 1.5 * band;
    let gain = v_r - s_r >= 1.0;
    outcome(
        a && b && c3 && d && gain,
        format!(
            "(a) vanilla reward {v_r:.4} vs SFT {s_r:.4} [{}]; (b) oracle acc vanilla {v_acc:.3} vs robust {f_acc:.3} [{}]; \
             (c) vanilla energy {:.2}x band [{}]; robust energy {:.2}x band [{}]; \
             reward gain over {} RRPO steps {:.2} nat [{}]; band {band:.4}, seeds {}",
            ok(a),
            ok(b),
            v_e / band,
            ok(c3),
            f_e / band,
            ok(d),
            cfg.rrpo_steps,
            v_r - s_r,
            ok(gain),
            cfg.seeds
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "no"
    }
}

fn ablation(cfg: &RunConfig) -> Outcome {
    let m = pipeline::ablate(cfg, false, 1).unwrap();
    let shifted = |f| m.mean(f).map_or(f64::NAN, |(_, s)| s);
    let (base, ls, eam, adv) = (
        shifted(RegFlags::NONE),
        shifted(RegFlags::LS),
        shifted(RegFlags::LS_EAM),
        shifted(RegFlags::FULL),
    );
    let g1 = 100.0 * (ls - base);
    let g2 = 100.0 * (eam - ls);
    outcome(
        m.failures() == 0 && g1 >= 1.0 && g2 >= 1.0,
        format!(
            "eval-shifted accuracy baseline {base:.4}, +ls {ls:.4} ({g1:+.2} pts), +ls+eam {eam:.4} ({g2:+.2} pts), +adv {adv:.4} (recorded only), seeds {}",
            cfg.seeds
        ),
    )
}

const TINY: &[(&str, &str)] = &[
    ("seeds", "0,1"),
    ("pretrain_samples", "200"),
    ("finetune_samples", "48"),
    ("heldout_samples", "40"),
    ("eval_samples", "40"),
    ("oracle_samples", "100"),
    ("pretrain_steps", "30"),
    ("finetune_steps", "10"),
    ("oracle_max_steps", "60"),
    ("oracle_min_accuracy", "0"),
    ("sft_steps", "6"),
    ("rrpo_steps", "6"),
    ("rollout_steps", "5"),
    ("rollout_batch", "3"),
    ("codebook_iters", "3"),
    ("eval_rollouts", "6"),
    ("log_every", "2"),
];

fn run_everything(dir: &Path, jobs: usize) {
    let text: String = TINY.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let mut cfg =
        RunConfig::parse(&format!("{text}out_dir = {}\n", dir.display()), "tiny").unwrap();
    prepare(&cfg);
    for flags in RegFlags::LADDER {
        pipeline::finetune_rm(&cfg, flags, false).unwrap();
    }
    for seed in [0, 1] {
        for rm in ["vanilla", "full"] {
            cfg.seed = seed;
            cfg.policy_rm = rm.into();
            pipeline::train_policy(&cfg, false).unwrap();
        }
    }
    cfg.seed = 0;
    pipeline::eval(&cfg, false).unwrap();
    pipeline::ablate(&cfg, false, jobs).unwrap();
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for sub in ["data", "models", "metrics", "summary"] {
        let mut v: Vec<_> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        out.extend(v);
    }
    out
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_everything(a.path(), 1);
    run_everything(b.path(), 2);
    let (fa, fb) = (files(a.path()), files(b.path()));
    if fa.len() != fb.len() {
        return outcome(false, format!("{} vs {} files", fa.len(), fb.len()));
    }
    let mut differing = Vec::new();
    for (x, y) in fa.iter().zip(&fb) {
        let name = x.strip_prefix(a.path()).unwrap().display().to_string();
        let same = match x.extension().and_then(|e| e.to_str()) {
            Some("csv") => {
                strip_timing(&fs::read_to_string(x).unwrap()).unwrap()
                    == strip_timing(&fs::read_to_string(y).unwrap()).unwrap()
            }
            // sidecars and summaries echo out_dir, which differs between the two runs
            Some("meta") | Some("txt") => {
                let norm = |p: &Path, root: &Path| {
                    fs::read_to_string(p)
                        .unwrap()
                        .replace(&root.display().to_string(), "<out>")
                };
                norm(x, a.path()) == norm(y, b.path())
            }
            _ => fs::read(x).unwrap() == fs::read(y).unwrap(),
        };
        if !same {
            differing.push(name);
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} artifacts identical across two runs (ablation with 1 and 2 workers)",
                fa.len()
            )
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    results.push(criterion(
        1,
        "gradient fidelity",
        Duration::from_secs(60),
        gradient_fidelity,
    ));
    results.push(criterion(
        2,
        "closed forms",
        Duration::from_secs(5),
        closed_forms,
    ));
    results.push(criterion(
        3,
        "EAM properties",
        Duration::from_secs(30),
        eam_properties,
    ));
    results.push(criterion(
        4,
        "FGM ascent",
        Duration::from_secs(30),
        fgm_ascent,
    ));

    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seeds: SeedList(vec![0, 1, 2, 3, 4]),
        ..default_config(dir.path())
    };
    prepare(&cfg);
    results.push(criterion(
        5,
        "hacking reproduction",
        Duration::from_secs(15 * 60),
        || hacking(&cfg),
    ));
    results.push(criterion(
        6,
        "ablation trend",
        Duration::from_secs(10 * 60),
        || ablation(&cfg),
    ));
    results.push(criterion(
        7,
        "determinism",
        Duration::from_secs(10 * 60),
        determinism,
    ));

    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
