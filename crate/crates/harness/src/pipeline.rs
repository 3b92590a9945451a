//! The pipeline commands. Each reads and writes files under `out_dir`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{debug, info, warn};

use rrpo_core::corpus::{
    gen_corpus, natural_band, read_corpus, train_oracle, write_corpus, Corpus, CorpusSpec, Domain,
    OracleConfig, OracleJudge, Sample,
};
use rrpo_core::model::{RmDims, RmParams};
use rrpo_core::optim::AdamConfig;
use rrpo_core::policy::{
    hacking_gap, kmeans_codebook, policy_optimizer, rrpo_step, sft_step, HackingReport, PolicyDims,
    PolicyParams, RewardSpec, RrpoConfig, CODEBOOK,
};
use rrpo_core::regularization::{AdvConfig, EamConfig, RegFlags, SerConfig};
use rrpo_core::rng::mix64;
use rrpo_core::train::{accuracy, fit_rm, FitConfig};
use rrpo_core::Rng;

use crate::config::{RewardEps, RunConfig};
use crate::output::{num, prepare, read_meta_value, write_meta, write_summary, MetricsWriter};

/// Where each artifact lives under `out_dir`.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout {
            root: PathBuf::from(&cfg.out_dir),
        }
    }

    pub fn corpus(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.corp"))
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.ckpt"))
    }

    pub fn metrics(&self, name: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{name}.csv"))
    }

    pub fn summary(&self, name: &str) -> PathBuf {
        self.root.join("summary").join(format!("{name}.txt"))
    }
}

/// The corpora written by `gen-data`.
pub const CORPORA: [&str; 5] = ["pretrain", "finetune", "heldout", "eval-shifted", "oracle"];

fn corpus_spec(cfg: &RunConfig, name: &str) -> CorpusSpec {
    let role = CORPORA
        .iter()
        .position(|&c| c == name)
        .expect("known corpus") as u64;
    let seed = mix64(cfg.seed ^ (role << 40));
    let (domain, n) = match name {
        "pretrain" => (Domain::Pretrain, cfg.pretrain_samples),
        "finetune" => (Domain::Finetune, cfg.finetune_samples),
        "heldout" => (Domain::Finetune, cfg.heldout_samples),
        "eval-shifted" => (Domain::EvalShifted, cfg.eval_samples),
        _ => (Domain::Finetune, cfg.oracle_samples),
    };
    let mut spec = CorpusSpec::for_domain(domain, n, seed);
    match domain {
        Domain::Pretrain => {
            spec.shortcut_correlation = cfg.pretrain_correlation;
            spec.signal_scale = cfg.pretrain_signal;
        }
        Domain::Finetune => spec.shortcut_correlation = cfg.finetune_correlation,
        Domain::EvalShifted => {
            spec.shortcut_correlation = cfg.finetune_correlation;
            spec.noise_scale = cfg.eval_noise_scale;
            spec.scale_jitter = cfg.eval_scale_jitter;
        }
    }
    spec
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let f = File::open(path)
        .with_context(|| format!("opening corpus {} (run gen-data first)", path.display()))?;
    Ok(read_corpus(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?)
}

pub fn load_rm(path: &Path) -> Result<RmParams> {
    let f = File::open(path).with_context(|| format!("opening reward model {}", path.display()))?;
    Ok(RmParams::load(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?)
}

pub fn load_policy(path: &Path) -> Result<PolicyParams> {
    let f = File::open(path).with_context(|| format!("opening policy {}", path.display()))?;
    Ok(PolicyParams::load(BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))?)
}

pub fn load_oracle(path: &Path) -> Result<OracleJudge> {
    let f = File::open(path).with_context(|| format!("opening oracle {}", path.display()))?;
    Ok(OracleJudge::load(BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))?)
}

fn create(path: &Path, force: bool) -> Result<BufWriter<File>> {
    prepare(path, force)?;
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn ms(t: Instant) -> String {
    t.elapsed().as_millis().to_string()
}

pub fn gen_data(cfg: &RunConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    for name in CORPORA {
        let spec = corpus_spec(cfg, name);
        let corpus = gen_corpus(&spec)?;
        let path = layout.corpus(name);
        write_corpus(create(&path, force)?, &corpus)?;
        write_meta(
            &path,
            "gen-data",
            cfg,
            &[
                ("domain", spec.domain.name().to_string()),
                ("n_samples", spec.n_samples.to_string()),
                ("corpus_seed", spec.seed.to_string()),
                (
                    "shortcut_correlation",
                    spec.shortcut_correlation.to_string(),
                ),
                ("signal_scale", spec.signal_scale.to_string()),
                ("noise_scale", spec.noise_scale.to_string()),
                ("scale_jitter", spec.scale_jitter.to_string()),
                ("natural_band", num(natural_band(&corpus))),
            ],
        )?;
        info!(
            "wrote {} ({} samples, {})",
            path.display(),
            corpus.len(),
            spec.domain.name()
        );
    }
    Ok(())
}

pub fn run_train_oracle(cfg: &RunConfig, force: bool) -> Result<f64> {
    let layout = Layout::new(cfg);
    let train = load_corpus(&layout.corpus("oracle"))?;
    let held = load_corpus(&layout.corpus("heldout"))?;
    let ocfg = OracleConfig {
        max_steps: cfg.oracle_max_steps,
        min_accuracy: cfg.oracle_min_accuracy,
        hidden: cfg.oracle_hidden,
        batch: cfg.batch,
        ..OracleConfig::default()
    };
    let (oracle, report) = train_oracle(&train, &held, &ocfg, cfg.seed)?;
    let path = layout.model("oracle");
    oracle.save(create(&path, force)?)?;
    write_meta(
        &path,
        "train-oracle",
        cfg,
        &[("heldout_accuracy", num(report.heldout_accuracy))],
    )?;
    let mut m = MetricsWriter::create(
        &layout.metrics("train-oracle"),
        force,
        "train-oracle",
        cfg,
        &["step", "heldout_accuracy"],
    )?;
    for (step, acc) in &report.curve {
        m.row(&[step.to_string(), num(*acc)])?;
    }
    m.finish()?;
    info!(
        "oracle held-out accuracy {:.3} after {} steps",
        report.heldout_accuracy, report.steps
    );
    Ok(report.heldout_accuracy)
}

fn ser_config(cfg: &RunConfig, flags: RegFlags) -> SerConfig {
    SerConfig {
        classes: 5,
        eps_ls: cfg.eps_ls,
        eam: EamConfig {
            r_min: cfg.r_min,
            r_max: cfg.r_max,
            energy_floor: cfg.energy_floor,
        },
        adv: AdvConfig {
            eps_adv: cfg.eps_adv,
            alpha: cfg.alpha,
        },
        flags,
    }
}

/// File-name form of a flag set.
pub fn flag_slug(flags: RegFlags) -> &'static str {
    match (flags.ls, flags.eam, flags.adv) {
        (false, _, _) => "base",
        (true, false, _) => "ls",
        (true, true, false) => "ls-eam",
        (true, true, true) => "full",
    }
}

const PRETRAIN_STREAM: u64 = 0x5052_4554;
const FINETUNE_STREAM: u64 = 0x4649_4e45;

pub fn pretrain_rm(cfg: &RunConfig, force: bool) -> Result<()> {
    let layout = Layout::new(cfg);
    let data = load_corpus(&layout.corpus("pretrain"))?;
    let held = load_corpus(&layout.corpus("heldout"))?;
    let shifted = load_corpus(&layout.corpus("eval-shifted"))?;
    let mut rm = RmParams::init(
        cfg.seed,
        RmDims {
            feat: data.dim,
            hidden: cfg.hidden,
            classes: 5,
        },
    )?;
    let fit = FitConfig {
        steps: cfg.pretrain_steps,
        batch: cfg.batch,
        adam: AdamConfig {
            lr: cfg.pretrain_lr,
            ..AdamConfig::default()
        },
        clip: cfg.clip,
        lr_final: cfg.pretrain_lr_final,
        ser: ser_config(cfg, RegFlags::NONE),
    };
    let mut m = MetricsWriter::create(
        &layout.metrics("pretrain-rm"),
        force,
        "pretrain-rm",
        cfg,
        &["step", "loss", "grad_norm", "elapsed_ms"],
    )?;
    let t0 = Instant::now();
    let mut failure = None;
    fit_rm(
        &mut rm,
        &data.samples,
        &fit,
        &mut Rng::new(cfg.seed, PRETRAIN_STREAM),
        |s, _| {
            if s.step % cfg.log_every == 0 || s.step == cfg.pretrain_steps {
                if let Err(e) = m.row(&[
                    s.step.to_string(),
                    num(s.diag.loss),
                    num(s.grad_norm),
                    ms(t0),
                ]) {
                    failure = Some(e);
                    return false;
                }
                debug!("pretrain step {} loss {:.4}", s.step, s.diag.loss);
            }
            true
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    m.finish()?;
    let path = layout.model("rm-vanilla");
    rm.save(create(&path, force)?)?;
    let (clean, shift) = (
        accuracy(&rm, &held.samples)?,
        accuracy(&rm, &shifted.samples)?,
    );
    write_meta(
        &path,
        "pretrain-rm",
        cfg,
        &[
            ("flags", "none".into()),
            ("train_eps", "0".into()),
            ("clean_accuracy", num(clean)),
            ("eval_shifted_accuracy", num(shift)),
        ],
    )?;
    info!("vanilla reward model: clean {clean:.3}, eval-shifted {shift:.3}");
    Ok(())
}

/// Fine-tune a copy of `base` on `data` with `flags`. Same seed, same batches.
pub fn finetune_from(
    cfg: &RunConfig,
    base: &RmParams,
    data: &[Sample],
    flags: RegFlags,
    seed: u64,
    mut log: impl FnMut(usize, &rrpo_core::regularization::SerDiagnostics, f64) -> Result<()>,
) -> Result<RmParams> {
    flags.validate()?;
    let mut rm = base.clone();
    let fit = FitConfig {
        steps: cfg.finetune_steps,
        batch: cfg.batch,
        adam: AdamConfig {
            lr: cfg.finetune_lr,
            ..AdamConfig::default()
        },
        clip: cfg.clip,
        lr_final: cfg.finetune_lr_final,
        ser: ser_config(cfg, flags),
    };
    let mut failure = None;
    fit_rm(
        &mut rm,
        data,
        &fit,
        &mut Rng::new(seed, FINETUNE_STREAM),
        |s, _| match log(s.step, &s.diag, s.grad_norm) {
            Ok(()) => true,
            Err(e) => {
                failure = Some(e);
                false
            }
        },
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(rm),
    }
}

pub fn finetune_rm(cfg: &RunConfig, flags: RegFlags, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(cfg);
    let base = load_rm(&layout.model("rm-vanilla"))?;
    let data = load_corpus(&layout.corpus("finetune"))?;
    let held = load_corpus(&layout.corpus("heldout"))?;
    let shifted = load_corpus(&layout.corpus("eval-shifted"))?;
    let slug = flag_slug(flags);
    let mut m = MetricsWriter::create(
        &layout.metrics(&format!("finetune-rm-{slug}")),
        force,
        "finetune-rm",
        cfg,
        &[
            "step",
            "loss",
            "emo",
            "adv",
            "mean_lambda",
            "grad_norm",
            "elapsed_ms",
        ],
    )?;
    let t0 = Instant::now();
    let rm = finetune_from(cfg, &base, &data.samples, flags, cfg.seed, |step, d, g| {
        if step % cfg.log_every == 0 || step == cfg.finetune_steps {
            m.row(&[
                step.to_string(),
                num(d.loss),
                num(d.emo),
                num(d.adv),
                num(d.mean_lambda),
                num(g),
                ms(t0),
            ])?;
        }
        Ok(())
    })?;
    m.finish()?;
    let path = layout.model(&format!("rm-{slug}"));
    rm.save(create(&path, force)?)?;
    let (clean, shift) = (
        accuracy(&rm, &held.samples)?,
        accuracy(&rm, &shifted.samples)?,
    );
    let train_eps = if flags.ls { cfg.eps_ls } else { 0.0 };
    write_meta(
        &path,
        "finetune-rm",
        cfg,
        &[
            ("flags", flags.name().to_string()),
            ("train_eps", train_eps.to_string()),
            ("clean_accuracy", num(clean)),
            ("eval_shifted_accuracy", num(shift)),
        ],
    )?;
    info!(
        "{} reward model: clean {clean:.3}, eval-shifted {shift:.3}",
        flags.name()
    );
    Ok(path)
}

/// Smoothing used to score a policy against the reward model at `rm_path`.
pub fn resolve_reward_eps(cfg: &RunConfig, rm_path: &Path) -> Result<f64> {
    match cfg.reward_eps {
        RewardEps::Fixed(v) => Ok(v),
        RewardEps::Auto => match read_meta_value(rm_path, "train_eps")? {
            Some(v) => v
                .parse()
                .with_context(|| format!("bad train_eps in {}.meta", rm_path.display())),
            None => {
                warn!(
                    "{} has no sidecar; scoring with eps_ls = {}",
                    rm_path.display(),
                    cfg.eps_ls
                );
                Ok(cfg.eps_ls)
            }
        },
    }
}

const CODEBOOK_STREAM: u64 = 0x434f_4445;
const SFT_STREAM: u64 = 0x5346_54;
const RRPO_STREAM: u64 = 0x5252_504f;
const PROBE_STREAM: u64 = 0x5052_4f42;
const EVAL_STREAM: u64 = 0x4556_414c;

/// Codebook and SFT-warmed policy for `seed`.
pub fn sft_policy(
    cfg: &RunConfig,
    corpus: &Corpus,
    seed: u64,
    mut log: impl FnMut(usize, f64, f64) -> Result<()>,
) -> Result<PolicyParams> {
    let codebook = kmeans_codebook(
        corpus,
        cfg.vocab,
        cfg.codebook_iters,
        &mut Rng::new(seed, CODEBOOK_STREAM),
    )?;
    let dims = PolicyDims {
        vocab: cfg.vocab,
        embed: cfg.embed,
        classes: 5,
        feat: corpus.dim,
    };
    let mut policy = PolicyParams::init(seed, dims, codebook)?;
    let mut opt = policy_optimizer(
        &policy,
        AdamConfig {
            lr: cfg.sft_lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = Rng::new(seed, SFT_STREAM);
    for step in 1..=cfg.sft_steps {
        let batch: Vec<&Sample> = (0..cfg.sft_batch)
            .map(|_| &corpus.samples[rng.below(corpus.len())])
            .collect();
        let r = sft_step(&mut policy, &mut opt, &batch, cfg.clip)?;
        log(step, r.loss, r.grad_norm)?;
    }
    Ok(policy)
}

pub fn policy_path(layout: &Layout, rm_name: &str, seed: u64, sft: bool) -> PathBuf {
    let name = if sft {
        format!("policy-{rm_name}-s{seed}.sft")
    } else {
        format!("policy-{rm_name}-s{seed}")
    };
    layout.model(&name)
}

pub fn train_policy(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let layout = Layout::new(cfg);
    let rm_name = &cfg.policy_rm;
    let rm_path = layout.model(&format!("rm-{rm_name}"));
    if !rm_path.exists() {
        bail!("reward model checkpoint {} not found", rm_path.display());
    }
    let rm = load_rm(&rm_path)?;
    let eps = resolve_reward_eps(cfg, &rm_path)?;
    let corpus = load_corpus(&layout.corpus("finetune"))?;
    let oracle_path = layout.model("oracle");
    let oracle = if oracle_path.exists() {
        Some(load_oracle(&oracle_path)?)
    } else {
        None
    };
    let seed = cfg.seed;

    let mut m = MetricsWriter::create(
        &layout.metrics(&format!("train-policy-{rm_name}-s{seed}")),
        force,
        "train-policy",
        cfg,
        &[
            "phase",
            "step",
            "loss",
            "reward",
            "reward_ma50",
            "oracle_accuracy",
            "artifact_energy",
            "grad_norm",
            "elapsed_ms",
        ],
    )?;
    let t0 = Instant::now();
    let mut policy = sft_policy(cfg, &corpus, seed, |step, loss, g| {
        if step % cfg.log_every == 0 || step == cfg.sft_steps {
            m.row(&[
                "sft".into(),
                step.to_string(),
                num(loss),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                num(g),
                ms(t0),
            ])?;
        }
        Ok(())
    })?;
    let sft_path = policy_path(&layout, rm_name, seed, true);
    policy.save(create(&sft_path, force)?)?;
    write_meta(&sft_path, "train-policy", cfg, &[("phase", "sft".into())])?;

    let spec = RewardSpec {
        mode: cfg.reward_mode.0,
        eps_ls: eps,
        ser: ser_config(cfg, RegFlags::FULL),
    };
    let mut opt = policy_optimizer(
        &policy,
        AdamConfig {
            lr: cfg.policy_lr,
            ..AdamConfig::default()
        },
    );
    if cfg.policy_lr > 0.0 {
        opt.set_lr_scale(CODEBOOK, cfg.codebook_lr / cfg.policy_lr);
    }
    let mut rng = Rng::new(seed, RRPO_STREAM);
    let mut recent: Vec<f64> = Vec::new();
    for step in 1..=cfg.rrpo_steps {
        let frac = if cfg.rrpo_steps > 1 {
            (step - 1) as f64 / (cfg.rrpo_steps - 1) as f64
        } else {
            0.0
        };
        let rcfg = RrpoConfig {
            batch: cfg.rollout_batch,
            steps: cfg.rollout_steps,
            temp: cfg.temperature + (cfg.temperature_final - cfg.temperature) * frac,
            straight_through: cfg.straight_through,
            clip: cfg.clip,
            train_codebook: cfg.train_codebook,
        };
        let r = rrpo_step(&mut policy, &rm, &spec, &mut opt, &rcfg, &mut rng)?;
        if r.skipped {
            warn!("step {step}: non-finite gradient, update skipped");
        }
        recent.push(r.reward);
        if recent.len() > 50 {
            recent.remove(0);
        }
        if step % cfg.log_every == 0 || step == cfg.rrpo_steps {
            let ma = recent.iter().sum::<f64>() / recent.len() as f64;
            let oracle_acc = match &oracle {
                Some(o) => num(hacking_gap(
                    &policy,
                    &rm,
                    o,
                    25,
                    cfg.rollout_steps,
                    eps,
                    &mut Rng::new(seed, PROBE_STREAM),
                )?
                .oracle_accuracy),
                None => String::new(),
            };
            m.row(&[
                "rrpo".into(),
                step.to_string(),
                String::new(),
                num(r.reward),
                num(ma),
                oracle_acc,
                num(r.artifact_energy),
                num(r.grad_norm),
                ms(t0),
            ])?;
            debug!(
                "rrpo step {step} reward {:.4} (ma {ma:.4}) energy {:.3}",
                r.reward, r.artifact_energy
            );
        }
    }
    m.finish()?;
    let path = policy_path(&layout, rm_name, seed, false);
    policy.save(create(&path, force)?)?;
    write_meta(
        &path,
        "train-policy",
        cfg,
        &[
            ("phase", "rrpo".into()),
            ("reward_rm", rm_name.clone()),
            ("reward_eps", eps.to_string()),
        ],
    )?;
    info!("policy against {rm_name} saved to {}", path.display());
    Ok(path)
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub rm: String,
    /// `rrpo` or `sft`.
    pub policy: String,
    pub seed: u64,
    pub report: HackingReport,
    pub rm_eval_shifted_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub natural_band: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalResult {
    /// Seed means of `(reward, oracle accuracy, artifact energy)`.
    pub fn mean(&self, rm: &str, policy: &str) -> Option<(f64, f64, f64)> {
        let rows: Vec<&EvalRow> = self
            .rows
            .iter()
            .filter(|r| r.rm == rm && r.policy == policy)
            .collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((
            rows.iter().map(|r| r.report.mean_reward).sum::<f64>() / n,
            rows.iter().map(|r| r.report.oracle_accuracy).sum::<f64>() / n,
            rows.iter().map(|r| r.report.artifact_energy).sum::<f64>() / n,
        ))
    }
}

pub fn eval(cfg: &RunConfig, force: bool) -> Result<EvalResult> {
    let layout = Layout::new(cfg);
    let oracle = load_oracle(&layout.model("oracle"))?;
    let band = natural_band(&load_corpus(&layout.corpus("heldout"))?);
    let shifted = load_corpus(&layout.corpus("eval-shifted"))?;
    let mut rows = Vec::new();
    for rm_name in &cfg.eval_rms.0 {
        let rm_path = layout.model(&format!("rm-{rm_name}"));
        let rm = load_rm(&rm_path)?;
        let eps = resolve_reward_eps(cfg, &rm_path)?;
        let shift_acc = accuracy(&rm, &shifted.samples)?;
        for &seed in &cfg.seeds.0 {
            for (kind, sft) in [("sft", true), ("rrpo", false)] {
                let policy = load_policy(&policy_path(&layout, rm_name, seed, sft))?;
                let report = hacking_gap(
                    &policy,
                    &rm,
                    &oracle,
                    cfg.eval_rollouts,
                    cfg.rollout_steps,
                    eps,
                    &mut Rng::new(seed, EVAL_STREAM),
                )?;
                rows.push(EvalRow {
                    rm: rm_name.clone(),
                    policy: kind.into(),
                    seed,
                    report,
                    rm_eval_shifted_accuracy: shift_acc,
                });
            }
        }
    }
    let result = EvalResult {
        natural_band: band,
        rows,
    };

    let mut m = MetricsWriter::create(
        &layout.metrics("eval-raw"),
        force,
        "eval",
        cfg,
        &[
            "rm",
            "policy",
            "seed",
            "rm_reward",
            "oracle_accuracy",
            "artifact_energy",
            "energy_over_band",
            "rm_eval_shifted_accuracy",
        ],
    )?;
    for r in &result.rows {
        m.row(&[
            r.rm.clone(),
            r.policy.clone(),
            r.seed.to_string(),
            num(r.report.mean_reward),
            num(r.report.oracle_accuracy),
            num(r.report.artifact_energy),
            num(r.report.artifact_energy / band),
            num(r.rm_eval_shifted_accuracy),
        ])?;
    }
    m.finish()?;

    let mut table = vec![vec![
        "rm".to_string(),
        "policy".into(),
        "rm_reward".into(),
        "oracle_acc".into(),
        "artifact_energy".into(),
        "x_band".into(),
        "rm_eval_shifted_acc".into(),
    ]];
    for rm_name in &cfg.eval_rms.0 {
        for kind in ["sft", "rrpo"] {
            if let Some((rw, acc, e)) = result.mean(rm_name, kind) {
                let shift = result
                    .rows
                    .iter()
                    .find(|r| &r.rm == rm_name)
                    .map_or(0.0, |r| r.rm_eval_shifted_accuracy);
                table.push(vec![
                    rm_name.clone(),
                    kind.into(),
                    format!("{rw:.4}"),
                    format!("{acc:.3}"),
                    format!("{e:.4}"),
                    format!("{:.2}", e / band),
                    format!("{shift:.3}"),
                ]);
            }
        }
    }
    let title = format!(
        "Hacking gap, mean over seeds {} (natural band {band:.4})",
        cfg.seeds
    );
    write_summary(&layout.summary("eval"), force, "eval", cfg, &title, &table)?;
    Ok(result)
}

/// One ablation cell: a flag set, a seed and what came of it.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub flags: RegFlags,
    pub seed: u64,
    /// `(clean, eval-shifted)` accuracy, or the error that stopped the cell.
    pub outcome: std::result::Result<(f64, f64), String>,
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug)]
pub struct AblationMatrix {
    pub cells: Vec<AblationCell>,
}

impl AblationMatrix {
    /// Mean `(clean, eval-shifted)` accuracy of a flag set over its successful seeds.
    pub fn mean(&self, flags: RegFlags) -> Option<(f64, f64)> {
        let ok: Vec<(f64, f64)> = self
            .cells
            .iter()
            .filter(|c| c.flags == flags)
            .filter_map(|c| c.outcome.clone().ok())
            .collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        Some((
            ok.iter().map(|a| a.0).sum::<f64>() / n,
            ok.iter().map(|a| a.1).sum::<f64>() / n,
        ))
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

pub fn ablate(cfg: &RunConfig, force: bool, jobs: usize) -> Result<AblationMatrix> {
    let layout = Layout::new(cfg);
    let base = load_rm(&layout.model("rm-vanilla"))?;
    let data = load_corpus(&layout.corpus("finetune"))?;
    let held = load_corpus(&layout.corpus("heldout"))?;
    let shifted = load_corpus(&layout.corpus("eval-shifted"))?;
    let todo: Vec<(RegFlags, u64)> = RegFlags::LADDER
        .iter()
        .flat_map(|&f| cfg.seeds.0.iter().map(move |&s| (f, s)))
        .collect();
    let slots: Mutex<Vec<Option<AblationCell>>> = Mutex::new(vec![None; todo.len()]);
    let next = Mutex::new(0usize);
    let jobs = jobs.clamp(1, todo.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let k = {
                    let mut n = next.lock().expect("queue lock");
                    if *n == todo.len() {
                        break;
                    }
                    *n += 1;
                    *n - 1
                };
                let (flags, seed) = todo[k];
                let t0 = Instant::now();
                let outcome =
                    finetune_from(cfg, &base, &data.samples, flags, seed, |_, _, _| Ok(()))
                        .and_then(|rm| {
                            Ok((
                                accuracy(&rm, &held.samples)?,
                                accuracy(&rm, &shifted.samples)?,
                            ))
                        })
                        .map_err(|e| format!("{e:#}"));
                match &outcome {
                    Ok((c, s)) => info!(
                        "ablate {} seed {seed}: clean {c:.3}, eval-shifted {s:.3}",
                        flags.name()
                    ),
                    Err(e) => warn!("ablate {} seed {seed} failed: {e}", flags.name()),
                }
                let cell = AblationCell {
                    flags,
                    seed,
                    outcome,
                    elapsed_ms: t0.elapsed().as_millis(),
                };
                slots.lock().expect("slot lock")[k] = Some(cell);
            });
        }
    });
    let cells: Vec<AblationCell> = slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();
    let matrix = AblationMatrix { cells };

    let mut m = MetricsWriter::create(
        &layout.metrics("ablate"),
        force,
        "ablate",
        cfg,
        &[
            "flags",
            "seed",
            "domain",
            "accuracy",
            "status",
            "elapsed_ms",
        ],
    )?;
    for c in &matrix.cells {
        for (d, domain) in ["clean", "eval-shifted"].iter().enumerate() {
            let (acc, status) = match &c.outcome {
                Ok(a) => (num(if d == 0 { a.0 } else { a.1 }), "ok".to_string()),
                Err(e) => (String::new(), format!("error: {e}")),
            };
            m.row(&[
                c.flags.name().into(),
                c.seed.to_string(),
                domain.to_string(),
                acc,
                status,
                c.elapsed_ms.to_string(),
            ])?;
        }
    }
    m.finish()?;

    let mut table = vec![vec![
        "flags".to_string(),
        "clean".into(),
        "eval_shifted".into(),
        "delta_vs_prev".into(),
        "failed".into(),
    ]];
    let mut prev: Option<f64> = None;
    for f in RegFlags::LADDER {
        let failed = matrix
            .cells
            .iter()
            .filter(|c| c.flags == f && c.outcome.is_err())
            .count();
        match matrix.mean(f) {
            Some((c, s)) => {
                let delta = prev.map_or(String::new(), |p| format!("{:+.2} pts", 100.0 * (s - p)));
                table.push(vec![
                    f.name().into(),
                    format!("{c:.4}"),
                    format!("{s:.4}"),
                    delta,
                    failed.to_string(),
                ]);
                prev = Some(s);
            }
            None => table.push(vec![
                f.name().into(),
                "-".into(),
                "-".into(),
                String::new(),
                failed.to_string(),
            ]),
        }
    }
    let title = format!(
        "Ablation of the hybrid regularization, mean over seeds {}",
        cfg.seeds
    );
    write_summary(
        &layout.summary("ablate"),
        force,
        "ablate",
        cfg,
        &title,
        &table,
    )?;
    Ok(matrix)
}
