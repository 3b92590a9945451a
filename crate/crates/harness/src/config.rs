//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file only lists overrides. Blank lines
//! and lines starting with `#` are ignored. Unknown keys are an error.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rrpo_core::policy::RewardMode;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`, got {text:?}")]
    Syntax {
        path: String,
        line: usize,
        text: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Comma-separated list of seeds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let seeds = s
            .split(',')
            .map(|p| p.trim().parse::<u64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if seeds.is_empty() {
            return Err("empty seed list".into());
        }
        Ok(SeedList(seeds))
    }
}

impl fmt::Display for SeedList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Comma-separated list of names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NameList(pub Vec<String>);

impl FromStr for NameList {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let names: Vec<String> = s
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        if names.is_empty() {
            return Err("empty list".into());
        }
        Ok(NameList(names))
    }
}

impl fmt::Display for NameList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(","))
    }
}

/// Smoothing used when the policy is scored: a number, or `auto` for the
/// value the reward model was fine-tuned with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardEps {
    Auto,
    Fixed(f64),
}

impl FromStr for RewardEps {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(RewardEps::Auto);
        }
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if !(0.0..1.0).contains(&v) {
            return Err("must be `auto` or lie in [0, 1)".into());
        }
        Ok(RewardEps::Fixed(v))
    }
}

impl fmt::Display for RewardEps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardEps::Auto => f.write_str("auto"),
            RewardEps::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode(pub RewardMode);

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        RewardMode::parse(s)
            .map(Mode)
            .ok_or_else(|| "expected plain-ls or batch-ser".into())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.name())
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr ;)*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $key: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $key: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($key), )*];

            fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $( stringify!($key) => {
                        self.$key = value.parse::<$ty>().map_err(|e| ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            reason: e.to_string(),
                        })?;
                    } )*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            /// Every key with its resolved value, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($key), self.$key.to_string()), )*]
            }
        }
    };
}

run_config! {
    /// Seed for single-run commands; `--seed` overrides it.
    seed: u64 = 0;
    /// Seeds for `eval` and `ablate`.
    seeds: SeedList = SeedList(vec![0, 1, 2, 3, 4]);
    out_dir: String = "rrpo-run".to_string();

    pretrain_samples: usize = 8000;
    finetune_samples: usize = 300;
    heldout_samples: usize = 500;
    eval_samples: usize = 1000;
    oracle_samples: usize = 700;
    pretrain_correlation: f64 = 0.95;
    /// Genuine emotion signal in pretraining audio, against unit noise.
    pretrain_signal: f64 = 0.05;
    finetune_correlation: f64 = 0.0;
    eval_noise_scale: f64 = 2.0;
    eval_scale_jitter: f64 = 0.5;

    hidden: usize = 32;
    batch: usize = 16;
    clip: f64 = 5.0;
    pretrain_steps: usize = 1500;
    pretrain_lr: f64 = 3e-3;
    /// Final learning rate as a fraction of the initial one (linear decay).
    pretrain_lr_final: f64 = 0.05;
    finetune_steps: usize = 400;
    finetune_lr: f64 = 2e-3;
    finetune_lr_final: f64 = 1.0;

    ls: bool = false;
    eam: bool = false;
    adv: bool = false;
    eps_ls: f64 = 0.1;
    r_min: f64 = 0.0;
    r_max: f64 = 10.0;
    energy_floor: f64 = 1e-10;
    eps_adv: f64 = 0.5;
    alpha: f64 = 0.5;

    oracle_hidden: usize = 32;
    oracle_max_steps: usize = 2000;
    oracle_min_accuracy: f64 = 0.9;

    vocab: usize = 32;
    embed: usize = 32;
    rollout_steps: usize = 24;
    codebook_iters: usize = 20;
    sft_steps: usize = 300;
    sft_batch: usize = 8;
    sft_lr: f64 = 3e-3;
    rrpo_steps: usize = 500;
    rollout_batch: usize = 8;
    policy_lr: f64 = 1e-3;
    /// Learning rate of the token codebook during RRPO.
    codebook_lr: f64 = 1e-2;
    temperature: f64 = 1.0;
    /// Gumbel temperature at the last step (linear anneal from `temperature`).
    temperature_final: f64 = 1.0;
    straight_through: bool = true;
    train_codebook: bool = true;
    reward_mode: Mode = Mode(RewardMode::PlainLs);
    reward_eps: RewardEps = RewardEps::Auto;
    /// Reward model the policy is optimized against (`models/rm-<name>.ckpt`).
    policy_rm: String = "full".to_string();
    log_every: usize = 50;

    eval_rollouts: usize = 200;
    /// Reward models compared by `eval`.
    eval_rms: NameList = NameList(vec!["vanilla".into(), "full".into()]);
}

impl RunConfig {
    /// Defaults overridden by the file at `path`.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: origin.to_string(),
                    line: n + 1,
                    text: raw.to_string(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.eam && !self.ls || self.adv && !self.eam {
            return bad("regularization flags are cumulative: eam needs ls, adv needs eam");
        }
        if self.batch < 2 && (self.eam || self.adv) {
            return bad("eam and adv need batch >= 2");
        }
        if self.heldout_samples == 0 || self.eval_samples == 0 || self.finetune_samples == 0 {
            return bad("corpus sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.eps_ls) {
            return bad("eps_ls must lie in [0, 1)");
        }
        if self.r_min > self.r_max {
            return bad("r_min must not exceed r_max");
        }
        if self.eps_adv < 0.0 || self.alpha < 0.0 {
            return bad("eps_adv and alpha must be non-negative");
        }
        if self.temperature <= 0.0 || self.temperature_final <= 0.0 {
            return bad("temperatures must be positive");
        }
        if self.policy_lr < 0.0 || self.codebook_lr < 0.0 {
            return bad("learning rates must be non-negative");
        }
        if self.log_every == 0 || self.rollout_batch == 0 || self.sft_batch == 0 {
            return bad("log_every, rollout_batch and sft_batch must be positive");
        }
        if self.policy_rm.is_empty() || self.policy_rm.contains(['/', '\\']) {
            return bad("policy_rm must be a plain model name");
        }
        if self.reward_mode.0 == RewardMode::BatchSer && self.rollout_batch < 2 {
            return bad("batch-ser reward needs rollout_batch >= 2");
        }
        Ok(())
    }

    /// The resolved config as `key = value` lines.
    pub fn echo(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
