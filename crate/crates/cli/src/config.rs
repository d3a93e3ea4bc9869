//! Experiment configuration: defaults, key=value overrides, and hashing.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use pessim_drive_core::pessimism::CandidateMode;
use pessim_drive_core::traffic::TrafficConfig;
use pessim_drive_core::{CoreError, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Full pipeline: MLE model, pessimistic PGD selection, mixed-batch SAC.
    MaPmbrl,
    /// Model-free baseline: no dynamics model, no rollouts, all-real batches.
    SacOnly,
    /// Ablation: model-based rollouts from the raw MLE model, PGD skipped.
    MbrlNopess,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Algorithm::MaPmbrl => "ma-pmbrl",
            Algorithm::SacOnly => "sac-only",
            Algorithm::MbrlNopess => "mbrl-nopess",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Algorithm {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ma-pmbrl" => Ok(Algorithm::MaPmbrl),
            "sac-only" => Ok(Algorithm::SacOnly),
            "mbrl-nopess" => Ok(Algorithm::MbrlNopess),
            other => Err(CoreError::Config(format!(
                "unknown algorithm '{other}' (expected ma-pmbrl, sac-only, or mbrl-nopess)"
            ))),
        }
    }
}

/// Full experiment configuration; defaults follow the study's reference
/// parameter table. Every field is overridable via a key=value config file
/// or CLI flags.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algo: Algorithm,
    // environment
    pub n_cavs: usize,
    pub n_hvs: usize,
    pub track_length: f64,
    pub dt: f64,
    pub v_max: f64,
    pub sensor_range: f64,
    pub l_safe: f64,
    pub lambda: f64,
    pub zeta: f64,
    // schedule
    pub episodes: usize,
    pub horizon: usize,
    pub d: f64,
    pub rollout_len: usize,
    pub update_every: usize,
    // learning
    pub ratio: f64,
    pub gamma: f64,
    pub lr_pgd: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_temp: f64,
    pub lr_model: f64,
    pub minibatch: usize,
    pub batch: usize,
    pub mle_steps: usize,
    pub hidden_agent: Vec<usize>,
    pub hidden_model: Vec<usize>,
    pub real_capacity: usize,
    pub model_capacity: usize,
    pub rollout_starts: usize,
    // pessimism
    pub pgd_iters: usize,
    pub pgd_mode: CandidateMode,
    pub xi: f64,
    // bookkeeping
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algo: Algorithm::MaPmbrl,
            n_cavs: 8,
            n_hvs: 6,
            track_length: 480.0,
            dt: 0.1,
            v_max: 13.89,
            sensor_range: 75.0,
            l_safe: 5.0,
            lambda: 0.85,
            zeta: 7.5,
            episodes: 20,
            horizon: 1500,
            d: 100.0,
            rollout_len: 8,
            update_every: 5,
            ratio: 0.7,
            gamma: 0.98,
            lr_pgd: 1e-3,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            lr_temp: 1e-3,
            lr_model: 1e-3,
            minibatch: 512,
            batch: 1000,
            mle_steps: 1000,
            hidden_agent: vec![256, 256, 256],
            hidden_model: vec![256, 256, 256],
            real_capacity: 20_000,
            model_capacity: 7_000,
            rollout_starts: 8,
            pgd_iters: 10,
            pgd_mode: CandidateMode::Best,
            xi: 0.1,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CoreError::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_layers(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|t| parse::<usize>(key, t.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key=value` override; keys use snake_case field names
    /// (dashes accepted).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "algo" | "algorithm" => self.algo = value.parse()?,
            "n_cavs" => self.n_cavs = parse(&key, value)?,
            "n_hvs" => self.n_hvs = parse(&key, value)?,
            "track_length" => self.track_length = parse(&key, value)?,
            "dt" => self.dt = parse(&key, value)?,
            "v_max" => self.v_max = parse(&key, value)?,
            "sensor_range" => self.sensor_range = parse(&key, value)?,
            "l_safe" => self.l_safe = parse(&key, value)?,
            "lambda" => self.lambda = parse(&key, value)?,
            "zeta" => self.zeta = parse(&key, value)?,
            "episodes" => self.episodes = parse(&key, value)?,
            "horizon" => self.horizon = parse(&key, value)?,
            "d" => self.d = parse(&key, value)?,
            "rollout_len" => self.rollout_len = parse(&key, value)?,
            "update_every" => self.update_every = parse(&key, value)?,
            "ratio" => self.ratio = parse(&key, value)?,
            "gamma" => self.gamma = parse(&key, value)?,
            "lr_pgd" => self.lr_pgd = parse(&key, value)?,
            "lr_actor" => self.lr_actor = parse(&key, value)?,
            "lr_critic" => self.lr_critic = parse(&key, value)?,
            "lr_temp" => self.lr_temp = parse(&key, value)?,
            "lr_model" => self.lr_model = parse(&key, value)?,
            "minibatch" => self.minibatch = parse(&key, value)?,
            "batch" => self.batch = parse(&key, value)?,
            "mle_steps" => self.mle_steps = parse(&key, value)?,
            "hidden_agent" => self.hidden_agent = parse_layers(&key, value)?,
            "hidden_model" => self.hidden_model = parse_layers(&key, value)?,
            "real_capacity" => self.real_capacity = parse(&key, value)?,
            "model_capacity" => self.model_capacity = parse(&key, value)?,
            "rollout_starts" => self.rollout_starts = parse(&key, value)?,
            "pgd_iters" => self.pgd_iters = parse(&key, value)?,
            "pgd_mode" | "pgd_select" => self.pgd_mode = value.parse()?,
            "xi" => self.xi = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "out_dir" | "out" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(CoreError::Config(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }

    /// Loads `key=value` lines (`#` comments, blanks allowed) on top of self.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CoreError::Parse {
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.traffic().validate()?;
        if !(0.0..=200.0).contains(&self.d) {
            return Err(CoreError::Config(format!(
                "communication range {} outside [0, 200]",
                self.d
            )));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(CoreError::Config(format!(
                "real-data ratio {} outside [0, 1]",
                self.ratio
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::Config("gamma must lie in [0, 1)".into()));
        }
        if self.episodes == 0 || self.rollout_len == 0 || self.update_every == 0 {
            return Err(CoreError::Config(
                "episodes, rollout_len, update_every must be positive".into(),
            ));
        }
        if self.xi <= 0.0 {
            return Err(CoreError::Config("xi must be positive".into()));
        }
        for (name, lr) in [
            ("lr_pgd", self.lr_pgd),
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_temp", self.lr_temp),
            ("lr_model", self.lr_model),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(CoreError::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_agent.is_empty() || self.hidden_model.is_empty() {
            return Err(CoreError::Config("hidden layer lists cannot be empty".into()));
        }
        Ok(())
    }

    pub fn traffic(&self) -> TrafficConfig {
        TrafficConfig {
            n_cavs: self.n_cavs,
            n_hvs: self.n_hvs,
            dt: self.dt,
            horizon: self.horizon,
            v_max: self.v_max,
            sensor_range: self.sensor_range,
            l_safe: self.l_safe,
            lambda: self.lambda,
            zeta: self.zeta,
            track_length: self.track_length,
        }
    }

    /// Canonical key=value dump (excluding output path and seed, which do
    /// not affect the trajectory of a run with a given seed).
    pub fn canonical_text(&self) -> String {
        let layers = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mode = match self.pgd_mode {
            CandidateMode::Best => "best",
            CandidateMode::Average => "average",
            CandidateMode::Final => "final",
        };
        format!(
            "algo={}\nn_cavs={}\nn_hvs={}\ntrack_length={}\ndt={}\nv_max={}\nsensor_range={}\n\
             l_safe={}\nlambda={}\nzeta={}\nepisodes={}\nhorizon={}\nd={}\nrollout_len={}\n\
             update_every={}\nratio={}\ngamma={}\nlr_pgd={}\nlr_actor={}\nlr_critic={}\n\
             lr_temp={}\nlr_model={}\nminibatch={}\nbatch={}\nmle_steps={}\nhidden_agent={}\n\
             hidden_model={}\nreal_capacity={}\nmodel_capacity={}\nrollout_starts={}\n\
             pgd_iters={}\npgd_mode={}\nxi={}\n",
            self.algo,
            self.n_cavs,
            self.n_hvs,
            self.track_length,
            self.dt,
            self.v_max,
            self.sensor_range,
            self.l_safe,
            self.lambda,
            self.zeta,
            self.episodes,
            self.horizon,
            self.d,
            self.rollout_len,
            self.update_every,
            self.ratio,
            self.gamma,
            self.lr_pgd,
            self.lr_actor,
            self.lr_critic,
            self.lr_temp,
            self.lr_model,
            self.minibatch,
            self.batch,
            self.mle_steps,
            layers(&self.hidden_agent),
            layers(&self.hidden_model),
            self.real_capacity,
            self.model_capacity,
            self.rollout_starts,
            self.pgd_iters,
            mode,
            self.xi,
        )
    }

    /// Short hex hash of the canonical config text; tags every CSV row.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
