//! Flat `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment. `profile` is required; every
//! other key falls back to the profile default. Unknown and repeated keys are
//! rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::learners::TrainConfig;
use crate::tasks::TaskFamily;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Demod,
    Autoencoder,
}

impl Profile {
    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Demod => "demod",
            Profile::Autoencoder => "autoencoder",
        }
    }
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "demod" => Ok(Profile::Demod),
            "autoencoder" => Ok(Profile::Autoencoder),
            other => Err(format!("unknown profile `{other}` (demod | autoencoder)")),
        }
    }
}

/// Task family used by the demodulation profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DemodFamily {
    /// Rayleigh single tap plus per-device distortion and phase offset.
    Rayleigh,
    /// Pure phase rotations, unit gain, no distortion.
    PhaseRotation,
}

impl DemodFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            DemodFamily::Rayleigh => "rayleigh",
            DemodFamily::PhaseRotation => "phase-rotation",
        }
    }
}

impl FromStr for DemodFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rayleigh" => Ok(DemodFamily::Rayleigh),
            "phase-rotation" => Ok(DemodFamily::PhaseRotation),
            other => Err(format!("unknown demod_family `{other}` (rayleigh | phase-rotation)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub train: TrainConfig,
    pub snr_db: f64,
    /// Pilot counts swept by the demodulation profile, ascending.
    pub pilot_counts: Vec<usize>,
    /// Last adaptation iteration recorded by the autoencoder sweep.
    pub adapt_iters_max: usize,
    pub n_meta_test_tasks: usize,
    pub n_eval_symbols_or_blocks: usize,
    pub seeds: Vec<u64>,
    pub output_path: PathBuf,
    /// Size of the meta-training task pool.
    pub n_meta_train_tasks: usize,
    /// Training-split size of each meta-training demodulation task.
    pub meta_train_pilots: usize,
    /// Test-split size of each meta-training demodulation task.
    pub test_examples: usize,
    /// Full-batch steps of the conventional and joint baselines.
    pub baseline_iters: usize,
    /// Blocks drawn per autoencoder training step.
    pub blocks_per_step: usize,
    pub demod_family: DemodFamily,
}

/// Every accepted key, in file order.
pub const KEYS: &[&str] = &[
    "profile",
    "eta_inner",
    "eta_outer",
    "m",
    "K_meta_batch",
    "outer_iters",
    "first_order",
    "seed",
    "snr_db",
    "pilot_counts",
    "adapt_iters_max",
    "n_meta_test_tasks",
    "n_eval_symbols_or_blocks",
    "seeds",
    "output_path",
    "n_meta_train_tasks",
    "meta_train_pilots",
    "test_examples",
    "baseline_iters",
    "blocks_per_step",
    "demod_family",
];

impl ExperimentConfig {
    pub fn defaults(profile: Profile) -> Self {
        match profile {
            Profile::Demod => ExperimentConfig {
                profile,
                train: TrainConfig::demod_default(),
                snr_db: 15.0,
                pilot_counts: vec![1, 2, 4, 8, 16, 32],
                adapt_iters_max: 40,
                n_meta_test_tasks: 20,
                n_eval_symbols_or_blocks: 2000,
                seeds: (0..5).collect(),
                output_path: PathBuf::from("sweep_pilots.csv"),
                n_meta_train_tasks: 100,
                meta_train_pilots: 4,
                test_examples: 64,
                baseline_iters: 200,
                blocks_per_step: 64,
                demod_family: DemodFamily::Rayleigh,
            },
            Profile::Autoencoder => ExperimentConfig {
                profile,
                train: TrainConfig::autoencoder_default(),
                snr_db: 10.0,
                pilot_counts: vec![1],
                adapt_iters_max: 40,
                n_meta_test_tasks: 10,
                n_eval_symbols_or_blocks: 2000,
                seeds: (0..3).collect(),
                output_path: PathBuf::from("sweep_adapt.csv"),
                n_meta_train_tasks: 50,
                meta_train_pilots: 8,
                test_examples: 64,
                baseline_iters: 200,
                blocks_per_step: 64,
                demod_family: DemodFamily::Rayleigh,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let positive = [
            ("n_meta_test_tasks", self.n_meta_test_tasks),
            ("n_eval_symbols_or_blocks", self.n_eval_symbols_or_blocks),
            ("n_meta_train_tasks", self.n_meta_train_tasks),
            ("meta_train_pilots", self.meta_train_pilots),
            ("test_examples", self.test_examples),
            ("blocks_per_step", self.blocks_per_step),
            ("adapt_iters_max", self.adapt_iters_max),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        if self.pilot_counts.is_empty() || self.pilot_counts.contains(&0) {
            return Err(Error::config("pilot_counts must be non-empty and positive"));
        }
        if self.pilot_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("pilot_counts must be strictly ascending"));
        }
        if self.snr_db.is_nan() {
            return Err(Error::config("snr_db is NaN"));
        }
        Ok(())
    }

    /// Task distribution implied by the profile.
    pub fn task_family(&self) -> TaskFamily {
        match (self.profile, self.demod_family) {
            (Profile::Autoencoder, _) => TaskFamily::Autoencoder { snr_db: self.snr_db },
            (Profile::Demod, DemodFamily::Rayleigh) => TaskFamily::demod(self.snr_db),
            (Profile::Demod, DemodFamily::PhaseRotation) => TaskFamily::PhaseRotation { snr_db: self.snr_db },
        }
    }

    /// Parses configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Parse {
                    line: line_no,
                    key: k.to_string(),
                    message: "unknown key".into(),
                });
            }
            if pairs.iter().any(|(_, seen, _)| seen == k) {
                return Err(Error::Parse {
                    line: line_no,
                    key: k.to_string(),
                    message: "key given twice".into(),
                });
            }
            pairs.push((line_no, k.to_string(), v.to_string()));
        }

        let Some((line, _, value)) = pairs.iter().find(|(_, k, _)| k == "profile") else {
            return Err(Error::config("missing required key `profile`"));
        };
        let profile: Profile = value.parse().map_err(|message| Error::Parse {
            line: *line,
            key: "profile".into(),
            message,
        })?;
        let mut cfg = ExperimentConfig::defaults(profile);
        for (line, key, value) in &pairs {
            cfg.set(key, value).map_err(|message| Error::Parse {
                line: *line,
                key: key.clone(),
                message,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "profile" => self.profile = value.parse()?,
            "eta_inner" => self.train.eta_inner = num(value)?,
            "eta_outer" => self.train.eta_outer = num(value)?,
            "m" => self.train.m = num(value)?,
            "K_meta_batch" => self.train.k_meta_batch = num(value)?,
            "outer_iters" => self.train.outer_iters = num(value)?,
            "first_order" => self.train.first_order = num(value)?,
            "seed" => self.train.seed = num(value)?,
            "snr_db" => self.snr_db = num(value)?,
            "pilot_counts" => self.pilot_counts = list(value)?,
            "adapt_iters_max" => self.adapt_iters_max = num(value)?,
            "n_meta_test_tasks" => self.n_meta_test_tasks = num(value)?,
            "n_eval_symbols_or_blocks" => self.n_eval_symbols_or_blocks = num(value)?,
            "seeds" => self.seeds = list(value)?,
            "output_path" => self.output_path = PathBuf::from(value),
            "n_meta_train_tasks" => self.n_meta_train_tasks = num(value)?,
            "meta_train_pilots" => self.meta_train_pilots = num(value)?,
            "test_examples" => self.test_examples = num(value)?,
            "baseline_iters" => self.baseline_iters = num(value)?,
            "blocks_per_step" => self.blocks_per_step = num(value)?,
            "demod_family" => self.demod_family = value.parse()?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Serializes every key; [`ExperimentConfig::parse`] reads it back to an
    /// equal value.
    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut s = String::new();
        let t = &self.train;
        let _ = writeln!(s, "profile = {}", self.profile.as_str());
        let _ = writeln!(s, "eta_inner = {}", t.eta_inner);
        let _ = writeln!(s, "eta_outer = {}", t.eta_outer);
        let _ = writeln!(s, "m = {}", t.m);
        let _ = writeln!(s, "K_meta_batch = {}", t.k_meta_batch);
        let _ = writeln!(s, "outer_iters = {}", t.outer_iters);
        let _ = writeln!(s, "first_order = {}", t.first_order);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "snr_db = {}", self.snr_db);
        let pc: Vec<String> = self.pilot_counts.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "pilot_counts = {}", join(&pc));
        let _ = writeln!(s, "adapt_iters_max = {}", self.adapt_iters_max);
        let _ = writeln!(s, "n_meta_test_tasks = {}", self.n_meta_test_tasks);
        let _ = writeln!(s, "n_eval_symbols_or_blocks = {}", self.n_eval_symbols_or_blocks);
        let seeds: Vec<String> = self.seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "seeds = {}", join(&seeds));
        let _ = writeln!(s, "output_path = {}", self.output_path.display());
        let _ = writeln!(s, "n_meta_train_tasks = {}", self.n_meta_train_tasks);
        let _ = writeln!(s, "meta_train_pilots = {}", self.meta_train_pilots);
        let _ = writeln!(s, "test_examples = {}", self.test_examples);
        let _ = writeln!(s, "baseline_iters = {}", self.baseline_iters);
        let _ = writeln!(s, "blocks_per_step = {}", self.blocks_per_step);
        let _ = writeln!(s, "demod_family = {}", self.demod_family.as_str());
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

fn list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(num)
        .collect()
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::parse(&text)
}
