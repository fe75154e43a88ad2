//! Flat `key = value` experiment configuration files.
//!
//! One assignment per line; `#` starts a comment; list-valued keys take
//! comma-separated values. Unknown or repeated keys are rejected with an
//! error naming the key.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::ScenarioConfig;
use crate::em_model::DEFAULT_RANK_TOL;
use crate::error::{Error, Result};
use crate::harness::Scheme;
use crate::rsma::{AccessMode, DEFAULT_SPLIT_GRID};
use crate::sebo::SeboConfig;
use crate::wmmse::OuterLoopConfig;

/// Every accepted key.
pub const KNOWN_KEYS: &[&str] = &[
    "N",
    "K",
    "Q",
    "Ns",
    "snr_db",
    "alpha",
    "beta",
    "S",
    "seed",
    "realizations",
    "sebo_J",
    "sebo_I",
    "sebo_flips",
    "sebo_restarts",
    "outer_tol",
    "outer_max_iters",
    "inner_tol",
    "scheme",
    "M",
    "D",
    "train_S",
    "codebook",
    "codebook_mode",
    "antenna",
    "grid_points",
    "lloyd_tol",
    "lloyd_max_iters",
    "online_max_passes",
    "rank_tol",
    "timing",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Scenario parameters; `p_t` is overwritten per SNR point.
    pub scenario: ScenarioConfig,
    pub snr_db: Vec<f64>,
    pub realizations: usize,
    pub schemes: Vec<Scheme>,
    /// Codebook sizes swept by the codebook schemes.
    pub codebook_sizes: Vec<usize>,
    /// Training tuples per codebook.
    pub training_tuples: usize,
    /// SAA samples per training tuple (defaults to `S`).
    pub training_samples: usize,
    /// Pre-trained codebook; trained inline when absent.
    pub codebook_path: Option<PathBuf>,
    /// Access scheme the training objective uses.
    pub codebook_mode: AccessMode,
    /// Antenna data file; synthesized from the seed when absent.
    pub antenna_path: Option<PathBuf>,
    pub grid_points: usize,
    pub sebo: SeboConfig,
    pub outer: OuterLoopConfig,
    pub lloyd_tol: f64,
    pub lloyd_max_iters: usize,
    pub online_max_passes: usize,
    pub rank_tol: f64,
    /// Record wall-clock time in the results; off keeps output byte-stable.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        Self {
            training_samples: scenario.n_samples,
            scenario,
            snr_db: vec![20.0],
            realizations: 100,
            schemes: Scheme::ALL.to_vec(),
            codebook_sizes: vec![16],
            training_tuples: 200,
            codebook_path: None,
            codebook_mode: AccessMode::Rsma,
            antenna_path: None,
            grid_points: DEFAULT_SPLIT_GRID,
            sebo: SeboConfig::default(),
            outer: OuterLoopConfig::default(),
            lloyd_tol: 1e-3,
            lloyd_max_iters: 30,
            online_max_passes: 10,
            rank_tol: DEFAULT_RANK_TOL,
            timing: false,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    let items: Vec<T> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(key, "list is empty"));
    }
    Ok(items)
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, found `{raw}`"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let mut train_s = None;
        let mut flips = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::config(format!("line {}", idx + 1), "expected `key = value`"))?;
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "key given more than once"));
            }
            let sc = &mut cfg.scenario;
            match key {
                "N" => sc.n_tx = value(key, raw)?,
                "K" => sc.n_users = value(key, raw)?,
                "Q" => sc.n_switches = value(key, raw)?,
                "Ns" => sc.n_spatial = value(key, raw)?,
                "snr_db" => cfg.snr_db = list(key, raw)?,
                "alpha" => sc.alpha = value(key, raw)?,
                "beta" => sc.beta = value(key, raw)?,
                "S" => sc.n_samples = value(key, raw)?,
                "seed" => sc.seed = value(key, raw)?,
                "realizations" => cfg.realizations = value(key, raw)?,
                "sebo_J" => cfg.sebo.block = value(key, raw)?,
                "sebo_I" => cfg.sebo.iterations = value(key, raw)?,
                "sebo_flips" => flips = Some(value(key, raw)?),
                "sebo_restarts" => cfg.sebo.restarts = value(key, raw)?,
                "outer_tol" => cfg.outer.rel_tol = value(key, raw)?,
                "outer_max_iters" => cfg.outer.max_outer_iters = value(key, raw)?,
                "inner_tol" => cfg.outer.inner_tol = value(key, raw)?,
                "scheme" => cfg.schemes = list(key, raw)?,
                "M" => cfg.codebook_sizes = list(key, raw)?,
                "D" => cfg.training_tuples = value(key, raw)?,
                "train_S" => train_s = Some(value(key, raw)?),
                "codebook" => cfg.codebook_path = Some(PathBuf::from(raw)),
                "codebook_mode" => {
                    cfg.codebook_mode = match raw {
                        "rsma" => AccessMode::Rsma,
                        "sdma" => AccessMode::Sdma,
                        _ => return Err(Error::config(key, "expected `rsma` or `sdma`")),
                    }
                }
                "antenna" => cfg.antenna_path = Some(PathBuf::from(raw)),
                "grid_points" => cfg.grid_points = value(key, raw)?,
                "lloyd_tol" => cfg.lloyd_tol = value(key, raw)?,
                "lloyd_max_iters" => cfg.lloyd_max_iters = value(key, raw)?,
                "online_max_passes" => cfg.online_max_passes = value(key, raw)?,
                "rank_tol" => cfg.rank_tol = value(key, raw)?,
                "timing" => cfg.timing = flag(key, raw)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.sebo.flips_per_kick = flips.unwrap_or(cfg.sebo.block);
        cfg.training_samples = train_s.unwrap_or(cfg.scenario.n_samples);
        cfg.sebo.seed = cfg.scenario.seed;
        let first_snr = cfg.snr_db[0];
        cfg.scenario = cfg.scenario.clone().with_snr_db(first_snr);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if let Some(bad) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::config("snr_db", format!("{bad} is not finite")));
        }
        if self.realizations == 0 {
            return Err(Error::config("realizations", "must be at least 1"));
        }
        if self.codebook_sizes.contains(&0) {
            return Err(Error::config("M", "codebook sizes must be at least 1"));
        }
        if self.scenario.n_switches < 64 {
            let limit = 1u64 << self.scenario.n_switches;
            if let Some(&m) = self.codebook_sizes.iter().find(|&&m| m as u64 > limit) {
                return Err(Error::config("M", format!("{m} exceeds the 2^Q = {limit} distinct coders")));
            }
        }
        if self.training_tuples == 0 {
            return Err(Error::config("D", "must be at least 1"));
        }
        if self.training_samples == 0 {
            return Err(Error::config("train_S", "must be at least 1"));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid_points", "must be at least 2"));
        }
        if !(self.lloyd_tol > 0.0) {
            return Err(Error::config("lloyd_tol", "must be positive"));
        }
        if self.online_max_passes == 0 {
            return Err(Error::config("online_max_passes", "must be at least 1"));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::config("rank_tol", "must lie in (0, 1)"));
        }
        self.sebo.validate()?;
        self.outer.validate()?;
        Ok(())
    }

    /// Scenario at one SNR point.
    pub fn scenario_at(&self, snr_db: f64) -> ScenarioConfig {
        self.scenario.clone().with_snr_db(snr_db)
    }
}
