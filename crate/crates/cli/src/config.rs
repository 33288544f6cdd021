//! Experiment configuration: a TOML file or one of the named presets.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use divrl_core::{CtdRunConfig, Family, MlRunConfig, ModelParams, SimConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub families: Vec<Family>,
    pub x0: Vec<f64>,
    /// Sweep for `evaluate`, strictly decreasing.
    pub dt: Vec<f64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Per-cell wall-clock budget in seconds.
    #[serde(default = "default_budget")]
    pub cell_budget_seconds: f64,
    pub model: ModelParams,
    pub sim: SimBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub improve: ImproveBlock,
}

fn default_workers() -> usize {
    1
}

fn default_budget() -> f64 {
    300.0
}

/// Simulation settings shared by every command. The step size defaults to the
/// finest sweep entry for `simulate`; the environment defaults to the model market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub horizon: f64,
    #[serde(default = "default_ruin_epsilon")]
    pub ruin_epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_sigma: Option<f64>,
}

fn default_ruin_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "lowercase")]
pub enum RunBlock {
    Ctd(CtdBlock),
    Ml(MlBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtdBlock {
    #[serde(default)]
    pub gamma: f64,
    pub n_paths: usize,
    pub window: usize,
    #[serde(default = "one")]
    pub lr0: f64,
    #[serde(default = "two")]
    pub temp0: f64,
    #[serde(default = "ctd_temp_base")]
    pub temp_base: f64,
    #[serde(default = "stop_epsilon")]
    pub stop_epsilon: f64,
    #[serde(default)]
    pub lr_across_paths: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlBlock {
    pub n_paths: usize,
    pub window: usize,
    #[serde(default = "one")]
    pub lr0: f64,
    #[serde(default = "two")]
    pub temp0: f64,
    #[serde(default = "ml_temp_decay")]
    pub temp_decay: f64,
    #[serde(default = "ml_temp_floor")]
    pub temp_floor: f64,
    #[serde(default = "stop_epsilon")]
    pub stop_epsilon: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn ctd_temp_base() -> f64 {
    0.2
}
fn ml_temp_decay() -> f64 {
    0.9
}
fn ml_temp_floor() -> f64 {
    1e-12
}
fn stop_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Gibbs policy of the exploratory value function.
    Optimal,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub policy: PolicyKind,
    pub n_paths: usize,
    /// Number of full trajectories written out.
    pub write_paths: usize,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            policy: PolicyKind::Optimal,
            n_paths: 1000,
            write_paths: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImproveBlock {
    pub iterations: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for ImproveBlock {
    fn default() -> Self {
        ImproveBlock {
            iterations: 3,
            n_paths: 4000,
            dt: 0.01,
            horizon: 100.0,
        }
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = ExperimentConfig {
            seed: 1,
            families: vec![Family::I],
            x0: vec![3.0, 10.0],
            dt: vec![0.01, 0.005, 0.001],
            output_dir: PathBuf::from("out"),
            workers: 1,
            cell_budget_seconds: 300.0,
            model: ModelParams::dummy(),
            sim: SimBlock {
                horizon: 10.0,
                ruin_epsilon: 1e-8,
                dt: None,
                env_mu: None,
                env_sigma: None,
            },
            run: RunBlock::Ctd(CtdBlock {
                gamma: 0.0,
                n_paths: 4000,
                window: 100,
                lr0: 1.0,
                temp0: 2.0,
                temp_base: 0.2,
                stop_epsilon: 1e-8,
                lr_across_paths: false,
            }),
            simulate: SimulateBlock::default(),
            improve: ImproveBlock::default(),
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => ExperimentConfig {
                families: vec![Family::I, Family::II],
                dt: vec![0.01, 0.005, 0.001, 0.0005, 0.0001],
                run: RunBlock::Ctd(CtdBlock {
                    n_paths: 40_000,
                    window: 250,
                    ..match desk.run {
                        RunBlock::Ctd(b) => b,
                        RunBlock::Ml(_) => unreachable!(),
                    }
                }),
                improve: ImproveBlock {
                    n_paths: 40_000,
                    ..ImproveBlock::default()
                },
                ..desk
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization, leaving
    /// out the output directory and worker count, which cannot change results.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: PathBuf::new(),
            workers: 1,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line carried by every output file.
    pub fn header(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.seed)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        // TOML integers are signed 64-bit
        if i64::try_from(self.seed).is_err() {
            return bad(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if self.families.is_empty() || self.x0.is_empty() || self.dt.is_empty() {
            return bad("families, x0 and dt must be non-empty".into());
        }
        if let Some(x) = self.x0.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return bad(format!("x0 entry {x} must be finite and non-negative"));
        }
        if !self.dt.windows(2).all(|w| w[1] < w[0]) {
            return bad(format!("dt sweep {:?} must be strictly decreasing", self.dt));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.cell_budget_seconds > 0.0) {
            return bad("cell_budget_seconds must be positive".into());
        }
        for &dt in &self.dt {
            self.sim_config(dt)?;
            match self.run {
                RunBlock::Ctd(_) => self.ctd_config(dt)?.validate()?,
                RunBlock::Ml(_) => self.ml_config(dt)?.validate()?,
            }
        }
        self.sim_config(self.simulate_dt())?;
        if self.simulate.n_paths == 0 {
            return bad("simulate.n_paths must be positive".into());
        }
        let im = &self.improve;
        if im.n_paths == 0 {
            return bad("improve.n_paths must be positive".into());
        }
        SimConfig::new(im.dt, im.horizon, self.seed, self.env_mu(), self.env_sigma())?;
        Ok(())
    }

    fn env_mu(&self) -> f64 {
        self.sim.env_mu.unwrap_or(self.model.mu())
    }

    fn env_sigma(&self) -> f64 {
        self.sim.env_sigma.unwrap_or(self.model.sigma())
    }

    pub fn simulate_dt(&self) -> f64 {
        self.sim
            .dt
            .unwrap_or_else(|| *self.dt.last().expect("validated non-empty"))
    }

    pub fn sim_config(&self, dt: f64) -> Result<SimConfig, CliError> {
        let mut sim = SimConfig::new(dt, self.sim.horizon, self.seed, self.env_mu(), self.env_sigma())?;
        sim.ruin_epsilon = self.sim.ruin_epsilon;
        sim.validate()?;
        Ok(sim)
    }

    pub fn improve_sim(&self) -> Result<SimConfig, CliError> {
        let mut sim = SimConfig::new(
            self.improve.dt,
            self.improve.horizon,
            self.seed,
            self.env_mu(),
            self.env_sigma(),
        )?;
        sim.ruin_epsilon = self.sim.ruin_epsilon;
        Ok(sim)
    }

    pub fn ctd_config(&self, dt: f64) -> Result<CtdRunConfig, CliError> {
        let RunBlock::Ctd(b) = self.run else {
            return Err(CliError::Config("run block is not a CTD block".into()));
        };
        let mut cfg = CtdRunConfig::new(self.sim_config(dt)?, b.n_paths, b.window);
        cfg.gamma = b.gamma;
        cfg.lr0 = b.lr0;
        cfg.temp0 = b.temp0;
        cfg.temp_base = b.temp_base;
        cfg.stop_epsilon = b.stop_epsilon;
        cfg.lr_across_paths = b.lr_across_paths;
        cfg.wall_budget = Some(self.cell_budget_seconds);
        Ok(cfg)
    }

    pub fn ml_config(&self, dt: f64) -> Result<MlRunConfig, CliError> {
        let RunBlock::Ml(b) = self.run else {
            return Err(CliError::Config("run block is not an ML block".into()));
        };
        let mut cfg = MlRunConfig::new(self.sim_config(dt)?, b.n_paths, b.window);
        cfg.lr0 = b.lr0;
        cfg.temp0 = b.temp0;
        cfg.temp_decay = b.temp_decay;
        cfg.temp_floor = b.temp_floor;
        cfg.stop_epsilon = b.stop_epsilon;
        cfg.wall_budget = Some(self.cell_budget_seconds);
        Ok(cfg)
    }
}
