//! Experiment configuration, strategy matrix execution, threshold sweeps
//! and results export.
//!
//! A run is a grid of cells, one per (strategy, seed). Cells sharing a seed
//! see the same stream and start from the same pretrained models, so the
//! strategies differ only in how samples are routed and whether the models
//! keep learning.

mod config;
mod experiment;
mod export;
mod preset;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use config::parse_config;
pub use experiment::{
    curve_dominates, gate_separation, prepare_seed, run_cell, run_experiment, sweep_delta,
    CellOutcome, ExperimentResult, GateSeparation, Prepared, SweepPoint,
};
pub use export::{export, summary_csv, sweep_csv};
pub use preset::{drift_preset, Preset};

use crate::adapt::TrainConfig;
use crate::error::{Error, Result};
use crate::gating::{GatePolicy, Scorer};
use crate::simenv::{
    min_edge_fraction_with, EdgeFractionForm, LatencyBudget, LatencyModel, LatencyPreset,
    StreamSpec,
};

/// Routing and adaptation policy of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Learned gate with training rounds.
    Adaptive,
    /// Learned gate, models never updated.
    Frozen,
    Mess,
    Sm,
    Spp,
    /// Threshold 0: every sample stays on the edge.
    EdgeOnly,
    /// Threshold 1: every sample goes to the cloud.
    CloudOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Adaptive,
        Strategy::Frozen,
        Strategy::Mess,
        Strategy::Sm,
        Strategy::Spp,
        Strategy::EdgeOnly,
        Strategy::CloudOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Adaptive => "adaptive",
            Strategy::Frozen => "frozen",
            Strategy::Mess => "mess",
            Strategy::Sm => "sm",
            Strategy::Spp => "spp",
            Strategy::EdgeOnly => "edge-only",
            Strategy::CloudOnly => "cloud-only",
        }
    }

    pub fn scorer(self) -> Scorer {
        match self {
            Strategy::Mess => Scorer::Mess,
            Strategy::Sm => Scorer::Sm,
            Strategy::Spp => Scorer::Spp,
            _ => Scorer::Learned,
        }
    }

    pub fn adaptive(self) -> bool {
        self != Strategy::Frozen
    }

    /// Strategies that route with a confidence score and a tuned threshold.
    pub fn is_gated(self) -> bool {
        !matches!(self, Strategy::EdgeOnly | Strategy::CloudOnly)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeChoice {
    /// Softmax regression, pretrained with ground truth on task-0 samples.
    Trainable {
        pretrain_samples: usize,
        pretrain_epochs: usize,
        pretrain_learning_rate: f64,
    },
    Oracle {
        correctness: f64,
        temperature: f64,
    },
}

/// How heuristic scorers pick their threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeuristicThreshold {
    /// Match the learned gate's cloud upload rate on the calibration set.
    Matched,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSettings {
    pub threshold: f64,
    pub hidden_dim: usize,
    pub mess_pixel_threshold: f64,
    pub heuristic_threshold: HeuristicThreshold,
    /// Task-0 samples used to pretrain the gate and calibrate heuristics.
    pub calibration_samples: usize,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencySource {
    Preset(LatencyPreset),
    /// Edge-only and cloud-assisted path latencies in seconds.
    Explicit {
        d1: f64,
        d0: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySettings {
    pub source: LatencySource,
    pub bandwidth_bytes_per_s: f64,
    pub edge_fraction_form: EdgeFractionForm,
    pub delay_max: Option<f64>,
}

impl LatencySettings {
    pub fn path_latencies(&self) -> (f64, f64) {
        match self.source {
            LatencySource::Preset(p) => p.latencies(),
            LatencySource::Explicit { d1, d0 } => (d1, d0),
        }
    }

    pub fn model(&self, height: usize, width: usize) -> Result<LatencyModel> {
        let (d1, d0) = self.path_latencies();
        LatencyModel::calibrated(d1, d0, self.bandwidth_bytes_per_s, height, width)
    }

    /// Largest upload rate the latency budget allows, if one is set.
    pub fn max_cur(&self) -> Result<Option<f64>> {
        let Some(delay_max) = self.delay_max else {
            return Ok(None);
        };
        let (d1, d0) = self.path_latencies();
        let e =
            min_edge_fraction_with(d0, d1, LatencyBudget { delay_max }, self.edge_fraction_form)?;
        Ok(Some(1.0 - e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub sweep_deltas: Vec<f64>,
    /// Held-out samples per seed for gate separation scoring.
    pub heldout_samples: usize,
    pub output: PathBuf,
    /// Stream layout; the seed field is replaced by each cell's seed.
    pub stream: StreamSpec,
    pub edge: EdgeChoice,
    pub cloud_perturbation: f64,
    pub gate: GateSettings,
    pub train: TrainConfig,
    pub maxsize: usize,
    pub maxtime: usize,
    pub latency: LatencySettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds list is empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies list is empty".into()));
        }
        if let Some(d) = self
            .sweep_deltas
            .iter()
            .chain([&self.gate.threshold])
            .find(|d| !(0.0..=1.0).contains(*d))
        {
            return Err(Error::Config(format!("threshold {d} outside [0, 1]")));
        }
        if let HeuristicThreshold::Fixed(d) = self.gate.heuristic_threshold {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Config(format!("threshold {d} outside [0, 1]")));
            }
        }
        if self.gate.calibration_samples == 0 {
            return Err(Error::Config("calibration_samples must be positive".into()));
        }
        if self.stream.tasks.is_empty() {
            return Err(Error::Config("stream has no tasks".into()));
        }
        self.stream.validate()?;
        if let EdgeChoice::Trainable {
            pretrain_samples,
            pretrain_learning_rate,
            ..
        } = self.edge
        {
            if pretrain_samples == 0 {
                return Err(Error::Config("pretrain_samples must be positive".into()));
            }
            if !(pretrain_learning_rate > 0.0 && pretrain_learning_rate.is_finite()) {
                return Err(Error::Config(
                    "pretrain_learning_rate must be positive".into(),
                ));
            }
        }
        if !(self.gate.pretrain_learning_rate > 0.0 && self.gate.pretrain_learning_rate.is_finite())
        {
            return Err(Error::Config(
                "gate pretrain_learning_rate must be positive".into(),
            ));
        }
        self.orchestrator_config(Strategy::Adaptive, self.gate.threshold)?
            .validate()?;
        self.latency.max_cur()?;
        Ok(())
    }

    pub fn latency_model(&self) -> Result<LatencyModel> {
        self.latency.model(self.stream.height, self.stream.width)
    }

    /// Orchestrator settings for `strategy` routing at `threshold`.
    pub fn orchestrator_config(
        &self,
        strategy: Strategy,
        threshold: f64,
    ) -> Result<crate::orchestrator::OrchestratorConfig> {
        let policy = GatePolicy {
            scorer: strategy.scorer(),
            threshold,
            mess_pixel_threshold: self.gate.mess_pixel_threshold,
        };
        let mut cfg = crate::orchestrator::OrchestratorConfig::new(policy, self.latency_model()?);
        cfg.maxsize = self.maxsize;
        cfg.maxtime = self.maxtime;
        cfg.train = self.train;
        cfg.adaptive_updates = strategy.adaptive();
        Ok(cfg)
    }

    /// Stream spec for one seed.
    pub fn stream_for(&self, seed: u64) -> StreamSpec {
        StreamSpec {
            seed,
            ..self.stream.clone()
        }
    }
}
