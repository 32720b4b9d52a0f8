//! Built-in experiment presets.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::{
    EdgeChoice, ExperimentConfig, GateSettings, HeuristicThreshold, LatencySettings, LatencySource,
    Strategy,
};
use crate::adapt::TrainConfig;
use crate::error::{Error, Result};
use crate::gating::{DEFAULT_HIDDEN_DIM, DEFAULT_MESS_PIXEL_THRESHOLD, DEFAULT_THRESHOLD};
use crate::orchestrator::{DEFAULT_MAXSIZE, DEFAULT_MAXTIME};
use crate::simenv::{
    ClassAppearance, EdgeFractionForm, LatencyPreset, StreamSpec, TaskSpec, DEFAULT_BANDWIDTH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Five drifting tasks on 16×16 grids with four classes.
    Drift,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Drift => "drift",
        }
    }

    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::Drift => drift_preset(),
        }
    }

    pub(crate) fn trainable_edge(self) -> EdgeChoice {
        EdgeChoice::Trainable {
            pretrain_samples: 200,
            pretrain_epochs: 1000,
            pretrain_learning_rate: 2.0,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drift" => Ok(Preset::Drift),
            _ => Err(Error::Config(format!("unknown preset {s:?}"))),
        }
    }
}

fn task(frequencies: [f64; 4], illumination: [f64; 3]) -> TaskSpec {
    TaskSpec {
        length: 300,
        frequencies: frequencies.to_vec(),
        illumination,
    }
}

fn look(r: f64, g: f64, b: f64) -> ClassAppearance {
    ClassAppearance {
        mean: [r, g, b],
        std: 15.0,
    }
}

/// Default comparison setup: 5 tasks × 300 samples. The class mix moves
/// gradually from one end of the class list to the other while the scene
/// darkens by a fixed step per task, so a model fitted to the first task
/// falls further behind with every task.
pub fn drift_preset() -> ExperimentConfig {
    ExperimentConfig {
        name: "drift".into(),
        seeds: vec![1, 2, 3, 4, 5],
        strategies: Strategy::ALL.to_vec(),
        sweep_deltas: (0..=100).map(|i| f64::from(i) / 100.0).collect(),
        heldout_samples: 200,
        output: PathBuf::from("results"),
        stream: StreamSpec {
            class_count: 4,
            height: 16,
            width: 16,
            tasks: vec![
                task([0.4, 0.3, 0.2, 0.1], [0.0, 0.0, 0.0]),
                task([0.3, 0.3, 0.2, 0.2], [-12.0, -12.0, -8.0]),
                task([0.25, 0.25, 0.25, 0.25], [-24.0, -24.0, -16.0]),
                task([0.2, 0.2, 0.3, 0.3], [-36.0, -36.0, -24.0]),
                task([0.1, 0.2, 0.3, 0.4], [-48.0, -48.0, -32.0]),
            ],
            appearance: vec![
                look(70.0, 120.0, 60.0),
                look(130.0, 130.0, 130.0),
                look(180.0, 90.0, 70.0),
                look(90.0, 120.0, 190.0),
            ],
            regions: (1, 4),
            region_scale: 0.5,
            noise_scale: (0.3, 2.5),
            seed: 0,
        },
        edge: Preset::Drift.trainable_edge(),
        cloud_perturbation: 0.1,
        gate: GateSettings {
            threshold: DEFAULT_THRESHOLD,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            mess_pixel_threshold: DEFAULT_MESS_PIXEL_THRESHOLD,
            heuristic_threshold: HeuristicThreshold::Matched,
            calibration_samples: 200,
            pretrain_epochs: 5000,
            pretrain_learning_rate: 0.5,
        },
        train: TrainConfig {
            learning_rate: 0.2,
            beta: 0.2,
            epochs: 50,
            log_clamp: 1e-6,
        },
        maxsize: DEFAULT_MAXSIZE,
        maxtime: DEFAULT_MAXTIME,
        latency: LatencySettings {
            source: LatencySource::Preset(LatencyPreset::CloudRobotics),
            bandwidth_bytes_per_s: DEFAULT_BANDWIDTH,
            edge_fraction_form: EdgeFractionForm::Exact,
            delay_max: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_preset_is_valid() {
        let cfg = drift_preset();
        cfg.validate().unwrap();
        assert_eq!(cfg.stream.total_len(), 1500);
        assert_eq!((cfg.stream.height, cfg.stream.width), (16, 16));
        assert_eq!(cfg.stream.class_count, 4);
    }
}
