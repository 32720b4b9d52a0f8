//! Cell execution: per-seed preparation, the strategy matrix, threshold
//! sweeps and gate separation scoring.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::{EdgeChoice, ExperimentConfig, HeuristicThreshold, Strategy};
use crate::adapt::{loss_f, update_f, update_h, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::assisted_inference;
use crate::gating::{
    decide, extract_features, score_learned, score_mess, score_sm, score_spp, Decision, Gate,
    Scorer,
};
use crate::metrics::{auc_low_is_positive, hard_input_truth, mean_iou, RunReport};
use crate::models::{
    CloudMaskModel, EdgeModel, OracleCloudModel, OracleEdgeModel, TrainableEdgeModel,
};
use crate::orchestrator::Orchestrator;
use crate::simenv::{generate_stream, generate_task_samples, Sample};
use crate::tensor::{argmax_labels, ProbMap};

const SALT_PRETRAIN: u64 = 1;
const SALT_CALIBRATION: u64 = 2;
const SALT_EDGE_INIT: u64 = 3;
const SALT_GATE_INIT: u64 = 4;
const SALT_CLOUD: u64 = 5;
const SALT_ORACLE_EDGE: u64 = 6;
const SALT_HELDOUT: u64 = 100;

/// Independent sub-seed for one purpose within a cell seed.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
enum PreparedEdge {
    Trainable(TrainableEdgeModel),
    Oracle(OracleEdgeModel),
}

/// Everything the cells of one seed share: the stream, the pretrained edge
/// model and gate, the cloud model and the calibrated heuristic thresholds.
#[derive(Clone)]
pub struct Prepared {
    pub seed: u64,
    pub stream: Vec<Sample>,
    edge: PreparedEdge,
    pub gate: Gate,
    pub cloud: Arc<OracleCloudModel>,
    pub heuristic_thresholds: BTreeMap<Scorer, f64>,
}

impl Prepared {
    pub fn edge_model(&self) -> Box<dyn EdgeModel> {
        match &self.edge {
            PreparedEdge::Trainable(m) => Box::new(m.clone()),
            PreparedEdge::Oracle(m) => Box::new(m.clone()),
        }
    }

    fn edge_ref(&self) -> &dyn EdgeModel {
        match &self.edge {
            PreparedEdge::Trainable(m) => m,
            PreparedEdge::Oracle(m) => m,
        }
    }

    /// Routing threshold `strategy` uses in this seed.
    pub fn threshold(&self, cfg: &ExperimentConfig, strategy: Strategy) -> f64 {
        match strategy {
            Strategy::Adaptive | Strategy::Frozen => cfg.gate.threshold,
            Strategy::EdgeOnly => 0.0,
            Strategy::CloudOnly => 1.0,
            Strategy::Mess | Strategy::Sm | Strategy::Spp => {
                self.heuristic_thresholds[&strategy.scorer()]
            }
        }
    }
}

fn fused_labels(
    pred: &ProbMap,
    cloud: &dyn CloudMaskModel,
    sample: &Sample,
) -> Result<crate::tensor::SemanticMask> {
    let masks = cloud.infer(&sample.image, Some(&sample.truth))?;
    Ok(assisted_inference(pred, &masks)?.semantic)
}

fn heuristic_confidence(scorer: Scorer, pred: &ProbMap, mess_pixel: f64) -> Result<f64> {
    match scorer {
        Scorer::Mess => Ok(score_mess(pred, mess_pixel)),
        Scorer::Sm => score_sm(pred),
        Scorer::Spp => Ok(score_spp(pred)),
        Scorer::Learned => Err(Error::InvalidValue(
            "learned gate is not a heuristic".into(),
        )),
    }
}

/// Generates the stream and pretrains the models for one seed.
///
/// The trainable edge model is fitted to ground truth on fresh task-0
/// samples. The gate is then fitted on another task-0 set, using the fused
/// cloud-assisted labels as targets exactly as a training round would.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let spec = cfg.stream_for(seed);
    let stream = generate_stream(&spec)?;
    let m = spec.class_count;

    let edge = match cfg.edge {
        EdgeChoice::Trainable {
            pretrain_samples,
            pretrain_epochs,
            pretrain_learning_rate,
        } => {
            let mut model = TrainableEdgeModel::seeded(m, derive_seed(seed, SALT_EDGE_INIT))?;
            if pretrain_epochs > 0 {
                let batch: Vec<_> = generate_task_samples(
                    &spec,
                    0,
                    pretrain_samples,
                    derive_seed(seed, SALT_PRETRAIN),
                )?
                .into_iter()
                .map(|s| (s.image, s.truth))
                .collect();
                let train = TrainConfig {
                    learning_rate: pretrain_learning_rate,
                    epochs: pretrain_epochs,
                    ..cfg.train
                };
                update_f(&mut model, &batch, &train)?;
            }
            PreparedEdge::Trainable(model)
        }
        EdgeChoice::Oracle {
            correctness,
            temperature,
        } => PreparedEdge::Oracle(OracleEdgeModel::new(
            m,
            correctness,
            temperature,
            derive_seed(seed, SALT_ORACLE_EDGE),
        )?),
    };
    let cloud = Arc::new(OracleCloudModel::new(
        cfg.cloud_perturbation,
        derive_seed(seed, SALT_CLOUD),
    )?);

    let mut prepared = Prepared {
        seed,
        stream,
        edge,
        gate: Gate::seeded(cfg.gate.hidden_dim, derive_seed(seed, SALT_GATE_INIT))?,
        cloud,
        heuristic_thresholds: BTreeMap::new(),
    };

    let calibration = generate_task_samples(
        &spec,
        0,
        cfg.gate.calibration_samples,
        derive_seed(seed, SALT_CALIBRATION),
    )?;
    let preds = calibration
        .iter()
        .map(|s| prepared.edge_ref().infer(&s.image, Some(&s.truth)))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::with_capacity(calibration.len());
    for (s, pred) in calibration.iter().zip(&preds) {
        let fused = fused_labels(pred, prepared.cloud.as_ref(), s)?;
        pairs.push((
            extract_features(pred)?,
            loss_f(pred, &fused, cfg.train.log_clamp)?,
        ));
    }
    if cfg.gate.pretrain_epochs > 0 {
        let train = TrainConfig {
            learning_rate: cfg.gate.pretrain_learning_rate,
            epochs: cfg.gate.pretrain_epochs,
            ..cfg.train
        };
        update_h(&mut prepared.gate, &pairs, &train)?;
    }

    let uploads = pairs
        .iter()
        .filter(|(f, _)| decide(prepared.gate.forward(f), cfg.gate.threshold) == Decision::Cloud)
        .count();
    for scorer in [Scorer::Mess, Scorer::Sm, Scorer::Spp] {
        let threshold = match cfg.gate.heuristic_threshold {
            HeuristicThreshold::Fixed(d) => d,
            HeuristicThreshold::Matched => {
                let mut conf = preds
                    .iter()
                    .map(|p| heuristic_confidence(scorer, p, cfg.gate.mess_pixel_threshold))
                    .collect::<Result<Vec<_>>>()?;
                conf.sort_by(f64::total_cmp);
                match uploads {
                    0 => 0.0,
                    k => conf[k - 1],
                }
            }
        };
        prepared.heuristic_thresholds.insert(scorer, threshold);
    }
    Ok(prepared)
}

/// Runs one strategy over the prepared stream.
pub fn run_cell(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    strategy: Strategy,
) -> Result<RunReport> {
    let ocfg = cfg.orchestrator_config(strategy, prepared.threshold(cfg, strategy))?;
    let cloud: Arc<dyn CloudMaskModel> = prepared.cloud.clone();
    Orchestrator::new(ocfg, prepared.edge_model(), prepared.gate.clone(), cloud)?
        .run(&prepared.stream)
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub strategy: Strategy,
    pub seed: u64,
    /// Routing threshold, when preparation succeeded.
    pub threshold: Option<f64>,
    pub result: Result<RunReport>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Cells in seed-major, then strategy, order of the config.
    pub cells: Vec<CellOutcome>,
}

impl ExperimentResult {
    pub fn failed(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.result.is_err())
    }

    /// Mean collaborative mIoU of `strategy` over its successful cells.
    pub fn mean_miou(&self, strategy: Strategy) -> Option<f64> {
        let values: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.strategy == strategy)
            .filter_map(|c| c.result.as_ref().ok()?.miou())
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Runs every (strategy, seed) cell. A failing cell is recorded and the
/// others still run; only an invalid config fails the whole call.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let prepared: Vec<Result<Prepared>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| prepare_seed(cfg, seed))
        .collect();
    let jobs: Vec<(usize, Strategy)> = (0..cfg.seeds.len())
        .flat_map(|i| cfg.strategies.iter().map(move |&s| (i, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(i, strategy)| {
            let seed = cfg.seeds[i];
            match &prepared[i] {
                Ok(p) => CellOutcome {
                    strategy,
                    seed,
                    threshold: Some(p.threshold(cfg, strategy)),
                    result: run_cell(cfg, p, strategy),
                },
                Err(e) => CellOutcome {
                    strategy,
                    seed,
                    threshold: None,
                    result: Err(e.clone()),
                },
            }
        })
        .collect();
    Ok(ExperimentResult { cells })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub seed: u64,
    pub scorer: Scorer,
    pub delta: f64,
    pub cur: f64,
    pub miou: f64,
}

struct Scored {
    confidence: [f64; 4],
    iou_edge: f64,
    iou_fused: f64,
}

/// Threshold sweep with the pretrained models held fixed: each sample is
/// scored once by every scorer, then routed at every `delta`. Points are
/// ordered by seed, scorer, then `deltas` order.
pub fn sweep_delta(cfg: &ExperimentConfig, deltas: &[f64]) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if let Some(d) = deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::Config(format!("threshold {d} outside [0, 1]")));
    }
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SweepPoint>> {
            let prepared = prepare_seed(cfg, seed)?;
            let edge = prepared.edge_ref();
            let scored = prepared
                .stream
                .iter()
                .map(|s| {
                    let pred = edge.infer(&s.image, Some(&s.truth))?;
                    let fused = fused_labels(&pred, prepared.cloud.as_ref(), s)?;
                    let mp = cfg.gate.mess_pixel_threshold;
                    Ok(Scored {
                        confidence: [
                            score_learned(&prepared.gate, &pred)?,
                            heuristic_confidence(Scorer::Mess, &pred, mp)?,
                            heuristic_confidence(Scorer::Sm, &pred, mp)?,
                            heuristic_confidence(Scorer::Spp, &pred, mp)?,
                        ],
                        iou_edge: mean_iou(&argmax_labels(&pred), &s.truth)?,
                        iou_fused: mean_iou(&fused, &s.truth)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n = scored.len() as f64;
            let mut points = Vec::new();
            for (k, scorer) in Scorer::ALL.into_iter().enumerate() {
                for &delta in deltas {
                    let (mut uploads, mut total) = (0usize, 0.0);
                    for s in &scored {
                        match decide(s.confidence[k], delta) {
                            Decision::Edge => total += s.iou_edge,
                            Decision::Cloud => {
                                uploads += 1;
                                total += s.iou_fused;
                            }
                        }
                    }
                    points.push(SweepPoint {
                        seed,
                        scorer,
                        delta,
                        cur: uploads as f64 / n,
                        miou: total / n,
                    });
                }
            }
            Ok(points)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Compares two mIoU-vs-CUR curves at matched upload rates. Returns
/// `(matched, covered)`: `matched` counts points of `b` with some point of
/// `a` within `tolerance` in CUR, and `covered` counts those where one such
/// point of `a` reaches at least the same mIoU.
pub fn curve_dominates(a: &[(f64, f64)], b: &[(f64, f64)], tolerance: f64) -> (usize, usize) {
    let mut matched = 0;
    let mut covered = 0;
    for &(cur_b, miou_b) in b {
        let best = a
            .iter()
            .filter(|(cur_a, _)| (cur_a - cur_b).abs() <= tolerance)
            .map(|&(_, miou_a)| miou_a)
            .max_by(f64::total_cmp);
        if let Some(best) = best {
            matched += 1;
            if best >= miou_b {
                covered += 1;
            }
        }
    }
    (matched, covered)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSeparation {
    pub seed: u64,
    /// Task the first training round happened in; held-out samples are
    /// drawn from it.
    pub task: usize,
    pub heldout: usize,
    pub hard: usize,
    pub learned_auc: f64,
    pub spp_auc: f64,
}

/// Runs the adaptive strategy until its first training round, then scores
/// how well the learned gate and the mean-top-1 heuristic pick out hard
/// inputs among fresh samples of the current task.
pub fn gate_separation(cfg: &ExperimentConfig, seed: u64) -> Result<GateSeparation> {
    cfg.validate()?;
    let prepared = prepare_seed(cfg, seed)?;
    let ocfg = cfg.orchestrator_config(Strategy::Adaptive, cfg.gate.threshold)?;
    let cloud: Arc<dyn CloudMaskModel> = prepared.cloud.clone();
    let mut orch = Orchestrator::new(ocfg, prepared.edge_model(), prepared.gate.clone(), cloud)?;
    let mut task = None;
    for s in &prepared.stream {
        orch.process_sample(&s.image, Some(&s.truth))?;
        orch.maybe_update()?;
        if orch.updates() > 0 {
            task = Some(s.task);
            break;
        }
    }
    let task =
        task.ok_or_else(|| Error::Config("stream ended before any training round".into()))?;
    let heldout = generate_task_samples(
        &cfg.stream_for(seed),
        task,
        cfg.heldout_samples,
        derive_seed(seed, SALT_HELDOUT + task as u64),
    )?;
    let mut learned = Vec::with_capacity(heldout.len());
    let mut spp = Vec::with_capacity(heldout.len());
    for s in &heldout {
        let pred = orch.edge().infer(&s.image, Some(&s.truth))?;
        let fused = fused_labels(&pred, prepared.cloud.as_ref(), s)?;
        let hard = hard_input_truth(
            mean_iou(&fused, &s.truth)?,
            mean_iou(&argmax_labels(&pred), &s.truth)?,
        );
        learned.push((score_learned(orch.gate(), &pred)?, hard));
        spp.push((score_spp(&pred), hard));
    }
    Ok(GateSeparation {
        seed,
        task,
        heldout: heldout.len(),
        hard: learned.iter().filter(|(_, h)| *h).count(),
        learned_auc: auc_low_is_positive(&learned)?,
        spp_auc: auc_low_is_positive(&spp)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let seeds: Vec<u64> = (0..8).map(|s| derive_seed(1, s)).collect();
        for (i, a) in seeds.iter().enumerate() {
            assert!(!seeds[i + 1..].contains(a));
        }
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }

    #[test]
    fn dominance_matches_within_tolerance() {
        let a = [(0.0, 0.5), (0.11, 0.8), (0.5, 0.9)];
        let b = [(0.01, 0.4), (0.125, 0.85), (0.9, 1.0)];
        // (0.01, 0.4) is covered by (0.0, 0.5); (0.125, 0.85) is matched by
        // (0.11, 0.8) but not covered; (0.9, 1.0) has no partner.
        assert_eq!(curve_dominates(&a, &b, 0.02), (2, 1));
        assert_eq!(curve_dominates(&a, &[], 0.02), (0, 0));
    }
}
