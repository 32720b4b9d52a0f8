//! Pseudo-label training of the edge model and the gate.
//!
//! The edge loss is the mean per-pixel cross-entropy against a fused
//! pseudo-label. The gate loss trades the edge loss it lets through against
//! a log barrier that keeps confidences from collapsing:
//! `c·l − β·ln c`. Both models are fit with full-batch gradient descent
//! using hand-derived gradients.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::gating::{extract_features, Gate, GateFeatures};
use crate::models::{image_features, EdgeModel, TrainableEdgeModel, CLASS_PARAMS, PIXEL_FEATURES};
use crate::tensor::{Image, ProbMap, SemanticMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub epochs: usize,
    pub log_clamp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta: 0.1,
            epochs: 50,
            log_clamp: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "beta {} must be positive",
                self.beta
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidValue("epochs must be positive".into()));
        }
        if !(self.log_clamp > 0.0 && self.log_clamp < 1e-3) {
            return Err(Error::InvalidValue(format!(
                "log clamp {} must lie in (0, 1e-3)",
                self.log_clamp
            )));
        }
        Ok(())
    }
}

/// Hard inputs and their fused pseudo-labels, oldest first.
///
/// Holds at most `capacity` pairs; pushing onto a full buffer evicts the
/// oldest pair.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<(Image, SemanticMask)>,
    evicted: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidValue(
                "replay buffer capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            evicted: 0,
        })
    }

    pub fn push(&mut self, img: Image, pseudo: SemanticMask) -> Result<()> {
        if img.height() != pseudo.height() || img.width() != pseudo.width() {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{}, pseudo-label is {}x{}",
                img.height(),
                img.width(),
                pseudo.height(),
                pseudo.width()
            )));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
            self.evicted += 1;
        }
        self.entries.push_back((img, pseudo));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Pairs dropped because the buffer was full.
    pub fn evicted(&self) -> usize {
        self.evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Image, SemanticMask)> {
        self.entries.iter()
    }

    pub fn to_batch(&self) -> Vec<(Image, SemanticMask)> {
        self.entries.iter().cloned().collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

fn check_pair(pred_hw: (usize, usize), pred_m: usize, pseudo: &SemanticMask) -> Result<()> {
    if pred_hw != (pseudo.height(), pseudo.width()) || pred_m != pseudo.class_count() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{}x{} vs pseudo-label {}x{}x{}",
            pred_m,
            pred_hw.0,
            pred_hw.1,
            pseudo.class_count(),
            pseudo.height(),
            pseudo.width()
        )));
    }
    Ok(())
}

/// Mean per-pixel `−ln p(pseudo)`, with probabilities clamped below at `eps`.
pub fn loss_f(pred: &ProbMap, pseudo: &SemanticMask, eps: f64) -> Result<f64> {
    check_pair((pred.height(), pred.width()), pred.class_count(), pseudo)?;
    let plane = pred.pixel_count();
    let total: f64 = pseudo
        .labels()
        .iter()
        .enumerate()
        .map(|(px, &l)| -pred.probs()[l * plane + px].max(eps).ln())
        .sum();
    Ok(total / plane as f64)
}

/// Batch-mean edge loss and its gradient with respect to the model
/// parameters.
pub fn edge_loss_and_grad(
    model: &TrainableEdgeModel,
    batch: &[(Image, SemanticMask)],
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("edge training batch"));
    }
    let features: Vec<_> = batch.iter().map(|(img, _)| image_features(img)).collect();
    edge_loss_and_grad_cached(model, batch, &features, eps)
}

fn edge_loss_and_grad_cached(
    model: &TrainableEdgeModel,
    batch: &[(Image, SemanticMask)],
    features: &[Vec<[f64; PIXEL_FEATURES]>],
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    let m = model.class_count();
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    let mut z = vec![0.0; m];
    for ((img, pseudo), feats) in batch.iter().zip(features) {
        check_pair((img.height(), img.width()), m, pseudo)?;
        let weight = 1.0 / (batch.len() * feats.len()) as f64;
        for (x, &label) in feats.iter().zip(pseudo.labels()) {
            model.logits(x, &mut z);
            crate::tensor::softmax_in_place(&mut z);
            let p_label = z[label];
            if p_label < eps {
                // clamped region: loss is flat in the parameters
                loss -= eps.ln() * weight;
                continue;
            }
            loss -= p_label.ln() * weight;
            for (c, &p) in z.iter().enumerate() {
                let d = (p - f64::from(u8::from(c == label))) * weight;
                let g = &mut grad[c * CLASS_PARAMS..(c + 1) * CLASS_PARAMS];
                for k in 0..PIXEL_FEATURES {
                    g[k] += d * x[k];
                }
                g[PIXEL_FEATURES] += d;
            }
        }
    }
    Ok((loss, grad))
}

/// Per-epoch losses of a fit, each evaluated before that epoch's step.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
}

impl FitReport {
    /// Loss before the first step.
    pub fn mean_loss(&self) -> f64 {
        self.epoch_losses[0]
    }

    pub fn last_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Full-batch gradient descent on the edge model, one step per epoch.
pub fn update_f(
    model: &mut TrainableEdgeModel,
    batch: &[(Image, SemanticMask)],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    if batch.is_empty() {
        return Err(Error::Empty("edge training batch"));
    }
    let features: Vec<_> = batch.iter().map(|(img, _)| image_features(img)).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grad) = edge_loss_and_grad_cached(model, batch, &features, cfg.log_clamp)?;
        epoch_losses.push(loss);
        for (w, g) in model.params_mut().iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
    }
    Ok(FitReport { epoch_losses })
}

/// `c·l − β·ln c` with `c` clamped to `[eps, 1 − eps]`.
pub fn loss_h(confidence: f64, sample_loss: f64, beta: f64, eps: f64) -> f64 {
    let c = confidence.clamp(eps, 1.0 - eps);
    c * sample_loss - beta * c.ln()
}

/// Batch-mean gate loss and its gradient with respect to the gate weights.
pub fn gate_loss_and_grad(
    gate: &Gate,
    batch: &[(GateFeatures, f64)],
    beta: f64,
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("gate training batch"));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; gate.params().len()];
    let mut loss = 0.0;
    for (feats, sample_loss) in batch {
        let (out, d_out) = gate.forward_with_grad(feats);
        let c = out.clamp(eps, 1.0 - eps);
        loss += (c * sample_loss - beta * c.ln()) / n;
        let d_conf = (sample_loss - beta / c) / n;
        for (g, d) in grad.iter_mut().zip(&d_out) {
            *g += d_conf * d;
        }
    }
    Ok((loss, grad))
}

pub fn update_h(
    gate: &mut Gate,
    batch: &[(GateFeatures, f64)],
    cfg: &TrainConfig,
) -> Result<FitReport> {
    if batch.is_empty() {
        return Err(Error::Empty("gate training batch"));
    }
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grad) = gate_loss_and_grad(gate, batch, cfg.beta, cfg.log_clamp)?;
        epoch_losses.push(loss);
        for (w, g) in gate.params_mut().iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
    }
    Ok(FitReport { epoch_losses })
}

/// Gate training pairs for `batch` under the current edge model: the gate
/// features of each prediction and its loss against the pseudo-label.
pub fn gate_batch(
    edge: &dyn EdgeModel,
    batch: &[(Image, SemanticMask)],
    eps: f64,
) -> Result<Vec<(GateFeatures, f64)>> {
    batch
        .iter()
        .map(|(img, pseudo)| {
            let pred = edge.infer(img, Some(pseudo))?;
            Ok((extract_features(&pred)?, loss_f(&pred, pseudo, eps)?))
        })
        .collect()
}

/// Empirical mean of `h·l − β·ln h` over pseudo-labelled samples. Reporting
/// only.
pub fn objective_value(
    samples: &[(Image, SemanticMask)],
    edge: &dyn EdgeModel,
    gate: &Gate,
    cfg: &TrainConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("objective sample set"));
    }
    let pairs = gate_batch(edge, samples, cfg.log_clamp)?;
    let total: f64 = pairs
        .iter()
        .map(|(f, l)| loss_h(gate.forward(f), *l, cfg.beta, cfg.log_clamp))
        .sum();
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::argmax_labels;
    use proptest::prelude::*;

    const EPS: f64 = 1e-6;

    #[test]
    fn loss_f_examples() {
        let truth = SemanticMask::new(3, 2, 2, vec![0, 1, 2, 1]).unwrap();
        assert_eq!(loss_f(&ProbMap::one_hot(&truth), &truth, EPS).unwrap(), 0.0);

        let uni = ProbMap::uniform(4, 2, 2).unwrap();
        let zeros = SemanticMask::filled(4, 2, 2, 3).unwrap();
        assert!((loss_f(&uni, &zeros, EPS).unwrap() - 4f64.ln()).abs() < 1e-12);

        let p = ProbMap::new(2, 1, 2, vec![0.5, 0.25, 0.5, 0.75]).unwrap();
        let label = SemanticMask::new(2, 1, 2, vec![0, 0]).unwrap();
        let expected = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((loss_f(&p, &label, EPS).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn loss_f_clamps_zero_probability() {
        let truth = SemanticMask::new(2, 1, 1, vec![0]).unwrap();
        let wrong = SemanticMask::new(2, 1, 1, vec![1]).unwrap();
        let l = loss_f(&ProbMap::one_hot(&truth), &wrong, EPS).unwrap();
        assert!((l + EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_f_rejects_mismatch() {
        let a = ProbMap::uniform(2, 2, 2).unwrap();
        let b = SemanticMask::filled(2, 2, 3, 0).unwrap();
        assert!(matches!(
            loss_f(&a, &b, EPS),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn loss_h_examples() {
        assert!((loss_h(1.0 - EPS, 0.7, 0.1, EPS) - 0.7).abs() < 1e-5);
        let v = loss_h(0.5, 0.8, 0.1, EPS);
        assert!((v - (0.4 + 0.1 * 2f64.ln())).abs() < 1e-12);
        assert!((v - 0.4693).abs() < 1e-4);
        assert_eq!(loss_h(0.3, 0.8, 0.0, EPS), 0.3 * 0.8);
        assert!(loss_h(0.1, 0.8, 0.0, EPS) < loss_h(0.3, 0.8, 0.0, EPS));
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        (a + b) / 2.0
    }

    proptest! {
        #[test]
        fn loss_h_minimizer(l in 0.01f64..5.0, beta in 0.01f64..1.0) {
            let found = golden_section(|c| loss_h(c, l, beta, EPS), EPS, 1.0 - EPS);
            let expected = (beta / l).min(1.0 - EPS);
            prop_assert!((found - expected).abs() < 1e-6, "found {found}, expected {expected}");
        }

        #[test]
        fn loss_h_convex(l in 0.0f64..5.0, beta in 0.01f64..1.0, a in 0.01f64..0.98, t in 0.0f64..1.0) {
            let b = a + 0.01;
            let m = t * a + (1.0 - t) * b;
            let lhs = loss_h(m, l, beta, EPS);
            let rhs = t * loss_h(a, l, beta, EPS) + (1.0 - t) * loss_h(b, l, beta, EPS);
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }

    fn checkerboard_batch() -> Vec<(Image, SemanticMask)> {
        // class 1 pixels are bright red, class 0 dark: linearly separable
        (0..3)
            .map(|k| {
                let labels: Vec<usize> = (0..16).map(|i| (i + k + i / 4) % 2).collect();
                let mut data = vec![40u8; 48];
                for (i, &l) in labels.iter().enumerate() {
                    if l == 1 {
                        data[i] = 220;
                    }
                }
                (
                    Image::new(4, 4, data).unwrap(),
                    SemanticMask::new(2, 4, 4, labels).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn update_f_with_zero_rate_keeps_parameters() {
        let mut m = TrainableEdgeModel::seeded(2, 1).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        update_f(&mut m, &checkerboard_batch(), &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn update_f_halves_loss_on_separable_task() {
        let mut m = TrainableEdgeModel::zeros(2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 200,
            ..TrainConfig::default()
        };
        let report = update_f(&mut m, &checkerboard_batch(), &cfg).unwrap();
        assert!(report.last_loss() <= 0.5 * report.mean_loss());
        assert!(report.epoch_losses.windows(2).all(|w| w[1] < w[0]));
        for (img, truth) in checkerboard_batch() {
            assert_eq!(argmax_labels(&m.predict(&img)), truth);
        }
    }

    #[test]
    fn update_f_rejects_empty_batch() {
        let mut m = TrainableEdgeModel::zeros(2).unwrap();
        assert_eq!(
            update_f(&mut m, &[], &TrainConfig::default()),
            Err(Error::Empty("edge training batch"))
        );
    }

    #[test]
    fn update_h_raises_confidence_on_zero_loss_batch() {
        let mut gate = Gate::seeded(8, 2).unwrap();
        let batch: Vec<_> = [0.2, 0.5, 0.9]
            .iter()
            .map(|&v| (GateFeatures([v, v / 2.0, 1.0 - v, v, v * v, 0.1]), 0.0))
            .collect();
        let before: Vec<f64> = batch.iter().map(|(f, _)| gate.forward(f)).collect();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            ..TrainConfig::default()
        };
        update_h(&mut gate, &batch, &cfg).unwrap();
        for ((f, _), b) in batch.iter().zip(before) {
            assert!(gate.forward(f) > b);
        }
    }

    #[test]
    fn update_h_with_zero_rate_keeps_gate() {
        let mut gate = Gate::seeded(4, 3).unwrap();
        let before = gate.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        update_h(&mut gate, &[(GateFeatures([0.5; 6]), 0.3)], &cfg).unwrap();
        assert_eq!(gate, before);
        assert!(update_h(&mut gate, &[], &cfg).is_err());
    }

    #[test]
    fn objective_examples() {
        let truth = SemanticMask::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let img = Image::filled(2, 2, [1, 2, 3]).unwrap();
        let oracle = crate::models::OracleEdgeModel::new(2, 1.0, 1e-3, 0).unwrap();
        // saturated gate: confidence rounds to 1 - eps after clamping
        let mut gate = Gate::zeros(2).unwrap();
        let n = gate.params().len();
        gate.params_mut()[n - 1] = 50.0;
        let cfg = TrainConfig::default();
        let v = objective_value(&[(img.clone(), truth.clone())], &oracle, &gate, &cfg).unwrap();
        assert!(v.abs() < 1e-5);

        let zero_gate = Gate::zeros(2).unwrap();
        let uniform = TrainableEdgeModel::zeros(2).unwrap();
        let samples = vec![
            (img.clone(), truth.clone()),
            (img, SemanticMask::filled(2, 2, 2, 1).unwrap()),
        ];
        let forward = objective_value(&samples, &uniform, &zero_gate, &cfg).unwrap();
        // uniform prediction: l = ln 2, h = 0.5
        assert!((forward - (0.5 * 2f64.ln() + 0.1 * 2f64.ln())).abs() < 1e-12);
        let reversed: Vec<_> = samples.iter().rev().cloned().collect();
        assert_eq!(
            forward,
            objective_value(&reversed, &uniform, &zero_gate, &cfg).unwrap()
        );
        assert!(objective_value(&[], &uniform, &zero_gate, &cfg).is_err());
    }

    #[test]
    fn replay_buffer_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        for k in 0..3u8 {
            buf.push(
                Image::filled(1, 1, [k, k, k]).unwrap(),
                SemanticMask::filled(2, 1, 1, 0).unwrap(),
            )
            .unwrap();
        }
        assert_eq!(buf.len(), 2);
        assert_eq!(buf.evicted(), 1);
        assert_eq!(buf.iter().next().unwrap().0.data()[0], 1);
        assert!(buf
            .push(
                Image::filled(1, 2, [0; 3]).unwrap(),
                SemanticMask::filled(2, 1, 1, 0).unwrap()
            )
            .is_err());
        buf.clear();
        assert!(buf.is_empty());
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            log_clamp: 1e-2,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
