//! Hard-input mining: confidence scores for an edge prediction and the
//! threshold rule that routes a sample to the edge or the cloud.
//!
//! Four scorers are available. [`Scorer::Learned`] runs the trainable
//! [`Gate`] over a fixed six-value summary of the probability map; the
//! other three are training-free heuristics over the top-1 / top-2
//! probability statistics.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{top1_map, top2_margin, ProbMap};
use crate::text::{checked_count, write_grid, TextTensor, TokenReader};

pub const FEATURE_COUNT: usize = 6;
pub const DEFAULT_HIDDEN_DIM: usize = 16;
pub const DEFAULT_THRESHOLD: f64 = 0.75;
pub const DEFAULT_MESS_PIXEL_THRESHOLD: f64 = 0.5;
const INIT_RANGE: f64 = 0.1;

/// Summary statistics of a probability map, all in `[0, 1]`:
/// mean top-1 probability, mean top-2 margin, mean normalized entropy, and
/// the fractions of pixels whose top-1 probability reaches 0.5, 0.7 and 0.9.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateFeatures(pub [f64; FEATURE_COUNT]);

impl GateFeatures {
    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.0
    }
}

pub fn extract_features(pred: &ProbMap) -> Result<GateFeatures> {
    let m = pred.class_count();
    if m < 2 {
        return Err(Error::TooFewClasses { needed: 2, got: m });
    }
    let ln_m = (m as f64).ln();
    let mut acc = [0.0; FEATURE_COUNT];
    for column in pred.pixel_columns() {
        let top1 = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let entropy: f64 = column
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        acc[0] += top1;
        acc[1] += top2_margin(&column);
        acc[2] += (entropy / ln_m).clamp(0.0, 1.0);
        acc[3] += f64::from(u8::from(top1 >= 0.5));
        acc[4] += f64::from(u8::from(top1 >= 0.7));
        acc[5] += f64::from(u8::from(top1 >= 0.9));
    }
    let n = pred.pixel_count() as f64;
    Ok(GateFeatures(acc.map(|v| (v / n).clamp(0.0, 1.0))))
}

/// One-hidden-layer scorer `6 → hidden (tanh) → 1 (sigmoid)`.
///
/// Parameters are stored flat in layer order: the `hidden×6` input weights
/// (row per hidden unit), the hidden biases, the output weights, and the
/// output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    hidden_dim: usize,
    params: Vec<f64>,
}

impl Gate {
    pub fn param_count(hidden_dim: usize) -> usize {
        FEATURE_COUNT * hidden_dim + hidden_dim + hidden_dim + 1
    }

    pub fn zeros(hidden_dim: usize) -> Result<Self> {
        Self::from_params(hidden_dim, vec![0.0; Self::param_count(hidden_dim)])
    }

    /// Uniform initialization in `[-0.1, 0.1]` from `seed`.
    pub fn seeded(hidden_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..Self::param_count(hidden_dim))
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        Self::from_params(hidden_dim, params)
    }

    pub fn from_params(hidden_dim: usize, params: Vec<f64>) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::InvalidValue(
                "gate hidden_dim must be positive".into(),
            ));
        }
        if params.len() != Self::param_count(hidden_dim) {
            return Err(Error::DimensionMismatch(format!(
                "gate with hidden_dim {hidden_dim} needs {} weights, got {}",
                Self::param_count(hidden_dim),
                params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite gate weight {bad}")));
        }
        Ok(Self { hidden_dim, params })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn hidden_activations(&self, x: &[f64; FEATURE_COUNT]) -> Vec<f64> {
        let h = self.hidden_dim;
        let (w1, rest) = self.params.split_at(FEATURE_COUNT * h);
        let b1 = &rest[..h];
        (0..h)
            .map(|j| {
                let row = &w1[j * FEATURE_COUNT..(j + 1) * FEATURE_COUNT];
                let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b1[j];
                z.tanh()
            })
            .collect()
    }

    fn output_logit(&self, hidden: &[f64]) -> f64 {
        let h = self.hidden_dim;
        let w2 = &self.params[FEATURE_COUNT * h + h..FEATURE_COUNT * h + 2 * h];
        let b2 = self.params[FEATURE_COUNT * h + 2 * h];
        w2.iter().zip(hidden).map(|(w, a)| w * a).sum::<f64>() + b2
    }

    /// Forward pass; the result lies strictly inside `(0, 1)`.
    pub fn forward(&self, feats: &GateFeatures) -> f64 {
        let hidden = self.hidden_activations(&feats.0);
        sigmoid(self.output_logit(&hidden))
    }

    /// Forward pass together with the gradient of the output with respect
    /// to every parameter, in parameter order.
    pub fn forward_with_grad(&self, feats: &GateFeatures) -> (f64, Vec<f64>) {
        let h = self.hidden_dim;
        let x = &feats.0;
        let hidden = self.hidden_activations(x);
        let out = sigmoid(self.output_logit(&hidden));
        let d_logit = out * (1.0 - out);
        let w2 = &self.params[FEATURE_COUNT * h + h..FEATURE_COUNT * h + 2 * h];

        let mut grad = vec![0.0; self.params.len()];
        for j in 0..h {
            let d_pre = d_logit * w2[j] * (1.0 - hidden[j] * hidden[j]);
            for i in 0..FEATURE_COUNT {
                grad[j * FEATURE_COUNT + i] = d_pre * x[i];
            }
            grad[FEATURE_COUNT * h + j] = d_pre;
            grad[FEATURE_COUNT * h + h + j] = d_logit * hidden[j];
        }
        grad[FEATURE_COUNT * h + 2 * h] = d_logit;
        (out, grad)
    }
}

fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl TextTensor for Gate {
    fn to_text(&self) -> String {
        let h = self.hidden_dim;
        let mut out = format!("GW {h}\n");
        let (w1, rest) = self.params.split_at(FEATURE_COUNT * h);
        write_grid(&mut out, w1, FEATURE_COUNT);
        write_grid(&mut out, &rest[..h], h);
        write_grid(&mut out, &rest[h..2 * h], h);
        write_grid(&mut out, &rest[2 * h..], 1);
        out
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TokenReader::open(text, "GW", 1)?;
        let h = r.dim(0)?;
        checked_count(&[h, FEATURE_COUNT + 2])?;
        let params = r.take(Self::param_count(h))?;
        r.finish()?;
        Self::from_params(h, params)
    }
}

pub fn score_learned(gate: &Gate, pred: &ProbMap) -> Result<f64> {
    Ok(gate.forward(&extract_features(pred)?))
}

/// Fraction of pixels whose top-1 probability reaches `pixel_threshold`.
pub fn score_mess(pred: &ProbMap, pixel_threshold: f64) -> f64 {
    let top1 = top1_map(pred);
    top1.iter().filter(|&&p| p >= pixel_threshold).count() as f64 / top1.len() as f64
}

/// Mean top-1 minus top-2 margin.
pub fn score_sm(pred: &ProbMap) -> Result<f64> {
    let margins = crate::tensor::top2_margin_map(pred)?;
    Ok(mean(&margins).clamp(0.0, 1.0))
}

/// Mean top-1 probability.
pub fn score_spp(pred: &ProbMap) -> f64 {
    mean(&top1_map(pred)).clamp(0.0, 1.0)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scorer {
    Learned,
    Mess,
    Sm,
    Spp,
}

impl Scorer {
    pub const ALL: [Scorer; 4] = [Scorer::Learned, Scorer::Mess, Scorer::Sm, Scorer::Spp];

    pub fn name(self) -> &'static str {
        match self {
            Scorer::Learned => "learned",
            Scorer::Mess => "mess",
            Scorer::Sm => "sm",
            Scorer::Spp => "spp",
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scorer::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scorer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Edge,
    Cloud,
}

impl Decision {
    pub fn name(self) -> &'static str {
        match self {
            Decision::Edge => "edge",
            Decision::Cloud => "cloud",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatePolicy {
    pub scorer: Scorer,
    pub threshold: f64,
    pub mess_pixel_threshold: f64,
}

impl Default for GatePolicy {
    fn default() -> Self {
        Self {
            scorer: Scorer::Learned,
            threshold: DEFAULT_THRESHOLD,
            mess_pixel_threshold: DEFAULT_MESS_PIXEL_THRESHOLD,
        }
    }
}

impl GatePolicy {
    pub fn new(scorer: Scorer, threshold: f64) -> Result<Self> {
        let policy = Self {
            scorer,
            threshold,
            ..Self::default()
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidValue(format!(
                "gate threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.mess_pixel_threshold) {
            return Err(Error::InvalidValue(format!(
                "pixel threshold {} outside [0, 1]",
                self.mess_pixel_threshold
            )));
        }
        Ok(())
    }

    /// Confidence of `pred` under this policy's scorer.
    pub fn confidence(&self, gate: &Gate, pred: &ProbMap) -> Result<f64> {
        match self.scorer {
            Scorer::Learned => score_learned(gate, pred),
            Scorer::Mess => Ok(score_mess(pred, self.mess_pixel_threshold)),
            Scorer::Sm => score_sm(pred),
            Scorer::Spp => Ok(score_spp(pred)),
        }
    }

    pub fn decide(&self, confidence: f64) -> Decision {
        decide(confidence, self.threshold)
    }
}

/// Edge iff `confidence > threshold`; ties go to the cloud.
pub fn decide(confidence: f64, threshold: f64) -> Decision {
    if confidence > threshold {
        Decision::Edge
    } else {
        Decision::Cloud
    }
}
