//! Simulation environment: seeded drifting sample streams and the two-path
//! latency model with its budget algebra.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::gating::Decision;
use crate::tensor::{Image, SemanticMask, CHANNELS};

const FREQ_TOLERANCE: f64 = 1e-6;

/// Color distribution of one class: per-channel mean intensity and a common
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassAppearance {
    pub mean: [f64; 3],
    pub std: f64,
}

/// One stationary segment of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub length: usize,
    /// Probability of each class being drawn for a region.
    pub frequencies: Vec<f64>,
    /// Per-channel intensity offset applied to every pixel of the task.
    pub illumination: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub class_count: usize,
    pub height: usize,
    pub width: usize,
    pub tasks: Vec<TaskSpec>,
    pub appearance: Vec<ClassAppearance>,
    /// Inclusive range of foreground regions painted per sample.
    pub regions: (usize, usize),
    /// Largest region side as a fraction of the grid side.
    pub region_scale: f64,
    /// Inclusive range of the per-sample multiplier on every class std.
    pub noise_scale: (f64, f64),
    pub seed: u64,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        let m = self.class_count;
        if m < 2 {
            return Err(Error::TooFewClasses { needed: 2, got: m });
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidValue("stream grid must be nonempty".into()));
        }
        if self.appearance.len() != m {
            return Err(Error::InvalidValue(format!(
                "{} class appearances for {m} classes",
                self.appearance.len()
            )));
        }
        for (i, a) in self.appearance.iter().enumerate() {
            if !(a.std >= 0.0 && a.std.is_finite())
                || a.mean.iter().any(|v| !(0.0..=255.0).contains(v))
            {
                return Err(Error::InvalidValue(format!(
                    "class {i} appearance is out of range"
                )));
            }
        }
        for (t, task) in self.tasks.iter().enumerate() {
            if task.length == 0 {
                return Err(Error::InvalidValue(format!("task {t} has no samples")));
            }
            if task.frequencies.len() != m {
                return Err(Error::InvalidValue(format!(
                    "task {t} has {} frequencies for {m} classes",
                    task.frequencies.len()
                )));
            }
            if task.frequencies.iter().any(|f| f.is_nan() || *f < 0.0) {
                return Err(Error::InvalidValue(format!(
                    "task {t} has a negative frequency"
                )));
            }
            let sum: f64 = task.frequencies.iter().sum();
            if (sum - 1.0).abs() > FREQ_TOLERANCE {
                return Err(Error::InvalidValue(format!(
                    "task {t} frequencies sum to {sum}"
                )));
            }
            if task.illumination.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!(
                    "task {t} illumination is not finite"
                )));
            }
        }
        if self.regions.0 > self.regions.1 {
            return Err(Error::InvalidValue("region count range is inverted".into()));
        }
        if !(self.region_scale > 0.0 && self.region_scale <= 1.0) {
            return Err(Error::InvalidValue(format!(
                "region scale {} outside (0, 1]",
                self.region_scale
            )));
        }
        let (lo, hi) = self.noise_scale;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidValue("noise scale range is invalid".into()));
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.tasks.iter().map(|t| t.length).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub task: usize,
    pub image: Image,
    pub truth: SemanticMask,
}

/// Draws every task's samples in order from one generator seeded by
/// `spec.seed`.
pub fn generate_stream(spec: &StreamSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.total_len());
    for (t, task) in spec.tasks.iter().enumerate() {
        let sampler = TaskSampler::new(spec, task)?;
        for _ in 0..task.length {
            out.push(sampler.draw(&mut rng, t));
        }
    }
    Ok(out)
}

/// Draws `count` fresh samples from task `task` using an independent seed.
pub fn generate_task_samples(
    spec: &StreamSpec,
    task: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    let task_spec = spec
        .tasks
        .get(task)
        .ok_or_else(|| Error::InvalidValue(format!("no task {task}")))?;
    let sampler = TaskSampler::new(spec, task_spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| sampler.draw(&mut rng, task)).collect())
}

struct TaskSampler<'a> {
    spec: &'a StreamSpec,
    task: &'a TaskSpec,
    labels: WeightedIndex<f64>,
}

impl<'a> TaskSampler<'a> {
    fn new(spec: &'a StreamSpec, task: &'a TaskSpec) -> Result<Self> {
        let labels = WeightedIndex::new(&task.frequencies)
            .map_err(|e| Error::InvalidValue(format!("class frequencies: {e}")))?;
        Ok(Self { spec, task, labels })
    }

    fn draw(&self, rng: &mut ChaCha8Rng, task_index: usize) -> Sample {
        let spec = self.spec;
        let (h, w) = (spec.height, spec.width);
        let mut labels = vec![self.labels.sample(rng); h * w];

        let count = rng.random_range(spec.regions.0..=spec.regions.1);
        let max_h = ((spec.region_scale * h as f64).round() as usize).clamp(1, h);
        let max_w = ((spec.region_scale * w as f64).round() as usize).clamp(1, w);
        for _ in 0..count {
            let label = self.labels.sample(rng);
            let rh = rng.random_range(1..=max_h);
            let rw = rng.random_range(1..=max_w);
            let top = rng.random_range(0..=h - rh);
            let left = rng.random_range(0..=w - rw);
            let elliptical = rng.random::<bool>();
            let (cy, cx) = ((rh as f64 - 1.0) / 2.0, (rw as f64 - 1.0) / 2.0);
            let (ry, rx) = (rh as f64 / 2.0, rw as f64 / 2.0);
            for r in 0..rh {
                for c in 0..rw {
                    let inside = !elliptical || {
                        let dy = (r as f64 - cy) / ry;
                        let dx = (c as f64 - cx) / rx;
                        dy * dy + dx * dx <= 1.0
                    };
                    if inside {
                        labels[(top + r) * w + left + c] = label;
                    }
                }
            }
        }

        let (lo, hi) = spec.noise_scale;
        let noise_scale = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut data = vec![0u8; CHANNELS * h * w];
        for (px, &label) in labels.iter().enumerate() {
            let look = &spec.appearance[label];
            for ch in 0..CHANNELS {
                let v = look.mean[ch]
                    + self.task.illumination[ch]
                    + look.std * noise_scale * unit.sample(rng);
                data[ch * h * w + px] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        Sample {
            task: task_index,
            image: Image::new(h, w, data).expect("generated image has consistent shape"),
            truth: SemanticMask::new(spec.class_count, h, w, labels)
                .expect("generated labels are in range"),
        }
    }
}

/// Size of a transfer as a function of the image grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PayloadSize {
    PerPixel(f64),
    Fixed(f64),
}

impl PayloadSize {
    pub fn bytes(self, height: usize, width: usize) -> f64 {
        match self {
            PayloadSize::PerPixel(b) => b * (height * width) as f64,
            PayloadSize::Fixed(b) => b,
        }
    }
}

/// 4 Mbit/s in bytes per second.
pub const DEFAULT_BANDWIDTH: f64 = 4e6 / 8.0;

/// Latency of the two inference paths: the edge path costs the edge compute
/// time; the cloud path adds the upload, cloud compute and download.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub edge_compute_s: f64,
    pub cloud_compute_s: f64,
    pub bandwidth_bytes_per_s: f64,
    pub upload: PayloadSize,
    pub download: PayloadSize,
}

impl LatencyModel {
    pub fn new(
        edge_compute_s: f64,
        cloud_compute_s: f64,
        bandwidth_bytes_per_s: f64,
    ) -> Result<Self> {
        let lm = Self {
            edge_compute_s,
            cloud_compute_s,
            bandwidth_bytes_per_s,
            upload: PayloadSize::PerPixel(3.0),
            download: PayloadSize::PerPixel(1.0),
        };
        lm.validate()?;
        Ok(lm)
    }

    /// Chooses the cloud compute time so that, for `height×width` images
    /// with default payloads, the two paths cost exactly `d1` and `d0`.
    pub fn calibrated(
        d1: f64,
        d0: f64,
        bandwidth_bytes_per_s: f64,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let mut lm = Self::new(d1, 0.0, bandwidth_bytes_per_s)?;
        let transfer = lm.transfer_s(height, width);
        lm.cloud_compute_s = d0 - d1 - transfer;
        if lm.cloud_compute_s.is_nan() || lm.cloud_compute_s < 0.0 {
            return Err(Error::InvalidValue(format!(
                "cloud latency {d0}s is below edge latency plus transfer time {}s",
                d1 + transfer
            )));
        }
        lm.validate()?;
        Ok(lm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.edge_compute_s > 0.0 && self.edge_compute_s.is_finite()) {
            return Err(Error::InvalidValue(
                "edge compute time must be positive".into(),
            ));
        }
        if !(self.cloud_compute_s >= 0.0 && self.cloud_compute_s.is_finite()) {
            return Err(Error::InvalidValue(
                "cloud compute time must be nonnegative".into(),
            ));
        }
        if self.bandwidth_bytes_per_s.is_nan() || self.bandwidth_bytes_per_s <= 0.0 {
            return Err(Error::InvalidValue("bandwidth must be positive".into()));
        }
        for p in [self.upload, self.download] {
            let b = match p {
                PayloadSize::PerPixel(b) | PayloadSize::Fixed(b) => b,
            };
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidValue(
                    "payload size must be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    fn transfer_s(&self, height: usize, width: usize) -> f64 {
        (self.upload.bytes(height, width) + self.download.bytes(height, width))
            / self.bandwidth_bytes_per_s
    }

    pub fn d1(&self) -> f64 {
        self.edge_compute_s
    }

    pub fn d0(&self, height: usize, width: usize) -> f64 {
        self.edge_compute_s
            + self.upload.bytes(height, width) / self.bandwidth_bytes_per_s
            + self.cloud_compute_s
            + self.download.bytes(height, width) / self.bandwidth_bytes_per_s
    }

    /// Both path latencies for a grid, checking `d0 > d1 > 0`.
    pub fn path_latencies(&self, height: usize, width: usize) -> Result<(f64, f64)> {
        let (d0, d1) = (self.d0(height, width), self.d1());
        if !(d0 > d1 && d1 > 0.0) {
            return Err(Error::InvalidValue(format!(
                "cloud path ({d0}s) must be slower than edge path ({d1}s)"
            )));
        }
        Ok((d0, d1))
    }
}

/// Named `(d1, d0)` calibrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyPreset {
    CloudRobotics,
    Cityscapes,
    Ade20k,
    Synthia,
}

impl LatencyPreset {
    pub const ALL: [LatencyPreset; 4] = [
        LatencyPreset::CloudRobotics,
        LatencyPreset::Cityscapes,
        LatencyPreset::Ade20k,
        LatencyPreset::Synthia,
    ];

    /// Edge-path and cloud-path latency in seconds.
    pub fn latencies(self) -> (f64, f64) {
        match self {
            LatencyPreset::CloudRobotics => (1.12, 5.11),
            LatencyPreset::Cityscapes => (1.09, 5.83),
            LatencyPreset::Ade20k => (1.05, 4.88),
            LatencyPreset::Synthia => (1.06, 5.07),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LatencyPreset::CloudRobotics => "cloud-robotics",
            LatencyPreset::Cityscapes => "cityscapes",
            LatencyPreset::Ade20k => "ade20k",
            LatencyPreset::Synthia => "synthia",
        }
    }

    pub fn model(self, height: usize, width: usize) -> Result<LatencyModel> {
        let (d1, d0) = self.latencies();
        LatencyModel::calibrated(d1, d0, DEFAULT_BANDWIDTH, height, width)
    }
}

impl fmt::Display for LatencyPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LatencyPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown latency preset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBudget {
    pub delay_max: f64,
}

impl LatencyBudget {
    /// Checks that the budget admits at least the all-edge policy.
    pub fn check(&self, d1: f64) -> Result<()> {
        if self.delay_max < d1 {
            return Err(Error::InfeasibleBudget {
                delay_max: self.delay_max,
                d1,
            });
        }
        Ok(())
    }
}

pub fn sample_latency(decision: Decision, lm: &LatencyModel, img: &Image) -> f64 {
    match decision {
        Decision::Edge => lm.d1(),
        Decision::Cloud => lm.d0(img.height(), img.width()),
    }
}

/// Mean latency when a fraction `cur` of samples takes the cloud path.
pub fn expected_latency(cur: f64, d0: f64, d1: f64) -> f64 {
    (1.0 - cur) * d1 + cur * d0
}

/// Denominator used when solving the budget constraint for the edge fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeFractionForm {
    /// `(d0 − delay_max) / (d0 − d1)`, the exact solution of the linear
    /// constraint.
    #[default]
    Exact,
    /// `(d0 − delay_max) / (delay_max − d1)`; can exceed one. Kept for
    /// comparison only.
    BudgetDenominator,
}

impl EdgeFractionForm {
    pub fn name(self) -> &'static str {
        match self {
            EdgeFractionForm::Exact => "exact",
            EdgeFractionForm::BudgetDenominator => "budget-denominator",
        }
    }
}

impl FromStr for EdgeFractionForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "budget-denominator" => Ok(Self::BudgetDenominator),
            _ => Err(Error::Config(format!("unknown edge fraction form {s:?}"))),
        }
    }
}

/// Smallest edge fraction `e` with `(1 − e)·d0 + e·d1 ≤ delay_max`.
pub fn min_edge_fraction(d0: f64, d1: f64, budget: LatencyBudget) -> Result<f64> {
    min_edge_fraction_with(d0, d1, budget, EdgeFractionForm::Exact)
}

pub fn min_edge_fraction_with(
    d0: f64,
    d1: f64,
    budget: LatencyBudget,
    form: EdgeFractionForm,
) -> Result<f64> {
    if !(d0 > d1 && d1 > 0.0) {
        return Err(Error::InvalidValue(format!(
            "need d0 > d1 > 0, got d0={d0}, d1={d1}"
        )));
    }
    budget.check(d1)?;
    let dmax = budget.delay_max;
    let raw = match form {
        EdgeFractionForm::Exact => (d0 - dmax) / (d0 - d1),
        EdgeFractionForm::BudgetDenominator => (d0 - dmax) / (dmax - d1),
    };
    Ok(if raw.is_nan() {
        1.0
    } else {
        raw.clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(freqs: Vec<Vec<f64>>, length: usize) -> StreamSpec {
        let m = freqs[0].len();
        StreamSpec {
            class_count: m,
            height: 16,
            width: 16,
            tasks: freqs
                .into_iter()
                .map(|f| TaskSpec {
                    length,
                    frequencies: f,
                    illumination: [0.0; 3],
                })
                .collect(),
            appearance: (0..m)
                .map(|c| ClassAppearance {
                    mean: [40.0 + 50.0 * c as f64, 100.0, 200.0 - 40.0 * c as f64],
                    std: 20.0,
                })
                .collect(),
            regions: (1, 4),
            region_scale: 0.6,
            noise_scale: (0.5, 1.5),
            seed: 17,
        }
    }

    #[test]
    fn one_hot_frequencies_label_everything() {
        let spec = small_spec(vec![vec![0.0, 0.0, 1.0]], 10);
        for s in generate_stream(&spec).unwrap() {
            assert!(s.truth.labels().iter().all(|&l| l == 2));
        }
    }

    #[test]
    fn stream_is_deterministic() {
        let spec = small_spec(vec![vec![0.5, 0.5], vec![0.2, 0.8]], 5);
        let a = generate_stream(&spec).unwrap();
        assert_eq!(a, generate_stream(&spec).unwrap());
        assert_eq!(a.len(), 10);
        assert_eq!(a[7].task, 1);
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(a, generate_stream(&other).unwrap());
    }

    #[test]
    fn class_share_follows_frequencies() {
        let spec = small_spec(vec![vec![0.7, 0.3]], 200);
        let samples = generate_stream(&spec).unwrap();
        let total = (200 * 256) as f64;
        let zeros = samples
            .iter()
            .flat_map(|s| s.truth.labels())
            .filter(|&&l| l == 0)
            .count() as f64;
        assert!(
            (zeros / total - 0.7).abs() <= 0.05,
            "share {}",
            zeros / total
        );
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec(vec![vec![0.5, 0.4]], 3);
        assert!(spec.validate().is_err());
        spec.tasks[0].frequencies = vec![0.5, 0.5];
        assert!(spec.validate().is_ok());
        spec.tasks[0].length = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn table_latencies() {
        let lm = LatencyPreset::CloudRobotics.model(16, 16).unwrap();
        let img = Image::filled(16, 16, [0, 0, 0]).unwrap();
        assert_eq!(sample_latency(Decision::Edge, &lm, &img), 1.12);
        assert!((sample_latency(Decision::Cloud, &lm, &img) - 5.11).abs() < 1e-12);

        let mut zero = LatencyModel::new(0.5, 2.0, 1000.0).unwrap();
        zero.upload = PayloadSize::Fixed(0.0);
        zero.download = PayloadSize::Fixed(0.0);
        assert_eq!(sample_latency(Decision::Cloud, &zero, &img), 2.5);
    }

    #[test]
    fn calibration_rejects_impossible_targets() {
        // 1000x1000 RGB at 500 kB/s already takes 8 s to move
        assert!(LatencyModel::calibrated(1.0, 5.0, DEFAULT_BANDWIDTH, 1000, 1000).is_err());
    }

    #[test]
    fn expected_latency_examples() {
        assert!((expected_latency(0.3712, 5.11, 1.12) - 2.601).abs() < 1e-3);
        assert!((expected_latency(0.3498, 5.83, 1.09) - 2.748).abs() < 1e-3);
        assert_eq!(expected_latency(0.0, 5.0, 1.0), 1.0);
        assert_eq!(expected_latency(1.0, 5.0, 1.0), 5.0);
    }

    #[test]
    fn min_edge_fraction_examples() {
        let b = |d| LatencyBudget { delay_max: d };
        assert_eq!(min_edge_fraction(5.11, 1.12, b(5.11)).unwrap(), 0.0);
        assert_eq!(min_edge_fraction(5.11, 1.12, b(1.12)).unwrap(), 1.0);
        let e = min_edge_fraction(5.11, 1.12, b(3.0)).unwrap();
        assert!((e - 2.11 / 3.99).abs() < 1e-12);
        assert!((e - 0.5288).abs() < 1e-4);
        assert!(matches!(
            min_edge_fraction(5.11, 1.12, b(1.0)),
            Err(Error::InfeasibleBudget { .. })
        ));
        assert!(min_edge_fraction(1.0, 2.0, b(1.5)).is_err());
    }

    #[test]
    fn budget_denominator_form_overshoots() {
        let b = LatencyBudget { delay_max: 3.0 };
        let raw = (5.11 - 3.0) / (3.0 - 1.12);
        assert!(raw > 1.0);
        let e = min_edge_fraction_with(5.11, 1.12, b, EdgeFractionForm::BudgetDenominator).unwrap();
        assert_eq!(e, 1.0);
    }
}
