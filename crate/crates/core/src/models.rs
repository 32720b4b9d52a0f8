//! Edge and cloud model interfaces with desk-scale implementations.
//!
//! [`TrainableEdgeModel`] is a per-pixel multinomial logistic classifier.
//! [`OracleEdgeModel`] and [`OracleCloudModel`] derive their outputs from the
//! ground truth with seeded, controllable corruption, so experiments can dial
//! edge difficulty and mask quality independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Image, ProbMap, RegionMask, RegionMaskSet, SemanticMask};
use crate::text::{checked_count, write_grid, TextTensor, TokenReader};

/// Number of per-pixel input features of the trainable model.
pub const PIXEL_FEATURES: usize = 5;
/// Parameters per class: one weight per feature plus a bias.
pub const CLASS_PARAMS: usize = PIXEL_FEATURES + 1;

/// Produces per-pixel class probabilities for an image.
///
/// `truth` is only consulted by oracle implementations, which stand in for a
/// model whose accuracy is controlled relative to the ground truth.
pub trait EdgeModel: Send + Sync {
    fn class_count(&self) -> usize;

    fn infer(&self, img: &Image, truth: Option<&SemanticMask>) -> Result<ProbMap>;

    fn as_trainable(&self) -> Option<&TrainableEdgeModel> {
        None
    }

    fn as_trainable_mut(&mut self) -> Option<&mut TrainableEdgeModel> {
        None
    }
}

/// Produces unlabeled region masks for an image.
pub trait CloudMaskModel: Send + Sync {
    fn infer(&self, img: &Image, truth: Option<&SemanticMask>) -> Result<RegionMaskSet>;
}

/// Feature vector of one pixel: the three intensities scaled to `[0, 1]`,
/// then the row and column centers scaled to `(0, 1)`.
pub fn pixel_features(img: &Image, row: usize, col: usize) -> [f64; PIXEL_FEATURES] {
    [
        f64::from(img.get(0, row, col)) / 255.0,
        f64::from(img.get(1, row, col)) / 255.0,
        f64::from(img.get(2, row, col)) / 255.0,
        (row as f64 + 0.5) / img.height() as f64,
        (col as f64 + 0.5) / img.width() as f64,
    ]
}

/// All pixel feature vectors of `img`, row-major.
pub fn image_features(img: &Image) -> Vec<[f64; PIXEL_FEATURES]> {
    let mut out = Vec::with_capacity(img.pixel_count());
    for r in 0..img.height() {
        for c in 0..img.width() {
            out.push(pixel_features(img, r, c));
        }
    }
    out
}

/// Per-pixel softmax over linear class scores. Parameters are stored per
/// class as `[w_0, …, w_4, bias]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableEdgeModel {
    class_count: usize,
    params: Vec<f64>,
}

impl TrainableEdgeModel {
    pub fn zeros(class_count: usize) -> Result<Self> {
        Self::from_params(class_count, vec![0.0; class_count * CLASS_PARAMS])
    }

    /// Small uniform initialization in `[-0.01, 0.01]`.
    pub fn seeded(class_count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..class_count * CLASS_PARAMS)
            .map(|_| rng.random_range(-0.01..=0.01))
            .collect();
        Self::from_params(class_count, params)
    }

    pub fn from_params(class_count: usize, params: Vec<f64>) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::TooFewClasses {
                needed: 2,
                got: class_count,
            });
        }
        if params.len() != class_count * CLASS_PARAMS {
            return Err(Error::DimensionMismatch(format!(
                "edge model with {class_count} classes needs {} weights, got {}",
                class_count * CLASS_PARAMS,
                params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite edge weight {bad}")));
        }
        Ok(Self {
            class_count,
            params,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Linear class scores for one feature vector.
    pub fn logits(&self, x: &[f64; PIXEL_FEATURES], out: &mut [f64]) {
        for (c, z) in out.iter_mut().enumerate() {
            let w = &self.params[c * CLASS_PARAMS..(c + 1) * CLASS_PARAMS];
            *z = w[..PIXEL_FEATURES]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + w[PIXEL_FEATURES];
        }
    }

    pub fn predict(&self, img: &Image) -> ProbMap {
        let (h, w, m) = (img.height(), img.width(), self.class_count);
        let plane = h * w;
        let mut logits = vec![0.0; m * plane];
        let mut z = vec![0.0; m];
        for (px, x) in image_features(img).iter().enumerate() {
            self.logits(x, &mut z);
            for c in 0..m {
                logits[c * plane + px] = z[c];
            }
        }
        ProbMap::from_logits(m, h, w, &logits).expect("shapes are consistent by construction")
    }
}

impl EdgeModel for TrainableEdgeModel {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn infer(&self, img: &Image, _truth: Option<&SemanticMask>) -> Result<ProbMap> {
        Ok(self.predict(img))
    }

    fn as_trainable(&self) -> Option<&TrainableEdgeModel> {
        Some(self)
    }

    fn as_trainable_mut(&mut self) -> Option<&mut TrainableEdgeModel> {
        Some(self)
    }
}

impl TextTensor for TrainableEdgeModel {
    fn to_text(&self) -> String {
        let mut out = format!("EW {}\n", self.class_count);
        write_grid(&mut out, &self.params, CLASS_PARAMS);
        out
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut r = TokenReader::open(text, "EW", 1)?;
        let m = r.dim(0)?;
        let params = r.take(checked_count(&[m, CLASS_PARAMS])?)?;
        r.finish()?;
        Self::from_params(m, params)
    }
}

/// 64-bit FNV-1a, used to derive per-sample seeds from sample content.
fn fnv1a(state: u64, bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(state, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn sample_rng(seed: u64, img: &Image, truth: &SemanticMask) -> ChaCha8Rng {
    let h = fnv1a(0xcbf2_9ce4_8422_2325 ^ seed, img.data().iter().copied());
    let h = fnv1a(
        h,
        truth
            .labels()
            .iter()
            .flat_map(|&l| (l as u32).to_le_bytes()),
    );
    ChaCha8Rng::seed_from_u64(h)
}

fn check_truth<'a>(img: &Image, truth: Option<&'a SemanticMask>) -> Result<&'a SemanticMask> {
    let truth = truth.ok_or(Error::MissingTruth)?;
    if truth.height() != img.height() || truth.width() != img.width() {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, truth is {}x{}",
            img.height(),
            img.width(),
            truth.height(),
            truth.width()
        )));
    }
    Ok(truth)
}

/// Edge model that is right with probability `correctness` per pixel.
///
/// Each pixel's logits put `1/temperature` on the peak class (the true class,
/// or a uniformly drawn wrong one) and a jitter in `[0, 0.5/temperature)` on
/// the others, so smaller temperatures give sharper outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEdgeModel {
    pub class_count: usize,
    pub correctness: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl OracleEdgeModel {
    pub fn new(class_count: usize, correctness: f64, temperature: f64, seed: u64) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::TooFewClasses {
                needed: 2,
                got: class_count,
            });
        }
        if !(0.0..=1.0).contains(&correctness) {
            return Err(Error::InvalidValue(format!(
                "correctness {correctness} outside [0, 1]"
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "temperature {temperature} must be positive"
            )));
        }
        Ok(Self {
            class_count,
            correctness,
            temperature,
            seed,
        })
    }
}

impl EdgeModel for OracleEdgeModel {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn infer(&self, img: &Image, truth: Option<&SemanticMask>) -> Result<ProbMap> {
        let truth = check_truth(img, truth)?;
        if truth.class_count() != self.class_count {
            return Err(Error::DimensionMismatch(format!(
                "oracle has {} classes, truth has {}",
                self.class_count,
                truth.class_count()
            )));
        }
        let m = self.class_count;
        let plane = img.pixel_count();
        let mut rng = sample_rng(self.seed, img, truth);
        let mut logits = vec![0.0; m * plane];
        for (px, &label) in truth.labels().iter().enumerate() {
            let peak = if rng.random::<f64>() < self.correctness {
                label
            } else {
                let k = rng.random_range(0..m - 1);
                if k >= label {
                    k + 1
                } else {
                    k
                }
            };
            for c in 0..m {
                let z = if c == peak {
                    1.0
                } else {
                    0.5 * rng.random::<f64>()
                };
                logits[c * plane + px] = z / self.temperature;
            }
        }
        ProbMap::from_logits(m, img.height(), img.width(), &logits)
    }
}

/// 4-connected components of a label grid, in order of each component's
/// first pixel in row-major scan.
pub fn connected_components(labels: &SemanticMask) -> Vec<RegionMask> {
    let (h, w) = (labels.height(), labels.width());
    let grid = labels.labels();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        let label = grid[start];
        let mut pixels = vec![false; h * w];
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            pixels[i] = true;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && grid[j] == label {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        out.push(RegionMask::new(pixels));
    }
    out
}

fn neighbors(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    [
        (r > 0).then(|| i - w),
        (r + 1 < h).then(|| i + w),
        (c > 0).then(|| i - 1),
        (c + 1 < w).then(|| i + 1),
    ]
    .into_iter()
    .flatten()
}

/// Removes mask pixels that touch a non-mask pixel.
fn erode(mask: &RegionMask, h: usize, w: usize) -> RegionMask {
    let px = mask.pixels();
    RegionMask::new(
        (0..h * w)
            .map(|i| px[i] && neighbors(i, h, w).all(|j| px[j]))
            .collect(),
    )
}

/// Adds non-mask pixels that touch a mask pixel.
fn dilate(mask: &RegionMask, h: usize, w: usize) -> RegionMask {
    let px = mask.pixels();
    RegionMask::new(
        (0..h * w)
            .map(|i| px[i] || neighbors(i, h, w).any(|j| px[j]))
            .collect(),
    )
}

/// Cloud model returning the ground-truth regions without their labels.
///
/// Each region is independently eroded or dilated by one pixel with
/// probability `perturbation`. Regions emptied by erosion are dropped and
/// the rest are sorted by area, largest first, so smaller regions are
/// applied last during fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCloudModel {
    pub perturbation: f64,
    pub seed: u64,
}

impl OracleCloudModel {
    pub fn new(perturbation: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&perturbation) {
            return Err(Error::InvalidValue(format!(
                "perturbation rate {perturbation} outside [0, 1]"
            )));
        }
        Ok(Self { perturbation, seed })
    }
}

impl CloudMaskModel for OracleCloudModel {
    fn infer(&self, img: &Image, truth: Option<&SemanticMask>) -> Result<RegionMaskSet> {
        let truth = check_truth(img, truth)?;
        let (h, w) = (truth.height(), truth.width());
        let mut rng = sample_rng(self.seed, img, truth);
        let mut masks: Vec<RegionMask> = connected_components(truth)
            .into_iter()
            .map(|m| {
                if self.perturbation > 0.0 && rng.random::<f64>() < self.perturbation {
                    if rng.random::<bool>() {
                        erode(&m, h, w)
                    } else {
                        dilate(&m, h, w)
                    }
                } else {
                    m
                }
            })
            .filter(|m| !m.is_empty())
            .collect();
        masks.sort_by_key(|m| std::cmp::Reverse(m.area()));
        RegionMaskSet::new(h, w, masks)
    }
}
