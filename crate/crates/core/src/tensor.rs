//! Value types shared by every stage of the pipeline: images, label grids,
//! per-class probability maps and ordered region mask sets, plus the
//! elementary per-pixel statistics computed from probability maps.
//!
//! All storage is row-major. Multi-plane tensors keep the plane index
//! outermost: `(class, row, column)` for [`ProbMap`] and
//! `(channel, row, column)` for [`Image`].

use crate::error::{Error, Result};

/// Tolerance on the per-pixel probability sum.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

// Sums closer to one than this are rounding noise and left untouched.
const RENORMALIZE_ABOVE: f64 = 1e-12;

/// Number of channels in an [`Image`].
pub const CHANNELS: usize = 3;

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidValue(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

/// An RGB image with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != CHANNELS * height * width {
            return Err(Error::DimensionMismatch(format!(
                "image {height}x{width} needs {} values, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        check_dims(height, width)?;
        let plane = height * width;
        let mut data = Vec::with_capacity(CHANNELS * plane);
        for value in rgb {
            data.extend(std::iter::repeat_n(value, plane));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.data[(channel * self.height + row) * self.width + col]
    }
}

/// Per-pixel class labels in `{0, …, M−1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemanticMask {
    class_count: usize,
    height: usize,
    width: usize,
    labels: Vec<usize>,
}

impl SemanticMask {
    pub fn new(
        class_count: usize,
        height: usize,
        width: usize,
        labels: Vec<usize>,
    ) -> Result<Self> {
        check_dims(height, width)?;
        if class_count == 0 {
            return Err(Error::TooFewClasses { needed: 1, got: 0 });
        }
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "label grid {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidValue(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            class_count,
            height,
            width,
            labels,
        })
    }

    pub fn filled(class_count: usize, height: usize, width: usize, label: usize) -> Result<Self> {
        Self::new(class_count, height, width, vec![label; height * width])
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    /// Assigns `label` to every pixel selected by `mask`.
    pub(crate) fn paint(&mut self, mask: &RegionMask, label: usize) {
        debug_assert!(label < self.class_count);
        for (dst, &on) in self.labels.iter_mut().zip(mask.pixels()) {
            if on {
                *dst = label;
            }
        }
    }
}

/// Per-class, per-pixel probabilities; each pixel's column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    class_count: usize,
    height: usize,
    width: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    /// Validates and stores `probs` in `(class, row, column)` order.
    ///
    /// Pixels whose sums are off by at most [`PROB_SUM_TOLERANCE`] are
    /// renormalized; anything worse is rejected.
    pub fn new(
        class_count: usize,
        height: usize,
        width: usize,
        mut probs: Vec<f64>,
    ) -> Result<Self> {
        check_dims(height, width)?;
        if class_count == 0 {
            return Err(Error::TooFewClasses { needed: 1, got: 0 });
        }
        let plane = height * width;
        if probs.len() != class_count * plane {
            return Err(Error::DimensionMismatch(format!(
                "probability map {class_count}x{height}x{width} needs {} values, got {}",
                class_count * plane,
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidValue(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        for px in 0..plane {
            let sum: f64 = (0..class_count).map(|c| probs[c * plane + px]).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidValue(format!(
                    "pixel {px} probabilities sum to {sum}"
                )));
            }
            if (sum - 1.0).abs() > RENORMALIZE_ABOVE {
                for c in 0..class_count {
                    let p = &mut probs[c * plane + px];
                    *p = (*p / sum).min(1.0);
                }
            }
        }
        Ok(Self {
            class_count,
            height,
            width,
            probs,
        })
    }

    /// Per-pixel softmax of `logits`, laid out like the probabilities.
    pub fn from_logits(
        class_count: usize,
        height: usize,
        width: usize,
        logits: &[f64],
    ) -> Result<Self> {
        check_dims(height, width)?;
        if class_count == 0 {
            return Err(Error::TooFewClasses { needed: 1, got: 0 });
        }
        let plane = height * width;
        if logits.len() != class_count * plane {
            return Err(Error::DimensionMismatch(format!(
                "logit map {class_count}x{height}x{width} needs {} values, got {}",
                class_count * plane,
                logits.len()
            )));
        }
        let mut probs = vec![0.0; logits.len()];
        let mut column = vec![0.0; class_count];
        for px in 0..plane {
            for (c, z) in column.iter_mut().enumerate() {
                *z = logits[c * plane + px];
            }
            softmax_in_place(&mut column);
            for (c, p) in column.iter().enumerate() {
                probs[c * plane + px] = *p;
            }
        }
        Ok(Self {
            class_count,
            height,
            width,
            probs,
        })
    }

    pub fn uniform(class_count: usize, height: usize, width: usize) -> Result<Self> {
        Self::from_logits(
            class_count,
            height,
            width,
            &vec![0.0; class_count * height * width],
        )
    }

    /// One-hot map placing all mass on each pixel's label.
    pub fn one_hot(labels: &SemanticMask) -> Self {
        let plane = labels.height * labels.width;
        let mut probs = vec![0.0; labels.class_count * plane];
        for (px, &l) in labels.labels.iter().enumerate() {
            probs[l * plane + px] = 1.0;
        }
        Self {
            class_count: labels.class_count,
            height: labels.height,
            width: labels.width,
            probs,
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The probability plane of one class, row-major.
    pub fn plane(&self, class: usize) -> &[f64] {
        let plane = self.pixel_count();
        &self.probs[class * plane..(class + 1) * plane]
    }

    #[inline]
    pub fn get(&self, class: usize, row: usize, col: usize) -> f64 {
        self.probs[(class * self.height + row) * self.width + col]
    }

    /// Iterates pixels in row-major order, yielding each pixel's class column.
    pub(crate) fn pixel_columns(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let plane = self.pixel_count();
        (0..plane).map(move |px| {
            (0..self.class_count)
                .map(|c| self.probs[c * plane + px])
                .collect()
        })
    }
}

pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// A binary pixel set over an `H×W` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionMask {
    pixels: Vec<bool>,
}

impl RegionMask {
    pub fn new(pixels: Vec<bool>) -> Self {
        Self { pixels }
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&b| b)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.pixels[index]
    }

    /// Row-major index of the first selected pixel.
    pub fn first_pixel(&self) -> Option<usize> {
        self.pixels.iter().position(|&b| b)
    }
}

/// Ordered list of nonempty region masks; order is application order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionMaskSet {
    height: usize,
    width: usize,
    masks: Vec<RegionMask>,
}

impl RegionMaskSet {
    pub fn new(height: usize, width: usize, masks: Vec<RegionMask>) -> Result<Self> {
        check_dims(height, width)?;
        for (i, m) in masks.iter().enumerate() {
            if m.pixels.len() != height * width {
                return Err(Error::DimensionMismatch(format!(
                    "mask {i} has {} pixels, grid is {height}x{width}",
                    m.pixels.len()
                )));
            }
            if m.is_empty() {
                return Err(Error::InvalidValue(format!("mask {i} is empty")));
            }
        }
        Ok(Self {
            height,
            width,
            masks,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, Vec::new())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn masks(&self) -> &[RegionMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn argmax_labels(p: &ProbMap) -> SemanticMask {
    let labels = p.pixel_columns().map(|col| argmax_lowest(&col)).collect();
    SemanticMask {
        class_count: p.class_count,
        height: p.height,
        width: p.width,
        labels,
    }
}

/// Index of the largest value, preferring the lowest index on ties.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Maximum class probability per pixel, row-major.
pub fn top1_map(p: &ProbMap) -> Vec<f64> {
    p.pixel_columns()
        .map(|col| col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Difference between the largest and second-largest class probability per
/// pixel, row-major.
pub fn top2_margin_map(p: &ProbMap) -> Result<Vec<f64>> {
    if p.class_count < 2 {
        return Err(Error::TooFewClasses {
            needed: 2,
            got: p.class_count,
        });
    }
    Ok(p.pixel_columns().map(|col| top2_margin(&col)).collect())
}

pub(crate) fn top2_margin(column: &[f64]) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in column {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    (first - second).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two() -> ProbMap {
        let c0 = [0.9, 0.2, 0.4, 0.1];
        let mut probs = c0.to_vec();
        probs.extend(c0.iter().map(|p| 1.0 - p));
        ProbMap::new(2, 2, 2, probs).unwrap()
    }

    #[test]
    fn argmax_single_pixel() {
        let p = ProbMap::new(2, 1, 1, vec![0.3, 0.7]).unwrap();
        assert_eq!(argmax_labels(&p).labels(), &[1]);
    }

    #[test]
    fn argmax_tie_goes_to_lowest_index() {
        let p = ProbMap::new(2, 1, 1, vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_labels(&p).labels(), &[0]);
        let p = ProbMap::uniform(4, 2, 3).unwrap();
        assert!(argmax_labels(&p).labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn argmax_two_by_two() {
        assert_eq!(argmax_labels(&two_by_two()).labels(), &[0, 1, 1, 1]);
    }

    #[test]
    fn top1_examples() {
        let one_hot = ProbMap::new(3, 1, 1, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(top1_map(&one_hot), vec![1.0]);
        assert_eq!(top1_map(&ProbMap::uniform(4, 1, 1).unwrap()), vec![0.25]);
        let p = ProbMap::new(3, 1, 1, vec![0.6, 0.3, 0.1]).unwrap();
        assert_eq!(top1_map(&p), vec![0.6]);
    }

    #[test]
    fn margin_examples() {
        let one_hot = ProbMap::new(3, 1, 1, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(top2_margin_map(&one_hot).unwrap(), vec![1.0]);
        assert_eq!(
            top2_margin_map(&ProbMap::uniform(4, 1, 1).unwrap()).unwrap(),
            vec![0.0]
        );
        let p = ProbMap::new(3, 1, 1, vec![0.6, 0.3, 0.1]).unwrap();
        assert!((top2_margin_map(&p).unwrap()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn margin_rejects_single_class() {
        let p = ProbMap::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(
            top2_margin_map(&p),
            Err(Error::TooFewClasses { needed: 2, got: 1 })
        );
    }

    #[test]
    fn prob_map_renormalizes_within_tolerance() {
        let p = ProbMap::new(2, 1, 1, vec![0.3, 0.7 + 5e-7]).unwrap();
        let sum: f64 = p.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!(ProbMap::new(2, 1, 1, vec![0.3, 0.7 + 1e-5]).is_err());
        assert!(ProbMap::new(2, 1, 1, vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn constructors_reject_bad_shapes() {
        assert!(Image::new(0, 2, vec![]).is_err());
        assert!(Image::new(1, 2, vec![0; 5]).is_err());
        assert!(SemanticMask::new(2, 1, 2, vec![0, 2]).is_err());
        assert!(SemanticMask::new(2, 1, 2, vec![0]).is_err());
        let empty = RegionMask::new(vec![false; 4]);
        assert!(RegionMaskSet::new(2, 2, vec![empty]).is_err());
        let short = RegionMask::new(vec![true; 3]);
        assert!(RegionMaskSet::new(2, 2, vec![short]).is_err());
    }

    #[test]
    fn copies_do_not_alias() {
        let original = SemanticMask::filled(3, 2, 2, 0).unwrap();
        let mut copy = original.clone();
        copy.paint(&RegionMask::new(vec![true; 4]), 2);
        assert!(original.labels().iter().all(|&l| l == 0));
        assert!(copy.labels().iter().all(|&l| l == 2));
    }

    fn prob_map_strategy() -> impl Strategy<Value = ProbMap> {
        (2usize..6, 1usize..5, 1usize..5).prop_flat_map(|(m, h, w)| {
            prop::collection::vec(-4.0f64..4.0, m * h * w)
                .prop_map(move |logits| ProbMap::from_logits(m, h, w, &logits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn argmax_label_has_maximal_probability(p in prob_map_strategy()) {
            let labels = argmax_labels(&p);
            for r in 0..p.height() {
                for c in 0..p.width() {
                    let l = labels.get(r, c);
                    for k in 0..p.class_count() {
                        prop_assert!(p.get(l, r, c) >= p.get(k, r, c));
                    }
                }
            }
        }

        #[test]
        fn margin_in_unit_interval(p in prob_map_strategy()) {
            for v in top2_margin_map(&p).unwrap() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
