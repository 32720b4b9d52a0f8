//! Mask-assisted inference: relabels each unlabeled cloud region with the
//! edge model's aggregate class vote over that region.

use crate::error::{Error, Result};
use crate::tensor::{argmax_labels, argmax_lowest, ProbMap, RegionMaskSet, SemanticMask};

/// The summed class scores of one region and the class it was assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionVote {
    pub scores: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub semantic: SemanticMask,
    /// One vote per input mask, in mask order.
    pub per_region_votes: Vec<RegionVote>,
}

/// Fuses the edge prediction with the cloud region masks.
///
/// The output starts as the per-pixel argmax of `pred`. Each mask, in list
/// order, then receives the class whose probability mass summed over the
/// mask's pixels is largest (lowest index on ties). Later masks overwrite
/// earlier ones where they overlap.
pub fn assisted_inference(pred: &ProbMap, masks: &RegionMaskSet) -> Result<FusionResult> {
    if pred.height() != masks.height() || pred.width() != masks.width() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, masks are {}x{}",
            pred.height(),
            pred.width(),
            masks.height(),
            masks.width()
        )));
    }
    let mut semantic = argmax_labels(pred);
    let mut per_region_votes = Vec::with_capacity(masks.len());
    for mask in masks.masks() {
        let scores: Vec<f64> = (0..pred.class_count())
            .map(|c| {
                pred.plane(c)
                    .iter()
                    .zip(mask.pixels())
                    .filter(|(_, &on)| on)
                    .map(|(p, _)| p)
                    .sum()
            })
            .collect();
        let class = argmax_lowest(&scores);
        semantic.paint(mask, class);
        per_region_votes.push(RegionVote { scores, class });
    }
    Ok(FusionResult {
        semantic,
        per_region_votes,
    })
}
