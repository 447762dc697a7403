//! Keyframe selection by feature overlap with the last accepted keyframe.

use alloc::vec::Vec;

use crate::cubemap::ErpImage;
use crate::error::{Error, Result};
use crate::features::{detect_features, FeatureParams, FeatureSet};
use crate::homography::{estimate_homography_overlap, OverlapParams};

pub const DEFAULT_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeParams {
    pub threshold: f64,
    pub features: FeatureParams,
    pub overlap: OverlapParams,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            features: FeatureParams::default(),
            overlap: OverlapParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeDecision {
    pub frame_index: usize,
    pub selected: bool,
    pub overlap_score: f64,
    pub matched_inliers: usize,
}

pub fn select_keyframes(frames: &[ErpImage], params: &KeyframeParams) -> Result<Vec<KeyframeDecision>> {
    let features = frames
        .iter()
        .map(|f| detect_features(f.image(), &params.features))
        .collect::<Result<Vec<_>>>()?;
    select_from_features(&features, params)
}

/// Sequential fold over precomputed per-frame features. Frame 0 is always a
/// keyframe and is recorded with overlap 1 against itself.
pub fn select_from_features(features: &[FeatureSet], params: &KeyframeParams) -> Result<Vec<KeyframeDecision>> {
    if features.is_empty() {
        return Err(Error::EmptyInput("keyframe selection needs at least one frame"));
    }
    if !(params.threshold > 0.0 && params.threshold < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "keyframe threshold {} outside (0, 1)",
            params.threshold
        )));
    }
    let mut out = Vec::with_capacity(features.len());
    out.push(KeyframeDecision {
        frame_index: 0,
        selected: true,
        overlap_score: 1.0,
        matched_inliers: 0,
    });
    let mut last = 0;
    for i in 1..features.len() {
        let o = estimate_homography_overlap(&features[last], &features[i], &params.overlap);
        let selected = o.score < params.threshold;
        if selected {
            last = i;
        }
        out.push(KeyframeDecision {
            frame_index: i,
            selected,
            overlap_score: o.score,
            matched_inliers: o.inliers,
        });
    }
    Ok(out)
}

pub fn keyframe_indices(decisions: &[KeyframeDecision]) -> Vec<usize> {
    decisions
        .iter()
        .filter(|d| d.selected)
        .map(|d| d.frame_index)
        .collect()
}
