//! Nearest-within-tolerance pairing of RGB frames with LiDAR sweeps.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalMatch {
    pub rgb_index: usize,
    pub lidar_index: usize,
    /// `lidar_ts - rgb_ts`.
    pub dt: f64,
}

fn check_sorted(ts: &[f64], what: &'static str) -> Result<()> {
    if ts.iter().any(|t| !t.is_finite()) || ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::UnsortedTimestamps(what));
    }
    Ok(())
}

/// Greedy in RGB order: each frame takes the nearest unused sweep within
/// `tol`; on equal distance the earlier sweep wins. Unmatched frames are omitted.
pub fn match_timestamps(rgb_ts: &[f64], lidar_ts: &[f64], tol: f64) -> Result<Vec<TemporalMatch>> {
    check_sorted(rgb_ts, "rgb")?;
    check_sorted(lidar_ts, "lidar")?;
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("tolerance {tol} must be >= 0")));
    }
    let mut used = alloc::vec![false; lidar_ts.len()];
    let mut out = Vec::new();
    for (i, &t) in rgb_ts.iter().enumerate() {
        let start = lidar_ts.partition_point(|&l| l < t - tol);
        let mut best: Option<(usize, f64)> = None;
        for (j, &l) in lidar_ts.iter().enumerate().skip(start) {
            if l > t + tol {
                break;
            }
            let d = (l - t).abs();
            if !used[j] && d <= tol && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            out.push(TemporalMatch {
                rgb_index: i,
                lidar_index: j,
                dt: lidar_ts[j] - t,
            });
        }
    }
    Ok(out)
}

pub fn mean_abs_dt(matches: &[TemporalMatch]) -> f64 {
    if matches.is_empty() {
        return 0.0;
    }
    matches.iter().map(|m| m.dt.abs()).sum::<f64>() / matches.len() as f64
}
