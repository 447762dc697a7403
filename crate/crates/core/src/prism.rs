//! PRISM: color-stratified downsampling with a per-bin capacity `k`.
//!
//! Points are bucketed by quantized RGB. Within a bucket every point gets a
//! pseudo-random rank from a hash of `(seed, bin, point index)`; the `k`
//! lowest-ranked points are kept. Because ranks do not depend on `k`, the
//! sample for `k1 <= k2` is a subset of the sample for `k2`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{ColorRgb, PointCloud};
use crate::rng::mix64;

pub const DEFAULT_BINS_PER_CHANNEL: usize = 8;
pub const DEFAULT_K_SWEEP: [usize; 7] = [1, 5, 10, 20, 30, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrismConfig {
    pub bins_per_channel: usize,
    pub k: usize,
    pub seed: u64,
}

impl PrismConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            bins_per_channel: DEFAULT_BINS_PER_CHANNEL,
            k,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins_per_channel == 0 || self.k == 0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "prism needs bins_per_channel >= 1 and k >= 1, got {} / {}",
                self.bins_per_channel,
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrismReport {
    pub k: usize,
    pub input_points: usize,
    pub output_points: usize,
    pub reduction_ratio: f64,
    pub occupied_bins: usize,
    /// `(bin, input count, kept count)` for occupied bins, ascending bin.
    pub histogram: Vec<(usize, usize, usize)>,
}

impl PrismReport {
    /// Accounting-only report from raw counts.
    pub fn from_counts(k: usize, input_points: usize, output_points: usize) -> Result<Self> {
        Ok(Self {
            k,
            input_points,
            output_points,
            reduction_ratio: reduction_ratio(input_points, output_points)?,
            occupied_bins: 0,
            histogram: Vec::new(),
        })
    }
}

/// `1 - output / input`.
pub fn reduction_ratio(input: usize, output: usize) -> Result<f64> {
    if input == 0 {
        return Err(Error::UndefinedRatio("zero input points"));
    }
    if output > input {
        return Err(Error::InvalidParameter(alloc::format!("output {output} exceeds input {input}")));
    }
    Ok(1.0 - output as f64 / input as f64)
}

fn channel_bin(x: f64, bins: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidColor(x));
    }
    Ok((libm::floor(x * bins as f64) as usize).min(bins - 1))
}

/// `b_r·B² + b_g·B + b_b` with `b = min(floor(x·B), B-1)`.
pub fn color_bin(c: ColorRgb, bins_per_channel: usize) -> Result<usize> {
    if bins_per_channel == 0 {
        return Err(Error::InvalidParameter("bins_per_channel must be >= 1".into()));
    }
    let b = bins_per_channel;
    Ok(channel_bin(c.r, b)? * b * b + channel_bin(c.g, b)? * b + channel_bin(c.b, b)?)
}

/// Rank of a point inside its bin; lower ranks are kept first.
pub fn sample_rank(seed: u64, bin: usize, index: usize) -> u64 {
    mix64(mix64(seed ^ mix64(bin as u64)).wrapping_add(index as u64))
}

/// Points grouped by bin, each group in ascending rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCloud {
    pub input_points: usize,
    pub bins: BTreeMap<usize, Vec<usize>>,
}

pub fn bin_cloud(cloud: &PointCloud, bins_per_channel: usize, seed: u64) -> Result<BinnedCloud> {
    let colors = cloud.colors.as_ref().ok_or(Error::MissingColors)?;
    let mut bins: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in colors.iter().enumerate() {
        bins.entry(color_bin(*c, bins_per_channel)?).or_default().push(i);
    }
    for (bin, members) in bins.iter_mut() {
        members.sort_by_key(|&i| (sample_rank(seed, *bin, i), i));
    }
    Ok(BinnedCloud {
        input_points: cloud.len(),
        bins,
    })
}

impl BinnedCloud {
    /// Indices kept at capacity `k`, ordered by `(bin, original index)`.
    pub fn select(&self, k: usize) -> (Vec<usize>, Vec<(usize, usize, usize)>) {
        let mut keep = Vec::new();
        let mut hist = Vec::with_capacity(self.bins.len());
        for (&bin, members) in &self.bins {
            let take = members.len().min(k);
            let mut chosen: Vec<usize> = members[..take].to_vec();
            chosen.sort_unstable();
            keep.extend_from_slice(&chosen);
            hist.push((bin, members.len(), take));
        }
        (keep, hist)
    }
}

pub fn prism_downsample(cloud: &PointCloud, cfg: &PrismConfig) -> Result<(PointCloud, PrismReport)> {
    cfg.validate()?;
    let binned = bin_cloud(cloud, cfg.bins_per_channel, cfg.seed)?;
    downsample_binned(cloud, &binned, cfg.k)
}

fn downsample_binned(cloud: &PointCloud, binned: &BinnedCloud, k: usize) -> Result<(PointCloud, PrismReport)> {
    let (keep, histogram) = binned.select(k);
    let out = cloud.select(&keep);
    let report = PrismReport {
        k,
        input_points: cloud.len(),
        output_points: out.len(),
        reduction_ratio: if cloud.is_empty() { 0.0 } else { reduction_ratio(cloud.len(), out.len())? },
        occupied_bins: histogram.len(),
        histogram,
    };
    Ok((out, report))
}

/// One downsampled cloud and report per `k`, in the order given.
pub fn sweep(cloud: &PointCloud, k_values: &[usize], bins_per_channel: usize, seed: u64) -> Result<Vec<(PointCloud, PrismReport)>> {
    if k_values.is_empty() {
        return Err(Error::EmptyInput("prism sweep needs at least one k"));
    }
    for &k in k_values {
        PrismConfig {
            bins_per_channel,
            k,
            seed,
        }
        .validate()?;
    }
    let binned = bin_cloud(cloud, bins_per_channel, seed)?;
    let out = k_values
        .iter()
        .map(|&k| downsample_binned(cloud, &binned, k))
        .collect::<Result<Vec<_>>>()?;
    let mut by_k: Vec<(usize, usize)> = out.iter().map(|(_, r)| (r.k, r.output_points)).collect();
    by_k.sort_unstable();
    debug_assert!(by_k.windows(2).all(|w| w[0].1 <= w[1].1));
    Ok(out)
}
