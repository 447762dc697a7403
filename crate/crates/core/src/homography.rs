//! Descriptor matching and RANSAC homography used to score image overlap.

use alloc::vec::Vec;

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};

use crate::features::{hamming, FeatureSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapParams {
    pub ratio: f64,
    pub ransac_iterations: usize,
    pub inlier_threshold_px: f64,
    pub seed: u64,
}

impl Default for OverlapParams {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            ransac_iterations: 2000,
            inlier_threshold_px: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub score: f64,
    pub inliers: usize,
    pub matches: usize,
}

/// Mutual nearest neighbors under Hamming distance that also pass the ratio
/// test in both directions. Returns `(index_in_a, index_in_b)`.
pub fn match_descriptors(a: &FeatureSet, b: &FeatureSet, ratio: f64) -> Vec<(usize, usize)> {
    let best_ab = best_two(a, b);
    let best_ba = best_two(b, a);
    let mut out = Vec::new();
    for (i, &(j, d1, d2)) in best_ab.iter().enumerate() {
        let Some(j) = j else { continue };
        if !passes_ratio(d1, d2, ratio) {
            continue;
        }
        let (back, e1, e2) = best_ba[j];
        if back == Some(i) && passes_ratio(e1, e2, ratio) {
            out.push((i, j));
        }
    }
    out
}

fn passes_ratio(best: u32, second: u32, ratio: f64) -> bool {
    (best as f64) < ratio * second as f64
}

fn best_two(a: &FeatureSet, b: &FeatureSet) -> Vec<(Option<usize>, u32, u32)> {
    a.descriptors
        .iter()
        .map(|da| {
            let mut best = (None, u32::MAX, u32::MAX);
            for (j, db) in b.descriptors.iter().enumerate() {
                let d = hamming(da, db);
                if d < best.1 {
                    best = (Some(j), d, best.1);
                } else if d < best.2 {
                    best.2 = d;
                }
            }
            // a lone candidate has no competitor; treat the runner-up as maximally far
            if best.2 == u32::MAX {
                best.2 = 257;
            }
            best
        })
        .collect()
}

/// Direct linear transform from `n >= 4` correspondences, with Hartley
/// normalization. `None` for degenerate configurations.
pub fn fit_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = normalizer(src)?;
    let td = normalizer(dst)?;
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (p, q) in src.iter().zip(dst) {
        let p = ts * Vector3::new(p[0], p[1], 1.0);
        let q = td * Vector3::new(q[0], q[1], 1.0);
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (u, v) = (q.x / q.z, q.y / q.z);
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for r in [r1, r2] {
            for i in 0..9 {
                for j in 0..9 {
                    ata[(i, j)] += r[i] * r[j];
                }
            }
        }
    }
    let eig = SymmetricEigen::new(ata);
    let (mut min_i, mut min_v) = (0, f64::INFINITY);
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < min_v {
            min_v = v;
            min_i = i;
        }
    }
    let h = eig.eigenvectors.column(min_i);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let h = td.try_inverse()? * hn * ts;
    if !h.iter().all(|v| v.is_finite()) || h.determinant().abs() < 1e-12 * libm::pow(h.norm(), 3.0) {
        return None;
    }
    Some(h)
}

fn normalizer(pts: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_d = pts
        .iter()
        .map(|p| libm::hypot(p[0] - cx, p[1] - cy))
        .sum::<f64>()
        / n;
    if mean_d < 1e-12 {
        return None;
    }
    let s = core::f64::consts::SQRT_2 / mean_d;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

pub fn transfer(h: &Matrix3<f64>, p: [f64; 2]) -> Option<[f64; 2]> {
    let q = h * Vector3::new(p[0], p[1], 1.0);
    if q.z.abs() < 1e-12 {
        return None;
    }
    Some([q.x / q.z, q.y / q.z])
}

fn count_inliers(h: &Matrix3<f64>, src: &[[f64; 2]], dst: &[[f64; 2]], thresh: f64) -> Vec<usize> {
    let t2 = thresh * thresh;
    (0..src.len())
        .filter(|&i| {
            transfer(h, src[i]).is_some_and(|q| {
                let (dx, dy) = (q[0] - dst[i][0], q[1] - dst[i][1]);
                dx * dx + dy * dy < t2
            })
        })
        .collect()
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    cross.abs() < 1e-6
}

/// RANSAC homography. Returns the model and its inlier indices.
pub fn ransac_homography(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
    params: &OverlapParams,
) -> Option<(Matrix3<f64>, Vec<usize>)> {
    let n = src.len();
    if n < 4 {
        return None;
    }
    let mut r = rng::seeded(params.seed);
    let mut best: Option<(Matrix3<f64>, Vec<usize>)> = None;
    for _ in 0..params.ransac_iterations {
        let mut idx = [0usize; 4];
        for k in 0..4 {
            loop {
                let c = rng::uniform_index(&mut r, n);
                if !idx[..k].contains(&c) {
                    idx[k] = c;
                    break;
                }
            }
        }
        let s: [[f64; 2]; 4] = idx.map(|i| src[i]);
        let d: [[f64; 2]; 4] = idx.map(|i| dst[i]);
        let degenerate = (0..4).any(|skip| {
            let pick: Vec<usize> = (0..4).filter(|&k| k != skip).collect();
            collinear(s[pick[0]], s[pick[1]], s[pick[2]]) || collinear(d[pick[0]], d[pick[1]], d[pick[2]])
        });
        if degenerate {
            continue;
        }
        let Some(h) = fit_homography(&s, &d) else { continue };
        let inliers = count_inliers(&h, src, dst, params.inlier_threshold_px);
        if best.as_ref().is_none_or(|b| inliers.len() > b.1.len()) {
            let all = inliers.len() == n;
            best = Some((h, inliers));
            if all {
                break;
            }
        }
    }
    let (h, inliers) = best?;
    // one least-squares refit on the consensus set
    if inliers.len() > 4 {
        let s: Vec<[f64; 2]> = inliers.iter().map(|&i| src[i]).collect();
        let d: Vec<[f64; 2]> = inliers.iter().map(|&i| dst[i]).collect();
        if let Some(h2) = fit_homography(&s, &d) {
            let refit = count_inliers(&h2, src, dst, params.inlier_threshold_px);
            if refit.len() >= inliers.len() {
                return Some((h2, refit));
            }
        }
    }
    Some((h, inliers))
}

/// Overlap score `inliers / min(|a|, |b|)`; zero when fewer than four matches.
pub fn estimate_homography_overlap(a: &FeatureSet, b: &FeatureSet, params: &OverlapParams) -> Overlap {
    let none = Overlap {
        score: 0.0,
        inliers: 0,
        matches: 0,
    };
    if a.is_empty() || b.is_empty() {
        return none;
    }
    let matches = match_descriptors(a, b, params.ratio);
    if matches.len() < 4 {
        return Overlap {
            matches: matches.len(),
            ..none
        };
    }
    let src: Vec<[f64; 2]> = matches.iter().map(|&(i, _)| a.keypoints[i]).collect();
    let dst: Vec<[f64; 2]> = matches.iter().map(|&(_, j)| b.keypoints[j]).collect();
    let Some((_, inliers)) = ransac_homography(&src, &dst, params) else {
        return Overlap {
            matches: matches.len(),
            ..none
        };
    };
    let denom = a.len().min(b.len()) as f64;
    Overlap {
        score: (inliers.len() as f64 / denom).min(1.0),
        inliers: inliers.len(),
        matches: matches.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Descriptor;
    use rand_core::RngCore;

    fn random_set(seed: u64, n: usize) -> FeatureSet {
        let mut r = rng::seeded(seed);
        let mut f = FeatureSet::default();
        for _ in 0..n {
            f.keypoints.push([rng::uniform_range(&mut r, 0.0, 500.0), rng::uniform_range(&mut r, 0.0, 250.0)]);
            let d: Descriptor = [r.next_u64(), r.next_u64(), r.next_u64(), r.next_u64()];
            f.descriptors.push(d);
            f.responses.push(1);
        }
        f
    }

    #[test]
    fn identical_sets_overlap_fully() {
        let a = random_set(3, 300);
        let o = estimate_homography_overlap(&a, &a, &OverlapParams::default());
        assert_eq!(o.score, 1.0);
        assert_eq!(o.inliers, 300);
    }

    #[test]
    fn disjoint_random_sets_barely_overlap() {
        let a = random_set(4, 400);
        let b = random_set(5, 400);
        let o = estimate_homography_overlap(&a, &b, &OverlapParams::default());
        assert!(o.score < 0.05, "{o:?}");
    }

    #[test]
    fn too_few_matches_scores_zero() {
        let a = random_set(6, 3);
        let o = estimate_homography_overlap(&a, &a, &OverlapParams::default());
        assert_eq!((o.score, o.inliers), (0.0, 0));
    }

    #[test]
    fn recovers_known_homography() {
        let h = Matrix3::new(1.1, 0.05, 12.0, -0.03, 0.95, -7.0, 1e-4, -2e-4, 1.0);
        let src: Vec<[f64; 2]> = (0..30)
            .map(|i| [(i * 37 % 200) as f64, (i * 53 % 150) as f64])
            .collect();
        let dst: Vec<[f64; 2]> = src.iter().map(|&p| transfer(&h, p).unwrap()).collect();
        let fit = fit_homography(&src, &dst).unwrap();
        let fit = fit / fit[(2, 2)];
        assert!((fit - h).amax() < 1e-8, "{fit}");
    }
}
