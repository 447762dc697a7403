//! Rigid registration: closed-form Kabsch/Umeyama solves, weighted
//! point-to-point ICP and FPFH-matched RANSAC global registration.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::fpfh::{FpfhDescriptor, FPFH_DIM};
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::rng;
use crate::spatial::{KdTree, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Uniform,
    /// Tukey biweight `(1 - (r/c)^2)^2` for `r < c`, zero beyond.
    Tukey { c: f64 },
}

impl WeightScheme {
    pub fn weight(&self, r: f64) -> f64 {
        match *self {
            WeightScheme::Uniform => 1.0,
            WeightScheme::Tukey { c } => {
                if r < c {
                    let u = 1.0 - (r / c) * (r / c);
                    u * u
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Uniform => "uniform",
            WeightScheme::Tukey { .. } => "tukey",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_corr_dist: f64,
    pub max_iterations: usize,
    /// Stop once fitness and RMSE both change by less than these between iterations.
    pub rel_fitness_eps: f64,
    pub rel_rmse_eps: f64,
    pub weight_scheme: WeightScheme,
}

impl IcpParams {
    pub fn with_tukey(max_corr_dist: f64) -> Self {
        Self {
            max_corr_dist,
            max_iterations: 30,
            rel_fitness_eps: 1e-6,
            rel_rmse_eps: 1e-6,
            weight_scheme: WeightScheme::Tukey { c: max_corr_dist },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.max_corr_dist > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "icp needs max_corr_dist > 0 and max_iterations >= 1, got {} / {}",
                self.max_corr_dist,
                self.max_iterations
            )));
        }
        if let WeightScheme::Tukey { c } = self.weight_scheme {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(alloc::format!("tukey c {c} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalParams {
    pub max_corr_dist: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub edge_length_ratio: f64,
    pub mutual_filter: bool,
    pub seed: u64,
}

impl GlobalParams {
    pub fn new(max_corr_dist: f64, seed: u64) -> Self {
        Self {
            max_corr_dist,
            max_iterations: 100_000,
            confidence: 0.999,
            edge_length_ratio: 0.9,
            mutual_filter: true,
            seed,
        }
    }
}

/// Weighted objective before and after one closed-form solve, with the
/// correspondences and weights held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStep {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidTransform,
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations: usize,
    pub correspondences: usize,
    pub trace: Vec<SolveStep>,
}

impl RegistrationResult {
    /// True when every solve step left the objective non-increasing, up to rounding.
    pub fn objective_monotone(&self) -> bool {
        self.trace
            .iter()
            .all(|s| s.after <= s.before + 1e-12 * s.before.max(1.0))
    }
}

/// Weighted least-squares rotation and translation taking `src[i]` to `dst[i]`.
/// Reflections are corrected so the result is a proper rotation.
pub fn kabsch(src: &[Point3], dst: &[Point3], weights: Option<&[f64]>) -> Result<RigidTransform> {
    let n = src.len();
    if n == 0 || n != dst.len() || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidParameter(alloc::format!(
            "kabsch needs equal non-empty sets, got {} / {}",
            n,
            dst.len()
        )));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..n).map(w).sum();
    if !(wsum > 0.0) {
        return Err(Error::InvalidParameter("kabsch weights sum to zero".into()));
    }
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for i in 0..n {
        cs += w(i) * src[i];
        cd += w(i) * dst[i];
    }
    cs /= wsum;
    cd /= wsum;
    let mut h = Matrix3::zeros();
    for i in 0..n {
        h += w(i) * (src[i] - cs) * (dst[i] - cd).transpose();
    }
    let rotation = rotation_from_cross_covariance(&h);
    Ok(RigidTransform {
        rotation,
        translation: cd - rotation * cs,
    })
}

fn rotation_from_cross_covariance(h: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d < 0.0 { -1.0 } else { 1.0 }));
    v * s * u.transpose()
}

/// Similarity `dst ≈ scale · R · src + t` (Umeyama). Returns `(scale, R|t)`.
pub fn umeyama(src: &[Point3], dst: &[Point3]) -> Result<(f64, RigidTransform)> {
    let n = src.len();
    if n < 3 || n != dst.len() {
        return Err(Error::InsufficientPoints { needed: 3, got: n.min(dst.len()) });
    }
    let nf = n as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p) / nf;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / nf;
    let mut h = Matrix3::zeros();
    let mut var_s = 0.0;
    for (p, q) in src.iter().zip(dst) {
        h += (p - cs) * (q - cd).transpose();
        var_s += (p - cs).norm_squared();
    }
    if var_s <= 0.0 {
        return Err(Error::InvalidParameter("umeyama source has zero spread".into()));
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let d = if (v * u.transpose()).determinant() < 0.0 { -1.0 } else { 1.0 };
    let sv = svd.singular_values;
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * s * u.transpose();
    let scale = (sv[0] + sv[1] + d * sv[2]) / var_s;
    Ok((
        scale,
        RigidTransform {
            rotation,
            translation: cd - scale * rotation * cs,
        },
    ))
}

/// Fitness and inlier RMSE of `src` under `t` against an indexed target.
/// Returns `(fitness, inlier_rmse, inlier_count)`.
pub fn evaluate(src: &[Point3], dst: &SpatialIndex, t: &RigidTransform, max_corr_dist: f64) -> (f64, f64, usize) {
    if src.is_empty() {
        return (0.0, 0.0, 0);
    }
    let mut count = 0usize;
    let mut sq = 0.0;
    for p in src {
        if let Some(n) = dst.nearest_within(&t.apply_point(p), max_corr_dist) {
            count += 1;
            sq += n.dist_sq;
        }
    }
    let rmse = if count > 0 { libm::sqrt(sq / count as f64) } else { 0.0 };
    (count as f64 / src.len() as f64, rmse, count)
}

pub fn evaluate_registration(src: &PointCloud, dst: &PointCloud, t: &RigidTransform, max_corr_dist: f64) -> Result<(f64, f64)> {
    let index = SpatialIndex::from_points(&dst.points)?;
    let (f, r, _) = evaluate(&src.points, &index, t, max_corr_dist);
    Ok((f, r))
}

pub fn icp_refine(src: &PointCloud, dst: &PointCloud, init: &RigidTransform, params: &IcpParams) -> Result<RegistrationResult> {
    if src.is_empty() || dst.is_empty() {
        return Err(Error::EmptyInput("icp needs non-empty clouds"));
    }
    init.validate()?;
    params.validate()?;
    let index = SpatialIndex::from_points(&dst.points)?;
    icp_with_index(&src.points, &dst.points, &index, init, params)
}

struct Correspondences {
    src: Vec<Point3>,
    dst: Vec<Point3>,
    residuals: Vec<f64>,
}

fn correspond(src: &[Point3], dst: &[Point3], index: &SpatialIndex, t: &RigidTransform, max_corr_dist: f64) -> Correspondences {
    let mut c = Correspondences {
        src: Vec::new(),
        dst: Vec::new(),
        residuals: Vec::new(),
    };
    for p in src {
        if let Some(n) = index.nearest_within(&t.apply_point(p), max_corr_dist) {
            c.src.push(*p);
            c.dst.push(dst[n.index]);
            c.residuals.push(n.distance());
        }
    }
    c
}

fn fitness_rmse(c: &Correspondences, n_src: usize) -> (f64, f64) {
    let k = c.residuals.len();
    if k == 0 {
        return (0.0, 0.0);
    }
    let sq: f64 = c.residuals.iter().map(|r| r * r).sum();
    (k as f64 / n_src as f64, libm::sqrt(sq / k as f64))
}

fn weighted_objective(c: &Correspondences, w: &[f64], t: &RigidTransform) -> f64 {
    c.src
        .iter()
        .zip(&c.dst)
        .zip(w)
        .map(|((p, q), w)| w * (t.apply_point(p) - q).norm_squared())
        .sum()
}

pub(crate) fn icp_with_index(
    src: &[Point3],
    dst: &[Point3],
    index: &SpatialIndex,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    let mut t = *init;
    let mut corr = correspond(src, dst, index, &t, params.max_corr_dist);
    if corr.src.is_empty() {
        return Err(Error::NoCorrespondences {
            max_corr_dist: params.max_corr_dist,
        });
    }
    let (mut fitness, mut rmse) = fitness_rmse(&corr, src.len());
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < params.max_iterations {
        let weights: Vec<f64> = corr.residuals.iter().map(|&r| params.weight_scheme.weight(r)).collect();
        if !(weights.iter().sum::<f64>() > 0.0) {
            break;
        }
        let before = weighted_objective(&corr, &weights, &t);
        if before == 0.0 {
            break;
        }
        // solve for the full transform from the original source points so the
        // objective is evaluated at the same correspondences before and after
        let Ok(next) = kabsch(&corr.src, &corr.dst, Some(&weights)) else {
            break;
        };
        let after = weighted_objective(&corr, &weights, &next);
        trace.push(SolveStep { before, after });
        t = next;
        iterations += 1;

        corr = correspond(src, dst, index, &t, params.max_corr_dist);
        let (f, r) = fitness_rmse(&corr, src.len());
        let converged = (f - fitness).abs() < params.rel_fitness_eps && (r - rmse).abs() < params.rel_rmse_eps;
        fitness = f;
        rmse = r;
        if converged || corr.src.is_empty() {
            break;
        }
    }
    Ok(RegistrationResult {
        transform: t,
        fitness,
        inlier_rmse: rmse,
        iterations,
        correspondences: corr.src.len(),
        trace,
    })
}

/// Feature correspondences `(src_index, dst_index)` by nearest FPFH descriptor.
/// With the mutual filter, only pairs that are each other's nearest survive;
/// if too few survive the unfiltered set is used.
pub fn match_features(src: &[FpfhDescriptor], dst: &[FpfhDescriptor], mutual: bool) -> Vec<(usize, usize)> {
    if src.is_empty() || dst.is_empty() {
        return Vec::new();
    }
    let dst_tree: KdTree<FPFH_DIM> = KdTree::build(dst.to_vec());
    let forward: Vec<usize> = src
        .iter()
        .map(|d| dst_tree.nearest(d).expect("non-empty").index)
        .collect();
    let all: Vec<(usize, usize)> = forward.iter().copied().enumerate().collect();
    if !mutual {
        return all;
    }
    let src_tree: KdTree<FPFH_DIM> = KdTree::build(src.to_vec());
    let mut back: Vec<Option<usize>> = alloc::vec![None; dst.len()];
    let filtered: Vec<(usize, usize)> = all
        .iter()
        .copied()
        .filter(|&(i, j)| *back[j].get_or_insert_with(|| src_tree.nearest(&dst[j]).expect("non-empty").index) == i)
        .collect();
    if filtered.len() >= 10 {
        filtered
    } else {
        all
    }
}

/// RANSAC over three feature correspondences with edge-length and distance
/// pruning, scored by correspondence inlier count; the winner is refit on its
/// inliers and evaluated on the full clouds.
pub fn global_register(
    src: &PointCloud,
    dst: &PointCloud,
    src_fpfh: &[FpfhDescriptor],
    dst_fpfh: &[FpfhDescriptor],
    params: &GlobalParams,
) -> Result<RegistrationResult> {
    if src.len() < 3 || dst.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: src.len().min(dst.len()),
        });
    }
    if src_fpfh.len() != src.len() || dst_fpfh.len() != dst.len() {
        return Err(Error::InvalidParameter("descriptor count differs from cloud size".into()));
    }
    let corr = match_features(src_fpfh, dst_fpfh, params.mutual_filter);
    let ps: Vec<Point3> = corr.iter().map(|&(i, _)| src.points[i]).collect();
    let qs: Vec<Point3> = corr.iter().map(|&(_, j)| dst.points[j]).collect();
    let n = corr.len();
    let failed = |iterations| Error::RegistrationFailed {
        iterations,
        correspondences: n,
    };
    if n < 3 {
        return Err(failed(0));
    }
    let d2 = params.max_corr_dist * params.max_corr_dist;
    let ratio = params.edge_length_ratio;
    let mut r = rng::seeded(params.seed);
    let mut best: Option<(usize, RigidTransform)> = None;
    let mut needed = params.max_iterations;
    let mut it = 0;
    while it < needed.min(params.max_iterations) {
        it += 1;
        let a = rng::uniform_index(&mut r, n);
        let mut b = rng::uniform_index(&mut r, n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng::uniform_index(&mut r, n - 2);
        for taken in if a < b { [a, b] } else { [b, a] } {
            if c >= taken {
                c += 1;
            }
        }
        let idx = [a, b, c];
        let edges_ok = [(0, 1), (1, 2), (0, 2)].iter().all(|&(x, y)| {
            let ls = (ps[idx[x]] - ps[idx[y]]).norm();
            let ld = (qs[idx[x]] - qs[idx[y]]).norm();
            ls >= ratio * ld && ld >= ratio * ls
        });
        if !edges_ok {
            continue;
        }
        let s = idx.map(|i| ps[i]);
        let d = idx.map(|i| qs[i]);
        let Ok(t) = kabsch(&s, &d, None) else { continue };
        if s.iter().zip(&d).any(|(p, q)| (t.apply_point(p) - q).norm_squared() > d2) {
            continue;
        }
        let inliers = ps
            .iter()
            .zip(&qs)
            .filter(|(p, q)| (t.apply_point(p) - *q).norm_squared() < d2)
            .count();
        if best.as_ref().is_none_or(|(b, _)| inliers > *b) {
            best = Some((inliers, t));
            let w = inliers as f64 / n as f64;
            let miss = 1.0 - w * w * w;
            needed = if miss <= 0.0 {
                it
            } else {
                let est = libm::log(1.0 - params.confidence) / libm::log(miss);
                if est.is_finite() {
                    libm::ceil(est).clamp(1.0, params.max_iterations as f64) as usize
                } else {
                    params.max_iterations
                }
            };
        }
    }
    let Some((_, mut t)) = best else {
        return Err(failed(it));
    };
    // least-squares refit on the winning consensus set
    let (is, id): (Vec<Point3>, Vec<Point3>) = ps
        .iter()
        .zip(&qs)
        .filter(|(p, q)| (t.apply_point(p) - *q).norm_squared() < d2)
        .map(|(p, q)| (*p, *q))
        .unzip();
    if is.len() >= 3 {
        if let Ok(refit) = kabsch(&is, &id, None) {
            t = refit;
        }
    }
    let index = SpatialIndex::from_points(&dst.points)?;
    let (fitness, inlier_rmse, count) = evaluate(&src.points, &index, &t, params.max_corr_dist);
    Ok(RegistrationResult {
        transform: t,
        fitness,
        inlier_rmse,
        iterations: it,
        correspondences: count,
        trace: Vec::new(),
    })
}
