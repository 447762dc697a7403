//! Fast Point Feature Histograms.
//!
//! For every point pair the Darboux-frame angles `(α, φ, θ)` are binned into
//! three 11-bin histograms (SPFH). The FPFH of a point adds the
//! inverse-distance weighted mean of its neighbors' SPFHs to its own, and each
//! 11-bin block is then rescaled to sum to 100.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::spatial::{Neighbor, SpatialIndex};

pub const BINS_PER_FEATURE: usize = 11;
pub const FPFH_DIM: usize = 3 * BINS_PER_FEATURE;

pub type FpfhDescriptor = [f64; FPFH_DIM];

#[derive(Debug, Clone, PartialEq)]
pub struct Fpfh {
    pub descriptors: Vec<FpfhDescriptor>,
    /// Points with no neighbor inside the radius; their descriptor is all zero.
    pub isolated: Vec<bool>,
}

impl Fpfh {
    pub fn isolated_count(&self) -> usize {
        self.isolated.iter().filter(|&&i| i).count()
    }
}

/// `(α, φ, θ)` for a pair, or `None` when the points coincide or the frame is degenerate.
pub fn pair_features(p1: &Point3, n1: &Point3, p2: &Point3, n2: &Point3) -> Option<[f64; 3]> {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return None;
    }
    let a1 = n1.dot(&dp) / dist;
    let a2 = n2.dot(&dp) / dist;
    // the source is the endpoint whose normal makes the smaller angle with the connecting line
    let (ns, nt, phi) = if libm::acos(a1.abs().min(1.0)) > libm::acos(a2.abs().min(1.0)) {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(ns);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = ns.cross(&v);
    let alpha = v.dot(nt);
    let theta = libm::atan2(w.dot(nt), ns.dot(nt));
    Some([theta, alpha, phi])
}

fn bin_of(value: f64, lo: f64, hi: f64) -> usize {
    let b = libm::floor(BINS_PER_FEATURE as f64 * (value - lo) / (hi - lo));
    (b.max(0.0) as usize).min(BINS_PER_FEATURE - 1)
}

fn normalize_blocks(h: &mut FpfhDescriptor) {
    for block in h.chunks_mut(BINS_PER_FEATURE) {
        let s: f64 = block.iter().sum();
        if s > 0.0 {
            for v in block.iter_mut() {
                *v *= 100.0 / s;
            }
        }
    }
}

fn spfh(cloud: &[Point3], normals: &[Point3], i: usize, nbrs: &[Neighbor]) -> FpfhDescriptor {
    let mut h = [0.0; FPFH_DIM];
    for n in nbrs {
        if let Some([theta, alpha, phi]) = pair_features(&cloud[i], &normals[i], &cloud[n.index], &normals[n.index]) {
            h[bin_of(theta, -PI, PI)] += 1.0;
            h[BINS_PER_FEATURE + bin_of(alpha, -1.0, 1.0)] += 1.0;
            h[2 * BINS_PER_FEATURE + bin_of(phi, -1.0, 1.0)] += 1.0;
        }
    }
    normalize_blocks(&mut h);
    h
}

pub fn compute_fpfh(cloud: &PointCloud, radius: f64) -> Result<Fpfh> {
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("fpfh radius {radius} must be > 0")));
    }
    if cloud.is_empty() {
        return Ok(Fpfh {
            descriptors: vec![],
            isolated: vec![],
        });
    }
    let pts = &cloud.points;
    let index = SpatialIndex::from_points(pts)?;
    let neighborhoods: Vec<Vec<Neighbor>> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            index
                .within_radius(p, radius)
                .into_iter()
                .filter(|n| n.index != i)
                .collect()
        })
        .collect();
    let spfhs: Vec<FpfhDescriptor> = (0..pts.len())
        .map(|i| spfh(pts, normals, i, &neighborhoods[i]))
        .collect();

    let mut descriptors = Vec::with_capacity(pts.len());
    let mut isolated = Vec::with_capacity(pts.len());
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        if nbrs.is_empty() {
            descriptors.push([0.0; FPFH_DIM]);
            isolated.push(true);
            continue;
        }
        let mut acc = [0.0; FPFH_DIM];
        let mut count = 0usize;
        for n in nbrs {
            let d = n.distance();
            if d == 0.0 {
                continue;
            }
            let w = 1.0 / d;
            for (a, s) in acc.iter_mut().zip(&spfhs[n.index]) {
                *a += w * s;
            }
            count += 1;
        }
        let mut h = spfhs[i];
        if count > 0 {
            for (hv, a) in h.iter_mut().zip(&acc) {
                *hv += a / count as f64;
            }
        }
        normalize_blocks(&mut h);
        isolated.push(h.iter().all(|&v| v == 0.0));
        descriptors.push(h);
    }
    Ok(Fpfh {
        descriptors,
        isolated,
    })
}

pub fn l1_distance(a: &FpfhDescriptor, b: &FpfhDescriptor) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normals::{estimate_normals, NormalParams};

    fn grid_plane(n: usize, h: f64) -> Vec<Point3> {
        let mut pts = vec![];
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * h, j as f64 * h, 0.0));
            }
        }
        pts
    }

    #[test]
    fn needs_normals() {
        let cloud = PointCloud::new(grid_plane(3, 1.0));
        assert_eq!(compute_fpfh(&cloud, 1.0), Err(Error::MissingNormals));
    }

    #[test]
    fn isolated_point_has_zero_descriptor() {
        let mut cloud = PointCloud::new(vec![Point3::zeros(), Point3::new(10.0, 0.0, 0.0)]);
        cloud.normals = Some(vec![Point3::z(); 2]);
        let f = compute_fpfh(&cloud, 1.0).unwrap();
        assert_eq!(f.isolated, vec![true, true]);
        assert!(f.descriptors[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn planar_interior_descriptors_agree() {
        let mut cloud = PointCloud::new(grid_plane(15, 0.1));
        cloud.normals = Some(vec![Point3::z(); cloud.len()]);
        let f = compute_fpfh(&cloud, 0.25).unwrap();
        let interior: Vec<usize> = (0..cloud.len())
            .filter(|&i| {
                let p = cloud.points[i];
                p.x > 0.5 && p.x < 0.9 && p.y > 0.5 && p.y < 0.9
            })
            .collect();
        for &i in &interior {
            assert!(l1_distance(&f.descriptors[i], &f.descriptors[interior[0]]) < 1e-6);
        }
    }

    #[test]
    fn edge_differs_from_plane() {
        // two half-planes meeting at a right angle along x = 0
        let mut pts = vec![];
        let mut normals = vec![];
        for i in 0..15 {
            for j in 0..15 {
                pts.push(Point3::new(-(i as f64) * 0.1, j as f64 * 0.1, 0.0));
                normals.push(Point3::z());
                if i > 0 {
                    pts.push(Point3::new(0.0, j as f64 * 0.1, i as f64 * 0.1));
                    normals.push(Point3::x());
                }
            }
        }
        let mut cloud = PointCloud::new(pts);
        cloud.normals = Some(normals);
        let f = compute_fpfh(&cloud, 0.25).unwrap();
        let find = |q: Point3| cloud.points.iter().position(|p| (p - q).norm() < 1e-9).unwrap();
        let plane_a = find(Point3::new(-1.0, 0.7, 0.0));
        let plane_b = find(Point3::new(-1.1, 0.7, 0.0));
        let edge = find(Point3::new(0.0, 0.7, 0.0));
        let planar = l1_distance(&f.descriptors[plane_a], &f.descriptors[plane_b]);
        assert!(l1_distance(&f.descriptors[plane_a], &f.descriptors[edge]) > planar + 1.0);
    }

    #[test]
    fn blocks_sum_to_hundred() {
        let mut cloud = PointCloud::new(grid_plane(12, 0.1));
        // bend half of it to get non-trivial angles
        for p in cloud.points.iter_mut() {
            if p.x > 0.55 {
                p.z = (p.x - 0.55) * 0.8;
            }
        }
        let est = estimate_normals(&cloud, &NormalParams { knn: 8, ..Default::default() }).unwrap();
        let f = compute_fpfh(&est.cloud, 0.25).unwrap();
        for d in &f.descriptors {
            assert!(d.iter().all(|&v| v >= 0.0));
            for block in d.chunks(BINS_PER_FEATURE) {
                let s: f64 = block.iter().sum();
                assert!((s - 100.0).abs() < 1e-6 || s == 0.0, "{s}");
            }
        }
    }
}
