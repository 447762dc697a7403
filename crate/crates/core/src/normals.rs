//! PCA normal estimation over k-nearest neighborhoods.

use alloc::vec::Vec;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::spatial::SpatialIndex;

pub const DEFAULT_NORMAL_KNN: usize = 30;
/// Neighborhoods whose second eigenvalue falls below this fraction of the largest are rank < 2.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    /// Flip so the normal points away from the cloud centroid.
    Outward,
    /// Flip so the normal points toward this location.
    Toward(Point3),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub knn: usize,
    pub orientation: Orientation,
}

impl Default for NormalParams {
    fn default() -> Self {
        Self {
            knn: DEFAULT_NORMAL_KNN,
            orientation: Orientation::Outward,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    /// True where the neighborhood was rank-deficient and the normal defaulted to `+z`.
    pub degenerate: Vec<bool>,
}

impl NormalEstimate {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Smallest-eigenvector normals of each point's `knn`-neighborhood (the
/// point itself included). The neighborhood is clamped to the cloud size.
pub fn estimate_normals(cloud: &PointCloud, params: &NormalParams) -> Result<NormalEstimate> {
    if cloud.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: cloud.len(),
        });
    }
    if params.knn < 2 {
        return Err(Error::InvalidParameter(alloc::format!("normal knn {} < 2", params.knn)));
    }
    let index = SpatialIndex::from_points(&cloud.points)?;
    let k = params.knn.min(cloud.len());
    let centroid = cloud.centroid().expect("non-empty");
    let mut normals = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let nbrs = index.knn(p, k);
        let pts: Vec<Point3> = nbrs.iter().map(|n| cloud.points[n.index]).collect();
        match pca_normal(&pts) {
            Some(mut n) => {
                let reference = match params.orientation {
                    Orientation::Outward => p - centroid,
                    Orientation::Toward(v) => v - p,
                };
                if n.dot(&reference) < 0.0 {
                    n = -n;
                }
                normals.push(n);
                degenerate.push(false);
            }
            None => {
                normals.push(Point3::z());
                degenerate.push(true);
            }
        }
    }
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(NormalEstimate {
        cloud: out,
        degenerate,
    })
}

/// Unit normal of a neighborhood, `None` when its covariance has rank < 2.
pub fn pca_normal(pts: &[Point3]) -> Option<Point3> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    if largest <= 0.0 || middle <= RANK_TOL * largest {
        return None;
    }
    let v = eig.eigenvectors.column(order[0]).into_owned();
    let norm = v.norm();
    (norm > 0.0).then(|| v / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn plane_normals_are_z() {
        let mut pts = alloc::vec![];
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.13, 0.0));
            }
        }
        let est = estimate_normals(&PointCloud::new(pts), &NormalParams::default()).unwrap();
        for n in est.cloud.normals.as_ref().unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-6, "{n}");
        }
        assert_eq!(est.degenerate_count(), 0);
    }

    #[test]
    fn sphere_normals_point_outward() {
        let mut r = rng::seeded(5);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| {
                let v = Point3::new(
                    rng::standard_normal(&mut r),
                    rng::standard_normal(&mut r),
                    rng::standard_normal(&mut r),
                );
                v.normalize()
            })
            .collect();
        let est = estimate_normals(&PointCloud::new(pts.clone()), &NormalParams { knn: 20, ..Default::default() }).unwrap();
        for (p, n) in pts.iter().zip(est.cloud.normals.unwrap()) {
            assert!(n.dot(p) > 0.99, "{p} {n}");
        }
    }

    #[test]
    fn collinear_points_flagged() {
        let pts = alloc::vec![Point3::zeros(), Point3::new(1.0, 1.0, 0.0), Point3::new(2.0, 2.0, 0.0)];
        let est = estimate_normals(&PointCloud::new(pts), &NormalParams { knn: 3, ..Default::default() }).unwrap();
        assert!(est.degenerate.iter().all(|&d| d));
        assert!(est.cloud.normals.unwrap().iter().all(|n| *n == Point3::z()));
    }
}
