//! 3D Gaussian initialization records built from the fused point cloud.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{ColorRgb, Point3, PointCloud};
use crate::spatial::SpatialIndex;

/// Zeroth-order real spherical harmonic `1 / (2√π)`.
pub const SH_C0: f64 = 0.28209479177387814;
pub const SCALE_FLOOR: f64 = 1e-7;
pub const DEFAULT_OPACITY: f64 = 0.1;
const SCALE_NEIGHBORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Provenance {
    Lidar,
    Sfm,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Lidar => "lidar",
            Provenance::Sfm => "sfm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedCloud {
    pub cloud: PointCloud,
    pub provenance: Vec<Provenance>,
    pub dropped_sfm: usize,
}

impl FusedCloud {
    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }
}

/// LiDAR points first, then the SfM points farther than `dedup_radius` from
/// every LiDAR point. Colors survive only if both inputs carry them.
pub fn fuse(sfm_aligned: &PointCloud, lidar: &PointCloud, dedup_radius: f64) -> Result<FusedCloud> {
    if !(dedup_radius >= 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("dedup radius {dedup_radius} must be >= 0")));
    }
    if sfm_aligned.is_empty() && lidar.is_empty() {
        return Err(Error::EmptyInput("nothing to fuse"));
    }
    let keep: Vec<usize> = if lidar.is_empty() {
        (0..sfm_aligned.len()).collect()
    } else {
        let index = SpatialIndex::from_points(&lidar.points)?;
        (0..sfm_aligned.len())
            .filter(|&i| index.nearest_within(&sfm_aligned.points[i], dedup_radius).is_none())
            .collect()
    };
    let sfm_kept = sfm_aligned.select(&keep);
    let lidar_plain = PointCloud {
        normals: None,
        ..lidar.clone()
    };
    let sfm_plain = PointCloud {
        normals: None,
        ..sfm_kept
    };
    let cloud = if lidar.is_empty() {
        sfm_plain
    } else if sfm_plain.is_empty() {
        lidar_plain
    } else {
        lidar_plain.concat(&sfm_plain)
    };
    let mut provenance = alloc::vec![Provenance::Lidar; lidar.len()];
    provenance.extend(core::iter::repeat_n(Provenance::Sfm, keep.len()));
    Ok(FusedCloud {
        cloud,
        provenance,
        dropped_sfm: sfm_aligned.len() - keep.len(),
    })
}

/// Isotropic log-scale per point: `log(max(mean distance to the 3 nearest
/// other points, 1e-7))`.
pub fn init_scales(cloud: &PointCloud) -> Result<Vec<[f64; 3]>> {
    if cloud.len() < SCALE_NEIGHBORS + 1 {
        return Err(Error::InsufficientPoints {
            needed: SCALE_NEIGHBORS + 1,
            got: cloud.len(),
        });
    }
    let index = SpatialIndex::from_points(&cloud.points)?;
    Ok(cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nbrs = index.knn(p, SCALE_NEIGHBORS + 1);
            let mean = nbrs
                .iter()
                .filter(|n| n.index != i)
                .take(SCALE_NEIGHBORS)
                .map(|n| n.distance())
                .sum::<f64>()
                / SCALE_NEIGHBORS as f64;
            let s = libm::log(mean.max(SCALE_FLOOR));
            [s, s, s]
        })
        .collect())
}

pub fn rgb_to_sh_dc(c: ColorRgb) -> [f64; 3] {
    c.channels().map(|x| (x - 0.5) / SH_C0)
}

pub fn sh_dc_to_rgb(dc: [f64; 3]) -> [f64; 3] {
    dc.map(|d| d * SH_C0 + 0.5)
}

pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianRecord {
    pub mean: Point3,
    pub scale: [f64; 3],
    /// `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub sh_dc: [f64; 3],
    pub opacity_logit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitAsset {
    pub records: Vec<GaussianRecord>,
    pub provenance: Vec<Provenance>,
}

impl InitAsset {
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::EmptyInput("asset has no records"));
        }
        if self.records.len() != self.provenance.len() {
            return Err(Error::InvalidParameter("provenance length differs from records".into()));
        }
        for r in &self.records {
            let qn = libm::sqrt(r.rotation.iter().map(|v| v * v).sum());
            let finite = r.mean.iter().chain(&r.scale).chain(&r.sh_dc).all(|v| v.is_finite()) && r.opacity_logit.is_finite();
            if (qn - 1.0).abs() > 1e-9 || !finite {
                return Err(Error::InvalidParameter("asset record is not finite or rotation not unit".into()));
            }
        }
        Ok(())
    }

    pub fn count(&self, p: Provenance) -> usize {
        self.provenance.iter().filter(|&&q| q == p).count()
    }
}

/// Uncolored points (possible when SfM colors are absent) get mid-gray, i.e. zero DC.
pub fn build_asset(fused: &FusedCloud, opacity: f64) -> Result<InitAsset> {
    if !(opacity > 0.0 && opacity < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!("opacity {opacity} outside (0, 1)")));
    }
    let scales = init_scales(&fused.cloud)?;
    let o = logit(opacity);
    let records = fused
        .cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| GaussianRecord {
            mean: *p,
            scale: scales[i],
            rotation: [1.0, 0.0, 0.0, 0.0],
            sh_dc: fused.cloud.colors.as_ref().map_or([0.0; 3], |c| rgb_to_sh_dc(c[i])),
            opacity_logit: o,
        })
        .collect();
    let asset = InitAsset {
        records,
        provenance: fused.provenance.clone(),
    };
    asset.validate()?;
    Ok(asset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, x0: f64) -> PointCloud {
        PointCloud::new((0..n).map(|i| Point3::new(x0 + i as f64, 0.0, 0.0)).collect())
    }

    #[test]
    fn sh_constants() {
        assert_eq!(rgb_to_sh_dc(ColorRgb::new(0.5, 0.5, 0.5).unwrap()), [0.0; 3]);
        let w = rgb_to_sh_dc(ColorRgb::new(1.0, 1.0, 1.0).unwrap());
        assert!((w[0] - 1.7725).abs() < 1e-4);
        // 1 / (2 sqrt(pi))
        assert!((SH_C0 - 0.5 / libm::sqrt(core::f64::consts::PI)).abs() < 1e-16);
    }

    #[test]
    fn fuse_disjoint_and_contained() {
        let lidar = line(5, 0.0);
        let sfm = line(3, 100.0);
        let f = fuse(&sfm, &lidar, 0.05).unwrap();
        assert_eq!((f.count(Provenance::Lidar), f.count(Provenance::Sfm)), (5, 3));
        let f = fuse(&line(3, 1.0), &lidar, 0.05).unwrap();
        assert_eq!(f.cloud, lidar);
        assert_eq!(f.dropped_sfm, 3);
        assert!(fuse(&PointCloud::default(), &PointCloud::default(), 0.1).is_err());
    }

    #[test]
    fn fuse_is_idempotent() {
        let lidar = line(10, 0.0);
        let sfm = PointCloud::new((0..10).map(|i| Point3::new(i as f64 * 0.7, 0.02, 0.0)).collect());
        let once = fuse(&sfm, &lidar, 0.05).unwrap();
        let twice = fuse(&sfm, &once.cloud, 0.05).unwrap();
        assert_eq!(twice.cloud, once.cloud);
    }

    #[test]
    fn grid_scales() {
        let h = 0.25;
        let mut pts = Vec::new();
        for i in 0..9 {
            for j in 0..9 {
                pts.push(Point3::new(i as f64 * h, j as f64 * h, 0.0));
            }
        }
        let s = init_scales(&PointCloud::new(pts)).unwrap();
        // interior point (4, 4): four neighbors at h, the three lowest-index ones are taken
        assert!((s[4 * 9 + 4][0] - libm::log(h)).abs() < 1e-6);
    }

    #[test]
    fn duplicates_hit_the_floor() {
        let s = init_scales(&PointCloud::new(alloc::vec![Point3::new(1.0, 2.0, 3.0); 6])).unwrap();
        assert!(s.iter().all(|v| v[0] == libm::log(SCALE_FLOOR)));
        assert!(init_scales(&line(3, 0.0)).is_err());
    }
}
