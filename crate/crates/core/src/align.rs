//! Metric alignment of a scale-ambiguous SfM cloud onto the LiDAR cloud.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fpfh::compute_fpfh;
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::normals::{estimate_normals, NormalParams};
use crate::registration::{global_register, icp_refine, umeyama, GlobalParams, IcpParams, RegistrationResult};
use crate::spatial::SpatialIndex;

pub const DEFAULT_ALIGNMENT_GATE: f64 = 0.5;

/// `p -> scale · R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rigid: RigidTransform,
}

impl Similarity {
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rigid.apply_point(&(self.scale * p))
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.apply(p)).collect(),
            colors: cloud.colors.clone(),
            normals: cloud.normals.as_ref().map(|n| n.iter().map(|v| self.rigid.apply_vector(v)).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignParams {
    /// Fixed SfM-to-metric scale; estimated from the clouds when `None`.
    pub scale: Option<f64>,
    pub use_global: bool,
    pub normal_knn: usize,
    /// FPFH radius as a multiple of the mean nearest-neighbor spacing.
    pub fpfh_radius_factor: f64,
    pub global: GlobalParams,
    pub icp: IcpParams,
    pub gate: f64,
}

impl AlignParams {
    pub fn new(map_voxel: f64, seed: u64) -> Self {
        Self {
            scale: None,
            use_global: true,
            normal_knn: crate::normals::DEFAULT_NORMAL_KNN,
            fpfh_radius_factor: 5.0,
            global: GlobalParams::new(15.0 * map_voxel, seed),
            icp: IcpParams::with_tukey(5.0 * map_voxel),
            gate: DEFAULT_ALIGNMENT_GATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    /// SfM-to-LiDAR motion, applied after scaling.
    pub transform: RigidTransform,
    /// Diagnostics of the LiDAR-onto-SfM registrations.
    pub global: Option<RegistrationResult>,
    pub icp: RegistrationResult,
    pub aligned: PointCloud,
}

impl Alignment {
    pub fn similarity(&self) -> Similarity {
        Similarity {
            scale: self.scale,
            rigid: self.transform,
        }
    }

    pub fn global_fitness(&self) -> Option<f64> {
        self.global.as_ref().map(|g| g.fitness)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median distance of points from their centroid.
pub fn median_spread(cloud: &PointCloud) -> Result<f64> {
    let c = cloud.centroid().ok_or(Error::EmptyInput("spread of an empty cloud"))?;
    Ok(median(cloud.points.iter().map(|p| (p - c).norm()).collect()))
}

/// Ratio of median centroid distances, `lidar / sfm`.
pub fn estimate_scale(sfm: &PointCloud, lidar: &PointCloud) -> Result<f64> {
    let s = median_spread(sfm)?;
    let l = median_spread(lidar)?;
    if !(s > 0.0) || !(l > 0.0) {
        return Err(Error::InvalidParameter("cannot estimate scale of a degenerate cloud".into()));
    }
    Ok(l / s)
}

pub fn mean_nn_spacing(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: cloud.len() });
    }
    let index = SpatialIndex::from_points(&cloud.points)?;
    let total: f64 = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            index
                .knn(p, 2)
                .iter()
                .find(|n| n.index != i)
                .map_or(0.0, |n| n.distance())
        })
        .sum();
    Ok(total / cloud.len() as f64)
}

/// Normals then FPFH with the radius tied to the cloud's own spacing.
pub fn describe(cloud: &PointCloud, normal_knn: usize, radius_factor: f64) -> Result<(PointCloud, crate::fpfh::Fpfh)> {
    let with_normals = estimate_normals(
        cloud,
        &NormalParams {
            knn: normal_knn,
            ..Default::default()
        },
    )?
    .cloud;
    let radius = radius_factor * mean_nn_spacing(cloud)?;
    let f = compute_fpfh(&with_normals, radius.max(f64::MIN_POSITIVE))?;
    Ok((with_normals, f))
}

/// Full alignment without the fitness gate.
///
/// Registration runs with the LiDAR cloud as source and the scaled SfM cloud
/// as target, so fitness is the fraction of LiDAR points explained by SfM
/// structure; the result is inverted to carry SfM into the LiDAR frame.
pub fn align_unchecked(sfm: &PointCloud, lidar: &PointCloud, params: &AlignParams) -> Result<Alignment> {
    if sfm.is_empty() || lidar.is_empty() {
        return Err(Error::EmptyInput("alignment needs non-empty clouds"));
    }
    let scale = match params.scale {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidParameter(alloc::format!("scale {s} must be positive"))),
        None => estimate_scale(sfm, lidar)?,
    };
    let scaled = sfm.scaled(scale);
    let (global, lidar_to_sfm) = if params.use_global {
        let (src, fs) = describe(lidar, params.normal_knn, params.fpfh_radius_factor)?;
        let (dst, fd) = describe(&scaled, params.normal_knn, params.fpfh_radius_factor)?;
        let g = global_register(&src, &dst, &fs.descriptors, &fd.descriptors, &params.global)?;
        let t = g.transform;
        (Some(g), t)
    } else {
        let (cs, cl) = (scaled.centroid().expect("non-empty"), lidar.centroid().expect("non-empty"));
        (None, RigidTransform::from_translation(cs - cl))
    };
    finish(sfm, lidar, scale, global, &lidar_to_sfm, &params.icp)
}

fn finish(
    sfm: &PointCloud,
    lidar: &PointCloud,
    scale: f64,
    global: Option<RegistrationResult>,
    lidar_to_sfm: &RigidTransform,
    icp: &IcpParams,
) -> Result<Alignment> {
    let scaled = sfm.scaled(scale);
    let refined = icp_refine(lidar, &scaled, lidar_to_sfm, icp)?;
    let transform = refined.transform.inverse();
    let sim = Similarity { scale, rigid: transform };
    Ok(Alignment {
        scale,
        transform,
        global,
        aligned: sim.apply_cloud(sfm),
        icp: refined,
    })
}

/// Skips global registration: the initial similarity comes from matching SfM
/// camera centers to the corresponding trajectory positions.
pub fn align_from_trajectory(
    sfm: &PointCloud,
    lidar: &PointCloud,
    sfm_centers: &[Point3],
    trajectory_centers: &[Point3],
    params: &AlignParams,
) -> Result<Alignment> {
    if sfm.is_empty() || lidar.is_empty() {
        return Err(Error::EmptyInput("alignment needs non-empty clouds"));
    }
    let (est_scale, rigid) = umeyama(sfm_centers, trajectory_centers)?;
    let scale = params.scale.unwrap_or(est_scale);
    finish(sfm, lidar, scale, None, &rigid.inverse(), &params.icp)
}

/// Applies the gate to an alignment result.
pub fn check_gate(a: &Alignment, gate: f64) -> Result<()> {
    if a.icp.fitness < gate {
        return Err(Error::AlignmentGateFailed {
            fitness: a.icp.fitness,
            gate,
        });
    }
    Ok(())
}

/// Alignment that fails with `AlignmentGateFailed` below `params.gate`, or
/// when no correspondence could be established at all.
pub fn align_sfm_to_lidar(sfm: &PointCloud, lidar: &PointCloud, params: &AlignParams) -> Result<Alignment> {
    let a = match align_unchecked(sfm, lidar, params) {
        Err(Error::NoCorrespondences { .. }) | Err(Error::RegistrationFailed { .. }) => {
            return Err(Error::AlignmentGateFailed {
                fitness: 0.0,
                gate: params.gate,
            })
        }
        other => other?,
    };
    check_gate(&a, params.gate)?;
    Ok(a)
}
