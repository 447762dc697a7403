//! Sequential scan-to-scan ICP odometry and map accumulation.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::registration::{icp_refine, IcpParams};

pub const DEFAULT_MAP_VOXEL: f64 = 0.05;
pub const DEFAULT_FITNESS_FLOOR: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct TimedScan {
    pub timestamp: f64,
    /// Points in the sensor frame.
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryParams {
    pub icp: IcpParams,
    pub fitness_floor: f64,
    pub map_voxel: f64,
}

impl Default for OdometryParams {
    fn default() -> Self {
        Self {
            icp: IcpParams::with_tukey(5.0 * DEFAULT_MAP_VOXEL),
            fitness_floor: DEFAULT_FITNESS_FLOOR,
            map_voxel: DEFAULT_MAP_VOXEL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Odometry {
    /// `world_from_sensor` per scan; the first is the identity.
    pub trajectory: Vec<RigidTransform>,
    /// `pairs[i - 1]` describes the registration of scan `i` onto scan `i - 1`.
    pub pairs: Vec<PairStats>,
    /// Point count before voxel deduplication.
    pub raw_points: usize,
    pub map: PointCloud,
}

/// Chain broken at `error`; `partial` holds everything up to the last good scan.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryFailure {
    pub error: Error,
    pub partial: Odometry,
}

impl From<OdometryFailure> for Error {
    fn from(f: OdometryFailure) -> Self {
        f.error
    }
}

/// Keeps the first point (in input order) of every occupied voxel.
pub fn voxel_dedup(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("voxel {voxel} must be > 0")));
    }
    let mut seen = BTreeSet::new();
    let keep: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let key = [p.x, p.y, p.z].map(|c| libm::floor(c / voxel) as i64);
            seen.insert(key)
        })
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}

fn accumulate(scans: &[TimedScan], trajectory: &[RigidTransform], voxel: f64) -> Result<(usize, PointCloud)> {
    let mut raw = PointCloud::default();
    for (scan, pose) in scans.iter().zip(trajectory) {
        raw.points.extend(scan.cloud.points.iter().map(|p| pose.apply_point(p)));
    }
    let n = raw.len();
    Ok((n, voxel_dedup(&raw, voxel)?))
}

/// `trajectory[i] = trajectory[i-1] ∘ icp(scan_i → scan_{i-1})`, initialized
/// with the previous relative motion (constant velocity).
#[allow(clippy::result_large_err)]
pub fn odometry_chain(scans: &[TimedScan], params: &OdometryParams) -> core::result::Result<Odometry, OdometryFailure> {
    let fail = |error| OdometryFailure {
        error,
        partial: Odometry {
            trajectory: Vec::new(),
            pairs: Vec::new(),
            raw_points: 0,
            map: PointCloud::default(),
        },
    };
    if scans.is_empty() {
        return Err(fail(Error::EmptyInput("odometry needs at least one scan")));
    }
    if scans.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
        return Err(fail(Error::UnsortedTimestamps("lidar scans")));
    }
    let mut trajectory = alloc::vec![RigidTransform::identity()];
    let mut pairs = Vec::new();
    let mut velocity = RigidTransform::identity();
    let mut broken = None;
    for i in 1..scans.len() {
        let res = icp_refine(&scans[i].cloud, &scans[i - 1].cloud, &velocity, &params.icp);
        let res = match res {
            Ok(r) if r.fitness >= params.fitness_floor => r,
            Ok(r) => {
                broken = Some(Error::OdometryBreak {
                    index: i,
                    fitness: r.fitness,
                    floor: params.fitness_floor,
                });
                break;
            }
            Err(Error::NoCorrespondences { .. }) => {
                broken = Some(Error::OdometryBreak {
                    index: i,
                    fitness: 0.0,
                    floor: params.fitness_floor,
                });
                break;
            }
            Err(e) => {
                broken = Some(e);
                break;
            }
        };
        pairs.push(PairStats {
            fitness: res.fitness,
            inlier_rmse: res.inlier_rmse,
            iterations: res.iterations,
        });
        velocity = res.transform;
        let pose = trajectory[i - 1].compose(&res.transform).orthonormalized();
        trajectory.push(pose);
    }
    let (raw_points, map) = accumulate(scans, &trajectory, params.map_voxel).map_err(fail)?;
    let odo = Odometry {
        trajectory,
        pairs,
        raw_points,
        map,
    };
    match broken {
        None => Ok(odo),
        Some(error) => Err(OdometryFailure { error, partial: odo }),
    }
}

/// Length of the polyline through the trajectory positions.
pub fn path_length(trajectory: &[RigidTransform]) -> f64 {
    trajectory
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).norm())
        .sum()
}
