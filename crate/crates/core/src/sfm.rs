//! Sparse SfM model types, pinhole projection and reuse accounting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::geometry::{ColorRgb, Point3, PointCloud, RigidTransform};

pub const DEFAULT_Z_MIN: f64 = 1e-6;
pub const DEFAULT_MIN_TRACK: usize = 3;
const QUATERNION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
}

impl CameraModel {
    pub fn name(self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub camera_id: u32,
    pub model: CameraModel,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn pinhole(camera_id: u32, width: usize, height: usize, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self {
            camera_id,
            model: CameraModel::Pinhole,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Intrinsics of a cube face of the given size: 90° field of view.
    pub fn cube_face(camera_id: u32, face_size: usize) -> Self {
        let f = face_size as f64 / 2.0;
        Self {
            camera_id,
            model: CameraModel::Pinhole,
            width: face_size,
            height: face_size,
            fx: f,
            fy: f,
            cx: f,
            cy: f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "camera {} has invalid intrinsics",
                self.camera_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub image_id: u32,
    pub camera_id: u32,
    pub name: String,
    /// World-to-camera rotation, scalar first `(w, x, y, z)`.
    pub qvec: [f64; 4],
    /// World-to-camera translation.
    pub tvec: Point3,
}

impl PosedImage {
    pub fn validate(&self) -> Result<()> {
        let n = libm::sqrt(self.qvec.iter().map(|v| v * v).sum::<f64>());
        if !n.is_finite() || (n - 1.0).abs() > QUATERNION_TOL {
            return Err(Error::InvalidParameter(format!(
                "image {} quaternion norm {n} is not unit",
                self.image_id
            )));
        }
        Ok(())
    }

    pub fn camera_from_world(&self) -> RigidTransform {
        let [w, x, y, z] = self.qvec;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        RigidTransform {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: self.tvec,
        }
    }

    pub fn from_camera_from_world(image_id: u32, camera_id: u32, name: String, t: &RigidTransform) -> Self {
        let q = UnitQuaternion::from_matrix(&t.rotation);
        let q = q.into_inner();
        // canonical sign: non-negative scalar part
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        Self {
            image_id,
            camera_id,
            name,
            qvec: [s * q.w, s * q.i, s * q.j, s * q.k],
            tvec: t.translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        self.camera_from_world().inverse().translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub point_id: u64,
    pub position: Point3,
    pub color: ColorRgb,
    pub track_length: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseModel {
    pub cameras: BTreeMap<u32, CameraIntrinsics>,
    pub images: BTreeMap<u32, PosedImage>,
    /// Sorted by ascending point id.
    pub points: Vec<SparsePoint>,
}

impl SparseModel {
    pub fn validate(&self) -> Result<()> {
        for cam in self.cameras.values() {
            cam.validate()?;
        }
        for img in self.images.values() {
            img.validate()?;
            if !self.cameras.contains_key(&img.camera_id) {
                return Err(Error::MissingInput(format!(
                    "image {} references unknown camera {}",
                    img.image_id, img.camera_id
                )));
            }
        }
        if let Some(p) = self.points.iter().find(|p| p.track_length < 2) {
            return Err(Error::InvalidParameter(format!(
                "point {} has track length {}",
                p.point_id, p.track_length
            )));
        }
        Ok(())
    }

    pub fn image_by_name(&self, name: &str) -> Option<&PosedImage> {
        self.images.values().find(|i| i.name == name)
    }
}

/// Pinhole projection `s·ũ = K [R | t] X̃`. `None` when behind the camera
/// (depth `<= z_min`) or outside the image.
pub fn project_point(x: &Point3, cam: &CameraIntrinsics, pose: &PosedImage) -> Option<(f64, f64)> {
    project_with(x, cam, &pose.camera_from_world(), DEFAULT_Z_MIN).map(|(u, v, _)| (u, v))
}

/// Projection with an explicit camera-from-world transform. Returns `(u, v, depth)`.
pub fn project_with(x: &Point3, cam: &CameraIntrinsics, camera_from_world: &RigidTransform, z_min: f64) -> Option<(f64, f64, f64)> {
    let pc = camera_from_world.apply_point(x);
    if pc.z <= z_min {
        return None;
    }
    let u = cam.fx * pc.x / pc.z + cam.cx;
    let v = cam.fy * pc.y / pc.z + cam.cy;
    let inside = u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64;
    inside.then_some((u, v, pc.z))
}

/// Points with at least `min_track` observations, ascending point id.
pub fn sfm_to_pointcloud(model: &SparseModel, min_track: usize) -> PointCloud {
    let mut pts: Vec<&SparsePoint> = model
        .points
        .iter()
        .filter(|p| p.track_length >= min_track)
        .collect();
    pts.sort_by_key(|p| p.point_id);
    PointCloud {
        points: pts.iter().map(|p| p.position).collect(),
        colors: Some(pts.iter().map(|p| p.color).collect()),
        normals: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReuseMetrics {
    pub kf_reuse_ratio: f64,
    pub sfm_rec_ratio: f64,
}

/// Keyframe reuse `keyframes / total_frames` and SfM reconstruction
/// `registered / (keyframes · faces_per_keyframe)`.
pub fn reuse_metrics(total_frames: usize, keyframes: usize, registered_images: usize, faces_per_keyframe: usize) -> Result<ReuseMetrics> {
    if total_frames == 0 {
        return Err(Error::UndefinedRatio("zero total frames"));
    }
    if keyframes == 0 || faces_per_keyframe == 0 {
        return Err(Error::UndefinedRatio("zero keyframe faces"));
    }
    if keyframes > total_frames {
        return Err(Error::InvalidParameter(format!(
            "{keyframes} keyframes exceed {total_frames} frames"
        )));
    }
    let faces = keyframes * faces_per_keyframe;
    if registered_images > faces {
        return Err(Error::InvalidParameter(format!(
            "{registered_images} registered images exceed {faces} keyframe faces"
        )));
    }
    Ok(ReuseMetrics {
        kf_reuse_ratio: keyframes as f64 / total_frames as f64,
        sfm_rec_ratio: registered_images as f64 / faces as f64,
    })
}

/// Rounds half away from zero at `decimals` places (ledger reporting).
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let f = libm::pow(10.0, decimals as f64);
    libm::round(x * f) / f
}
