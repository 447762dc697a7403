//! Point, color, cloud and rigid-transform types shared by every stage.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Position in scene units. Backed by nalgebra so the solvers can use it directly.
pub type Point3 = Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;
const UNIT_NORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorRgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl ColorRgb {
    pub const BLACK: ColorRgb = ColorRgb { r: 0.0, g: 0.0, b: 0.0 };

    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        for c in [r, g, b] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidColor(c));
            }
        }
        Ok(Self { r, g, b })
    }

    pub fn from_u8(rgb: [u8; 3]) -> Self {
        Self {
            r: rgb[0] as f64 / 255.0,
            g: rgb[1] as f64 / 255.0,
            b: rgb[2] as f64 / 255.0,
        }
    }

    /// Quantizes with `round(c * 255)`, clamping first.
    pub fn to_u8(self) -> [u8; 3] {
        [quantize(self.r), quantize(self.g), quantize(self.b)]
    }

    pub fn channels(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn is_valid(self) -> bool {
        self.channels().iter().all(|c| (0.0..=1.0).contains(c))
    }
}

fn quantize(c: f64) -> u8 {
    libm::round(c.clamp(0.0, 1.0) * 255.0) as u8
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<ColorRgb>>,
    pub normals: Option<Vec<Point3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            colors: None,
            normals: None,
        }
    }

    pub fn with_colors(points: Vec<Point3>, colors: Vec<ColorRgb>) -> Result<Self> {
        let cloud = Self {
            points,
            colors: Some(colors),
            normals: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_colors(&self) -> bool {
        self.colors.is_some()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Checks attribute lengths, finiteness, color range and unit normals.
    pub fn validate(&self) -> Result<()> {
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParameter("non-finite point coordinate".into()));
        }
        if let Some(colors) = &self.colors {
            if colors.len() != self.points.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} colors for {} points",
                    colors.len(),
                    self.points.len()
                )));
            }
            if let Some(c) = colors.iter().find(|c| !c.is_valid()) {
                let bad = c.channels().into_iter().find(|v| !(0.0..=1.0).contains(v));
                return Err(Error::InvalidColor(bad.unwrap_or(f64::NAN)));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::InvalidParameter(format!(
                    "{} normals for {} points",
                    normals.len(),
                    self.points.len()
                )));
            }
            if normals.iter().any(|n| (n.norm() - 1.0).abs() > UNIT_NORMAL_TOL) {
                return Err(Error::InvalidParameter("normal is not unit length".into()));
            }
        }
        Ok(())
    }

    /// Gathers the given indices (with attributes) in the order given.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Appends `other`. An attribute survives only if both clouds carry it.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let colors = match (&self.colors, &other.colors) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        PointCloud {
            points,
            colors,
            normals,
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Point3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    pub fn scaled(&self, scale: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p * scale).collect(),
            colors: self.colors.clone(),
            normals: self.normals.clone(),
        }
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = match Unit::try_new(axis, 1e-15) {
            Some(axis) => *Rotation3::from_axis_angle(&axis, angle).matrix(),
            None => Matrix3::identity(),
        };
        Self {
            rotation,
            translation,
        }
    }

    /// Rotation vector (axis * angle) plus translation.
    pub fn from_rotation_vector(rv: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::new(rv).matrix(),
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry"));
        }
        let gram = self.rotation.transpose() * self.rotation - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform("rotation is not orthonormal"));
        }
        if (self.rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform("rotation determinant is not +1"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Re-projects the rotation onto SO(3); used after long composition chains.
    pub fn orthonormalized(&self) -> RigidTransform {
        let rotation = Rotation3::from_matrix(&self.rotation);
        RigidTransform {
            rotation: *rotation.matrix(),
            translation: self.translation,
        }
    }

    pub fn rotation_angle(&self) -> f64 {
        // atan2 keeps precision near zero where acos of the trace does not
        let r = &self.rotation;
        let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        libm::atan2(0.5 * v.norm(), 0.5 * (r.trace() - 1.0))
    }

    /// Rotation angle of `self⁻¹ ∘ other`.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        self.inverse().compose(other).rotation_angle()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Parses a 4×4 row-major matrix whose last row must be `0 0 0 1`.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self> {
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::InvalidTransform("last row must be 0 0 0 1"));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self::new(rotation, translation)
    }
}

/// Maps positions by `R p + t` and rotates normals. Colors and order are kept.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> Result<PointCloud> {
    t.validate()?;
    if t.is_identity() {
        return Ok(cloud.clone());
    }
    Ok(PointCloud {
        points: cloud.points.iter().map(|p| t.apply_point(p)).collect(),
        colors: cloud.colors.clone(),
        normals: cloud
            .normals
            .as_ref()
            .map(|n| n.iter().map(|v| t.apply_vector(v)).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_is_bitwise() {
        let cloud = PointCloud::new(alloc::vec![Point3::new(-0.0, 1.5, -2.25), Point3::new(3.0, 0.1, 7.0)]);
        let out = apply_transform(&cloud, &RigidTransform::identity()).unwrap();
        for (a, b) in cloud.points.iter().zip(&out.points) {
            for i in 0..3 {
                assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
    }

    #[test]
    fn translation_of_origin() {
        let cloud = PointCloud::new(alloc::vec![Point3::zeros()]);
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let out = apply_transform(&cloud, &t).unwrap();
        assert_eq!(out.points[0], Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let p = t.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut t = RigidTransform::identity();
        t.rotation[(0, 0)] = 1.1;
        let cloud = PointCloud::new(alloc::vec![Point3::zeros()]);
        assert!(matches!(apply_transform(&cloud, &t), Err(Error::InvalidTransform(_))));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn normals_rotate_colors_stay() {
        let cloud = PointCloud {
            points: alloc::vec![Point3::new(1.0, 0.0, 0.0)],
            colors: Some(alloc::vec![ColorRgb::new(0.2, 0.4, 0.6).unwrap()]),
            normals: Some(alloc::vec![Vector3::x()]),
        };
        let t = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::new(5.0, 0.0, 0.0));
        let out = apply_transform(&cloud, &t).unwrap();
        assert!((out.normals.unwrap()[0] - Vector3::y()).norm() < 1e-12);
        assert_eq!(out.colors, cloud.colors);
    }

    #[test]
    fn row_major_round_trip() {
        let t = RigidTransform::from_rotation_vector(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let back = RigidTransform::from_row_major(&t.to_row_major()).unwrap();
        assert!((back.rotation - t.rotation).amax() < 1e-15);
        assert_eq!(back.translation, t.translation);
    }

    #[test]
    fn color_quantization() {
        assert_eq!(ColorRgb::new(1.0, 0.5, 0.0).unwrap().to_u8(), [255, 128, 0]);
        assert!(ColorRgb::new(1.2, 0.0, 0.0).is_err());
        let c = ColorRgb::from_u8([10, 20, 30]);
        assert_eq!(c.to_u8(), [10, 20, 30]);
    }

    #[test]
    fn validate_catches_length_mismatch() {
        let cloud = PointCloud {
            points: alloc::vec![Point3::zeros(); 2],
            colors: Some(alloc::vec![ColorRgb::BLACK]),
            normals: None,
        };
        assert!(cloud.validate().is_err());
    }
}
