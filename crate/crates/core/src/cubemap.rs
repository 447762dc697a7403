//! Equirectangular panorama ↔ cubemap projection.
//!
//! Panorama rays follow the longitude/latitude parameterization
//! `d = (cos φ sin θ, sin φ, cos φ cos θ)`: `+z` is forward, `+x` is to the
//! viewer's right and `+y` is up. Cube faces are labeled by the axis they
//! look along (front `+z`, right `+x`, up `+y`, and their opposites).
//!
//! Geometry downstream uses a right-handed *rig frame* (x right, y down,
//! z forward, the usual pinhole camera convention). [`rig_from_ray`] converts
//! between the two, and [`CubeFace::camera_from_rig`] gives the proper
//! rotation of each face camera so that a face is exactly a pinhole image with
//! `fx = fy = cx = cy = face_size / 2`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::image::{round_channel, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CubeFace {
    Front,
    Right,
    Up,
    Back,
    Left,
    Down,
}

impl CubeFace {
    /// Tie-break priority order, also the canonical storage order.
    pub const ALL: [CubeFace; 6] = [
        CubeFace::Front,
        CubeFace::Right,
        CubeFace::Up,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Down,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CubeFace::Front => "front",
            CubeFace::Right => "right",
            CubeFace::Up => "up",
            CubeFace::Back => "back",
            CubeFace::Left => "left",
            CubeFace::Down => "down",
        }
    }

    pub fn from_name(name: &str) -> Option<CubeFace> {
        CubeFace::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Rotation taking rig-frame directions into this face camera's frame.
    pub fn camera_from_rig(self) -> Matrix3<f64> {
        match self {
            CubeFace::Front => Matrix3::identity(),
            CubeFace::Right => Matrix3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0),
            CubeFace::Back => Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0),
            CubeFace::Left => Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0),
            CubeFace::Up => Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0),
            CubeFace::Down => Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
        }
    }
}

/// Panorama ray → rig-frame direction (flips the vertical axis).
pub fn rig_from_ray(d: &Point3) -> Point3 {
    Point3::new(d.x, -d.y, d.z)
}

/// Rig-frame direction → panorama ray.
pub fn ray_from_rig(r: &Point3) -> Point3 {
    Point3::new(r.x, -r.y, r.z)
}

/// Full 360°×180° panorama; width must be exactly twice the height.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErpImage(RgbImage);

impl ErpImage {
    pub fn new(image: RgbImage) -> Result<Self> {
        let (w, h) = (image.width(), image.height());
        if w == 0 || h == 0 || w != 2 * h {
            return Err(Error::InvalidImage(format!(
                "equirectangular image must be 2:1, got {w}x{h}"
            )));
        }
        Ok(Self(image))
    }

    pub fn image(&self) -> &RgbImage {
        &self.0
    }

    pub fn into_image(self) -> RgbImage {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
}

/// Pixel (with pixel-center offset) → unit ray. `u`, `v` may be fractional.
pub fn erp_pixel_to_ray(u: f64, v: f64, width: usize, height: usize) -> Result<Point3> {
    if !(u >= 0.0 && u < width as f64 && v >= 0.0 && v < height as f64) {
        return Err(Error::OutOfBounds {
            u,
            v,
            width,
            height,
        });
    }
    let theta = (u + 0.5) / width as f64 * TAU - PI;
    let phi = FRAC_PI_2 - (v + 0.5) / height as f64 * PI;
    Ok(angles_to_ray(theta, phi))
}

pub fn angles_to_ray(theta: f64, phi: f64) -> Point3 {
    let (st, ct) = libm::sincos(theta);
    let (sp, cp) = libm::sincos(phi);
    Point3::new(cp * st, sp, cp * ct)
}

/// Inverse of [`erp_pixel_to_ray`]: continuous pixel coordinates for a ray.
pub fn ray_to_erp_pixel(d: &Point3, width: usize, height: usize) -> (f64, f64) {
    let n = d.norm();
    let theta = libm::atan2(d.x, d.z);
    let phi = libm::asin((d.y / n).clamp(-1.0, 1.0));
    let u = (theta + PI) / TAU * width as f64 - 0.5;
    let v = (FRAC_PI_2 - phi) / PI * height as f64 - 0.5;
    (u, v)
}

/// Face hit by a ray and the normalized intersection coordinates in `[0,1]²`
/// (u to the right, v down as seen from inside the cube).
pub fn ray_to_face(d: &Point3) -> Result<(CubeFace, [f64; 2])> {
    if !d.iter().all(|c| c.is_finite()) || d.norm_squared() == 0.0 {
        return Err(Error::InvalidRay);
    }
    let signed = [d.z, d.x, d.y, -d.z, -d.x, -d.y];
    let mut face = CubeFace::Front;
    let mut best = signed[0];
    for (f, &s) in CubeFace::ALL.iter().zip(&signed).skip(1) {
        if s > best {
            best = s;
            face = *f;
        }
    }
    let cam = face.camera_from_rig() * rig_from_ray(d);
    let a = cam.x / cam.z;
    let b = cam.y / cam.z;
    Ok((face, [(a + 1.0) * 0.5, (b + 1.0) * 0.5]))
}

/// Unnormalized ray through normalized face coordinates.
pub fn face_uv_to_ray(face: CubeFace, uv: [f64; 2]) -> Point3 {
    let cam = Point3::new(2.0 * uv[0] - 1.0, 2.0 * uv[1] - 1.0, 1.0);
    ray_from_rig(&(face.camera_from_rig().transpose() * cam))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CubemapSet {
    pub face_size: usize,
    /// Indexed by [`CubeFace::index`].
    pub faces: Vec<RgbImage>,
}

impl CubemapSet {
    pub fn new(face_size: usize, faces: Vec<RgbImage>) -> Result<Self> {
        if faces.len() != 6
            || faces
                .iter()
                .any(|f| f.width() != face_size || f.height() != face_size)
        {
            return Err(Error::InvalidImage(format!(
                "cubemap needs six {face_size}x{face_size} faces"
            )));
        }
        Ok(Self { face_size, faces })
    }

    pub fn face(&self, face: CubeFace) -> &RgbImage {
        &self.faces[face.index()]
    }
}

pub const MIN_FACE_SIZE: usize = 8;

pub fn project_erp_to_cubemap(erp: &ErpImage, face_size: usize) -> Result<CubemapSet> {
    if face_size < MIN_FACE_SIZE {
        return Err(Error::InvalidParameter(format!(
            "face_size {face_size} below minimum {MIN_FACE_SIZE}"
        )));
    }
    let (w, h) = (erp.width(), erp.height());
    let s = face_size as f64;
    let faces = CubeFace::ALL
        .iter()
        .map(|&face| {
            RgbImage::from_fn(face_size, face_size, |i, j| {
                let uv = [(i as f64 + 0.5) / s, (j as f64 + 0.5) / s];
                let ray = face_uv_to_ray(face, uv);
                let (u, v) = ray_to_erp_pixel(&ray, w, h);
                let c = erp.image().sample_bilinear(u, v, true);
                [round_channel(c[0]), round_channel(c[1]), round_channel(c[2])]
            })
        })
        .collect();
    CubemapSet::new(face_size, faces)
}

/// Reassembles a panorama from cube faces (bilinear within each face,
/// clamped at face edges).
pub fn cubemap_to_erp(cubemap: &CubemapSet, width: usize) -> Result<ErpImage> {
    if width < 2 || !width.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("panorama width {width} must be even")));
    }
    let height = width / 2;
    let s = cubemap.face_size as f64;
    let img = RgbImage::from_fn(width, height, |u, v| {
        let ray = erp_pixel_to_ray(u as f64, v as f64, width, height).expect("in range");
        let (face, uv) = ray_to_face(&ray).expect("unit ray");
        let c = cubemap
            .face(face)
            .sample_bilinear(uv[0] * s - 0.5, uv[1] * s - 0.5, false);
        [round_channel(c[0]), round_channel(c[1]), round_channel(c[2])]
    });
    ErpImage::new(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Point3, b: &Point3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn center_pixel_looks_forward() {
        let (w, h) = (64, 32);
        let d = erp_pixel_to_ray(w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5, w, h).unwrap();
        assert!(close(&d, &Point3::new(0.0, 0.0, 1.0), 1e-12));
    }

    #[test]
    fn quarter_turn_looks_right() {
        assert!(close(&angles_to_ray(FRAC_PI_2, 0.0), &Point3::x(), 1e-12));
        // u such that theta = pi/2: (u + 0.5)/W * 2pi - pi = pi/2
        let (w, h) = (64, 32);
        let u = 0.75 * w as f64 - 0.5;
        let d = erp_pixel_to_ray(u, h as f64 / 2.0 - 0.5, w, h).unwrap();
        assert!(close(&d, &Point3::x(), 1e-12));
    }

    #[test]
    fn top_row_points_up() {
        let (w, h) = (512, 256);
        let d = erp_pixel_to_ray(w as f64 / 2.0, 0.0, w, h).unwrap();
        assert!(d.y > 0.99);
    }

    #[test]
    fn out_of_range_pixel() {
        assert!(matches!(
            erp_pixel_to_ray(64.0, 0.0, 64, 32),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(erp_pixel_to_ray(-0.1, 0.0, 64, 32).is_err());
    }

    #[test]
    fn face_centers() {
        assert_eq!(ray_to_face(&Point3::z()).unwrap(), (CubeFace::Front, [0.5, 0.5]));
        assert_eq!(ray_to_face(&Point3::x()).unwrap(), (CubeFace::Right, [0.5, 0.5]));
        assert_eq!(ray_to_face(&Point3::y()).unwrap().0, CubeFace::Up);
        assert_eq!(ray_to_face(&-Point3::z()).unwrap().0, CubeFace::Back);
        assert_eq!(ray_to_face(&-Point3::x()).unwrap().0, CubeFace::Left);
        assert_eq!(ray_to_face(&-Point3::y()).unwrap().0, CubeFace::Down);
        assert_eq!(ray_to_face(&Point3::zeros()), Err(Error::InvalidRay));
    }

    #[test]
    fn diagonal_tie_break_lands_on_front_corner() {
        // |x| = |y| = |z|: front wins, and the corner is right (+x) and up (+y),
        // i.e. u = 1 and v = 0 with v growing downward.
        let d = Point3::new(1.0, 1.0, 1.0).normalize();
        let (face, uv) = ray_to_face(&d).unwrap();
        assert_eq!(face, CubeFace::Front);
        assert!((uv[0] - 1.0).abs() < 1e-12 && uv[1].abs() < 1e-12);
        // -x vs -z tie: back outranks left
        let (face, _) = ray_to_face(&Point3::new(-1.0, 0.0, -1.0)).unwrap();
        assert_eq!(face, CubeFace::Back);
        // +x vs -z tie: right outranks back
        let (face, _) = ray_to_face(&Point3::new(1.0, 0.0, -1.0)).unwrap();
        assert_eq!(face, CubeFace::Right);
    }

    #[test]
    fn face_rotations_are_proper() {
        for f in CubeFace::ALL {
            let r = f.camera_from_rig();
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-15);
            assert!((r.determinant() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn face_uv_inverts_ray_to_face() {
        for f in CubeFace::ALL {
            for &(u, v) in &[(0.5, 0.5), (0.1, 0.9), (0.93, 0.2), (0.3, 0.3)] {
                let ray = face_uv_to_ray(f, [u, v]);
                let (face, uv) = ray_to_face(&ray).unwrap();
                assert_eq!(face, f);
                assert!((uv[0] - u).abs() < 1e-12 && (uv[1] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn erp_pixel_inverse() {
        let (w, h) = (200, 100);
        for &(u, v) in &[(0.0, 0.0), (13.25, 40.5), (199.0, 99.0), (100.0, 50.0)] {
            let d = erp_pixel_to_ray(u, v, w, h).unwrap();
            let (uu, vv) = ray_to_erp_pixel(&d, w, h);
            assert!((uu - u).abs() < 1e-9 && (vv - v).abs() < 1e-9, "{u},{v} -> {uu},{vv}");
        }
    }

    #[test]
    fn constant_panorama_gives_constant_faces() {
        let erp = ErpImage::new(RgbImage::filled(64, 32, [17, 99, 230])).unwrap();
        let cube = project_erp_to_cubemap(&erp, 16).unwrap();
        for face in &cube.faces {
            assert!(face.as_raw().chunks(3).all(|p| p == [17, 99, 230]));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ErpImage::new(RgbImage::new(30, 20)).is_err());
        let erp = ErpImage::new(RgbImage::new(32, 16)).unwrap();
        assert!(project_erp_to_cubemap(&erp, 4).is_err());
    }
}
