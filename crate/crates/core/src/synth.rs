//! Synthetic box worlds: ray-traced panoramas, LiDAR sweeps and a sparse
//! model fabricated from ground truth.
//!
//! The world is z-up. Surfaces are axis-aligned boxes (the ground and room
//! walls are boxes too). Shading depends only on the surface point, never on
//! the viewer, so every sensor sees the same color for the same point.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Matrix3;

use crate::cubemap::{erp_pixel_to_ray, rig_from_ray, CubeFace, ErpImage};
use crate::error::{Error, Result};
use crate::geometry::{ColorRgb, Point3, PointCloud, RigidTransform};
use crate::image::{round_channel, RgbImage};
use crate::rng::{self, Rng};
use crate::sfm::{project_with, CameraIntrinsics, PosedImage, SparseModel, SparsePoint};

const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub color: [f64; 3],
    pub alt_color: [f64; 3],
    /// Checker cell size; zero for a solid color.
    pub checker: f64,
}

impl Material {
    pub fn solid(color: [f64; 3]) -> Self {
        Self {
            color,
            alt_color: color,
            checker: 0.0,
        }
    }

    pub fn checker(color: [f64; 3], alt_color: [f64; 3], cell: f64) -> Self {
        Self {
            color,
            alt_color,
            checker: cell,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub min: Point3,
    pub max: Point3,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub boxes: Vec<SceneBox>,
    pub sky: [f64; 3],
    /// Brightness falls off with distance from this point.
    pub light: Point3,
    pub light_radius: f64,
    /// Unshaded scenes return the raw material color (useful for analytic tests).
    pub shaded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point3,
    pub normal: Point3,
    pub box_index: usize,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::InvalidSpec("scene has no surfaces".into()));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !(0..3).all(|a| b.min[a] < b.max[a]) {
                return Err(Error::InvalidSpec(alloc::format!("box {i} has non-positive extent")));
            }
        }
        Ok(())
    }

    /// Nearest surface along `origin + t·dir`, `t > 0`.
    pub fn trace(&self, origin: &Point3, dir: &Point3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some((t, axis, sign)) = ray_box(origin, dir, b) {
                if best.is_none_or(|h| t < h.t) {
                    let mut normal = Point3::zeros();
                    normal[axis] = sign;
                    best = Some(Hit {
                        t,
                        point: origin + t * dir,
                        normal,
                        box_index: i,
                    });
                }
            }
        }
        best
    }

    pub fn surface_color(&self, hit: &Hit) -> [f64; 3] {
        let m = &self.boxes[hit.box_index].material;
        let base = if m.checker > 0.0 {
            let k: i64 = (0..3)
                .filter(|&a| hit.normal[a] == 0.0)
                .map(|a| libm::floor(hit.point[a] / m.checker) as i64)
                .sum();
            if k.rem_euclid(2) == 0 {
                m.color
            } else {
                m.alt_color
            }
        } else {
            m.color
        };
        if !self.shaded {
            return base;
        }
        let facing = match (hit.normal.x as i32, hit.normal.y as i32, hit.normal.z as i32) {
            (0, 0, 1) => 1.0,
            (0, 0, _) => 0.55,
            (1, _, _) => 0.9,
            (-1, _, _) => 0.7,
            (_, 1, _) => 0.8,
            _ => 0.62,
        };
        let d2 = (hit.point - self.light).norm_squared();
        let falloff = 0.55 + 0.45 / (1.0 + d2 / (self.light_radius * self.light_radius));
        base.map(|c| (c * facing * falloff).clamp(0.0, 1.0))
    }

    pub fn color_along(&self, origin: &Point3, dir: &Point3) -> [f64; 3] {
        self.trace(origin, dir).map_or(self.sky, |h| self.surface_color(&h))
    }

    /// Equirectangular render from a rig pose (rig frame: x right, y down, z forward).
    pub fn render_erp(&self, world_from_rig: &RigidTransform, width: usize) -> Result<ErpImage> {
        let height = width / 2;
        let origin = world_from_rig.translation;
        let img = RgbImage::from_fn(width, height, |u, v| {
            let ray = erp_pixel_to_ray(u as f64, v as f64, width, height).expect("in range");
            let dir = world_from_rig.apply_vector(&rig_from_ray(&ray));
            self.color_along(&origin, &dir).map(|c| round_channel(c * 255.0))
        });
        ErpImage::new(img)
    }

    /// Area-weighted surface samples with their (unquantized) colors.
    pub fn sample_surfaces(&self, n: usize, r: &mut Rng) -> PointCloud {
        let mut faces: Vec<(usize, usize, f64, f64)> = Vec::new();
        let mut total = 0.0;
        for (i, b) in self.boxes.iter().enumerate() {
            let e = b.max - b.min;
            for axis in 0..3 {
                let area = e[(axis + 1) % 3] * e[(axis + 2) % 3];
                for side in 0..2 {
                    total += area;
                    faces.push((i, axis * 2 + side, area, total));
                }
            }
        }
        let mut pts = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng::uniform_f64(r) * total;
            let k = faces.partition_point(|f| f.3 <= x).min(faces.len() - 1);
            let (bi, code, _, _) = faces[k];
            let b = &self.boxes[bi];
            let (axis, side) = (code / 2, code % 2);
            let mut p = Point3::zeros();
            for a in 0..3 {
                p[a] = if a == axis {
                    if side == 0 {
                        b.min[a]
                    } else {
                        b.max[a]
                    }
                } else {
                    rng::uniform_range(r, b.min[a], b.max[a])
                };
            }
            let mut normal = Point3::zeros();
            normal[axis] = if side == 0 { -1.0 } else { 1.0 };
            let c = self.surface_color(&Hit {
                t: 0.0,
                point: p,
                normal,
                box_index: bi,
            });
            pts.push(p);
            colors.push(ColorRgb {
                r: c[0],
                g: c[1],
                b: c[2],
            });
        }
        PointCloud {
            points: pts,
            colors: Some(colors),
            normals: None,
        }
    }

    /// True when nothing blocks the segment from `eye` to `p`.
    pub fn visible(&self, eye: &Point3, p: &Point3, tol: f64) -> bool {
        let d = p - eye;
        let dist = d.norm();
        if dist == 0.0 {
            return false;
        }
        let dir = d / dist;
        self.trace(eye, &dir).is_some_and(|h| h.t >= dist - tol)
    }
}

/// Slab test. Returns entry distance, hit axis and outward normal sign; rays
/// starting inside a box do not hit it.
fn ray_box(o: &Point3, d: &Point3, b: &SceneBox) -> Option<(f64, usize, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 0.0;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (t0, t1, s) = if inv > 0.0 {
            ((b.min[a] - o[a]) * inv, (b.max[a] - o[a]) * inv, -1.0)
        } else {
            ((b.max[a] - o[a]) * inv, (b.min[a] - o[a]) * inv, 1.0)
        };
        if t0 > t_near {
            t_near = t0;
            axis = a;
            sign = s;
        }
        t_far = t_far.min(t1);
    }
    (t_near <= t_far && t_near > HIT_EPS).then_some((t_near, axis, sign))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarSpec {
    pub azimuth_steps: usize,
    pub elevation_rings: usize,
    pub min_elevation: f64,
    pub max_elevation: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            azimuth_steps: 360,
            elevation_rings: 48,
            min_elevation: -60f64.to_radians(),
            max_elevation: 45f64.to_radians(),
            max_range: 30.0,
            noise_sigma: 0.0,
        }
    }
}

/// One sweep in the sensor frame (x forward, y left, z up). Directions are
/// stratified on the azimuth/elevation grid with per-sweep jitter.
pub fn lidar_sweep(scene: &Scene, world_from_lidar: &RigidTransform, spec: &LidarSpec, r: &mut Rng) -> PointCloud {
    let origin = world_from_lidar.translation;
    let mut pts = Vec::with_capacity(spec.azimuth_steps * spec.elevation_rings);
    let d_az = core::f64::consts::TAU / spec.azimuth_steps as f64;
    let d_el = (spec.max_elevation - spec.min_elevation) / spec.elevation_rings as f64;
    for ring in 0..spec.elevation_rings {
        for step in 0..spec.azimuth_steps {
            let az = (step as f64 + rng::uniform_f64(r)) * d_az;
            let el = spec.min_elevation + (ring as f64 + rng::uniform_f64(r)) * d_el;
            let (se, ce) = libm::sincos(el);
            let (sa, ca) = libm::sincos(az);
            let local = Point3::new(ce * ca, ce * sa, se);
            let noise = if spec.noise_sigma > 0.0 {
                spec.noise_sigma * rng::standard_normal(r)
            } else {
                0.0
            };
            let dir = world_from_lidar.apply_vector(&local);
            if let Some(h) = scene.trace(&origin, &dir) {
                if h.t <= spec.max_range {
                    pts.push((h.t + noise) * local);
                }
            }
        }
    }
    PointCloud::new(pts)
}

/// Rig frame from the LiDAR frame: rig `(x, y, z) = (-y_l, -z_l, x_l)` plus a lever arm.
pub fn default_lidar_to_camera() -> RigidTransform {
    RigidTransform {
        rotation: Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
        translation: Point3::new(0.0, 0.12, -0.03),
    }
}

fn rot_z(yaw: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(yaw);
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub start: Point3,
    pub velocity: Point3,
    pub yaw0: f64,
    pub yaw_rate: f64,
    /// Lateral sway amplitude and angular frequency, keeping the path off a straight line.
    pub sway: f64,
    pub sway_freq: f64,
}

impl Motion {
    pub fn world_from_lidar(&self, t: f64) -> RigidTransform {
        let yaw = self.yaw0 + self.yaw_rate * t;
        let dir = Point3::new(-self.velocity.y, self.velocity.x, 0.0);
        let lateral = if dir.norm() > 0.0 { dir.normalize() } else { dir };
        let pos = self.start + t * self.velocity + self.sway * libm::sin(self.sway_freq * t) * lateral;
        RigidTransform {
            rotation: rot_z(yaw),
            translation: pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub scene: Scene,
    pub motion: Motion,
    pub frames: usize,
    pub frame_interval: f64,
    /// LiDAR timestamps are RGB timestamps plus this offset.
    pub lidar_offset: f64,
    pub erp_width: usize,
    pub face_size: usize,
    pub lidar: LidarSpec,
    pub lidar_to_camera: RigidTransform,
    pub sfm_points: usize,
    pub sfm_noise: f64,
    /// World-to-SfM similarity: `x_sfm = scale · (R x + t)`.
    pub sfm_scale: f64,
    pub sfm_frame: RigidTransform,
    pub seed: u64,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.frames == 0 || !(self.frame_interval > 0.0) {
            return Err(Error::InvalidSpec("sequence needs frames and a positive interval".into()));
        }
        if self.erp_width < 16 || !self.erp_width.is_multiple_of(2) || self.face_size < crate::cubemap::MIN_FACE_SIZE {
            return Err(Error::InvalidSpec("image sizes too small".into()));
        }
        if !(self.sfm_scale > 0.0) || self.lidar.azimuth_steps == 0 || self.lidar.elevation_rings == 0 {
            return Err(Error::InvalidSpec("degenerate sensor spec".into()));
        }
        self.lidar_to_camera.validate()?;
        self.sfm_frame.validate()
    }

    pub fn world_from_lidar(&self, t: f64) -> RigidTransform {
        self.motion.world_from_lidar(t)
    }

    pub fn world_from_rig(&self, t: f64) -> RigidTransform {
        self.world_from_lidar(t).compose(&self.lidar_to_camera.inverse())
    }

    pub fn rgb_timestamps(&self) -> Vec<f64> {
        (0..self.frames).map(|i| i as f64 * self.frame_interval).collect()
    }

    pub fn lidar_timestamps(&self) -> Vec<f64> {
        self.rgb_timestamps().iter().map(|t| t + self.lidar_offset).collect()
    }

    pub fn to_sfm(&self, x: &Point3) -> Point3 {
        self.sfm_scale * self.sfm_frame.apply_point(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<ErpImage>,
    pub rgb_timestamps: Vec<f64>,
    pub lidar_timestamps: Vec<f64>,
    /// Sensor-frame sweeps.
    pub scans: Vec<PointCloud>,
    /// Ground-truth `world_from_lidar` at each LiDAR timestamp.
    pub lidar_poses: Vec<RigidTransform>,
    /// Ground-truth `world_from_rig` at each RGB timestamp.
    pub rig_poses: Vec<RigidTransform>,
    pub sparse: SparseModel,
}

pub fn frame_name(frame: usize) -> String {
    alloc::format!("frame_{frame:04}")
}

pub fn face_image_name(frame: usize, face: CubeFace) -> String {
    alloc::format!("{}_{}.png", frame_name(frame), face.name())
}

/// The sky face sees no structure, so an SfM engine would not register it.
pub const UNREGISTERED_FACE: CubeFace = CubeFace::Up;

pub fn generate_sequence(spec: &SequenceSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let rgb_ts = spec.rgb_timestamps();
    let lidar_ts = spec.lidar_timestamps();
    let rig_poses: Vec<RigidTransform> = rgb_ts.iter().map(|&t| spec.world_from_rig(t)).collect();
    let lidar_poses: Vec<RigidTransform> = lidar_ts.iter().map(|&t| spec.world_from_lidar(t)).collect();
    let frames = rig_poses
        .iter()
        .map(|p| spec.scene.render_erp(p, spec.erp_width))
        .collect::<Result<Vec<_>>>()?;
    let scans = lidar_poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = rng::substream(spec.seed, 1000 + i as u64);
            lidar_sweep(&spec.scene, p, &spec.lidar, &mut r)
        })
        .collect();
    let sparse = fabricate_sparse_model(spec, &rig_poses)?;
    Ok(SyntheticSequence {
        frames,
        rgb_timestamps: rgb_ts,
        lidar_timestamps: lidar_ts,
        scans,
        lidar_poses,
        rig_poses,
        sparse,
    })
}

/// Sparse model in a similarity-transformed frame: one pinhole camera shared
/// by all faces, every non-sky face of every frame registered, and surface
/// samples observed by at least two registered faces.
pub fn fabricate_sparse_model(spec: &SequenceSpec, rig_poses: &[RigidTransform]) -> Result<SparseModel> {
    let cam = CameraIntrinsics::cube_face(1, spec.face_size);
    let mut model = SparseModel::default();
    model.cameras.insert(1, cam);
    let sfm_from_world = spec.sfm_frame;
    let r_inv = sfm_from_world.rotation.transpose();
    let mut views: Vec<(RigidTransform, Point3)> = Vec::new();
    let mut next_id = 1u32;
    for (f, world_from_rig) in rig_poses.iter().enumerate() {
        let rig_from_world = world_from_rig.inverse();
        for face in CubeFace::ALL {
            let rf = face.camera_from_rig();
            let cam_from_world = RigidTransform {
                rotation: rf * rig_from_world.rotation,
                translation: rf * rig_from_world.translation,
            };
            views.push((cam_from_world, world_from_rig.translation));
            if face == UNREGISTERED_FACE {
                continue;
            }
            // x_c·s = R_cw Rᵀ x_sfm + s (t_cw − R_cw Rᵀ t)
            let rot = cam_from_world.rotation * r_inv;
            let trans = spec.sfm_scale * (cam_from_world.translation - rot * sfm_from_world.translation);
            let pose = RigidTransform {
                rotation: rot,
                translation: trans,
            }
            .orthonormalized();
            let name = face_image_name(f, face);
            model.images.insert(next_id, PosedImage::from_camera_from_world(next_id, 1, name, &pose));
            next_id += 1;
        }
    }
    let mut r = rng::substream(spec.seed, 7);
    let samples = spec.scene.sample_surfaces(spec.sfm_points, &mut r);
    let colors = samples.colors.as_ref().expect("sampled with colors");
    let mut point_id = 1u64;
    for (p, c) in samples.points.iter().zip(colors) {
        let track = views
            .iter()
            .enumerate()
            .filter(|(k, _)| CubeFace::ALL[k % 6] != UNREGISTERED_FACE)
            .filter(|(_, (cfw, eye))| {
                project_with(p, &cam, cfw, 1e-3).is_some() && spec.scene.visible(eye, p, 1e-6 + 1e-9 * (p - eye).norm())
            })
            .count();
        if track < 2 {
            continue;
        }
        let noise = Point3::new(rng::standard_normal(&mut r), rng::standard_normal(&mut r), rng::standard_normal(&mut r)) * spec.sfm_noise;
        let rgb = ColorRgb::from_u8(c.to_u8());
        model.points.push(SparsePoint {
            point_id,
            position: spec.to_sfm(&(p + noise)),
            color: rgb,
            track_length: track,
        });
        point_id += 1;
    }
    Ok(model)
}

/// Room with a checkered floor, four walls and assorted boxes.
pub fn default_scene() -> Scene {
    let floor = Material::checker([0.82, 0.78, 0.70], [0.35, 0.32, 0.30], 0.5);
    let mut boxes = alloc::vec![
        SceneBox { min: Point3::new(-4.0, -3.0, -0.1), max: Point3::new(4.0, 3.0, 0.0), material: floor },
        SceneBox { min: Point3::new(-4.2, -3.0, 0.0), max: Point3::new(-4.0, 3.0, 2.6), material: Material::checker([0.75, 0.25, 0.2], [0.9, 0.6, 0.3], 0.4) },
        SceneBox { min: Point3::new(4.0, -3.0, 0.0), max: Point3::new(4.2, 3.0, 2.6), material: Material::checker([0.2, 0.35, 0.75], [0.55, 0.75, 0.95], 0.4) },
        SceneBox { min: Point3::new(-4.0, -3.2, 0.0), max: Point3::new(4.0, -3.0, 2.6), material: Material::checker([0.25, 0.6, 0.3], [0.8, 0.9, 0.5], 0.4) },
        SceneBox { min: Point3::new(-4.0, 3.0, 0.0), max: Point3::new(4.0, 3.2, 2.6), material: Material::checker([0.6, 0.3, 0.65], [0.95, 0.85, 0.9], 0.4) },
    ];
    let props = [
        ([-2.6, -1.8, 0.0], [-1.8, -1.0, 0.9], [0.95, 0.85, 0.2], [0.6, 0.2, 0.1]),
        ([1.2, -2.4, 0.0], [2.6, -1.6, 0.7], [0.2, 0.8, 0.85], [0.1, 0.3, 0.5]),
        ([2.4, 1.1, 0.0], [3.2, 2.2, 1.6], [0.85, 0.4, 0.6], [0.95, 0.9, 0.95]),
        ([-1.2, 1.6, 0.0], [-0.4, 2.3, 0.5], [0.4, 0.9, 0.4], [0.1, 0.4, 0.2]),
        ([-3.4, 0.6, 0.0], [-2.8, 2.6, 1.2], [0.9, 0.55, 0.25], [0.3, 0.2, 0.15]),
        ([0.3, -0.7, 0.0], [0.8, -0.3, 1.1], [0.55, 0.55, 0.95], [0.95, 0.95, 0.5]),
        ([-0.9, -2.9, 0.8], [0.6, -2.7, 1.6], [0.95, 0.3, 0.3], [0.95, 0.95, 0.95]),
    ];
    for (min, max, a, b) in props {
        boxes.push(SceneBox {
            min: Point3::from(min),
            max: Point3::from(max),
            material: Material::checker(a, b, 0.2),
        });
    }
    Scene {
        boxes,
        sky: [0.55, 0.7, 0.9],
        light: Point3::new(0.5, 0.5, 2.4),
        light_radius: 3.0,
        shaded: true,
    }
}

/// A slow walk across the default room with a steady pan.
pub fn default_sequence_spec(seed: u64) -> SequenceSpec {
    SequenceSpec {
        scene: default_scene(),
        motion: Motion {
            start: Point3::new(-2.2, -0.6, 1.35),
            velocity: Point3::new(0.45, 0.12, 0.0),
            yaw0: 0.3,
            yaw_rate: 0.35,
            sway: 0.15,
            sway_freq: 0.8,
        },
        frames: 40,
        frame_interval: 0.2,
        lidar_offset: 0.004,
        erp_width: 512,
        face_size: 128,
        lidar: LidarSpec::default(),
        lidar_to_camera: default_lidar_to_camera(),
        sfm_points: 20000,
        sfm_noise: 0.002,
        sfm_scale: 0.37,
        sfm_frame: RigidTransform::from_rotation_vector(Point3::new(0.2, -0.1, 0.5), Point3::new(1.5, -0.7, 0.3)),
        seed,
    }
}
