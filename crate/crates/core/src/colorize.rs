//! Map colorization from posed cubemap views with coarse z-buffer visibility.
//!
//! Each (view, face) pair gets a depth buffer on a grid `grid_divisor` times
//! coarser than the face image, holding the nearest point depth per cell. A
//! point is accepted by a face when it projects inside the image and its depth
//! is within `depth_tolerance` of the cell minimum. Among accepting faces the
//! one closest to the point supplies the color.

use alloc::vec::Vec;

use crate::cubemap::{CubeFace, CubemapSet};
use crate::error::{Error, Result};
use crate::geometry::{ColorRgb, Point3, PointCloud, RigidTransform};
use crate::sfm::{project_with, CameraIntrinsics, DEFAULT_Z_MIN};

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Maps LiDAR-frame points into the cubemap rig frame.
    pub lidar_to_camera: RigidTransform,
    /// Indexed by [`CubeFace::index`].
    pub faces: [CameraIntrinsics; 6],
}

impl Calibration {
    pub fn for_face_size(lidar_to_camera: RigidTransform, face_size: usize) -> Self {
        Self {
            lidar_to_camera,
            faces: core::array::from_fn(|i| CameraIntrinsics::cube_face(i as u32 + 1, face_size)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lidar_to_camera.validate()?;
        for f in &self.faces {
            f.validate()?;
        }
        Ok(())
    }

    /// Rig pose implied by a LiDAR pose.
    pub fn world_from_rig(&self, world_from_lidar: &RigidTransform) -> RigidTransform {
        world_from_lidar.compose(&self.lidar_to_camera.inverse())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub world_from_rig: RigidTransform,
    pub faces: CubemapSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorizeParams {
    pub grid_divisor: usize,
    pub depth_tolerance: f64,
}

impl Default for ColorizeParams {
    fn default() -> Self {
        Self {
            grid_divisor: 4,
            depth_tolerance: 2.0 * crate::odometry::DEFAULT_MAP_VOXEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZBuffer {
    pub cols: usize,
    pub rows: usize,
    pub cell_width: f64,
    pub cell_height: f64,
    pub depth: Vec<f64>,
}

impl ZBuffer {
    fn new(cam: &CameraIntrinsics, divisor: usize) -> Self {
        let cols = cam.width.div_ceil(divisor).max(1);
        let rows = cam.height.div_ceil(divisor).max(1);
        Self {
            cols,
            rows,
            cell_width: cam.width as f64 / cols as f64,
            cell_height: cam.height as f64 / rows as f64,
            depth: alloc::vec![f64::INFINITY; cols * rows],
        }
    }

    pub fn cell(&self, u: f64, v: f64) -> usize {
        let c = ((u / self.cell_width) as usize).min(self.cols - 1);
        let r = ((v / self.cell_height) as usize).min(self.rows - 1);
        r * self.cols + c
    }

    pub fn depth_at(&self, u: f64, v: f64) -> f64 {
        self.depth[self.cell(u, v)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub view: usize,
    pub face: CubeFace,
    pub u: f64,
    pub v: f64,
    /// Depth along the face camera axis.
    pub depth: f64,
    /// Distance from the rig center.
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Colorization {
    pub colors: Vec<Option<ColorRgb>>,
    pub assignments: Vec<Option<Assignment>>,
    /// Indexed by `view * 6 + face`.
    pub zbuffers: Vec<ZBuffer>,
}

impl Colorization {
    pub fn colored_count(&self) -> usize {
        self.colors.iter().filter(|c| c.is_some()).count()
    }

    pub fn colored_fraction(&self) -> f64 {
        if self.colors.is_empty() {
            0.0
        } else {
            self.colored_count() as f64 / self.colors.len() as f64
        }
    }

    pub fn zbuffer(&self, view: usize, face: CubeFace) -> &ZBuffer {
        &self.zbuffers[view * 6 + face.index()]
    }

    /// The colored subset of `map`, in map order.
    pub fn colored_cloud(&self, map: &PointCloud) -> PointCloud {
        let keep: Vec<usize> = (0..map.len()).filter(|&i| self.colors[i].is_some()).collect();
        let mut out = PointCloud::new(keep.iter().map(|&i| map.points[i]).collect());
        out.colors = Some(keep.iter().map(|&i| self.colors[i].expect("kept")).collect());
        out
    }
}

struct Projection {
    u: f64,
    v: f64,
    /// Camera-axis depth, used for the z-buffer.
    z: f64,
    /// Distance from the rig center, used to rank views.
    range: f64,
}

fn face_camera_from_world(rig_from_world: &RigidTransform, face: CubeFace) -> RigidTransform {
    let r = face.camera_from_rig();
    RigidTransform {
        rotation: r * rig_from_world.rotation,
        translation: r * rig_from_world.translation,
    }
}

fn project(p: &Point3, cam: &CameraIntrinsics, camera_from_world: &RigidTransform, center: &Point3) -> Option<Projection> {
    project_with(p, cam, camera_from_world, DEFAULT_Z_MIN).map(|(u, v, z)| Projection {
        u,
        v,
        z,
        range: (p - center).norm(),
    })
}

pub fn colorize(map: &PointCloud, views: &[View], calib: &Calibration, params: &ColorizeParams) -> Result<Colorization> {
    if views.is_empty() {
        return Err(Error::MissingInput("colorization needs at least one posed view".into()));
    }
    if params.grid_divisor == 0 || !(params.depth_tolerance >= 0.0) {
        return Err(Error::InvalidParameter("colorize grid_divisor >= 1 and depth_tolerance >= 0".into()));
    }
    calib.validate()?;
    for view in views {
        for face in CubeFace::ALL {
            let cam = &calib.faces[face.index()];
            let img = view.faces.face(face);
            if img.width() != cam.width || img.height() != cam.height {
                return Err(Error::InvalidImage(alloc::format!(
                    "{} face is {}x{} but calibrated for {}x{}",
                    face.name(),
                    img.width(),
                    img.height(),
                    cam.width,
                    cam.height
                )));
            }
        }
    }

    let cams: Vec<(RigidTransform, Point3)> = views
        .iter()
        .flat_map(|v| {
            let rig_from_world = v.world_from_rig.inverse();
            let center = v.world_from_rig.translation;
            CubeFace::ALL.map(move |f| (face_camera_from_world(&rig_from_world, f), center))
        })
        .collect();

    let mut zbuffers: Vec<ZBuffer> = (0..cams.len())
        .map(|k| ZBuffer::new(&calib.faces[k % 6], params.grid_divisor))
        .collect();
    for p in &map.points {
        for (k, (cfw, center)) in cams.iter().enumerate() {
            if let Some(pr) = project(p, &calib.faces[k % 6], cfw, center) {
                let zb = &mut zbuffers[k];
                let cell = zb.cell(pr.u, pr.v);
                if pr.z < zb.depth[cell] {
                    zb.depth[cell] = pr.z;
                }
            }
        }
    }

    let mut colors = Vec::with_capacity(map.len());
    let mut assignments = Vec::with_capacity(map.len());
    for p in &map.points {
        let mut best: Option<Assignment> = None;
        for (k, (cfw, center)) in cams.iter().enumerate() {
            let Some(pr) = project(p, &calib.faces[k % 6], cfw, center) else { continue };
            if pr.z > zbuffers[k].depth_at(pr.u, pr.v) + params.depth_tolerance {
                continue;
            }
            if best.is_none_or(|b| pr.range < b.range) {
                best = Some(Assignment {
                    view: k / 6,
                    face: CubeFace::ALL[k % 6],
                    u: pr.u,
                    v: pr.v,
                    depth: pr.z,
                    range: pr.range,
                });
            }
        }
        let color = best.map(|a| {
            let img = views[a.view].faces.face(a.face);
            let c = img.sample_bilinear(a.u - 0.5, a.v - 0.5, false);
            ColorRgb {
                r: c[0] / 255.0,
                g: c[1] / 255.0,
                b: c[2] / 255.0,
            }
        });
        colors.push(color);
        assignments.push(best);
    }
    Ok(Colorization {
        colors,
        assignments,
        zbuffers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RgbImage;

    const S: usize = 32;

    fn solid_view(world_from_rig: RigidTransform, rgb: [u8; 3]) -> View {
        View {
            world_from_rig,
            faces: CubemapSet::new(S, (0..6).map(|_| RgbImage::filled(S, S, rgb)).collect()).unwrap(),
        }
    }

    fn calib() -> Calibration {
        Calibration::for_face_size(RigidTransform::identity(), S)
    }

    #[test]
    fn no_views() {
        let map = PointCloud::new(alloc::vec![Point3::new(0.0, 0.0, 1.0)]);
        assert!(matches!(
            colorize(&map, &[], &calib(), &ColorizeParams::default()),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn wall_takes_face_color() {
        // wall at z = 2 in front of the rig
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Point3::new(i as f64 * 0.1 - 1.0, j as f64 * 0.1 - 1.0, 2.0));
            }
        }
        let map = PointCloud::new(pts);
        let view = solid_view(RigidTransform::identity(), [255, 0, 0]);
        let c = colorize(&map, &[view], &calib(), &ColorizeParams::default()).unwrap();
        assert_eq!(c.colored_count(), map.len());
        for col in c.colors.iter().flatten() {
            assert!((col.r - 1.0).abs() <= 2.0 / 255.0 && col.g <= 2.0 / 255.0 && col.b <= 2.0 / 255.0);
        }
    }

    #[test]
    fn occluded_point_uses_other_view() {
        // A at the origin, B at (4, 0, 4); target at (0, 0, 4); occluder between A and target
        let target = Point3::new(0.0, 0.0, 4.0);
        let mut pts = alloc::vec![target];
        for i in 0..5 {
            for j in 0..5 {
                pts.push(Point3::new(i as f64 * 0.05 - 0.1, j as f64 * 0.05 - 0.1, 2.0));
            }
        }
        let map = PointCloud::new(pts);
        let a = solid_view(RigidTransform::identity(), [255, 0, 0]);
        let b = solid_view(RigidTransform::from_translation(Point3::new(4.5, 0.0, 4.0)), [0, 0, 255]);
        let c = colorize(&map, &[a, b], &calib(), &ColorizeParams::default()).unwrap();
        let asg = c.assignments[0].unwrap();
        assert_eq!(asg.view, 1);
        assert_eq!(c.colors[0].unwrap().b, 1.0);
        // the occluder itself is nearer to A
        assert_eq!(c.assignments[1].unwrap().view, 0);
    }

    #[test]
    fn zbuffer_bound_holds() {
        let mut pts = Vec::new();
        for i in 0..200 {
            let t = i as f64 * 0.031;
            pts.push(Point3::new(libm::cos(t) * (1.0 + 0.3 * (i % 3) as f64), (i % 7) as f64 * 0.1 - 0.3, libm::sin(t) * 2.0));
        }
        let map = PointCloud::new(pts);
        let params = ColorizeParams::default();
        let views = [
            solid_view(RigidTransform::identity(), [10, 20, 30]),
            solid_view(RigidTransform::from_translation(Point3::new(0.3, 0.0, 0.2)), [40, 50, 60]),
        ];
        let c = colorize(&map, &views, &calib(), &params).unwrap();
        for a in c.assignments.iter().flatten() {
            let zb = c.zbuffer(a.view, a.face);
            assert!(a.depth <= zb.depth_at(a.u, a.v) + params.depth_tolerance);
        }
    }

    #[test]
    fn behind_every_camera_is_uncolored() {
        // a point at the rig center projects nowhere
        let map = PointCloud::new(alloc::vec![Point3::zeros()]);
        let c = colorize(&map, &[solid_view(RigidTransform::identity(), [1, 2, 3])], &calib(), &ColorizeParams::default()).unwrap();
        assert_eq!(c.colors, alloc::vec![None]);
    }
}
