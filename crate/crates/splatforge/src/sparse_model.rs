//! Text sparse-model export: `cameras.txt`, `images.txt`, `points3D.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use splatforge_core::sfm::{CameraIntrinsics, CameraModel, PosedImage, SparseModel, SparsePoint};
use splatforge_core::{ColorRgb, Point3};

use crate::error::{Error, Result};

pub const CAMERAS_FILE: &str = "cameras.txt";
pub const IMAGES_FILE: &str = "images.txt";
pub const POINTS_FILE: &str = "points3D.txt";

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(splatforge_core::Error::MissingInput(path.display().to_string()).into());
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with their 1-based line numbers. Blank lines are kept
/// because the second line of an image record may be empty.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim_start().starts_with('#'))
}

fn num<T: std::str::FromStr>(tok: Option<&str>, file: &Path, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(file, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(file, line, format!("bad {what} {tok:?}")))
}

fn parse_cameras(path: &Path) -> Result<Vec<CameraIntrinsics>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line, l) in records(&text) {
        if l.trim().is_empty() {
            continue;
        }
        let mut t = l.split_whitespace();
        let camera_id = num(t.next(), path, line, "camera id")?;
        let model = t.next().ok_or_else(|| Error::parse(path, line, "missing model"))?;
        let width = num(t.next(), path, line, "width")?;
        let height = num(t.next(), path, line, "height")?;
        let params = t
            .map(|p| p.parse::<f64>().map_err(|_| Error::parse(path, line, format!("bad parameter {p:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        let (model, fx, fy, cx, cy) = match (model, params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => (CameraModel::Pinhole, *fx, *fy, *cx, *cy),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (CameraModel::SimplePinhole, *f, *f, *cx, *cy),
            ("PINHOLE" | "SIMPLE_PINHOLE", p) => {
                return Err(Error::parse(path, line, format!("{model} with {} parameters", p.len())))
            }
            (other, _) => {
                return Err(Error::UnsupportedCameraModel {
                    file: path.to_path_buf(),
                    line,
                    model: other.to_string(),
                })
            }
        };
        let cam = CameraIntrinsics {
            camera_id,
            model,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        };
        cam.validate().map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push(cam);
    }
    Ok(out)
}

fn parse_images(path: &Path) -> Result<Vec<PosedImage>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut it = records(&text);
    while let Some((line, l)) = it.next() {
        if l.trim().is_empty() {
            continue;
        }
        let mut t = l.split_whitespace();
        let image_id = num(t.next(), path, line, "image id")?;
        let mut q = [0.0; 4];
        for (k, v) in q.iter_mut().enumerate() {
            *v = num(t.next(), path, line, &format!("q{k}"))?;
        }
        let tvec = Point3::new(
            num(t.next(), path, line, "tx")?,
            num(t.next(), path, line, "ty")?,
            num(t.next(), path, line, "tz")?,
        );
        let camera_id = num(t.next(), path, line, "camera id")?;
        let name = t.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(Error::parse(path, line, "missing image name"));
        }
        // observation line: consumed, contents unused
        if let Some((obs_line, obs)) = it.next() {
            let n = obs.split_whitespace().count();
            if n % 3 != 0 {
                return Err(Error::parse(path, obs_line, format!("{n} observation values, expected triples")));
            }
        }
        let img = PosedImage {
            image_id,
            camera_id,
            name,
            qvec: q,
            tvec,
        };
        img.validate().map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push(img);
    }
    Ok(out)
}

fn parse_points(path: &Path) -> Result<Vec<SparsePoint>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line, l) in records(&text) {
        if l.trim().is_empty() {
            continue;
        }
        let mut t = l.split_whitespace();
        let point_id = num(t.next(), path, line, "point id")?;
        let position = Point3::new(
            num(t.next(), path, line, "x")?,
            num(t.next(), path, line, "y")?,
            num(t.next(), path, line, "z")?,
        );
        let rgb: [u8; 3] = [
            num(t.next(), path, line, "red")?,
            num(t.next(), path, line, "green")?,
            num(t.next(), path, line, "blue")?,
        ];
        let _error: f64 = num(t.next(), path, line, "reprojection error")?;
        let track: Vec<&str> = t.collect();
        if !track.len().is_multiple_of(2) {
            return Err(Error::parse(path, line, "odd number of track entries"));
        }
        let track_length = track.len() / 2;
        if track_length < 2 {
            return Err(Error::parse(path, line, format!("track length {track_length} below 2")));
        }
        out.push(SparsePoint {
            point_id,
            position,
            color: ColorRgb::from_u8(rgb),
            track_length,
        });
    }
    out.sort_by_key(|p| p.point_id);
    Ok(out)
}

pub fn parse_sparse_model(dir: &Path) -> Result<SparseModel> {
    let cameras = parse_cameras(&dir.join(CAMERAS_FILE))?;
    let images = parse_images(&dir.join(IMAGES_FILE))?;
    let points = parse_points(&dir.join(POINTS_FILE))?;
    let model = SparseModel {
        cameras: cameras.into_iter().map(|c| (c.camera_id, c)).collect(),
        images: images.into_iter().map(|i| (i.image_id, i)).collect(),
        points,
    };
    model.validate()?;
    Ok(model)
}

pub fn model_files(dir: &Path) -> [PathBuf; 3] {
    [dir.join(CAMERAS_FILE), dir.join(IMAGES_FILE), dir.join(POINTS_FILE)]
}

/// Serializes a model. Observations are not retained by the parser, so
/// the observation lines are written empty and each track entry names one
/// of the model's images with a running 2D index.
pub fn write_sparse_model(model: &SparseModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cams = String::from("# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    for c in model.cameras.values() {
        let params = match c.model {
            CameraModel::Pinhole => format!("{:?} {:?} {:?} {:?}", c.fx, c.fy, c.cx, c.cy),
            CameraModel::SimplePinhole => format!("{:?} {:?} {:?}", c.fx, c.cx, c.cy),
        };
        let _ = writeln!(cams, "{} {} {} {} {params}", c.camera_id, c.model.name(), c.width, c.height);
    }
    let mut imgs = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    for i in model.images.values() {
        let [w, x, y, z] = i.qvec;
        let _ = writeln!(
            imgs,
            "{} {w:?} {x:?} {y:?} {z:?} {:?} {:?} {:?} {} {}\n",
            i.image_id, i.tvec.x, i.tvec.y, i.tvec.z, i.camera_id, i.name
        );
    }
    let ids: Vec<u32> = model.images.keys().copied().collect();
    let mut pts = String::from("# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    let mut obs = 0usize;
    for p in &model.points {
        let [r, g, b] = p.color.to_u8();
        let _ = write!(
            pts,
            "{} {:?} {:?} {:?} {r} {g} {b} 0",
            p.point_id, p.position.x, p.position.y, p.position.z
        );
        for _ in 0..p.track_length {
            let img = if ids.is_empty() { 0 } else { ids[obs % ids.len()] };
            let _ = write!(pts, " {img} {obs}");
            obs += 1;
        }
        pts.push('\n');
    }
    for (name, body) in [(CAMERAS_FILE, cams), (IMAGES_FILE, imgs), (POINTS_FILE, pts)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
