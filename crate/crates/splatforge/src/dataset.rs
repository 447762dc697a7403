//! On-disk layout of an input dataset and the synthetic dataset writer.
//!
//! ```text
//! frames/frame_0000.png     ERP panoramas
//! frames/timestamps.csv     frame,seconds
//! lidar/scan_0000.ply       sweeps in the sensor frame
//! lidar/timestamps.csv      frame,seconds
//! calibration.json          lidar_to_camera (4x4 row-major) + six face intrinsics
//! sparse/                   cameras.txt, images.txt, points3D.txt
//! ground_truth/             lidar_poses.csv, rig_poses.csv (synthetic only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use splatforge_core::colorize::Calibration;
use splatforge_core::sfm::{CameraIntrinsics, CameraModel};
use splatforge_core::synth::{generate_sequence, SequenceSpec, SyntheticSequence};
use splatforge_core::RigidTransform;

use crate::error::{Error, Result};
use crate::ply::{write_bytes, write_cloud, Encoding};

pub const FRAMES_DIR: &str = "frames";
pub const LIDAR_DIR: &str = "lidar";
pub const SPARSE_DIR: &str = "sparse";
pub const TIMESTAMPS_FILE: &str = "timestamps.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const GROUND_TRUTH_DIR: &str = "ground_truth";

pub fn frame_file(i: usize) -> String {
    format!("{FRAMES_DIR}/{}.png", splatforge_core::synth::frame_name(i))
}

pub fn scan_file(i: usize) -> String {
    format!("{LIDAR_DIR}/scan_{i:04}.ply")
}

pub fn frame_timestamps_file() -> String {
    format!("{FRAMES_DIR}/{TIMESTAMPS_FILE}")
}

pub fn lidar_timestamps_file() -> String {
    format!("{LIDAR_DIR}/{TIMESTAMPS_FILE}")
}

#[derive(Debug, Serialize, Deserialize)]
struct TimestampRow {
    frame: usize,
    seconds: f64,
}

pub fn encode_timestamps(ts: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (frame, &seconds) in ts.iter().enumerate() {
        w.serialize(TimestampRow { frame, seconds })
            .map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

/// Timestamps indexed by frame; frames must be listed as 0, 1, 2, ...
pub fn read_timestamps(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<TimestampRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        if row.frame != i {
            return Err(Error::parse(path, i + 2, format!("expected frame {i}, found {}", row.frame)));
        }
        out.push(row.seconds);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaceIntrinsics {
    camera_id: u32,
    model: String,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    lidar_to_camera: [f64; 16],
    faces: Vec<FaceIntrinsics>,
}

pub fn transform_to_row_major(t: &RigidTransform) -> [f64; 16] {
    let m = t.to_matrix();
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

pub fn transform_from_row_major(m: &[f64]) -> splatforge_core::Result<RigidTransform> {
    let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    RigidTransform::new(rotation, Vector3::new(m[3], m[7], m[11]))
}

pub fn encode_calibration(c: &Calibration) -> Result<Vec<u8>> {
    let file = CalibrationFile {
        lidar_to_camera: transform_to_row_major(&c.lidar_to_camera),
        faces: c
            .faces
            .iter()
            .map(|f| FaceIntrinsics {
                camera_id: f.camera_id,
                model: f.model.name().to_string(),
                width: f.width,
                height: f.height,
                fx: f.fx,
                fy: f.fy,
                cx: f.cx,
                cy: f.cy,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?.into_bytes())
}

pub fn read_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CalibrationFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    let bottom = &file.lidar_to_camera[12..];
    if bottom != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::parse(path, 1, "lidar_to_camera bottom row must be 0 0 0 1"));
    }
    let lidar_to_camera = transform_from_row_major(&file.lidar_to_camera)?;
    if file.faces.len() != 6 {
        return Err(Error::parse(path, 1, format!("{} face intrinsics, expected 6", file.faces.len())));
    }
    let faces = file
        .faces
        .iter()
        .map(|f| {
            let model = match f.model.as_str() {
                "PINHOLE" => CameraModel::Pinhole,
                "SIMPLE_PINHOLE" => CameraModel::SimplePinhole,
                other => {
                    return Err(Error::UnsupportedCameraModel {
                        file: path.to_path_buf(),
                        line: 1,
                        model: other.to_string(),
                    })
                }
            };
            Ok(CameraIntrinsics {
                camera_id: f.camera_id,
                model,
                width: f.width,
                height: f.height,
                fx: f.fx,
                fy: f.fy,
                cx: f.cx,
                cy: f.cy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let calib = Calibration {
        lidar_to_camera,
        faces: faces.try_into().expect("six faces"),
    };
    calib.validate()?;
    Ok(calib)
}

pub fn encode_poses(ts: &[f64], poses: &[RigidTransform]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let mut header = vec!["frame".to_string(), "seconds".to_string()];
    for r in 0..3 {
        for c in 0..4 {
            header.push(format!("m{r}{c}"));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, (t, p)) in ts.iter().zip(poses).enumerate() {
        let m = transform_to_row_major(p);
        let mut row = vec![i.to_string(), format!("{t:?}")];
        row.extend(m[..12].iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

/// `(seconds, pose)` rows written by [`encode_poses`].
pub fn read_poses(path: &Path) -> Result<Vec<(f64, RigidTransform)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if rec.len() != 14 {
            return Err(Error::parse(path, line, format!("{} columns, expected 14", rec.len())));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(path, line, format!("bad number {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        let mut m = vals[1..].to_vec();
        m.extend([0.0, 0.0, 0.0, 1.0]);
        let pose = transform_from_row_major(&m).map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push((vals[0], pose));
    }
    Ok(out)
}

/// Writes a generated sequence plus a `pipeline.json` that points at it.
pub fn write_synthetic_dataset(spec: &SequenceSpec, seq: &SyntheticSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        crate::image_io::write_png(&dir.join(frame_file(i)), frame.image())?;
    }
    write_bytes(&dir.join(frame_timestamps_file()), &encode_timestamps(&seq.rgb_timestamps)?)?;
    for (i, scan) in seq.scans.iter().enumerate() {
        write_cloud(&dir.join(scan_file(i)), scan, Encoding::BinaryLittleEndian)?;
    }
    write_bytes(&dir.join(lidar_timestamps_file()), &encode_timestamps(&seq.lidar_timestamps)?)?;
    let calib = Calibration::for_face_size(spec.lidar_to_camera, spec.face_size);
    write_bytes(&dir.join(CALIBRATION_FILE), &encode_calibration(&calib)?)?;
    crate::sparse_model::write_sparse_model(&seq.sparse, &dir.join(SPARSE_DIR))?;
    let gt = dir.join(GROUND_TRUTH_DIR);
    write_bytes(&gt.join("lidar_poses.csv"), &encode_poses(&seq.lidar_timestamps, &seq.lidar_poses)?)?;
    write_bytes(&gt.join("rig_poses.csv"), &encode_poses(&seq.rgb_timestamps, &seq.rig_poses)?)?;
    let cfg = crate::config::PipelineConfig {
        seed: spec.seed,
        face_size: spec.face_size,
        paths: crate::config::Paths {
            dataset: PathBuf::from("."),
        },
        ..Default::default()
    };
    cfg.save(&dir.join("pipeline.json"))
}

pub fn generate_dataset(spec: &SequenceSpec, dir: &Path) -> Result<SyntheticSequence> {
    let seq = generate_sequence(spec)?;
    write_synthetic_dataset(spec, &seq, dir)?;
    Ok(seq)
}
