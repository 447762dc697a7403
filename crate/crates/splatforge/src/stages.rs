//! Pipeline stages. Every stage reads its inputs from disk and writes its
//! outputs and ledger to the run directory, so running stages one at a time
//! reproduces a full run byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use splatforge_core::align::{align_from_trajectory, align_unchecked, check_gate, estimate_scale, Alignment};
use splatforge_core::colorize::{colorize, View};
use splatforge_core::cubemap::{project_erp_to_cubemap, CubeFace, CubemapSet, ErpImage};
use splatforge_core::gaussian::{build_asset, fuse, Provenance};
use splatforge_core::keyframe::select_keyframes;
use splatforge_core::odometry::{odometry_chain, path_length, Odometry, TimedScan};
use splatforge_core::prism::{reduction_ratio, sweep};
use splatforge_core::sfm::{reuse_metrics, round_to, sfm_to_pointcloud};
use splatforge_core::synth::{face_image_name, frame_name};
use splatforge_core::temporal::{match_timestamps, mean_abs_dt};
use splatforge_core::{Point3, PointCloud, RigidTransform};

use crate::config::PipelineConfig;
use crate::dataset::{self, frame_file, scan_file};
use crate::error::{Error, Result};
use crate::image_io::{encode_png, read_rgb};
use crate::ledger::{
    canonical_json, hash_file, hash_hex, GateTrip, RunManifest, Scalar, StageLedger, Timing, DATASET_PREFIX, LEDGER_DIR,
};
use crate::ply::{self, encode_asset, encode_cloud, Encoding};
use crate::sparse_model::{model_files, parse_sparse_model};

pub const STAGES: [&str; 9] = [
    "keyframes",
    "cubemap",
    "ingest-sfm",
    "match",
    "odometry",
    "colorize",
    "prism",
    "align",
    "export",
];

const KEYFRAMES_CSV: &str = "keyframes/keyframes.csv";
const SFM_PLY: &str = "sfm/sfm_points.ply";
const SFM_CENTERS: &str = "sfm/image_centers.csv";
const MATCHES_CSV: &str = "match/matches.csv";
const TRAJECTORY_CSV: &str = "odometry/trajectory.csv";
const PAIRS_CSV: &str = "odometry/pairs.csv";
const MAP_PLY: &str = "odometry/map.ply";
const ODOMETRY_SUMMARY: &str = "odometry/summary.json";
const COLORED_PLY: &str = "colorize/map_colorized.ply";
const PRISM_REPORT: &str = "prism/prism_report.csv";

pub fn prism_file(k: usize) -> String {
    format!("prism/prism_k{k}.ply")
}

pub fn alignment_file(k: usize) -> String {
    format!("align/k{k}/alignment.json")
}

pub fn aligned_sfm_file(k: usize) -> String {
    format!("align/k{k}/sfm_aligned.ply")
}

pub fn asset_file(k: usize) -> String {
    format!("export/k{k}/init_asset.ply")
}

pub fn asset_manifest_file(k: usize) -> String {
    format!("export/k{k}/asset_manifest.json")
}

pub fn cubemap_file(frame: usize, face: CubeFace) -> String {
    format!("cubemap/{}", face_image_name(frame, face))
}

/// Per-stage command line overrides. Applied on top of the shared config
/// and recorded in the stage ledger as `override.*` parameters; the config
/// hash always refers to the unmodified file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub init_from_trajectory: Option<bool>,
    pub k: Option<Vec<usize>>,
    pub bins: Option<usize>,
    pub seed: Option<u64>,
    pub prism_input: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &PipelineConfig) -> Result<PipelineConfig> {
        let mut c = cfg.clone();
        if let Some(v) = self.init_from_trajectory {
            c.align.init_from_trajectory = v;
        }
        if let Some(k) = &self.k {
            c.prism.k = k.clone();
        }
        if let Some(b) = self.bins {
            c.prism.bins_per_channel = b;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }

    fn record(&self, l: &mut StageLedger) {
        if let Some(v) = self.init_from_trajectory {
            l.param("override.init_from_trajectory", v);
        }
        if let Some(k) = &self.k {
            l.param("override.k", join(k));
        }
        if let Some(b) = self.bins {
            l.param("override.bins", b);
        }
        if let Some(s) = self.seed {
            l.param("override.seed", s);
        }
        if let Some(p) = &self.prism_input {
            l.param("override.input", p.display().to_string());
        }
    }
}

fn join(k: &[usize]) -> String {
    k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub struct Context {
    /// Effective configuration (overrides applied).
    pub cfg: PipelineConfig,
    pub config_hash: String,
    pub config_value: serde_json::Value,
    pub run_dir: PathBuf,
    pub overrides: Overrides,
}

impl Context {
    pub fn new(cfg: &PipelineConfig, run_dir: &Path, overrides: Overrides) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        Ok(Self {
            cfg: overrides.apply(cfg)?,
            config_hash: cfg.hash()?,
            config_value: cfg.to_value()?,
            run_dir: run_dir.to_path_buf(),
            overrides,
        })
    }

    fn dataset(&self) -> &Path {
        &self.cfg.paths.dataset
    }

    fn path(&self, key: &str) -> PathBuf {
        crate::ledger::resolve_artifact(&self.run_dir, self.dataset(), key)
    }

    fn ledger(&self, stage: &str) -> StageLedger {
        let mut l = StageLedger::new(stage, self.cfg.seed, &self.config_hash);
        self.overrides.record(&mut l);
        l
    }

    /// Hashes an input artifact into the ledger and returns its path.
    fn input(&self, l: &mut StageLedger, key: &str) -> Result<PathBuf> {
        let p = self.path(key);
        if !p.is_file() {
            return Err(splatforge_core::Error::MissingInput(p.display().to_string()).into());
        }
        l.input_hashes.insert(key.to_string(), hash_file(&p)?);
        Ok(p)
    }

    fn output(&self, l: &mut StageLedger, key: &str, bytes: &[u8]) -> Result<()> {
        ply::write_bytes(&self.run_dir.join(key), bytes)?;
        l.output_hashes.insert(key.to_string(), hash_hex(bytes));
        Ok(())
    }
}

fn dataset_key(rel: &str) -> String {
    format!("{DATASET_PREFIX}{rel}")
}

/// Input key for a path given on the command line: run-relative when it
/// lies inside the run directory, absolute otherwise.
fn external_key(run_dir: &Path, p: &Path) -> String {
    let abs = fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let run = fs::canonicalize(run_dir).unwrap_or_else(|_| run_dir.to_path_buf());
    match abs.strip_prefix(&run) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => abs.display().to_string(),
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(path, i + 2, e.to_string())))
        .collect()
}

fn megabytes(n: usize) -> f64 {
    n as f64 / 1e6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyframeRow {
    pub frame_index: usize,
    pub selected: bool,
    pub overlap_score: f64,
    pub matched_inliers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchRow {
    pub rgb_index: usize,
    pub lidar_index: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PairRow {
    pair: usize,
    fitness: f64,
    inlier_rmse: f64,
    iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CenterRow {
    name: String,
    frame: usize,
    x: f64,
    y: f64,
    z: f64,
}

/// Point counts downstream stages report reductions against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OdometrySummary {
    raw_points: usize,
    map_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrismRow {
    k: usize,
    input: usize,
    output: usize,
    reduction: f64,
    occupied_bins: usize,
}

/// The `alignment.json` record of one PRISM capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentRecord {
    pub k: usize,
    pub passed: bool,
    pub gate: f64,
    pub global_fitness: Option<f64>,
    pub icp_fitness: f64,
    pub inlier_rmse: f64,
    pub scale: f64,
    /// SfM-to-LiDAR similarity, 4x4 row-major.
    pub transform: Option<[f64; 16]>,
    pub icp_iterations: usize,
    pub objective_monotone: bool,
    pub params: BTreeMap<String, Scalar>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetManifest {
    pub k: usize,
    pub records: usize,
    pub counts: BTreeMap<String, usize>,
    pub dropped_sfm: usize,
    pub sfm_gated: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_mean: f64,
    pub opacity: f64,
    pub config_hash: String,
}

pub struct StageOutcome {
    pub ledger: StageLedger,
    pub gate_trips: Vec<GateTrip>,
    /// Downstream stages cannot run.
    pub stop: bool,
}

impl StageOutcome {
    fn done(ledger: StageLedger) -> Self {
        Self {
            ledger,
            gate_trips: Vec::new(),
            stop: false,
        }
    }
}

fn read_keyframes(ctx: &Context, l: &mut StageLedger) -> Result<Vec<usize>> {
    let p = ctx.input(l, KEYFRAMES_CSV)?;
    let rows: Vec<KeyframeRow> = read_csv(&p)?;
    Ok(rows.iter().filter(|r| r.selected).map(|r| r.frame_index).collect())
}

fn stage_keyframes(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("keyframes");
    let ts_key = dataset_key(&dataset::frame_timestamps_file());
    let ts = dataset::read_timestamps(&ctx.input(&mut l, &ts_key)?)?;
    let frames = (0..ts.len())
        .map(|i| {
            let p = ctx.input(&mut l, &dataset_key(&frame_file(i)))?;
            Ok(ErpImage::new(read_rgb(&p)?)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ctx.cfg.keyframe_params();
    let decisions = select_keyframes(&frames, &params)?;
    let rows: Vec<KeyframeRow> = decisions
        .iter()
        .map(|d| KeyframeRow {
            frame_index: d.frame_index,
            selected: d.selected,
            overlap_score: d.overlap_score,
            matched_inliers: d.matched_inliers,
        })
        .collect();
    ctx.output(&mut l, KEYFRAMES_CSV, &csv_bytes(&rows)?)?;
    let kf = rows.iter().filter(|r| r.selected).count();
    l.input_count("frames", frames.len())
        .output_count("keyframes", kf)
        .param("threshold", params.threshold)
        .param("max_features", params.features.max_features)
        .param("fast_threshold", params.features.fast_threshold as usize)
        .param("ratio", params.overlap.ratio)
        .param("ransac_iterations", params.overlap.ransac_iterations)
        .param("inlier_threshold_px", params.overlap.inlier_threshold_px)
        .metric("total_frames", frames.len() as f64)
        .metric("keyframes", kf as f64)
        .metric("kf_reuse_ratio", round_to(kf as f64 / frames.len() as f64, 3));
    Ok(StageOutcome::done(l))
}

fn stage_cubemap(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("cubemap");
    let keyframes = read_keyframes(ctx, &mut l)?;
    let paths = keyframes
        .iter()
        .map(|&f| ctx.input(&mut l, &dataset_key(&frame_file(f))))
        .collect::<Result<Vec<_>>>()?;
    let size = ctx.cfg.face_size;
    let faces: Vec<Vec<Vec<u8>>> = paths
        .par_iter()
        .map(|p| {
            let erp = ErpImage::new(read_rgb(p)?)?;
            let cube = project_erp_to_cubemap(&erp, size)?;
            CubeFace::ALL.iter().map(|&f| encode_png(cube.face(f))).collect()
        })
        .collect::<Result<_>>()?;
    for (&frame, pngs) in keyframes.iter().zip(&faces) {
        for (&face, png) in CubeFace::ALL.iter().zip(pngs) {
            ctx.output(&mut l, &cubemap_file(frame, face), png)?;
        }
    }
    l.input_count("keyframes", keyframes.len())
        .output_count("faces", keyframes.len() * 6)
        .param("face_size", size);
    Ok(StageOutcome::done(l))
}

/// Frame index encoded in a cube-face image name, if it is one.
fn face_frame(name: &str) -> Option<(usize, CubeFace)> {
    let stem = name.strip_suffix(".png")?;
    let (frame, face) = stem.rsplit_once('_')?;
    let idx = frame.strip_prefix("frame_")?.parse().ok()?;
    (frame_name(idx) == frame).then_some(())?;
    Some((idx, CubeFace::from_name(face)?))
}

fn stage_ingest_sfm(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("ingest-sfm");
    let keyframes = read_keyframes(ctx, &mut l)?;
    let total_frames = {
        let p = ctx.input(&mut l, &dataset_key(&dataset::frame_timestamps_file()))?;
        dataset::read_timestamps(&p)?.len()
    };
    let sparse_dir = ctx.dataset().join(dataset::SPARSE_DIR);
    for p in model_files(&sparse_dir) {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        ctx.input(&mut l, &dataset_key(&format!("{}/{name}", dataset::SPARSE_DIR)))?;
    }
    let model = parse_sparse_model(&sparse_dir)?;
    let cloud = sfm_to_pointcloud(&model, ctx.cfg.min_track);
    let bytes = encode_cloud(&cloud, Encoding::BinaryLittleEndian);
    ctx.output(&mut l, SFM_PLY, &bytes)?;
    // a registered image counts when it is a face of a selected keyframe
    let mut centers = Vec::new();
    for img in model.images.values() {
        if let Some((frame, _)) = face_frame(&img.name) {
            if keyframes.binary_search(&frame).is_ok() {
                let c = img.center();
                centers.push(CenterRow {
                    name: img.name.clone(),
                    frame,
                    x: c.x,
                    y: c.y,
                    z: c.z,
                });
            }
        }
    }
    centers.sort_by(|a, b| a.name.cmp(&b.name));
    ctx.output(&mut l, SFM_CENTERS, &csv_bytes(&centers)?)?;
    let reuse = reuse_metrics(total_frames, keyframes.len(), centers.len(), 6)?;
    l.input_count("keyframes", keyframes.len())
        .output_count("sfm_points", cloud.len())
        .output_count("registered_images", centers.len())
        .param("min_track", ctx.cfg.min_track)
        .metric("cameras", model.cameras.len() as f64)
        .metric("images", model.images.len() as f64)
        .metric("model_points", model.points.len() as f64)
        .metric("sfm_points", cloud.len() as f64)
        .metric("registered_images", centers.len() as f64)
        .metric("kf_reuse_ratio", round_to(reuse.kf_reuse_ratio, 3))
        .metric("sfm_rec_ratio", round_to(reuse.sfm_rec_ratio, 3))
        .metric("sfm_size_mb", megabytes(bytes.len()));
    Ok(StageOutcome::done(l))
}

fn stage_match(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("match");
    let rgb = dataset::read_timestamps(&ctx.input(&mut l, &dataset_key(&dataset::frame_timestamps_file()))?)?;
    let lidar = dataset::read_timestamps(&ctx.input(&mut l, &dataset_key(&dataset::lidar_timestamps_file()))?)?;
    let tol = ctx.cfg.temporal_tolerance_s;
    let matches = match_timestamps(&rgb, &lidar, tol)?;
    let rows: Vec<MatchRow> = matches
        .iter()
        .map(|m| MatchRow {
            rgb_index: m.rgb_index,
            lidar_index: m.lidar_index,
            dt: m.dt,
        })
        .collect();
    ctx.output(&mut l, MATCHES_CSV, &csv_bytes(&rows)?)?;
    l.input_count("frames", rgb.len())
        .output_count("matches", rows.len())
        .param("tolerance_s", tol)
        .metric("pairs", rgb.len() as f64)
        .metric("lidar_scans", lidar.len() as f64)
        .metric("matched", rows.len() as f64)
        .metric("mean_abs_dt", mean_abs_dt(&matches));
    Ok(StageOutcome::done(l))
}

fn stage_odometry(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("odometry");
    let ts = dataset::read_timestamps(&ctx.input(&mut l, &dataset_key(&dataset::lidar_timestamps_file()))?)?;
    let scans = ts
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = ctx.input(&mut l, &dataset_key(&scan_file(i)))?;
            Ok(TimedScan {
                timestamp: t,
                cloud: ply::read_cloud(&p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ctx.cfg.odometry_params();
    let (odo, failure): (Odometry, Option<splatforge_core::Error>) = match odometry_chain(&scans, &params) {
        Ok(o) => (o, None),
        Err(f) => match f.error {
            e @ splatforge_core::Error::OdometryBreak { .. } => (f.partial, Some(e)),
            e => return Err(e.into()),
        },
    };
    let n = odo.trajectory.len();
    ctx.output(&mut l, TRAJECTORY_CSV, &dataset::encode_poses(&ts[..n], &odo.trajectory)?)?;
    let pairs: Vec<PairRow> = odo
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PairRow {
            pair: i + 1,
            fitness: p.fitness,
            inlier_rmse: p.inlier_rmse,
            iterations: p.iterations,
        })
        .collect();
    ctx.output(&mut l, PAIRS_CSV, &csv_bytes(&pairs)?)?;
    let map_bytes = encode_cloud(&odo.map, Encoding::BinaryLittleEndian);
    ctx.output(&mut l, MAP_PLY, &map_bytes)?;
    let summary = OdometrySummary {
        raw_points: odo.raw_points,
        map_points: odo.map.len(),
    };
    ctx.output(&mut l, ODOMETRY_SUMMARY, canonical_json(&summary)?.as_bytes())?;
    l.input_count("scans", scans.len())
        .output_count("poses", n)
        .output_count("map_points", odo.map.len())
        .param("map_voxel", params.map_voxel)
        .param("fitness_floor", params.fitness_floor)
        .param("max_corr_dist", params.icp.max_corr_dist)
        .param("max_iterations", params.icp.max_iterations)
        .param("weight_scheme", params.icp.weight_scheme.name())
        .metric("raw_points", odo.raw_points as f64)
        .metric("map_points", odo.map.len() as f64)
        .metric("map_size_mb", megabytes(map_bytes.len()))
        .metric("path_length", path_length(&odo.trajectory));
    for (i, p) in odo.pairs.iter().enumerate() {
        l.metric(&format!("odometry_fitness.{:04}", i + 1), p.fitness);
    }
    if let Some(min) = odo.pairs.iter().map(|p| p.fitness).min_by(f64::total_cmp) {
        l.metric("odometry_fitness_min", min);
    }
    let mut out = StageOutcome::done(l);
    if let Some(splatforge_core::Error::OdometryBreak { index, fitness, floor }) = failure {
        out.gate_trips.push(GateTrip {
            stage: "odometry".into(),
            scope: format!("scan={index}"),
            fitness,
            gate: floor,
        });
        out.ledger.metric("break_index", index as f64);
        out.stop = true;
    }
    Ok(out)
}

fn read_trajectory(ctx: &Context, l: &mut StageLedger) -> Result<Vec<RigidTransform>> {
    let p = ctx.input(l, TRAJECTORY_CSV)?;
    Ok(dataset::read_poses(&p)?.into_iter().map(|(_, t)| t).collect())
}

fn read_matches(ctx: &Context, l: &mut StageLedger) -> Result<Vec<MatchRow>> {
    let p = ctx.input(l, MATCHES_CSV)?;
    read_csv(&p)
}

fn stage_colorize(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("colorize");
    let map = ply::read_cloud(&ctx.input(&mut l, MAP_PLY)?)?;
    let trajectory = read_trajectory(ctx, &mut l)?;
    let matches = read_matches(ctx, &mut l)?;
    let keyframes = read_keyframes(ctx, &mut l)?;
    let calib = dataset::read_calibration(&ctx.input(&mut l, &dataset_key(dataset::CALIBRATION_FILE))?)?;
    let lidar_of: BTreeMap<usize, usize> = matches.iter().map(|m| (m.rgb_index, m.lidar_index)).collect();
    let mut views = Vec::new();
    for &f in &keyframes {
        let Some(&li) = lidar_of.get(&f) else { continue };
        let Some(pose) = trajectory.get(li) else { continue };
        let faces = CubeFace::ALL
            .iter()
            .map(|&face| read_rgb(&ctx.input(&mut l, &cubemap_file(f, face))?))
            .collect::<Result<Vec<_>>>()?;
        views.push(View {
            world_from_rig: calib.world_from_rig(pose),
            faces: CubemapSet::new(faces[0].width(), faces)?,
        });
    }
    let params = ctx.cfg.colorize_params();
    let c = colorize(&map, &views, &calib, &params)?;
    let colored = c.colored_cloud(&map);
    ctx.output(&mut l, COLORED_PLY, &encode_cloud(&colored, Encoding::BinaryLittleEndian))?;
    l.input_count("map_points", map.len())
        .input_count("keyframes", keyframes.len())
        .output_count("colored_points", colored.len())
        .param("grid_divisor", params.grid_divisor)
        .param("depth_tolerance", params.depth_tolerance)
        .metric("views", views.len() as f64)
        .metric("colored_points", colored.len() as f64)
        .metric("colorized_fraction", c.colored_fraction());
    Ok(StageOutcome::done(l))
}

fn stage_prism(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("prism");
    let input_key = match &ctx.overrides.prism_input {
        Some(p) => external_key(&ctx.run_dir, p),
        None => COLORED_PLY.to_string(),
    };
    let cloud = ply::read_cloud(&ctx.input(&mut l, &input_key)?)?;
    // reductions are also reported against the raw and deduplicated LiDAR
    // maps when sampling the pipeline's own colorized cloud
    let summary: Option<OdometrySummary> = match &ctx.overrides.prism_input {
        Some(_) => None,
        None => {
            let p = ctx.input(&mut l, ODOMETRY_SUMMARY)?;
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Some(serde_json::from_slice(&bytes).map_err(|e| Error::parse(&p, e.line(), e.to_string()))?)
        }
    };
    let cfg = &ctx.cfg.prism;
    let results = sweep(&cloud, &cfg.k, cfg.bins_per_channel, ctx.cfg.seed)?;
    let mut rows = Vec::new();
    for (sample, rep) in &results {
        let bytes = encode_cloud(sample, Encoding::BinaryLittleEndian);
        ctx.output(&mut l, &prism_file(rep.k), &bytes)?;
        let reduction = round_to(rep.reduction_ratio, 4);
        l.output_count(&format!("points_k{}", rep.k), rep.output_points)
            .metric(&format!("points_k{}", rep.k), rep.output_points as f64)
            .metric(&format!("reduction_k{}", rep.k), reduction)
            .metric(&format!("size_mb_k{}", rep.k), megabytes(bytes.len()));
        if let Some(sm) = summary {
            l.metric(
                &format!("reduction_vs_raw_k{}", rep.k),
                round_to(reduction_ratio(sm.raw_points, rep.output_points)?, 4),
            )
            .metric(
                &format!("reduction_vs_map_k{}", rep.k),
                round_to(reduction_ratio(sm.map_points, rep.output_points)?, 4),
            );
        }
        rows.push(PrismRow {
            k: rep.k,
            input: rep.input_points,
            output: rep.output_points,
            reduction,
            occupied_bins: rep.occupied_bins,
        });
    }
    ctx.output(&mut l, PRISM_REPORT, &csv_bytes(&rows)?)?;
    if let Some(sm) = summary {
        l.metric("raw_points", sm.raw_points as f64).metric("map_points", sm.map_points as f64);
    }
    l.input_count("colored_points", cloud.len())
        .param("bins_per_channel", cfg.bins_per_channel)
        .param("k", join(&cfg.k))
        .metric("input_points", cloud.len() as f64)
        .metric("occupied_bins", results.first().map_or(0, |r| r.1.occupied_bins) as f64);
    Ok(StageOutcome::done(l))
}

fn similarity_matrix(a: &Alignment) -> [f64; 16] {
    let mut m = dataset::transform_to_row_major(&a.transform);
    for r in 0..3 {
        for c in 0..3 {
            m[r * 4 + c] *= a.scale;
        }
    }
    m
}

/// SfM camera centers paired with trajectory rig positions of the same keyframes.
fn trajectory_pairs(ctx: &Context, l: &mut StageLedger) -> Result<(Vec<Point3>, Vec<Point3>)> {
    let centers: Vec<CenterRow> = read_csv(&ctx.input(l, SFM_CENTERS)?)?;
    let trajectory = read_trajectory(ctx, l)?;
    let matches = read_matches(ctx, l)?;
    let calib = dataset::read_calibration(&ctx.input(l, &dataset_key(dataset::CALIBRATION_FILE))?)?;
    let lidar_of: BTreeMap<usize, usize> = matches.iter().map(|m| (m.rgb_index, m.lidar_index)).collect();
    // every registered face of a frame shares the rig center; average them
    let mut by_frame: BTreeMap<usize, (Point3, usize)> = BTreeMap::new();
    for c in &centers {
        let e = by_frame.entry(c.frame).or_insert((Point3::zeros(), 0));
        e.0 += Point3::new(c.x, c.y, c.z);
        e.1 += 1;
    }
    let mut sfm = Vec::new();
    let mut traj = Vec::new();
    for (frame, (sum, n)) in by_frame {
        if let Some(pose) = lidar_of.get(&frame).and_then(|&li| trajectory.get(li)) {
            sfm.push(sum / n as f64);
            traj.push(calib.world_from_rig(pose).translation);
        }
    }
    if sfm.len() < 3 {
        return Err(splatforge_core::Error::InsufficientPoints {
            needed: 3,
            got: sfm.len(),
        }
        .into());
    }
    Ok((sfm, traj))
}

fn stage_align(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("align");
    let sfm = ply::read_cloud(&ctx.input(&mut l, SFM_PLY)?)?;
    let mut params = ctx.cfg.align_params();
    let from_traj = ctx.cfg.align.init_from_trajectory;
    let pairs = if from_traj {
        Some(trajectory_pairs(ctx, &mut l)?)
    } else {
        // the colorized map is the densest metric cloud; one scale for every k
        let map = ply::read_cloud(&ctx.input(&mut l, COLORED_PLY)?)?;
        params.scale = Some(estimate_scale(&sfm, &map)?);
        None
    };
    let ks = ctx.cfg.prism.k.clone();
    let clouds = ks
        .iter()
        .map(|&k| ply::read_cloud(&ctx.input(&mut l, &prism_file(k))?))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<std::result::Result<Alignment, splatforge_core::Error>> = clouds
        .par_iter()
        .map(|lidar| match &pairs {
            Some((s, t)) => align_from_trajectory(&sfm, lidar, s, t, &params),
            None => align_unchecked(&sfm, lidar, &params),
        })
        .collect();
    let mut flat = BTreeMap::new();
    flat.insert("init_from_trajectory".to_string(), Scalar::from(from_traj));
    flat.insert("use_global".to_string(), Scalar::from(params.use_global && !from_traj));
    flat.insert("normal_knn".to_string(), Scalar::from(params.normal_knn));
    flat.insert("fpfh_radius_factor".to_string(), Scalar::from(params.fpfh_radius_factor));
    flat.insert("global_max_corr_dist".to_string(), Scalar::from(params.global.max_corr_dist));
    flat.insert("ransac_max_iterations".to_string(), Scalar::from(params.global.max_iterations));
    flat.insert("ransac_confidence".to_string(), Scalar::from(params.global.confidence));
    flat.insert("icp_max_corr_dist".to_string(), Scalar::from(params.icp.max_corr_dist));
    flat.insert("icp_max_iterations".to_string(), Scalar::from(params.icp.max_iterations));
    flat.insert("weight_scheme".to_string(), Scalar::from(params.icp.weight_scheme.name()));
    for (k, v) in &flat {
        l.param(k, v.clone());
    }
    l.param("gate", params.gate).param("k", join(&ks));
    let mut trips = Vec::new();
    for ((&k, lidar), res) in ks.iter().zip(&clouds).zip(results) {
        let rec = match res {
            Ok(a) => {
                let passed = check_gate(&a, params.gate).is_ok();
                if passed {
                    let aligned = encode_cloud(&a.aligned, Encoding::BinaryLittleEndian);
                    ctx.output(&mut l, &aligned_sfm_file(k), &aligned)?;
                }
                AlignmentRecord {
                    k,
                    passed,
                    gate: params.gate,
                    global_fitness: a.global_fitness(),
                    icp_fitness: a.icp.fitness,
                    inlier_rmse: a.icp.inlier_rmse,
                    scale: a.scale,
                    transform: passed.then(|| similarity_matrix(&a)),
                    icp_iterations: a.icp.iterations,
                    objective_monotone: a.icp.objective_monotone(),
                    params: flat.clone(),
                    seed: ctx.cfg.seed,
                }
            }
            Err(splatforge_core::Error::NoCorrespondences { .. }) | Err(splatforge_core::Error::RegistrationFailed { .. }) => {
                AlignmentRecord {
                    k,
                    passed: false,
                    gate: params.gate,
                    global_fitness: None,
                    icp_fitness: 0.0,
                    inlier_rmse: 0.0,
                    scale: params.scale.unwrap_or(0.0),
                    transform: None,
                    icp_iterations: 0,
                    objective_monotone: true,
                    params: flat.clone(),
                    seed: ctx.cfg.seed,
                }
            }
            Err(e) => return Err(e.into()),
        };
        if !rec.passed {
            trips.push(GateTrip {
                stage: "align".into(),
                scope: format!("k={k}"),
                fitness: rec.icp_fitness,
                gate: params.gate,
            });
        }
        ctx.output(&mut l, &alignment_file(k), canonical_json(&rec)?.as_bytes())?;
        l.input_count(&format!("points_k{k}"), lidar.len())
            .metric(&format!("icp_fitness_k{k}"), rec.icp_fitness)
            .metric(&format!("inlier_rmse_k{k}"), rec.inlier_rmse)
            .metric(&format!("passed_k{k}"), if rec.passed { 1.0 } else { 0.0 });
        if let Some(g) = rec.global_fitness {
            l.metric(&format!("global_fitness_k{k}"), g);
        }
        if rec.scale > 0.0 {
            l.metric(&format!("scale_k{k}"), rec.scale);
        }
    }
    l.input_count("sfm_points", sfm.len()).metric("gate_trips", trips.len() as f64);
    Ok(StageOutcome {
        ledger: l,
        gate_trips: trips,
        stop: false,
    })
}

fn stage_export(ctx: &Context) -> Result<StageOutcome> {
    let mut l = ctx.ledger("export");
    let radius = ctx.cfg.dedup_radius();
    let opacity = ctx.cfg.export.opacity;
    for &k in &ctx.cfg.prism.k {
        let lidar = ply::read_cloud(&ctx.input(&mut l, &prism_file(k))?)?;
        let rec_path = ctx.input(&mut l, &alignment_file(k))?;
        let rec: AlignmentRecord = serde_json::from_slice(&fs::read(&rec_path).map_err(|e| Error::io(&rec_path, e))?)
            .map_err(|e| Error::parse(&rec_path, e.line(), e.to_string()))?;
        let sfm = if rec.passed {
            ply::read_cloud(&ctx.input(&mut l, &aligned_sfm_file(k))?)?
        } else {
            PointCloud::default()
        };
        let fused = fuse(&sfm, &lidar, radius)?;
        let asset = build_asset(&fused, opacity)?;
        ctx.output(&mut l, &asset_file(k), &encode_asset(&asset))?;
        let scales: Vec<f64> = asset.records.iter().map(|r| r.scale[0]).collect();
        let mut counts = BTreeMap::new();
        counts.insert(Provenance::Lidar.name().to_string(), asset.count(Provenance::Lidar));
        counts.insert(Provenance::Sfm.name().to_string(), asset.count(Provenance::Sfm));
        let manifest = AssetManifest {
            k,
            records: asset.records.len(),
            counts,
            dropped_sfm: fused.dropped_sfm,
            sfm_gated: !rec.passed,
            scale_min: scales.iter().copied().fold(f64::INFINITY, f64::min),
            scale_max: scales.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            scale_mean: scales.iter().sum::<f64>() / scales.len() as f64,
            opacity,
            config_hash: ctx.config_hash.clone(),
        };
        ctx.output(&mut l, &asset_manifest_file(k), canonical_json(&manifest)?.as_bytes())?;
        l.input_count(&format!("points_k{k}"), lidar.len())
            .output_count(&format!("records_k{k}"), asset.records.len())
            .metric(&format!("records_k{k}"), asset.records.len() as f64)
            .metric(&format!("lidar_k{k}"), asset.count(Provenance::Lidar) as f64)
            .metric(&format!("sfm_k{k}"), asset.count(Provenance::Sfm) as f64)
            .metric(&format!("dropped_sfm_k{k}"), fused.dropped_sfm as f64);
    }
    l.param("dedup_radius", radius).param("opacity", opacity).param("k", join(&ctx.cfg.prism.k));
    Ok(StageOutcome::done(l))
}

fn dispatch(ctx: &Context, stage: &str) -> Result<StageOutcome> {
    match stage {
        "keyframes" => stage_keyframes(ctx),
        "cubemap" => stage_cubemap(ctx),
        "ingest-sfm" => stage_ingest_sfm(ctx),
        "match" => stage_match(ctx),
        "odometry" => stage_odometry(ctx),
        "colorize" => stage_colorize(ctx),
        "prism" => stage_prism(ctx),
        "align" => stage_align(ctx),
        "export" => stage_export(ctx),
        other => Err(Error::Config(format!("unknown stage {other}"))),
    }
}

fn stage_name(stage: &str) -> &'static str {
    STAGES.iter().find(|s| **s == stage).copied().unwrap_or("unknown")
}

fn load_or_create_manifest(ctx: &Context) -> Result<RunManifest> {
    if ctx.run_dir.join(crate::ledger::MANIFEST_FILE).exists() {
        let m = RunManifest::load(&ctx.run_dir)?;
        if m.config_hash != ctx.config_hash {
            return Err(Error::Config(format!(
                "{} was produced with config {}, not {}",
                ctx.run_dir.display(),
                m.config_hash,
                ctx.config_hash
            )));
        }
        return Ok(m);
    }
    Ok(RunManifest::new(
        ctx.config_value.clone(),
        &ctx.config_hash,
        &ctx.cfg.paths.dataset.display().to_string(),
    ))
}

fn update_status(m: &mut RunManifest, stopped: Option<&str>) {
    m.status = if let Some(s) = stopped {
        format!("stopped:{s}")
    } else if m.stages.iter().any(|e| e.name.starts_with("stopped")) {
        m.status.clone()
    } else if STAGES.iter().all(|s| m.stages.iter().any(|e| e.name == *s)) {
        if m.gate_trips.is_empty() {
            "complete".into()
        } else {
            "gated".into()
        }
    } else {
        "incomplete".into()
    };
}

/// Runs one stage, writes its ledger and updates the run manifest.
pub fn run_stage(ctx: &Context, stage: &str) -> Result<StageOutcome> {
    let name = stage_name(stage);
    let start = Timing::start();
    let out = dispatch(ctx, stage).map_err(|e| e.in_stage(name))?;
    let timing = Timing::finish(start);
    let ledger_dir = ctx.run_dir.join(LEDGER_DIR);
    crate::ledger::write_ledger(&out.ledger, &ledger_dir, Some(&timing)).map_err(|e| e.in_stage(name))?;
    let mut m = load_or_create_manifest(ctx)?;
    m.record(&ctx.run_dir, stage, &STAGES)?;
    m.set_gate_trips(stage, out.gate_trips.clone());
    update_status(&mut m, out.stop.then_some(stage));
    m.save(&ctx.run_dir)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub stopped_at: Option<String>,
}

impl RunSummary {
    /// 0 when every stage ran and no gate tripped, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.stopped_at.is_some() || !self.manifest.gate_trips.is_empty() {
            2
        } else {
            0
        }
    }
}

/// Every stage in order. A fresh manifest replaces any earlier one in `run_dir`.
pub fn run_all(cfg: &PipelineConfig, run_dir: &Path, overrides: Overrides) -> Result<RunSummary> {
    let ctx = Context::new(cfg, run_dir, overrides)?;
    let manifest_path = run_dir.join(crate::ledger::MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let mut stopped_at = None;
    for stage in STAGES {
        let out = run_stage(&ctx, stage)?;
        if out.stop {
            stopped_at = Some(stage.to_string());
            break;
        }
    }
    Ok(RunSummary {
        manifest: RunManifest::load(run_dir)?,
        stopped_at,
    })
}

/// Where each reported summary column lives:
/// `(table column, stage, metrics key)`. `{k}` expands over the PRISM sweep.
pub const METRIC_REGISTRY: [(&str, &str, &str); 18] = [
    ("ERP frames", "keyframes", "total_frames"),
    ("LiDAR scans", "match", "lidar_scans"),
    ("Keyframes", "keyframes", "keyframes"),
    ("SfM images", "ingest-sfm", "registered_images"),
    ("KF reuse", "ingest-sfm", "kf_reuse_ratio"),
    ("SfM rec.", "ingest-sfm", "sfm_rec_ratio"),
    ("Raw points", "odometry", "raw_points"),
    ("Raw size", "odometry", "map_size_mb"),
    ("SfM points", "ingest-sfm", "sfm_points"),
    ("SfM size", "ingest-sfm", "sfm_size_mb"),
    ("PRISM points", "prism", "points_k{k}"),
    ("PRISM size", "prism", "size_mb_k{k}"),
    ("Global fitness", "align", "global_fitness_k{k}"),
    ("ICP fitness", "align", "icp_fitness_k{k}"),
    ("Inlier RMSE", "align", "inlier_rmse_k{k}"),
    ("Sweep points", "prism", "points_k{k}"),
    ("Reduction", "prism", "reduction_k{k}"),
    ("Colorized fraction", "colorize", "colorized_fraction"),
];

pub fn expand_registry(ks: &[usize]) -> Vec<(&'static str, &'static str, String)> {
    let mut out = Vec::new();
    for (col, stage, key) in METRIC_REGISTRY {
        if key.contains("{k}") {
            for k in ks {
                out.push((col, stage, key.replace("{k}", &k.to_string())));
            }
        } else {
            out.push((col, stage, key.to_string()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_names_parse() {
        assert_eq!(face_frame("frame_0012_back.png"), Some((12, CubeFace::Back)));
        assert_eq!(face_frame("frame_12_back.png"), None);
        assert_eq!(face_frame("frame_0012_sideways.png"), None);
        assert_eq!(face_frame("other.png"), None);
        for f in CubeFace::ALL {
            assert_eq!(face_frame(&face_image_name(3, f)), Some((3, f)));
        }
    }

    #[test]
    fn registry_expands_over_k() {
        let r = expand_registry(&[5, 50]);
        assert!(r.iter().any(|(_, s, k)| *s == "align" && k == "icp_fitness_k50"));
        assert_eq!(r.len(), 11 + 7 * 2);
    }
}
