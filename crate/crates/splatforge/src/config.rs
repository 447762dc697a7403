//! The single shared pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splatforge_core::align::{AlignParams, DEFAULT_ALIGNMENT_GATE};
use splatforge_core::colorize::ColorizeParams;
use splatforge_core::gaussian::DEFAULT_OPACITY;
use splatforge_core::keyframe::{KeyframeParams, DEFAULT_THRESHOLD};
use splatforge_core::odometry::{OdometryParams, DEFAULT_FITNESS_FLOOR, DEFAULT_MAP_VOXEL};
use splatforge_core::prism::{DEFAULT_BINS_PER_CHANNEL, DEFAULT_K_SWEEP};
use splatforge_core::registration::{IcpParams, WeightScheme};
use splatforge_core::sfm::DEFAULT_MIN_TRACK;
use splatforge_core::temporal::DEFAULT_TOLERANCE_S;

use crate::error::{Error, Result};
use crate::ledger::{canonical_json, hash_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset root: `frames/`, `lidar/`, `sparse/`, `calibration.json`.
    pub dataset: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeConfig {
    pub threshold: f64,
    pub max_features: usize,
    pub fast_threshold: u8,
    pub ratio: f64,
    pub ransac_iterations: usize,
    pub inlier_threshold_px: f64,
}

impl Default for KeyframeConfig {
    fn default() -> Self {
        let d = KeyframeParams::default();
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_features: d.features.max_features,
            fast_threshold: d.features.fast_threshold,
            ratio: d.overlap.ratio,
            ransac_iterations: d.overlap.ransac_iterations,
            inlier_threshold_px: d.overlap.inlier_threshold_px,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdometryConfig {
    pub map_voxel: f64,
    pub fitness_floor: f64,
    /// Correspondence distance as a multiple of `map_voxel`.
    pub max_corr_factor: f64,
    pub max_iterations: usize,
    pub tukey: bool,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            map_voxel: DEFAULT_MAP_VOXEL,
            fitness_floor: DEFAULT_FITNESS_FLOOR,
            max_corr_factor: 5.0,
            max_iterations: 30,
            tukey: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorizeConfig {
    pub grid_divisor: usize,
    pub depth_tolerance: f64,
}

impl Default for ColorizeConfig {
    fn default() -> Self {
        let d = ColorizeParams::default();
        Self {
            grid_divisor: d.grid_divisor,
            depth_tolerance: d.depth_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrismSection {
    pub bins_per_channel: usize,
    pub k: Vec<usize>,
}

impl Default for PrismSection {
    fn default() -> Self {
        Self {
            bins_per_channel: DEFAULT_BINS_PER_CHANNEL,
            k: DEFAULT_K_SWEEP.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub gate: f64,
    pub use_global: bool,
    pub init_from_trajectory: bool,
    pub normal_knn: usize,
    pub fpfh_radius_factor: f64,
    /// RANSAC inlier distance as a multiple of `map_voxel`.
    pub global_corr_factor: f64,
    pub ransac_max_iterations: usize,
    pub ransac_confidence: f64,
    pub icp_corr_factor: f64,
    pub icp_max_iterations: usize,
    pub tukey: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            gate: DEFAULT_ALIGNMENT_GATE,
            use_global: true,
            init_from_trajectory: false,
            normal_knn: splatforge_core::normals::DEFAULT_NORMAL_KNN,
            fpfh_radius_factor: 5.0,
            global_corr_factor: 15.0,
            ransac_max_iterations: 100_000,
            ransac_confidence: 0.999,
            icp_corr_factor: 5.0,
            icp_max_iterations: 30,
            tukey: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Defaults to `odometry.map_voxel` when absent.
    pub dedup_radius: Option<f64>,
    pub opacity: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            dedup_radius: None,
            opacity: DEFAULT_OPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub face_size: usize,
    pub min_track: usize,
    pub temporal_tolerance_s: f64,
    pub paths: Paths,
    pub keyframes: KeyframeConfig,
    pub odometry: OdometryConfig,
    pub colorize: ColorizeConfig,
    pub prism: PrismSection,
    pub align: AlignConfig,
    pub export: ExportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            face_size: 128,
            min_track: DEFAULT_MIN_TRACK,
            temporal_tolerance_s: DEFAULT_TOLERANCE_S,
            paths: Paths::default(),
            keyframes: KeyframeConfig::default(),
            odometry: OdometryConfig::default(),
            colorize: ColorizeConfig::default(),
            prism: PrismSection::default(),
            align: AlignConfig::default(),
            export: ExportConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl PipelineConfig {
    /// Parses and validates; relative dataset paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.paths.dataset.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.paths.dataset = base.join(&cfg.paths.dataset);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::ply::write_bytes(path, text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        if self.face_size < splatforge_core::cubemap::MIN_FACE_SIZE {
            return Err(invalid(format!("face_size {} too small", self.face_size)));
        }
        if self.min_track < 2 {
            return Err(invalid("min_track must be at least 2"));
        }
        if !(self.temporal_tolerance_s >= 0.0) {
            return Err(invalid("temporal_tolerance_s must be >= 0"));
        }
        let kf = &self.keyframes;
        if !(kf.threshold > 0.0 && kf.threshold < 1.0) {
            return Err(invalid(format!("keyframe threshold {} outside (0, 1)", kf.threshold)));
        }
        pos(self.odometry.map_voxel, "odometry.map_voxel")?;
        pos(self.odometry.max_corr_factor, "odometry.max_corr_factor")?;
        if !(0.0..=1.0).contains(&self.odometry.fitness_floor) {
            return Err(invalid("odometry.fitness_floor outside [0, 1]"));
        }
        pos(self.colorize.depth_tolerance, "colorize.depth_tolerance")?;
        if self.colorize.grid_divisor == 0 {
            return Err(invalid("colorize.grid_divisor must be positive"));
        }
        if self.prism.bins_per_channel == 0 {
            return Err(invalid("prism.bins_per_channel must be positive"));
        }
        if self.prism.k.is_empty() || self.prism.k.contains(&0) {
            return Err(invalid("prism.k must be a non-empty list of positive capacities"));
        }
        let mut ks = self.prism.k.clone();
        ks.sort_unstable();
        ks.dedup();
        if ks.len() != self.prism.k.len() {
            return Err(invalid("prism.k has duplicates"));
        }
        let a = &self.align;
        if !(0.0..=1.0).contains(&a.gate) {
            return Err(invalid("align.gate outside [0, 1]"));
        }
        pos(a.fpfh_radius_factor, "align.fpfh_radius_factor")?;
        pos(a.global_corr_factor, "align.global_corr_factor")?;
        pos(a.icp_corr_factor, "align.icp_corr_factor")?;
        if !(a.ransac_confidence > 0.0 && a.ransac_confidence < 1.0) {
            return Err(invalid("align.ransac_confidence outside (0, 1)"));
        }
        if a.normal_knn < 3 {
            return Err(invalid("align.normal_knn must be at least 3"));
        }
        if let Some(r) = self.export.dedup_radius {
            if !(r >= 0.0) {
                return Err(invalid("export.dedup_radius must be >= 0"));
            }
        }
        if !(self.export.opacity > 0.0 && self.export.opacity < 1.0) {
            return Err(invalid("export.opacity outside (0, 1)"));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    /// xxh64 of the canonical JSON of the fully defaulted config.
    pub fn hash(&self) -> Result<String> {
        Ok(hash_hex(canonical_json(self)?.as_bytes()))
    }

    pub fn keyframe_params(&self) -> KeyframeParams {
        let mut p = KeyframeParams::default();
        let k = &self.keyframes;
        p.threshold = k.threshold;
        p.features.max_features = k.max_features;
        p.features.fast_threshold = k.fast_threshold;
        p.overlap.ratio = k.ratio;
        p.overlap.ransac_iterations = k.ransac_iterations;
        p.overlap.inlier_threshold_px = k.inlier_threshold_px;
        p.overlap.seed = self.seed;
        p
    }

    pub fn odometry_params(&self) -> OdometryParams {
        let o = &self.odometry;
        let d = o.max_corr_factor * o.map_voxel;
        let mut icp = IcpParams::with_tukey(d);
        icp.max_iterations = o.max_iterations;
        if !o.tukey {
            icp.weight_scheme = WeightScheme::Uniform;
        }
        OdometryParams {
            icp,
            fitness_floor: o.fitness_floor,
            map_voxel: o.map_voxel,
        }
    }

    pub fn colorize_params(&self) -> ColorizeParams {
        ColorizeParams {
            grid_divisor: self.colorize.grid_divisor,
            depth_tolerance: self.colorize.depth_tolerance,
        }
    }

    pub fn align_params(&self) -> AlignParams {
        let a = &self.align;
        let voxel = self.odometry.map_voxel;
        let mut p = AlignParams::new(voxel, self.seed);
        p.use_global = a.use_global;
        p.normal_knn = a.normal_knn;
        p.fpfh_radius_factor = a.fpfh_radius_factor;
        p.global.max_corr_dist = a.global_corr_factor * voxel;
        p.global.max_iterations = a.ransac_max_iterations;
        p.global.confidence = a.ransac_confidence;
        p.icp = IcpParams::with_tukey(a.icp_corr_factor * voxel);
        p.icp.max_iterations = a.icp_max_iterations;
        if !a.tukey {
            p.icp.weight_scheme = WeightScheme::Uniform;
        }
        p.gate = a.gate;
        p
    }

    pub fn dedup_radius(&self) -> f64 {
        self.export.dedup_radius.unwrap_or(self.odometry.map_voxel)
    }
}
