//! Per-stage ledgers, the run manifest and run verification.
//!
//! Ledger JSON is canonical: keys sorted, no insignificant whitespace, floats
//! in shortest round-trip form. Wall-clock fields live in a `.timing.json`
//! sidecar that is neither hashed nor compared.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const HASH_ALGORITHM: &str = "xxh64";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const LEDGER_DIR: &str = "ledgers";
/// Prefix of artifact keys that live in the input dataset rather than the run directory.
pub const DATASET_PREFIX: &str = "dataset:";

pub fn content_hash(bytes: &[u8]) -> u64 {
    twox_hash::XxHash64::oneshot(0, bytes)
}

pub fn hash_hex(bytes: &[u8]) -> String {
    format!("{:016x}", content_hash(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_hex(&bytes))
}

/// Flat parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    pub fn to_text(&self) -> String {
        match self {
            Scalar::Bool(b) => b.to_string(),
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(f) => format!("{f:?}"),
            Scalar::Text(s) => s.clone(),
        }
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}
impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}
impl From<usize> for Scalar {
    fn from(v: usize) -> Self {
        Scalar::Int(v as i64)
    }
}
impl From<u64> for Scalar {
    fn from(v: u64) -> Self {
        Scalar::Int(v as i64)
    }
}
impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float(v)
    }
}
impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Text(v.to_string())
    }
}
impl From<String> for Scalar {
    fn from(v: String) -> Self {
        Scalar::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageLedger {
    pub stage_name: String,
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub input_counts: BTreeMap<String, u64>,
    pub output_counts: BTreeMap<String, u64>,
    pub params: BTreeMap<String, Scalar>,
    pub metrics: BTreeMap<String, f64>,
    /// Artifact key to hex content hash.
    pub input_hashes: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
}

impl StageLedger {
    pub fn new(stage_name: &str, seed: u64, config_hash: &str) -> Self {
        Self {
            stage_name: stage_name.to_string(),
            schema_version: SCHEMA_VERSION,
            seed,
            config_hash: config_hash.to_string(),
            ..Default::default()
        }
    }

    pub fn param(&mut self, key: &str, v: impl Into<Scalar>) -> &mut Self {
        self.params.insert(key.to_string(), v.into());
        self
    }

    pub fn metric(&mut self, key: &str, v: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), v);
        self
    }

    pub fn input_count(&mut self, key: &str, n: usize) -> &mut Self {
        self.input_counts.insert(key.to_string(), n as u64);
        self
    }

    pub fn output_count(&mut self, key: &str, n: usize) -> &mut Self {
        self.output_counts.insert(key.to_string(), n as u64);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_name.is_empty() {
            return Err(Error::Config("ledger without stage name".into()));
        }
        let bad_metric = self.metrics.iter().find(|(_, v)| !v.is_finite());
        let bad_param = self.params.iter().find(|(_, v)| matches!(v, Scalar::Float(f) if !f.is_finite()));
        if let Some((k, _)) = bad_metric.map(|(k, v)| (k, *v)).or(bad_param.map(|(k, _)| (k, 0.0))) {
            return Err(Error::Config(format!("{}: value of {k} is not finite", self.stage_name)));
        }
        Ok(())
    }

    /// One flat `(column, value)` list, as written to the CSV row.
    pub fn flatten(&self) -> Vec<(String, String)> {
        let mut row = vec![
            ("stage_name".to_string(), self.stage_name.clone()),
            ("schema_version".to_string(), self.schema_version.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("config_hash".to_string(), self.config_hash.clone()),
        ];
        row.extend(self.input_counts.iter().map(|(k, v)| (format!("input_count.{k}"), v.to_string())));
        row.extend(self.output_counts.iter().map(|(k, v)| (format!("output_count.{k}"), v.to_string())));
        row.extend(self.params.iter().map(|(k, v)| (format!("param.{k}"), v.to_text())));
        row.extend(self.metrics.iter().map(|(k, v)| (format!("metric.{k}"), format!("{v:?}"))));
        row.extend(self.input_hashes.iter().map(|(k, v)| (format!("input_hash.{k}"), v.clone())));
        row.extend(self.output_hashes.iter().map(|(k, v)| (format!("output_hash.{k}"), v.clone())));
        row
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub duration_s: f64,
}

impl Timing {
    pub fn start() -> (std::time::Instant, f64) {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        (std::time::Instant::now(), now)
    }

    pub fn finish(start: (std::time::Instant, f64)) -> Self {
        Self {
            started_at: start.1,
            duration_s: start.0.elapsed().as_secs_f64(),
        }
    }
}

/// Key-sorted JSON without whitespace.
pub fn canonical_json<T: Serialize>(v: &T) -> Result<String> {
    // serde_json::Value objects are BTreeMaps, which sort keys
    let value = serde_json::to_value(v)?;
    Ok(serde_json::to_string(&value)?)
}

pub fn encode_csv(row: &[(String, String)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(row.iter().map(|(k, _)| k.as_str())).map_err(csv_err)?;
    w.write_record(row.iter().map(|(_, v)| v.as_str())).map_err(csv_err)?;
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

pub fn decode_csv(bytes: &[u8]) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_reader(bytes);
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let header = r.headers().map_err(csv_err)?.clone();
    let mut rows = r.records();
    let row = rows
        .next()
        .ok_or_else(|| Error::Config("ledger csv has no data row".into()))?
        .map_err(csv_err)?;
    if rows.next().is_some() {
        return Err(Error::Config("ledger csv has more than one data row".into()));
    }
    Ok(header.iter().zip(row.iter()).map(|(k, v)| (k.to_string(), v.to_string())).collect())
}

pub struct LedgerFiles {
    pub json: PathBuf,
    pub csv: PathBuf,
}

pub fn ledger_json_name(stage: &str) -> String {
    format!("{stage}.json")
}

/// Writes `<stage>.json`, `<stage>.csv` and, when given, the timing sidecar.
pub fn write_ledger(l: &StageLedger, dir: &Path, timing: Option<&Timing>) -> Result<LedgerFiles> {
    l.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(ledger_json_name(&l.stage_name));
    let csv = dir.join(format!("{}.csv", l.stage_name));
    fs::write(&json, canonical_json(l)?).map_err(|e| Error::io(&json, e))?;
    fs::write(&csv, encode_csv(&l.flatten())?).map_err(|e| Error::io(&csv, e))?;
    if let Some(t) = timing {
        let side = dir.join(format!("{}.timing.json", l.stage_name));
        fs::write(&side, canonical_json(t)?).map_err(|e| Error::io(&side, e))?;
    }
    Ok(LedgerFiles { json, csv })
}

pub fn read_ledger(path: &Path) -> Result<StageLedger> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageEntry {
    pub name: String,
    /// Paths relative to the run directory.
    pub ledger: String,
    pub ledger_csv: String,
    pub ledger_hash: String,
    pub ledger_csv_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateTrip {
    pub stage: String,
    /// Which unit of work tripped, e.g. `k=5`.
    pub scope: String,
    pub fitness: f64,
    pub gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub pipeline_version: String,
    pub schema_version: u32,
    pub hash_algorithm: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Root against which `dataset:` artifact keys resolve.
    pub dataset_root: String,
    /// In execution order.
    pub stages: Vec<StageEntry>,
    pub gate_trips: Vec<GateTrip>,
    /// `complete`, `gated` or `stopped:<stage>`.
    pub status: String,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, config_hash: &str, dataset_root: &str) -> Self {
        Self {
            pipeline_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            hash_algorithm: HASH_ALGORITHM.to_string(),
            config_hash: config_hash.to_string(),
            config,
            dataset_root: dataset_root.to_string(),
            stages: Vec::new(),
            gate_trips: Vec::new(),
            status: "incomplete".to_string(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(&path, e.line(), e.to_string()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        fs::write(&path, canonical_json(self)?).map_err(|e| Error::io(&path, e))
    }

    /// Registers a written ledger, replacing any earlier entry of the same
    /// stage and keeping entries ordered by `order`.
    pub fn record(&mut self, run_dir: &Path, stage: &str, order: &[&str]) -> Result<()> {
        let rel = format!("{LEDGER_DIR}/{stage}.json");
        let rel_csv = format!("{LEDGER_DIR}/{stage}.csv");
        let entry = StageEntry {
            name: stage.to_string(),
            ledger_hash: hash_file(&run_dir.join(&rel))?,
            ledger_csv_hash: hash_file(&run_dir.join(&rel_csv))?,
            ledger: rel,
            ledger_csv: rel_csv,
        };
        self.stages.retain(|e| e.name != stage);
        self.stages.push(entry);
        let rank = |n: &str| order.iter().position(|o| *o == n).unwrap_or(usize::MAX);
        self.stages.sort_by_key(|e| rank(&e.name));
        Ok(())
    }

    pub fn set_gate_trips(&mut self, stage: &str, trips: Vec<GateTrip>) {
        self.gate_trips.retain(|t| t.stage != stage);
        self.gate_trips.extend(trips);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub stage: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Stages with at least one failed check, in manifest order.
    pub fn failed_stages(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.failures() {
            if !out.contains(&c.stage) {
                out.push(c.stage.clone());
            }
        }
        out
    }

    fn push(&mut self, stage: &str, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            stage: stage.to_string(),
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

pub fn resolve_artifact(run_dir: &Path, dataset_root: &Path, key: &str) -> PathBuf {
    match key.strip_prefix(DATASET_PREFIX) {
        Some(rel) => dataset_root.join(rel),
        None if Path::new(key).is_absolute() => PathBuf::from(key),
        None => run_dir.join(key),
    }
}

fn hash_matches(path: &Path, expected: &str) -> (bool, String) {
    match hash_file(path) {
        Ok(h) if h == expected => (true, String::new()),
        Ok(h) => (false, format!("{} hashes to {h}, recorded {expected}", path.display())),
        Err(_) => (false, format!("{} is missing", path.display())),
    }
}

/// Recomputes every content hash and checks that each stage consumed
/// exactly what its producers recorded.
///
/// Run artifacts are hashed against the producing stage's ledger, so a
/// modified intermediate fails at its producer only; consumers compare their
/// recorded input hashes with the producer's record. Dataset inputs are
/// rehashed by every consumer.
pub fn verify_run(run_dir: &Path) -> Result<VerifyReport> {
    let manifest = RunManifest::load(run_dir)
        .map_err(|e| Error::VerificationFailed(vec![format!("manifest unreadable: {e}")]))?;
    let dataset_root = PathBuf::from(&manifest.dataset_root);
    let mut report = VerifyReport::default();
    // artifact key -> (producing stage, recorded hash, recorded count keys)
    let mut produced: BTreeMap<String, (String, String)> = BTreeMap::new();
    let mut counts: BTreeMap<String, (String, u64)> = BTreeMap::new();
    let mut last_good: Option<String> = None;
    let mut previous: Option<String> = None;
    for entry in &manifest.stages {
        let stage = entry.name.as_str();
        let ledger_path = run_dir.join(&entry.ledger);
        let (ok, detail) = hash_matches(&ledger_path, &entry.ledger_hash);
        report.push(stage, "ledger_hash", ok, detail);
        let (ok_csv, detail) = hash_matches(&run_dir.join(&entry.ledger_csv), &entry.ledger_csv_hash);
        report.push(stage, "ledger_csv_hash", ok_csv, detail);
        let ledger = match read_ledger(&ledger_path) {
            Ok(l) if ok => l,
            Ok(_) | Err(_) => {
                previous = Some(stage.to_string());
                continue;
            }
        };
        report.push(
            stage,
            "config_hash",
            ledger.config_hash == manifest.config_hash,
            format!("ledger {} vs manifest {}", ledger.config_hash, manifest.config_hash),
        );
        for (key, expected) in &ledger.input_hashes {
            // external inputs are rehashed in place
            if key.starts_with(DATASET_PREFIX) || Path::new(key).is_absolute() {
                let (ok, detail) = hash_matches(&resolve_artifact(run_dir, &dataset_root, key), expected);
                report.push(stage, &format!("input {key}"), ok, detail);
                continue;
            }
            match produced.get(key) {
                Some((producer, h)) => report.push(
                    stage,
                    &format!("input {key}"),
                    h == expected,
                    format!("consumed {expected}, {producer} recorded {h}"),
                ),
                None => report.push(
                    stage,
                    "chain",
                    false,
                    format!(
                        "chain break between {} and {stage}: no producer of {key}",
                        last_good.as_deref().or(previous.as_deref()).unwrap_or("run start")
                    ),
                ),
            }
        }
        for (key, n) in &ledger.input_counts {
            if let Some((producer, m)) = counts.get(key) {
                report.push(
                    stage,
                    &format!("count {key}"),
                    m == n,
                    format!("consumed {n}, {producer} produced {m}"),
                );
            }
        }
        for (key, expected) in &ledger.output_hashes {
            let (ok, detail) = hash_matches(&resolve_artifact(run_dir, &dataset_root, key), expected);
            report.push(stage, &format!("output {key}"), ok, detail);
            produced.insert(key.clone(), (stage.to_string(), expected.clone()));
        }
        for (key, n) in &ledger.output_counts {
            counts.insert(key.clone(), (stage.to_string(), *n));
        }
        last_good = Some(stage.to_string());
        previous = Some(stage.to_string());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StageLedger {
        let mut l = StageLedger::new("align", 7, "00000000deadbeef");
        l.metric("global_fitness", 0.9586)
            .metric("icp_fitness", 0.9874)
            .metric("inlier_rmse", 0.3179)
            .param("voxel", 0.05)
            .param("use_global", true)
            .param("k", 5usize)
            .param("note", "a, \"quoted\" value")
            .input_count("points", 12);
        l.input_hashes.insert("prism/prism_k5.ply".into(), "0123456789abcdef".into());
        l
    }

    #[test]
    fn canonical_json_is_sorted_and_a_fixpoint() {
        let s = canonical_json(&sample()).unwrap();
        assert!(!s.contains("\": ") && !s.contains('\n'), "{s}");
        assert!(s.find("\"config_hash\"").unwrap() < s.find("\"input_counts\"").unwrap());
        assert!(s.find("\"global_fitness\"").unwrap() < s.find("\"icp_fitness\"").unwrap());
        let back: StageLedger = serde_json::from_str(&s).unwrap();
        assert_eq!(back, sample());
        assert_eq!(canonical_json(&back).unwrap(), s);
    }

    #[test]
    fn summary_metrics_round_trip_exactly() {
        let back: StageLedger = serde_json::from_str(&canonical_json(&sample()).unwrap()).unwrap();
        assert_eq!(back.metrics["global_fitness"], 0.9586);
        assert_eq!(back.metrics["icp_fitness"], 0.9874);
        assert_eq!(back.metrics["inlier_rmse"], 0.3179);
        assert_eq!(back.params["voxel"], Scalar::Float(0.05));
        assert_eq!(back.params["k"], Scalar::Int(5));
    }

    #[test]
    fn csv_row_round_trip() {
        let row = sample().flatten();
        assert_eq!(decode_csv(&encode_csv(&row).unwrap()).unwrap(), row);
    }

    #[test]
    fn non_finite_metric_rejected() {
        let mut l = sample();
        l.metric("bad", f64::NAN);
        assert!(l.validate().is_err());
    }

    #[test]
    fn timing_is_kept_out_of_the_ledger() {
        let d = tempfile::tempdir().unwrap();
        let a = write_ledger(&sample(), &d.path().join("a"), Some(&Timing { started_at: 1.0, duration_s: 2.0 })).unwrap();
        let b = write_ledger(&sample(), &d.path().join("b"), Some(&Timing { started_at: 9.0, duration_s: 0.5 })).unwrap();
        assert_eq!(fs::read(&a.json).unwrap(), fs::read(&b.json).unwrap());
        assert_eq!(fs::read(&a.csv).unwrap(), fs::read(&b.csv).unwrap());
        assert!(d.path().join("a/align.timing.json").exists());
    }

    fn tiny_run(dir: &Path) {
        let order = ["first", "second", "third"];
        let mut m = RunManifest::new(serde_json::json!({"seed": 1}), "cfg", "/nonexistent");
        let mut prev: Option<String> = None;
        for (i, stage) in order.iter().enumerate() {
            let mut l = StageLedger::new(stage, 1, "cfg");
            let out = format!("{stage}/out.bin");
            fs::create_dir_all(dir.join(stage)).unwrap();
            fs::write(dir.join(&out), vec![i as u8; 16]).unwrap();
            l.output_hashes.insert(out.clone(), hash_file(&dir.join(&out)).unwrap());
            l.output_count("items", 16);
            if let Some(p) = &prev {
                l.input_hashes.insert(p.clone(), hash_file(&dir.join(p)).unwrap());
                l.input_count("items", 16);
            }
            write_ledger(&l, &dir.join(LEDGER_DIR), None).unwrap();
            m.record(dir, stage, &order).unwrap();
            prev = Some(out);
        }
        m.save(dir).unwrap();
    }

    #[test]
    fn verify_untouched_tampered_and_broken() {
        let d = tempfile::tempdir().unwrap();
        tiny_run(d.path());
        assert!(verify_run(d.path()).unwrap().passed());

        let p = d.path().join("second/out.bin");
        let mut bytes = fs::read(&p).unwrap();
        bytes[3] ^= 1;
        fs::write(&p, &bytes).unwrap();
        assert_eq!(verify_run(d.path()).unwrap().failed_stages(), vec!["second"]);
        bytes[3] ^= 1;
        fs::write(&p, &bytes).unwrap();

        fs::remove_file(d.path().join("ledgers/second.json")).unwrap();
        let r = verify_run(d.path()).unwrap();
        let chain: Vec<&Check> = r.failures().filter(|c| c.name == "chain").collect();
        assert_eq!(chain.len(), 1);
        assert!(chain[0].detail.contains("between first and third"), "{}", chain[0].detail);
    }

    #[test]
    fn missing_manifest_is_a_verification_error() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(verify_run(d.path()), Err(Error::VerificationFailed(_))));
    }
}
