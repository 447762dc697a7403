use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use splatforge::stages::{alignment_file, asset_file, prism_file, AlignmentRecord, STAGES};

struct Fixture {
    _root: tempfile::TempDir,
    dataset: PathBuf,
    full: PathBuf,
}

fn splatforge(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatforge"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let dataset = root.path().join("dataset");
        let none = Path::new("unused.json");
        let o = splatforge(&["synth", "--seed", "7", "--frames", "24"], none, &dataset);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let full = root.path().join("full");
        let o = splatforge(&["run"], &dataset.join("pipeline.json"), &full);
        assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
        Fixture {
            _root: root,
            dataset,
            full,
        }
    })
}

fn config() -> PathBuf {
    fixture().dataset.join("pipeline.json")
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".timing.json") {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn stages_run_one_by_one_match_the_full_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    for stage in STAGES {
        let o = splatforge(&[stage], &config(), dir.path());
        assert!(matches!(o.status.code(), Some(0 | 2)), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (tree(&f.full), tree(dir.path()));
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{pa} differs");
    }
}

#[test]
fn verify_exit_codes() {
    let f = fixture();
    let o = splatforge(&["verify"], &config(), &f.full);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));

    let copy = tempfile::tempdir().unwrap();
    for (rel, bytes) in tree(&f.full) {
        let p = copy.path().join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }
    let target = copy.path().join("match/matches.csv");
    let mut bytes = fs::read(&target).unwrap();
    bytes.push(b'\n');
    fs::write(&target, bytes).unwrap();
    let o = splatforge(&["verify"], &config(), copy.path());
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL match"), "{stdout}");
    assert!(!stdout.contains("FAIL odometry"), "{stdout}");
}

#[test]
fn missing_upstream_artifact_is_an_error_not_a_gate() {
    let dir = tempfile::tempdir().unwrap();
    let o = splatforge(&["align"], &config(), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("align"));
}

#[test]
fn trajectory_initialization_skips_global_registration() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    for (rel, bytes) in tree(&f.full) {
        let p = dir.path().join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }
    let o = splatforge(&["align", "--init-from-trajectory", "--k", "50"], &config(), dir.path());
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: AlignmentRecord = serde_json::from_slice(&fs::read(dir.path().join(alignment_file(50))).unwrap()).unwrap();
    assert_eq!(rec.global_fitness, None);
    assert!(rec.passed && rec.icp_fitness > 0.9, "{rec:?}");
    let ledger = fs::read_to_string(dir.path().join("ledgers/align.json")).unwrap();
    assert!(ledger.contains("\"override.init_from_trajectory\":true"));
}

#[test]
fn prism_on_an_external_input_matches_the_run() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("colored.ply");
    fs::copy(f.full.join("colorize/map_colorized.ply"), &input).unwrap();
    let run = dir.path().join("run");
    let o = splatforge(&["prism", "--input", input.to_str().unwrap()], &config(), &run);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for k in [1, 5, 10, 20, 30, 50, 100] {
        assert_eq!(fs::read(run.join(prism_file(k))).unwrap(), fs::read(f.full.join(prism_file(k))).unwrap());
    }
    let o = splatforge(&["verify"], &config(), &run);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn k_override_limits_the_assets() {
    let dir = tempfile::tempdir().unwrap();
    let o = splatforge(&["run", "--k", "5,50,100"], &config(), dir.path());
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
    let assets: Vec<usize> = [1, 5, 10, 20, 30, 50, 100]
        .into_iter()
        .filter(|&k| dir.path().join(asset_file(k)).exists())
        .collect();
    assert_eq!(assets, [5, 50, 100]);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.json");
    fs::write(&cfg, "{\"face_size\": 128, \"typo\": 1}").unwrap();
    let o = splatforge(&["run"], &cfg, &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(1));
}
