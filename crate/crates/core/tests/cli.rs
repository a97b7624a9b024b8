//! End-to-end pipeline and command-line behaviour.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use chiralwave::cli::{run_pipeline, PipelineOptions, RunConfig};
use chiralwave::coupling::{average_directionality, AveragingMask, MaskKind, Weighting};
use chiralwave::io::{parse_field_file, strip_provenance};
use chiralwave::polarization::DipoleState;
use common::{fixture, synthetic_expected};

fn homogeneous() -> RunConfig {
    RunConfig::load(&fixture("homogeneous.toml")).unwrap()
}

fn run(dir: &Path, field: Option<&Path>) -> chiralwave::cli::PipelineReport {
    let opts = PipelineOptions {
        out_dir: dir.to_path_buf(),
        field: field.map(Path::to_path_buf),
        seed: 7,
    };
    run_pipeline(&homogeneous(), &opts).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    strip_provenance(&text)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn homogeneous_pipeline_reproduces_light_lines() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(dir.path(), None);
    assert!(report.passed(), "{:?}", report.checks);
    let n = 2.9;
    let ly = 1000.0 / 433.0;
    let rows = csv_rows(&dir.path().join("bands.csv"));
    assert_eq!(rows.len(), 5 * 6);
    for chunk in rows.chunks(6) {
        let k: f64 = chunk[0][0].parse().unwrap();
        let mut got: Vec<f64> = chunk.iter().map(|r| r[2].parse().unwrap()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut lines = Vec::new();
        for i in -3i32..=3 {
            for j in -6i32..=6 {
                let (gx, gy) = (k + i as f64, j as f64 / ly);
                lines.push((gx * gx + gy * gy).sqrt() / n);
            }
        }
        lines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, e) in got.iter().zip(&lines) {
            assert!(((g - e) / e).abs() < 1e-6, "k = {k}: {g} vs {e}");
        }
    }
    for name in [
        "eps.grid",
        "mode.field",
        "pol.csv",
        "cpoints.csv",
        "objective.csv",
        "compare.csv",
        "report.txt",
        "D_opt.ppm",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    // Every output carries the same configuration hash.
    let hash = |p: &str| {
        fs::read_to_string(dir.path().join(p))
            .unwrap()
            .lines()
            .find(|l| l.starts_with("# config sha256"))
            .unwrap()
            .to_string()
    };
    assert_eq!(hash("pol.csv"), hash("mode.field"));
}

#[test]
fn ingested_field_gives_identical_artifacts() {
    let solved = tempfile::tempdir().unwrap();
    let ingested = tempfile::tempdir().unwrap();
    run(solved.path(), None);
    let report = run(ingested.path(), Some(&solved.path().join("mode.field")));
    assert!(report.passed());
    assert!(!ingested.path().join("bands.csv").exists());
    for path in &report.artifacts {
        let name = path.file_name().unwrap();
        assert_eq!(
            fs::read(path).unwrap(),
            fs::read(solved.path().join(name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, threads) in dirs.iter().zip([1, 3]) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run(dir.path(), None));
    }
    let names: Vec<_> = fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    for name in names {
        let a = fs::read(dirs[0].path().join(&name)).unwrap();
        let b = fs::read(dirs[1].path().join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

#[test]
fn synthetic_fixture_matches_reference_average() {
    let mode = parse_field_file(&fixture("synthetic.field")).unwrap();
    let (expected, count) = synthetic_expected();
    let mask = AveragingMask::for_mode(&mode, MaskKind::Half);
    assert_eq!(mask.count(), count);
    let alpha = 0.53f64.atan2(0.848);
    let d = DipoleState::from_alpha_delta(alpha, 1.5 * std::f64::consts::PI).unwrap();
    let got = average_directionality(&d, &mode, &mask, Weighting::Uniform).unwrap();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

fn binary() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chiralwave"));
    c.env_remove("CHIRALWAVE_THREADS");
    c
}

#[test]
fn subcommands_on_the_synthetic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let field = fixture("synthetic.field");
    let out = binary()
        .args(["directionality", "--mode"])
        .arg(&field)
        .args(["--dipole", "0,-0.178pi", "--mask", "half", "--out-dir"])
        .arg(dir.path())
        .args(["--pixmap", "D.ppm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("average directionality"));
    assert_eq!(csv_rows(&dir.path().join("D.csv")).len(), 6 * 40);
    let ppm = fs::read(dir.path().join("D.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6"));

    for args in [
        vec!["polarization"],
        vec!["purcell", "--dipole", "0,0.25pi"],
        vec!["optimize", "--mask", "full"],
        vec!["report", "--dipoles", "opt,circ,lin"],
    ] {
        let out = binary()
            .args(&args)
            .arg("--mode")
            .arg(&field)
            .arg("--out-dir")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in [
        "pol.csv",
        "cpoints.csv",
        "F.csv",
        "objective.csv",
        "optimize.txt",
        "compare.csv",
        "map_lin.csv",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn failures_exit_nonzero_with_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["polarization", "--mode"])
        .arg(fixture("missing_hz.field"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ingest") && err.contains("Hz"), "{err}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "lattice_constant_a = 433.0\nholes = 3\n").unwrap();
    let out = binary().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config") && err.contains("holes"), "{err}");

    let out = binary()
        .args(["geometry", "--out", "x.grid"])
        .env("CHIRALWAVE_THREADS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn run_subcommand_writes_the_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["run", "--threads", "2", "--seed", "3", "--config"])
        .arg(fixture("homogeneous.toml"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("Self-checks") && !report.contains("FAIL"));
}
