use std::fs;
use std::path::Path;
use std::process::Command;

use fourpi::field::{read_field_of, FieldKind};
use fourpi::log::read_section;

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"{{
  "seed": 3,
  "scene": {{
    "object_voxels": [16, 16], "pad_voxels": [8, 8], "spacing_nm": [50.0, 50.0],
    "phase_degrees": [3, 3], "object": {{"kind": "filaments", "count": 2, "width_nm": 40.0}}
  }},
  "irgnm": {{"max_iters": 4}}{extra}
}}"#
    );
    let p = dir.join("run.json");
    fs::write(&p, text).unwrap();
    p
}

fn fourpi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fourpi")).args(args).output().unwrap()
}

#[test]
fn simulate_then_reconstruct_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let sim = dir.path().join("sim");
    let o = fourpi(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let noisy = read_field_of(&sim.join("data_noisy.json"), FieldKind::Data).unwrap();
    assert_eq!(noisy.grid().dims(), [32, 32]);
    assert!(sim.join("object_true.pgm").exists() && sim.join("object_true.colorbar.txt").exists());

    let cfg2 = small_config(dir.path(), r#", "data": "sim/data_noisy.json""#);
    let rec = dir.path().join("rec");
    let o = fourpi(&["reconstruct", "--config", cfg2.to_str().unwrap(), "--out", rec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(rec.join("reconstruct.log")).unwrap();
    let (cols, rows) = read_section(&log, "trace").unwrap();
    assert_eq!(cols[0], "n");
    assert_eq!(rows.len(), 5);
    // no ground truth for supplied data
    assert!(rows[1][3].is_nan());
    let f = read_field_of(&rec.join("object_rec.json"), FieldKind::Object).unwrap();
    assert!(f.min() >= 0.0);
    assert!(log.contains("# status: ok"));
}

#[test]
fn zero_peak_gives_zero_data() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"scene": {"object_voxels": [8, 8], "pad_voxels": [4, 4], "spacing_nm": [50.0, 50.0], "phase_degrees": [2, 2], "peak": 0.0}}"#;
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, text).unwrap();
    let o = fourpi(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let g = read_field_of(&dir.path().join("data_noisy.json"), FieldKind::Data).unwrap();
    assert!(g.values().iter().all(|&v| v == 0.0));
}

#[test]
fn psf_images_for_each_phase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let o = fourpi(&["psf", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    for n in [2, 4] {
        for i in 0..3 {
            let p = dir.path().join(format!("psf_n{n}_phi{i}.pgm"));
            assert!(fs::read(&p).unwrap().starts_with(b"P5\n32 32\n255\n"));
        }
    }
    let bar = fs::read_to_string(dir.path().join("psf_n2_phi0.colorbar.txt")).unwrap();
    assert!(bar.contains("scale_bar_nm 8e2"));
    let log = fs::read_to_string(dir.path().join("psf.log")).unwrap();
    let (_, rows) = read_section(&log, "psf").unwrap();
    // rows: kernel, phi, min, max, centre, fwhm; φ = π is dark at the centre
    assert!(rows[2][4] < 1e-12 * rows[0][4]);
    // n = 4 narrows the central fringe
    assert!(rows[3][5] <= rows[0][5]);
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"irgnm": {"decay": 1.5}}"#).unwrap();
    let o = fourpi(&["reconstruct", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, r#"{"data": "missing.json"}"#).unwrap();
    let o = fourpi(&["reconstruct", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_check_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    // an absurd tolerance window makes the reference rate checks fail
    let text = r#"{"rates": {"size": 64, "linear_tolerance": 1e-9, "noisy_points": 5, "noisy_log10_delta": [-4.0, -2.0], "noisy_max_iters": 60}}"#;
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, text).unwrap();
    let o = fourpi(&["rates", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let log = fs::read_to_string(dir.path().join("rates.log")).unwrap();
    assert!(log.contains("# check: linear_rate rho=1e0 FAIL"));
}
