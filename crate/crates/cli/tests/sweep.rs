use std::fs;
use std::path::Path;
use std::process::Command;

use qdcorr::model::PhysicsConfig;
use qdcorr::Mode;
use qdcorr_cli::{
    convergence_report, load_config, parse_modes, parse_point, run_sweep, write_convergence, Preset, Rung, SweepSpec,
};

/// Short pulse period and fast decay so a point takes well under a second.
fn quick() -> PhysicsConfig {
    let mut cfg = PhysicsConfig::default();
    cfg.system.radiative_rate = 0.05;
    cfg.pulses.period = 100.0;
    cfg.grid.t_stride = 8;
    cfg.grid.tau_fine = 10.0;
    cfg.grid.n_c = 4;
    cfg.analysis.nm_horizon = 10.0;
    cfg
}

fn spec(out: &Path, temperatures: Vec<f64>, lambdas: Vec<f64>, workers: usize) -> SweepSpec {
    let mut s = SweepSpec::new(quick(), temperatures, lambdas, vec![Mode::Exact, Mode::Qrt, Mode::Pme], out.to_path_buf());
    s.cache = out.join("cache");
    s.workers = workers;
    s
}

#[test]
fn empty_mode_list_is_rejected_before_any_compute() {
    assert!(parse_modes("").is_err());
    assert!(parse_modes(" , ").is_err());
    assert_eq!(parse_modes("pme,exact,exact").unwrap(), vec![Mode::Exact, Mode::Pme]);
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path(), vec![4.0], vec![1.0], 1);
    s.modes.clear();
    assert!(run_sweep(&s).is_err());
    assert!(!dir.path().join("results.csv").exists());

    let out = Command::new(env!("CARGO_BIN_EXE_qdcorr"))
        .args(["--point", "4,1", "--modes", ""])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no modes"));
}

#[test]
fn phonon_free_point_reproduces_the_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = SweepSpec::new(PhysicsConfig::default(), vec![4.0], vec![0.0], vec![Mode::Exact], dir.path().into());
    s.cache = dir.path().join("cache");
    s.non_markovianity = false;
    let recs = run_sweep(&s).unwrap();
    let f = recs[0].figures(Mode::Exact).unwrap();
    assert!((f.purity - 0.9976).abs() < 0.0015, "{}", f.purity);
    assert!((f.indistinguishability - 0.9976).abs() < 0.0015, "{}", f.indistinguishability);
    assert!((f.brightness - 0.9982).abs() < 0.0015, "{}", f.brightness);
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..3], &["4", "0", "exact"]);
    let p: f64 = row[3].parse().unwrap();
    assert!((p - 100.0 * f.purity).abs() < 1e-5);
}

#[test]
fn resume_recomputes_nothing_and_rewrites_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(dir.path(), vec![4.0, 30.0], vec![0.0, 1.0], 1);
    let first = run_sweep(&s).unwrap();
    let csv = fs::read(dir.path().join("results.csv")).unwrap();
    let heat = fs::read(dir.path().join("heatmaps/I_exact.csv")).unwrap();
    s.resume = true;
    let second = run_sweep(&s).unwrap();
    // records carry their wall time, so equality means nothing was rerun
    assert_eq!(first, second);
    assert_eq!(fs::read(dir.path().join("results.csv")).unwrap(), csv);
    assert_eq!(fs::read(dir.path().join("heatmaps/I_exact.csv")).unwrap(), heat);

    // a changed configuration invalidates the stored points
    s.base.system.radiative_rate = 0.04;
    let third = run_sweep(&s).unwrap();
    assert_ne!(third[0].config_hash, first[0].config_hash);
}

#[test]
fn worker_count_does_not_change_the_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_sweep(&spec(a.path(), vec![4.0, 20.0], vec![0.5, 2.0], 1)).unwrap();
    run_sweep(&spec(b.path(), vec![4.0, 20.0], vec![0.5, 2.0], 3)).unwrap();
    for name in ["results.csv", "heatmaps/P_exact.csv", "heatmaps/I_qrt.csv", "heatmaps/N.csv", "heatmaps/Q_I.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn results_and_heatmaps_have_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let recs = run_sweep(&spec(dir.path(), vec![4.0, 50.0], vec![0.0, 1.0, 3.0], 2)).unwrap();
    assert_eq!(recs.len(), 6);
    assert!(recs.iter().all(|r| r.error.is_none()));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), qdcorr_cli::RESULTS_HEADER);
    assert_eq!(lines.count(), 6 * 3);
    let heat = fs::read_to_string(dir.path().join("heatmaps/B_pme.csv")).unwrap();
    let rows: Vec<Vec<&str>> = heat.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], vec!["T_K/lambda", "0", "1", "3"]);
    assert!(rows[1..].iter().all(|r| r.len() == 4 && r[1..].iter().all(|x| x.parse::<f64>().is_ok())));
    let n: f64 = rows[1][1].parse().unwrap();
    assert!(n > 0.0 && n <= 1.0);
}

#[test]
fn failed_points_are_recorded_and_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qdcorr"))
        .args(["--point", "4,1", "--modes", "exact", "--no-nm", "--set", "grid.memory_cap_bytes=1000"])
        .arg("--out")
        .arg(dir.path())
        .env("QDCORR_CACHE_DIR", dir.path().join("cache"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("4,1,exact,,,"), "{row}");
    assert!(row.contains("cap"), "{row}");
    assert!(dir.path().join("cache").exists() || !row.is_empty());
}

#[test]
fn convergence_ladder_is_flat_without_phonons() {
    let mut base = quick();
    // every node sampled, so the memory depth cannot move the quadrature
    base.grid.pulse_t_stride = 1;
    let ladder = [Rung { dt: 0.5, n_c: 2, stride: 1 }, Rung { dt: 0.5, n_c: 4, stride: 1 }];
    assert!(convergence_report(&base, (4.0, 0.0), &ladder[..1], &[Mode::Exact], None).is_err());
    let rows = convergence_report(&base, (4.0, 0.0), &ladder, &[Mode::Exact, Mode::Qrt], None).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows[2..] {
        let d = r.delta.unwrap();
        assert!(d.iter().all(|x| *x < 1e-6), "{d:?}");
        assert_eq!(r.converged, Some(true));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("convergence.csv");
    write_convergence(&path, &rows).unwrap();
    assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 5);
}

#[test]
fn convergence_rungs_report_resource_failures() {
    let mut base = quick();
    base.grid.memory_cap_bytes = 1 << 20;
    let ladder = [Rung { dt: 0.5, n_c: 3, stride: 8 }, Rung { dt: 0.5, n_c: 12, stride: 8 }];
    let rows = convergence_report(&base, (4.0, 1.0), &ladder, &[Mode::Exact], None).unwrap();
    assert!(rows[0].error.is_none());
    assert!(rows[1].error.as_deref().unwrap().contains("cap"));
    assert_eq!(rows[1].converged, None);
}

#[test]
fn config_file_overrides_and_presets_compose() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, r#"{"bath": {"dot_radius": 4.5}, "grid": {"t_stride": 2}}"#).unwrap();
    let cfg = load_config(Preset::Accuracy, Some(&path), &["pulses.fwhm=2.5".into()]).unwrap();
    assert_eq!(cfg.bath.dot_radius, 4.5);
    assert_eq!(cfg.grid.t_stride, 2);
    assert_eq!(cfg.grid.dt, 0.25);
    assert_eq!(cfg.grid.n_c, 12);
    assert_eq!(cfg.pulses.fwhm, 2.5);
    assert_eq!(cfg.bath.mass_density, PhysicsConfig::default().bath.mass_density);
    assert!(load_config(Preset::Desk, None, &["bath.nope=1".into()]).is_err());
    fs::write(&path, r#"{"bath": {"radius": 4.5}}"#).unwrap();
    assert!(load_config(Preset::Desk, Some(&path), &[]).is_err());
    assert_eq!(parse_point(" 4.5 , 2 ").unwrap(), (4.5, 2.0));
    assert!(parse_point("4").is_err());
    assert_eq!("0.25:12:4".parse::<Rung>().unwrap(), Rung { dt: 0.25, n_c: 12, stride: 4 });
}
