use std::ffi::{CStr, CString};
use std::ptr;

use sogmnav::annotate::{Sogm, SogmConfig, CH_DYNAMIC};
use sogmnav::geom::Point2;
use sogmnav::sim::{compute_metrics, run_session, SessionLog};
use sogmnav::srm::{sogm_to_srm, SrmParams};
use sogmnav_ffi::*;

const CORRIDOR: &str = "\
limit -2 -2
limit 14 -2
limit 14 2
limit -2 2
wall -2 -2 14 -2 2
wall -2 2 14 2 2
goal 6 -1.5
goal 6 1.5
waypoint 0 0
waypoint 10 0
";

const LIGHT: &str = "\
[sim]
n_actors = 0
timeout = 30.0
[sim.lidar]
rings = 8
azimuth_step_deg = 2.0
";

fn last_error() -> String {
    let p = sogmnav_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn config(text: &str) -> *mut SogmnavConfig {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_config_from_toml(text.as_ptr(), &mut cfg) }, SogmnavStatus::Ok);
    cfg
}

fn world(text: &str) -> *mut SogmnavWorld {
    let text = CString::new(text).unwrap();
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_world_parse(text.as_ptr(), &mut w) }, SogmnavStatus::Ok);
    w
}

#[test]
fn session_through_handles_matches_the_library() {
    let cfg = config(LIGHT);
    let w = world(CORRIDOR);
    let mut log = ptr::null_mut();
    let status = unsafe { sogmnav_run_session(w, cfg, SogmnavPredictor::IgnoreDyn, 3, &mut log) };
    assert_eq!(status, SogmnavStatus::Ok);
    let mut m = SogmnavMetrics::default();
    assert_eq!(unsafe { sogmnav_log_metrics(log, &mut m) }, SogmnavStatus::Ok);

    let direct_cfg = sogmnav::config::ExperimentConfig::from_toml(LIGHT).unwrap();
    let direct_world = sogmnav::sim::World::parse(CORRIDOR).unwrap();
    let direct = run_session(
        &direct_world,
        &direct_cfg.scenario(),
        sogmnav::predict::PredictorKind::IgnoreDyn,
        3,
    )
    .unwrap();
    let dm = compute_metrics(&direct).unwrap();
    assert_eq!(unsafe { sogmnav_log_tick_count(log) }, direct.ticks.len());
    assert_eq!((m.t_f, m.complete, m.risk_pct, m.aas), (dm.t_f, dm.complete, dm.risk_pct, dm.aas));
    assert!(m.complete);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.log").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sogmnav_log_save(log, path.as_ptr()) }, SogmnavStatus::Ok);
    let bytes = std::fs::read(dir.path().join("s.log")).unwrap();
    assert_eq!(bytes, direct.to_bytes());
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_log_load(path.as_ptr(), &mut back) }, SogmnavStatus::Ok);
    assert_eq!(unsafe { sogmnav_log_tick_count(back) }, direct.ticks.len());

    unsafe {
        sogmnav_log_free(back);
        sogmnav_log_free(log);
        sogmnav_world_free(w);
        sogmnav_config_free(cfg);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    sogmnav_clear_last_error();
    assert!(sogmnav_last_error_message().is_null());

    let bad = CString::new("[planner]\nv_maxx = 1.0\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_config_from_toml(bad.as_ptr(), &mut cfg) }, SogmnavStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("v_maxx"), "{}", last_error());

    let bad_world = CString::new("limit 0 0\nwall 0 0 1\n").unwrap();
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_world_parse(bad_world.as_ptr(), &mut w) }, SogmnavStatus::Format);
    assert!(last_error().contains("byte 10"), "{}", last_error());

    let missing = CString::new("/nonexistent/dir/x.log").unwrap();
    let mut log = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_log_load(missing.as_ptr(), &mut log) }, SogmnavStatus::Io);

    assert_eq!(unsafe { sogmnav_config_default(ptr::null_mut()) }, SogmnavStatus::NullPointer);
    assert!(last_error().contains("out_config"));
    let mut m = SogmnavMetrics::default();
    assert_eq!(unsafe { sogmnav_log_metrics(ptr::null(), &mut m) }, SogmnavStatus::NullPointer);
    assert_eq!(unsafe { sogmnav_log_tick_count(ptr::null()) }, 0);

    let w = world(CORRIDOR);
    let cfg = config(LIGHT);
    let mut log = ptr::null_mut();
    let status = unsafe { sogmnav_run_session(w, cfg, SogmnavPredictor::External, 0, &mut log) };
    assert_ne!(status, SogmnavStatus::Ok);
    assert!(log.is_null());
    unsafe {
        sogmnav_world_free(w);
        sogmnav_config_free(cfg);
        sogmnav_world_free(ptr::null_mut());
    }
}

#[test]
fn last_error_is_per_thread() {
    let bad = CString::new("nonsense = 1\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_config_from_toml(bad.as_ptr(), &mut cfg) }, SogmnavStatus::Config);
    std::thread::spawn(|| assert!(sogmnav_last_error_message().is_null()))
        .join()
        .unwrap();
    assert!(!sogmnav_last_error_message().is_null());
}

#[test]
fn risk_samples_match_the_library() {
    let grid = SogmConfig::default();
    let geometry = grid.geometry(Point2::new(0.0, 0.0), 10.0);
    let mut sogm = Sogm::zeros(geometry);
    let (row, col) = geometry.cell_of(&Point2::new(1.0, 0.5)).unwrap();
    for k in 0..grid.n_layers() {
        sogm.set(k, row, col, CH_DYNAMIC, 1.0);
    }
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("g.sogm");
    sogm.save(&file, None).unwrap();
    let expected = sogm_to_srm(&sogm, &SrmParams::default());

    let cfg = config("");
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut srm = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_srm_from_sogm_file(path.as_ptr(), cfg, &mut srm) }, SogmnavStatus::Ok);
    for (x, y, t) in [(1.0, 0.5, 10.0), (1.3, 0.4, 11.0), (-3.0, 2.0, 12.0), (40.0, 0.0, 10.0)] {
        let mut s = SogmnavRiskSample::default();
        assert_eq!(unsafe { sogmnav_srm_sample(srm, x, y, t, &mut s) }, SogmnavStatus::Ok);
        let e = expected.sample(x, y, t);
        assert_eq!(s.static_value, e.static_value);
        assert_eq!(s.dynamic_value, e.dynamic_value);
        assert_eq!(s.dynamic_grad, [e.dynamic_grad.x, e.dynamic_grad.y]);
        assert_eq!(s.clamped, e.clamped);
    }
    let mut s = SogmnavRiskSample::default();
    assert_eq!(unsafe { sogmnav_srm_sample(srm, 1.0, 0.5, 10.0, &mut s) }, SogmnavStatus::Ok);
    assert!(s.dynamic_value > 0.5);
    assert_eq!(unsafe { sogmnav_srm_sample(srm, f64::NAN, 0.0, 10.0, &mut s) }, SogmnavStatus::InvalidInput);

    let truncated = dir.path().join("t.sogm");
    std::fs::write(&truncated, &std::fs::read(&file).unwrap()[..100]).unwrap();
    let tpath = CString::new(truncated.to_str().unwrap()).unwrap();
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_srm_from_sogm_file(tpath.as_ptr(), cfg, &mut bad) }, SogmnavStatus::Format);
    unsafe {
        sogmnav_srm_free(srm);
        sogmnav_config_free(cfg);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sogmnav_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sogmnav.h")).unwrap();
    let lib = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exported: Vec<&str> = lib
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exported.len() >= 15);
    for name in exported {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"sogmnav.h\"\nint main(void) { SogmnavConfig *c = 0; \
         SogmnavStatus s = sogmnav_config_default(&c); sogmnav_config_free(c); return (int)s; }\n",
    )
    .unwrap();
    let out = std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output();
    match out {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("no C compiler ({cc}): {e}; header compile check skipped"),
    }
}

#[test]
fn loaded_logs_survive_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x.log");
    let cfg = sogmnav::config::ExperimentConfig::from_toml(LIGHT).unwrap();
    let w = sogmnav::sim::World::parse(CORRIDOR).unwrap();
    let log = run_session(&w, &cfg.scenario(), sogmnav::predict::PredictorKind::NoPreds, 1).unwrap();
    log.save(&file).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sogmnav_log_load(path.as_ptr(), &mut h) }, SogmnavStatus::Ok);
    let mut m = SogmnavMetrics::default();
    assert_eq!(unsafe { sogmnav_log_metrics(h, &mut m) }, SogmnavStatus::Ok);
    let back = SessionLog::load(&file).unwrap();
    assert_eq!(m.t_f, compute_metrics(&back).unwrap().t_f);
    unsafe { sogmnav_log_free(h) };
}
