use std::ffi::{c_char, CStr, CString};
use std::ptr;

use agmon_ffi::*;

fn last_error() -> String {
    let mut needed = 0usize;
    unsafe {
        assert_eq!(agmon_last_error(ptr::null_mut(), 0, &mut needed), AgmonStatus::BufferTooSmall);
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(agmon_last_error(buf.as_mut_ptr(), buf.len(), ptr::null_mut()), AgmonStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn model(name: &str) -> *mut AgmonModel {
    let name = CString::new(name).unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { agmon_model_new(name.as_ptr(), ptr::null(), &mut m) };
    assert_eq!(st, AgmonStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(agmon_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn unknown_model_sets_status_and_message() {
    let name = CString::new("no-such-model").unwrap();
    let mut m = ptr::null_mut();
    let st = unsafe { agmon_model_new(name.as_ptr(), ptr::null(), &mut m) };
    assert_eq!(st, AgmonStatus::UnknownModel);
    assert!(m.is_null());
    assert!(last_error().contains("no-such-model"));
}

#[test]
fn null_pointers_are_reported_not_dereferenced() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { agmon_model_new(ptr::null(), ptr::null(), &mut m) }, AgmonStatus::NullPointer);
    assert_eq!(unsafe { agmon_poisson_multiplier(0.0, 0.1, 0.1, ptr::null_mut()) }, AgmonStatus::NullPointer);
    let (mut e, mut w, mut g) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { agmon_model_info(ptr::null(), &mut e, &mut w, &mut g) }, AgmonStatus::NullPointer);
    unsafe { agmon_model_free(ptr::null_mut()) };
    unsafe { agmon_phase_series_free(ptr::null_mut()) };
}

#[test]
fn bad_params_json_is_an_invalid_argument() {
    let name = CString::new("separable-torus").unwrap();
    let params = CString::new("{not json").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { agmon_model_new(name.as_ptr(), params.as_ptr(), &mut m) }, AgmonStatus::InvalidArgument);
}

#[test]
fn model_info_and_excess() {
    let m = model("separable-torus");
    let (mut e, mut w, mut margin, mut ex) = (0.0, 0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(agmon_model_info(m, &mut e, &mut w, &mut margin), AgmonStatus::Ok);
        assert_eq!(agmon_model_excess(m, 0.0, 0.0, &mut ex), AgmonStatus::Ok);
        agmon_model_free(m);
    }
    assert!(w > 0.0 && margin > 0.0);
    assert!(ex >= margin);
}

#[test]
fn poisson_multiplier_matches_closed_form() {
    let mut out = 0.0;
    unsafe { assert_eq!(agmon_poisson_multiplier(0.75, 0.2, 0.05, &mut out), AgmonStatus::Ok) };
    let want = (-(0.2 / 0.05) * (1.0f64 + 0.75 * 0.75).sqrt()).exp();
    assert!((out - want).abs() <= 1e-15 * want);
    assert_eq!(unsafe { agmon_poisson_multiplier(0.0, 0.1, 0.0, &mut out) }, AgmonStatus::InvalidArgument);
}

#[test]
fn halfplane_poisson_decays_the_constant_at_unit_rate() {
    let n = 16;
    let re = vec![1.0; n];
    let mut out = vec![0.0; n];
    let (h, rho) = (0.1, 0.2);
    let st = unsafe {
        agmon_halfplane_poisson(re.as_ptr(), ptr::null(), n, 2.0 * std::f64::consts::PI, h, rho, out.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(st, AgmonStatus::Ok);
    for v in out {
        assert!((v - (-rho / h).exp()).abs() <= 1e-14);
    }
    let mut frac = 1.0;
    let st = unsafe {
        agmon_exterior_mass_fraction(re.as_ptr(), ptr::null(), n, 2.0 * std::f64::consts::PI, h, 0.5, &mut frac)
    };
    assert_eq!(st, AgmonStatus::Ok);
    assert!(frac <= 1e-14);
}

#[test]
fn non_power_of_two_length_is_rejected() {
    let re = vec![1.0; 12];
    let mut out = vec![0.0; 12];
    let st = unsafe { agmon_halfplane_poisson(re.as_ptr(), ptr::null(), 12, 1.0, 0.1, 0.1, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, AgmonStatus::InvalidArgument);
    assert!(last_error().contains("power of two"));
}

#[test]
fn hs_apply_agrees_with_the_spectral_path() {
    let (lambda, h) = (4.0, 0.025);
    let d = [0.05, 0.2, 0.35, 0.5];
    let n = d.len();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        p[i * n + i] = d[i];
        if i + 1 < n {
            p[i * n + i + 1] = 0.01;
            p[(i + 1) * n + i] = 0.01;
        }
    }
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    unsafe {
        assert_eq!(agmon_hs_apply(p.as_ptr(), n, lambda, h, 0, a.as_mut_ptr()), AgmonStatus::Ok);
        assert_eq!(agmon_hs_apply(p.as_ptr(), n, lambda, h, 1, b.as_mut_ptr()), AgmonStatus::Ok);
    }
    let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-6, "entrywise error {err}");
}

#[test]
fn asymmetric_matrix_is_rejected() {
    let p = [0.1, 0.5, 0.0, 0.1];
    let mut out = [0.0; 4];
    assert_eq!(unsafe { agmon_hs_apply(p.as_ptr(), 2, 4.0, 0.025, 1, out.as_mut_ptr()) }, AgmonStatus::InvalidArgument);
}

#[test]
fn flat_phase_is_the_poisson_exponent() {
    let m = model("halfplane-unit");
    let xi = [0.0, 0.5, 1.0];
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(agmon_phase_series_new(m, 6, xi.as_ptr(), xi.len(), 0, &mut s), AgmonStatus::Ok);
        for x in xi {
            let (mut p, mut dp) = (0.0, 0.0);
            assert_eq!(agmon_phase_eval(s, x, 0.3, &mut p, &mut dp), AgmonStatus::Ok);
            // Agmon normalization removes the zero-section rate.
            let want = (1.0 + x * x).sqrt() - 1.0;
            assert!((dp - want).abs() <= 1e-12);
            assert!((p - 0.3 * want).abs() <= 1e-12);
        }
        agmon_phase_series_free(s);
        agmon_model_free(m);
    }
}

#[test]
fn run_config_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": [0.1, 0.05]}"#).unwrap();
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    let mut failed = 99usize;
    let st = unsafe { agmon_run_config(path.as_ptr(), out.as_ptr(), ptr::null(), &mut failed) };
    assert_eq!(st, AgmonStatus::Ok, "{}", last_error());
    assert_eq!(failed, 0);
    assert!(dir.path().join("out").join("decay-sandwich.json").is_file());
}

#[test]
fn run_config_reports_failing_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    // A sub-roundoff tolerance on the Poisson-realized torus rate cannot hold.
    std::fs::write(
        &cfg,
        r#"{"kind": "decay-sandwich", "model": "separable-torus", "h_sweep": [0.04], "tolerance": 1e-12,
            "rho_grid": [0.02, 0.04, 0.06, 0.08], "grid": {"tangential": 8, "per_h": 20}}"#,
    )
    .unwrap();
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut failed = 0usize;
    let st = unsafe { agmon_run_config(path.as_ptr(), out.as_ptr(), ptr::null(), &mut failed) };
    assert_eq!(st, AgmonStatus::VerdictFailed, "{}", last_error());
    assert_eq!(failed, 1);
}

#[test]
fn run_config_errors_keep_the_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"kind": "decay-sandwich", "model": "halfplane-unit", "h_sweep": []}"#).unwrap();
    let path = CString::new(cfg.to_str().unwrap()).unwrap();
    let st = unsafe { agmon_run_config(path.as_ptr(), ptr::null(), ptr::null(), ptr::null_mut()) };
    assert_eq!(st, AgmonStatus::InvalidArgument);
    assert!(last_error().contains("h_sweep"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/agmon_lab.h")).unwrap();
    for f in [
        "agmon_version",
        "agmon_last_error",
        "agmon_model_new",
        "agmon_model_free",
        "agmon_model_info",
        "agmon_model_excess",
        "agmon_poisson_multiplier",
        "agmon_halfplane_poisson",
        "agmon_exterior_mass_fraction",
        "agmon_hs_apply",
        "agmon_phase_series_new",
        "agmon_phase_series_free",
        "agmon_phase_eval",
        "agmon_run_config",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("AGMON_STATUS_VERDICT_FAILED = 8"));
    assert!(header.contains("typedef struct AgmonModel AgmonModel;"));
}
