use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use modac_ffi::*;

fn last_error() -> String {
    let p = modac_last_error();
    assert!(!p.is_null(), "no error message stored");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
seeds = [0]
train_frames = 1280
transfer_frames = 640
[network.torso]
kind = "mlp"
hidden = [8]
[hp]
batch = 4
inner_steps = 2
"#;

fn small_config() -> *mut ModacConfig {
    let toml = CString::new(SMALL).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { modac_config_new(toml.as_ptr(), &mut cfg) },
        ModacStatus::Ok
    );
    assert!(modac_last_error().is_null());
    cfg
}

#[test]
fn defaults_round_trip_through_toml() {
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { modac_config_new(ptr::null(), &mut cfg) },
        ModacStatus::Ok
    );
    let s = unsafe { modac_config_to_toml(cfg) };
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    assert!(text.contains("switching_cost = 0.05"));
    unsafe {
        modac_string_free(s);
        modac_config_free(cfg);
    }
}

#[test]
fn config_errors_are_reported() {
    let bad = CString::new("[hp]\nno_such_key = 1").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { modac_config_new(bad.as_ptr(), &mut cfg) },
        ModacStatus::Config
    );
    assert!(cfg.is_null());
    assert!(last_error().contains("no_such_key"));

    let cfg = small_config();
    let key = CString::new("hp.gamma").unwrap();
    let value = CString::new("3").unwrap();
    assert_eq!(
        unsafe { modac_config_set(cfg, key.as_ptr(), value.as_ptr()) },
        ModacStatus::Config
    );
    // Rejected overrides leave the config as it was.
    let text = unsafe { modac_config_to_toml(cfg) };
    assert!(unsafe { CStr::from_ptr(text) }
        .to_str()
        .unwrap()
        .contains("gamma = 0.99"));
    unsafe {
        modac_string_free(text);
        modac_config_free(cfg);
    }
}

#[test]
fn null_arguments_are_rejected() {
    assert_eq!(
        unsafe { modac_config_new(ptr::null(), ptr::null_mut()) },
        ModacStatus::InvalidArgument
    );
    assert!(last_error().contains("out"));
    let mut l = ptr::null_mut();
    assert_eq!(
        unsafe { modac_learner_new(ptr::null(), 0, &mut l) },
        ModacStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { modac_learner_iterate(ptr::null_mut(), ptr::null_mut()) },
        ModacStatus::InvalidArgument
    );
    assert_eq!(unsafe { modac_learner_frames(ptr::null()) }, 0);
    assert!(unsafe { modac_config_to_toml(ptr::null()) }.is_null());
    unsafe {
        modac_config_free(ptr::null_mut());
        modac_learner_free(ptr::null_mut());
        modac_string_free(ptr::null_mut());
    }
}

#[test]
fn learner_steps_and_reports() {
    let cfg = small_config();
    let mut l = ptr::null_mut();
    assert_eq!(
        unsafe { modac_learner_new(cfg, 4, &mut l) },
        ModacStatus::Ok
    );
    let mut r = ModacReport::default();
    for _ in 0..3 {
        assert_eq!(unsafe { modac_learner_iterate(l, &mut r) }, ModacStatus::Ok);
    }
    // Two inner rollouts of 4 x 20 frames plus validation, three times.
    assert_eq!(r.frames, 3 * 3 * 80);
    assert_eq!(unsafe { modac_learner_frames(l) }, r.frames);
    assert!((0.0..=1.0).contains(&r.option_pick_frac));
    assert!(r.meta_grad_norm.is_finite());
    unsafe {
        modac_learner_free(l);
        modac_config_free(cfg);
    }
}

#[test]
fn pipeline_writes_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut s = ModacSummary::default();
    assert_eq!(
        unsafe { modac_pipeline(cfg, 0, path.as_ptr(), &mut s) },
        ModacStatus::Ok
    );
    assert!(s.train_frames >= 1280);
    assert!(s.transfer_frames >= 640);
    assert!(dir.path().join("train/record.json").exists());
    assert!(dir.path().join("transfer/metrics_mean.csv").exists());
    unsafe { modac_config_free(cfg) };
}

#[test]
fn selftest_passes() {
    let (mut passed, mut total) = (0, 0);
    assert_eq!(
        unsafe { modac_selftest(&mut passed, &mut total) },
        ModacStatus::Ok
    );
    assert_eq!(passed, total);
    assert!(total >= 7);
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(modac_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/modac.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "modac_config_new",
        "modac_learner_iterate",
        "modac_pipeline",
        "modac_last_error",
        "MODAC_STATUS_NUMERIC",
    ] {
        assert!(text.contains(f), "{f} missing from the header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"modac.h\"\nint main(void) { ModacReport r; (void)r; return MODAC_STATUS_OK; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .expect("a C compiler on PATH");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
