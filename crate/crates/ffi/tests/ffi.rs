use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use burgers_lab_ffi::*;

fn last_error() -> String {
    let mut need = 0usize;
    unsafe {
        assert_eq!(bl_last_error(ptr::null_mut(), 0, &mut need), BlStatus::Ok);
        let mut buf = vec![0 as c_char; need];
        assert_eq!(bl_last_error(buf.as_mut_ptr(), need, &mut need), BlStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn scalar_entry_points() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(bl_phi_flow(2.0, 1.0, 0.0, 4.0, 0.0, &mut v), BlStatus::Ok);
        assert!((v - 4.0).abs() < 1e-9, "{v}");
        assert_eq!(bl_fixed_point_bound(1.0, 1.0, 0.5, 1.0, &mut v), BlStatus::Ok);
        assert!(v >= 1.0);
        assert_eq!(bl_phi_flow(0.5, 1.0, 0.0, 1.0, 0.0, &mut v), BlStatus::InvalidParameter);
        assert!(last_error().contains("kappa"));
        assert_eq!(bl_phi_flow(2.0, 1.0, 0.0, 1.0, 0.0, ptr::null_mut()), BlStatus::NullPointer);
    }
}

#[test]
fn layout_handles_report_radii() {
    unsafe {
        let radii = [4.0, 6.0, 10.0, 11.0];
        let mut layout = ptr::null_mut();
        assert_eq!(bl_layout_new(radii.as_ptr(), radii.len(), 2.0, &mut layout), BlStatus::Ok);
        let (mut lo, mut hi) = (0.0, 0.0);
        assert_eq!(bl_layout_validate(layout, &mut lo, &mut hi), BlStatus::Validation);
        assert_eq!((lo, hi), (6.0, 10.0));
        bl_layout_free(layout);

        let radii = [4.0, 6.0, 24.0, 26.0, 104.0];
        assert_eq!(bl_layout_new(radii.as_ptr(), radii.len(), 2.0, &mut layout), BlStatus::Ok);
        assert_eq!(bl_layout_validate(layout, ptr::null_mut(), ptr::null_mut()), BlStatus::Ok);
        let (mut a, mut b, mut empty) = (0.0, 0.0, true);
        assert_eq!(bl_layout_safe_interval(layout, 2, 1.0, 1.0, 1.5, false, &mut a, &mut b, &mut empty), BlStatus::Ok);
        assert!(!empty && 26.0 < a && a < b && b < 104.0);
        assert_eq!(bl_layout_safe_interval(layout, 9, 1.0, 1.0, 1.5, false, &mut a, &mut b, &mut empty), BlStatus::Index);
        bl_layout_free(layout);
        bl_layout_free(ptr::null_mut());
    }
}

#[test]
fn field_and_oracle() {
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(bl_field_prototype(1, 1.0, 2.0, &mut f), BlStatus::Ok);
        let mut u = [0.0];
        assert_eq!(bl_field_eval(f, [4.0].as_ptr(), 1, u.as_mut_ptr()), BlStatus::Ok);
        assert!((u[0] - 2.0).abs() < 1e-12);
        assert_eq!(bl_field_eval(f, [4.0, 0.0].as_ptr(), 2, u.as_mut_ptr()), BlStatus::InvalidParameter);
        let mut v = 0.0;
        assert_eq!(bl_field_cole_hopf(f, 1.0, 0.0, &mut v), BlStatus::Ok);
        assert!(v.abs() < 1e-8);
        assert_eq!(bl_field_cole_hopf(f, -1.0, 0.0, &mut v), BlStatus::InvalidParameter);
        bl_field_free(f);
    }
}

#[test]
fn experiment_runs_checks() {
    let toml = CString::new(
        r#"
[field]
dim = 1
kappa = 2.0
U = 1.0
kind = { type = "prototype" }

[iteration]
m_max = 1
mc_samples = 16
sde_steps = 8
horizon = 0.5
viscous = true
seed = 1
grid = { dim = 1, half_width = 2.0, nodes = 11, slices = [0.0, 0.5] }

[checks]
enabled = ["hyp1"]
"#,
    )
    .unwrap();
    unsafe {
        let mut exp = ptr::null_mut();
        assert_eq!(bl_experiment_from_toml(toml.as_ptr(), &mut exp), BlStatus::Ok);
        let mut rep = ptr::null_mut();
        let name = CString::new("hyp1").unwrap();
        assert_eq!(bl_experiment_run(exp, name.as_ptr(), &mut rep), BlStatus::Ok);
        let (mut pass, mut fitted) = (false, 0.0);
        assert_eq!(bl_report_summary(rep, &mut pass, &mut fitted), BlStatus::Ok);
        assert!(pass && fitted > 0.0);
        let mut need = 0;
        assert_eq!(bl_report_json(rep, ptr::null_mut(), 0, &mut need), BlStatus::Ok);
        let mut small = [0 as c_char; 4];
        assert_eq!(bl_report_json(rep, small.as_mut_ptr(), 4, &mut need), BlStatus::BufferTooSmall);
        let mut buf = vec![0 as c_char; need];
        assert_eq!(bl_report_json(rep, buf.as_mut_ptr(), need, &mut need), BlStatus::Ok);
        let json = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert!(json.contains("\"schema\": 1") && json.contains("sublinear-growth"));
        bl_report_free(rep);

        let bogus = CString::new("nope").unwrap();
        assert_eq!(bl_experiment_run(exp, bogus.as_ptr(), &mut rep), BlStatus::UnknownCheck);
        bl_experiment_free(exp);

        let typo = toml.to_str().unwrap().replace("enabled", "enabeld");
        let bad = CString::new(typo).unwrap();
        assert_eq!(bl_experiment_from_toml(bad.as_ptr(), &mut exp), BlStatus::Config);
        assert!(last_error().contains("checks.enabeld"), "{}", last_error());
    }
}

#[test]
fn header_declares_every_export() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/burgers_lab.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let mut n = 0;
    for line in src.lines() {
        if let Some(rest) = line.strip_prefix("pub unsafe extern \"C\" fn ") {
            let name = &rest[..rest.find('(').unwrap()];
            assert!(header.contains(&format!("{name}(")), "{name} missing from header");
            n += 1;
        }
    }
    assert!(n >= 14);
    for ty in ["typedef struct BlLayout", "typedef struct BlField", "typedef struct BlExperiment", "BL_STATUS_OK = 0"] {
        assert!(header.contains(ty), "{ty}");
    }
}

/// Compiles `tests/c_api.c` against the generated header and the static
/// library, when a C compiler is available.
#[test]
fn c_program_links_against_header() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if std::process::Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    // target/<profile>/deps/<test binary> → target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir: PathBuf = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    let lib = profile_dir.join("libburgers_lab_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("c_api");
    let status = std::process::Command::new(&cc)
        .arg(dir.join("tests/c_api.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
