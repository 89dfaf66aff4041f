use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use honeynet_smdp::model::StateId;
use honeynet_smdp::risk::{build_generator, mfpt};
use honeynet_smdp_ffi::*;

fn scenario(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../core/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn load(json: &str) -> *mut HpModel {
    let text = CString::new(json).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { hp_model_from_json(text.as_ptr(), &mut model) }, HpStatus::Ok);
    assert!(!model.is_null());
    model
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe { hp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn solve(model: *const HpModel) -> (Vec<f64>, Vec<u8>) {
    let n = unsafe { hp_model_state_count(model) };
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { hp_solve(model, 1e-10, 100_000, &mut sol) }, HpStatus::Ok);
    let mut values = vec![0.0; n];
    let mut policy = vec![0u8; n];
    unsafe {
        assert_eq!(hp_solution_values(sol, values.as_mut_ptr(), n), HpStatus::Ok);
        assert_eq!(hp_solution_policy(sol, policy.as_mut_ptr(), n), HpStatus::Ok);
        assert!(hp_solution_iterations(sol) > 0);
        assert!(hp_solution_residual(sol) <= 1e-10);
        hp_solution_free(sol);
    }
    (values, policy)
}

#[test]
fn solve_matches_core() {
    let json = scenario("honeynet13.json");
    let model = load(&json);
    let (values, policy) = solve(model);
    let core = honeynet_smdp::load_scenario(&json).unwrap();
    let reference = honeynet_smdp::solver::value_iteration(&core, 1e-10, 100_000).unwrap();
    assert_eq!(values, reference.values.values);
    let codes: Vec<u8> = reference.policy.actions().iter().map(|a| a.code()).collect();
    assert_eq!(policy, codes);
    assert_eq!(policy[9], HP_ACTION_HIGH_INTERACT);

    let n = values.len();
    let mut eval = vec![0.0; n];
    assert_eq!(
        unsafe { hp_policy_evaluate(model, policy.as_ptr(), n, eval.as_mut_ptr(), n) },
        HpStatus::Ok
    );
    for (a, b) in eval.iter().zip(&values) {
        assert!((a - b).abs() <= 1e-8);
    }
    unsafe { hp_model_free(model) };
}

#[test]
fn roles_and_risk_queries() {
    let json = scenario("honeynet13.json");
    let model = load(&json);
    let (_, policy) = solve(model);
    let n = policy.len();
    let (normal, target, absorbing) = unsafe { (hp_model_normal(model), hp_model_target(model), hp_model_absorbing(model)) };
    assert_eq!((normal, target, absorbing), (11, 9, 12));

    let mut times = vec![0.0; n];
    assert_eq!(
        unsafe { hp_mfpt(model, policy.as_ptr(), n, target, times.as_mut_ptr(), n) },
        HpStatus::Ok
    );
    let core = honeynet_smdp::load_scenario(&json).unwrap();
    let p = honeynet_smdp::solve(&core).unwrap().policy;
    let expected = mfpt(&build_generator(&core, &p).unwrap(), &BTreeSet::from([StateId(9)])).unwrap();
    assert_eq!(times, expected.times);

    let (mut threshold, mut prob) = (0.0, 0.0);
    assert_eq!(
        unsafe { hp_attraction_efficiency(model, policy.as_ptr(), n, normal, target, &mut threshold, &mut prob) },
        HpStatus::Ok
    );
    assert_eq!(threshold, times[normal]);
    assert!(prob > 0.0 && prob < 1.0);

    let mut occ = vec![0.0; n];
    assert_eq!(
        unsafe { hp_occupancy(model, policy.as_ptr(), n, normal, 5.0, occ.as_mut_ptr(), n) },
        HpStatus::Ok
    );
    assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    unsafe { hp_model_free(model) };
}

#[test]
fn exponential_chain_efficiency() {
    let rows: Vec<String> = ["E", "P", "L", "H"]
        .iter()
        .map(|a| format!(r#"{{"state": 0, "action": "{a}", "dist": {{"1": 1.0}}}}"#))
        .collect();
    let rates: Vec<String> = ["E", "P", "L", "H"]
        .iter()
        .map(|a| format!(r#"{{"state": 0, "action": "{a}", "to": 1, "lambda": 0.4}}"#))
        .collect();
    let json = format!(
        r#"{{"gamma": 0.1, "noise_sigma": 0.0, "reward_bound": 1.0,
        "nodes": [{{"id": 0, "name": "h", "kind": "honeypot"}}, {{"id": 1, "name": "end", "kind": "absorbing"}}],
        "edges": [], "transitions": [{}], "rates": [{}], "rewards": []}}"#,
        rows.join(","),
        rates.join(",")
    );
    let model = load(&json);
    let policy = [HP_ACTION_EJECT, HP_ACTION_EJECT];
    let (mut threshold, mut prob) = (0.0, 0.0);
    assert_eq!(
        unsafe { hp_attraction_efficiency(model, policy.as_ptr(), 2, 0, 1, &mut threshold, &mut prob) },
        HpStatus::Ok
    );
    assert!((threshold - 2.5).abs() < 1e-12);
    assert!((prob - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    assert_eq!(unsafe { hp_model_normal(model) }, HP_NO_STATE);
    unsafe { hp_model_free(model) };
}

#[test]
fn errors_are_reported() {
    let mut model = ptr::null_mut();
    let bad = CString::new("{\"gamma\": ").unwrap();
    assert_eq!(unsafe { hp_model_from_json(bad.as_ptr(), &mut model) }, HpStatus::InvalidModel);
    assert!(model.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { hp_model_from_json(ptr::null(), &mut model) }, HpStatus::NullPointer);
    assert_eq!(last_error(), "json is null");

    let invalid = [0xffu8, 0];
    assert_eq!(
        unsafe { hp_model_from_json(invalid.as_ptr().cast(), &mut model) },
        HpStatus::InvalidUtf8
    );

    let model = load(&scenario("desk3.json"));
    let mut out = [0.0; 3];
    let wrong_code = [9u8, HP_ACTION_ATTRACT, HP_ACTION_EJECT];
    assert_eq!(
        unsafe { hp_policy_evaluate(model, wrong_code.as_ptr(), 3, out.as_mut_ptr(), 3) },
        HpStatus::InvalidArgument
    );
    let inadmissible = [HP_ACTION_ATTRACT, HP_ACTION_ATTRACT, HP_ACTION_EJECT];
    assert_eq!(
        unsafe { hp_policy_evaluate(model, inadmissible.as_ptr(), 3, out.as_mut_ptr(), 3) },
        HpStatus::InvalidModel
    );
    let ok = [HP_ACTION_PASSIVE, HP_ACTION_ATTRACT, HP_ACTION_EJECT];
    assert_eq!(
        unsafe { hp_policy_evaluate(model, ok.as_ptr(), 3, out.as_mut_ptr(), 2) },
        HpStatus::BufferSize
    );
    assert_eq!(
        unsafe { hp_mfpt(model, ok.as_ptr(), 3, 7, out.as_mut_ptr(), 3) },
        HpStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { hp_attraction_efficiency(model, ok.as_ptr(), 3, 1, 0, ptr::null_mut(), ptr::null_mut()) },
        HpStatus::NullPointer
    );
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { hp_solve(model, -1.0, 10, &mut sol) }, HpStatus::InvalidArgument);
    assert_eq!(unsafe { hp_solve(model, 1e-12, 1, &mut sol) }, HpStatus::NonConvergence);
    assert!(sol.is_null());
    assert_eq!(unsafe { hp_policy_evaluate(model, ok.as_ptr(), 3, out.as_mut_ptr(), 3) }, HpStatus::Ok);
    assert_eq!(last_error(), "");

    unsafe {
        hp_model_free(model);
        hp_model_free(ptr::null_mut());
        hp_solution_free(ptr::null_mut());
        assert_eq!(hp_model_state_count(ptr::null()), 0);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(hp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn cc() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = crate_dir().join("include");
    assert!(include.join("honeynet_smdp.h").is_file());
    let program = crate_dir().join("tests/c_program.c");
    let status = Command::new(cc())
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&program)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let status = Command::new("c++")
        .args(["-x", "c++", "-std=c++17", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(include.join("honeynet_smdp.h"))
        .status()
        .expect("C++ compiler available");
    assert!(status.success());
}

/// Directory holding the library artifacts of this build.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = artifact_dir().join("libhoneynet_smdp_ffi.a");
    assert!(lib.is_file(), "missing {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("c_program");
    let status = Command::new(cc())
        .args(["-std=c11", "-O1", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c_program.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let desk = crate_dir().join("../core/scenarios/desk3.json");
    let out = Command::new(&exe).arg(Path::new(&desk)).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let core = honeynet_smdp::load_scenario(&scenario("desk3.json")).unwrap();
    let sol = honeynet_smdp::solver::value_iteration(&core, 1e-10, 100_000).unwrap();
    let line = stdout.lines().find(|l| l.starts_with("1 ")).unwrap();
    let v: f64 = line.split(' ').nth(2).unwrap().parse().unwrap();
    assert_eq!(v, sol.values.values[1]);
    assert!(stdout.contains("normal 1"));
}
