use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ditasep"));
    c.env_remove("DITASEP_OUT_DIR");
    c
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().arg("--out-dir").arg(dir).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn digests(dir: &Path) -> Vec<(String, String)> {
    manifest(dir)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn lpp_output_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let speed = golden("two_phase.speed");
    let out = run(tmp.path(), &["--seed", "42", "lpp-lln", "--speed", speed.to_str().unwrap(), "--n", "8,16", "--replicas", "2", "--out", "lpp.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let got = std::fs::read_to_string(tmp.path().join("lpp.csv")).unwrap();
    assert_eq!(got, std::fs::read_to_string(golden("lpp_lln_two_phase.csv")).unwrap());
}

#[test]
fn csv_schemas_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let speed = write(d, "c.speed", "family = constant\nvalue = 1\n");
    let s = speed.as_str();
    let cases: &[(&[&str], &str, &str)] = &[
        (&["lpp-lln", "--speed", s, "--n", "5", "--replicas", "2"], "lpp_lln.csv", "n,replica,value,mean,stderr"),
        (
            &["tasep-sim", "--speed", s, "--n", "20", "--t", "0.5", "--window=-1,1", "--trace"],
            "tasep.csv",
            "replica,time,site,height,occupation",
        ),
        (&["shape-grid", "--speed", s, "--extent", "1,1", "--h", "0.25"], "shape.csv", "u,w,gamma"),
        (&["level-curve", "--speed", s, "--q", "0", "--t", "1", "--xrange=-1,1", "--samples", "5"], "level_curve.csv", "q,t,x,g"),
        (&["hydro", "--speed", s, "--t", "1", "--xrange=-1,1", "--samples", "5"], "hydro.csv", "t,x,v,rho,qstar,case"),
        (&["godunov", "--speed", s, "--t", "0.5", "--dx", "0.05", "--xrange=-1,1"], "godunov.csv", "t,x,rho"),
    ];
    for (args, file, cols) in cases {
        let out = run(d, args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert_eq!(header(&d.join(file)), *cols, "{file}");
    }
    assert_eq!(header(&d.join("tasep_events.csv")), "replica,time,site,height");
    let m = manifest(d);
    for key in ["tool", "version", "config", "status", "threads", "wall_seconds", "stages", "outputs"] {
        assert!(m.get(key).is_some(), "manifest lacks {key}");
    }
}

#[test]
fn bad_speed_file_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let speed = write(tmp.path(), "bad.speed", "family = constnt\nvalue = 1\n");
    let out_dir = tmp.path().join("out");
    let out = run(&out_dir, &["hydro", "--speed", &speed, "--t", "1", "--xrange=-1,1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown family"));
    assert!(!out_dir.exists());
}

#[test]
fn invalid_parameters_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let speed = write(tmp.path(), "c.speed", "family = constant\nvalue = 1\n");
    let out_dir = tmp.path().join("out");
    for args in [
        vec!["compare", "--speed", &speed, "--n", "0,100"],
        vec!["hydro", "--speed", &speed, "--t", "-1", "--xrange=-1,1"],
        vec!["tasep-sim", "--speed", &speed, "--init", "wave", "--n", "10", "--t", "1", "--window=-1,1"],
        vec!["lpp-lln", "--speed", &speed],
    ] {
        assert_eq!(run(&out_dir, &args).status.code(), Some(2), "{args:?}");
    }
    assert!(!out_dir.exists());
}

#[test]
fn replaying_a_manifest_reproduces_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let speed = golden("two_phase.speed");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["--seed", "7", "tasep-sim", "--speed", speed.to_str().unwrap(), "--n", "20", "--t", "1", "--window=-1,1", "--replicas", "3", "--snapshots", "2"];
    assert_eq!(run(&a, &args).status.code(), Some(0));
    let m = a.join("manifest.json");
    assert_eq!(run(&b, &["run", "--config", m.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(digests(&a), digests(&b));
    assert_eq!(manifest(&b)["config"], manifest(&a)["config"]);
}

#[test]
fn config_files_and_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let speed = write(d, "c.speed", "family = constant\nvalue = 1\n");
    let out = d.join("cfg_out");
    let cfg = write(
        d,
        "lln.cfg",
        &format!("[run]\nexperiment = lpp_lln\nseed = 3\nout_dir = {}\n\n[params]\nspeed = {speed}\nn = 10, 20\nreplicas = 2\n", out.display()),
    );
    assert_eq!(bin().args(["run", "--config", &cfg]).status().unwrap().code(), Some(0));
    assert_eq!(manifest(&out)["config"]["seed"], 3);
    let first = digests(&out);

    assert_eq!(bin().args(["--seed", "4", "run", "--config", &cfg, "--set", "replicas=3"]).status().unwrap().code(), Some(0));
    let m = manifest(&out);
    assert_eq!(m["config"]["seed"], 4);
    assert_eq!(m["config"]["params"]["replicas"], 3);
    assert_ne!(digests(&out), first);

    let broken = write(d, "broken.cfg", "[run]\nexperiment = weather\n");
    assert_eq!(bin().args(["run", "--config", &broken]).status().unwrap().code(), Some(2));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let speed = write(tmp.path(), "c.speed", "family = constant\nvalue = 2\n");
    let dir = tmp.path().join("env_out");
    let st = bin()
        .env("DITASEP_OUT_DIR", &dir)
        .args(["shape-grid", "--speed", &speed, "--extent", "0.5,0.5", "--h", "0.25"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(dir.join("shape.csv").exists());
}

#[test]
fn envelope_check_and_its_negative_control() {
    let tmp = tempfile::tempdir().unwrap();
    let speed = golden("two_phase.speed");
    let s = speed.to_str().unwrap();
    let out = run(tmp.path(), &["envelope-check", "--speed", s, "--sites=-10,10", "--horizon", "3", "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("envelope.json")).unwrap()).unwrap();
    assert_eq!(r["violation_total"], 0);

    let out = run(tmp.path(), &["envelope-check", "--speed", s, "--decouple", "--out", "neg.json"]);
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("neg.json")).unwrap()).unwrap();
    assert!(r["violation_total"].as_u64().unwrap() > 0);
}

#[test]
fn failed_assertions_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let speed = write(tmp.path(), "c.speed", "family = constant\nvalue = 1\n");
    let out = run(
        tmp.path(),
        &["compare", "--speed", &speed, "--n", "40,80", "--replicas", "2", "--bins", "4", "--bound", "1e-9", "--skip-envelope", "--skip-pde"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(manifest(tmp.path())["status"], "fail");
    for f in ["compare_bins.csv", "compare_heights.csv", "compare.json"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn godunov_feeds_the_weak_form_check() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let speed = golden("two_phase.speed");
    let s = speed.to_str().unwrap();
    let out = run(d, &["godunov", "--speed", s, "--t", "0.5", "--dx", "0.01", "--xrange=-1,1", "--snapshots", "100"]);
    assert_eq!(out.status.code(), Some(0));
    let g = d.join("godunov.csv");
    let out = run(d, &["pde-check", "--mode", "weak", "--in", g.to_str().unwrap(), "--speed", s]);
    assert_eq!(out.status.code(), Some(0));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pde_check.json")).unwrap()).unwrap();
    assert!(r["max_abs_defect"].as_f64().unwrap() <= 0.02);
}
