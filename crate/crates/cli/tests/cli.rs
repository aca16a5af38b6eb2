use std::path::Path;
use std::process::{Command, Output};

const STEP: &str = "[potential]\nkind = \"hard-core-step\"\nradius = 1.0\nheight = 1.0\nrange = 3.0\n";

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gibbs-uniq"))
        .args(args)
        .current_dir(dir)
        .env_remove("GIBBS_UNIQ_THREADS")
        .output()
        .unwrap()
}

fn config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_owned()
}

#[test]
fn minimal_config_runs_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[potential]\nkind = \"hard-sphere\"\nradius = 1.0\n");
    let out = run(&["regions", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/regions.csv")).unwrap();
    // three default methods, sixty grid points
    assert_eq!(text.lines().count(), 1 + 3 * 60);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 1);
    assert!(stdout.contains("regions.csv"));
}

#[test]
fn reversed_beta_range_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &format!("{STEP}[beta]\nmin = 2.0\nmax = 1.0\n"));
    let out = run(&["mayer", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta.min"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &format!("{STEP}[sampler]\nwindw = 3.0\n"));
    let out = run(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("windw"));
}

#[test]
fn improved_constant_for_a_step_potential_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &format!("methods = [\"cluster-expansion-improved\"]\n{STEP}[beta]\ncount = 2\n"));
    let out = run(&["regions", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported"));
    assert!(!dir.path().join("o/regions.csv").exists());
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["mayer", "--config", "nope.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["mayer"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn every_command_writes_its_header() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{STEP}[beta]\ncount = 3\n[meshes]\nvalues = [0.35, 0.25]\n[sampler]\nsteps = 4000\nwindow = 3.0\nrecord_every = 20\nprobe_windows = [2.0, 3.0]\n"
    );
    let cfg = config(dir.path(), &body);
    let cases = [
        ("mayer", "mayer.csv", "beta,mayer_integral,error_estimate"),
        ("regions", "regions.csv", "method,beta,z_bar,certified,error_estimate"),
        ("zbar-a", "zbar_a.csv", "a,mode,z_bar,saturated"),
        ("check-a3", "check_a3.csv", "a,psi_integral,mayer_integral,gap"),
        ("simulate", "chain.csv", "step,count,intensity_center,min_pair_distance"),
        ("probe", "probe.csv", "window,boundary,intensity,se,metric"),
    ];
    for (cmd, file, header) in cases {
        let out = run(&[cmd, "--config", &cfg, "--out", "res", "--threads", "1"], dir.path());
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(first_line(&dir.path().join("res").join(file)), header, "{cmd}");
    }
    let zbar = std::fs::read_to_string(dir.path().join("res/zbar_a.csv")).unwrap();
    assert_eq!(zbar.lines().count(), 1 + 2 * 2);
    assert!(zbar.contains(",upper,") && zbar.contains(",lower,"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &format!("{STEP}[sampler]\nsteps = 5000\nwindow = 3.0\nrecord_every = 10\n"));
    let mut outputs = Vec::new();
    for (out, threads) in [("a", "1"), ("b", "0")] {
        let res = run(&["simulate", "--config", &cfg, "--out", out, "--seed", "7", "--threads", threads], dir.path());
        assert!(res.status.success());
        assert!(String::from_utf8_lossy(&res.stdout).contains("seed 7"));
        outputs.push(std::fs::read(dir.path().join(out).join("chain.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let other = run(&["simulate", "--config", &cfg, "--out", "c", "--seed", "8"], dir.path());
    assert!(other.status.success());
    assert_ne!(std::fs::read(dir.path().join("c/chain.csv")).unwrap(), outputs[0]);
}
