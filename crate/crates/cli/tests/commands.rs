use std::path::Path;
use std::process::{Command, Output};

fn satmimo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satmimo")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path, name: &str, seed: &str) {
    let o = satmimo(&["gen", "--seed", seed, "-S", "2", "-K", "3", "--tx-array", "2x2", "--rx-array", "2x1", "-o", name], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn gen_then_solve_prints_rate_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "scn.toml", "7");
    let o = satmimo(&["solve", "cen-opt-wm", "scn.toml", "--n-mc", "50", "-o", "res.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("sum rate"));
    let csv = std::fs::read_to_string(dir.path().join("res.csv")).unwrap();
    assert!(csv.starts_with("scheme,drop,seed,P_dbw,S,K,sum_rate_bps_hz,feasible\ncen-opt-wm,0,0,5,2,3,"));
}

#[test]
fn commands_are_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "a.toml", "3");
    gen(dir.path(), "b.toml", "3");
    let a = std::fs::read(dir.path().join("a.toml")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.toml")).unwrap());
    let run = || stdout(&satmimo(&["solve", "sep-mmse", "a.toml", "--n-mc", "20", "--format", "csv"], dir.path()));
    assert_eq!(run(), run());
}

#[test]
fn infer_rejects_wrong_architecture() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "scn.toml", "1");
    let o = satmimo(&["init-weights", "cen", "-M", "4", "-N", "2", "-o", "w.eqwt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("w.eqwt.manifest").exists());
    let o = satmimo(&["infer", "dec", "w.eqwt", "scn.toml", "--n-mc", "10"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("architecture mismatch"), "{}", stderr(&o));
    let o = satmimo(&["infer", "cen", "w.eqwt", "scn.toml", "--n-mc", "10"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("feasible    true"));
}

#[test]
fn validate_weights_reports_damage() {
    let dir = tempfile::tempdir().unwrap();
    assert!(satmimo(&["init-weights", "dec", "-M", "4", "-N", "2", "-o", "w.eqwt"], dir.path()).status.success());
    let o = satmimo(&["validate-weights", "w.eqwt"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("arch decentralized"));
    let bytes = std::fs::read(dir.path().join("w.eqwt")).unwrap();
    std::fs::write(dir.path().join("cut.eqwt"), &bytes[..bytes.len() / 2]).unwrap();
    let o = satmimo(&["validate-weights", "cut.eqwt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cut.eqwt"));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(satmimo(&["solve", "cen-opt-wm", "missing.toml"], dir.path()).status.code(), Some(1));
    gen(dir.path(), "scn.toml", "1");
    assert_eq!(satmimo(&["solve", "nope", "scn.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(satmimo(&["solve", "cen-tfc-wm", "scn.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(satmimo(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(satmimo(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn solver_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "scn.toml", "1");
    // Statistics at the edge of the f64 range make the received power underflow.
    let text = std::fs::read_to_string(dir.path().join("scn.toml")).unwrap();
    let edited: Vec<String> = text
        .lines()
        .map(|l| {
            if l.starts_with("beta = ") {
                "beta = 1e-300".to_string()
            } else if l.starts_with("noise_w = ") {
                "noise_w = [5e-324, 5e-324, 5e-324]".to_string()
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(dir.path().join("tiny.toml"), edited.join("\n")).unwrap();
    let o = satmimo(&["solve", "cen-opt-wm", "tiny.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("solver failed"));
}

#[test]
fn sweep_writes_one_row_per_drop_scheme_and_power() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sweep.toml"), "[scenario.array]\nm_x = 2\nm_y = 2\nn_x = 2\nn_y = 1\n").unwrap();
    let o = satmimo(
        &[
            "sweep", "--config", "sweep.toml", "--power-grid", "-10,0,10", "--sats", "2", "--uts", "3", "--drops", "2",
            "--n-mc", "10", "--jobs", "2", "-o", "out.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4 * 3);
    assert!(stdout(&o).contains("cen-opt-wm"));
}

#[test]
fn overhead_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = satmimo(&["overhead", "-S", "3", "-K", "12", "-M", "64", "-N", "4", "--format", "csv"], dir.path());
    let out = stdout(&o);
    assert!(out.contains("cen-opt-wm,3,12,64,4,3530"));
    assert!(out.contains("dec-tfc-wm,3,12,64,4,26"));
}
