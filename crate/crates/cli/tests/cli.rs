use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aisdsr"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(
        &p,
        "seed = 3\nduration = 20.0\n[network]\nnode_count = 20\nwidth = 400.0\nheight = 400.0\n\
         [traffic]\nflows = 3\n[attack]\ncount = 2\n[sweep]\npause_times = [0.0, 20.0]\nseeds = 2\n",
    )
    .unwrap();
    p
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "duration = 10.0\n[network]\nnodes = 5\n").unwrap();
    let out = run(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn invalid_value_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[mobility]\npause_time = -1.0\n").unwrap();
    let out = run(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mobility.pause_time"));
}

#[test]
fn missing_scenario_file_is_a_config_error() {
    let out = run(&["run", "--scenario", "/nonexistent/x.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_without_out_dir_is_rejected() {
    let p = scenario("line.toml");
    let out = run(&["run", "--scenario", p.to_str().unwrap(), "--trace", "packets"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_identical_outputs_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let p = small(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = run(&[
            "run",
            "--scenario",
            p.to_str().unwrap(),
            "--out",
            d.to_str().unwrap(),
            "--trace",
            "events,defense",
            "--ledger",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["report.txt", "detail.csv", "events.jsonl", "defense.jsonl", "ledger.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let report = fs::read_to_string(a.join("report.txt")).unwrap();
    assert!(report.contains("variant=ais-dsr-under-attack"));
    assert!(report.contains("seed=3"));
}

#[test]
fn seed_and_variant_flags_override_the_file() {
    let p = scenario("line.toml");
    let out = run(&["run", "--scenario", p.to_str().unwrap(), "--seed", "9", "--variant", "dsr-under-attack"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("variant=dsr-under-attack"));
    assert!(text.contains("seed=9"));
    assert!(text.contains("pdr=0\n"), "{text}");
}

#[test]
fn line_scenario_is_defeated_with_vetting() {
    let p = scenario("line.toml");
    let out = run(&["run", "--scenario", p.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("pdr=1\n"));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let p = small(dir.path());
    let o = dir.path().join("sweep");
    let out = run(&[
        "sweep",
        "--scenario",
        p.to_str().unwrap(),
        "--pause-times",
        "0,10,20",
        "--seeds",
        "2",
        "--variants",
        "dsr-baseline,ais-dsr-clean",
        "--out",
        o.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let detail = fs::read_to_string(o.join("detail.csv")).unwrap();
    let summary = fs::read_to_string(o.join("summary.csv")).unwrap();
    assert_eq!(detail.lines().count(), 1 + 2 * 3 * 2);
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
    assert!(detail.starts_with("variant,pause_time,seed,"));
    assert!(summary.lines().skip(1).all(|l| l.contains(",2,0,")));

    let again = dir.path().join("again");
    let out = run(&[
        "sweep",
        "--scenario",
        p.to_str().unwrap(),
        "--pause-times",
        "0,10,20",
        "--seeds",
        "2",
        "--variants",
        "dsr-baseline,ais-dsr-clean",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(detail, fs::read_to_string(again.join("detail.csv")).unwrap());
}

#[test]
fn sweep_defaults_come_from_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let p = small(dir.path());
    let o = dir.path().join("sweep");
    let out = run(&["sweep", "--scenario", p.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(out.status.success());
    let detail = fs::read_to_string(o.join("detail.csv")).unwrap();
    assert_eq!(detail.lines().count(), 1 + 4 * 2 * 2);
}

#[test]
fn bad_sweep_arguments_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = small(dir.path());
    let o = dir.path().join("sweep");
    let out = run(&["sweep", "--scenario", p.to_str().unwrap(), "--seeds", "0", "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
