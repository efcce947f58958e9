use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 10] = [
    "synth-drivers",
    "make-geometry",
    "simulate",
    "sample-obs",
    "train",
    "pretrain",
    "finetune",
    "evaluate",
    "energy-audit",
    "experiment",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermocline"))
        .current_dir(dir)
        .env_remove("THERMOCLINE_CONFIG_DIR")
        .args(args)
        .output()
        .expect("spawn thermocline")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lake(dir: &Path) {
    ok(dir, &["synth-drivers", "--years", "2", "--seed", "4", "--out", "drivers.csv"]);
    ok(dir, &["make-geometry", "--area", "1e6", "--depth", "4", "--out", "hypso.csv"]);
    ok(dir, &["simulate", "--drivers", "drivers.csv", "--hypso", "hypso.csv", "--out", "teacher.csv"]);
    ok(dir, &["simulate", "--drivers", "drivers.csv", "--hypso", "hypso.csv", "--truth", "--out", "truth.csv"]);
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    for sub in SUBCOMMANDS {
        let help = ok(dir.path(), &[sub, "--help"]);
        assert!(help.contains("--seed") && help.contains("--config"), "{sub}");
        for line in help.lines().map(str::trim).filter(|l| l.starts_with("--")) {
            let described = line.split_whitespace().count() > 2 || line.contains("  ");
            assert!(described, "{sub}: undocumented flag '{line}'");
        }
    }
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    lake(dir);
    assert!(dir.join("teacher.budget.csv").is_file());
    assert!(dir.join("teacher.config.txt").is_file());
    ok(dir, &["sample-obs", "--field", "truth.csv", "--fraction", "0.5", "--window", "1990-01-01:1991-01-01", "--out", "train_obs.csv"]);
    ok(dir, &["sample-obs", "--field", "truth.csv", "--window", "1991-01-01:1992-01-01", "--out", "test_obs.csv"]);
    let common = ["--drivers", "drivers.csv", "--hypso", "hypso.csv", "--train-window", "1990-01-01:1991-01-01"];
    let with = |extra: &[&'static str]| common.iter().copied().chain(extra.iter().copied()).collect::<Vec<_>>();
    ok(dir, &[&["pretrain"][..], &with(&["--field", "teacher.csv", "--epochs", "2", "--out", "pre.json"])].concat());
    ok(dir, &[&["finetune"][..], &with(&["--init", "pre.json", "--obs", "train_obs.csv", "--epochs", "2", "--out", "ft.json"])].concat());
    ok(dir, &[&["train"][..], &with(&["--obs", "train_obs.csv", "--epochs", "2", "--lambda-ec", "0", "--out", "scratch.json"])].concat());
    assert!(dir.join("ft.history.csv").is_file());
    ok(
        dir,
        &[
            "evaluate", "--model", "ft.json", "--drivers", "drivers.csv", "--hypso", "hypso.csv", "--obs", "test_obs.csv",
            "--window", "1991-01-01:1992-01-01", "--out", "report.csv", "--json", "report.json",
        ],
    );
    let report = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(report.contains("stratum,metric,value,count"));
    assert!(report.contains("overall,energy_inconsistency_w_m2"));
    ok(dir, &["energy-audit", "--field", "teacher.csv", "--drivers", "drivers.csv", "--hypso", "hypso.csv"]);
    assert!(dir.join("teacher.audit.csv").is_file());
}

#[test]
fn identical_invocations_write_identical_files() {
    let outputs: Vec<Vec<Vec<u8>>> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let dir = tmp.path();
            lake(dir);
            ok(dir, &["sample-obs", "--field", "truth.csv", "--fraction", "0.3", "--seed", "9", "--out", "obs.csv"]);
            ok(
                dir,
                &[
                    "train", "--drivers", "drivers.csv", "--hypso", "hypso.csv", "--obs", "obs.csv", "--epochs", "2",
                    "--seed", "5", "--out", "model.json",
                ],
            );
            ["drivers.csv", "teacher.csv", "truth.budget.csv", "obs.csv", "model.json"]
                .iter()
                .map(|f| std::fs::read(dir.join(f)).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn freeze_up_writes_the_realized_ice_record() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    lake(dir);
    ok(dir, &["simulate", "--drivers", "drivers.csv", "--hypso", "hypso.csv", "--truth", "--freeze-up", "ice.csv", "--out", "t.csv"]);
    ok(dir, &["simulate", "--drivers", "ice.csv", "--hypso", "hypso.csv", "--out", "g.csv"]);
    let frozen = |f: &str| {
        let text = std::fs::read_to_string(dir.join(f)).unwrap();
        text.lines().skip(1).filter(|l| l.split(',').nth(7) == Some("1")).count()
    };
    let (season, realized) = (frozen("drivers.csv"), frozen("ice.csv"));
    assert!(realized > 0 && realized < season, "{realized} of {season}");
    assert!(std::fs::read_to_string(dir.join("t.config.txt")).unwrap().contains("freeze_up = ice.csv"));
}

#[test]
fn different_seeds_give_different_drivers() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth-drivers", "--years", "1", "--seed", "1", "--out", "a.csv"]);
    ok(dir, &["synth-drivers", "--years", "1", "--seed", "2", "--out", "b.csv"]);
    assert_ne!(std::fs::read(dir.join("a.csv")).unwrap(), std::fs::read(dir.join("b.csv")).unwrap());
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    lake(dir);
    std::fs::write(dir.join("sim.cfg"), "kw = 0.9\ninitial_temp = 5\n").unwrap();
    let base = ["simulate", "--drivers", "drivers.csv", "--hypso", "hypso.csv", "--config", "sim.cfg"];
    ok(dir, &[&base[..], &["--out", "a.csv"]].concat());
    ok(dir, &[&base[..], &["--kw", "0.3", "--out", "b.csv"]].concat());
    let a = std::fs::read_to_string(dir.join("a.config.txt")).unwrap();
    let b = std::fs::read_to_string(dir.join("b.config.txt")).unwrap();
    assert!(a.contains("kw = 0.9") && a.contains("initial_temp = 5"), "{a}");
    assert!(b.contains("kw = 0.3"), "{b}");
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let code = |args: &[&str]| run(dir, args).status.code();
    assert_eq!(code(&["synth-drivers", "--bogus"]), Some(2));
    assert_eq!(code(&["synth-drivers", "--out", "x.csv", "--set", "nokey"]), Some(2));
    assert_eq!(code(&["synth-drivers", "--out", "x.csv", "--set", "color=blue"]), Some(2));
    assert_eq!(code(&["simulate", "--drivers", "missing.csv", "--hypso", "missing.csv", "--out", "f.csv"]), Some(3));
    lake(dir);
    let unstable = ["simulate", "--drivers", "drivers.csv", "--hypso", "hypso.csv", "--set", "background_diffusivity=0.5", "--out", "u.csv"];
    assert_eq!(code(&unstable), Some(4));
}
