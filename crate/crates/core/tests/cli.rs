use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
n_traj = 6
horizon_steps = 200
stride = 50
seed = 3
n_th = 0.0
outputs = ["trace", "fisher", "hist-perp", "mean-abs-r", "omega-fb", "scatter", "final-homodyne"]

[params]
omega = 0.1
chi = 0.49
eta = 0.9
dt = 0.01

[sweep]
chi = [0.0, 0.49]
eta = [0.9, 0.1]
"#;

fn fbmetro(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbmetro")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = fbmetro(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    dir
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Rows of a CSV without `#` comment lines, as header-keyed columns.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = table(path);
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

const COMMANDS: &[&[&str]] = &[
    &["simulate", "--strategy", "none"],
    &["simulate", "--strategy", "open_loop"],
    &["compare"],
    &["hist-perp", "--times", "0,1,2"],
    &["mean-abs-r"],
    &["omega-fb", "--traces", "2"],
    &["scatter", "--time", "1.5"],
    &["final-homodyne"],
    &["sweep", "--axis", "both", "--n-traj", "3"],
];

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = setup();
    for cmd in COMMANDS {
        for (out, jobs) in [("a", "1"), ("b", "3")] {
            let mut args = cmd.to_vec();
            args.extend(["--config", "c.toml", "--out", out, "--jobs", jobs]);
            ok(dir.path(), &args);
        }
        let a = read_dir(&dir.path().join("a"));
        let b = read_dir(&dir.path().join("b"));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{cmd:?}");
        std::fs::remove_dir_all(dir.path().join("a")).unwrap();
        std::fs::remove_dir_all(dir.path().join("b")).unwrap();
    }
}

#[test]
fn commands_agree_on_shared_quantities() {
    let dir = setup();
    ok(dir.path(), &["compare", "--config", "c.toml", "--out", "o"]);
    ok(dir.path(), &["scatter", "--config", "c.toml", "--out", "o", "--strategy", "none", "--time", "2"]);
    ok(dir.path(), &["final-homodyne", "--config", "c.toml", "--out", "o", "--strategy", "none"]);
    let o = dir.path().join("o");
    let qbar = column(&o.join("compare.csv"), "qbar_c_none");
    let qfi = column(&o.join("scatter_none.csv"), "qfi");
    let mean = qfi.iter().sum::<f64>() / qfi.len() as f64;
    assert_eq!(qfi.len(), 6);
    assert!((qbar.last().unwrap() - mean).abs() <= 1e-9 * mean, "{} vs {mean}", qbar.last().unwrap());
    assert_eq!(column(&o.join("final_homodyne_none.csv"), "qbar_c"), column(&o.join("fisher_none.csv"), "qbar_c"));
    let fhom_traj = column(&o.join("scatter_none.csv"), "fhom_traj");
    let fhom = column(&o.join("final_homodyne_none.csv"), "fhom");
    let fhom_mean = fhom_traj.iter().sum::<f64>() / 6.0;
    assert!((fhom.last().unwrap() - fhom_mean).abs() <= 1e-9 * fhom_mean);
    // Optimised homodyne never loses to the fixed angle, nor beats the QFI.
    let best = column(&o.join("final_homodyne_none.csv"), "fbar_hd");
    let fixed = column(&o.join("final_homodyne_none.csv"), "fbar_hd_theta0");
    for ((b, f), q) in best.iter().zip(&fixed).zip(&qbar) {
        assert!(b >= f && *b <= q * (1.0 + 1e-9) + 1e-12);
    }
}

#[test]
fn tiny_run_has_two_grid_rows() {
    let dir = setup();
    ok(dir.path(), &["compare", "--config", "c.toml", "--out", "o", "--n-traj", "2", "--horizon-steps", "10", "--stride", "100"]);
    let (_, rows) = table(&dir.path().join("o/fisher_none.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][0].parse::<f64>().unwrap(), 0.1);
}

#[test]
fn open_loop_outputs() {
    let dir = setup();
    ok(dir.path(), &["simulate", "--config", "c.toml", "--out", "o", "--strategy", "open_loop"]);
    let o = dir.path().join("o");
    assert!(column(&o.join("omega_fb_open_loop.csv"), "std").iter().all(|&s| s == 0.0));
    assert!(column(&o.join("omega_fb_open_loop.csv"), "mean").iter().all(|&m| m == -0.1));
    assert!(column(&o.join("scatter_open_loop.csv"), "fhom_traj").iter().all(|&f| f == 0.0));
    assert!(column(&o.join("fisher_open_loop.csv"), "fhom_over_t").iter().all(|&f| f == 0.0));
}

#[test]
fn histogram_reference_lines_and_vacuum_start() {
    let dir = setup();
    ok(dir.path(), &["hist-perp", "--config", "c.toml", "--out", "o", "--strategy", "none", "--times", "0,2"]);
    let path = dir.path().join("o/hist_perp_none.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let header_value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("# {key}="))).unwrap();
        line.split('=').nth(1).unwrap().parse().unwrap()
    };
    assert!((header_value("xi0_db") - 5.2408).abs() < 1e-3);
    assert!((header_value("xi_ol_db") - 6.0553).abs() < 1e-3);
    assert_eq!(header_value("bin_width_db"), 0.25);

    // At t = 0 every trajectory is the vacuum at the origin: 0 dB.
    let (_, rows) = table(&path);
    let at_zero: Vec<_> = rows.iter().filter(|r| r[0].parse::<f64>().unwrap() == 0.0).collect();
    assert_eq!(at_zero.len(), 80);
    let filled: Vec<_> = at_zero.iter().filter(|r| r[3] != "0").collect();
    assert_eq!(filled.len(), 1);
    assert_eq!(filled[0][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(filled[0][3], "6");
    let density: f64 = filled[0][4].parse().unwrap();
    assert!((density * 0.25 - 1.0).abs() < 1e-12);
}

#[test]
fn failures_exit_nonzero_without_output() {
    let dir = setup();
    let out = fbmetro(dir.path(), &["simulate", "--config", "c.toml", "--out", "o", "--strategy", "neural:missing.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert!(!dir.path().join("o").exists());

    std::fs::write(dir.path().join("bad.toml"), "n_trajectories = 3\n").unwrap();
    let out = fbmetro(dir.path(), &["compare", "--config", "bad.toml", "--out", "o"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("o").exists());

    let out = fbmetro(dir.path(), &["simulate", "--config", "c.toml", "--out", "o", "--outputs", "spectrum"]);
    assert!(!out.status.success());

    // dt far beyond stability makes every trajectory fail.
    let out = fbmetro(dir.path(), &["compare", "--config", "c.toml", "--out", "o", "--dt", "5"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("o").exists());
}

#[test]
fn neural_strategy_runs_from_config_relative_weights() {
    let dir = setup();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/actor.json");
    std::fs::copy(fixture, dir.path().join("actor.json")).unwrap();
    let sub = dir.path().join("cfg");
    std::fs::create_dir(&sub).unwrap();
    std::fs::write(sub.join("n.toml"), format!("strategy = \"neural:../actor.json\"\n{CONFIG}")).unwrap();
    ok(dir.path(), &["omega-fb", "--config", "cfg/n.toml", "--out", "o"]);
    let std = column(&dir.path().join("o/omega_fb_neural_actor.csv"), "std");
    assert!(std.iter().skip(1).any(|&s| s > 0.0));
}
