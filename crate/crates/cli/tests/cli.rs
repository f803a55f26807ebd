use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hypersolve"));
    c.env_remove("HYPERSOLVE_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn row<'a>(s: &'a Value, solver: &str) -> &'a Value {
    s["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["solver"] == solver)
        .unwrap()
}

fn pendulum_pretrain(out: &Path, epochs: usize) -> String {
    format!(
        r#"
kind = "pretrain"
seed = 3
output_dir = "{out}"

[dynamics]
system = "pendulum"

[solver]
base = "euler"
kind = "hyper"
eps = 0.2

[solver.net]
hidden = [32, 32]
activations = ["softplus", "tanh"]

[pretrain]
epochs = {epochs}
batch_size = 64
lr = 1e-3
held_out = 128

[pretrain.distribution]
state_box = [[-6.28, 6.28], [-6.28, 6.28]]
control_box = [[-5.0, 5.0]]
"#,
        out = out.display()
    )
}

fn pendulum_control(out: &Path, solver: &str) -> String {
    format!(
        r#"
kind = "control_direct"
seed = 1
output_dir = "{out}"

[dynamics]
system = "pendulum"

[solver]
{solver}
eps = 0.2

[control]
t_end = 3.0
epochs = 30
lr = 3e-3
hold = "continuous"
batch = 16
test_batch = 16
x0_box = [[-3.14, 3.14], [-3.14, 3.14]]

[control.cost]
p = [10.0, 1.0]
q = [1.0, 0.1]
r_u = [0.01]
x_star = [0.0, 0.0]

[control.controller]
hidden = [64, 64]
activations = ["tanh", "tanh"]
bounds = [[-5.0, 5.0]]
"#,
        out = out.display()
    )
}

#[test]
fn pretrain_with_zero_epochs_keeps_the_initial_network() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("zero");
    let cfg = write(tmp.path(), "zero.toml", &pendulum_pretrain(&out, 0));
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let s = summary(&out);
    let report = &s["results"]["report"];
    assert_eq!(report["before"], report["after"]);
    assert!(out.join("checkpoints/hypersolver.json").is_file());
    assert!(out.join("metrics.csv").is_file());
    assert!(out.join("trajectories").is_dir());
    assert_eq!(s["kind"], "pretrain");
    assert_eq!(s["config"]["seed"], 3);
    assert!(s["version"].as_str().is_some());
}

#[test]
fn reruns_produce_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = write(tmp.path(), "p.toml", &pendulum_pretrain(&a, 50));
    assert!(run(&["run", cfg.to_str().unwrap()]).status.success());
    assert!(run(&[
        "run",
        cfg.to_str().unwrap(),
        "--out-dir",
        b.to_str().unwrap()
    ])
    .status
    .success());
    for f in ["metrics.csv", "checkpoints/hypersolver.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(summary(&a)["metrics"], summary(&b)["metrics"]);

    // the config echo alone is enough to rerun
    let c = tmp.path().join("c");
    let summary_path = a.join("summary.json");
    let o = run(&[
        "run",
        summary_path.to_str().unwrap(),
        "--out-dir",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(c.join("metrics.csv")).unwrap()
    );
}

#[test]
fn output_dir_override_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "p.toml",
        &pendulum_pretrain(Path::new("somewhere/else/run_x"), 0),
    );
    let root = tmp.path().join("redirected");
    let o = bin()
        .args(["run", cfg.to_str().unwrap()])
        .env("HYPERSOLVE_OUT_DIR", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("run_x/summary.json").is_file());
}

#[test]
fn config_errors_exit_1_with_the_offending_line() {
    let tmp = tempfile::tempdir().unwrap();
    let good = pendulum_pretrain(&tmp.path().join("x"), 0);

    let bad_value = good.replace("eps = 0.2", "eps = -0.2");
    let cfg = write(tmp.path(), "bad.toml", &bad_value);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let line = bad_value
        .lines()
        .position(|l| l.starts_with("eps"))
        .unwrap()
        + 1;
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains(&format!("bad.toml:{line}: `solver.eps`")),
        "{err}"
    );

    let unknown = good.replace("batch_size = 64", "batch_size = 64\nbatch_sise = 3");
    let cfg = write(tmp.path(), "unknown.toml", &unknown);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let line = unknown
        .lines()
        .position(|l| l.starts_with("batch_sise"))
        .unwrap()
        + 1;
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains(&format!("unknown.toml:{line}")) && err.contains("batch_sise"),
        "{err}"
    );

    let missing = good.replace(
        "kind = \"hyper\"",
        "kind = \"hyper\"\ncheckpoint = \"nope.json\"",
    );
    let cfg = write(tmp.path(), "missing.toml", &missing);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn runtime_failures_exit_2_with_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let pre = tmp.path().join("pre");
    let cfg = write(tmp.path(), "pre.toml", &pendulum_pretrain(&pre, 0));
    assert!(run(&["run", cfg.to_str().unwrap()]).status.success());

    // a pendulum checkpoint cannot drive the four-state cart-pole
    let ckpt = pre.join("checkpoints/hypersolver.json");
    let text = format!(
        r#"
kind = "evaluate"
output_dir = "{}"
[dynamics]
system = "cartpole"
[evaluate]
t_end = 0.5
eps = 0.05
checkpoints = ["{}"]
trajectories = 2
x0_box = [[-0.1, 0.1]]
signal = "zero"
"#,
        tmp.path().join("ev").display(),
        ckpt.display()
    );
    let cfg = write(tmp.path(), "ev.toml", &text);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("stage `"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn compare_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let pre = tmp.path().join("pre");
    let cfg = write(tmp.path(), "pre.toml", &pendulum_pretrain(&pre, 3000));
    assert!(run(&["run", cfg.to_str().unwrap()]).status.success());
    let ckpt = pre.join("checkpoints/hypersolver.json");

    let mut dirs = Vec::new();
    for (name, solver) in [
        ("euler", "base = \"euler\"".to_string()),
        ("midpoint", "base = \"midpoint\"".to_string()),
        (
            "hyper",
            format!(
                "base = \"euler\"\nkind = \"hyper\"\ncheckpoint = \"{}\"",
                ckpt.display()
            ),
        ),
    ] {
        let out = tmp.path().join(name);
        let cfg = write(
            tmp.path(),
            &format!("{name}.toml"),
            &pendulum_control(&out, &solver),
        );
        let o = run(&["run", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("checkpoints/controller.json").is_file());
        dirs.push(out);
    }
    let (euler, midpoint, hyper) = (summary(&dirs[0]), summary(&dirs[1]), summary(&dirs[2]));
    let (e, m, h) = (
        row(&euler, "euler"),
        row(&midpoint, "midpoint"),
        row(&hyper, "hyper_euler"),
    );
    assert_eq!(h["nfe"], e["nfe"]);
    assert_eq!(m["nfe"].as_u64().unwrap(), 2 * e["nfe"].as_u64().unwrap());
    assert!(h["flops"].as_u64() > e["flops"].as_u64());
    assert!(h["flops"].as_u64() < m["flops"].as_u64());
    assert!(h["mae"].as_f64() < e["mae"].as_f64(), "{h} vs {e}");

    // self comparison has zero deltas
    let cmp = tmp.path().join("cmp");
    let d0 = dirs[0].to_str().unwrap();
    let o = run(&["compare", d0, d0, "--out", cmp.to_str().unwrap()]);
    assert!(o.status.success());
    let rows: Value =
        serde_json::from_str(&std::fs::read_to_string(cmp.join("comparison.json")).unwrap())
            .unwrap();
    for r in rows.as_array().unwrap() {
        assert_eq!(r["delta_mae"], 0.0);
        assert_eq!(r["delta_flops"], 0);
    }
    let csv = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("run,solver,mae"));

    let all: Vec<&str> = dirs.iter().map(|d| d.to_str().unwrap()).collect();
    let o = run(&[&["compare"][..], &all, &["--out", cmp.to_str().unwrap()]].concat());
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 4);

    // a pre-training run has a different grid
    let o = run(&[
        "compare",
        d0,
        pre.to_str().unwrap(),
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("steps"));

    let o = run(&["inspect", ckpt.to_str().unwrap()]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["stepper"], "hyper_euler");
    assert_eq!(v["g"]["dims"], serde_json::json!([5, 32, 32, 2]));
    assert_eq!(v["g"]["params"], 1314);

    let o = run(&[
        "inspect",
        dirs[0]
            .join("checkpoints/controller.json")
            .to_str()
            .unwrap(),
    ]);
    assert!(o.status.success());
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["feedback"], "state_feedback");
    assert_eq!(v["net"]["dims"], serde_json::json!([2, 64, 64, 1]));
}

#[test]
fn residual_sweep_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let text = format!(
        r#"
kind = "residual_sweep"
output_dir = "{}"
[dynamics]
system = "spring_mass"
[sweep]
eps = [0.01, 0.1]
samples = 16
state_box = [[-5.0, 5.0]]
controls = [-20.0, 20.0]
"#,
        out.display()
    );
    let cfg = write(tmp.path(), "s.toml", &text);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("metrics.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        vec!["eps", "solver", "u", "mean_residual"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    // 2 step sizes x 3 schemes x 2 controls
    assert_eq!(rows.len(), 12);
    let mean = |eps: &str, solver: &str| -> f64 {
        let v: Vec<f64> = rows
            .iter()
            .filter(|x| &x[0] == eps && &x[1] == solver)
            .map(|x| x[3].parse().unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    for eps in ["0.01", "0.1"] {
        assert!(
            mean(eps, "rk4") < mean(eps, "midpoint") && mean(eps, "midpoint") < mean(eps, "euler")
        );
    }
    assert!(mean("0.01", "euler") < mean("0.1", "euler"));
}
