use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mfgplan");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Fresh scratch directory per test.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfgplan-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_cfg(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "\
[model]
x0 = 0.5
alpha = 1

[drift]
mp = 1

[box]
lo = -1
hi = 2
n = 60

[solver]
t_end = 1
record_dt = 0.25
";

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn solve_writes_csv_and_meta() {
    let dir = scratch("solve");
    let cfg = write_cfg(&dir, "a.cfg", &format!("{SMALL}\n[penalization]\neps = 0.1\n"));
    let o = run_cfg("solve", &cfg, &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.join("out/solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x_1,U_1"));
    // 5 recorded times × 61 nodes
    assert_eq!(lines.count(), 5 * 61);
    let meta = std::fs::read_to_string(dir.join("out/meta.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(meta.lines().next().unwrap()).unwrap();
    assert_eq!(v["extra"]["command"], "solve");
    assert_eq!(v["extra"]["eps"], 0.1);
    assert_eq!(v["records"], 5);
}

#[test]
fn invalid_parameter_is_a_configuration_error() {
    let dir = scratch("cfl");
    let cfg = write_cfg(&dir, "a.cfg", &format!("{SMALL}cfl = 0\n\n[penalization]\neps = 0.1\n"));
    let o = run_cfg("solve", &cfg, &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cfl"), "{}", stderr(&o));
    assert!(!dir.join("out").exists());
}

#[test]
fn unknown_key_is_reported_with_its_line() {
    let dir = scratch("key");
    let cfg = write_cfg(&dir, "a.cfg", &format!("{SMALL}stepsize = 3\n\n[penalization]\neps = 0.1\n"));
    let o = run_cfg("solve", &cfg, &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 16"), "{}", stderr(&o));
}

#[test]
fn vanishing_eps_is_a_numerical_failure() {
    let dir = scratch("tiny");
    let body = SMALL.replace("n = 60", "n = 10") + "max_steps = 500\n\n[penalization]\neps = 1e-15\n";
    let cfg = write_cfg(&dir, "a.cfg", &body);
    let o = run_cfg("solve", &cfg, &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("after t ="), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = scratch("missing");
    let o = run_cfg("solve", &dir.join("absent.cfg"), &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn single_eps_plan_warns_but_succeeds() {
    let dir = scratch("single");
    let cfg = write_cfg(&dir, "a.cfg", &format!("{SMALL}\n[penalization]\neps = 0.05\n"));
    let o = run_cfg("plan", &cfg, &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("no Cauchy gap"));
    for f in ["solution.csv", "limit.csv", "convergence.json", "meta.json"] {
        assert!(dir.join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn verify_passes_on_lq0() {
    let dir = scratch("verify");
    let o = run_cfg("verify", &configs().join("lq0.cfg"), &dir, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    for c in report["checks"].as_array().unwrap() {
        assert_eq!(c["status"], "pass", "{}", c["name"]);
    }
}

#[test]
fn probe_agrees_with_characteristics() {
    let dir = scratch("probe");
    let o = run_cfg("probe", &configs().join("lq0.cfg"), &dir, &["--t", "0.4", "--x", "-0.3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.join("probe.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["t"], 0.4);
    assert!(v["difference"].as_f64().unwrap() <= 2e-2, "{v}");
}

#[test]
fn probe_outside_the_horizon_is_rejected() {
    let dir = scratch("probe-bad");
    let o = run_cfg("probe", &configs().join("lq0.cfg"), &dir, &["--t", "3", "--x", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_is_deterministic() {
    let dir = scratch("det");
    let cfg = configs().join("coupled.cfg");
    for k in ["a", "b"] {
        let o = run_cfg("yosida", &cfg, &dir.join(k), &["--seed", "7"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["yosida.csv", "meta.json"] {
        let a = std::fs::read(dir.join("a").join(f)).unwrap();
        let b = std::fs::read(dir.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn sampled_reports_depend_only_on_the_seed() {
    let dir = scratch("seed");
    let cfg = write_cfg(
        &dir,
        "a.cfg",
        &format!("{SMALL}\n[penalization]\neps = 0.1, 0.05\nt_min = 0.25\n\n[verify]\nsamples = 500\n"),
    );
    let report = |k: &str, seed: &str| {
        run_cfg("verify", &cfg, &dir.join(k), &["--seed", seed]);
        std::fs::read(dir.join(k).join("report.json")).unwrap()
    };
    assert_eq!(report("a", "3"), report("b", "3"));
}

#[test]
fn trajectories_are_written_per_start() {
    let dir = scratch("traject");
    let o = run_cfg("traject", &configs().join("lq0.cfg"), &dir, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for k in 0..3 {
        let csv = std::fs::read_to_string(dir.join(format!("trajectory_{k}.csv"))).unwrap();
        assert!(csv.starts_with("t,x_1,u_1\n"));
    }
    let lines = std::fs::read_to_string(dir.join("trajectories.json")).unwrap();
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["convergence"]["passes"], true, "{v}");
    }
}

#[test]
fn traject_without_section_is_a_configuration_error() {
    let dir = scratch("traject-missing");
    let cfg = write_cfg(&dir, "a.cfg", &format!("{SMALL}\n[penalization]\neps = 0.1\n"));
    let o = run_cfg("traject", &cfg, &dir.join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[trajectory]"));
}

#[test]
fn halfspace_writes_both_coordinates() {
    let dir = scratch("halfspace");
    let o = run_cfg("halfspace", &configs().join("halfspace.cfg"), &dir, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let x = std::fs::read_to_string(dir.join("solution_x.csv")).unwrap();
    assert!(x.starts_with("t,x_1,x_2,y_1,y_2,U_1,U_2\n"));
    let rep: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(dir.join("halfspace.json")).unwrap().trim()).unwrap();
    // U₁ ≈ ln(x₁)/t near the boundary
    for fit in rep["log_fits"].as_array().unwrap() {
        let (a, t) = (fit["a"].as_f64().unwrap(), fit["t"].as_f64().unwrap());
        assert!((a * t - 1.0).abs() <= 0.05, "{fit}");
    }
}
