use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use msno_cli::io;
use msno_cli::report::RunReport;

const CONFIG: &str = r#"{
  "n_coarse": 3, "n_fine": 13, "n_bf": 3,
  "kle": { "aux_grid": 12 },
  "train": { "epochs": 2, "hidden": 4, "layers": 1, "batch": 4 }
}"#;

struct Run {
    code: i32,
    stdout: Value,
    stderr: Vec<Value>,
}

fn msno(args: &[&str]) -> Run {
    let out: Output = Command::new(env!("CARGO_BIN_EXE_msno")).args(args).env("MSNO_STRICT_DETERMINISM", "1").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let stdout = match lines.as_slice() {
        [] => Value::Null,
        [one] => serde_json::from_str(one).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {one}")),
        many => panic!("expected one stdout line, got {}: {many:?}", many.len()),
    };
    let stderr = String::from_utf8(out.stderr)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("stderr line is not JSON ({e}): {l}")))
        .collect();
    Run { code: out.status.code().unwrap_or(-1), stdout, stderr }
}

fn ok(args: &[&str]) -> Value {
    let r = msno(args);
    assert_eq!(r.code, 0, "{args:?} failed: {:?}", r.stderr);
    r.stdout
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("cfg.json");
        std::fs::write(&config, CONFIG).unwrap();
        Self { config: config.display().to_string(), root, _tmp: tmp }
    }

    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    /// `cmd --config cfg --out <root>/<out> extra...`
    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Run {
        let out = self.path(out);
        let mut args = vec![cmd, "--config", &self.config, "--out", &out];
        args.extend_from_slice(extra);
        msno(&args)
    }

    fn ok(&self, cmd: &str, out: &str, extra: &[&str]) -> Value {
        let r = self.run(cmd, out, extra);
        assert_eq!(r.code, 0, "{cmd} {extra:?} failed: {:?}", r.stderr);
        r.stdout
    }

    fn data(&self, n: &str) -> String {
        self.ok("gen-data", "data", &["--seed", "5", "--samples", n]);
        self.path("data")
    }

    fn oracle_checkpoint(&self, loss: &str) -> String {
        let cfg = self.root.join("oracle.json");
        let text = CONFIG.replace(
            r#""batch": 4"#,
            &format!(r#""batch": 4, "loss": "{loss}", "types": {{ "full": "oracle", "half": "oracle", "corner": "oracle" }}"#),
        );
        std::fs::write(&cfg, text).unwrap();
        let data = self.path("data");
        let out = self.path("oracle_ck");
        ok(&["train", "--config", cfg.to_str().unwrap(), "--out", &out, "--data", &data]);
        out
    }
}

fn solution(dir: &str) -> Vec<f64> {
    let (_, s) = io::read_dataset(Path::new(dir)).unwrap();
    s[0].fields["u"].values.clone()
}

#[test]
fn oracle_checkpoint_reproduces_gmsfem() {
    let fx = Fixture::new();
    let data = fx.data("2");
    let ck = fx.oracle_checkpoint("sal");
    for eq in ["diffusion", "richards"] {
        let classical = fx.ok("solve", &format!("g_{eq}"), &["--method", "gmsfem", "--equation", eq, "--data", &data, "--sample", "1"]);
        let learned = fx.ok("solve", &format!("n_{eq}"), &["--method", "gmsfem-no", "--equation", eq, "--data", &data, "--sample", "1", "--checkpoint", &ck]);
        let (a, b) = (solution(&fx.path(&format!("g_{eq}"))), solution(&fx.path(&format!("n_{eq}"))));
        let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-10 * scale, "{eq}: max difference {worst}");
        let (ea, eb) = (&classical["errors_vs_reference"]["l2"], &learned["errors_vs_reference"]["l2"]);
        assert!((ea.as_f64().unwrap() - eb.as_f64().unwrap()).abs() <= 1e-10, "{ea} vs {eb}");
    }
}

#[test]
fn loss_mismatch_warns_and_uses_the_checkpoint() {
    let fx = Fixture::new();
    let data = fx.data("1");
    let ck = fx.oracle_checkpoint("sal");
    let r = fx.run("solve", "s", &["--method", "gmsfem-no", "--data", &data, "--checkpoint", &ck, "--loss", "rbfl2"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stderr.len(), 1);
    let w = r.stderr[0]["warning"].as_str().unwrap();
    assert!(w.contains("rbfl2") && w.contains("sal"), "{w}");
    let e = fx.ok("evaluate", "ev", &["--data", &data, "--checkpoint", &ck, "--loss", "rbfl2"]);
    assert_eq!(e["predictor_loss"], "sal");
    // Matching request: no warning.
    let r = fx.run("solve", "s2", &["--method", "gmsfem-no", "--data", &data, "--checkpoint", &ck, "--loss", "sal"]);
    assert!(r.stderr.is_empty());
}

#[test]
fn evaluate_on_empty_range_fails() {
    let fx = Fixture::new();
    let data = fx.data("2");
    let r = fx.run("evaluate", "ev", &["--data", &data, "--range", "1..1"]);
    assert_ne!(r.code, 0);
    assert_eq!(r.stdout, Value::Null);
    assert_eq!(r.stderr.last().unwrap()["error"], "config");
}

#[test]
fn report_means_recompute_and_embed_config() {
    let fx = Fixture::new();
    let data = fx.data("3");
    let ck = fx.oracle_checkpoint("sal");
    let out = fx.ok("evaluate", "ev", &["--data", &data, "--range", "0..3", "--checkpoint", &ck, "--equation", "richards"]);
    let text = std::fs::read_to_string(out["report"].as_str().unwrap()).unwrap();
    let report: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.methods.len(), 3);
    for (name, m) in &report.methods {
        assert_eq!(m.per_sample.len(), 3, "{name}");
        assert!(m.means_consistent(), "{name}");
        assert_eq!(out["means"][name]["l2"].as_f64().unwrap(), m.mean_l2);
    }
    assert_eq!(report.config.n_fine, 13);
    assert_eq!(report.config.n_bf, 3);
    assert_eq!(report.methods["fine"].mean_l2, 0.0);
    assert!(report.methods["gmsfem"].mean_l2 > 0.0);
    assert!(report.timings.offline_basis_seconds_per_sample.is_some());
    assert!(report.timings.fine_solve_seconds_per_sample.is_none(), "cached references must not be re-solved");
    let again = fx.ok("evaluate", "ev2", &["--data", &data, "--range", "0..1", "--recompute"]);
    let text = std::fs::read_to_string(again["report"].as_str().unwrap()).unwrap();
    let r2: RunReport = serde_json::from_str(&text).unwrap();
    assert!(r2.timings.fine_solve_seconds_per_sample.is_some());
}

#[test]
fn identical_inputs_give_identical_json() {
    let fx = Fixture::new();
    let data = fx.data("3");
    let twice = |cmd: &str, extra: &[&str]| {
        let a = fx.ok(cmd, "rerun", extra);
        let b = fx.ok(cmd, "rerun", extra);
        assert_eq!(a, b, "{cmd}");
        a
    };
    let g = twice("gen-data", &["--seed", "9", "--samples", "2"]);
    assert_ne!(g["digest"], fx.ok("gen-data", "other", &["--seed", "10", "--samples", "2"])["digest"]);
    twice("build-basis", &["--data", &data]);
    let t = twice("train", &["--data", &data, "--range", "0..2", "--seed", "3"]);
    assert!(t["final_loss"]["full"].as_f64().unwrap().is_finite());
    twice("solve", &["--method", "gmsfem", "--equation", "richards", "--seed", "4"]);
    twice("evaluate", &["--data", &data, "--range", "1..3"]);
}

#[test]
fn train_then_solve_with_learned_checkpoint() {
    let fx = Fixture::new();
    let data = fx.data("3");
    fx.ok("build-basis", "basis", &["--data", &data, "--range", "0..2"]);
    let basis = fx.path("basis");
    let t = fx.ok("train", "ck", &["--data", &data, "--basis", &basis, "--range", "0..2", "--loss", "sal-pr"]);
    assert_eq!(t["loss"], "sal-pr");
    assert_eq!(t["patches"]["full"], 8);
    let ck = fx.path("ck");
    let s = fx.ok("solve", "s", &["--method", "gmsfem-no", "--data", &data, "--sample", "2", "--checkpoint", &ck, "--equation", "richards"]);
    assert!(s["errors_vs_reference"]["l2"].as_f64().unwrap().is_finite());
    let b = fx.ok("bench", "bench", &["--samples", "1", "--checkpoint", &ck]);
    assert!(b["offline_seconds_per_sample"].as_f64().unwrap() > 0.0);
    assert!(b.get("breakeven_samples").is_some());
    assert!(Path::new(&fx.path("bench")).join("bench.csv").exists());
}

#[test]
fn corrupted_dataset_reports_checksum_kind() {
    let fx = Fixture::new();
    let data = fx.data("2");
    let file = Path::new(&data).join("00001_kappa.f64le");
    let mut bytes = std::fs::read(&file).unwrap();
    bytes[40] ^= 0xff;
    std::fs::write(&file, bytes).unwrap();
    let r = fx.run("evaluate", "ev", &["--data", &data]);
    assert_eq!(r.code, 1);
    let err = &r.stderr[0];
    assert_eq!(err["error"], "checksum");
    assert!(err["message"].as_str().unwrap().contains("00001_kappa.f64le"));
}

#[test]
fn bad_usage_is_json_on_stderr() {
    let r = msno(&["solve", "--out", "/nonexistent", "--method", "magic"]);
    assert_eq!(r.code, 2);
    assert_eq!(r.stderr[0]["error"], "usage");
    let r = msno(&["gen-data"]);
    assert_eq!(r.code, 2);

    let fx = Fixture::new();
    std::fs::write(&fx.config, r#"{ "n_coarse": 5, "n_fine": 13 }"#).unwrap();
    let r = fx.run("gen-data", "d", &[]);
    assert_eq!(r.code, 1);
    assert_eq!(r.stderr[0]["error"], "config");
}
