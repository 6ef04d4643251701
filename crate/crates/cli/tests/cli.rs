use std::path::Path;
use std::process::{Command, Output};

use mild_girsanov_cli::config::{Experiment, ExperimentConfig};
use mild_girsanov_cli::experiments::{manifest, run};

const SMALL: &str = "\
operator.d = 3
drift.kind = zero
grid.N = 32
window.N = 32
window.S = 4
mc.samples = 1000
regularity.samples = 20
sweep.steps = 16, 32
longrun.burn_in = 2
longrun.averaging = 20
longrun.chains = 8
operator.family = laplacian
";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mild-girsanov"));
    cmd.env_remove("MILD_GIRSANOV_SEED");
    cmd
}

fn run_cli(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("input.cfg");
    std::fs::write(&cfg, config).unwrap();
    bin().arg("--config").arg(&cfg).args(args).output().unwrap()
}

fn strip_wall_time(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn zero_drift_verify_girsanov_passes_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_cli(dir.path(), SMALL, &["verify-girsanov", "--out", out.to_str().unwrap(), "--dump-paths", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "mild-girsanov/1");
    assert_eq!(report["all_pass"], true);
    let unit = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "zero_drift_unit_weight")
        .unwrap();
    assert_eq!(unit["status"], "pass");
    assert_eq!(unit["value"], 0.0);
    let paths = std::fs::read_to_string(out.join("paths.csv")).unwrap();
    assert!(paths.starts_with("sample_id,mode,node_index,time,h,dB"));
    // 2 samples × 3 modes × 33 nodes.
    assert_eq!(paths.lines().count(), 1 + 2 * 3 * 33);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 failed"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cli(dir.path(), &format!("{SMALL}mc.sample = 10\n"), &["verify-girsanov"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 13") && err.contains("mc.sample"), "{err}");
}

#[test]
fn bad_model_parameters_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cli(dir.path(), &format!("{SMALL}operator.beta = 2\n"), &["verify-girsanov"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run_cli(dir.path(), &format!("{SMALL}experiment = invariant\n"), &["regularity"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_sup_bound_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("drift.kind = zero", "drift.kind = linear");
    let out = dir.path().join("out");
    let o = run_cli(dir.path(), &cfg, &["moment-bounds", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sup bound"));
    assert!(!out.join("report.json").exists());
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("drift.kind = zero", "drift.kind = tanh");
    let first = dir.path().join("first");
    let o = run_cli(dir.path(), &cfg, &["colored", "--out", first.to_str().unwrap(), "--seed", "99", "--workers", "3"]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let echo = first.join("config.echo");
    let second = dir.path().join("second");
    let o = bin()
        .args(["colored", "--workers", "1", "--out", second.to_str().unwrap(), "--config"])
        .arg(&echo)
        .output()
        .unwrap();
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    for file in ["results.csv", "colored.csv", "checks.csv"] {
        let a = std::fs::read_to_string(first.join(file)).unwrap();
        let b = std::fs::read_to_string(second.join(file)).unwrap();
        if file == "results.csv" {
            assert_eq!(strip_wall_time(&a), strip_wall_time(&b));
        } else {
            assert_eq!(a, b, "{file}");
        }
    }
    assert!(std::fs::read_to_string(&echo).unwrap().contains("mc.seed = 99"));
}

#[test]
fn seed_comes_from_flag_then_environment_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("input.cfg");
    std::fs::write(&cfg_path, SMALL).unwrap();
    let echo_seed = |out: &Path| {
        let text = std::fs::read_to_string(out.join("config.echo")).unwrap();
        ExperimentConfig::parse(&text).unwrap().seed
    };
    let a = dir.path().join("a");
    bin().args(["regularity", "--out", a.to_str().unwrap(), "--config"]).arg(&cfg_path).env("MILD_GIRSANOV_SEED", "7").output().unwrap();
    assert_eq!(echo_seed(&a), 7);
    let b = dir.path().join("b");
    bin()
        .args(["regularity", "--seed", "8", "--out", b.to_str().unwrap(), "--config"])
        .arg(&cfg_path)
        .env("MILD_GIRSANOV_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(echo_seed(&b), 8);
    let c = dir.path().join("c");
    bin().args(["regularity", "--out", c.to_str().unwrap(), "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(echo_seed(&c), 1);
}

#[test]
fn every_experiment_emits_exactly_its_manifest() {
    // One closed-form drift and one without, so both branches are covered.
    for kind in ["zero", "tanh"] {
        let cfg = ExperimentConfig::parse(&SMALL.replace("drift.kind = zero", &format!("drift.kind = {kind}"))).unwrap();
        for e in Experiment::ALL {
            let out = run(e, &cfg).unwrap_or_else(|err| panic!("{} ({kind}): {err}", e.name()));
            let names: Vec<String> = out.checks.iter().map(|c| c.name.clone()).collect();
            assert_eq!(names, manifest(e), "{} ({kind})", e.name());
            assert!(!out.records.is_empty(), "{} ({kind}) produced no records", e.name());
        }
    }
}
