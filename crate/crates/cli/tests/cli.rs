use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn homarl(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homarl"))
        .args(args)
        .env("HOMARL_RUN_ROOT", root.join("runs"))
        .env_remove("HOMARL_THREADS")
        .current_dir(root)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn field(out: &Output, key: &str) -> String {
    let prefix = format!("{key} = ");
    stdout(out)
        .lines()
        .find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in output:\n{}", stdout(out)))
}

fn run_dir(out: &Output) -> PathBuf {
    PathBuf::from(field(out, "run_dir"))
}

fn header(root: &Path, run: &Path, file: &str) -> String {
    fs::read_to_string(root.join(run).join(file)).unwrap().lines().next().unwrap().to_string()
}

fn write_config(root: &Path, text: &str) -> String {
    let path = root.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL: &str = "seed = 5
[dataset]
episodes = 20
export_csv = true
[train_mf]
iterations = 2
batch = 32
f_steps = 1
initial_states = 4
[train_mf.inner]
steps = 1
[train_mb]
ensemble = 2
iterations = 1
rollouts = 8
horizon = 3
initial_states = 4
[train_mb.fit]
steps = 1
[eval]
episodes = 4
horizon = 5
";

#[test]
fn collect_is_deterministic_in_the_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = homarl(tmp.path(), &["--config", &cfg, "collect"]);
    let b = homarl(tmp.path(), &["--config", &cfg, "collect"]);
    let c = homarl(tmp.path(), &["--config", &cfg, "--seed", "6", "collect"]);
    assert!(a.status.success() && b.status.success() && c.status.success());
    assert_eq!(field(&a, "checksum"), field(&b, "checksum"));
    assert_ne!(field(&a, "checksum"), field(&c, "checksum"));
    assert_ne!(run_dir(&a), run_dir(&b), "each run gets its own directory");
    let bytes = |o: &Output| fs::read(tmp.path().join(run_dir(o)).join("dataset.bin")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    let echoed = fs::read_to_string(tmp.path().join(run_dir(&a)).join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 5"));
    assert!(tmp.path().join(run_dir(&a)).join("summary.txt").is_file());
}

#[test]
fn bounds_calc_prints_formulas_and_values() {
    let tmp = TempDir::new().unwrap();
    let out = homarl(tmp.path(), &["--seed", "0", "bounds-calc"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("# model_free_generalization: e = 32*V_max^2"));
    assert!(text.contains("# model_based_suboptimality: V_max/(1-gamma)^2"));
    assert!(text.contains("constant-1 normalization"));
    for key in ["model_free_generalization", "model_based_generalization", "model_free_suboptimality", "model_based_suboptimality"] {
        let v: f64 = field(&out, key).parse().unwrap();
        assert!(v.is_finite() && v > 0.0, "{key} = {v}");
    }
    assert_eq!(header(tmp.path(), &run_dir(&out), "bounds.csv"), "quantity,value");
}

#[test]
fn bounds_calc_reports_domain_errors_as_config_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "seed = 0\n[bounds.inputs]\ngamma = 1.0\n");
    let out = homarl(tmp.path(), &["--config", &cfg, "bounds-calc"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn verify_bounds_finds_no_violations() {
    let tmp = TempDir::new().unwrap();
    let out = homarl(tmp.path(), &["--seed", "2024", "verify-bounds", "--trials", "10000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(field(&out, "violations"), "0");
    let report = fs::read_to_string(tmp.path().join(run_dir(&out)).join("bounds_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("proposition,trials,max_ratio,violations"));
    assert_eq!(lines.count(), 7);
}

#[test]
fn training_commands_write_their_documented_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let data = homarl(tmp.path(), &["--config", &cfg, "collect"]);
    let dir = run_dir(&data);
    assert!(header(tmp.path(), &dir, "dataset.csv").starts_with("transition,agent,s0,"));
    let dataset = tmp.path().join(&dir).join("dataset.bin").display().to_string();

    let mf = homarl(tmp.path(), &["--config", &cfg, "train-mf", "--dataset", &dataset]);
    assert!(mf.status.success(), "{}", String::from_utf8_lossy(&mf.stderr));
    let mf_dir = run_dir(&mf);
    assert_eq!(header(tmp.path(), &mf_dir, "train_log.csv"), "iteration,value,bellman_loss,penalty,wall_ms");
    assert_eq!(header(tmp.path(), &mf_dir, "returns.csv"), "episode,return");
    for f in ["critic.ckpt", "critic.ckpt.manifest.toml", "policy.ckpt", "summary.txt"] {
        assert!(tmp.path().join(&mf_dir).join(f).is_file(), "{f}");
    }

    let mb = homarl(tmp.path(), &["--config", &cfg, "train-mb", "--dataset", &dataset]);
    assert!(mb.status.success(), "{}", String::from_utf8_lossy(&mb.stderr));
    let mb_dir = run_dir(&mb);
    assert_eq!(
        header(tmp.path(), &mb_dir, "planner_log.csv"),
        "iteration,pessimistic_value,pessimistic_member,member_values,wall_ms"
    );
    assert_eq!(header(tmp.path(), &mb_dir, "ensemble.csv"), "member,loss,mean_sq_tv,inside");

    let policy = tmp.path().join(&mf_dir).join("policy.ckpt").display().to_string();
    let a = homarl(tmp.path(), &["--config", &cfg, "eval", "--policy", &policy]);
    let b = homarl(tmp.path(), &["--config", &cfg, "eval", "--policy", &policy]);
    assert!(a.status.success());
    assert_eq!(field(&a, "eval_mean_return"), field(&b, "eval_mean_return"));
    assert_eq!(field(&a, "eval_mean_return"), field(&mf, "eval_mean_return"));

    let critic = tmp.path().join(&mf_dir).join("critic.ckpt").display().to_string();
    let wrong = homarl(tmp.path(), &["--config", &cfg, "eval", "--policy", &critic]);
    assert_eq!(wrong.status.code(), Some(8));
}

#[test]
fn probe_and_sweep_write_their_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seed = 0
[mle_probe]
sizes = [50, 100]
seeds = [0]
eval_points = 50
[mle_probe.fit]
steps = 2
[approx_gap]
steps = 10
widths = [1, 2]
dims = [2]
seeds = [0]
piece_resolution = 501
",
    );
    let probe = homarl(tmp.path(), &["--config", &cfg, "mle-probe"]);
    assert!(probe.status.success(), "{}", String::from_utf8_lossy(&probe.stderr));
    assert_eq!(header(tmp.path(), &run_dir(&probe), "probe.csv"), "n,seed,mean_sq_tv,final_loss");
    let gap = homarl(tmp.path(), &["--config", &cfg, "approx-gap"]);
    assert!(gap.status.success(), "{}", String::from_utf8_lossy(&gap.stderr));
    assert_eq!(header(tmp.path(), &run_dir(&gap), "sweep.csv"), "d,width,seed,train_mse,sup_error,piece_count");
    field(&gap, "width_needed_d2");
}

#[test]
fn unknown_config_key_exits_with_code_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\n[train_mf]\nlearning_rate = 0.1\n");
    let out = homarl(tmp.path(), &["--config", &cfg, "collect"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    assert!(!tmp.path().join("runs").exists(), "no run directory for a rejected config");
}

#[test]
fn missing_seed_exits_with_code_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[dataset]\nepisodes = 3\n");
    assert_eq!(homarl(tmp.path(), &["--config", &cfg, "collect"]).status.code(), Some(3));
    assert_eq!(homarl(tmp.path(), &["collect"]).status.code(), Some(3));
}

#[test]
fn missing_dataset_exits_with_code_4() {
    let tmp = TempDir::new().unwrap();
    let out = homarl(tmp.path(), &["--seed", "1", "train-mf", "--dataset", "absent.bin"]);
    assert_eq!(out.status.code(), Some(4));
    let out = homarl(tmp.path(), &["--seed", "1", "train-mb"]);
    assert_eq!(out.status.code(), Some(4));
    let out = homarl(tmp.path(), &["--seed", "1", "--config", "absent.toml", "collect"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn malformed_dataset_exits_with_code_8() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("junk.bin"), b"not a dataset").unwrap();
    let out = homarl(tmp.path(), &["--seed", "1", "train-mf", "--dataset", "junk.bin"]);
    assert_eq!(out.status.code(), Some(8));
}

#[test]
fn usage_errors_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(homarl(tmp.path(), &["--seed", "1", "no-such-command"]).status.code(), Some(2));
    assert_eq!(homarl(tmp.path(), &["--seed", "1", "eval"]).status.code(), Some(2));
}

#[test]
fn defaults_print_a_loadable_config() {
    let tmp = TempDir::new().unwrap();
    let out = homarl(tmp.path(), &["--seed", "11", "defaults"]);
    assert!(out.status.success());
    let cfg = write_config(tmp.path(), &stdout(&out));
    let again = homarl(tmp.path(), &["--config", &cfg, "defaults"]);
    assert_eq!(stdout(&again), stdout(&out));
    assert!(!tmp.path().join("runs").exists());
}
