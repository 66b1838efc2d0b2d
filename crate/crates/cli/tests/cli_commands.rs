use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rtopf_cli::commands::{self, CacheStatus};
use rtopf_cli::{Context, Overrides};
use rtopf_core::env::{base_power_factor, net_load_buses, LoadScenario};
use rtopf_core::Network;
use tempfile::TempDir;

const SMALL: &str = r#"case = "ieee9"
seed = 4
out = "."
[dataset]
horizon = 6
[test]
horizon = 4
[train]
hidden = [8]
buffer_size = 16
batch_size = 8
[bc]
epochs = 5
"#;

fn rtopf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtopf"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.toml"))
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rtopf(dir, args);
    assert!(
        out.status.success(),
        "rtopf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn workspace(config: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn context(dir: &Path) -> Context {
    Context::load(&dir.join("run.toml"), &Overrides::default()).unwrap()
}

#[test]
fn gen_data_is_byte_identical_and_inside_the_bands() {
    let a = workspace(SMALL);
    let b = workspace(SMALL);
    ok(a.path(), &["gen-data"]);
    ok(b.path(), &["gen-data"]);
    for name in ["train_data.csv", "test_data.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }

    let net = Network::ieee9();
    let buses = net_load_buses(&net);
    let text = fs::read_to_string(a.path().join("train_data.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').count() == 1 + 2 * buses.len() + 1));

    let (scen, _) = LoadScenario::read_csv(text.as_bytes()).unwrap();
    for step in &scen.steps {
        for (k, &i) in buses.iter().enumerate() {
            let (pd, qd) = (net.buses[i].pd, net.buses[i].qd);
            let p = step.p[k];
            assert!(p >= 0.7 * pd - 1e-9 && p <= 1.3 * pd + 1e-9, "bus {i}: {p} vs base {pd}");
            let beta = base_power_factor(p, step.q[k]);
            let beta0 = base_power_factor(pd, qd);
            assert!(beta >= 0.9 * beta0 - 1e-9 && beta <= 1.0 + 1e-9, "bus {i}: power factor {beta}");
        }
    }

    let other = workspace(&SMALL.replace("seed = 4", "seed = 5"));
    ok(other.path(), &["gen-data"]);
    assert_ne!(
        fs::read(a.path().join("train_data.csv")).unwrap(),
        fs::read(other.path().join("train_data.csv")).unwrap()
    );
}

#[test]
fn expert_cache_is_reused_until_inputs_change() {
    let dir = workspace(SMALL);
    let ctx = context(dir.path());
    commands::gen_data(&ctx).unwrap();
    assert_eq!(commands::expert(&ctx).unwrap(), [CacheStatus::Generated; 2]);
    let before = fs::read(dir.path().join("expert_train.json")).unwrap();
    assert_eq!(commands::expert(&ctx).unwrap(), [CacheStatus::Reused; 2]);
    assert_eq!(before, fs::read(dir.path().join("expert_train.json")).unwrap());

    let traj = commands::load_trajectory(&ctx, rtopf_cli::Split::Train).unwrap();
    assert_eq!(traj.steps.len(), 6);
    assert!(traj.steps.iter().all(|s| s.feasible));

    // A different test horizon regenerates only the test split.
    fs::write(dir.path().join("run.toml"), SMALL.replace("horizon = 4", "horizon = 5")).unwrap();
    let ctx = context(dir.path());
    commands::gen_data(&ctx).unwrap();
    assert_eq!(commands::expert(&ctx).unwrap(), [CacheStatus::Reused, CacheStatus::Generated]);
}

#[test]
fn infeasible_scenario_exits_with_solver_code_and_step() {
    let dir = workspace(SMALL);
    ok(dir.path(), &["gen-data"]);
    let path = dir.path().join("train_data.csv");
    let text = fs::read_to_string(&path).unwrap();
    let edited: Vec<String> = text
        .lines()
        .map(|l| {
            if !l.starts_with("2,") {
                return l.to_string();
            }
            let mut cols: Vec<String> = l.split(',').map(str::to_string).collect();
            for c in &mut cols[1..4] {
                *c = (c.parse::<f64>().unwrap() * 5.0).to_string();
            }
            cols.join(",")
        })
        .collect();
    fs::write(&path, edited.join("\n") + "\n").unwrap();

    let out = rtopf(dir.path(), &["expert"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step 2"), "{err}");
}

#[test]
fn one_episode_training_writes_a_loadable_checkpoint() {
    let dir = workspace(SMALL);
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["expert"]);
    ok(dir.path(), &["pretrain"]);
    ok(dir.path(), &["train", "--episodes", "1"]);
    let ctx = context(dir.path());
    let ck = commands::load_checkpoint(&ctx, rtopf_core::env::RewardKind::PdPpo).unwrap();
    assert_eq!(ck.episodes_done, 1);
    assert_eq!(ck.rounds_done, 0);
    assert_eq!(ck.pending.len(), 8);

    // Resuming to a round boundary completes the first update.
    ok(dir.path(), &["train", "--episodes", "2"]);
    let ck = commands::load_checkpoint(&ctx, rtopf_core::env::RewardKind::PdPpo).unwrap();
    assert_eq!((ck.episodes_done, ck.rounds_done), (2, 1));
    assert!(ck.pending.is_empty());
    let log = fs::read_to_string(dir.path().join("train_log_pdppo.tsv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let out = ok(dir.path(), &["bench"]);
    assert!(out.contains("speedup"), "{out}");
}

#[test]
fn expert_replay_evaluates_with_zero_gap() {
    let dir = workspace(SMALL);
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["expert"]);
    ok(dir.path(), &["eval", "--expert"]);
    let report = fs::read_to_string(dir.path().join("report_expert.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let kappa: f64 = r[3].parse().unwrap();
        assert!(kappa.abs() < 1e-3, "{r:?}");
    }
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = workspace(&(SMALL.to_string() + "[env]\nepisode_length = 3\n"));
    assert_eq!(rtopf(dir.path(), &["gen-data"]).status.code(), Some(2));

    let dir = workspace(&SMALL.replace("ieee9", "no_such_case.m"));
    assert_eq!(rtopf(dir.path(), &["gen-data"]).status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_rtopf")).arg("gen-data").output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = workspace(SMALL);
    assert_eq!(rtopf(dir.path(), &["gen-data", "--workers", "0"]).status.code(), Some(2));
}

#[test]
fn mismatched_artifacts_are_refused() {
    let dir = workspace(SMALL);
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["expert"]);
    ok(dir.path(), &["train", "--skip-bc", "--episodes", "2"]);

    // A changed learning rate makes the saved checkpoint foreign.
    fs::write(dir.path().join("run.toml"), SMALL.replace("hidden = [8]", "hidden = [8]\nactor_lr = 1e-3")).unwrap();
    let out = rtopf(dir.path(), &["train", "--skip-bc", "--episodes", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configuration"));
    assert_eq!(rtopf(dir.path(), &["eval", "--reward-mode", "pdppo"]).status.code(), Some(2));

    // Training without a cloned actor needs the pretrain artifact.
    fs::remove_file(dir.path().join("checkpoint_pdppo.json")).unwrap();
    assert_ne!(rtopf(dir.path(), &["train", "--episodes", "2"]).status.code(), Some(0));
}

#[test]
fn failing_gate_exits_with_code_four() {
    let cfg = SMALL.to_string() + "[eval.gate]\nfeas_min = 100.0\nc_bar_max = 0.0\nkappa_aver_max = -1.0\n";
    let dir = workspace(&cfg);
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["expert"]);
    ok(dir.path(), &["train", "--skip-bc", "--episodes", "2"]);
    let out = rtopf(dir.path(), &["eval", "--reward-mode", "pdppo"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("report_pdppo.tsv").exists());
}
