use std::sync::Arc;

use rtopf_core::env::{generate_dataset, CmdpState, DatasetConfig, EnvConfig, Normalizer, RewardMode, RtOpfEnv};
use rtopf_core::eval::{compare_baselines, evaluate, timing_benchmark, write_report, ActorPolicy, DecisionPolicy, ExpertReplay};
use rtopf_core::neural::GaussianPolicy;
use rtopf_core::opf::generate_expert_trajectory;
use rtopf_core::{rng, Network};

fn case9_env(horizon: usize) -> RtOpfEnv {
    let net = Network::ieee9();
    let dcfg = DatasetConfig {
        horizon,
        seed: 3,
        ..DatasetConfig::default()
    };
    let scen = generate_dataset(&net, &dcfg).unwrap();
    let traj = generate_expert_trajectory(&net, &scen.all_bus_loads(&net)).unwrap();
    let ecfg = EnvConfig::default();
    let scale = ecfg.resolved_reward_scale(&net).unwrap();
    let norm = Arc::new(Normalizer::from_bands(&net, &dcfg));
    RtOpfEnv::new(&net, Arc::new(traj), ecfg, RewardMode::PdPpo, scale, norm).unwrap()
}

/// Pushes every voltage set-point to its ramp maximum.
struct HighVoltage;

impl DecisionPolicy for HighVoltage {
    fn decide(&self, env: &RtOpfEnv, _state: &CmdpState) -> Vec<f64> {
        let mut a = env.expert_raw_action().unwrap();
        let ng = a.len() / 2;
        for v in &mut a[ng..] {
            *v = 1.0;
        }
        a
    }
}

#[test]
fn expert_replay_scores_zero_gap() {
    let mut env = case9_env(12);
    let report = evaluate(&mut env, &ExpertReplay, "expert").unwrap();
    assert_eq!(report.feas_percent, 100.0);
    assert_eq!(report.c_bar, 0.0);
    let k = report.kappa.unwrap();
    assert!(k.max.abs() < 1e-3 && k.min.abs() < 1e-3, "{k:?}");
}

#[test]
fn evaluation_is_repeatable() {
    let mut env = case9_env(10);
    let (sd, ad) = env.dims();
    let actor = GaussianPolicy::new(sd, &[16], ad, -3.0, &mut rng::stream(9, "init", 0));
    let a = evaluate(&mut env, &ActorPolicy(&actor), "actor").unwrap();
    let b = evaluate(&mut env, &ActorPolicy(&actor), "actor").unwrap();
    assert_eq!(a, b);
    let mut text = Vec::new();
    write_report(&a, &mut text).unwrap();
    let text = String::from_utf8(text).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 11);
}

#[test]
fn violating_policy_ranks_last() {
    let mut env = case9_env(10);
    let good = evaluate(&mut env, &ExpertReplay, "expert").unwrap();
    let bad = evaluate(&mut env, &HighVoltage, "high-voltage").unwrap();
    assert!(bad.feas_percent < 100.0 && bad.c_bar > 0.0);
    let ranked = compare_baselines(vec![bad, good.clone(), good]);
    assert_eq!(ranked.last().unwrap().method, "high-voltage");
}

#[test]
fn decision_time_is_below_power_flow_time() {
    let mut env = case9_env(6);
    let (sd, ad) = env.dims();
    let actor = GaussianPolicy::new(sd, &[64, 64], ad, -3.0, &mut rng::stream(9, "init", 0));
    let t = timing_benchmark(&mut env, &actor, 30).unwrap();
    assert!(t.t_powerflow > 0.0 && t.t_actor > 0.0);
    assert!(t.t_actor < t.t_powerflow, "{t:?}");
    assert!(t.t_expert > t.t_powerflow);
}
