use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rtopf_core::env::{generate_dataset, DatasetConfig, EnvConfig, Normalizer, RewardMode, RtOpfEnv};
use rtopf_core::neural::{gaussian_kl, gaussian_log_prob, Activation, MlpParams};
use rtopf_core::opf::generate_expert_trajectory;
use rtopf_core::pdppo::{
    clip_term, discounted_returns, gae, lagrange_advantage, update_duals, RolloutBuffer, Transition,
};
use rtopf_core::{rng, Network};

/// Index of the last transition in the segment that contains `t`.
fn segment_end(terminals: &[bool], t: usize) -> usize {
    (t..terminals.len()).find(|&k| terminals[k]).unwrap_or(terminals.len() - 1)
}

fn random_instance(r: &mut impl Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>, f64, f64) {
    let n = r.random_range(1..=20);
    let sig: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let nv: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let term: Vec<bool> = (0..n).map(|_| r.random_bool(0.25)).collect();
    (sig, v, nv, term, r.random_range(0.0..=1.0), r.random_range(0.0..=1.0))
}

#[test]
fn gae_matches_direct_weighted_sum() {
    let mut r = rng::stream(1, "gae", 0);
    for _ in 0..1000 {
        let (sig, v, nv, term, gamma, lam) = random_instance(&mut r);
        let fast = gae(&sig, &v, &nv, &term, gamma, lam);
        let delta: Vec<f64> = (0..sig.len())
            .map(|t| sig[t] + if term[t] { 0.0 } else { gamma * nv[t] } - v[t])
            .collect();
        for t in 0..sig.len() {
            let direct: f64 = (t..=segment_end(&term, t))
                .map(|k| (gamma * lam).powi((k - t) as i32) * delta[k])
                .sum();
            assert!((fast[t] - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{} vs {direct}", fast[t]);
        }
    }
}

#[test]
fn returns_match_direct_summation() {
    let mut r = rng::stream(2, "returns", 0);
    for _ in 0..1000 {
        let (sig, _, nv, term, gamma, _) = random_instance(&mut r);
        let n = sig.len();
        let g = discounted_returns(&sig, &term, nv[n - 1], gamma);
        for t in 0..n {
            let end = segment_end(&term, t);
            let mut direct: f64 = (t..=end).map(|k| gamma.powi((k - t) as i32) * sig[k]).sum();
            if !term[end] {
                direct += gamma.powi((end + 1 - t) as i32) * nv[n - 1];
            }
            assert!((g[t] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }
}

#[test]
fn unit_lambda_advantage_telescopes_to_return_minus_value() {
    let mut r = rng::stream(3, "telescope", 0);
    for _ in 0..200 {
        let (sig, _, _, term, _, _) = random_instance(&mut r);
        let n = sig.len();
        // Consistent critic: next value of t is the value of t + 1.
        let v: Vec<f64> = (0..=n).map(|_| r.random_range(-1.0..1.0)).collect();
        let (vals, next) = (&v[..n], &v[1..]);
        let a = gae(&sig, vals, next, &term, 1.0, 1.0);
        let g = discounted_returns(&sig, &term, v[n], 1.0);
        let lhs = a.iter().sum::<f64>() / n as f64;
        let rhs = g.iter().zip(vals).map(|(g, v)| g - v).sum::<f64>() / n as f64;
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

#[test]
fn gaussian_kl_matches_monte_carlo() {
    let mut r = rng::stream(4, "kl", 0);
    let (mu_p, ls_p) = (vec![0.3, 0.6, 0.1], vec![-1.0, -0.5, -2.0]);
    let (mu_q, ls_q) = (vec![0.35, 0.5, 0.12], vec![-0.8, -0.6, -1.7]);
    let exact = gaussian_kl(&mu_p, &ls_p, &mu_q, &ls_q);
    let n = 100_000;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let x: Vec<f64> = mu_p
                .iter()
                .zip(&ls_p)
                .map(|(m, ls)| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    m + ls.exp() * z
                })
                .collect();
            gaussian_log_prob(&mu_p, &ls_p, &x) - gaussian_log_prob(&mu_q, &ls_q, &x)
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "mc {mean} exact {exact} se {se}");
}

#[test]
fn gaussian_kl_simple_cases() {
    assert_eq!(gaussian_kl(&[0.2, 0.4], &[-1.0, 0.5], &[0.2, 0.4], &[-1.0, 0.5]), 0.0);
    let shift = gaussian_kl(&[0.7, -0.3], &[0.0, 0.0], &[0.2, 0.0], &[0.0, 0.0]);
    assert!((shift - (0.25 / 2.0 + 0.09 / 2.0)).abs() < 1e-15);
}

#[test]
fn multipliers_stay_nonnegative_under_random_updates() {
    let mut r = rng::stream(5, "duals", 0);
    let mut lambda = vec![0.0; 4];
    for _ in 0..10_000 {
        let n = r.random_range(1..8);
        let vals: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let ratio: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let limits: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
        update_duals(&mut lambda, &vals, &ratio, &limits, r.random_range(1e-4..1.0));
        assert!(lambda.iter().all(|l| *l >= 0.0));
    }
}

#[test]
fn lagrange_advantage_random_instance() {
    let mut r = rng::stream(6, "lagrange", 0);
    let a_r: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
    let a_c: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let lam = [0.5, 0.0, 2.0];
    let a_l = lagrange_advantage(&a_r, &a_c, &lam);
    for t in 0..10 {
        assert_eq!(a_l[t], a_r[t] - (0.5 * a_c[t][0] + 0.0 * a_c[t][1] + 2.0 * a_c[t][2]));
    }
}

proptest! {
    #[test]
    fn clip_term_is_pessimistic(ratio in 0.0f64..3.0, adv in -5.0f64..5.0, eps in 0.01f64..0.99) {
        let term = clip_term(ratio, adv, eps);
        prop_assert!(term <= ratio * adv + 1e-15);
        if adv < 0.0 {
            prop_assert!(term <= (1.0 - eps) * adv + 1e-15);
        }
    }

    #[test]
    fn higher_cost_values_never_lower_multipliers(
        vals in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..10),
        lambda in prop::collection::vec(0.0f64..2.0, 3),
        shift in 0.0f64..3.0,
        lr in 1e-4f64..0.5,
    ) {
        let ratio = vec![1.0; vals.len()];
        let limits = vec![0.0; 3];
        let mut base = lambda.clone();
        update_duals(&mut base, &vals, &ratio, &limits, lr);
        let raised: Vec<Vec<f64>> = vals.iter().map(|v| v.iter().map(|x| x + shift).collect()).collect();
        let mut up = lambda.clone();
        update_duals(&mut up, &raised, &ratio, &limits, lr);
        for (u, b) in up.iter().zip(&base) {
            prop_assert!(u >= b);
        }
    }
}

#[test]
fn buffer_columns_exist_only_after_finalize() {
    let mut buf = RolloutBuffer::default();
    for t in 0..5 {
        buf.push(Transition {
            state: vec![t as f64],
            action: vec![0.5],
            reward: -1.0,
            cost: vec![0.0, 0.2],
            next_state: vec![t as f64 + 1.0],
            log_prob: 0.0,
            terminal: t == 4,
        });
    }
    assert!(buf.columns.is_none());
    let critic_r = MlpParams::zeros(&[1, 1], Activation::Identity);
    let critic_c = MlpParams::zeros(&[1, 2], Activation::Identity);
    buf.finalize(&critic_r, &critic_c, &[0.0, 1.0], 0.9, 0.95);
    let cols = buf.columns.as_ref().unwrap();
    assert_eq!(cols.g_c.len(), 2);
    assert_eq!(cols.g_c[0], vec![0.0; 5]);
    buf.clear();
    assert!(buf.is_empty() && buf.columns.is_none());
}

#[test]
#[should_panic(expected = "nonnegative")]
fn negative_cost_is_rejected() {
    RolloutBuffer::default().push(Transition {
        state: vec![0.0],
        action: vec![0.5],
        reward: 0.0,
        cost: vec![-0.1],
        next_state: vec![0.0],
        log_prob: 0.0,
        terminal: true,
    });
}

#[test]
fn reward_and_cost_signals_stay_separate() {
    let net = Network::ieee9();
    let dcfg = DatasetConfig {
        horizon: 4,
        ..DatasetConfig::default()
    };
    let scen = generate_dataset(&net, &dcfg).unwrap();
    let traj = generate_expert_trajectory(&net, &scen.all_bus_loads(&net)).unwrap();
    let ecfg = EnvConfig::default();
    let scale = ecfg.resolved_reward_scale(&net).unwrap();
    let norm = Arc::new(Normalizer::from_bands(&net, &dcfg));
    let mut env = RtOpfEnv::new(&net, Arc::new(traj), ecfg, RewardMode::PdPpo, scale, norm).unwrap();
    let mut r = rng::stream(7, "decouple", 0);
    let mut saw_violation = false;
    for _ in 0..40 {
        env.reset(r.random_range(0..4)).unwrap();
        // Extreme voltage actions provoke violations.
        let raw: Vec<f64> = (0..6).map(|i| if i < 3 { r.random::<f64>() } else { r.random_range(0.9..1.0) }).collect();
        let s = env.step(&raw).unwrap();
        if let Some(obj) = s.objective {
            assert_eq!(s.reward, -obj / scale);
            saw_violation |= s.cost.iter().any(|c| *c > 0.0);
            let sol = s.solution.unwrap();
            let v = rtopf_core::powerflow::violations(&net, &sol).deadband(1e-6);
            assert_eq!(&s.cost[..4], &v.as_array()[..]);
        }
    }
    assert!(saw_violation);
}
