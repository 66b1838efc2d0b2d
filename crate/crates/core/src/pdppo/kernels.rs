//! Returns, advantages, surrogate objective, KL and dual-update arithmetic.

use crate::neural::{gaussian_kl, GaussianPolicy, MlpParams, Tape, Var};

/// Backward discounted sums. A terminal transition ends its segment with a
/// zero continuation; the final transition of a non-terminal tail continues
/// with `bootstrap`.
pub fn discounted_returns(signal: &[f64], terminals: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let n = signal.len();
    let mut g = vec![0.0; n];
    let mut next = bootstrap;
    for t in (0..n).rev() {
        let cont = if terminals[t] { 0.0 } else { next };
        g[t] = signal[t] + gamma * cont;
        next = g[t];
    }
    g
}

/// Generalized advantage estimates with `delta_t = s_t + gamma V(s_{t+1}) -
/// V(s_t)`, the next value dropped on terminal transitions.
pub fn gae(
    signal: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminals: &[bool],
    gamma: f64,
    lam: f64,
) -> Vec<f64> {
    let n = signal.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let nv = if terminals[t] { 0.0 } else { next_values[t] };
        let delta = signal[t] + gamma * nv - values[t];
        let carry = if terminals[t] { 0.0 } else { running };
        running = delta + gamma * lam * carry;
        adv[t] = running;
    }
    adv
}

/// `A_L = A_R - sum_i lambda_i A_Ci`, with `a_c[t][i]`.
pub fn lagrange_advantage(a_r: &[f64], a_c: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    a_r.iter()
        .zip(a_c)
        .map(|(r, c)| r - c.iter().zip(lambda).map(|(a, l)| a * l).sum::<f64>())
        .collect()
}

/// One term of the clipped surrogate objective.
pub fn clip_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Standardizes to zero mean and unit variance (population), leaving a
/// constant column at zero.
pub fn normalize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    x.iter()
        .map(|v| if sd > 1e-12 { (v - mean) / sd } else { 0.0 })
        .collect()
}

/// Negated mean clipped surrogate over a minibatch, recorded on `tape`.
pub fn surrogate_loss(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    leaves: &[Var],
    states: &[&[f64]],
    actions: &[&[f64]],
    behavior_logp: &[f64],
    adv: &[f64],
    eps: f64,
) -> Var {
    let terms: Vec<Var> = (0..states.len())
        .map(|i| {
            let lp = policy.log_prob_tape(tape, leaves, states[i], actions[i]);
            let diff = tape.offset(lp, -behavior_logp[i]);
            let ratio = tape.exp(diff);
            let unclipped = tape.scale(ratio, adv[i]);
            let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
            let clipped = tape.scale(clipped, adv[i]);
            tape.min(unclipped, clipped)
        })
        .collect();
    let total = tape.add_all(&terms);
    tape.scale(total, -1.0 / states.len() as f64)
}

/// Mean squared error of a critic over a minibatch and its outputs.
pub fn critic_loss(tape: &mut Tape, critic: &MlpParams, leaves: &[Var], states: &[&[f64]], targets: &[&[f64]]) -> Var {
    let terms: Vec<Var> = states
        .iter()
        .zip(targets)
        .map(|(s, y)| {
            let x = tape.constant(s.to_vec());
            let out = critic.forward_tape(tape, leaves, x);
            let t = tape.constant(y.to_vec());
            let d = tape.sub(out, t);
            let sq = tape.square(d);
            tape.sum(sq)
        })
        .collect();
    let total = tape.add_all(&terms);
    tape.scale(total, 1.0 / (states.len() * critic.n_outputs()) as f64)
}

/// Batch-mean `KL(current || behavior)` at the given states.
pub fn mean_kl(current: &GaussianPolicy, behavior: &GaussianPolicy, states: &[&[f64]]) -> f64 {
    let total: f64 = states
        .iter()
        .map(|s| {
            gaussian_kl(
                &current.mean_action(s),
                &current.log_std,
                &behavior.mean_action(s),
                &behavior.log_std,
            )
        })
        .sum();
    total / states.len() as f64
}

/// Projected dual ascent. `cost_values[t][i]` is the cost critic at state
/// `t`, `ratio[t]` the current-to-behavior probability ratio.
pub fn update_duals(lambda: &mut [f64], cost_values: &[Vec<f64>], ratio: &[f64], limits: &[f64], lr: f64) -> Vec<f64> {
    let n = cost_values.len() as f64;
    let grad: Vec<f64> = (0..lambda.len())
        .map(|i| {
            cost_values
                .iter()
                .zip(ratio)
                .map(|(v, r)| (r * v[i] - limits[i]).max(0.0))
                .sum::<f64>()
                / n
        })
        .collect();
    for (l, g) in lambda.iter_mut().zip(&grad) {
        *l = (*l + lr * g).max(0.0);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_discount_returns_signal() {
        let r = [1.0, -2.0, 3.0];
        assert_eq!(discounted_returns(&r, &[false, false, true], 9.0, 0.0), r.to_vec());
    }

    #[test]
    fn geometric_sum() {
        let g = discounted_returns(&[1.0; 3], &[false, false, true], 0.0, 0.5);
        assert_eq!(g, vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn bootstrap_on_open_tail() {
        let g = discounted_returns(&[1.0, 1.0], &[false, false], 10.0, 0.5);
        assert_eq!(g, vec![1.0 + 0.5 * 6.0, 6.0]);
    }

    #[test]
    fn gae_with_zero_lambda_is_td_residual() {
        let s = [1.0, 2.0, 3.0];
        let v = [0.5, 0.1, -0.3];
        let nv = [0.1, -0.3, 7.0];
        let a = gae(&s, &v, &nv, &[false, false, true], 0.9, 0.0);
        assert_eq!(a, vec![1.0 + 0.9 * 0.1 - 0.5, 2.0 + 0.9 * -0.3 - 0.1, 3.0 + 0.3]);
    }

    #[test]
    fn clip_arithmetic() {
        assert!((clip_term(1.5, 2.0, 0.2) - 2.4).abs() < 1e-15);
        assert!((clip_term(0.5, -1.0, 0.2) - -0.8).abs() < 1e-15);
        assert_eq!(clip_term(1.0, 3.0, 0.2), 3.0);
    }

    #[test]
    fn dual_arithmetic() {
        let mut l = vec![0.1];
        update_duals(&mut l, &[vec![0.5]], &[1.0], &[0.0], 1e-3);
        assert!((l[0] - 0.1005).abs() < 1e-15);
        let mut l = vec![0.0, 0.3];
        let g = update_duals(&mut l, &[vec![0.0, -1.0]], &[1.0], &[0.0, 0.0], 1e-3);
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(l, vec![0.0, 0.3]);
    }

    #[test]
    fn lagrange_cases() {
        let ar = [1.0, -2.0];
        assert_eq!(lagrange_advantage(&ar, &[vec![5.0], vec![1.0]], &[0.0]), ar.to_vec());
        assert_eq!(lagrange_advantage(&ar, &[vec![1.0], vec![-2.0]], &[1.0]), vec![0.0, 0.0]);
    }
}
