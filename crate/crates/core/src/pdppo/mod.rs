//! Primal-dual PPO: rollout collection, reward and cost advantages, clipped
//! policy updates with KL early stopping, projected dual ascent, critic
//! regression and behavior-cloning pre-training.

mod kernels;

pub use kernels::{
    clip_term, critic_loss, discounted_returns, gae, lagrange_advantage, mean_kl, normalize,
    surrogate_loss, update_duals,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Normalizer, RewardMode, RtOpfEnv};
use crate::neural::{Activation, Adam, GaussianPolicy, MlpParams, Tape};
use crate::rng;

/// Interface the trainer needs from an environment.
pub trait Environment: Clone + Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn cost_dim(&self) -> usize;
    /// Upper bound on steps per episode.
    fn max_episode_len(&self) -> usize;
    /// Whether costs are priced by the multipliers. Environments that fold
    /// violations into the reward return false; their costs are only logged.
    fn priced_costs(&self) -> bool {
        true
    }
    /// Starts an episode and returns the (normalized) observation.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> EnvStep;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub state: Vec<f64>,
    pub reward: f64,
    pub cost: Vec<f64>,
    pub terminal: bool,
}

impl Environment for RtOpfEnv {
    fn state_dim(&self) -> usize {
        self.dims().0
    }

    fn action_dim(&self) -> usize {
        self.dims().1
    }

    fn cost_dim(&self) -> usize {
        RtOpfEnv::cost_dim(self)
    }

    fn max_episode_len(&self) -> usize {
        self.config().episode_len
    }

    fn priced_costs(&self) -> bool {
        matches!(self.reward_mode(), RewardMode::PdPpo)
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.reset_sampled(rng).normalized
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let r = RtOpfEnv::step(self, action).expect("trainer keeps the episode protocol");
        EnvStep {
            state: r.state.normalized,
            reward: r.reward,
            cost: r.cost,
            terminal: r.terminal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_eps: f64,
    pub kl_target: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub lambda_lr: f64,
    pub n_pi: usize,
    pub n_v: usize,
    pub episodes: u64,
    pub seed: u64,
    pub normalize_advantage: bool,
    /// Per-component cost limits; empty means all zero.
    pub cost_limits: Vec<f64>,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub workers: usize,
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lambda_gae: 0.95,
            clip_eps: 0.2,
            kl_target: 0.01,
            batch_size: 32,
            buffer_size: 400,
            actor_lr: 5e-5,
            critic_lr: 1e-4,
            lambda_lr: 1e-3,
            n_pi: 10,
            n_v: 10,
            episodes: 1000,
            seed: 0,
            normalize_advantage: true,
            cost_limits: Vec::new(),
            hidden: vec![64, 64],
            init_log_std: -3.0,
            workers: 1,
            divergence_limit: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.lambda_gae)
            && self.clip_eps > 0.0
            && self.clip_eps < 1.0
            && self.actor_lr > 0.0
            && self.critic_lr > 0.0
            && self.lambda_lr > 0.0
            && self.batch_size > 0
            && self.buffer_size > 0
            && !self.hidden.is_empty();
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged in round {round}: {what} = {value:e}")]
    Diverged { round: u64, what: String, value: f64 },
    #[error("checkpoint does not fit this environment: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Pre-clip policy sample.
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: Vec<f64>,
    pub next_state: Vec<f64>,
    pub log_prob: f64,
    pub terminal: bool,
}

/// Columns computed from a full buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferColumns {
    pub g_r: Vec<f64>,
    /// `g_c[i][t]` for cost component `i`.
    pub g_c: Vec<Vec<f64>>,
    pub a_r: Vec<f64>,
    pub a_c: Vec<Vec<f64>>,
    pub a_l: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub columns: Option<BufferColumns>,
}

impl RolloutBuffer {
    pub fn push(&mut self, t: Transition) {
        assert!(t.reward.is_finite(), "non-finite reward");
        assert!(
            t.cost.iter().all(|c| c.is_finite() && *c >= 0.0),
            "cost components must be finite and nonnegative"
        );
        self.columns = None;
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.columns = None;
    }

    /// Computes returns, advantages and the Lagrangian advantage from the
    /// given critics and multipliers.
    pub fn finalize(&mut self, critic_r: &MlpParams, critic_c: &MlpParams, lambda: &[f64], gamma: f64, lam: f64) {
        let tr = &self.transitions;
        let n = tr.len();
        let m = lambda.len();
        let terms: Vec<bool> = tr.iter().map(|t| t.terminal).collect();
        let vr: Vec<f64> = tr.iter().map(|t| critic_r.forward(&t.state)[0]).collect();
        let vr_next: Vec<f64> = tr.iter().map(|t| critic_r.forward(&t.next_state)[0]).collect();
        let vc: Vec<Vec<f64>> = tr.iter().map(|t| critic_c.forward(&t.state)).collect();
        let vc_next: Vec<Vec<f64>> = tr.iter().map(|t| critic_c.forward(&t.next_state)).collect();
        let rewards: Vec<f64> = tr.iter().map(|t| t.reward).collect();
        let g_r = discounted_returns(&rewards, &terms, vr_next[n - 1], gamma);
        let a_r = gae(&rewards, &vr, &vr_next, &terms, gamma, lam);
        let mut g_c = Vec::with_capacity(m);
        let mut a_c_cols = Vec::with_capacity(m);
        for i in 0..m {
            let sig: Vec<f64> = tr.iter().map(|t| t.cost[i]).collect();
            let v: Vec<f64> = vc.iter().map(|x| x[i]).collect();
            let vn: Vec<f64> = vc_next.iter().map(|x| x[i]).collect();
            g_c.push(discounted_returns(&sig, &terms, vn[n - 1], gamma));
            a_c_cols.push(gae(&sig, &v, &vn, &terms, gamma, lam));
        }
        let a_c_rows: Vec<Vec<f64>> = (0..n).map(|t| a_c_cols.iter().map(|c| c[t]).collect()).collect();
        let a_l = lagrange_advantage(&a_r, &a_c_rows, lambda);
        self.columns = Some(BufferColumns {
            g_r,
            g_c,
            a_r,
            a_c: a_c_cols,
            a_l,
        });
    }
}

/// Everything needed to evaluate or resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub actor: GaussianPolicy,
    pub critic_r: MlpParams,
    pub critic_c: MlpParams,
    pub lambda: Vec<f64>,
    pub opt_actor: Adam,
    pub opt_critic_r: Adam,
    pub opt_critic_c: Adam,
    pub normalizer: Option<Normalizer>,
    pub reward_scale: f64,
    pub episodes_done: u64,
    pub rounds_done: u64,
    /// Transitions of an unfinished collection round.
    pub pending: Vec<Transition>,
}

impl Checkpoint {
    pub fn fresh(state_dim: usize, action_dim: usize, cost_dim: usize, cfg: &TrainConfig) -> Self {
        let mut r = rng::stream(cfg.seed, "init", 0);
        let actor = GaussianPolicy::new(state_dim, &cfg.hidden, action_dim, cfg.init_log_std, &mut r);
        let sizes = |out: usize| {
            let mut s = vec![state_dim];
            s.extend(&cfg.hidden);
            s.push(out);
            s
        };
        let critic_r = MlpParams::init(&sizes(1), Activation::Identity, 1.0, &mut rng::stream(cfg.seed, "init", 1));
        // Zero output layer: an untrained cost critic predicts no violation,
        // so it cannot push the multipliers up on its own.
        let critic_c = MlpParams::init(&sizes(cost_dim), Activation::Identity, 0.0, &mut rng::stream(cfg.seed, "init", 2));
        let shapes = |p: &MlpParams| p.tensors.iter().map(Vec::len).collect::<Vec<_>>();
        Self {
            config_hash: String::new(),
            method: String::new(),
            seed: cfg.seed,
            opt_actor: Adam::new(cfg.actor_lr, &actor.tensor_lens()),
            opt_critic_r: Adam::new(cfg.critic_lr, &shapes(&critic_r)),
            opt_critic_c: Adam::new(cfg.critic_lr, &shapes(&critic_c)),
            actor,
            critic_r,
            critic_c,
            lambda: vec![0.0; cost_dim],
            normalizer: None,
            reward_scale: 1.0,
            episodes_done: 0,
            rounds_done: 0,
            pending: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One row per update round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: u64,
    pub episode: u64,
    pub mean_reward: f64,
    pub mean_cost: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kl: f64,
    pub actor_loss: f64,
    pub critic_r_loss: f64,
    pub critic_c_loss: f64,
    pub policy_steps: usize,
    pub wall_ms: f64,
}

fn run_episode<E: Environment>(env: &mut E, policy: &GaussianPolicy, seed: u64, episode: u64) -> Vec<Transition> {
    let mut r = rng::stream(seed, "episode", episode);
    let mut state = env.reset(&mut r);
    let mut out = Vec::new();
    for k in 0..env.max_episode_len() {
        let s = policy.sample(&state, &mut r);
        let step = env.step(&s.clipped);
        let terminal = step.terminal;
        out.push(Transition {
            state: std::mem::take(&mut state),
            action: s.action,
            reward: step.reward,
            cost: step.cost,
            next_state: step.state.clone(),
            log_prob: s.log_prob,
            terminal,
        });
        state = step.state;
        if terminal || k + 1 == env.max_episode_len() {
            break;
        }
    }
    out
}

/// Collects episodes `first..first + count` with `workers` threads. The
/// result does not depend on the worker count.
pub fn collect<E: Environment>(env: &E, policy: &GaussianPolicy, seed: u64, first: u64, count: u64, workers: usize) -> Vec<Transition> {
    let workers = workers.max(1).min(count.max(1) as usize);
    if workers == 1 {
        let mut e = env.clone();
        return (first..first + count)
            .flat_map(|ep| run_episode(&mut e, policy, seed, ep))
            .collect();
    }
    let per = count.div_ceil(workers as u64);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers as u64)
            .map(|w| {
                let mut e = env.clone();
                let lo = first + w * per;
                let hi = (lo + per).min(first + count);
                scope.spawn(move || {
                    (lo..hi)
                        .flat_map(|ep| run_episode(&mut e, policy, seed, ep))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    })
}

/// Episodes collected between two updates.
pub fn episodes_per_round<E: Environment>(env: &E, cfg: &TrainConfig) -> u64 {
    (cfg.buffer_size / env.max_episode_len().max(1)).max(1) as u64
}

/// Statistics of one update round.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub kl: f64,
    pub actor_loss: f64,
    pub critic_r_loss: f64,
    pub critic_c_loss: f64,
    pub policy_steps: usize,
    /// KL measured before each attempted minibatch step.
    pub batch_kls: Vec<f64>,
}

/// Policy, dual and critic updates on one full buffer. With `priced` false
/// the multipliers stay where they are.
pub fn update(
    ck: &mut Checkpoint,
    buffer: &mut RolloutBuffer,
    cfg: &TrainConfig,
    round: u64,
    priced: bool,
) -> Result<UpdateStats, TrainError> {
    let m = ck.lambda.len();
    let limits = if cfg.cost_limits.is_empty() { vec![0.0; m] } else { cfg.cost_limits.clone() };
    buffer.finalize(&ck.critic_r, &ck.critic_c, &ck.lambda, cfg.gamma, cfg.lambda_gae);
    let cols = buffer.columns.clone().expect("finalized");
    let tr = &buffer.transitions;
    let n = tr.len();
    let guard = |what: &str, value: f64| {
        if !value.is_finite() || value.abs() > cfg.divergence_limit {
            Err(TrainError::Diverged {
                round,
                what: what.to_string(),
                value,
            })
        } else {
            Ok(())
        }
    };
    let mean_abs_al = cols.a_l.iter().map(|a| a.abs()).sum::<f64>() / n as f64;
    guard("mean |A_L|", mean_abs_al)?;
    let adv = if cfg.normalize_advantage { normalize(&cols.a_l) } else { cols.a_l.clone() };

    let behavior = ck.actor.clone();
    let states: Vec<&[f64]> = tr.iter().map(|t| t.state.as_slice()).collect();
    let actions: Vec<&[f64]> = tr.iter().map(|t| t.action.as_slice()).collect();
    let old_lp: Vec<f64> = tr.iter().map(|t| t.log_prob).collect();
    let cost_values: Vec<Vec<f64>> = states.iter().map(|s| ck.critic_c.forward(s)).collect();
    let mut r = rng::stream(ck.seed, "update", round);
    let mut idx: Vec<usize> = (0..n).collect();

    let mut policy_steps = 0;
    let mut batch_kls = Vec::new();
    let mut actor_loss = 0.0;
    let mut kl = 0.0;
    'epochs: for _ in 0..cfg.n_pi {
        idx.shuffle(&mut r);
        let mut stop = false;
        for chunk in idx.chunks(cfg.batch_size) {
            let bs: Vec<&[f64]> = chunk.iter().map(|&i| states[i]).collect();
            let batch_kl = mean_kl(&ck.actor, &behavior, &bs);
            batch_kls.push(batch_kl);
            if batch_kl > cfg.kl_target {
                stop = true;
                break;
            }
            let ba: Vec<&[f64]> = chunk.iter().map(|&i| actions[i]).collect();
            let blp: Vec<f64> = chunk.iter().map(|&i| old_lp[i]).collect();
            let badv: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let mut tape = Tape::new();
            let leaves = ck.actor.leaves(&mut tape);
            let loss = surrogate_loss(&mut tape, &ck.actor, &leaves, &bs, &ba, &blp, &badv, cfg.clip_eps);
            actor_loss = tape.scalar(loss);
            guard("actor loss", actor_loss)?;
            let grads = ck.actor.gradients(&tape.backward(loss), &leaves);
            ck.opt_actor.step(ck.actor.tensors_mut(), &grads);
            policy_steps += 1;
            let ratio: Vec<f64> = (0..n)
                .map(|i| (ck.actor.log_prob(states[i], actions[i]) - old_lp[i]).exp())
                .collect();
            if priced {
                update_duals(&mut ck.lambda, &cost_values, &ratio, &limits, cfg.lambda_lr);
            }
            assert!(ck.lambda.iter().all(|l| *l >= 0.0));
        }
        kl = mean_kl(&ck.actor, &behavior, &states);
        if stop || kl > cfg.kl_target {
            break 'epochs;
        }
    }
    if !ck.actor.is_finite() {
        return Err(TrainError::Diverged {
            round,
            what: "actor parameters".into(),
            value: f64::NAN,
        });
    }

    let targets_r: Vec<Vec<f64>> = cols.g_r.iter().map(|g| vec![*g]).collect();
    let targets_c: Vec<Vec<f64>> = (0..n).map(|t| cols.g_c.iter().map(|c| c[t]).collect()).collect();
    let mut loss_r = 0.0;
    let mut loss_c = 0.0;
    for _ in 0..cfg.n_v {
        idx.shuffle(&mut r);
        let (mut sum_r, mut sum_c, mut batches) = (0.0, 0.0, 0);
        for chunk in idx.chunks(cfg.batch_size) {
            let bs: Vec<&[f64]> = chunk.iter().map(|&i| states[i]).collect();
            for (critic, opt, targets, sum) in [
                (&mut ck.critic_r, &mut ck.opt_critic_r, &targets_r, &mut sum_r),
                (&mut ck.critic_c, &mut ck.opt_critic_c, &targets_c, &mut sum_c),
            ] {
                let bt: Vec<&[f64]> = chunk.iter().map(|&i| targets[i].as_slice()).collect();
                let mut tape = Tape::new();
                let leaves = critic.leaves(&mut tape);
                let loss = critic_loss(&mut tape, critic, &leaves, &bs, &bt);
                *sum += tape.scalar(loss);
                let grads = critic.gradients(&tape.backward(loss), &leaves);
                opt.step(critic.tensors.iter_mut().collect(), &grads);
            }
            batches += 1;
        }
        loss_r = sum_r / batches as f64;
        loss_c = sum_c / batches as f64;
    }
    guard("reward critic loss", loss_r)?;
    guard("cost critic loss", loss_c)?;
    buffer.clear();
    Ok(UpdateStats {
        kl,
        actor_loss,
        critic_r_loss: loss_r,
        critic_c_loss: loss_c,
        policy_steps,
        batch_kls,
    })
}

/// Runs `episodes` more training episodes from `ck`, calling `log` after
/// every update round. Rounds are fixed blocks of episodes, so training can
/// stop and resume anywhere with identical results.
pub fn train<E: Environment>(
    env: &E,
    cfg: &TrainConfig,
    mut ck: Checkpoint,
    episodes: u64,
    mut log: impl FnMut(&LogRow),
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    if ck.lambda.len() != env.cost_dim() || ck.actor.action_dim() != env.action_dim() || ck.actor.mean.n_inputs() != env.state_dim() {
        return Err(TrainError::Incompatible(format!(
            "checkpoint dims (state {}, action {}, cost {}) vs env ({}, {}, {})",
            ck.actor.mean.n_inputs(),
            ck.actor.action_dim(),
            ck.lambda.len(),
            env.state_dim(),
            env.action_dim(),
            env.cost_dim()
        )));
    }
    let per_round = episodes_per_round(env, cfg);
    let target = ck.episodes_done + episodes;
    while ck.episodes_done < target {
        let started = Instant::now();
        let in_round = ck.episodes_done - ck.rounds_done * per_round;
        let take = (per_round - in_round).min(target - ck.episodes_done);
        let fresh = collect(env, &ck.actor, ck.seed, ck.episodes_done, take, cfg.workers);
        ck.pending.extend(fresh);
        ck.episodes_done += take;
        if in_round + take < per_round {
            break;
        }
        let mut buffer = RolloutBuffer::default();
        for t in std::mem::take(&mut ck.pending) {
            buffer.push(t);
        }
        let n = buffer.len() as f64;
        let mean_reward = buffer.transitions.iter().map(|t| t.reward).sum::<f64>() / n;
        let mean_cost: Vec<f64> = (0..ck.lambda.len())
            .map(|i| buffer.transitions.iter().map(|t| t.cost[i]).sum::<f64>() / n)
            .collect();
        let round = ck.rounds_done;
        let stats = update(&mut ck, &mut buffer, cfg, round, env.priced_costs())?;
        ck.rounds_done += 1;
        log(&LogRow {
            round,
            episode: ck.episodes_done,
            mean_reward,
            mean_cost,
            lambda: ck.lambda.clone(),
            kl: stats.kl,
            actor_loss: stats.actor_loss,
            critic_r_loss: stats.critic_r_loss,
            critic_c_loss: stats.critic_c_loss,
            policy_steps: stats.policy_steps,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(ck)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 1e-3,
            batch_size: 32,
        }
    }
}

/// Mean squared error between the policy mean and target actions.
pub fn bc_loss(policy: &GaussianPolicy, data: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(s, a)| {
            policy
                .mean_action(s)
                .iter()
                .zip(a)
                .map(|(m, t)| (m - t).powi(2))
                .sum::<f64>()
        })
        .sum();
    total / (data.len() * policy.action_dim()) as f64
}

/// Regresses the policy mean onto `(state, raw action)` pairs. Returns the
/// full-data loss after each epoch.
pub fn pretrain_bc(policy: &mut GaussianPolicy, data: &[(Vec<f64>, Vec<f64>)], cfg: &BcConfig, seed: u64) -> Vec<f64> {
    let mut opt = Adam::new(cfg.lr, &policy.mean.tensors.iter().map(Vec::len).collect::<Vec<_>>());
    let mut r = rng::stream(seed, "bc", 0);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        idx.shuffle(&mut r);
        for chunk in idx.chunks(cfg.batch_size.max(1)) {
            let bs: Vec<&[f64]> = chunk.iter().map(|&i| data[i].0.as_slice()).collect();
            let bt: Vec<&[f64]> = chunk.iter().map(|&i| data[i].1.as_slice()).collect();
            let mut tape = Tape::new();
            let leaves = policy.mean.leaves(&mut tape);
            let loss = critic_loss(&mut tape, &policy.mean, &leaves, &bs, &bt);
            let grads = policy.mean.gradients(&tape.backward(loss), &leaves);
            opt.step(policy.mean.tensors.iter_mut().collect(), &grads);
        }
        history.push(bc_loss(policy, data));
    }
    history
}
