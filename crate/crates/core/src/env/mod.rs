//! Real-time OPF as a constrained MDP: observations, action clipping,
//! reward and cost signals, and episode mechanics over an expert trajectory.

mod contingency;
mod dataset;

pub use contingency::{apply_contingency, ContingencySet};
pub use dataset::{
    base_power_factor, generate_dataset, net_load_buses, DatasetConfig, LoadScenario, LoadStep,
};

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Bus, BusLoads, Generator, Network};
use crate::opf::{solve_acopf, ExpertTrajectory, OpfError};
use crate::powerflow::{
    violations, DispatchSetpoints, PowerFlowSolution, PowerFlowSolver, ViolationVector,
};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step index {index} out of range for a trajectory of {len} steps")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("outage {outage:?} splits the network")]
    ContingencySplitsNetwork { outage: Vec<(usize, usize)> },
    #[error("no in-service branch between buses {from} and {to}")]
    UnknownBranch { from: usize, to: usize },
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("action contains non-finite entries")]
    NonFiniteAction,
    #[error("step called before reset")]
    NotReset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("trajectory does not match network: {0}")]
    Mismatch(String),
    #[error("reward scale from base-case OPF: {0}")]
    RewardScale(#[from] OpfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EnvError {
    fn io(e: std::io::Error) -> Self {
        Self::Io(e)
    }

    fn csv(e: csv::Error) -> Self {
        Self::Format(e.to_string())
    }
}

/// Learning signal used during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardMode {
    /// Scaled negative operating cost; violations go to the cost channel.
    PdPpo,
    /// Violations subtracted from the reward with fixed coefficients.
    Penalty { coeffs: [f64; 4] },
    /// Positive reward `-k C + b` when feasible, `-sum(c)` otherwise.
    /// `k = None` means `1 / reward_scale`.
    Cliff { k: Option<f64>, b: f64 },
}

impl RewardMode {
    pub fn default_penalty() -> Self {
        RewardMode::Penalty { coeffs: [50.0; 4] }
    }

    pub fn default_cliff() -> Self {
        RewardMode::Cliff { k: None, b: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub episode_len: usize,
    /// $/h dividing the operating cost; `None` uses the base-case expert
    /// objective.
    pub reward_scale: Option<f64>,
    /// Largest voltage set-point change per step, pu.
    pub dv_max: f64,
    pub action_map: ActionMap,
    pub reward_floor: f64,
    pub cost_ceiling: f64,
    /// Violations at or below this many pu are treated as solver round-off.
    pub violation_tol: f64,
    pub penalty_coeffs: [f64; 4],
    pub cliff_k: Option<f64>,
    pub cliff_b: f64,
    /// Branch outages, as `(from, to)` bus-id pairs, whose violations extend
    /// the cost vector.
    pub contingencies: Vec<Vec<(usize, usize)>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_len: 8,
            reward_scale: None,
            dv_max: 0.05,
            action_map: ActionMap::Centered,
            reward_floor: -10.0,
            cost_ceiling: 1.0,
            violation_tol: 1e-6,
            penalty_coeffs: [50.0; 4],
            cliff_k: None,
            cliff_b: 2.0,
            contingencies: Vec::new(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.episode_len == 0 || !(self.dv_max > 0.0) || self.violation_tol < 0.0 {
            return Err(EnvError::Config(
                "env: episode_len >= 1, dv_max > 0 and violation_tol >= 0 required".into(),
            ));
        }
        if matches!(self.reward_scale, Some(s) if !(s > 0.0)) {
            return Err(EnvError::Config("env: reward_scale must be positive".into()));
        }
        Ok(())
    }

    /// Reward scale, solving the base-case OPF when not configured.
    pub fn resolved_reward_scale(&self, net: &Network) -> Result<f64, EnvError> {
        match self.reward_scale {
            Some(s) => Ok(s),
            None => Ok(solve_acopf(net, &net.base_loads(), None)?.objective),
        }
    }

    pub fn reward_mode(&self, kind: RewardKind) -> RewardMode {
        match kind {
            RewardKind::PdPpo => RewardMode::PdPpo,
            RewardKind::Penalty => RewardMode::Penalty {
                coeffs: self.penalty_coeffs,
            },
            RewardKind::Cliff => RewardMode::Cliff {
                k: self.cliff_k,
                b: self.cliff_b,
            },
        }
    }
}

/// Method selector without parameters, as used on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    PdPpo,
    Penalty,
    Cliff,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [RewardKind::PdPpo, RewardKind::Penalty, RewardKind::Cliff];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::PdPpo => "pdppo",
            RewardKind::Penalty => "penalty",
            RewardKind::Cliff => "cliff",
        }
    }
}

impl std::str::FromStr for RewardKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pdppo" => Ok(RewardKind::PdPpo),
            "penalty" => Ok(RewardKind::Penalty),
            "cliff" => Ok(RewardKind::Cliff),
            _ => Err(format!("unknown reward mode {s:?} (pdppo, penalty, cliff)")),
        }
    }
}

pub fn reward_penalty(operating_cost: f64, cost: &[f64], coeffs: &[f64]) -> f64 {
    -operating_cost
        - cost
            .iter()
            .enumerate()
            .map(|(j, c)| coeffs[j % coeffs.len()] * c)
            .sum::<f64>()
}

pub fn reward_cliff(operating_cost: f64, cost: &[f64], k: f64, b: f64) -> f64 {
    if cost.iter().all(|&c| c == 0.0) {
        -k * operating_cost + b
    } else {
        -cost.iter().sum::<f64>()
    }
}

/// `(state_dim, action_dim)` for a network.
pub fn dims(net: &Network) -> (usize, usize) {
    let ng = net.n_generators();
    (2 * net_load_buses(net).len() + 2 * ng + 1, 2 * ng)
}

/// Per-component max-min ranges of the state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    /// Ranges implied by the dataset bands and the generator limits.
    pub fn from_bands(net: &Network, cfg: &DatasetConfig) -> Self {
        let buses = net_load_buses(net);
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let sorted = |a: f64, b: f64| if a <= b { (a, b) } else { (b, a) };
        for &i in &buses {
            let pd = net.buses[i].pd;
            let (a, b) = sorted(cfg.load_scale_low * pd, cfg.load_scale_high * pd);
            lo.push(a);
            hi.push(b);
        }
        for &i in &buses {
            let b = &net.buses[i];
            let (blo, bhi) = cfg.pf_band(base_power_factor(b.pd, b.qd));
            let sign = if b.qd < 0.0 { -1.0 } else { 1.0 };
            let corners = [
                cfg.load_scale_low * b.pd * blo.acos().tan(),
                cfg.load_scale_low * b.pd * bhi.acos().tan(),
                cfg.load_scale_high * b.pd * blo.acos().tan(),
                cfg.load_scale_high * b.pd * bhi.acos().tan(),
            ]
            .map(|c| sign * c);
            lo.push(corners.iter().cloned().fold(f64::INFINITY, f64::min));
            hi.push(corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        for g in &net.generators {
            lo.push(g.pmin);
            hi.push(g.pmax);
        }
        for g in &net.generators {
            let b = &net.buses[net.bus_idx(g.bus).unwrap()];
            lo.push(b.vmin);
            hi.push(b.vmax);
        }
        let total: f64 = buses.iter().map(|&i| net.buses[i].pd).sum();
        let (a, b) = sorted(cfg.load_scale_low * total, cfg.load_scale_high * total);
        lo.push(a);
        hi.push(b);
        Self { lo, hi }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    fn span(&self, k: usize) -> f64 {
        let s = self.hi[k] - self.lo[k];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// Maps into `[0, 1]`, clamping values outside the stored ranges.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(k, x)| ((x - self.lo[k]) / self.span(k)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(k, v)| self.lo[k] + v * self.span(k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmdpState {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Set-point adjustments: MW for active power, pu for voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVector {
    pub dp: Vec<f64>,
    pub dv: Vec<f64>,
}

/// How a policy output in `(0,1)` becomes a set-point change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMap {
    /// `u = 2 raw - 1` scaled by half the generator range (MW) or by
    /// `dv_max` (pu), then clipped to the reachable box.
    #[default]
    Centered,
    /// `raw` scaled by the full range, as the formula is usually printed.
    /// Only increases are reachable.
    Literal,
    /// `raw` spread linearly over the reachable box, so no output is
    /// clipped and every output moves the set-point.
    Box,
}

impl ActionMap {
    /// Change for output `raw` given the scale `range` and reachable box.
    fn delta(self, raw: f64, range: f64, lo: f64, hi: f64) -> f64 {
        match self {
            ActionMap::Centered => clamp_box((2.0 * raw - 1.0) * range / 2.0, lo, hi),
            ActionMap::Literal => clamp_box(raw * range, lo, hi),
            ActionMap::Box if hi > lo => lo + raw.clamp(0.0, 1.0) * (hi - lo),
            ActionMap::Box => clamp_box(0.0, lo, hi),
        }
    }

    /// Output reproducing `delta`, unclamped.
    fn raw(self, delta: f64, range: f64, lo: f64, hi: f64) -> f64 {
        match self {
            ActionMap::Centered => (delta / (range / 2.0) + 1.0) / 2.0,
            ActionMap::Literal => delta / range,
            ActionMap::Box if hi > lo => (delta - lo) / (hi - lo),
            ActionMap::Box => 0.5,
        }
    }

    /// Voltage span the output is scaled by.
    fn v_range(self, dv_max: f64, vmin: f64, vmax: f64) -> f64 {
        match self {
            ActionMap::Literal => vmax - vmin,
            _ => 2.0 * dv_max,
        }
    }
}

fn clamp_box(x: f64, lo: f64, hi: f64) -> f64 {
    // an inverted box only arises for the slack, whose slot is ignored
    x.max(lo).min(hi)
}

fn p_box(g: &Generator, prev_pg: f64) -> (f64, f64) {
    ((-g.r_down).max(g.pmin - prev_pg), g.r_up.min(g.pmax - prev_pg))
}

fn v_box(b: &Bus, prev_vg: f64, dv_max: f64) -> (f64, f64) {
    ((-dv_max).max(b.vmin - prev_vg), dv_max.min(b.vmax - prev_vg))
}

/// Maps a policy output in `(0,1)^{2G}` to set-point adjustments that keep
/// every generator inside its limits and ramp box.
pub fn clip_action(
    net: &Network,
    raw: &[f64],
    prev: &DispatchSetpoints,
    dv_max: f64,
    map: ActionMap,
) -> ActionVector {
    let ng = net.n_generators();
    let mut dp = Vec::with_capacity(ng);
    let mut dv = Vec::with_capacity(ng);
    for (i, g) in net.generators.iter().enumerate() {
        let (lo, hi) = p_box(g, prev.pg[i]);
        dp.push(map.delta(raw[i], g.pmax - g.pmin, lo, hi));
    }
    for (i, g) in net.generators.iter().enumerate() {
        let b = &net.buses[net.bus_idx(g.bus).unwrap()];
        let (lo, hi) = v_box(b, prev.vg[i], dv_max);
        dv.push(map.delta(raw[ng + i], map.v_range(dv_max, b.vmin, b.vmax), lo, hi));
    }
    ActionVector { dp, dv }
}

/// Raw action that moves `prev` to `target` under [`clip_action`], clamped
/// to `[0, 1]` when the target is out of reach. Slack slots map to the
/// zero-change output.
pub fn invert_action(
    net: &Network,
    prev: &DispatchSetpoints,
    target: &DispatchSetpoints,
    dv_max: f64,
    map: ActionMap,
) -> Vec<f64> {
    let ng = net.n_generators();
    let slack = net.slack_bus();
    let mut raw = Vec::with_capacity(2 * ng);
    for (i, g) in net.generators.iter().enumerate() {
        let (lo, hi) = p_box(g, prev.pg[i]);
        let range = g.pmax - g.pmin;
        let delta = if net.bus_idx(g.bus) == Some(slack) || range <= 0.0 {
            0.0
        } else {
            target.pg[i] - prev.pg[i]
        };
        raw.push(if range > 0.0 { map.raw(delta, range, lo, hi) } else { 0.5 });
    }
    for (i, g) in net.generators.iter().enumerate() {
        let b = &net.buses[net.bus_idx(g.bus).unwrap()];
        let (lo, hi) = v_box(b, prev.vg[i], dv_max);
        raw.push(map.raw(target.vg[i] - prev.vg[i], map.v_range(dv_max, b.vmin, b.vmax), lo, hi));
    }
    raw.iter().map(|r| r.clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: CmdpState,
    pub reward: f64,
    /// Base-case violations followed by one block of four per contingency.
    pub cost: Vec<f64>,
    pub terminal: bool,
    pub diverged: bool,
    /// Operating cost at the solved dispatch, $/h (None on divergence).
    pub objective: Option<f64>,
    pub solution: Option<PowerFlowSolution>,
}

/// Sets the violations of a base-case solution plus one block per
/// contingency network.
fn expanded_cost(
    solvers: &[(Network, PowerFlowSolver)],
    sp: &DispatchSetpoints,
    loads: &BusLoads,
    base: ViolationVector,
    tol: f64,
    ceiling: f64,
) -> Vec<f64> {
    let mut cost = base.as_array().to_vec();
    for (net, solver) in solvers {
        let block = match solver.solve(sp, loads, None) {
            Ok(sol) => violations(net, &sol).deadband(tol).as_array(),
            Err(_) => [ceiling; 4],
        };
        cost.extend(block);
    }
    cost
}

/// Environment over one expert trajectory. Cheap to clone for workers.
#[derive(Debug, Clone)]
pub struct RtOpfEnv {
    net: Arc<Network>,
    solver: PowerFlowSolver,
    contingencies: Arc<Vec<(Network, PowerFlowSolver)>>,
    traj: Arc<ExpertTrajectory>,
    cfg: EnvConfig,
    mode: RewardMode,
    reward_scale: f64,
    normalizer: Arc<Normalizer>,
    load_buses: Vec<usize>,
    episode: Option<Episode>,
}

#[derive(Debug, Clone)]
struct Episode {
    index: usize,
    count: usize,
    prev: DispatchSetpoints,
    loads: BusLoads,
    next_total: f64,
    warm: Option<(Vec<f64>, Vec<f64>)>,
    done: bool,
}

impl RtOpfEnv {
    pub fn new(
        net: &Network,
        traj: Arc<ExpertTrajectory>,
        cfg: EnvConfig,
        mode: RewardMode,
        reward_scale: f64,
        normalizer: Arc<Normalizer>,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        traj.validate(net)
            .map_err(|e| EnvError::Mismatch(e.to_string()))?;
        let (sd, _) = dims(net);
        if normalizer.len() != sd {
            return Err(EnvError::Dimension {
                what: "normalizer",
                expected: sd,
                got: normalizer.len(),
            });
        }
        let contingencies = cfg
            .contingencies
            .iter()
            .map(|o| {
                let n = apply_contingency(net, o)?;
                let s = PowerFlowSolver::new(&n);
                Ok((n, s))
            })
            .collect::<Result<Vec<_>, EnvError>>()?;
        Ok(Self {
            solver: PowerFlowSolver::new(net),
            contingencies: Arc::new(contingencies),
            load_buses: net_load_buses(net),
            net: Arc::new(net.clone()),
            traj,
            cfg,
            mode,
            reward_scale,
            normalizer,
            episode: None,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn trajectory(&self) -> &ExpertTrajectory {
        &self.traj
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.mode
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    pub fn dims(&self) -> (usize, usize) {
        dims(&self.net)
    }

    pub fn cost_dim(&self) -> usize {
        4 * (self.contingencies.len() + 1)
    }

    pub fn n_steps(&self) -> usize {
        self.traj.steps.len()
    }

    /// Current previous set-points (slack slot holds its solved output).
    pub fn prev_setpoints(&self) -> Option<&DispatchSetpoints> {
        self.episode.as_ref().map(|e| &e.prev)
    }

    pub fn current_index(&self) -> Option<usize> {
        self.episode.as_ref().map(|e| e.index)
    }

    fn state(&self) -> CmdpState {
        let ep = self.episode.as_ref().expect("reset before reading state");
        let mut raw = Vec::with_capacity(self.normalizer.len());
        raw.extend(self.load_buses.iter().map(|&i| ep.loads.pd[i]));
        raw.extend(self.load_buses.iter().map(|&i| ep.loads.qd[i]));
        raw.extend(&ep.prev.pg);
        raw.extend(&ep.prev.vg);
        raw.push(ep.next_total);
        let normalized = self.normalizer.normalize(&raw);
        CmdpState { raw, normalized }
    }

    /// Pins the episode to step `index` of the trajectory.
    pub fn reset(&mut self, index: usize) -> Result<CmdpState, EnvError> {
        let steps = &self.traj.steps;
        if index >= steps.len() {
            return Err(EnvError::IndexOutOfRange {
                index,
                len: steps.len(),
            });
        }
        let step = &steps[index];
        let prev_vg = steps[index.saturating_sub(1)].vg.clone();
        let next = &steps[(index + 1).min(steps.len() - 1)];
        self.episode = Some(Episode {
            index,
            count: 0,
            prev: DispatchSetpoints {
                pg: step.prev_pg.clone(),
                vg: prev_vg,
            },
            loads: step.loads.clone(),
            next_total: self.load_buses.iter().map(|&i| next.loads.pd[i]).sum(),
            warm: None,
            done: false,
        });
        Ok(self.state())
    }

    pub fn reset_sampled<R: Rng>(&mut self, rng: &mut R) -> CmdpState {
        let index = rng.random_range(0..self.traj.steps.len());
        self.reset(index).expect("sampled index in range")
    }

    /// Raw action that reproduces the expert set-points of the pinned step.
    pub fn expert_raw_action(&self) -> Option<Vec<f64>> {
        let ep = self.episode.as_ref()?;
        let step = &self.traj.steps[ep.index];
        let target = DispatchSetpoints {
            pg: step.pg.clone(),
            vg: step.vg.clone(),
        };
        Some(invert_action(&self.net, &ep.prev, &target, self.cfg.dv_max, self.cfg.action_map))
    }

    /// Imitation pairs over steps `indices`: the reset state mapped to the
    /// expert action, and the state reached by that action mapped to the
    /// action that holds the expert set-points.
    pub fn imitation_dataset(&mut self, indices: &[usize]) -> Result<Vec<(Vec<f64>, Vec<f64>)>, EnvError> {
        let mut out = Vec::with_capacity(2 * indices.len());
        for &t in indices {
            let s0 = self.reset(t)?;
            let a0 = self.expert_raw_action().expect("reset above");
            let r = self.step(&a0)?;
            out.push((s0.normalized, a0));
            if !r.terminal {
                let ep = self.episode.as_ref().expect("reset above");
                let step = &self.traj.steps[t];
                let hold = DispatchSetpoints {
                    pg: step.pg.clone(),
                    vg: step.vg.clone(),
                };
                out.push((r.state.normalized, invert_action(&self.net, &ep.prev, &hold, self.cfg.dv_max, self.cfg.action_map)));
            }
        }
        self.episode = None;
        Ok(out)
    }

    fn reward(&self, objective: f64, cost: &[f64]) -> f64 {
        let scaled = objective / self.reward_scale;
        match self.mode {
            RewardMode::PdPpo => -scaled,
            RewardMode::Penalty { coeffs } => reward_penalty(scaled, cost, &coeffs),
            RewardMode::Cliff { k, b } => {
                let k = k.unwrap_or(1.0 / self.reward_scale);
                reward_cliff(objective, cost, k, b)
            }
        }
    }

    pub fn step(&mut self, raw: &[f64]) -> Result<StepResult, EnvError> {
        let (_, ad) = self.dims();
        if raw.len() != ad {
            return Err(EnvError::Dimension {
                what: "action",
                expected: ad,
                got: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        let net = Arc::clone(&self.net);
        let ep = self.episode.as_mut().ok_or(EnvError::NotReset)?;
        if ep.done {
            return Err(EnvError::NotReset);
        }
        let act = clip_action(&net, raw, &ep.prev, self.cfg.dv_max, self.cfg.action_map);
        let slack = net.slack_bus();
        let gen_bus = net.gen_bus_indices();
        let mut sp = ep.prev.clone();
        for i in 0..net.n_generators() {
            if gen_bus[i] != slack {
                sp.pg[i] += act.dp[i];
            }
            sp.vg[i] += act.dv[i];
        }
        let warm = ep.warm.as_ref().map(|(m, a)| (m.as_slice(), a.as_slice()));
        let solved = self.solver.solve(&sp, &ep.loads, warm);
        ep.count += 1;
        let result = match solved {
            Ok(sol) => {
                let base = violations(&net, &sol).deadband(self.cfg.violation_tol);
                let cost = expanded_cost(
                    &self.contingencies,
                    &sp,
                    &ep.loads,
                    base,
                    self.cfg.violation_tol,
                    self.cfg.cost_ceiling,
                );
                let objective = net.generation_cost(&sol.pg_solved);
                sp.pg = sol.pg_solved.clone();
                ep.prev = sp;
                ep.warm = Some((sol.vm.clone(), sol.va.clone()));
                ep.done = ep.count >= self.cfg.episode_len;
                (cost, Some(objective), Some(sol), false)
            }
            Err(_) => {
                ep.prev = sp;
                ep.warm = None;
                ep.done = true;
                (vec![self.cfg.cost_ceiling; self.cost_dim()], None, None, true)
            }
        };
        let (cost, objective, solution, diverged) = result;
        let terminal = self.episode.as_ref().unwrap().done;
        let reward = match objective {
            Some(obj) => self.reward(obj, &cost),
            None => self.cfg.reward_floor,
        };
        Ok(StepResult {
            state: self.state(),
            reward,
            cost,
            terminal,
            diverged,
            objective,
            solution,
        })
    }
}

/// Cost vector for one set of set-points against the base network and each
/// contingency, without deadband.
pub fn contingency_cost_vector(
    net: &Network,
    set: &ContingencySet,
    sp: &DispatchSetpoints,
    loads: &BusLoads,
) -> Result<Vec<f64>, EnvError> {
    let base_sol = PowerFlowSolver::new(net)
        .solve(sp, loads, None)
        .map_err(|e| EnvError::Config(format!("base case power flow: {e}")))?;
    let nets = set
        .outages
        .iter()
        .map(|o| {
            let n = apply_contingency(net, o)?;
            let s = PowerFlowSolver::new(&n);
            Ok((n, s))
        })
        .collect::<Result<Vec<_>, EnvError>>()?;
    Ok(expanded_cost(
        &nets,
        sp,
        loads,
        violations(net, &base_sol),
        0.0,
        1.0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opf::generate_expert_trajectory;

    fn case9_env(mode: RewardMode) -> RtOpfEnv {
        let net = Network::ieee9();
        let cfg = DatasetConfig {
            horizon: 6,
            seed: 3,
            ..Default::default()
        };
        let scen = generate_dataset(&net, &cfg).unwrap();
        let traj = generate_expert_trajectory(&net, &scen.all_bus_loads(&net)).unwrap();
        let ecfg = EnvConfig::default();
        let scale = ecfg.resolved_reward_scale(&net).unwrap();
        RtOpfEnv::new(
            &net,
            Arc::new(traj),
            ecfg,
            mode,
            scale,
            Arc::new(Normalizer::from_bands(&net, &cfg)),
        )
        .unwrap()
    }

    #[test]
    fn published_dimensions() {
        assert_eq!(dims(&Network::ieee9()), (13, 6));
        assert_eq!(dims(&Network::ieee30()), (53, 12));
    }

    #[test]
    fn neutral_action_is_zero_delta() {
        let net = Network::ieee9();
        let prev = DispatchSetpoints {
            pg: vec![100.0, 100.0, 100.0],
            vg: vec![1.0; 3],
        };
        let a = clip_action(&net, &[0.5; 6], &prev, 0.05, ActionMap::Centered);
        assert!(a.dp.iter().chain(&a.dv).all(|&d| d == 0.0));
    }

    #[test]
    fn full_action_saturates_at_ramp() {
        let net = Network::ieee9();
        let prev = DispatchSetpoints {
            pg: vec![100.0, 100.0, 100.0],
            vg: vec![1.0; 3],
        };
        let a = clip_action(&net, &[1.0; 6], &prev, 0.05, ActionMap::Centered);
        for (i, g) in net.generators.iter().enumerate() {
            assert_eq!(a.dp[i], g.r_up);
        }
        assert!(a.dv.iter().all(|&d| d == 0.05));
    }

    #[test]
    fn literal_map_cannot_decrease() {
        let net = Network::ieee9();
        let prev = DispatchSetpoints {
            pg: vec![100.0, 100.0, 100.0],
            vg: vec![1.0; 3],
        };
        let a = clip_action(&net, &[0.0; 6], &prev, 0.05, ActionMap::Literal);
        assert!(a.dp.iter().chain(&a.dv).all(|&d| d == 0.0));
        let target = DispatchSetpoints {
            pg: vec![100.0, 110.0, 95.0],
            vg: vec![1.0, 1.02, 0.98],
        };
        let raw = invert_action(&net, &prev, &target, 0.05, ActionMap::Literal);
        let a = clip_action(&net, &raw, &prev, 0.05, ActionMap::Literal);
        assert!((a.dp[1] - 10.0).abs() < 1e-12 && (a.dv[1] - 0.02).abs() < 1e-12);
        assert_eq!((a.dp[2], a.dv[2]), (0.0, 0.0));
    }

    #[test]
    fn box_map_spans_the_reachable_box() {
        let net = Network::ieee9();
        let prev = DispatchSetpoints {
            pg: vec![100.0, 100.0, 100.0],
            vg: vec![1.1, 1.0, 0.92],
        };
        let lo = clip_action(&net, &[0.0; 6], &prev, 0.05, ActionMap::Box);
        let hi = clip_action(&net, &[1.0; 6], &prev, 0.05, ActionMap::Box);
        assert_eq!(hi.dv[0], 0.0);
        assert!((lo.dv[0] + 0.05).abs() < 1e-12);
        assert!((lo.dv[2] + 0.02).abs() < 1e-12 && (hi.dv[2] - 0.05).abs() < 1e-12);
        // strictly monotone: nearby outputs give different voltages
        let a = clip_action(&net, &[0.9; 6], &prev, 0.05, ActionMap::Box);
        let b = clip_action(&net, &[0.91; 6], &prev, 0.05, ActionMap::Box);
        assert!(b.dv[0] > a.dv[0] && b.dp[1] > a.dp[1]);
        let target = DispatchSetpoints {
            pg: vec![100.0, 110.0, 95.0],
            vg: vec![1.08, 1.02, 0.95],
        };
        let raw = invert_action(&net, &prev, &target, 0.05, ActionMap::Box);
        let a = clip_action(&net, &raw, &prev, 0.05, ActionMap::Box);
        for i in 1..3 {
            assert!((prev.pg[i] + a.dp[i] - target.pg[i]).abs() < 1e-9);
        }
        for i in 0..3 {
            assert!((prev.vg[i] + a.dv[i] - target.vg[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reset_is_deterministic_and_stationary() {
        let mut env = case9_env(RewardMode::PdPpo);
        let a = env.reset(2).unwrap();
        let b = env.reset(2).unwrap();
        assert_eq!(a, b);
        let r = env.step(&[0.5; 6]).unwrap();
        // demand block (P and Q of 3 buses) and lookahead stay fixed
        assert_eq!(a.raw[..6], r.state.raw[..6]);
        assert_eq!(a.raw[12], r.state.raw[12]);
        assert!(env.reset(6).is_err());
    }

    #[test]
    fn reset_at_zero_uses_first_step_optimum() {
        let env = {
            let mut e = case9_env(RewardMode::PdPpo);
            e.reset(0).unwrap();
            e
        };
        let traj = env.trajectory();
        let free = solve_acopf(env.network(), &traj.steps[0].loads, None).unwrap();
        let prev = env.prev_setpoints().unwrap();
        for (a, b) in prev.pg.iter().zip(&free.pg) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn expert_action_reaches_expert_point() {
        let mut env = case9_env(RewardMode::PdPpo);
        for t in 0..env.n_steps() {
            env.reset(t).unwrap();
            let raw = env.expert_raw_action().unwrap();
            let r = env.step(&raw).unwrap();
            let step = &env.trajectory().steps[t];
            assert!(r.cost.iter().all(|&c| c == 0.0), "step {t}: {:?}", r.cost);
            let obj = r.objective.unwrap();
            assert!((obj - step.objective).abs() / step.objective < 1e-6);
            assert!((r.reward + obj / env.reward_scale()).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_terminates_after_configured_length() {
        let mut env = case9_env(RewardMode::PdPpo);
        env.reset(1).unwrap();
        for k in 0..8 {
            let r = env.step(&[0.5; 6]).unwrap();
            assert_eq!(r.terminal, k == 7);
        }
        assert!(matches!(env.step(&[0.5; 6]), Err(EnvError::NotReset)));
    }

    #[test]
    fn reward_helpers() {
        assert_eq!(reward_penalty(1.0, &[0.0; 4], &[10.0; 4]), -1.0);
        assert_eq!(reward_penalty(1.0, &[0.0, 0.0, 1.0, 0.0], &[10.0; 4]), -11.0);
        assert!(reward_cliff(100.0, &[0.0; 4], 0.01, 2.0) > 0.0);
        assert!(reward_cliff(0.0, &[1e-6, 0.0, 0.0, 0.0], 0.01, 2.0) < 0.0);
    }

    #[test]
    fn divergence_gives_floor_and_ceiling() {
        let mut env = case9_env(RewardMode::PdPpo);
        env.reset(0).unwrap();
        // drive every voltage down as far as allowed, repeatedly
        let mut last = None;
        for _ in 0..8 {
            let r = env.step(&[0.0; 6]).unwrap();
            let done = r.terminal;
            last = Some(r);
            if done {
                break;
            }
        }
        let r = last.unwrap();
        if r.diverged {
            assert_eq!(r.reward, -10.0);
            assert!(r.cost.iter().all(|&c| c == 1.0));
        }
    }

    #[test]
    fn contingency_blocks() {
        let net = Network::ieee30();
        let sp = DispatchSetpoints::from_case(&net);
        let loads = net.base_loads();
        let none = contingency_cost_vector(&net, &ContingencySet::default(), &sp, &loads).unwrap();
        assert_eq!(none.len(), 4);
        let set = ContingencySet {
            outages: vec![vec![(4, 12)]],
        };
        let v = contingency_cost_vector(&net, &set, &sp, &loads).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v[..4], none[..]);
    }
}
