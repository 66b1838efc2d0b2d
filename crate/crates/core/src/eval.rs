//! Test-set scoring: feasibility rate, average violation, optimality gap
//! against the expert, method ranking and decision-time benchmarks.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{CmdpState, EnvError, RtOpfEnv};
use crate::neural::GaussianPolicy;
use crate::opf::AcOpfProblem;
use crate::powerflow::{DispatchSetpoints, PowerFlowSolver};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("expert objective at row {row} is {value}; the gap needs a positive reference")]
    NonPositiveExpert { row: usize, value: f64 },
    #[error("no scenarios to evaluate")]
    Empty,
    #[error("length mismatch: {0} agent vs {1} expert objectives")]
    Length(usize, usize),
    #[error("expert solve failed during timing: {0}")]
    Timing(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Something that maps an environment observation to a raw action.
pub trait DecisionPolicy {
    fn decide(&self, env: &RtOpfEnv, state: &CmdpState) -> Vec<f64>;
}

/// Deterministic mean action of a trained actor.
pub struct ActorPolicy<'a>(pub &'a GaussianPolicy);

impl DecisionPolicy for ActorPolicy<'_> {
    fn decide(&self, _env: &RtOpfEnv, state: &CmdpState) -> Vec<f64> {
        self.0.mean_action(&state.normalized)
    }
}

/// Replays the expert set-points of the pinned step.
pub struct ExpertReplay;

impl DecisionPolicy for ExpertReplay {
    fn decide(&self, env: &RtOpfEnv, _state: &CmdpState) -> Vec<f64> {
        env.expert_raw_action().expect("evaluation resets before deciding")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub step: usize,
    /// `None` when the power flow diverged.
    pub objective_agent: Option<f64>,
    pub objective_expert: f64,
    pub cost: Vec<f64>,
    pub feasible: bool,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBlock {
    pub t_expert: f64,
    pub t_powerflow: f64,
    pub t_actor: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaStats {
    pub max: f64,
    pub min: f64,
    pub aver: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub feas_percent: f64,
    pub c_bar: f64,
    pub kappa: Option<KappaStats>,
    pub rows: Vec<ScenarioRow>,
    pub timing: Option<TimingBlock>,
}

fn excess(cost: &[f64], limits: &[f64]) -> f64 {
    cost.iter()
        .enumerate()
        .map(|(j, c)| (c - limits.get(j).copied().unwrap_or(0.0)).max(0.0))
        .sum()
}

/// Feasibility percentage and mean aggregate violation over scenarios.
/// Missing limits count as zero.
pub fn feasibility(costs: &[Vec<f64>], limits: &[f64]) -> (f64, f64) {
    if costs.is_empty() {
        return (100.0, 0.0);
    }
    let n = costs.len() as f64;
    let ex: Vec<f64> = costs.iter().map(|c| excess(c, limits)).collect();
    let feasible = ex.iter().filter(|e| **e == 0.0).count() as f64;
    (100.0 * feasible / n, ex.iter().sum::<f64>() / n)
}

/// Percentage gaps `(agent - expert) / expert * 100` and their statistics.
pub fn optimality_gap(agent: &[f64], expert: &[f64]) -> Result<(Vec<f64>, KappaStats), EvalError> {
    if agent.len() != expert.len() {
        return Err(EvalError::Length(agent.len(), expert.len()));
    }
    if agent.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut kappa = Vec::with_capacity(agent.len());
    for (row, (a, e)) in agent.iter().zip(expert).enumerate() {
        if *e <= 0.0 {
            return Err(EvalError::NonPositiveExpert { row, value: *e });
        }
        kappa.push((a - e) / e * 100.0);
    }
    let stats = KappaStats {
        max: kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: kappa.iter().copied().fold(f64::INFINITY, f64::min),
        aver: kappa.iter().sum::<f64>() / kappa.len() as f64,
    };
    Ok((kappa, stats))
}

/// Scores one decision per trajectory step: the environment is pinned to
/// the step, the policy acts once, and the outcome is compared with the
/// expert solution of that step.
pub fn evaluate(env: &mut RtOpfEnv, policy: &dyn DecisionPolicy, method: &str) -> Result<EvalReport, EvalError> {
    let n = env.n_steps();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let cost_dim = env.cost_dim();
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        let state = env.reset(t)?;
        let raw = policy.decide(env, &state);
        let res = env.step(&raw)?;
        let expert = env.trajectory().steps[t].objective;
        let cost = if res.cost.len() == cost_dim { res.cost } else { vec![0.0; cost_dim] };
        rows.push(ScenarioRow {
            step: t,
            objective_agent: res.objective,
            objective_expert: expert,
            feasible: excess(&cost, &[]) == 0.0 && !res.diverged,
            cost,
            kappa: None,
        });
    }
    let costs: Vec<Vec<f64>> = rows.iter().map(|r| r.cost.clone()).collect();
    let (feas_percent, c_bar) = feasibility(&costs, &[]);
    let solved: Vec<usize> = (0..n).filter(|&i| rows[i].objective_agent.is_some()).collect();
    let kappa = if solved.is_empty() {
        None
    } else {
        let agent: Vec<f64> = solved.iter().map(|&i| rows[i].objective_agent.unwrap()).collect();
        let expert: Vec<f64> = solved.iter().map(|&i| rows[i].objective_expert).collect();
        let (k, stats) = optimality_gap(&agent, &expert)?;
        for (&i, k) in solved.iter().zip(k) {
            rows[i].kappa = Some(k);
        }
        Some(stats)
    };
    env.reset(0)?;
    Ok(EvalReport {
        method: method.to_string(),
        feas_percent,
        c_bar,
        kappa,
        rows,
        timing: None,
    })
}

/// `t_expert / (t_powerflow + t_actor)`.
pub fn speedup(t_expert: f64, t_powerflow: f64, t_actor: f64) -> f64 {
    t_expert / (t_powerflow + t_actor)
}

/// Median seconds per call of `f`. The inner loop doubles until a sample
/// spans at least `min_sample`, so fast calls stay above clock resolution.
pub fn median_time(reps: usize, min_sample: Duration, mut f: impl FnMut(usize)) -> f64 {
    let mut inner = 1usize;
    let mut k = 0usize;
    loop {
        let start = Instant::now();
        for _ in 0..inner {
            f(k);
            k += 1;
        }
        if start.elapsed() >= min_sample || inner >= 1 << 24 {
            break;
        }
        inner *= 2;
    }
    let mut samples: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..inner {
                f(k);
                k += 1;
            }
            start.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let m = samples.len();
    if m % 2 == 1 {
        samples[m / 2]
    } else {
        0.5 * (samples[m / 2 - 1] + samples[m / 2])
    }
}

/// Median wall times of one expert OPF solve, one Newton power flow and
/// one actor forward pass, cycling over the trajectory steps. Runs on the
/// calling thread only.
pub fn timing_benchmark(env: &mut RtOpfEnv, actor: &GaussianPolicy, reps: usize) -> Result<TimingBlock, EvalError> {
    let reps = reps.max(30);
    let n = env.n_steps();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let net = env.network().clone();
    let steps = env.trajectory().steps.clone();
    let problem = AcOpfProblem::new(&net);
    for s in &steps {
        problem
            .solve(&s.loads, Some(&s.prev_pg), None)
            .map_err(|e| EvalError::Timing(e.to_string()))?;
    }
    let min_sample = Duration::from_millis(2);
    let t_expert = median_time(reps, min_sample, |k| {
        let s = &steps[k % n];
        std::hint::black_box(problem.solve(&s.loads, Some(&s.prev_pg), None).ok());
    });
    let pf = PowerFlowSolver::new(&net);
    let setpoints: Vec<DispatchSetpoints> = steps
        .iter()
        .map(|s| DispatchSetpoints {
            pg: s.pg.clone(),
            vg: s.vg.clone(),
        })
        .collect();
    let t_powerflow = median_time(reps, min_sample, |k| {
        std::hint::black_box(pf.solve(&setpoints[k % n], &steps[k % n].loads, None).ok());
    });
    let states: Vec<Vec<f64>> = (0..n)
        .map(|t| env.reset(t).map(|s| s.normalized))
        .collect::<Result<_, _>>()?;
    let t_actor = median_time(reps, min_sample, |k| {
        std::hint::black_box(actor.mean_action(&states[k % n]));
    });
    Ok(TimingBlock {
        t_expert,
        t_powerflow,
        t_actor,
        speedup: speedup(t_expert, t_powerflow, t_actor),
    })
}

/// Orders reports by feasibility (descending), then mean violation.
pub fn compare_baselines(mut reports: Vec<EvalReport>) -> Vec<EvalReport> {
    reports.sort_by(|a, b| {
        b.feas_percent
            .total_cmp(&a.feas_percent)
            .then(a.c_bar.total_cmp(&b.c_bar))
    });
    reports
}

/// Tabular per-scenario rows followed by a summary block.
pub fn write_report(report: &EvalReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "# method: {}", report.method)?;
    let m = report.rows.first().map_or(0, |r| r.cost.len());
    write!(w, "step\tobjective_agent\tobjective_expert\tkappa_percent\tfeasible")?;
    for j in 0..m {
        write!(w, "\tc{j}")?;
    }
    writeln!(w)?;
    for r in &report.rows {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
        write!(
            w,
            "{}\t{}\t{:.6}\t{}\t{}",
            r.step,
            fmt(r.objective_agent),
            r.objective_expert,
            fmt(r.kappa),
            u8::from(r.feasible)
        )?;
        for c in &r.cost {
            write!(w, "\t{c:.6e}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "# feas_percent: {:.2}", report.feas_percent)?;
    writeln!(w, "# c_bar: {:.6e}", report.c_bar)?;
    if let Some(k) = report.kappa {
        writeln!(w, "# kappa_max: {:.4}", k.max)?;
        writeln!(w, "# kappa_min: {:.4}", k.min)?;
        writeln!(w, "# kappa_aver: {:.4}", k.aver)?;
    }
    if let Some(t) = report.timing {
        writeln!(w, "# t_expert_s: {:.6e}", t.t_expert)?;
        writeln!(w, "# t_powerflow_s: {:.6e}", t.t_powerflow)?;
        writeln!(w, "# t_actor_s: {:.6e}", t.t_actor)?;
        writeln!(w, "# speedup: {:.2}", t.speedup)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_feasible() {
        assert_eq!(feasibility(&[vec![0.0; 4], vec![0.0; 4]], &[]), (100.0, 0.0));
    }

    #[test]
    fn one_of_four_infeasible() {
        let costs = vec![vec![0.0; 4], vec![0.0, 0.2, 0.0, 0.1], vec![0.0; 4], vec![0.0; 4]];
        let (feas, c_bar) = feasibility(&costs, &[]);
        assert_eq!(feas, 75.0);
        assert!((c_bar - 0.3 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn limits_absorb_small_costs() {
        let (feas, c_bar) = feasibility(&[vec![0.05, 0.0]], &[0.1, 0.0]);
        assert_eq!((feas, c_bar), (100.0, 0.0));
    }

    #[test]
    fn gap_values() {
        let (k, s) = optimality_gap(&[100.0, 201.0], &[100.0, 200.0]).unwrap();
        assert_eq!(k[0], 0.0);
        assert!((k[1] - 0.5).abs() < 1e-12);
        assert!((s.aver - 0.25).abs() < 1e-12);
        assert_eq!((s.min, s.max), (0.0, k[1]));
        assert!(matches!(
            optimality_gap(&[1.0], &[0.0]),
            Err(EvalError::NonPositiveExpert { row: 0, .. })
        ));
    }

    #[test]
    fn speedup_arithmetic() {
        assert!((speedup(1.0, 0.01, 0.001) - 90.909_090_909).abs() < 1e-6);
    }

    #[test]
    fn median_of_sleep_free_closure_is_positive() {
        let mut acc = 0u64;
        let t = median_time(31, Duration::from_micros(200), |k| acc = acc.wrapping_add(k as u64));
        assert!(t > 0.0);
    }

    fn report(method: &str, feas: f64, c_bar: f64) -> EvalReport {
        EvalReport {
            method: method.into(),
            feas_percent: feas,
            c_bar,
            kappa: None,
            rows: Vec::new(),
            timing: None,
        }
    }

    #[test]
    fn ranking_orders_by_feasibility_then_violation() {
        let ranked = compare_baselines(vec![report("a", 90.0, 0.1), report("b", 100.0, 0.0), report("c", 90.0, 0.05)]);
        let names: Vec<&str> = ranked.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["b", "c", "a"]);
    }
}
