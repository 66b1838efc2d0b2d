use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AcOpfProblem, OpfError, OpfSolution};
use crate::grid::{BusLoads, Network};

/// Slack allowed when checking bounds and ramp coupling of stored steps, MW.
const MW_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub loads: BusLoads,
    pub prev_pg: Vec<f64>,
    pub pg: Vec<f64>,
    pub vg: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTrajectory {
    pub network_id: String,
    pub horizon: usize,
    #[serde(default)]
    pub config_hash: String,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("step {step}: {source}")]
    Solver {
        step: usize,
        #[source]
        source: OpfError,
    },
    #[error("scenario must have at least 2 steps, got {0}")]
    TooShort(usize),
    #[error("steps[{step}]: {message}")]
    InvalidStep { step: usize, message: String },
    #[error("trajectory does not match network: {0}")]
    NetworkMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Schema {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Solves the scenario step by step: step 0's previous dispatch is the
/// ramp-free optimum of its own demand, every later step is ramp-coupled to
/// the step before it.
pub fn generate_expert_trajectory(
    net: &Network,
    scenario: &[BusLoads],
) -> Result<ExpertTrajectory, TrajectoryError> {
    if scenario.len() < 2 {
        return Err(TrajectoryError::TooShort(scenario.len()));
    }
    let problem = AcOpfProblem::new(net);
    let start = problem
        .solve(&scenario[0], None, None)
        .map_err(|source| TrajectoryError::Solver { step: 0, source })?;
    let mut prev: OpfSolution = start;
    let mut steps = Vec::with_capacity(scenario.len());
    for (t, loads) in scenario.iter().enumerate() {
        let sol = problem
            .solve(loads, Some(&prev.pg), Some(&prev))
            .map_err(|source| TrajectoryError::Solver { step: t, source })?;
        steps.push(TrajectoryStep {
            loads: loads.clone(),
            prev_pg: prev.pg.clone(),
            pg: sol.pg.clone(),
            vg: sol.vg.clone(),
            objective: sol.objective,
            feasible: sol.feasible,
        });
        prev = sol;
    }
    Ok(ExpertTrajectory {
        network_id: net.name.clone(),
        horizon: steps.len(),
        config_hash: String::new(),
        steps,
    })
}

pub fn export_trajectory(traj: &ExpertTrajectory, path: &Path) -> Result<(), TrajectoryError> {
    let text = serde_json::to_string_pretty(traj).expect("trajectory serializes");
    fs::write(path, text).map_err(|source| TrajectoryError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a trajectory and checks it against `net`.
pub fn import_trajectory(path: &Path, net: &Network) -> Result<ExpertTrajectory, TrajectoryError> {
    let text = fs::read_to_string(path).map_err(|source| TrajectoryError::Io {
        path: path.to_owned(),
        source,
    })?;
    let traj: ExpertTrajectory =
        serde_json::from_str(&text).map_err(|source| TrajectoryError::Schema {
            path: path.to_owned(),
            source,
        })?;
    traj.validate(net)?;
    Ok(traj)
}

impl ExpertTrajectory {
    pub fn validate(&self, net: &Network) -> Result<(), TrajectoryError> {
        if self.network_id != net.name {
            return Err(TrajectoryError::NetworkMismatch(format!(
                "network_id {:?} but network is {:?}",
                self.network_id, net.name
            )));
        }
        if self.horizon != self.steps.len() {
            return Err(TrajectoryError::NetworkMismatch(format!(
                "horizon {} but {} steps",
                self.horizon,
                self.steps.len()
            )));
        }
        let ng = net.n_generators();
        let nb = net.n_buses();
        for (t, s) in self.steps.iter().enumerate() {
            let bad = |message: String| TrajectoryError::InvalidStep { step: t, message };
            if s.loads.pd.len() != nb || s.loads.qd.len() != nb {
                return Err(bad(format!("loads must have {nb} buses")));
            }
            if s.pg.len() != ng || s.vg.len() != ng || s.prev_pg.len() != ng {
                return Err(bad(format!("pg, vg and prev_pg must have {ng} generators")));
            }
            if t > 0 {
                let before = &self.steps[t - 1].pg;
                if s.prev_pg.iter().zip(before).any(|(a, b)| (a - b).abs() > MW_TOL) {
                    return Err(bad("prev_pg differs from the previous step's pg".into()));
                }
            }
            if !s.feasible {
                continue;
            }
            for (i, g) in net.generators.iter().enumerate() {
                let p = s.pg[i];
                if p > g.pmax + MW_TOL || p < g.pmin - MW_TOL {
                    return Err(bad(format!(
                        "generator {} output {p:.4} MW outside [{}, {}]",
                        i + 1,
                        g.pmin,
                        g.pmax
                    )));
                }
                let d = p - s.prev_pg[i];
                if d > g.r_up + MW_TOL || -d > g.r_down + MW_TOL {
                    return Err(bad(format!(
                        "generator {} moves {d:.4} MW, beyond its ramp limits",
                        i + 1
                    )));
                }
                let vb = &net.buses[net.bus_idx(g.bus).expect("validated network")];
                if s.vg[i] > vb.vmax + 1e-6 || s.vg[i] < vb.vmin - 1e-6 {
                    return Err(bad(format!(
                        "generator {} voltage {} outside bus limits",
                        i + 1,
                        s.vg[i]
                    )));
                }
            }
        }
        Ok(())
    }
}
