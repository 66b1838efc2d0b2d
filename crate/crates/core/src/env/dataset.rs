//! Synthetic net-load scenarios and their tabular file format.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::grid::{BusLoads, Network};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub horizon: usize,
    pub load_scale_low: f64,
    pub load_scale_high: f64,
    pub pf_scale_low: f64,
    /// Upper power-factor multiplier; sampled factors are capped at 1.
    pub pf_scale_high: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            load_scale_low: 0.7,
            load_scale_high: 1.3,
            pf_scale_low: 0.9,
            pf_scale_high: 1.1,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.horizon >= 2
            && 0.0 < self.load_scale_low
            && self.load_scale_low <= self.load_scale_high
            && 0.0 < self.pf_scale_low
            && self.pf_scale_low <= self.pf_scale_high;
        if ok {
            Ok(())
        } else {
            Err(EnvError::Config(format!(
                "dataset: need horizon >= 2 and 0 < low <= high, got {self:?}"
            )))
        }
    }

    /// Sampling band of the power factor at a bus with base factor `beta0`.
    pub fn pf_band(&self, beta0: f64) -> (f64, f64) {
        let hi = (self.pf_scale_high * beta0).min(1.0);
        let lo = (self.pf_scale_low * beta0).min(hi);
        (lo, hi)
    }
}

/// Buses with nonzero base active demand, in bus order.
pub fn net_load_buses(net: &Network) -> Vec<usize> {
    (0..net.n_buses()).filter(|&i| net.buses[i].pd != 0.0).collect()
}

pub fn base_power_factor(pd: f64, qd: f64) -> f64 {
    let s = pd.hypot(qd);
    if s == 0.0 {
        1.0
    } else {
        pd.abs() / s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    /// MW at each net-load bus.
    pub p: Vec<f64>,
    /// MVAr at each net-load bus.
    pub q: Vec<f64>,
    /// Total active net load of the following step, MW.
    pub next_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadScenario {
    /// Bus ids of the net-load buses.
    pub bus_ids: Vec<usize>,
    pub steps: Vec<LoadStep>,
}

impl LoadScenario {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Full per-bus demand of step `t`; buses outside the net-load set keep
    /// their base values.
    pub fn bus_loads(&self, net: &Network, t: usize) -> BusLoads {
        let mut loads = net.base_loads();
        let step = &self.steps[t];
        for (k, id) in self.bus_ids.iter().enumerate() {
            let i = net.bus_idx(*id).expect("scenario buses belong to the network");
            loads.pd[i] = step.p[k];
            loads.qd[i] = step.q[k];
        }
        loads
    }

    pub fn all_bus_loads(&self, net: &Network) -> Vec<BusLoads> {
        (0..self.len()).map(|t| self.bus_loads(net, t)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W, config_hash: &str) -> Result<(), EnvError> {
        let mut w = w;
        writeln!(w, "# config_hash: {config_hash}").map_err(EnvError::io)?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string()];
        header.extend(self.bus_ids.iter().map(|id| format!("p_{id}")));
        header.extend(self.bus_ids.iter().map(|id| format!("q_{id}")));
        header.push("next_total_p".into());
        out.write_record(&header).map_err(EnvError::csv)?;
        for (t, s) in self.steps.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(s.p.iter().chain(&s.q).map(|v| v.to_string()));
            row.push(s.next_total.to_string());
            out.write_record(&row).map_err(EnvError::csv)?;
        }
        out.flush().map_err(EnvError::io)
    }

    /// Parses the tabular format, returning the scenario and the embedded
    /// config hash (empty if absent).
    pub fn read_csv<R: Read>(r: R) -> Result<(Self, String), EnvError> {
        let mut text = String::new();
        let mut r = r;
        r.read_to_string(&mut text).map_err(EnvError::io)?;
        let hash = text
            .lines()
            .find_map(|l| l.strip_prefix("# config_hash:"))
            .map(|h| h.trim().to_string())
            .unwrap_or_default();
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = rd.headers().map_err(EnvError::csv)?.clone();
        let n = (header.len().saturating_sub(2)) / 2;
        let mut bus_ids = Vec::with_capacity(n);
        for (k, name) in header.iter().skip(1).take(n).enumerate() {
            let id = name
                .strip_prefix("p_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| EnvError::Format(format!("column {}: expected p_<bus id>, got {name:?}", k + 1)))?;
            bus_ids.push(id);
        }
        if header.len() != 2 * n + 2 {
            return Err(EnvError::Format(format!("unexpected column count {}", header.len())));
        }
        let mut steps = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec.map_err(EnvError::csv)?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| EnvError::Format(format!("row {row}: {e}")))?;
            steps.push(LoadStep {
                p: vals[..n].to_vec(),
                q: vals[n..2 * n].to_vec(),
                next_total: vals[2 * n],
            });
        }
        Ok((Self { bus_ids, steps }, hash))
    }
}

/// Samples `cfg.horizon` independent load steps. Reactive demand follows the
/// sampled power factor with the sign of the base reactive demand.
pub fn generate_dataset(net: &Network, cfg: &DatasetConfig) -> Result<LoadScenario, EnvError> {
    cfg.validate()?;
    let buses = net_load_buses(net);
    let mut rng = rng::stream(cfg.seed, "dataset", 0);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let mut steps: Vec<LoadStep> = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let mut p = Vec::with_capacity(buses.len());
        let mut q = Vec::with_capacity(buses.len());
        for &i in &buses {
            let b = &net.buses[i];
            let pi = uniform(cfg.load_scale_low, cfg.load_scale_high) * b.pd;
            let (lo, hi) = cfg.pf_band(base_power_factor(b.pd, b.qd));
            let beta: f64 = uniform(lo, hi);
            let sign = if b.qd < 0.0 { -1.0 } else { 1.0 };
            p.push(pi);
            q.push(sign * pi * beta.acos().tan());
        }
        steps.push(LoadStep {
            p,
            q,
            next_total: 0.0,
        });
    }
    let totals: Vec<f64> = steps.iter().map(|s| s.p.iter().sum()).collect();
    for t in 0..steps.len() {
        steps[t].next_total = totals[(t + 1).min(totals.len() - 1)];
    }
    Ok(LoadScenario {
        bus_ids: buses.iter().map(|&i| net.buses[i].id).collect(),
        steps,
    })
}
