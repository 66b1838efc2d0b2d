//! Newton–Raphson AC power flow in polar coordinates and limit violations
//! of a solved operating point.

pub mod derivatives;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{branch_admittances, build_ybus, BranchAdmittance, BusKind, BusLoads, Network};
use derivatives::{dsbus_dv, polar, sbus, CMat};

/// Per-generator active (MW) and voltage (pu) set-points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSetpoints {
    pub pg: Vec<f64>,
    pub vg: Vec<f64>,
}

impl DispatchSetpoints {
    /// The dispatch listed in the case file.
    pub fn from_case(net: &Network) -> Self {
        Self {
            pg: net.generators.iter().map(|g| g.pg0).collect(),
            vg: net.generators.iter().map(|g| g.vg0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    /// Radians, slack at zero.
    pub va: Vec<f64>,
    /// MVAr per generator.
    pub qg: Vec<f64>,
    /// MW per generator; slack generators carry the balance.
    pub pg_solved: Vec<f64>,
    /// MVA entering each branch at its from/to end. Zero when out of service.
    pub flow_from: Vec<Complex64>,
    pub flow_to: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute mismatch, per-unit.
    pub max_mismatch: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:.3e} pu)")]
    NonConvergence { iterations: usize, max_mismatch: f64 },
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("set-points must be finite with positive voltage")]
    NonFinite,
    #[error("operation requires a converged power-flow solution")]
    NotConverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfOptions {
    /// Infinity-norm mismatch tolerance, per-unit.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

/// Precomputed network data for repeated solves on one topology.
/// Cheap to clone; one per worker.
#[derive(Debug, Clone)]
pub struct PowerFlowSolver {
    ybus: CMat,
    branches: Vec<Option<BranchAdmittance>>,
    n_bus: usize,
    slack: usize,
    pv: Vec<usize>,
    pq: Vec<usize>,
    gen_bus: Vec<usize>,
    /// For each bus, the generators connected to it.
    bus_gens: Vec<Vec<usize>>,
    base_mva: f64,
    pub options: PfOptions,
}

impl PowerFlowSolver {
    pub fn new(net: &Network) -> Self {
        let n = net.n_buses();
        let gen_bus = net.gen_bus_indices();
        let mut bus_gens = vec![Vec::new(); n];
        for (g, &b) in gen_bus.iter().enumerate() {
            bus_gens[b].push(g);
        }
        let slack = net.slack_bus();
        let mut pv = Vec::new();
        let mut pq = Vec::new();
        for (i, bus) in net.buses.iter().enumerate() {
            if i == slack {
                continue;
            }
            if bus.kind == BusKind::Pv && !bus_gens[i].is_empty() {
                pv.push(i);
            } else {
                pq.push(i);
            }
        }
        Self {
            ybus: build_ybus(net),
            branches: branch_admittances(net),
            n_bus: n,
            slack,
            pv,
            pq,
            gen_bus,
            bus_gens,
            base_mva: net.base_mva,
            options: PfOptions::default(),
        }
    }

    pub fn ybus(&self) -> &CMat {
        &self.ybus
    }

    /// Number of unknowns: angles at PV and PQ buses, magnitudes at PQ buses.
    pub fn n_unknowns(&self) -> usize {
        self.pv.len() + 2 * self.pq.len()
    }

    fn pvpq(&self) -> Vec<usize> {
        self.pv.iter().chain(&self.pq).copied().collect()
    }

    fn check(&self, sp: &DispatchSetpoints, loads: &BusLoads) -> Result<(), PowerFlowError> {
        let ng = self.gen_bus.len();
        for (what, got, expected) in [
            ("setpoints.pg", sp.pg.len(), ng),
            ("setpoints.vg", sp.vg.len(), ng),
            ("loads.pd", loads.pd.len(), self.n_bus),
            ("loads.qd", loads.qd.len(), self.n_bus),
        ] {
            if got != expected {
                return Err(PowerFlowError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        let finite = sp.pg.iter().chain(&loads.pd).chain(&loads.qd).all(|x| x.is_finite());
        if !finite || !sp.vg.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(PowerFlowError::NonFinite);
        }
        Ok(())
    }

    /// Scheduled complex injections (pu) at every bus; the slack entry and PV
    /// reactive parts are placeholders.
    fn scheduled(&self, sp: &DispatchSetpoints, loads: &BusLoads) -> Vec<Complex64> {
        let mut s: Vec<Complex64> = loads
            .pd
            .iter()
            .zip(&loads.qd)
            .map(|(&p, &q)| Complex64::new(-p, -q) / self.base_mva)
            .collect();
        for (g, &b) in self.gen_bus.iter().enumerate() {
            s[b].re += sp.pg[g] / self.base_mva;
        }
        s
    }

    /// Voltage magnitude targets at generator buses (first generator wins).
    fn voltage_targets(&self, sp: &DispatchSetpoints) -> Vec<Option<f64>> {
        self.bus_gens
            .iter()
            .map(|gens| gens.first().map(|&g| sp.vg[g]))
            .collect()
    }

    /// Mismatch vector `[dP(pv,pq); dQ(pq)]` at the given voltages, pu.
    pub fn mismatch(
        &self,
        sp: &DispatchSetpoints,
        loads: &BusLoads,
        vm: &[f64],
        va: &[f64],
    ) -> Vec<f64> {
        let v = polar(vm, va);
        let sched = self.scheduled(sp, loads);
        let s = sbus(&self.ybus, &v);
        let mis: Vec<Complex64> = s.iter().zip(&sched).map(|(a, b)| a - b).collect();
        self.pvpq()
            .iter()
            .map(|&i| mis[i].re)
            .chain(self.pq.iter().map(|&i| mis[i].im))
            .collect()
    }

    /// Newton Jacobian of [`Self::mismatch`] with respect to
    /// `[va(pv,pq); vm(pq)]`.
    pub fn jacobian(&self, vm: &[f64], va: &[f64]) -> DMatrix<f64> {
        let v = polar(vm, va);
        let (dva, dvm) = dsbus_dv(&self.ybus, &v);
        let pvpq = self.pvpq();
        let n1 = pvpq.len();
        let n2 = self.pq.len();
        let mut jac = DMatrix::zeros(n1 + n2, n1 + n2);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(r, c)] = dva[(i, k)].re;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(r, n1 + c)] = dvm[(i, k)].re;
            }
        }
        for (r, &i) in self.pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(n1 + r, c)] = dva[(i, k)].im;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(n1 + r, n1 + c)] = dvm[(i, k)].im;
            }
        }
        jac
    }

    /// Flat start (or `warm` = previous `(vm, va)`), then Newton iterations.
    pub fn solve(
        &self,
        sp: &DispatchSetpoints,
        loads: &BusLoads,
        warm: Option<(&[f64], &[f64])>,
    ) -> Result<PowerFlowSolution, PowerFlowError> {
        self.check(sp, loads)?;
        let n = self.n_bus;
        let (mut vm, mut va) = match warm {
            Some((m, a)) if m.len() == n && a.len() == n => (m.to_vec(), a.to_vec()),
            _ => (vec![1.0; n], vec![0.0; n]),
        };
        for (i, t) in self.voltage_targets(sp).into_iter().enumerate() {
            if let Some(t) = t {
                vm[i] = t;
            }
        }
        va[self.slack] = 0.0;

        let pvpq = self.pvpq();
        let n1 = pvpq.len();
        let mut f = self.mismatch(sp, loads, &vm, &va);
        let mut norm = inf_norm(&f);
        let mut iterations = 0;
        while norm >= self.options.tol {
            if iterations == self.options.max_iter || !norm.is_finite() {
                return Err(PowerFlowError::NonConvergence {
                    iterations,
                    max_mismatch: norm,
                });
            }
            iterations += 1;
            let jac = self.jacobian(&vm, &va);
            let rhs = DVector::from_iterator(f.len(), f.iter().map(|x| -x));
            let Some(dx) = jac.lu().solve(&rhs) else {
                return Err(PowerFlowError::NonConvergence {
                    iterations,
                    max_mismatch: norm,
                });
            };
            for (r, &i) in pvpq.iter().enumerate() {
                va[i] += dx[r];
            }
            for (r, &i) in self.pq.iter().enumerate() {
                vm[i] += dx[n1 + r];
            }
            f = self.mismatch(sp, loads, &vm, &va);
            norm = inf_norm(&f);
        }
        Ok(self.assemble(sp, loads, vm, va, iterations, norm))
    }

    fn assemble(
        &self,
        sp: &DispatchSetpoints,
        loads: &BusLoads,
        vm: Vec<f64>,
        va: Vec<f64>,
        iterations: usize,
        max_mismatch: f64,
    ) -> PowerFlowSolution {
        let base = self.base_mva;
        let v = polar(&vm, &va);
        let s = sbus(&self.ybus, &v);
        let mut pg_solved = sp.pg.clone();
        let mut qg = vec![0.0; self.gen_bus.len()];
        for (b, gens) in self.bus_gens.iter().enumerate() {
            if gens.is_empty() {
                continue;
            }
            let q_total = s[b].im * base + loads.qd[b];
            for &g in gens {
                qg[g] = q_total / gens.len() as f64;
            }
            if b == self.slack {
                let p_total = s[b].re * base + loads.pd[b];
                let others: f64 = gens[1..].iter().map(|&g| sp.pg[g]).sum();
                pg_solved[gens[0]] = p_total - others;
            }
        }
        let (flow_from, flow_to) = self.flows(&v);
        PowerFlowSolution {
            vm,
            va,
            qg,
            pg_solved,
            flow_from,
            flow_to,
            converged: true,
            iterations,
            max_mismatch,
        }
    }

    fn flows(&self, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let zero = Complex64::new(0.0, 0.0);
        self.branches
            .iter()
            .map(|a| match a {
                None => (zero, zero),
                Some(a) => {
                    let (vf, vt) = (v[a.from], v[a.to]);
                    let sf = vf * (a.yff * vf + a.yft * vt).conj() * self.base_mva;
                    let st = vt * (a.ytf * vf + a.ytt * vt).conj() * self.base_mva;
                    (sf, st)
                }
            })
            .unzip()
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
}

/// One-shot solve from a flat start.
pub fn solve_nr(
    net: &Network,
    sp: &DispatchSetpoints,
    loads: &BusLoads,
) -> Result<PowerFlowSolution, PowerFlowError> {
    PowerFlowSolver::new(net).solve(sp, loads, None)
}

/// Complex branch flows (MVA) at the from and to ends, recomputed from the
/// solved terminal voltages.
pub fn branch_flows(
    net: &Network,
    sol: &PowerFlowSolution,
) -> Result<Vec<(Complex64, Complex64)>, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    let v = polar(&sol.vm, &sol.va);
    let base = net.base_mva;
    let zero = Complex64::new(0.0, 0.0);
    Ok(branch_admittances(net)
        .into_iter()
        .map(|a| match a {
            None => (zero, zero),
            Some(a) => {
                let (vf, vt) = (v[a.from], v[a.to]);
                (
                    vf * (a.yff * vf + a.yft * vt).conj() * base,
                    vt * (a.ytf * vf + a.ytt * vt).conj() * base,
                )
            }
        })
        .collect())
}

/// Operational limit violations, per-unit, summed per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationVector {
    pub c_pg: f64,
    pub c_qg: f64,
    pub c_vg: f64,
    pub c_flow: f64,
}

impl ViolationVector {
    pub const LEN: usize = 4;

    pub fn as_array(&self) -> [f64; 4] {
        [self.c_pg, self.c_qg, self.c_vg, self.c_flow]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            c_pg: a[0],
            c_qg: a[1],
            c_vg: a[2],
            c_flow: a[3],
        }
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&c| c == 0.0)
    }

    /// Zeroes components at or below `tol` (solver round-off).
    pub fn deadband(&self, tol: f64) -> Self {
        Self::from_array(self.as_array().map(|c| if c <= tol { 0.0 } else { c }))
    }
}

fn excess(x: f64, lo: f64, hi: f64) -> f64 {
    (x - hi).max(0.0) + (lo - x).max(0.0)
}

pub fn violations(net: &Network, sol: &PowerFlowSolution) -> ViolationVector {
    let base = net.base_mva;
    let mut v = ViolationVector::default();
    for (i, g) in net.generators.iter().enumerate() {
        v.c_pg += excess(sol.pg_solved[i], g.pmin, g.pmax) / base;
        v.c_qg += excess(sol.qg[i], g.qmin, g.qmax) / base;
    }
    for (i, b) in net.buses.iter().enumerate() {
        v.c_vg += excess(sol.vm[i], b.vmin, b.vmax);
    }
    for (l, br) in net.branches.iter().enumerate() {
        if br.status && br.is_rated() {
            let s = sol.flow_from[l].norm().max(sol.flow_to[l].norm());
            v.c_flow += (s - br.smax).max(0.0) / base;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{parse_case_str, tests::TWO_BUS};

    #[test]
    fn flat_no_load_state() {
        let net = Network::ieee9();
        let sp = DispatchSetpoints {
            pg: vec![0.0; 3],
            vg: vec![1.0; 3],
        };
        // zero line charging too, otherwise charging MVAr lifts voltages
        let mut flat = net.clone();
        for br in &mut flat.branches {
            br.b_ch = 0.0;
        }
        let sol = solve_nr(&flat, &sp, &BusLoads::zeros(9)).unwrap();
        for i in 0..9 {
            assert!((sol.vm[i] - 1.0).abs() < 1e-12);
            assert!(sol.va[i].abs() < 1e-12);
        }
        for (f, t) in sol.flow_from.iter().zip(&sol.flow_to) {
            assert!(f.norm() < 1e-9 && t.norm() < 1e-9);
        }
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let net = parse_case_str(TWO_BUS).unwrap();
        let sp = DispatchSetpoints {
            pg: vec![0.0],
            vg: vec![1.0],
        };
        let sol = solve_nr(&net, &sp, &net.base_loads()).unwrap();
        // P2 = 10 v sin(d) = -0.5 and Q2 = 10 (v^2 - v cos d) = 0
        // give v = cos(d), sin(2d) = -0.1.
        let delta = -(0.1f64).asin() / 2.0;
        let v2 = delta.cos();
        assert!((sol.vm[1] - v2).abs() < 1e-10, "{} vs {}", sol.vm[1], v2);
        assert!((sol.va[1] - delta).abs() < 1e-10);
        assert!((sol.pg_solved[0] - 50.0).abs() < 1e-8);
    }

    #[test]
    fn case9_slack_balances_reference_dispatch() {
        let net = Network::ieee9();
        let sp = DispatchSetpoints::from_case(&net);
        assert_eq!(sp.pg, vec![0.0, 163.0, 85.0]);
        let sol = solve_nr(&net, &sp, &net.base_loads()).unwrap();
        assert!((sol.pg_solved[0] - 71.95).abs() < 0.01);
        assert!(sol.iterations <= 5);
        assert!(sol.max_mismatch < 1e-8);
    }

    #[test]
    fn divergence_is_reported() {
        let net = Network::ieee9();
        let sp = DispatchSetpoints::from_case(&net);
        let mut loads = net.base_loads();
        for p in &mut loads.pd {
            *p *= 40.0;
        }
        match solve_nr(&net, &sp, &loads) {
            Err(PowerFlowError::NonConvergence { iterations, .. }) => assert!(iterations <= 20),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn dimension_errors() {
        let net = Network::ieee9();
        let sp = DispatchSetpoints {
            pg: vec![0.0; 2],
            vg: vec![1.0; 3],
        };
        assert!(matches!(
            solve_nr(&net, &sp, &net.base_loads()),
            Err(PowerFlowError::Dimension { what: "setpoints.pg", .. })
        ));
    }

    #[test]
    fn bus_power_balance_holds() {
        let net = Network::ieee30();
        let sp = DispatchSetpoints::from_case(&net);
        let loads = net.base_loads();
        let sol = solve_nr(&net, &sp, &loads).unwrap();
        let flows = branch_flows(&net, &sol).unwrap();
        let base = net.base_mva;
        let mut injection = vec![Complex64::new(0.0, 0.0); net.n_buses()];
        for (g, &b) in net.gen_bus_indices().iter().enumerate() {
            injection[b] += Complex64::new(sol.pg_solved[g], sol.qg[g]);
        }
        for (i, bus) in net.buses.iter().enumerate() {
            injection[i] -= Complex64::new(loads.pd[i], loads.qd[i]);
            // shunt consumption |V|^2 conj(y_sh)
            injection[i] -= Complex64::new(bus.gsh, -bus.bsh) * sol.vm[i].powi(2) * base;
        }
        for (l, br) in net.branches.iter().enumerate() {
            injection[net.bus_idx(br.from).unwrap()] -= flows[l].0;
            injection[net.bus_idx(br.to).unwrap()] -= flows[l].1;
        }
        for s in injection {
            assert!(s.norm() / base < 1e-8, "imbalance {s}");
        }
    }

    #[test]
    fn branch_flows_require_convergence() {
        let net = Network::ieee9();
        let mut sol = solve_nr(&net, &DispatchSetpoints::from_case(&net), &net.base_loads()).unwrap();
        sol.converged = false;
        assert_eq!(branch_flows(&net, &sol), Err(PowerFlowError::NotConverged));
    }

    #[test]
    fn symmetric_lossless_branch_carries_nothing() {
        let net = parse_case_str(TWO_BUS).unwrap();
        let sol = PowerFlowSolution {
            vm: vec![1.02, 1.02],
            va: vec![0.0, 0.0],
            qg: vec![0.0],
            pg_solved: vec![0.0],
            flow_from: vec![],
            flow_to: vec![],
            converged: true,
            iterations: 0,
            max_mismatch: 0.0,
        };
        let flows = branch_flows(&net, &sol).unwrap();
        assert!(flows[0].0.re.abs() < 1e-12);
    }

    #[test]
    fn reversed_lossless_branch_swaps_ends() {
        let net = parse_case_str(TWO_BUS).unwrap();
        let reversed_text = TWO_BUS.replace("from = 1\nto = 2", "from = 2\nto = 1");
        let reversed = parse_case_str(&reversed_text).unwrap();
        let sp = DispatchSetpoints {
            pg: vec![0.0],
            vg: vec![1.0],
        };
        let a = solve_nr(&net, &sp, &net.base_loads()).unwrap();
        let b = solve_nr(&reversed, &sp, &reversed.base_loads()).unwrap();
        assert!((a.flow_from[0] - b.flow_to[0]).norm() < 1e-9);
        assert!((a.flow_to[0] - b.flow_from[0]).norm() < 1e-9);
        // lossless: active power in one end comes out of the other
        assert!((a.flow_from[0].re + a.flow_to[0].re).abs() < 1e-9);
    }

    fn interior_solution(net: &Network) -> PowerFlowSolution {
        let n = net.n_buses();
        let ng = net.n_generators();
        PowerFlowSolution {
            vm: vec![1.0; n],
            va: vec![0.0; n],
            qg: net.generators.iter().map(|g| 0.5 * (g.qmin + g.qmax)).collect(),
            pg_solved: net.generators.iter().map(|g| 0.5 * (g.pmin + g.pmax)).collect(),
            flow_from: vec![Complex64::new(1.0, 0.0); net.n_branches()],
            flow_to: vec![Complex64::new(-1.0, 0.0); net.n_branches()],
            converged: true,
            iterations: 0,
            max_mismatch: 0.0,
        }
        .tap(|s| assert_eq!(s.pg_solved.len(), ng))
    }

    trait Tap: Sized {
        fn tap(self, f: impl FnOnce(&Self)) -> Self {
            f(&self);
            self
        }
    }
    impl Tap for PowerFlowSolution {}

    #[test]
    fn interior_point_has_no_violations() {
        let net = Network::ieee9();
        assert!(violations(&net, &interior_solution(&net)).is_zero());
    }

    #[test]
    fn single_reactive_excess() {
        let net = Network::ieee9();
        let mut sol = interior_solution(&net);
        sol.qg[1] = net.generators[1].qmax + 10.0;
        let v = violations(&net, &sol);
        assert!((v.c_qg - 0.1).abs() < 1e-12);
        assert_eq!((v.c_pg, v.c_vg, v.c_flow), (0.0, 0.0, 0.0));
    }

    #[test]
    fn deadband_zeroes_roundoff_only() {
        let v = ViolationVector::from_array([1e-9, 0.2, 0.0, 2e-6]).deadband(1e-6);
        assert_eq!(v.as_array(), [0.0, 0.2, 0.0, 2e-6]);
    }
}
