//! AC optimal power flow by a primal-dual interior-point method on the polar
//! formulation, plus expert trajectories built from sequential solves.

mod trajectory;

pub use trajectory::{
    export_trajectory, generate_expert_trajectory, import_trajectory, ExpertTrajectory,
    TrajectoryError, TrajectoryStep,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{branch_admittances, build_ybus, BusLoads, Network};
use crate::powerflow::derivatives::{dsbus_dv, d2sbus_dv2, polar, sbus, BranchSide, CMat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    /// MW per generator.
    pub pg: Vec<f64>,
    /// Voltage magnitude at each generator's bus, pu.
    pub vg: Vec<f64>,
    /// $/h.
    pub objective: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// MVAr per generator.
    pub qg: Vec<f64>,
    /// Average complementarity `z'mu / n_ineq`, starting point first.
    pub duality_measure: Vec<f64>,
}

/// Primal point at the moment a solve gave up.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfIterate {
    pub iteration: usize,
    pub va: Vec<f64>,
    pub vm: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpfError {
    #[error("interior point did not converge in {iterations} iterations")]
    MaxIterations {
        iterations: usize,
        iterate: Option<Box<OpfIterate>>,
    },
    #[error("singular or non-finite KKT system at iteration {iteration}")]
    SingularKkt {
        iteration: usize,
        iterate: Option<Box<OpfIterate>>,
    },
    #[error("infeasible problem: {reason}")]
    InfeasibleProblem {
        reason: String,
        iterate: Option<Box<OpfIterate>>,
    },
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpfOptions {
    pub feas_tol: f64,
    pub grad_tol: f64,
    pub comp_tol: f64,
    pub cost_tol: f64,
    pub max_iter: usize,
    /// Centering parameter.
    pub sigma: f64,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Objective scale used inside the solver.
    pub cost_mult: f64,
    pub z0: f64,
    /// Step length below which the iteration is considered stalled.
    pub alpha_min: f64,
}

impl Default for OpfOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            grad_tol: 1e-8,
            comp_tol: 1e-8,
            cost_tol: 1e-8,
            max_iter: 150,
            sigma: 0.1,
            xi: 0.99995,
            cost_mult: 1e-4,
            z0: 1.0,
            alpha_min: 1e-8,
        }
    }
}

/// Constraint values and first derivatives at a point. Jacobians are stored
/// one row per constraint.
#[derive(Debug, Clone)]
pub struct OpfEval {
    pub f: f64,
    pub df: DVector<f64>,
    pub g: DVector<f64>,
    pub jg: DMatrix<f64>,
    pub h: DVector<f64>,
    pub jh: DMatrix<f64>,
}

/// Precomputed problem data for one network topology.
#[derive(Debug, Clone)]
pub struct AcOpfProblem {
    net: Network,
    ybus: CMat,
    from: BranchSide,
    to: BranchSide,
    /// Squared flow limits of rated branches, pu^2.
    smax2: Vec<f64>,
    gen_bus: Vec<usize>,
    nb: usize,
    ng: usize,
    pub options: OpfOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bound {
    Fixed(f64),
    Box(f64, f64),
    Free,
}

impl AcOpfProblem {
    pub fn new(net: &Network) -> Self {
        let nb = net.n_buses();
        let mut rows_f = Vec::new();
        let mut rows_t = Vec::new();
        let mut bus_f = Vec::new();
        let mut bus_t = Vec::new();
        let mut smax2 = Vec::new();
        for (br, adm) in net.branches.iter().zip(branch_admittances(net)) {
            let Some(a) = adm else { continue };
            if !br.is_rated() {
                continue;
            }
            let mut rf = vec![Complex64::new(0.0, 0.0); nb];
            let mut rt = rf.clone();
            rf[a.from] += a.yff;
            rf[a.to] += a.yft;
            rt[a.from] += a.ytf;
            rt[a.to] += a.ytt;
            rows_f.push(rf);
            rows_t.push(rt);
            bus_f.push(a.from);
            bus_t.push(a.to);
            smax2.push((br.smax / net.base_mva).powi(2));
        }
        let side = |rows: Vec<Vec<Complex64>>, bus: Vec<usize>| BranchSide {
            y: DMatrix::from_fn(rows.len(), nb, |l, k| rows[l][k]),
            bus,
            n_bus: nb,
        };
        Self {
            ybus: build_ybus(net),
            from: side(rows_f, bus_f),
            to: side(rows_t, bus_t),
            smax2,
            gen_bus: net.gen_bus_indices(),
            nb,
            ng: net.n_generators(),
            net: net.clone(),
            options: OpfOptions::default(),
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Number of optimization variables `[va; vm; pg; qg]`.
    pub fn n_vars(&self) -> usize {
        2 * self.nb + 2 * self.ng
    }

    /// Number of nonlinear equality and inequality constraints.
    pub fn n_nonlinear(&self) -> (usize, usize) {
        (2 * self.nb, 2 * self.smax2.len())
    }

    /// Active-power bounds in MW, tightened by the ramp box around `prev`.
    pub fn pg_bounds(&self, prev_pg: Option<&[f64]>) -> Result<Vec<(f64, f64)>, OpfError> {
        let gens = &self.net.generators;
        if let Some(prev) = prev_pg {
            if prev.len() != self.ng {
                return Err(OpfError::Dimension {
                    what: "prev_pg",
                    expected: self.ng,
                    got: prev.len(),
                });
            }
        }
        gens.iter()
            .enumerate()
            .map(|(i, g)| {
                let (lo, hi) = match prev_pg {
                    None => (g.pmin, g.pmax),
                    Some(prev) => (g.pmin.max(prev[i] - g.r_down), g.pmax.min(prev[i] + g.r_up)),
                };
                if lo > hi {
                    Err(OpfError::InfeasibleProblem {
                        reason: format!(
                            "generator {} ramp box [{lo:.4}, {hi:.4}] MW is empty",
                            i + 1
                        ),
                        iterate: None,
                    })
                } else {
                    Ok((lo, hi))
                }
            })
            .collect()
    }

    fn variable_bounds(&self, pg: &[(f64, f64)]) -> Vec<Bound> {
        let base = self.net.base_mva;
        let slack = self.net.slack_bus();
        let bx = |lo: f64, hi: f64| if lo == hi { Bound::Fixed(lo) } else { Bound::Box(lo, hi) };
        let mut b = Vec::with_capacity(self.n_vars());
        for i in 0..self.nb {
            b.push(if i == slack { Bound::Fixed(0.0) } else { Bound::Free });
        }
        for bus in &self.net.buses {
            b.push(bx(bus.vmin, bus.vmax));
        }
        for &(lo, hi) in pg {
            b.push(bx(lo / base, hi / base));
        }
        for g in &self.net.generators {
            b.push(bx(g.qmin / base, g.qmax / base));
        }
        b
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let nb = self.nb;
        let ng = self.ng;
        (
            &x[..nb],
            &x[nb..2 * nb],
            &x[2 * nb..2 * nb + ng],
            &x[2 * nb + ng..],
        )
    }

    /// Objective (scaled by `cost_mult`), nonlinear constraints and their
    /// Jacobians at `x`.
    pub fn evaluate(&self, x: &[f64], loads: &BusLoads) -> OpfEval {
        let (nb, ng, nx) = (self.nb, self.ng, self.n_vars());
        let base = self.net.base_mva;
        let cm = self.options.cost_mult;
        let (va, vm, pg, qg) = self.split(x);

        let mut f = 0.0;
        let mut df = DVector::zeros(nx);
        for (i, c) in self.net.gencosts.iter().enumerate() {
            let p = pg[i] * base;
            f += cm * c.eval(p);
            df[2 * nb + i] = cm * c.marginal(p) * base;
        }

        let v = polar(vm, va);
        let s = sbus(&self.ybus, &v);
        let mut mis: Vec<Complex64> = s
            .iter()
            .enumerate()
            .map(|(i, si)| si + Complex64::new(loads.pd[i], loads.qd[i]) / base)
            .collect();
        for (gi, &b) in self.gen_bus.iter().enumerate() {
            mis[b] -= Complex64::new(pg[gi], qg[gi]);
        }
        let g = DVector::from_iterator(
            2 * nb,
            mis.iter().map(|m| m.re).chain(mis.iter().map(|m| m.im)),
        );
        let (dva, dvm) = dsbus_dv(&self.ybus, &v);
        let mut jg = DMatrix::zeros(2 * nb, nx);
        for i in 0..nb {
            for k in 0..nb {
                jg[(i, k)] = dva[(i, k)].re;
                jg[(i, nb + k)] = dvm[(i, k)].re;
                jg[(nb + i, k)] = dva[(i, k)].im;
                jg[(nb + i, nb + k)] = dvm[(i, k)].im;
            }
        }
        for (gi, &b) in self.gen_bus.iter().enumerate() {
            jg[(b, 2 * nb + gi)] = -1.0;
            jg[(nb + b, 2 * nb + ng + gi)] = -1.0;
        }

        let nl = self.smax2.len();
        let mut h = DVector::zeros(2 * nl);
        let mut jh = DMatrix::zeros(2 * nl, nx);
        for (side, off) in [(&self.from, 0), (&self.to, nl)] {
            let (sa, sm, sf) = side.dsbr_dv(&v);
            for l in 0..nl {
                h[off + l] = sf[l].norm_sqr() - self.smax2[l];
                for k in 0..nb {
                    jh[(off + l, k)] = 2.0 * (sf[l].re * sa[(l, k)].re + sf[l].im * sa[(l, k)].im);
                    jh[(off + l, nb + k)] =
                        2.0 * (sf[l].re * sm[(l, k)].re + sf[l].im * sm[(l, k)].im);
                }
            }
        }
        OpfEval { f, df, g, jg, h, jh }
    }

    /// Hessian of the Lagrangian restricted to its nonlinear terms:
    /// objective, power balance (`lam`, length `2 nb`) and flow limits
    /// (`mu`, length `2 n_rated`).
    pub fn lagrangian_hessian(&self, x: &[f64], lam: &[f64], mu: &[f64]) -> DMatrix<f64> {
        let (nb, nx) = (self.nb, self.n_vars());
        let base = self.net.base_mva;
        let (va, vm, _, _) = self.split(x);
        let v = polar(vm, va);
        let mut hess = DMatrix::zeros(nx, nx);
        for (i, c) in self.net.gencosts.iter().enumerate() {
            let k = 2 * nb + i;
            hess[(k, k)] = self.options.cost_mult * 2.0 * c.c2 * base * base;
        }
        let [paa, pav, pva, pvv] = d2sbus_dv2(&self.ybus, &v, &lam[..nb]);
        let [qaa, qav, qva, qvv] = d2sbus_dv2(&self.ybus, &v, &lam[nb..]);
        let nl = self.smax2.len();
        let [faa, fav, fva, fvv] = self.from.d2asbr_dv2(&v, &mu[..nl]);
        let [taa, tav, tva, tvv] = self.to.d2asbr_dv2(&v, &mu[nl..]);
        for i in 0..nb {
            for k in 0..nb {
                hess[(i, k)] = paa[(i, k)].re + qaa[(i, k)].im + faa[(i, k)] + taa[(i, k)];
                hess[(i, nb + k)] = pav[(i, k)].re + qav[(i, k)].im + fav[(i, k)] + tav[(i, k)];
                hess[(nb + i, k)] = pva[(i, k)].re + qva[(i, k)].im + fva[(i, k)] + tva[(i, k)];
                hess[(nb + i, nb + k)] =
                    pvv[(i, k)].re + qvv[(i, k)].im + fvv[(i, k)] + tvv[(i, k)];
            }
        }
        hess
    }

    /// Gradient of the nonlinear part of the Lagrangian.
    pub fn lagrangian_gradient(
        &self,
        x: &[f64],
        loads: &BusLoads,
        lam: &[f64],
        mu: &[f64],
    ) -> DVector<f64> {
        let e = self.evaluate(x, loads);
        e.df + e.jg.transpose() * DVector::from_column_slice(lam)
            + e.jh.transpose() * DVector::from_column_slice(mu)
    }

    fn check_loads(&self, loads: &BusLoads) -> Result<(), OpfError> {
        for (what, got) in [("loads.pd", loads.pd.len()), ("loads.qd", loads.qd.len())] {
            if got != self.nb {
                return Err(OpfError::Dimension {
                    what,
                    expected: self.nb,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Solves the OPF for the given demand. With `prev_pg`, active outputs
    /// are restricted to the ramp box around it. `warm` supplies a primal
    /// starting point; otherwise the midpoint of the bounds is used.
    pub fn solve(
        &self,
        loads: &BusLoads,
        prev_pg: Option<&[f64]>,
        warm: Option<&OpfSolution>,
    ) -> Result<OpfSolution, OpfError> {
        self.check_loads(loads)?;
        let pg_bounds = self.pg_bounds(prev_pg)?;
        let bounds = self.variable_bounds(&pg_bounds);
        let nx = self.n_vars();
        let nb = self.nb;
        let base = self.net.base_mva;
        let opt = self.options;

        // Linear rows: equalities a'x = b, inequalities a'x <= b, with a a
        // signed unit vector.
        let mut eq_lin: Vec<(usize, f64)> = Vec::new();
        let mut iq_lin: Vec<(usize, f64, f64)> = Vec::new();
        for (j, b) in bounds.iter().enumerate() {
            match *b {
                Bound::Fixed(v) => eq_lin.push((j, v)),
                Bound::Box(lo, hi) => {
                    iq_lin.push((j, 1.0, hi));
                    iq_lin.push((j, -1.0, -lo));
                }
                Bound::Free => {}
            }
        }

        let mut x: Vec<f64> = match warm {
            Some(w) if w.va.len() == nb && w.pg.len() == self.ng => w
                .va
                .iter()
                .chain(&w.vm)
                .copied()
                .chain(w.pg.iter().map(|p| p / base))
                .chain(w.qg.iter().map(|q| q / base))
                .collect(),
            _ => bounds
                .iter()
                .enumerate()
                .map(|(j, b)| match *b {
                    Bound::Fixed(v) => v,
                    Bound::Box(lo, hi) => 0.5 * (lo + hi),
                    Bound::Free if j < nb => 0.0,
                    Bound::Free => 0.0,
                })
                .collect(),
        };
        // keep a warm start inside the current bounds
        for (j, b) in bounds.iter().enumerate() {
            match *b {
                Bound::Fixed(v) => x[j] = v,
                Bound::Box(lo, hi) => x[j] = x[j].clamp(lo, hi),
                Bound::Free => {}
            }
        }

        let assemble = |x: &[f64]| {
            let e = self.evaluate(x, loads);
            let neq = e.g.len() + eq_lin.len();
            let niq = e.h.len() + iq_lin.len();
            let mut g = DVector::zeros(neq);
            let mut jg = DMatrix::zeros(neq, nx);
            g.rows_mut(0, e.g.len()).copy_from(&e.g);
            jg.rows_mut(0, e.g.len()).copy_from(&e.jg);
            for (r, &(j, v)) in eq_lin.iter().enumerate() {
                g[e.g.len() + r] = x[j] - v;
                jg[(e.g.len() + r, j)] = 1.0;
            }
            let mut h = DVector::zeros(niq);
            let mut jh = DMatrix::zeros(niq, nx);
            h.rows_mut(0, e.h.len()).copy_from(&e.h);
            jh.rows_mut(0, e.h.len()).copy_from(&e.jh);
            for (r, &(j, s, b)) in iq_lin.iter().enumerate() {
                h[e.h.len() + r] = s * x[j] - b;
                jh[(e.h.len() + r, j)] = s;
            }
            (e.f, e.df, g, jg, h, jh)
        };

        let (n_eq_nl, n_iq_nl) = self.n_nonlinear();
        let (mut f, mut df, mut g, mut jg, mut h, mut jh) = assemble(&x);
        let neq = g.len();
        let niq = h.len();
        let mut lam = DVector::zeros(neq);
        let mut z = DVector::from_element(niq, opt.z0);
        let mut mu = DVector::from_element(niq, opt.z0);
        let mut gamma = 1.0;
        for k in 0..niq {
            if h[k] < -opt.z0 {
                z[k] = -h[k];
            }
            if gamma / z[k] > opt.z0 {
                mu[k] = gamma / z[k];
            }
        }
        let inf = |v: &DVector<f64>| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let xnorm = |x: &[f64]| x.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let measure = |z: &DVector<f64>, mu: &DVector<f64>| {
            if niq == 0 {
                0.0
            } else {
                z.dot(mu) / niq as f64
            }
        };

        let mut f0 = f;
        let mut lx = &df + jg.transpose() * &lam + jh.transpose() * &mu;
        let mut history = vec![measure(&z, &mu)];
        let conditions = |x: &[f64], g: &DVector<f64>, h: &DVector<f64>, lx: &DVector<f64>,
                          lam: &DVector<f64>, z: &DVector<f64>, mu: &DVector<f64>, f: f64, f0: f64| {
            let maxh = h.iter().fold(0.0f64, |m, a| m.max(*a));
            let feas = inf(g).max(maxh) / (1.0 + xnorm(x).max(inf(z)));
            let grad = inf(lx) / (1.0 + inf(lam).max(inf(mu)));
            let comp = z.dot(mu) / (1.0 + xnorm(x));
            let cost = (f - f0).abs() / (1.0 + f0.abs());
            (feas, grad, comp, cost)
        };
        let iterate = |x: &[f64], it: usize| {
            let (va, vm, pg, qg) = self.split(x);
            Some(Box::new(OpfIterate {
                iteration: it,
                va: va.to_vec(),
                vm: vm.to_vec(),
                pg: pg.iter().map(|p| p * base).collect(),
                qg: qg.iter().map(|q| q * base).collect(),
            }))
        };

        let mut it = 0;
        let mut converged = false;
        let mut stalled = false;
        let mut kkt;
        loop {
            let (feas, grad, comp, cost) = conditions(&x, &g, &h, &lx, &lam, &z, &mu, f, f0);
            kkt = feas.max(grad).max(comp);
            if feas < opt.feas_tol && grad < opt.grad_tol && comp < opt.comp_tol && (it > 0 && cost < opt.cost_tol) {
                converged = true;
                break;
            }
            if it == opt.max_iter {
                break;
            }
            it += 1;

            let mut lxx = self.lagrangian_hessian(
                &x,
                lam.rows(0, n_eq_nl).as_slice(),
                mu.rows(0, n_iq_nl).as_slice(),
            );
            let zinv = z.map(|v| 1.0 / v);
            let mut jh_scaled = jh.clone();
            for r in 0..niq {
                let s = mu[r] * zinv[r];
                jh_scaled.row_mut(r).scale_mut(s);
            }
            lxx += jh.transpose() * &jh_scaled;
            let rhs_h = DVector::from_fn(niq, |r, _| (mu[r] * h[r] + gamma) * zinv[r]);
            let n_vec = &lx + jh.transpose() * rhs_h;

            let dim = nx + neq;
            let mut kkt_mat = DMatrix::zeros(dim, dim);
            kkt_mat.view_mut((0, 0), (nx, nx)).copy_from(&lxx);
            kkt_mat.view_mut((0, nx), (nx, neq)).copy_from(&jg.transpose());
            kkt_mat.view_mut((nx, 0), (neq, nx)).copy_from(&jg);
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, nx).copy_from(&(-n_vec));
            rhs.rows_mut(nx, neq).copy_from(&(-&g));
            let sol = kkt_mat.lu().solve(&rhs);
            let Some(sol) = sol.filter(|s| s.iter().all(|v| v.is_finite())) else {
                return Err(OpfError::SingularKkt {
                    iteration: it,
                    iterate: iterate(&x, it),
                });
            };
            let dx = sol.rows(0, nx).into_owned();
            let dlam = sol.rows(nx, neq).into_owned();
            let dz = -&h - &z - &jh * &dx;
            let dmu = DVector::from_fn(niq, |r, _| -mu[r] + zinv[r] * (gamma - mu[r] * dz[r]));

            let step = |v: &DVector<f64>, dv: &DVector<f64>| {
                let mut a = 1.0f64;
                for k in 0..v.len() {
                    if dv[k] < 0.0 {
                        a = a.min(opt.xi * v[k] / -dv[k]);
                    }
                }
                a
            };
            let alphap = step(&z, &dz);
            let alphad = step(&mu, &dmu);
            for j in 0..nx {
                x[j] += alphap * dx[j];
            }
            z += alphap * dz;
            lam += alphad * dlam;
            mu += alphad * dmu;
            if niq > 0 {
                gamma = opt.sigma * z.dot(&mu) / niq as f64;
            }
            history.push(measure(&z, &mu));

            f0 = f;
            (f, df, g, jg, h, jh) = assemble(&x);
            lx = &df + jg.transpose() * &lam + jh.transpose() * &mu;

            if x.iter().any(|v| !v.is_finite()) || !f.is_finite() {
                return Err(OpfError::SingularKkt {
                    iteration: it,
                    iterate: iterate(&x, it),
                });
            }
            if alphap < opt.alpha_min || alphad < opt.alpha_min || gamma < f64::EPSILON && niq > 0 {
                let (feas, grad, comp, _) = conditions(&x, &g, &h, &lx, &lam, &z, &mu, f, f0);
                kkt = feas.max(grad).max(comp);
                stalled = true;
                break;
            }
        }
        if !converged && !stalled {
            return Err(OpfError::MaxIterations {
                iterations: it,
                iterate: iterate(&x, it),
            });
        }

        let (va, vm, pg, qg) = self.split(&x);
        // project the tiny interior-point slack back onto the bounds
        let pg: Vec<f64> = pg
            .iter()
            .zip(&pg_bounds)
            .map(|(p, &(lo, hi))| (p * base).clamp(lo, hi))
            .collect();
        let vm: Vec<f64> = vm
            .iter()
            .zip(&self.net.buses)
            .map(|(v, b)| v.clamp(b.vmin, b.vmax))
            .collect();
        Ok(OpfSolution {
            objective: self.net.generation_cost(&pg),
            vg: self.gen_bus.iter().map(|&b| vm[b]).collect(),
            pg,
            feasible: converged,
            iterations: it,
            kkt_residual: kkt,
            vm,
            va: va.to_vec(),
            qg: qg.iter().map(|q| q * base).collect(),
            duality_measure: history,
        })
    }
}

/// Cold-start OPF solve on `net`.
pub fn solve_acopf(
    net: &Network,
    loads: &BusLoads,
    prev_pg: Option<&[f64]>,
) -> Result<OpfSolution, OpfError> {
    AcOpfProblem::new(net).solve(loads, prev_pg, None)
}
