//! First and second derivatives of complex bus injections and branch flows
//! with respect to polar voltages. Dense, which is fine at the sizes this
//! crate targets (a few hundred buses at most).

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

const J: Complex64 = Complex64::new(0.0, 1.0);

fn czero(r: usize, c: usize) -> CMat {
    DMatrix::from_element(r, c, Complex64::new(0.0, 0.0))
}

fn diag(v: &[Complex64]) -> CMat {
    let mut m = czero(v.len(), v.len());
    for (i, x) in v.iter().enumerate() {
        m[(i, i)] = *x;
    }
    m
}

pub fn mat_vec(m: &CMat, v: &[Complex64]) -> Vec<Complex64> {
    (0..m.nrows())
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, vk) in v.iter().enumerate() {
                acc += m[(i, k)] * vk;
            }
            acc
        })
        .collect()
}

/// Complex bus injections `V .* conj(Ybus V)`.
pub fn sbus(ybus: &CMat, v: &[Complex64]) -> Vec<Complex64> {
    let i = mat_vec(ybus, v);
    v.iter().zip(&i).map(|(vk, ik)| vk * ik.conj()).collect()
}

/// Partial derivatives of bus injections: `(dS/dVa, dS/dVm)`.
pub fn dsbus_dv(ybus: &CMat, v: &[Complex64]) -> (CMat, CMat) {
    let n = v.len();
    let ibus = mat_vec(ybus, v);
    let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
    let mut dva = czero(n, n);
    let mut dvm = czero(n, n);
    for i in 0..n {
        for k in 0..n {
            let y = ybus[(i, k)];
            dva[(i, k)] = -J * v[i] * (y * v[k]).conj();
            dvm[(i, k)] = v[i] * (y * vnorm[k]).conj();
        }
        dva[(i, i)] += J * v[i] * ibus[i].conj();
        dvm[(i, i)] += ibus[i].conj() * vnorm[i];
    }
    (dva, dvm)
}

/// Second derivatives of `lam' * S(V)` for real multipliers `lam`, returned
/// as `(aa, av, va, vv)` blocks.
pub fn d2sbus_dv2(ybus: &CMat, v: &[Complex64], lam: &[f64]) -> [CMat; 4] {
    let n = v.len();
    let lamc: Vec<Complex64> = lam.iter().map(|&l| Complex64::new(l, 0.0)).collect();
    let ibus = mat_vec(ybus, v);
    let diag_v = diag(v);
    let a = diag(&v.iter().zip(&lamc).map(|(x, l)| x * l).collect::<Vec<_>>());
    let b = ybus * &diag_v;
    let c = &a * b.map(|x| x.conj());
    let d = ybus.adjoint() * &diag_v;
    let dlam = mat_vec(&d, &lamc);
    let e = diag_v.map(|x| x.conj()) * (&d * diag(&lamc) - diag(&dlam));
    let f = &c - &a * diag(&ibus.iter().map(|x| x.conj()).collect::<Vec<_>>());
    let g = diag(&v.iter().map(|x| Complex64::new(1.0 / x.norm(), 0.0)).collect::<Vec<_>>());
    let gaa = &e + &f;
    let gva = (&g * (&e - &f)).map(|x| x * J);
    let gav = gva.transpose();
    let gvv = &g * (&c + c.transpose()) * &g;
    debug_assert_eq!(gaa.nrows(), n);
    [gaa, gav, gva, gvv]
}

/// Branch-to-bus data for one terminal side of a set of branches.
#[derive(Debug, Clone)]
pub struct BranchSide {
    /// Rows of the branch admittance matrix (`I = Y V`), one per branch.
    pub y: CMat,
    /// Terminal bus of each branch on this side.
    pub bus: Vec<usize>,
    pub n_bus: usize,
}

impl BranchSide {
    fn connection(&self) -> CMat {
        let mut c = czero(self.bus.len(), self.n_bus);
        for (l, &b) in self.bus.iter().enumerate() {
            c[(l, b)] = Complex64::new(1.0, 0.0);
        }
        c
    }

    /// Complex power entering each branch at this side, per-unit.
    pub fn flows(&self, v: &[Complex64]) -> Vec<Complex64> {
        let i = mat_vec(&self.y, v);
        self.bus
            .iter()
            .zip(&i)
            .map(|(&b, il)| v[b] * il.conj())
            .collect()
    }

    /// `(dS/dVa, dS/dVm, S)` for this side.
    pub fn dsbr_dv(&self, v: &[Complex64]) -> (CMat, CMat, Vec<Complex64>) {
        let nl = self.bus.len();
        let ibr = mat_vec(&self.y, v);
        let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
        let mut dva = czero(nl, self.n_bus);
        let mut dvm = czero(nl, self.n_bus);
        let mut s = Vec::with_capacity(nl);
        for l in 0..nl {
            let f = self.bus[l];
            let vf = v[f];
            for k in 0..self.n_bus {
                let y = self.y[(l, k)];
                dva[(l, k)] = -J * vf * (y * v[k]).conj();
                dvm[(l, k)] = vf * (y * vnorm[k]).conj();
            }
            dva[(l, f)] += J * ibr[l].conj() * vf;
            dvm[(l, f)] += ibr[l].conj() * vnorm[f];
            s.push(vf * ibr[l].conj());
        }
        (dva, dvm, s)
    }

    /// Second derivatives of `lam' * S_br(V)` for complex multipliers.
    pub fn d2sbr_dv2(&self, v: &[Complex64], lam: &[Complex64]) -> [CMat; 4] {
        let cbr = self.connection();
        let diag_v = diag(v);
        let a = self.y.adjoint() * diag(lam) * &cbr;
        let b = diag_v.map(|x| x.conj()) * &a * &diag_v;
        let av = mat_vec(&a, v);
        let d = diag(&av.iter().zip(v).map(|(x, vk)| x * vk.conj()).collect::<Vec<_>>());
        let at_vc = mat_vec(
            &a.transpose(),
            &v.iter().map(|x| x.conj()).collect::<Vec<_>>(),
        );
        let e = diag(&at_vc.iter().zip(v).map(|(x, vk)| x * vk).collect::<Vec<_>>());
        let f = &b + b.transpose();
        let g = diag(&v.iter().map(|x| Complex64::new(1.0 / x.norm(), 0.0)).collect::<Vec<_>>());
        let haa = &f - &d - &e;
        let hva = (&g * (&b - b.transpose() - &d + &e)).map(|x| x * J);
        let hav = hva.transpose();
        let hvv = &g * &f * &g;
        [haa, hav, hva, hvv]
    }

    /// Second derivatives of `mu' * |S_br|^2` for real multipliers `mu`,
    /// as real `(aa, av, va, vv)` blocks.
    pub fn d2asbr_dv2(&self, v: &[Complex64], mu: &[f64]) -> [DMatrix<f64>; 4] {
        let (dsa, dsm, s) = self.dsbr_dv(v);
        let weighted: Vec<Complex64> = s.iter().zip(mu).map(|(sl, &m)| sl.conj() * m).collect();
        let [saa, sav, sva, svv] = self.d2sbr_dv2(v, &weighted);
        let dl = diag(&mu.iter().map(|&m| Complex64::new(m, 0.0)).collect::<Vec<_>>());
        let quad = |x: &CMat, y: &CMat| x.transpose() * &dl * y.map(|z| z.conj());
        let haa = (saa + quad(&dsa, &dsa)).map(|z| 2.0 * z.re);
        let hva = (sva + quad(&dsm, &dsa)).map(|z| 2.0 * z.re);
        let hav = (sav + quad(&dsa, &dsm)).map(|z| 2.0 * z.re);
        let hvv = (svv + quad(&dsm, &dsm)).map(|z| 2.0 * z.re);
        [haa, hav, hva, hvv]
    }
}

pub fn polar(vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    vm.iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect()
}
