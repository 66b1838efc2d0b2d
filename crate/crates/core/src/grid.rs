//! Electrical network model, case-file parsing and the bus admittance matrix.
//!
//! Case files are TOML documents with the keys `base_mva`, `buses`,
//! `branches`, `generators` and `gencosts`. Bus ids are the 1-based ids of
//! the published case listings; everything else is addressed by position.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fraction of the active range used as the default ramp limit per dispatch
/// interval when a case does not carry ramp data.
pub const DEFAULT_RAMP_FRACTION: f64 = 0.25;

const IEEE9: &str = include_str!("../data/ieee9.case");
const IEEE30: &str = include_str!("../data/ieee30.case");

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("case schema violation: {0}")]
    Schema(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("multiple slack buses (buses {first} and {second})")]
    MultipleSlack { first: usize, second: usize },
    #[error("missing slack bus")]
    MissingSlack,
    #[error("buses[{index}].id: duplicate bus id {id}")]
    DuplicateBus { index: usize, id: usize },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> CaseError {
    CaseError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Active demand, MW.
    pub pd: f64,
    /// Reactive demand, MVAr.
    pub qd: f64,
    pub vmin: f64,
    pub vmax: f64,
    /// Shunt conductance, per-unit.
    pub gsh: f64,
    /// Shunt susceptance, per-unit.
    pub bsh: f64,
    pub vm0: f64,
    /// Initial angle, degrees (as listed in the case).
    pub va0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance, per-unit.
    pub b_ch: f64,
    /// Apparent power limit in MVA; zero means unlimited.
    pub smax: f64,
    pub status: bool,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        let den = self.r * self.r + self.x * self.x;
        Complex64::new(self.r / den, -self.x / den)
    }

    pub fn is_rated(&self) -> bool {
        self.smax > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// MW per dispatch interval.
    pub r_up: f64,
    pub r_down: f64,
    /// Case set-points, used as the default dispatch.
    pub pg0: f64,
    pub vg0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenCost {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl GenCost {
    /// Cost in $/h at an output of `pg` MW.
    pub fn eval(&self, pg: f64) -> f64 {
        (self.c2 * pg + self.c1) * pg + self.c0
    }

    pub fn marginal(&self, pg: f64) -> f64 {
        2.0 * self.c2 * pg + self.c1
    }
}

/// Per-bus demand in MW / MVAr, aligned with [`Network::buses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusLoads {
    pub pd: Vec<f64>,
    pub qd: Vec<f64>,
}

impl BusLoads {
    pub fn zeros(n: usize) -> Self {
        Self {
            pd: vec![0.0; n],
            qd: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.pd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pd.is_empty()
    }

    pub fn total_p(&self) -> f64 {
        self.pd.iter().sum()
    }
}

/// Immutable electrical model. Construct with [`Network::new`] or one of the
/// parsers so that the invariants are checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub gencosts: Vec<GenCost>,
    bus_index: HashMap<usize, usize>,
    slack: usize,
}

impl Network {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
        gencosts: Vec<GenCost>,
    ) -> Result<Self, CaseError> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(invalid("base_mva", "must be positive"));
        }
        if buses.is_empty() {
            return Err(invalid("buses", "at least one bus is required"));
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        let mut slack: Option<usize> = None;
        for (i, bus) in buses.iter().enumerate() {
            if bus_index.insert(bus.id, i).is_some() {
                return Err(CaseError::DuplicateBus { index: i, id: bus.id });
            }
            let path = |f: &str| format!("buses[{i}].{f}");
            for (field, v) in [
                ("pd", bus.pd),
                ("qd", bus.qd),
                ("gsh", bus.gsh),
                ("bsh", bus.bsh),
                ("vm", bus.vm0),
                ("va", bus.va0),
            ] {
                if !v.is_finite() {
                    return Err(invalid(path(field), "must be finite"));
                }
            }
            if !(bus.vmin > 0.0 && bus.vmin < bus.vmax && bus.vmax.is_finite()) {
                return Err(invalid(path("vmin"), "require 0 < vmin < vmax"));
            }
            if bus.kind == BusKind::Slack {
                if let Some(first) = slack {
                    return Err(CaseError::MultipleSlack {
                        first: buses[first].id,
                        second: bus.id,
                    });
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or(CaseError::MissingSlack)?;

        for (i, br) in branches.iter().enumerate() {
            let path = |f: &str| format!("branches[{i}].{f}");
            if !bus_index.contains_key(&br.from) {
                return Err(invalid(path("from"), format!("unknown bus {}", br.from)));
            }
            if !bus_index.contains_key(&br.to) {
                return Err(invalid(path("to"), format!("unknown bus {}", br.to)));
            }
            if br.from == br.to {
                return Err(invalid(path("to"), "branch must join two distinct buses"));
            }
            if !(br.r.is_finite() && br.x.is_finite() && br.b_ch.is_finite()) {
                return Err(invalid(path("r"), "impedance must be finite"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(invalid(path("x"), "r and x cannot both be zero"));
            }
            if !(br.smax >= 0.0 && br.smax.is_finite()) {
                return Err(invalid(path("rate_a"), "must be a nonnegative MVA limit"));
            }
        }

        if generators.is_empty() {
            return Err(invalid("generators", "at least one generator is required"));
        }
        if gencosts.len() != generators.len() {
            return Err(invalid(
                "gencosts",
                format!(
                    "{} cost rows for {} generators",
                    gencosts.len(),
                    generators.len()
                ),
            ));
        }
        let mut slack_has_gen = false;
        for (i, g) in generators.iter().enumerate() {
            let path = |f: &str| format!("generators[{i}].{f}");
            let Some(&b) = bus_index.get(&g.bus) else {
                return Err(invalid(path("bus"), format!("unknown bus {}", g.bus)));
            };
            match buses[b].kind {
                BusKind::Pq => {
                    return Err(invalid(
                        path("bus"),
                        format!("generator attached to PQ bus {}", g.bus),
                    ))
                }
                BusKind::Slack => slack_has_gen = true,
                BusKind::Pv => {}
            }
            if !(g.pmin <= g.pmax) {
                return Err(invalid(path("pmin"), "require pmin <= pmax"));
            }
            if !(g.qmin <= g.qmax) {
                return Err(invalid(path("qmin"), "require qmin <= qmax"));
            }
            if !(g.r_up >= 0.0) {
                return Err(invalid(path("ramp_up"), "must be nonnegative"));
            }
            if !(g.r_down >= 0.0) {
                return Err(invalid(path("ramp_down"), "must be nonnegative"));
            }
            if !(g.vg0 > 0.0 && g.pg0.is_finite()) {
                return Err(invalid(path("vg"), "set-points must be finite, vg > 0"));
            }
        }
        if !slack_has_gen {
            return Err(invalid("generators", "slack bus has no generator"));
        }
        for (i, c) in gencosts.iter().enumerate() {
            if !(c.c2 >= 0.0 && c.c1.is_finite() && c.c0.is_finite()) {
                return Err(invalid(format!("gencosts[{i}].c2"), "require c2 >= 0"));
            }
        }

        Ok(Self {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            gencosts,
            bus_index,
            slack,
        })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    /// Position of the bus with the given case id.
    pub fn bus_idx(&self, id: usize) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn slack_bus(&self) -> usize {
        self.slack
    }

    /// Bus position of each generator.
    pub fn gen_bus_indices(&self) -> Vec<usize> {
        self.generators
            .iter()
            .map(|g| self.bus_index[&g.bus])
            .collect()
    }

    /// Generators connected to the slack bus.
    pub fn slack_generators(&self) -> Vec<usize> {
        self.generators
            .iter()
            .enumerate()
            .filter(|(_, g)| self.bus_index[&g.bus] == self.slack)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn base_loads(&self) -> BusLoads {
        BusLoads {
            pd: self.buses.iter().map(|b| b.pd).collect(),
            qd: self.buses.iter().map(|b| b.qd).collect(),
        }
    }

    /// Total generation cost in $/h for per-generator outputs in MW.
    pub fn generation_cost(&self, pg: &[f64]) -> f64 {
        self.gencosts.iter().zip(pg).map(|(c, &p)| c.eval(p)).sum()
    }

    /// Builds a copy with the given branch statuses, checking nothing new.
    pub(crate) fn with_branch_status(&self, status: &[bool]) -> Self {
        let mut net = self.clone();
        for (br, &s) in net.branches.iter_mut().zip(status) {
            br.status = s;
        }
        net
    }

    /// The bundled 9-bus system.
    pub fn ieee9() -> Self {
        parse_case_str(IEEE9).expect("bundled ieee9 case is valid")
    }

    /// The bundled 30-bus system.
    pub fn ieee30() -> Self {
        parse_case_str(IEEE30).expect("bundled ieee30 case is valid")
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} buses, {} branches, {} generators)",
            self.name,
            self.n_buses(),
            self.n_branches(),
            self.n_generators()
        )
    }
}

fn one() -> f64 {
    1.0
}

fn one_u8() -> u8 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    #[serde(default)]
    name: Option<String>,
    base_mva: f64,
    buses: Vec<CaseBus>,
    branches: Vec<CaseBranch>,
    generators: Vec<CaseGen>,
    gencosts: Vec<GenCost>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseBus {
    id: usize,
    kind: BusKind,
    pd: f64,
    qd: f64,
    #[serde(default)]
    gsh: f64,
    #[serde(default)]
    bsh: f64,
    #[serde(default = "one")]
    vm: f64,
    #[serde(default)]
    va: f64,
    vmax: f64,
    vmin: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseBranch {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
    #[serde(default)]
    rate_a: f64,
    /// Off-nominal tap ratio; reserved, only 0 (none) or 1 accepted.
    #[serde(default)]
    ratio: f64,
    #[serde(default)]
    angle: f64,
    #[serde(default = "one_u8")]
    status: u8,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseGen {
    bus: usize,
    #[serde(default)]
    pg: f64,
    #[serde(default)]
    qg: f64,
    qmax: f64,
    qmin: f64,
    #[serde(default = "one")]
    vg: f64,
    #[serde(default = "one_u8")]
    status: u8,
    pmax: f64,
    pmin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ramp_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ramp_down: Option<f64>,
}

/// Parses a case file from disk.
pub fn parse_case(path: impl AsRef<Path>) -> Result<Network, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_case_str(&text)
}

pub fn parse_case_str(text: &str) -> Result<Network, CaseError> {
    let file: CaseFile = toml::from_str(text).map_err(|e| CaseError::Schema(e.to_string()))?;

    let buses = file
        .buses
        .iter()
        .map(|b| Bus {
            id: b.id,
            kind: b.kind,
            pd: b.pd,
            qd: b.qd,
            vmin: b.vmin,
            vmax: b.vmax,
            gsh: b.gsh,
            bsh: b.bsh,
            vm0: b.vm,
            va0: b.va,
        })
        .collect();

    let mut branches = Vec::with_capacity(file.branches.len());
    for (i, br) in file.branches.iter().enumerate() {
        if !(br.ratio == 0.0 || br.ratio == 1.0) {
            return Err(invalid(
                format!("branches[{i}].ratio"),
                "off-nominal transformer taps are not supported",
            ));
        }
        if br.angle != 0.0 {
            return Err(invalid(
                format!("branches[{i}].angle"),
                "phase-shifting transformers are not supported",
            ));
        }
        if br.status > 1 {
            return Err(invalid(format!("branches[{i}].status"), "must be 0 or 1"));
        }
        branches.push(Branch {
            from: br.from,
            to: br.to,
            r: br.r,
            x: br.x,
            b_ch: br.b,
            smax: br.rate_a,
            status: br.status == 1,
        });
    }

    if file.gencosts.len() != file.generators.len() {
        return Err(invalid(
            "gencosts",
            format!(
                "{} cost rows for {} generators",
                file.gencosts.len(),
                file.generators.len()
            ),
        ));
    }
    let mut generators = Vec::new();
    let mut gencosts = Vec::new();
    for (i, (g, c)) in file.generators.iter().zip(&file.gencosts).enumerate() {
        if g.status > 1 {
            return Err(invalid(format!("generators[{i}].status"), "must be 0 or 1"));
        }
        if g.status == 0 {
            continue;
        }
        let span = g.pmax - g.pmin;
        generators.push(Generator {
            bus: g.bus,
            pmin: g.pmin,
            pmax: g.pmax,
            qmin: g.qmin,
            qmax: g.qmax,
            r_up: g.ramp_up.unwrap_or(DEFAULT_RAMP_FRACTION * span),
            r_down: g.ramp_down.unwrap_or(DEFAULT_RAMP_FRACTION * span),
            pg0: g.pg,
            vg0: g.vg,
        });
        gencosts.push(*c);
    }

    Network::new(
        file.name.unwrap_or_else(|| "case".to_string()),
        file.base_mva,
        buses,
        branches,
        generators,
        gencosts,
    )
}

/// Serializes a network back to the case schema. Ramp limits are written
/// explicitly, so `parse_case_str(&to_case_string(n))` reproduces `n`.
pub fn to_case_string(net: &Network) -> String {
    let file = CaseFile {
        name: Some(net.name.clone()),
        base_mva: net.base_mva,
        buses: net
            .buses
            .iter()
            .map(|b| CaseBus {
                id: b.id,
                kind: b.kind,
                pd: b.pd,
                qd: b.qd,
                gsh: b.gsh,
                bsh: b.bsh,
                vm: b.vm0,
                va: b.va0,
                vmax: b.vmax,
                vmin: b.vmin,
            })
            .collect(),
        branches: net
            .branches
            .iter()
            .map(|br| CaseBranch {
                from: br.from,
                to: br.to,
                r: br.r,
                x: br.x,
                b: br.b_ch,
                rate_a: br.smax,
                ratio: 0.0,
                angle: 0.0,
                status: br.status as u8,
            })
            .collect(),
        generators: net
            .generators
            .iter()
            .map(|g| CaseGen {
                bus: g.bus,
                pg: g.pg0,
                qg: 0.0,
                qmax: g.qmax,
                qmin: g.qmin,
                vg: g.vg0,
                status: 1,
                pmax: g.pmax,
                pmin: g.pmin,
                ramp_up: Some(g.r_up),
                ramp_down: Some(g.r_down),
            })
            .collect(),
        gencosts: net.gencosts.clone(),
    };
    toml::to_string(&file).expect("case serialization cannot fail")
}

/// Two-port admittances of an in-service branch:
/// `I_from = yff V_from + yft V_to`, `I_to = ytf V_from + ytt V_to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub from: usize,
    pub to: usize,
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

/// Per-branch admittances, `None` for branches out of service.
pub fn branch_admittances(net: &Network) -> Vec<Option<BranchAdmittance>> {
    net.branches
        .iter()
        .map(|br| {
            if !br.status {
                return None;
            }
            let ys = br.series_admittance();
            let ysh = Complex64::new(0.0, br.b_ch / 2.0);
            Some(BranchAdmittance {
                from: net.bus_index[&br.from],
                to: net.bus_index[&br.to],
                yff: ys + ysh,
                yft: -ys,
                ytf: -ys,
                ytt: ys + ysh,
            })
        })
        .collect()
}

/// Dense per-unit bus admittance matrix.
pub fn build_ybus(net: &Network) -> DMatrix<Complex64> {
    let n = net.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for a in branch_admittances(net).into_iter().flatten() {
        y[(a.from, a.from)] += a.yff;
        y[(a.from, a.to)] += a.yft;
        y[(a.to, a.from)] += a.ytf;
        y[(a.to, a.to)] += a.ytt;
    }
    for (i, b) in net.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(b.gsh, b.bsh);
    }
    y
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = r#"
name = "two-bus"
base_mva = 100.0

[[buses]]
id = 1
kind = "slack"
pd = 0.0
qd = 0.0
vmax = 1.1
vmin = 0.9

[[buses]]
id = 2
kind = "pq"
pd = 50.0
qd = 0.0
vmax = 1.1
vmin = 0.9

[[branches]]
from = 1
to = 2
r = 0.0
x = 0.1
rate_a = 100.0

[[generators]]
bus = 1
pmax = 200.0
pmin = 0.0
qmax = 100.0
qmin = -100.0

[[gencosts]]
c2 = 0.01
c1 = 10.0
c0 = 0.0
"#;

    #[test]
    fn bundled_cases_have_published_sizes() {
        let n9 = Network::ieee9();
        assert_eq!(
            (n9.n_buses(), n9.n_branches(), n9.n_generators()),
            (9, 9, 3)
        );
        let n30 = Network::ieee30();
        assert_eq!(
            (n30.n_buses(), n30.n_branches(), n30.n_generators()),
            (30, 41, 6)
        );
    }

    #[test]
    fn default_ramps_are_quarter_range() {
        let n9 = Network::ieee9();
        let g = &n9.generators[1];
        assert_eq!(g.r_up, 0.25 * (300.0 - 10.0));
        assert_eq!(g.r_down, g.r_up);
    }

    #[test]
    fn two_slack_buses_rejected() {
        let text = TWO_BUS.replace("kind = \"pq\"", "kind = \"slack\"");
        let err = parse_case_str(&text).unwrap_err();
        assert!(err.to_string().contains("multiple slack buses"), "{err}");
    }

    #[test]
    fn missing_slack_rejected() {
        let text = TWO_BUS.replace("kind = \"slack\"", "kind = \"pv\"");
        assert!(matches!(
            parse_case_str(&text),
            Err(CaseError::MissingSlack)
        ));
    }

    #[test]
    fn duplicate_bus_reports_path() {
        let text = TWO_BUS.replace("id = 2", "id = 1");
        let err = parse_case_str(&text).unwrap_err();
        assert_eq!(err.to_string(), "buses[1].id: duplicate bus id 1");
    }

    #[test]
    fn nonunity_tap_rejected() {
        let text = TWO_BUS.replace("rate_a = 100.0", "rate_a = 100.0\nratio = 0.978");
        let err = parse_case_str(&text).unwrap_err();
        assert!(err.to_string().starts_with("branches[0].ratio"), "{err}");
    }

    #[test]
    fn unknown_field_is_schema_error() {
        let text = TWO_BUS.replace("rate_a = 100.0", "rate_a = 100.0\nrate_z = 1.0");
        assert!(matches!(parse_case_str(&text), Err(CaseError::Schema(_))));
    }

    #[test]
    fn bad_voltage_bounds_report_path() {
        let text = TWO_BUS.replacen("vmin = 0.9", "vmin = 1.2", 1);
        let err = parse_case_str(&text).unwrap_err();
        assert!(err.to_string().starts_with("buses[0].vmin"), "{err}");
    }

    #[test]
    fn two_bus_ybus_is_pure_reactance() {
        let net = parse_case_str(TWO_BUS).unwrap();
        let y = build_ybus(&net);
        let j10 = Complex64::new(0.0, 10.0);
        assert!((y[(0, 0)] + j10).norm() < 1e-12);
        assert!((y[(1, 1)] + j10).norm() < 1e-12);
        assert!((y[(0, 1)] - j10).norm() < 1e-12);
        assert!((y[(1, 0)] - j10).norm() < 1e-12);
    }

    #[test]
    fn out_of_service_branch_contributes_nothing() {
        let net = Network::ieee9();
        let mut status = vec![true; net.n_branches()];
        status[4] = false;
        let without = net.with_branch_status(&status);
        let y_full = build_ybus(&net);
        let y_out = build_ybus(&without);

        let mut removed = net.clone();
        removed.branches.remove(4);
        let removed =
            Network::new("r", 100.0, removed.buses, removed.branches, removed.generators, removed.gencosts)
                .unwrap();
        assert_eq!(build_ybus(&removed), y_out);

        let changed: Vec<_> = (0..9)
            .flat_map(|i| (0..9).map(move |j| (i, j)))
            .filter(|&(i, j)| y_full[(i, j)] != y_out[(i, j)])
            .collect();
        assert_eq!(changed.len(), 4, "{changed:?}");
    }

    #[test]
    fn row_sums_vanish_without_charging_or_shunts() {
        let net = Network::ieee9();
        let y = build_ybus(&net);
        for i in 0..net.n_buses() {
            let touches_charging = net.branches.iter().any(|br| {
                br.b_ch != 0.0 && (net.bus_idx(br.from) == Some(i) || net.bus_idx(br.to) == Some(i))
            });
            if !touches_charging {
                let s: Complex64 = y.row(i).iter().sum();
                assert!(s.norm() < 1e-12, "row {i} sums to {s}");
            }
        }
    }
}
