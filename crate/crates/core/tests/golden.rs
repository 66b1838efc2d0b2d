//! Comparisons against values recorded from an independent reference
//! power-system toolbox (see tools/reference_oracle.py).

use std::path::PathBuf;
use std::sync::OnceLock;

use rtopf_core::grid::build_ybus;
use rtopf_core::opf::{import_trajectory, solve_acopf, AcOpfProblem};
use rtopf_core::powerflow::{branch_flows, solve_nr, violations, DispatchSetpoints};
use rtopf_core::Network;
use serde_json::Value;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn reference() -> &'static Value {
    static R: OnceLock<Value> = OnceLock::new();
    R.get_or_init(|| {
        let text = std::fs::read_to_string(golden_dir().join("reference.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    })
}

fn vec(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn cases() -> [(&'static str, Network); 2] {
    [("ieee9", Network::ieee9()), ("ieee30", Network::ieee30())]
}

#[test]
fn ybus_matches_reference_entrywise() {
    for (key, net) in cases() {
        let y = build_ybus(&net);
        let re = &reference()[key]["ybus_re"];
        let im = &reference()[key]["ybus_im"];
        for i in 0..net.n_buses() {
            let (row_re, row_im) = (vec(&re[i]), vec(&im[i]));
            for k in 0..net.n_buses() {
                assert!((y[(i, k)].re - row_re[k]).abs() < 1e-12, "{key} ({i},{k})");
                assert!((y[(i, k)].im - row_im[k]).abs() < 1e-12, "{key} ({i},{k})");
            }
        }
    }
}

fn check_pf(net: &Network, r: &Value, label: &str) {
    let sp = DispatchSetpoints {
        pg: vec(&r["setpoint_pg"]),
        vg: vec(&r["setpoint_vg"]),
    };
    let sol = solve_nr(net, &sp, &net.base_loads()).unwrap();
    let (vm, va) = (vec(&r["vm"]), vec(&r["va_rad"]));
    for i in 0..net.n_buses() {
        assert!((sol.vm[i] - vm[i]).abs() < 1e-6, "{label} vm[{i}]");
        assert!((sol.va[i] - va[i]).abs() < 1e-6, "{label} va[{i}]");
    }
    let (pg, qg) = (vec(&r["pg"]), vec(&r["qg"]));
    for g in 0..net.n_generators() {
        assert!((sol.pg_solved[g] - pg[g]).abs() < 1e-4, "{label} pg[{g}]");
        assert!((sol.qg[g] - qg[g]).abs() < 1e-4, "{label} qg[{g}]");
    }
    let flows = branch_flows(net, &sol).unwrap();
    let (pf, qf, pt, qt) = (vec(&r["pf"]), vec(&r["qf"]), vec(&r["pt"]), vec(&r["qt"]));
    for (l, (sf, st)) in flows.iter().enumerate() {
        assert!((sf.re - pf[l]).abs() < 1e-6 && (sf.im - qf[l]).abs() < 1e-6, "{label} from[{l}]");
        assert!((st.re - pt[l]).abs() < 1e-6 && (st.im - qt[l]).abs() < 1e-6, "{label} to[{l}]");
    }
}

#[test]
fn power_flow_matches_reference() {
    for (key, net) in cases() {
        check_pf(&net, &reference()[key]["pf_default"], key);
    }
    check_pf(&Network::ieee9(), &reference()["ieee9"]["pf_alt"], "ieee9 alt");
}

#[test]
fn opf_objective_matches_reference() {
    for (key, net, tol) in [
        ("ieee9", Network::ieee9(), 5e-4),
        ("ieee30", Network::ieee30(), 1e-3),
    ] {
        let r = &reference()[key]["opf_base"];
        let sol = solve_acopf(&net, &net.base_loads(), None).unwrap();
        let want = r["objective"].as_f64().unwrap();
        assert!(sol.feasible);
        assert!(((sol.objective - want) / want).abs() < tol, "{key}: {} vs {want}", sol.objective);
        for (a, b) in sol.pg.iter().zip(vec(&r["pg"])) {
            assert!((a - b).abs() < 0.1, "{key} pg {a} vs {b}");
        }
    }
}

#[test]
fn reference_trajectory_is_accepted_and_reproduced() {
    let net = Network::ieee9();
    let traj = import_trajectory(&golden_dir().join("reference_trajectory_ieee9.json"), &net).unwrap();
    assert_eq!(traj.horizon, 24);
    let problem = AcOpfProblem::new(&net);
    for (t, step) in traj.steps.iter().enumerate() {
        let sol = problem.solve(&step.loads, Some(&step.prev_pg), None).unwrap();
        let rel = (sol.objective - step.objective).abs() / step.objective;
        assert!(rel < 5e-4, "step {t}: {} vs {}", sol.objective, step.objective);
    }
}

#[test]
fn feasible_expert_solutions_have_zero_violations() {
    let net = Network::ieee9();
    let traj = import_trajectory(&golden_dir().join("reference_trajectory_ieee9.json"), &net).unwrap();
    let problem = AcOpfProblem::new(&net);
    for step in &traj.steps {
        let sol = problem.solve(&step.loads, Some(&step.prev_pg), None).unwrap();
        assert!(sol.feasible);
        let pf = solve_nr(
            &net,
            &DispatchSetpoints {
                pg: sol.pg.clone(),
                vg: sol.vg.clone(),
            },
            &step.loads,
        )
        .unwrap();
        assert!(violations(&net, &pf).total() < 1e-6);
    }
}
