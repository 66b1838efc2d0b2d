#!/usr/bin/env python3
"""Regenerate bundled case files and golden reference values.

Uses PYPOWER as an independent reference toolbox. Run once from the
workspace root:

    python3 tools/reference_oracle.py

Outputs are committed; the Rust test suites only read them.
"""
import json
import os

import numpy as np
from pypower.api import case9, case30, runpf, runopf, ppoption
from pypower.makeYbus import makeYbus
from pypower.ext2int import ext2int

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "crates", "core", "data")
GOLDEN = os.path.join(ROOT, "crates", "core", "tests", "golden")

KIND = {1: "pq", 2: "pv", 3: "slack"}


def fmt(v):
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return f"{v:.1f}"
    return repr(v)


def write_case(ppc, name, path):
    lines = [f"# {name}: transcribed from the classic steady-state case tables.",
             "# Units: MW, MVAr, MVA, per-unit; bus shunts gsh/bsh in per-unit on base_mva.",
             f'name = "{name}"', f"base_mva = {fmt(ppc['baseMVA'])}", ""]
    for b in ppc["bus"]:
        lines += ["[[buses]]", f"id = {int(b[0])}", f'kind = "{KIND[int(b[1])]}"',
                  f"pd = {fmt(b[2])}", f"qd = {fmt(b[3])}",
                  f"gsh = {fmt(b[4] / ppc['baseMVA'])}", f"bsh = {fmt(b[5] / ppc['baseMVA'])}", f"vm = {fmt(b[7])}", f"va = {fmt(b[8])}",
                  f"vmax = {fmt(b[11])}", f"vmin = {fmt(b[12])}", ""]
    for br in ppc["branch"]:
        lines += ["[[branches]]", f"from = {int(br[0])}", f"to = {int(br[1])}",
                  f"r = {fmt(br[2])}", f"x = {fmt(br[3])}", f"b = {fmt(br[4])}",
                  f"rate_a = {fmt(br[5])}", f"ratio = {fmt(br[8])}",
                  f"angle = {fmt(br[9])}", f"status = {int(br[10])}", ""]
    for g in ppc["gen"]:
        lines += ["[[generators]]", f"bus = {int(g[0])}", f"pg = {fmt(g[1])}",
                  f"qg = {fmt(g[2])}", f"qmax = {fmt(g[3])}", f"qmin = {fmt(g[4])}",
                  f"vg = {fmt(g[5])}", f"status = {int(g[7])}", f"pmax = {fmt(g[8])}",
                  f"pmin = {fmt(g[9])}", ""]
    for c in ppc["gencost"]:
        assert int(c[0]) == 2 and int(c[3]) == 3
        lines += ["[[gencosts]]", f"c2 = {fmt(c[4])}", f"c1 = {fmt(c[5])}",
                  f"c0 = {fmt(c[6])}", ""]
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def opts():
    return ppoption(VERBOSE=0, OUT_ALL=0, PF_TOL=1e-12, OPF_VIOLATION=1e-8,
                    PDIPM_FEASTOL=1e-9, PDIPM_GRADTOL=1e-9, PDIPM_COMPTOL=1e-9,
                    PDIPM_COSTTOL=1e-10)


def pf_record(ppc):
    r, ok = runpf(ppc, opts())
    assert ok
    base = r["baseMVA"]
    return {
        "vm": r["bus"][:, 7].tolist(),
        "va_rad": np.deg2rad(r["bus"][:, 8]).tolist(),
        "pg": r["gen"][:, 1].tolist(),
        "qg": r["gen"][:, 2].tolist(),
        "pf": r["branch"][:, 13].tolist(),
        "qf": r["branch"][:, 14].tolist(),
        "pt": r["branch"][:, 15].tolist(),
        "qt": r["branch"][:, 16].tolist(),
        "setpoint_pg": ppc["gen"][:, 1].tolist(),
        "setpoint_vg": ppc["gen"][:, 5].tolist(),
    }


def opf_record(ppc):
    r = runopf(ppc, opts())
    assert r["success"]
    return {"objective": float(r["f"]), "pg": r["gen"][:, 1].tolist(),
            "vg": r["bus"][r["gen"][:, 0].astype(int) - 1, 7].tolist()}


def ramp_limits(ppc):
    g = ppc["gen"]
    span = g[:, 8] - g[:, 9]
    return 0.25 * span, 0.25 * span


def reference_trajectory(ppc, horizon, seed):
    rng = np.random.default_rng(seed)
    pd0 = ppc["bus"][:, 2].copy()
    qd0 = ppc["bus"][:, 3].copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        beta0 = np.where(pd0 != 0, pd0 / np.hypot(pd0, qd0), 1.0)
    rup, rdn = ramp_limits(ppc)
    steps = []
    prev = None
    for t in range(horizon):
        scale = rng.uniform(0.7, 1.3, size=pd0.shape)
        beta = rng.uniform(0.9 * beta0, np.minimum(1.1 * beta0, 1.0))
        pd = np.where(pd0 != 0, pd0 * scale, 0.0)
        qd = np.where(pd0 != 0, pd * np.tan(np.arccos(beta)), 0.0)
        case = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in ppc.items()}
        case["bus"][:, 2] = pd
        case["bus"][:, 3] = qd
        if prev is None:
            prev = np.array(opf_record(case)["pg"])
        lo = np.maximum(ppc["gen"][:, 9], prev - rdn)
        hi = np.minimum(ppc["gen"][:, 8], prev + rup)
        case["gen"][:, 9] = lo
        case["gen"][:, 8] = hi
        rec = opf_record(case)
        steps.append({"loads": {"pd": pd.tolist(), "qd": qd.tolist()},
                      "prev_pg": prev.tolist(), "pg": rec["pg"], "vg": rec["vg"],
                      "objective": rec["objective"], "feasible": True})
        prev = np.array(rec["pg"])
    return steps


def as_float(ppc):
    for key in ("bus", "gen", "branch", "gencost"):
        ppc[key] = np.asarray(ppc[key], dtype=float)
    return ppc


def main():
    os.makedirs(DATA, exist_ok=True)
    os.makedirs(GOLDEN, exist_ok=True)
    cases = {"ieee9": as_float(case9()), "ieee30": as_float(case30())}
    for name, ppc in cases.items():
        write_case(ppc, name, os.path.join(DATA, f"{name}.case"))

    golden = {}
    for name, ppc in cases.items():
        entry = {"pf_default": pf_record(ppc), "opf_base": opf_record(ppc)}
        internal = ext2int(ppc)
        ybus, _, _ = makeYbus(internal["baseMVA"], internal["bus"], internal["branch"])
        y = ybus.toarray()
        entry["ybus_re"] = y.real.tolist()
        entry["ybus_im"] = y.imag.tolist()
        golden[name] = entry

    # case9 with a perturbed dispatch, exercising a non-default operating point
    alt = as_float(case9())
    alt["gen"][1, 1] = 120.0
    alt["gen"][2, 1] = 110.0
    alt["gen"][:, 5] = [1.04, 1.025, 1.03]
    golden["ieee9"]["pf_alt"] = pf_record(alt)

    with open(os.path.join(GOLDEN, "reference.json"), "w") as fh:
        json.dump(golden, fh, indent=1)

    traj = {"network_id": "ieee9", "horizon": 24, "config_hash": "reference",
            "steps": reference_trajectory(as_float(case9()), 24, 20240607)}
    with open(os.path.join(GOLDEN, "reference_trajectory_ieee9.json"), "w") as fh:
        json.dump(traj, fh, indent=1)

    print("case9 objective", golden["ieee9"]["opf_base"]["objective"])
    print("case30 objective", golden["ieee30"]["opf_base"]["objective"])


if __name__ == "__main__":
    main()
