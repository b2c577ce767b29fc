"""Acceptance checks 1-9, shared by the test suite and the `selftest` subcommand.

Each check returns a Check with a boolean verdict and a details dict.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coarse as co
from . import contour as ct
from . import dobrushin as db
from . import functional as fn
from . import mc_experiments as mx
from . import meanfield as mf
from .geometry import Region
from .kernel import KacKernel
from .potts import BoundaryProfile


@dataclass
class Check:
    number: int
    name: str
    ok: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} criterion {self.number}: {self.name} ({self.seconds:.1f} s)"


def _timed(number, name, fn_, *args, **kw) -> Check:
    t = time.perf_counter()
    ok, det = fn_(*args, **kw)
    return Check(number, name, bool(ok), det, time.perf_counter() - t)


# 1 ---------------------------------------------------------------------------

def closed_forms(Q: int) -> dict:
    bc = mf.beta_c(Q)
    return {"beta_c": bc, "rho_A": (Q - 1) / Q, "rho_B": 1.0 / (Q * (Q - 1)), "q_beta_ab": bc / Q,
            "slope": -((Q - 2) ** 3) / (4 * Q * (Q - 1) ** 2 * math.log(Q - 1))}


def meanfield_goldens(Q: int) -> dict:
    cf = closed_forms(Q)
    bc = mf.beta_c(Q)
    p = mf.MeanFieldParams(Q, bc)
    a, b = mf.ordered_solution(p)
    dphi, _ = mf.delta_phi_and_slope(p)
    direct = mf.phi_mf(mf.ordered_vector(1, Q, a, b), p) - mf.phi_mf(mf.uniform(Q), p)
    errs = {
        "beta_c": abs(bc - cf["beta_c"]),
        "rho_A": abs(a - cf["rho_A"]),
        "rho_B": abs(b - cf["rho_B"]),
        "delta_phi": abs(dphi),
        "delta_phi_direct": abs(direct),
        "q_beta_ab": abs(Q * bc * a * b - cf["q_beta_ab"]),
        "slope": abs(mf.delta_phi_beta_slope(p) - cf["slope"]),
    }
    tol = {"beta_c": 1e-9, "rho_A": 1e-9, "rho_B": 1e-9, "delta_phi": 1e-10, "delta_phi_direct": 1e-10,
           "q_beta_ab": 1e-9, "slope": 1e-8}
    return {"errors": errs, "ok": all(errs[k] <= tol[k] for k in tol)}


def check_meanfield():
    det = {}
    ok = True
    g = meanfield_goldens(3)
    det["Q3_literals"] = {
        "beta_c": abs(mf.beta_c(3) - 4 * math.log(2)),
        "q_beta_ab": abs(4 * math.log(2) / 3 - math.log(2) / math.sinh(math.log(2))),
        "slope": abs(closed_forms(3)["slope"] + 1 / (48 * math.log(2))),
    }
    ok &= all(v < 1e-12 for v in det["Q3_literals"].values()) and closed_forms(3)["q_beta_ab"] < 1
    for Q in (3, 5, 10):
        g = meanfield_goldens(Q)
        det[f"Q{Q}"] = g["errors"]
        ok &= g["ok"]
    return ok, det


# 2 ---------------------------------------------------------------------------

def check_beta0():
    r0 = mf.rho_zero(3)
    b0 = float(mf.beta_tilde(r0, 3))
    xs = np.linspace(1 / 3, 1, 10_002)[1:-1]
    scan = float(np.min(mf.beta_tilde(xs, 3)))
    det = {"beta0_root": b0, "beta0_scan": scan, "diff": abs(b0 - scan), "orders": {}}
    ok = abs(b0 - scan) < 1e-6
    for Q in range(3, 11):
        b0q, bcq = mf.beta_thresholds(Q)
        det["orders"][Q] = [b0q, bcq]
        ok &= b0q < bcq < Q
    return ok, det


# 3 ---------------------------------------------------------------------------

def check_derivatives(seed: int = 0):
    rng = np.random.default_rng(seed)
    Q, beta = 3, mf.beta_c(3)
    p = mf.MeanFieldParams(Q, beta)
    h = 1e-6
    g_err = j_err = 0.0
    for _ in range(100):
        v = rng.dirichlet(np.ones(Q)) * 0.9 + 0.1 / Q
        grad = mf.grad_phi(v, p)
        num = np.array([(mf.phi_mf(v + h * e, p) - mf.phi_mf(v - h * e, p)) / (2 * h) for e in np.eye(Q)])
        g_err = max(g_err, float(np.max(np.abs(grad - num)) / np.max(np.abs(num))))
        J = mf.g_jacobian(v, p)
        numJ = np.stack([(mf.g_map(v + h * e, p) - mf.g_map(v - h * e, p)) / (2 * h) for e in np.eye(Q)], axis=1)
        j_err = max(j_err, float(np.max(np.abs(J - numJ)) / np.max(np.abs(numJ))))
    rad = mf.contraction_radius(Q, beta)
    worst = 0.0
    for m in mf.critical_minimizers(Q).vectors().values():
        for _ in range(1000):
            w = mf.project_tangent(rng.uniform(-rad, rad, Q))
            w *= rng.uniform(0, 1) * rad / max(np.max(np.abs(w)), 1e-300)
            worst = max(worst, float(np.max(np.abs(mf.g_jacobian(m + w, p)))))
    bound = 1 - 1 / (2 * Q)
    det = {"grad_rel_err": g_err, "jacobian_rel_err": j_err, "max_jacobian_entry": worst, "bound": bound}
    return g_err <= 1e-6 and j_err <= 1e-6 and worst <= bound, det


# 4 ---------------------------------------------------------------------------

DESK_BETAS = (2.57, 2.77, 2.97)


def desk_context(beta: float, phase: int, Q: int = 3) -> fn.FunctionalContext:
    k = KacKernel(0.2, 1)
    bc = BoundaryProfile.disordered(Q) if phase == mf.DISORDERED else BoundaryProfile.ordered(phase, Q, beta)
    return fn.FunctionalContext(k, beta, Q, Region.box((0,), (8,)), bc, 2)


def check_lp():
    det = {}
    ok = True
    for beta in DESK_BETAS:
        for phase in (1, mf.DISORDERED):
            rep = fn.lp_verify(desk_context(beta, phase))
            det[f"beta={beta},phase={phase}"] = rep.as_dict()
            ok &= rep.ok and rep.n_configs == 3**8
    # cube-level Stirling check on the 15 classes of four sites, bound 3 ln 2
    gaps = fn.stirling_gap(fn.compositions(4, 3))
    det["classes_of_four"] = {"n": len(gaps), "max_gap": float(gaps.max()), "bound": 3 * math.log(2),
                              "example_2_1_1": float(fn.stirling_gap([[2, 1, 1]])[0])}
    ok &= len(gaps) == 15 and float(gaps.max()) <= 3 * math.log(2)
    return ok, det


# 5 ---------------------------------------------------------------------------

def check_dynamics(seed: int = 0, starts: int = 20, zeta: float = 0.1):
    Q = 3
    beta = mf.beta_c(Q)
    rng = np.random.default_rng(seed)
    floor = fn.floor_bound(Q, beta)
    det = {}
    ok = True
    for phase in (1, mf.DISORDERED):
        ctx = desk_context(beta, phase)
        ref = fn.reference_vector(Q, beta, phase)
        for u in (0.0, 0.5, 1.0):
            ends, mono, res, low = [], True, 0.0, 1.0
            for _ in range(starts):
                prof, tr = fn.dynamics_minimize(ctx, fn.random_tube_profile(ctx, ref, zeta, rng), u, phase)
                mono &= bool(np.all(np.diff(tr.free_energy) <= 1e-12))
                res = max(res, tr.residual[-1])
                low = min(low, float(prof.values.min()))
                ends.append(prof.values)
            gap = max(float(np.max(np.abs(a - b))) for a, b in itertools.combinations(ends, 2))
            good = mono and res < 1e-10 and low >= floor - 1e-9 and gap < 1e-9
            det[f"phase={phase},u={u}"] = {"monotone": mono, "residual": res, "min_component": low,
                                          "floor": floor, "uniqueness_gap": gap, "ok": good}
            ok &= good
    return ok, det


# 6 ---------------------------------------------------------------------------

def dobrushin_setup(zeta: float = 0.15):
    k = KacKernel(0.2, 1)
    coarse = ct.Coarsening(co.ScaleTriple.manual(1, 9, 9), co.Accuracy.manual(zeta, 3))
    return k, Region.box((0,), (9,)), coarse


def check_dobrushin():
    k, region, coarse = dobrushin_setup()
    beta = mf.beta_c(3)
    det = {}
    ok = True
    for u in (0.5, 1.0):
        for phase in (mf.DISORDERED, 1):
            rep = db.exhaustive_scan(region, 4, db.InterpolatedField(k, beta, 3, u, phase), coarse)
            det[f"u={u},phase={phase}"] = rep.as_dict()
            ok &= rep.ok and rep.identity_error <= 1e-12
    det["linearized_ratio"] = db.linearized_ratio(3, beta, mf.DISORDERED)
    det["bound_factor"] = 1 - 1 / 6
    return ok, det


# 7 ---------------------------------------------------------------------------

def toy_coarsening(zeta: float = 0.1) -> ct.Coarsening:
    return ct.Coarsening(co.ScaleTriple.manual(1, 3, 3), co.Accuracy.manual(zeta, 3))


def toy_window(free=(0, 1, 2, 3)) -> ct.ContourToy:
    return ct.ContourToy.segment(KacKernel(0.25, 1), toy_coarsening(), list(free), (0, 1, 2))


def synthetic_family(n: int = 1000, seed: int = 0):
    """(grid, label, coarsening) triples in the phase sets, d = 1 and d = 2."""
    rng = np.random.default_rng(seed)
    cz2 = ct.Coarsening(co.ScaleTriple.manual(1, 6, 12), co.Accuracy.manual(0.1, 3))
    cz1 = ct.Coarsening(co.ScaleTriple.manual(1, 6, 6), co.Accuracy.manual(0.1, 3))
    labels = (mf.DISORDERED, 1, 2, 3)
    for m in range(n):
        lab = labels[m % 4]
        if m % 2:
            yield ct.synthetic_correct_config((48, 48), cz2, lab, rng), lab, cz2
        else:
            yield ct.synthetic_correct_config((60,), cz1, lab, rng), lab, cz1


def check_contours():
    det = {}
    nonempty = 0
    for grid, lab, cz in synthetic_family():
        eta = cz.eta(grid)
        theta = cz.theta(eta)
        if ct.extract_contours(theta, eta, cz.scales):
            nonempty += 1
    det["synthetic_nonempty"] = nonempty
    ok = nonempty == 0
    toy = toy_window()
    two = toy_window((0, 1, 5, 6))
    for beta in (1.0, 2.0):
        for name, t in (("window", toy), ("two_segments", two)):
            rep = ct.contour_identity_check(t, beta)
            det[f"identity_{name}_beta={beta}"] = rep.as_dict()
            ok &= rep.residual < 1e-10
    # weights against the loop oracle
    rng = np.random.default_rng(1)
    worst = 0.0
    xi_pool = [np.tile(rng.permutation(3), 4) for _ in range(3)]
    base = np.tile([0, 1, 2], 4)
    flips = [(3, [0, 0, 1]), (0, [2, 2, 2]), (9, [1, 0, 0]), (0, [0, 1, 1])]
    count = 0
    for start, block in flips:
        cfg = base.copy()
        cfg[start:start + 3] = block
        for c in toy.contours_of(cfg):
            if len(toy.free_index(c)) > 6:
                continue
            for xi in xi_pool[:2]:
                for beta in (1.0, 2.0):
                    w = ct.contour_weight(toy, c, xi, beta).weight
                    o = ct.weight_oracle(toy, c, xi, beta)
                    worst = max(worst, abs(w - o) / max(abs(o), 1e-300))
                    count += 1
    det["weights_checked"] = count
    det["weight_rel_err"] = worst
    ok &= worst <= 1e-12 and count > 0
    return ok, det


# 8 ---------------------------------------------------------------------------

def check_first_order(sweeps: int = 10_000, seed: int = 2024):
    bc = mf.beta_c(3)
    betas = np.round(np.arange(2.5, 3.1 + 1e-9, 0.05), 10)
    rows = mx.hysteresis_scan(48, 2, 3, 0.25, betas, sweeps, seed)
    gaps = mx.branch_gaps(rows)
    det = {"gaps": gaps, "max_gap": max(gaps.values())}
    gap_ok = det["max_gap"] > 0.2
    est = {}
    for inv in (4, 3, 6):
        try:
            r = mx.pseudo_beta_c(48, 2, 3, 1.0 / inv, seed, sweeps=sweeps, lo=bc - 0.5, hi=bc + 1.5, steps=6)
            est[inv] = {"estimate": r.estimate, "window": r.window}
        except mx.NoCrossing as e:
            est[inv] = {"estimate": None, "diagnostic": str(e)}
    det["pseudo_beta_c"] = est
    e4 = est[4]["estimate"]
    window_ok = e4 is not None and abs(e4 - bc) <= 0.2
    trend_ok = (est[3]["estimate"] is not None and est[6]["estimate"] is not None
                and abs(est[6]["estimate"] - bc) <= abs(est[3]["estimate"] - bc))
    det.update({"gap_ok": gap_ok, "window_ok": window_ok, "trend_ok": trend_ok,
                "self_coupling_shifted_beta_c": bc / (KacKernel(0.25, 2).lattice_normalization
                                                      - KacKernel(0.25, 2).self_coupling)})
    return gap_ok and window_ok and trend_ok, det


# 9 ---------------------------------------------------------------------------

GOLDEN_ZETAS = (0.02, 0.05, 0.1)


def gap_values():
    bc = mf.beta_c(3)
    return {str(z): mf.gap_scan(3, bc, z, 0.005)[0] for z in GOLDEN_ZETAS}


def check_gap_scan(golden_path: Path | None = None):
    vals = gap_values()
    seq = [vals[str(z)] for z in GOLDEN_ZETAS]
    ok = seq[0] > 0 and all(a < b for a, b in zip(seq, seq[1:]))
    det = {"gaps": vals}
    if golden_path is not None:
        golden_path = Path(golden_path)
        if not golden_path.exists():
            golden_path.parent.mkdir(parents=True, exist_ok=True)
            golden_path.write_text(json.dumps(vals, indent=2) + "\n")
            det["golden"] = "recorded"
        else:
            ref = json.loads(golden_path.read_text())
            diff = max(abs(ref[k] - vals[k]) for k in vals)
            det["golden_diff"] = diff
            ok &= diff <= 1e-12
    return ok, det


CHECKS = {
    1: ("mean-field golden values", check_meanfield),
    2: ("beta_0 consistency", check_beta0),
    3: ("gradient, Jacobian and contraction bound", check_derivatives),
    4: ("Lebowitz-Penrose desk instance", check_lp),
    5: ("relaxation dynamics", check_dynamics),
    6: ("Dobrushin exhaustive scan", check_dobrushin),
    7: ("contour machinery", check_contours),
    8: ("first-order signature (slow)", check_first_order),
    9: ("simplex gap scan", check_gap_scan),
}


def run(number: int, **kw) -> Check:
    name, f = CHECKS[number]
    return _timed(number, name, f, **kw)
