"""pottskac command line: mean-field tables, functional checks, contours, Dobrushin scans, Monte Carlo.

Every subcommand writes its artifacts plus manifest.json into the output
directory (--out, else $POTTSKAC_OUT, else ./runs/<subcommand>).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance
from . import coarse as co
from . import contour as ct
from . import dobrushin as db
from . import functional as fn
from . import mc_experiments as mx
from . import meanfield as mf
from .geometry import Region
from .kernel import KacKernel
from .potts import BoundaryProfile

# Configuration ---------------------------------------------------------------

DEFAULTS = {
    "meanfield": {"Q": 3, "beta_grid": "2.0:3.2:0.05"},
    "lp-check": {"Q": 3, "gamma": 0.2, "d": 1, "L": 8, "ell": 2, "betas": [2.57, 2.77, 2.97],
                 "phases": [1, -1]},
    "dynamics": {"Q": 3, "gamma": 0.2, "d": 1, "L": 8, "ell": 2, "beta": None, "u": 1.0, "phase": 1,
                 "boundary": None, "start": "tube", "zeta": 0.1, "tol": 1e-10, "h": 0.5, "seed": 0},
    "contours": {"gamma": 0.25, "zeta": 0.1, "free": [0, 1, 2, 3], "betas": [1.0, 2.0], "rule": "separated",
                 "a": 0.25},
    "dobrushin": {"gamma": 0.2, "zeta": 0.15, "u": [0.5, 1.0], "phases": [-1, 1], "tail": False,
                  "trend_gammas": [0.2, 0.1, 0.05], "trend_L": 48, "trend_lm": 8},
    "mc": {"preset": None, "Q": 3, "d": 2, "L": 48, "gamma": 0.25, "betas": "2.5:3.1:0.05", "sweeps": 10000,
           "seed": 2024, "record_every": 10, "pseudo": True, "census_scales": [1, 16, 16], "census_zeta": 0.26},
    "selftest": {"slow": False, "golden": None},
}

PRESETS = {"desk-q3": {"Q": 3, "d": 2, "L": 48, "gamma": 0.25, "betas": "2.5:3.1:0.05", "sweeps": 10000}}


class ConfigError(ValueError):
    pass


def parse_number(x):
    """Numbers, or exact rationals written as strings such as "2/3"."""
    if isinstance(x, bool) or x is None:
        return x
    if isinstance(x, (int, float)):
        return x
    if isinstance(x, str):
        try:
            f = Fraction(x.strip())
        except ValueError:
            return x
        return f.numerator if f.denominator == 1 else float(f)
    if isinstance(x, list):
        return [parse_number(v) for v in x]
    if isinstance(x, dict):
        return {k: parse_number(v) for k, v in x.items()}
    return x


def load_config(command: str, path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    sources = []
    if path:
        with open(path) as fh:
            sources.append(json.load(fh))
    sources.append({k: v for k, v in overrides.items() if v is not None})
    for src in sources:
        unknown = set(src) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(src)
    if command == "mc" and cfg.get("preset"):
        if cfg["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {cfg['preset']!r}")
        for k, v in PRESETS[cfg["preset"]].items():
            if k not in sources[-1] and not (len(sources) > 1 and k in sources[0]):
                cfg[k] = v
    return {k: parse_number(v) for k, v in cfg.items()}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def parse_grid(grid) -> list:
    if isinstance(grid, list):
        return [float(v) for v in grid]
    a, b, s = (float(Fraction(t)) for t in str(grid).split(":"))
    n = int(math.floor((b - a) / s + 1e-9))
    return [round(a + i * s, 12) for i in range(n + 1)]


# Output ----------------------------------------------------------------------

def fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return x


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r[h]) if isinstance(r, dict) else fmt(v) for h, v in
                        (zip(header, [r[h] for h in header]) if isinstance(r, dict) else zip(header, r))])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def versions() -> dict:
    import numba
    import scipy
    return {"pottskac": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def manifest(out: Path, command: str, cfg: dict, started: float, outputs, status: str, checks=None):
    m = {"command": command, "config": cfg, "config_hash": config_hash(cfg), "seed": cfg.get("seed"),
         "versions": versions(), "wall_time": time.time() - started, "outputs": sorted(outputs),
         "status": status}
    if checks is not None:
        m["checks"] = checks
    write_json(out / "manifest.json", m)


# Subcommands -----------------------------------------------------------------

def cmd_meanfield(cfg, out: Path):
    Q = int(cfg["Q"])
    rows = []
    for beta in parse_grid(cfg["beta_grid"]):
        p = mf.MeanFieldParams(Q, beta)
        pdis = mf.phi_mf(mf.uniform(Q), p)
        sol = mf.ordered_solution(p)
        if sol is None:
            pord, a, b = math.nan, math.nan, math.nan
        else:
            a, b = sol
            pord = mf.phi_mf(mf.ordered_vector(1, Q, a, b), p)
        rows.append({"beta": beta, "phi_dis": pdis, "phi_ord": pord, "delta_phi": pord - pdis, "rho_A": a,
                     "rho_B": b})
    write_csv(out / "meanfield.csv", ["beta", "phi_dis", "phi_ord", "delta_phi", "rho_A", "rho_B"], rows)
    b0, bc = mf.beta_thresholds(Q)
    write_json(out / "thresholds.json", {"Q": Q, "beta_0": b0, "beta_c": bc, "rho_0": mf.rho_zero(Q)})
    return ["meanfield.csv", "thresholds.json"], True, None


def _context(cfg, beta, phase):
    Q, d, L = int(cfg["Q"]), int(cfg["d"]), int(cfg["L"])
    k = KacKernel(float(cfg["gamma"]), d)
    bnd = cfg.get("boundary")
    if isinstance(bnd, list):
        bc = BoundaryProfile.custom({}, Q, default=np.asarray(bnd, dtype=float))
    elif phase == mf.DISORDERED:
        bc = BoundaryProfile.disordered(Q)
    else:
        bc = BoundaryProfile.ordered(int(phase), Q, beta)
    return fn.FunctionalContext(k, beta, Q, Region.box((0,) * d, (L,) * d), bc, int(cfg["ell"]))


def cmd_lp(cfg, out: Path):
    reports, ok = [], True
    for beta in cfg["betas"]:
        for phase in cfg["phases"]:
            rep = fn.lp_verify(_context(cfg, float(beta), int(phase)))
            reports.append({"beta": beta, "phase": phase, **rep.as_dict()})
            ok &= rep.ok
    write_json(out / "lp_check.json", reports)
    return ["lp_check.json"], ok, [{"beta": r["beta"], "phase": r["phase"], "ok": r["ok"]} for r in reports]


def cmd_dynamics(cfg, out: Path):
    Q = int(cfg["Q"])
    beta = float(cfg["beta"]) if cfg["beta"] is not None else mf.beta_c(Q)
    phase = int(cfg["phase"])
    ctx = _context(cfg, beta, phase)
    ref = fn.reference_vector(Q, beta, phase)
    rng = np.random.default_rng(int(cfg["seed"]))
    if cfg["start"] == "tube":
        start = fn.random_tube_profile(ctx, ref, float(cfg["zeta"]), rng)
    elif cfg["start"] == "constant":
        start = ctx.constant(ref)
    elif isinstance(cfg["start"], list):
        start = ctx.constant(np.asarray(cfg["start"], dtype=float))
    else:
        raise ConfigError(f"unknown start {cfg['start']!r}")
    prof, tr = fn.dynamics_minimize(ctx, start, float(cfg["u"]), phase, tol=float(cfg["tol"]), h=float(cfg["h"]))
    write_csv(out / "trace.csv", ["iter", "free_energy", "residual"], tr.rows())
    res = {"minimizer": prof.values, "corners": prof.corners, "iterations": tr.iters[-1],
           "residual": tr.residual[-1], "free_energy": tr.free_energy[-1],
           "floor": fn.floor_bound(Q, beta), "min_component": float(prof.values.min()),
           "distance_to_reference": float(np.max(np.abs(prof.values - ref)))}
    write_json(out / "dynamics.json", res)
    return ["trace.csv", "dynamics.json"], True, None


def cmd_contours(cfg, out: Path):
    k = KacKernel(float(cfg["gamma"]), 1)
    cz = ct.Coarsening(co.ScaleTriple.manual(1, 3, 3), co.Accuracy.manual(float(cfg["zeta"]), 3))
    toy = ct.ContourToy.segment(k, cz, [int(c) for c in cfg["free"]], (0, 1, 2))
    xi = np.tile([0, 1, 2], toy.n_free // 3)
    ok = True
    ident, census = [], []
    for beta in cfg["betas"]:
        rep = ct.contour_identity_check(toy, float(beta), cfg["rule"])
        ident.append({"beta": beta, **rep.as_dict()})
        ok &= rep.residual < 1e-10
        K = ct.peierls_constant(1, 3, float(beta), k.gamma, float(cfg["a"]), cz.scales.lm)
        for c in rep.contours:
            w = ct.contour_weight(toy, c, xi, float(beta))
            census.append({"beta": beta, **c.record(w.weight), "log_weight": w.log_weight,
                           "minus_K_N": -K * c.N, "support": [s[0] for s in c.support]})
    write_json(out / "identity.json", ident)
    write_json(out / "contours.json", census)
    return ["identity.json", "contours.json"], ok, ident


def cmd_dobrushin(cfg, out: Path):
    k, region, coarse = acceptance.dobrushin_setup(float(cfg["zeta"]))
    k = KacKernel(float(cfg["gamma"]), 1)
    beta = mf.beta_c(3)
    scans, ok = [], True
    for u in cfg["u"]:
        for ph in cfg["phases"]:
            rep = db.exhaustive_scan(region, len(region) // 2, db.InterpolatedField(k, beta, 3, float(u), int(ph)),
                                     coarse, tail=bool(cfg["tail"]))
            scans.append(rep.as_dict())
            ok &= rep.ok
    rows = []
    for g in cfg["trend_gammas"]:
        kk = KacKernel(float(g), 1)
        for u in cfg["u"]:
            _, r = db.dobrushin_matrix(kk, 3, float(u), Region.box((0,), (int(cfg["trend_L"]),)), int(cfg["trend_lm"]),
                                       tail=bool(cfg["tail"]))
            rows.append(r.as_dict())
    write_json(out / "contraction_scan.json", scans)
    write_json(out / "row_sums.json", rows)
    return ["contraction_scan.json", "row_sums.json"], ok, [{"u": s["u"], "label": s["label"], "ok": s["ok"]}
                                                             for s in scans]


def cmd_mc(cfg, out: Path):
    Q, d, L, gamma = int(cfg["Q"]), int(cfg["d"]), int(cfg["L"]), float(cfg["gamma"])
    betas, sweeps, seed = parse_grid(cfg["betas"]), int(cfg["sweeps"]), int(cfg["seed"])
    every = max(1, int(cfg["record_every"]))
    outputs = []
    rows = []
    with open(out / "trajectories.ndjson", "w") as fh:
        for n, beta in enumerate(betas):
            for b, branch in enumerate(("ordered", "disordered")):
                s = mx.chain_seed(seed, n, b)
                tr = mx.run_branch(L, d, Q, gamma, beta, sweeps, s, branch, snapshot_every=max(sweeps // 20, 1))
                rows.append({"beta": beta, "branch": branch, "seed": s, **mx.summarize(tr, L**d)})
                for rec in tr.records():
                    if rec["sweep"] % every == 0:
                        fh.write(json.dumps({"beta": beta, "branch": branch, "seed": s, **rec}) + "\n")
                cz = mx.census_coarsening(KacKernel(gamma, d), beta, cfg["census_scales"], Q,
                                          float(cfg["census_zeta"]))
                rows[-1]["theta_zero_fraction"] = mx.contour_census(tr, L, d, cz).zero_fraction
    outputs.append("trajectories.ndjson")
    header = ["beta", "branch", "seed", "rho_max", "rho_first", "energy", "theta_zero_fraction"]
    write_csv(out / "hysteresis.csv", header, rows)
    outputs.append("hysteresis.csv")
    summary = {"gaps": mx.branch_gaps(rows), "beta_c_mf": mf.beta_c(Q)}
    if cfg["pseudo"]:
        try:
            r = mx.pseudo_beta_c(L, d, Q, gamma, seed, sweeps=sweeps, lo=mf.beta_c(Q) - 0.5, hi=mf.beta_c(Q) + 1.5)
            summary["pseudo_beta_c"] = r.as_dict()
        except mx.NoCrossing as e:
            summary["pseudo_beta_c"] = {"estimate": None, "diagnostic": str(e)}
    write_json(out / "summary.json", summary)
    outputs.append("summary.json")
    return outputs, True, None


def cmd_selftest(cfg, out: Path):
    nums = [n for n in acceptance.CHECKS if cfg["slow"] or n != 8]
    checks = []
    ok = True
    for n in nums:
        kw = {"golden_path": cfg["golden"]} if n == 9 and cfg["golden"] else {}
        c = acceptance.run(n, **kw)
        print(c.line(), flush=True)
        checks.append({"criterion": n, "name": c.name, "ok": c.ok, "seconds": c.seconds, "details": c.details})
        ok &= c.ok
    write_json(out / "selftest.json", checks)
    return ["selftest.json"], ok, [{"criterion": c["criterion"], "ok": c["ok"]} for c in checks]


COMMANDS = {"meanfield": cmd_meanfield, "lp-check": cmd_lp, "dynamics": cmd_dynamics, "contours": cmd_contours,
            "dobrushin": cmd_dobrushin, "mc": cmd_mc, "selftest": cmd_selftest}


# plot-data -------------------------------------------------------------------

def plot_data(path: str) -> list:
    """Long-format rows (series, x, y) for a recognized result file."""
    p = Path(path)
    if p.suffix == ".csv":
        with open(p, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError("empty result file")
        cols = set(rows[0])
        if {"beta", "phi_dis", "phi_ord", "delta_phi"} <= cols:
            return [(s, r["beta"], r[c]) for s, c in (("phi_dis", "phi_dis"), ("phi_ord", "phi_ord"),
                                                      ("delta", "delta_phi")) for r in rows]
        if {"iter", "free_energy", "residual"} <= cols:
            return [("free_energy", r["iter"], r["free_energy"]) for r in rows]
        if {"beta", "branch", "rho_max", "energy"} <= cols:
            out = []
            for obs in ("rho_max", "energy"):
                for br in ("ordered", "disordered"):
                    out += [(f"{obs}:{br}", r["beta"], r[obs]) for r in rows if r["branch"] == br]
            return out
    raise ValueError(f"schema mismatch: {p.name} is not a recognized result file")


# Entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pottskac", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (strict keys)")
        p.add_argument("--out", help="output directory")
        return p

    p = common(sub.add_parser("meanfield", help="thresholds, minimizers and delta-phi tables"))
    p.add_argument("--Q", type=int)
    p.add_argument("--beta-grid", dest="beta_grid", help="start:stop:step")
    p = common(sub.add_parser("lp-check", help="Lebowitz-Penrose bounds by enumeration"))
    p.add_argument("--Q", type=int)
    p = common(sub.add_parser("dynamics", help="relaxation-dynamics minimization with trace"))
    p.add_argument("--u", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--phase", type=int)
    p.add_argument("--seed", type=int)
    p = common(sub.add_parser("contours", help="contour identity and weights on the toy window"))
    p.add_argument("--rule", choices=["separated", "disjoint-collars"])
    common(sub.add_parser("dobrushin", help="influence row sums and exhaustive contraction scan"))
    p = common(sub.add_parser("mc", help="hysteresis, pseudo-critical beta and contour census"))
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--sweeps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--L", type=int)
    p = common(sub.add_parser("selftest", help="acceptance checks"))
    p.add_argument("--slow", action="store_true", default=None, help="include the Monte Carlo criterion")
    p = sub.add_parser("plot-data", help="long-format CSV from a result file")
    p.add_argument("result")
    p.add_argument("--out", help="output CSV (default: stdout)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plot-data":
        try:
            rows = plot_data(args.result)
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        fh = open(args.out, "w", newline="") if args.out else sys.stdout
        w = csv.writer(fh)
        w.writerow(["series", "x", "y"])
        w.writerows(rows)
        if args.out:
            fh.close()
        return 0
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    try:
        cfg = load_config(args.command, args.config, overrides)
    except (ConfigError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out or os.environ.get("POTTSKAC_OUT") or Path("runs") / args.command)
    if os.environ.get("POTTSKAC_OUT") and not args.out:
        out = out / args.command
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    outputs, ok, checks = COMMANDS[args.command](cfg, out)
    manifest(out, args.command, cfg, started, outputs + ["manifest.json"], "ok" if ok else "failed", checks)
    print(json.dumps({"command": args.command, "out": str(out), "status": "ok" if ok else "failed"}))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
