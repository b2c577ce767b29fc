"""Desk-scale Monte Carlo experiments: hysteresis branches, a pseudo-critical
beta from phase competition, and contour censuses of sampled states."""

from __future__ import annotations

import itertools
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import meanfield as mf
from .coarse import NO_PHASE, Accuracy, ScaleTriple
from .contour import Coarsening, _structure
from .geometry import DisjointSet, Region
from .kernel import KacKernel
from .potts import BoundaryProfile, PottsSystem, SpinConfig, heat_bath_run, philox

BRANCHES = ("ordered", "disordered", "mixed")


def n_threads() -> int:
    return max(1, int(os.environ.get("POTTSKAC_THREADS", os.cpu_count() or 1)))


def chain_seed(seed: int, *keys) -> int:
    """Independent 64-bit seed per (experiment seed, keys)."""
    return int(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(1, np.uint64)[0])


def lattice(L: int, d: int) -> Region:
    return Region.box((0,) * d, (L,) * d)


def branch_start(region: Region, Q: int, beta: float, branch: str, seed: int):
    """Initial state and boundary profile for one hysteresis branch."""
    rng = philox(seed)
    if branch == "ordered":
        return SpinConfig.constant(region, 0, Q), BoundaryProfile.ordered(1, Q, beta)
    if branch == "disordered":
        return SpinConfig(region, rng.integers(0, Q, len(region)), Q), BoundaryProfile.disordered(Q)
    if branch == "mixed":
        colors = rng.integers(0, Q, len(region))
        left = region.as_array()[:, 0] < region.sides[0] // 2
        colors[left] = 0
        return SpinConfig(region, colors, Q), BoundaryProfile.periodic(Q)
    raise ValueError(f"unknown branch {branch!r}")


def run_branch(L: int, d: int, Q: int, gamma: float, beta: float, sweeps: int, seed: int, branch: str,
               snapshot_every: int | None = None):
    region = lattice(L, d)
    k = KacKernel(gamma, d)
    init, bc = branch_start(region, Q, beta, branch, seed)
    return heat_bath_run(init, bc, k, beta, sweeps, seed, snapshot_every=snapshot_every)


def summarize(traj, N: int) -> dict:
    """Time averages over the second half of the run."""
    half = len(traj.energy) // 2
    dens = traj.densities[half:]
    return {"rho_max": float(dens.max(axis=1).mean()), "rho_first": float(dens[:, 0].mean()),
            "energy": float(traj.energy[half:].mean() / N)}


def _map(fn, jobs, threads=None):
    threads = threads or n_threads()
    if threads == 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))


def hysteresis_scan(L: int, d: int, Q: int, gamma: float, betas, sweeps: int, seed: int, threads=None) -> list:
    """Ordered-start / ordered-boundary and random-start / disordered-boundary branches per beta."""
    N = L**d
    jobs = []
    for n, beta in enumerate(betas):
        for b, branch in enumerate(("ordered", "disordered")):
            jobs.append((L, d, Q, gamma, float(beta), sweeps, chain_seed(seed, n, b), branch))
    trajs = _map(run_branch, jobs, threads)
    rows = []
    for job, tr in zip(jobs, trajs):
        beta, branch = job[4], job[7]
        sol = mf.ordered_solution(mf.MeanFieldParams(Q, beta))
        row = {"beta": beta, "branch": branch, "seed": job[6], **summarize(tr, N),
               "rho_A_mf": sol[0] if sol else float("nan")}
        rows.append(row)
    return rows


def branch_gaps(rows) -> dict:
    """beta -> ordered minus disordered branch max-color density."""
    by = {}
    for r in rows:
        by.setdefault(r["beta"], {})[r["branch"]] = r["rho_max"]
    return {b: v["ordered"] - v["disordered"] for b, v in sorted(by.items()) if len(v) == 2}


# Pseudo-critical beta --------------------------------------------------------

@dataclass
class Competition:
    beta: float
    W: float
    threshold: float
    mixed: np.ndarray = field(repr=False)


def coexistence_threshold(Q: int) -> float:
    """Max-color density halfway between the two coexisting mean-field phases."""
    a, _ = mf.ordered_solution(mf.MeanFieldParams(Q, mf.beta_c(Q)))
    return 0.5 * (1.0 / Q + a)


def competition(L: int, d: int, Q: int, gamma: float, beta: float, sweeps: int, seed: int):
    """Fraction of mixed-start samples on the ordered side, minus 1/2.

    The mixed start is half ordered, half random on a torus; the observable is
    the max-color density over the second half of the run, compared with the
    coexistence threshold. Energies would not do: boundary terms differ between
    the periodic mixed chain and the fixed-boundary branches.
    """
    mix = run_branch(L, d, Q, gamma, beta, sweeps, chain_seed(seed, BRANCHES.index("mixed")), "mixed")
    rm = mix.densities[sweeps // 2:].max(axis=1)
    th = coexistence_threshold(Q)
    return Competition(beta, float(np.mean(rm > th) - 0.5), th, rm)


def _boot_positive(comp: Competition, rng, n_boot: int, blocks: int = 20) -> float:
    x = (comp.mixed > comp.threshold).astype(float)
    parts = np.array_split(x, blocks)
    means = np.array([p.mean() for p in parts])
    idx = rng.integers(0, blocks, (n_boot, blocks))
    return float(np.mean(means[idx].mean(axis=1) > 0.5))


class NoCrossing(RuntimeError):
    pass


@dataclass
class PseudoCritical:
    estimate: float
    window: tuple
    history: list
    gamma: float
    L: int
    seed: int

    def as_dict(self):
        return {"estimate": self.estimate, "window": list(self.window), "gamma": self.gamma, "L": self.L,
                "seed": self.seed, "deviation": self.estimate - mf.beta_c(3) if self.history else None,
                "history": [{"beta": c.beta, "W": c.W, "threshold": c.threshold}
                            for c in self.history]}


def pseudo_beta_c(L: int, d: int, Q: int, gamma: float, seed: int, sweeps: int = 10_000, lo: float | None = None,
                  hi: float | None = None, steps: int = 6, n_boot: int = 400) -> PseudoCritical:
    """Bisection on the sign of the phase-competition statistic W(beta)."""
    bc = mf.beta_c(Q)
    lo = bc - 0.5 if lo is None else lo
    hi = bc + 0.7 if hi is None else hi
    hist = []

    def W(beta, n):
        c = competition(L, d, Q, gamma, beta, sweeps, chain_seed(seed, n))
        hist.append(c)
        return c.W

    wl, wh = W(lo, 0), W(hi, 1)
    if not (wl < 0 < wh):
        raise NoCrossing(f"no sign change of W on [{lo}, {hi}]: W(lo)={wl}, W(hi)={wh}")
    for n in range(steps):
        mid = 0.5 * (lo + hi)
        if W(mid, n + 2) > 0:
            hi = mid
        else:
            lo = mid
    rng = philox(chain_seed(seed, 99))
    probs = sorted((c.beta, _boot_positive(c, rng, n_boot)) for c in hist)
    below = [b for b, p in probs if p <= 0.05]
    above = [b for b, p in probs if p >= 0.95]
    wlo = max(below) if below else lo
    whi = min(above) if above else hi
    return PseudoCritical(0.5 * (lo + hi), (min(wlo, lo), max(whi, hi)), hist, gamma, L, seed)


# Contour census --------------------------------------------------------------

def periodic_label(mask: np.ndarray, connectivity: str = "star"):
    """Connected-component labels on a torus (0 = background)."""
    d = mask.ndim
    labels, n = ndimage.label(mask, structure=_structure(d, connectivity))
    ds = DisjointSet(n + 1)
    offs = [o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)]
    if connectivity == "nearest":
        offs = [o for o in offs if sum(map(abs, o)) == 1]
    shape = np.array(mask.shape)
    for idx in np.argwhere(mask):
        for o in offs:
            j = idx + o
            if np.all((j >= 0) & (j < shape)):
                continue
            j = tuple(j % shape)
            if mask[j]:
                ds.union(int(labels[tuple(idx)]), int(labels[j]))
    roots = {}
    out = np.zeros_like(labels)
    for idx in np.argwhere(mask):
        r = ds.find(int(labels[tuple(idx)]))
        out[tuple(idx)] = roots.setdefault(r, len(roots) + 1)
    return out, len(roots)


@dataclass
class Census:
    histogram: dict
    zero_fraction: float
    n_snapshots: int
    n_contours: int

    def as_dict(self):
        return {"histogram": {str(k): {str(n): c for n, c in sorted(v.items())} for k, v in self.histogram.items()},
                "zero_fraction": self.zero_fraction, "n_snapshots": self.n_snapshots,
                "n_contours": self.n_contours}


def census_of_grids(grids, coarse: Coarsening, connectivity: str = "star") -> Census:
    """Contour sizes by exterior label over periodic color grids."""
    hist = {}
    zero = 0.0
    count = 0
    star = _structure(np.ndim(grids[0]), "star")
    for g in grids:
        eta = coarse.eta(g)
        theta = coarse.theta(eta, periodic=True)
        mask = theta == NO_PHASE
        zero += float(mask.mean())
        lab, n = periodic_label(mask, connectivity)
        for k in range(1, n + 1):
            sp = lab == k
            ring = _periodic_dilate(sp, star) & ~sp
            labs = set(np.unique(theta[ring]).tolist()) - {NO_PHASE}
            key = labs.pop() if len(labs) == 1 else "mixed"
            hist.setdefault(key, Counter())[int(sp.sum())] += 1
            count += 1
    return Census({k: dict(v) for k, v in hist.items()}, zero / max(len(grids), 1), len(grids), count)


def _periodic_dilate(mask: np.ndarray, structure: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask)
    for off in np.argwhere(structure) - 1:
        out |= np.roll(mask, tuple(off), axis=tuple(range(mask.ndim)))
    return out


def contour_census(traj, L: int, d: int, coarse: Coarsening, connectivity: str = "star") -> Census:
    """Census over the second-half snapshots of a trajectory (or its final state when none were kept)."""
    if coarse.scales.lp and L % coarse.scales.lp:
        raise ValueError("l+ must divide L")
    half = len(traj.energy) // 2
    states = [c for s, c in traj.snapshots if s > half] or [traj.final.colors]
    grids = [np.asarray(c).reshape((L,) * d) for c in states]
    return census_of_grids(grids, coarse, connectivity)


def effective_beta(k: KacKernel, beta: float) -> float:
    """beta times the coupling a site actually feels (self-pair excluded)."""
    return beta * (k.lattice_normalization - k.self_coupling)


def census_coarsening(k: KacKernel, beta: float, scales, Q: int = 3, zeta: float = 0.26) -> Coarsening:
    """Coarsening for censuses at inverse temperature beta.

    Labels come from the mean-field minimizers at the effective beta; zeta is
    capped at 0.95 of half their separation so the labels stay well defined.
    """
    kb = effective_beta(k, beta)
    ms = mf.minimizer_set(mf.MeanFieldParams(Q, kb))
    if len(ms.local_labels) > 1:
        zeta = min(zeta, 0.475 * mf.min_separation(ms))
    return Coarsening(ScaleTriple.manual(*scales), Accuracy.manual(zeta, Q, kb))
