"""Single-site Vaserstein distances, good sets and Dobrushin influence coefficients
for the u-interpolated one-site conditional measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from . import meanfield as mf
from .coarse import CoarseProfile
from .contour import Coarsening
from .geometry import Region, sup_dist
from .kernel import KacKernel
from .potts import BoundaryProfile, PottsSystem, enumerate_blocks


def vaserstein_site(m1, m2) -> float:
    """Optimal-coupling distance for the discrete metric: half the L1 distance."""
    return 0.5 * float(np.sum(np.abs(np.asarray(m1, dtype=float) - np.asarray(m2, dtype=float))))


def greedy_coupling(m1, m2) -> np.ndarray:
    """Coupling with maximal mass min(m1, m2) on the diagonal, residuals coupled independently."""
    m1, m2 = np.asarray(m1, dtype=float), np.asarray(m2, dtype=float)
    diag = np.minimum(m1, m2)
    r1, r2 = m1 - diag, m2 - diag
    P = np.diag(diag)
    s = r1.sum()
    if s > 0:
        P += np.outer(r1, r2) / s
    return P


def coupling_cost(P) -> float:
    P = np.asarray(P)
    return float(P.sum() - np.trace(P))


def lp_coupling_distance(m1, m2) -> float:
    """min over couplings of P(X != Y) by linear programming."""
    m1, m2 = np.asarray(m1, dtype=float), np.asarray(m2, dtype=float)
    Q = len(m1)
    cost = (1.0 - np.eye(Q)).ravel()
    A = np.zeros((2 * Q, Q * Q))
    for q in range(Q):
        A[q, q * Q:(q + 1) * Q] = 1.0
        A[Q + q, q::Q] = 1.0
    res = optimize.linprog(cost, A_eq=A, b_eq=np.concatenate([m1, m2]), bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(res.message)
    return float(res.fun)


# Interpolated single-site field ---------------------------------------------

@dataclass
class InterpolatedField:
    """k_i^u(xi) = u sum_j J(i, j) e_{xi_j} + (1 - u) rho^p on the kernel range of i."""

    kernel: KacKernel
    beta: float
    Q: int
    u: float
    label: int
    ref: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0 <= self.u <= 1:
            raise ValueError("u must lie in [0, 1]")
        if self.ref is None:
            self.ref = mf.minimizer_set(mf.MeanFieldParams(self.Q, self.beta)).vector(self.label)

    def field(self, region: Region, colors, i: int) -> np.ndarray:
        x = np.asarray(region.sites[i])
        k = np.zeros(self.Q)
        sites = region.as_array()
        J = self.kernel.values(sites - x[None, :])
        J[i] = 0.0
        np.add.at(k, np.asarray(colors), J)
        return self.u * k + (1 - self.u) * self.ref

    def conditional(self, region: Region, colors, i: int) -> np.ndarray:
        return mf.softmax(self.beta * self.field(region, colors, i))


def interpolated_conditional_from_energy(system: PottsSystem, colors, i: int, beta: float, u: float, ref):
    """Same law from Hamiltonian differences of the Q recolorings of site i."""
    batch = np.repeat(np.asarray(colors, dtype=np.int64)[None, :], system.Q, axis=0)
    batch[:, i] = np.arange(system.Q)
    E = system.energies(batch)
    return mf.softmax(-beta * u * (E - E.min()) + beta * (1 - u) * np.asarray(ref))


# Good sets -------------------------------------------------------------------

def block_labels(region: Region, colors, coarse: Coarsening) -> np.ndarray:
    """eta labels of the l- cubes of a box region."""
    if not region.is_box:
        raise ValueError("good-set logic needs a box window")
    grid = np.asarray(colors).reshape(region.sides)
    return coarse.eta(grid)


def in_phase(region: Region, colors, coarse: Coarsening, label: int) -> bool:
    return bool(np.all(block_labels(region, colors, coarse) == label))


def good_set_membership(region: Region, colors, i: int, coarse: Coarsening, label: int) -> bool:
    """xi in G_i: every recoloring of site i stays in the phase-`label` set."""
    colors = np.asarray(colors, dtype=np.int64)
    if not in_phase(region, colors, coarse, label):
        raise ValueError("configuration is not in the phase set")
    for q in range(coarse.acc.Q):
        c = colors.copy()
        c[i] = q
        if not in_phase(region, c, coarse, label):
            return False
    return True


# Influence matrix ------------------------------------------------------------

def cube_count_distance(x, y, d: int, lp: int) -> int:
    """N_ij = max(3^d, ceil(dist(x, y) / l+))."""
    return max(3**d, math.ceil(sup_dist(x, y) / lp))


@dataclass
class DobrushinReport:
    gamma: float
    u: float
    tail_included: bool
    sup_row_sum: float
    sup_row_sum_cube: float
    full_range_kac: float

    @property
    def contracts(self) -> bool:
        return self.sup_row_sum_cube < 1.0

    def as_dict(self):
        return {"gamma": self.gamma, "u": self.u, "tail_included": self.tail_included,
                "sup_row_sum": self.sup_row_sum, "sup_row_sum_cube": self.sup_row_sum_cube,
                "full_range_kac": self.full_range_kac, "contracts": self.contracts}


def coefficient(k: KacKernel, Q: int, u: float, x, y, K: float = 0.0, lp: int = 1, tail: bool = False) -> float:
    if tuple(x) == tuple(y):
        return 0.0
    t = 3**k.d * math.exp(-0.5 * K * cube_count_distance(x, y, k.d, lp)) if tail else 0.0
    return (1.0 - 1.0 / (2 * Q)) * (u * k.at(np.subtract(x, y)) + t)


def dobrushin_matrix(k: KacKernel, Q: int, u: float, region: Region, lm: int, lp: int = 1, K: float = 0.0,
                     tail: bool = False):
    """b(i, j) on a region with row-sum report.

    sup_row_sum is over j in the region, sup_row_sum_cube over j in the
    l- cube of i, full_range_kac the closed-form Kac row sum over Z^d.
    """
    sites = region.as_array()
    n = len(sites)
    rows, cols, vals = [], [], []
    offs, jv = k.table
    for a in range(n):
        if tail:
            js = range(n)
        else:
            tgt = sites[a] + offs
            js = [region.index(t) for t in map(tuple, tgt) if t in region]
        for b in js:
            v = coefficient(k, Q, u, sites[a], sites[b], K, lp, tail)
            if v:
                rows.append(a)
                cols.append(b)
                vals.append(v)
    B = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    row = np.asarray(B.sum(axis=1)).ravel()
    cube = (sites // lm)
    same = np.zeros(n)
    for a, b, v in zip(rows, cols, vals):
        if np.all(cube[a] == cube[b]):
            same[a] += v
    closed = (1.0 - 1.0 / (2 * Q)) * u * (k.lattice_normalization - k.self_coupling)
    rep = DobrushinReport(k.gamma, u, tail, float(row.max()) if n else 0.0, float(same.max()) if n else 0.0, closed)
    return B, rep


def kac_row_sum(k: KacKernel, Q: int, u: float) -> float:
    """(1 - 1/(2Q)) u (sum_j J(0, j) - J(0, 0)) by direct summation."""
    offs, vals = k.table
    keep = np.any(offs != 0, axis=1)
    return (1.0 - 1.0 / (2 * Q)) * u * math.fsum(vals[keep])


# Contraction check -----------------------------------------------------------

def contraction_check(region: Region, i: int, c1, c2, fld: InterpolatedField, coarse: Coarsening,
                      lp: int = 1, K: float = 0.0, tail: bool = False):
    """(lhs, rhs) for two good configurations differing at one site j != i."""
    c1, c2 = np.asarray(c1, dtype=np.int64), np.asarray(c2, dtype=np.int64)
    diff = np.flatnonzero(c1 != c2)
    for c in (c1, c2):
        if not good_set_membership(region, c, i, coarse, fld.label):
            raise ValueError("configuration is not in the good set of the site")
    if len(diff) == 0:
        return 0.0, 0.0
    if len(diff) > 1 or diff[0] == i:
        raise ValueError("configurations must differ at exactly one site other than i")
    j = int(diff[0])
    lhs = vaserstein_site(fld.conditional(region, c1, i), fld.conditional(region, c2, i))
    rhs = coefficient(fld.kernel, fld.Q, fld.u, region.sites[i], region.sites[j], K, lp, tail)
    return lhs, rhs


@dataclass
class ScanReport:
    u: float
    label: int
    n_phase: int
    n_good: int
    n_pairs: int
    violations: int
    max_ratio: float
    max_excess: float
    identity_error: float
    worst: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.violations == 0

    def as_dict(self):
        return {"u": self.u, "label": self.label, "n_phase": self.n_phase, "n_good": self.n_good,
                "n_pairs": self.n_pairs, "violations": self.violations, "max_ratio": self.max_ratio,
                "max_excess": self.max_excess, "identity_error": self.identity_error, "ok": self.ok,
                "worst": self.worst}


def exhaustive_scan(region: Region, i: int, fld: InterpolatedField, coarse: Coarsening, lp: int = 1,
                    K: float = 0.0, tail: bool = False) -> ScanReport:
    """Every pair of good configurations differing at one site j != i.

    lhs is computed from the closed-form field and cross-checked against the
    law obtained from Hamiltonian differences (identity_error).
    """
    Q = fld.Q
    n = len(region)
    sites = region.as_array()
    J = fld.kernel.values(sites - sites[i][None, :])
    J[i] = 0.0
    phase = []
    for batch in enumerate_blocks(n, Q):
        lab = coarse.eta(batch.reshape((len(batch),) + tuple(region.sides)), lead=1)
        phase.append(batch[np.all(lab.reshape(len(batch), -1) == fld.label, axis=1)])
    phase = np.concatenate(phase)
    keys = {row.tobytes() for row in phase}

    def member(c):
        return c.tobytes() in keys

    good = []
    for c in phase:
        ok = True
        for q in range(Q):
            e = c.copy()
            e[i] = q
            ok &= member(e)
        if ok:
            good.append(c)
    good_keys = {c.tobytes() for c in good}
    onehot = np.eye(Q)
    system = PottsSystem(region, BoundaryProfile.disordered(Q), fld.kernel, Q)
    b = np.array([coefficient(fld.kernel, Q, fld.u, sites[i], sites[j], K, lp, tail) for j in range(n)])
    pairs = violations = 0
    max_ratio = max_excess = ident = 0.0
    worst = {}
    for c in good:
        k1 = fld.u * (J @ onehot[c]) + (1 - fld.u) * fld.ref
        g1 = mf.softmax(fld.beta * k1)
        for j in range(n):
            if j == i:
                continue
            for q in range(Q):
                if q == c[j]:
                    continue
                c2 = c.copy()
                c2[j] = q
                if c2.tobytes() not in good_keys or c2.tobytes() < c.tobytes():
                    continue
                k2 = k1 + fld.u * J[j] * (onehot[q] - onehot[c[j]])
                g2 = mf.softmax(fld.beta * k2)
                lhs = vaserstein_site(g1, g2)
                h1 = interpolated_conditional_from_energy(system, c, i, fld.beta, fld.u, fld.ref)
                h2 = interpolated_conditional_from_energy(system, c2, i, fld.beta, fld.u, fld.ref)
                ident = max(ident, abs(lhs - vaserstein_site(h1, h2)))
                pairs += 1
                if lhs > b[j]:
                    violations += 1
                if b[j] > 0:
                    r = lhs / b[j]
                    if r > max_ratio:
                        max_ratio = r
                        worst = {"config": c.tolist(), "site": j, "color": q, "lhs": lhs, "rhs": float(b[j])}
                max_excess = max(max_excess, lhs - b[j])
    return ScanReport(fld.u, fld.label, len(phase), len(good), pairs, violations, max_ratio, max_excess, ident, worst)


def linearized_ratio(Q: int, beta: float, label: int) -> float:
    """Small-J limit of lhs / (u J) for the worst single recoloring at the minimizer field.

    Compare with 1 - 1/(2Q): at the coexistence point this exceeds it.
    """
    ref = mf.minimizer_set(mf.MeanFieldParams(Q, beta)).vector(label)
    g = mf.softmax(beta * ref)
    best = 0.0
    for a in range(Q):
        for c in range(Q):
            if a == c:
                continue
            e = np.zeros(Q)
            e[a], e[c] = 1.0, -1.0
            dg = beta * (g * e - g * (g @ e))
            best = max(best, 0.5 * float(np.sum(np.abs(dg))))
    return best
