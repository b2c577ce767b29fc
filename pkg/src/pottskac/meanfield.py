"""Mean-field Potts free energy on the simplex, its minimizers and thresholds.

Phase labels: -1 is the disordered (uniform) state, p in 1..Q the ordered
state whose dominant color is p (color index p - 1 in 0-based arrays).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DISORDERED = -1
BISECT_STEPS = 200


@dataclass(frozen=True)
class MeanFieldParams:
    Q: int
    beta: float
    off_theorem: bool = False

    def __post_init__(self):
        if self.Q < 2 or (self.Q == 2 and not self.off_theorem):
            raise ValueError(f"Q must be >= 3 (Q=2 needs off_theorem=True), got {self.Q}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def xlogx(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = v[pos] * np.log(v[pos])
    return out


def phi_mf(v, params: MeanFieldParams) -> float:
    """-1/2 sum v^2 + (1/beta) sum v ln v, with 0 ln 0 = 0."""
    v = np.asarray(v, dtype=float)
    return float(-0.5 * np.sum(v * v, axis=-1) + np.sum(xlogx(v), axis=-1) / params.beta)


def phi_mf_array(v, beta: float) -> np.ndarray:
    """Vectorized phi over the last axis."""
    v = np.asarray(v, dtype=float)
    return -0.5 * np.sum(v * v, axis=-1) + np.sum(xlogx(v), axis=-1) / beta


def grad_phi(v, params: MeanFieldParams, form: str = "true") -> np.ndarray:
    """Gradient of phi in R^Q.

    form="true" gives -v_q + (ln v_q + 1)/beta; form="shifted" adds 1 to every
    component, which is the printed variant and agrees on the simplex tangent.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 1e-12):
        raise ValueError("gradient requires a strictly interior point (all components >= 1e-12)")
    g = -v + (np.log(v) + 1.0) / params.beta
    if form == "shifted":
        return g + 1.0
    if form != "true":
        raise ValueError(f"unknown gradient form {form!r}")
    return g


def project_tangent(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return w - w.mean(axis=-1, keepdims=True)


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def g_map(v, params: MeanFieldParams) -> np.ndarray:
    """g_q(v) = exp(beta v_q) / sum_p exp(beta v_p)."""
    return softmax(params.beta * np.asarray(v, dtype=float))


def g_jacobian(v, params: MeanFieldParams) -> np.ndarray:
    """d g_q / d v_q' = beta g_q (delta_qq' - g_q')."""
    g = g_map(v, params)
    return params.beta * (np.diag(g) - np.outer(g, g))


def rho_b(rho_a, Q):
    return (1.0 - np.asarray(rho_a, dtype=float)) / (Q - 1)


def beta_tilde(rho_a, Q: int):
    """Inverse temperature at which (rho_A, rho_B, ..., rho_B) solves the mean-field equation."""
    a = np.asarray(rho_a, dtype=float)
    b = rho_b(a, Q)
    return np.log1p((a - b) / b) / (a - b)


def beta_tilde_prime(rho_a, Q: int):
    a = np.asarray(rho_a, dtype=float)
    b = rho_b(a, Q)
    bt = beta_tilde(a, Q)
    return (1.0 / (a * b) - bt * Q) / ((Q - 1) * (a - b))


def _bisect(f, lo, hi, steps=BISECT_STEPS):
    flo = f(lo)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fm = f(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rho_zero(Q: int) -> float:
    """Minimizer of beta_tilde on (1/Q, 1): zero of 1/(rho_A rho_B) - Q beta_tilde."""
    def bracket(a):
        return 1.0 / (a * rho_b(a, Q)) - Q * beta_tilde(a, Q)
    lo = 1.0 / Q + 1e-9
    hi = 1.0 - 1e-12
    if not (bracket(lo) < 0 < bracket(hi)):
        raise ArithmeticError("derivative bracket does not change sign")
    return _bisect(bracket, lo, hi)


def beta_c(Q: int) -> float:
    """2 (Q-1)/(Q-2) ln(Q-1)."""
    if Q < 3:
        raise ValueError(f"beta_c needs Q >= 3, got {Q}")
    return 2.0 * (Q - 1) / (Q - 2) * math.log(Q - 1)


def beta_thresholds(Q: int):
    """(beta_0, beta_c): existence threshold of ordered solutions and coexistence point."""
    if Q < 3:
        raise ValueError(f"thresholds need Q >= 3, got {Q}")
    r0 = rho_zero(Q)
    return float(beta_tilde(r0, Q)), beta_c(Q)


def ordered_solution(params: MeanFieldParams):
    """Stable ordered pair (rho_A, rho_B) or None when beta <= beta_0.

    Bisection on ln(rho_B) so that very large beta keeps full precision.
    """
    Q, beta = params.Q, params.beta
    if Q == 2:
        r0, b0 = 0.5, 2.0
    else:
        r0 = rho_zero(Q)
        b0 = float(beta_tilde(r0, Q))
    if beta <= b0:
        return None
    b_top = rho_b(r0, Q)

    def bt_from_log_b(t):
        b = math.exp(t)
        a = 1.0 - (Q - 1) * b
        return math.log1p((a - b) / b) / (a - b)

    lo, hi = math.log(1e-300), math.log(b_top)
    if bt_from_log_b(lo) <= beta:
        b = 1e-300
    else:
        t = _bisect(lambda t: bt_from_log_b(t) - beta, lo, hi)
        b = math.exp(t)
    return 1.0 - (Q - 1) * b, b


def ordered_vector(p: int, Q: int, rho_a: float, rho_b_: float) -> np.ndarray:
    v = np.full(Q, rho_b_)
    v[p - 1] = rho_a
    return v


def uniform(Q: int) -> np.ndarray:
    return np.full(Q, 1.0 / Q)


def delta_phi_and_slope(params: MeanFieldParams):
    """(phi_ord - phi_dis, d(beta * delta_phi)/d beta) along the ordered branch."""
    sol = ordered_solution(params)
    if sol is None:
        raise ValueError("no ordered branch at or below beta_0")
    Q, beta = params.Q, params.beta
    a, b = sol
    x = Q * Q * a * b
    dphi = (1.0 - x) / (2.0 * Q) + math.log(x) / (2.0 * beta)
    slope = -((1.0 - Q * a) ** 2) / (2.0 * Q * (Q - 1))
    return dphi, slope


def delta_phi_beta_slope(params: MeanFieldParams) -> float:
    """d(delta_phi)/d beta from the beta * delta_phi derivative."""
    dphi, slope = delta_phi_and_slope(params)
    return (slope - dphi) / params.beta


@dataclass
class MinimizerSet:
    Q: int
    beta: float
    kind: str
    disordered: np.ndarray | None
    ordered: tuple | None
    beta0: float | None
    beta_c: float | None
    global_labels: tuple = field(default_factory=tuple)

    @property
    def local_labels(self) -> tuple:
        labels = []
        if self.disordered is not None:
            labels.append(DISORDERED)
        if self.ordered is not None:
            labels.extend(range(1, self.Q + 1))
        return tuple(labels)

    def vector(self, label: int) -> np.ndarray:
        if label == DISORDERED:
            if self.disordered is None:
                raise KeyError("no disordered minimizer at this beta")
            return self.disordered.copy()
        if self.ordered is None:
            raise KeyError("no ordered minimizer at this beta")
        if not 1 <= label <= self.Q:
            raise KeyError(f"label {label} outside 1..{self.Q}")
        return ordered_vector(label, self.Q, *self.ordered)

    def vectors(self) -> dict:
        return {p: self.vector(p) for p in self.local_labels}

    def global_value(self) -> float:
        p = self.global_labels[0]
        return phi_mf(self.vector(p), MeanFieldParams(self.Q, self.beta, self.Q == 2))


def minimizer_set(params: MeanFieldParams, coexist_tol: float = 1e-12) -> MinimizerSet:
    """Local minimizers and the labels of the global ones."""
    Q, beta = params.Q, params.beta
    sol = ordered_solution(params)
    dis = uniform(Q) if beta < Q else None
    if Q == 2:
        kind = "ordered-only" if sol is not None else "disordered-only"
        labels = (1, 2) if sol is not None else (DISORDERED,)
        return MinimizerSet(Q, beta, kind, dis, sol, 2.0, None, labels)
    b0, bc = beta_thresholds(Q)
    if sol is None:
        kind = "disordered-only"
    elif dis is None:
        kind = "ordered-only"
    else:
        kind = "coexisting"
    ordered_labels = tuple(range(1, Q + 1))
    if sol is None:
        labels = (DISORDERED,)
    elif dis is None:
        labels = ordered_labels
    elif abs(beta - bc) <= coexist_tol:
        labels = (DISORDERED,) + ordered_labels
    elif beta < bc:
        labels = (DISORDERED,)
    else:
        labels = ordered_labels
    return MinimizerSet(Q, beta, kind, dis, sol, b0, bc, labels)


def critical_minimizers(Q: int) -> MinimizerSet:
    """Minimizers at the mean-field coexistence point."""
    return minimizer_set(MeanFieldParams(Q, beta_c(Q)))


def min_separation(ms: MinimizerSet) -> float:
    """Smallest sup-norm distance between distinct local minimizers."""
    vecs = list(ms.vectors().values())
    best = math.inf
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            best = min(best, float(np.max(np.abs(vecs[i] - vecs[j]))))
    return best


def contraction_radius(Q: int, beta: float) -> float:
    """Sup-norm radius 1/(4 beta^2 Q^2) of the contraction neighbourhood."""
    return 1.0 / (4.0 * beta * beta * Q * Q)


def simplex_grid(Q: int, step: float) -> np.ndarray:
    """All points of S_Q whose coordinates are multiples of `step` (Q = 3 or small Q)."""
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-12:
        raise ValueError("step must divide 1")
    if Q == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        i, j = i[keep], j[keep]
        pts = np.stack([i, j, n - i - j], axis=1)
        return pts / n
    from itertools import combinations
    rows = []
    for bars in combinations(range(n + Q - 1), Q - 1):
        prev, parts = -1, []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(n + Q - 2 - prev)
        rows.append(parts)
    return np.array(rows, dtype=float) / n


def gap_scan(Q: int, beta: float, zeta: float, step: float = 0.005):
    """min of phi - phi_min over grid points at sup-distance >= zeta from every minimizer.

    Returns (gap, kappa = gap / zeta^2).
    """
    params = MeanFieldParams(Q, beta)
    ms = minimizer_set(params)
    pts = simplex_grid(Q, step)
    vals = phi_mf_array(pts, beta)
    phi_min = ms.global_value()
    mask = np.ones(len(pts), dtype=bool)
    for v in ms.vectors().values():
        mask &= np.max(np.abs(pts - v), axis=1) >= zeta
    gap = float(np.min(vals[mask]) - phi_min)
    return gap, gap / zeta**2
