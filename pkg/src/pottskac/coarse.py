"""Scales, block averages, rounding to lattice simplices and the phase indicators eta, Theta."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import meanfield as mf
from .geometry import Region
from .potts import SpinConfig

NO_PHASE = 0


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ScaleTriple:
    l0: int
    lm: int
    lp: int
    provenance: str = "manual"
    gamma: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if min(self.l0, self.lm, self.lp) < 1:
            raise ValueError("scales must be positive integers")
        if self.lm % self.l0 or self.lp % self.lm:
            raise ValueError(f"scales must divide each other: {self.l0} | {self.lm} | {self.lp}")
        if self.provenance == "theory":
            if not all(_is_pow2(s) for s in (self.l0, self.lm, self.lp)):
                raise ValueError("theory-mode scales are powers of two")
            if not self.l0 < self.lm < self.lp:
                raise ValueError("theory-mode scales must be strictly increasing")
        elif not self.l0 <= self.lm <= self.lp:
            raise ValueError("scales must be nondecreasing")

    @classmethod
    def manual(cls, l0: int, lm: int, lp: int):
        return cls(int(l0), int(lm), int(lp), "manual")

    @property
    def ratio(self) -> int:
        return self.lp // self.lm

    def as_dict(self):
        return {"l0": self.l0, "lm": self.lm, "lp": self.lp, "provenance": self.provenance}


def _floor_log(x: float) -> int:
    # guard against 4.9999999 from floating log2
    return int(math.floor(x + 1e-9))


def check_exponents(alpha: float, d: int, a: float | None = None):
    if not alpha < 1.0 / (16 * d):
        raise ValueError(f"alpha < 1/(16d) violated: alpha={alpha}, 1/(16d)={1.0 / (16 * d)}")
    if a is not None:
        if not a < min(0.25, alpha / 2):
            raise ValueError(f"a < min(1/4, alpha/2) violated: a={a}")
        if not -d * (1 - alpha) + 2 * a < -2 * d * alpha:
            raise ValueError("-d(1-alpha) + 2a < -2 d alpha violated")


def scales_from_gamma(gamma: float, alpha: float, d: int, a: float | None = None) -> ScaleTriple:
    """l0 = 2^floor(log2(1/gamma)/2), l-+ = 2^floor((1 -+ alpha) log2(1/gamma))."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    check_exponents(alpha, d, a)
    lg = math.log2(1.0 / gamma)
    l0 = 2 ** _floor_log(0.5 * lg)
    lm = 2 ** _floor_log((1 - alpha) * lg)
    lp = 2 ** _floor_log((1 + alpha) * lg)
    return ScaleTriple(l0, lm, lp, "theory", gamma, alpha)


@dataclass(frozen=True)
class Accuracy:
    """Accuracy radius zeta for the phase indicator at a working beta."""

    zeta: float
    Q: int
    beta: float
    provenance: str = "manual"

    def __post_init__(self):
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        ms = mf.minimizer_set(mf.MeanFieldParams(self.Q, self.beta))
        half = 0.5 * mf.min_separation(ms) if len(ms.local_labels) > 1 else math.inf
        if not self.zeta < half:
            raise ValueError(f"zeta={self.zeta} is not below half the minimizer separation {half}")

    @classmethod
    def manual(cls, zeta: float, Q: int, beta: float | None = None):
        return cls(float(zeta), Q, mf.beta_c(Q) if beta is None else beta)

    @classmethod
    def from_theory(cls, gamma: float, a: float, Q: int, beta: float | None = None):
        return cls(gamma**a, Q, mf.beta_c(Q) if beta is None else beta, "theory")


@dataclass
class CoarseProfile:
    """Piecewise-constant simplex field: one value per cube of side `scale`."""

    scale: int
    corners: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.corners) != len(self.values):
            raise ValueError("one value per cube required")

    @property
    def d(self):
        return self.corners.shape[1]

    @property
    def Q(self):
        return self.values.shape[1]

    def as_dict(self) -> dict:
        return {tuple(int(c) for c in k): v for k, v in zip(self.corners, self.values)}

    def is_discrete(self, tol: float = 1e-9) -> bool:
        n = self.scale**self.d
        x = self.values * n
        return bool(np.all(np.abs(x - np.round(x)) < tol))

    def region(self) -> Region:
        sites = []
        for c in self.corners:
            sites.extend(itertools.product(*[range(a, a + self.scale) for a in c]))
        return Region.from_sites(sites)

    def with_values(self, values) -> "CoarseProfile":
        return CoarseProfile(self.scale, self.corners.copy(), np.asarray(values, dtype=float))


def cube_corners(sites: np.ndarray, ell: int) -> np.ndarray:
    return (np.asarray(sites) // ell) * ell


def empirical_average(cfg: SpinConfig, ell: int) -> CoarseProfile:
    """Per-cube color frequencies; the region must be a union of full cubes."""
    sites = cfg.region.as_array()
    corners = cube_corners(sites, ell)
    uniq, inv = np.unique(corners, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    counts = np.zeros((len(uniq), cfg.Q))
    np.add.at(counts, (inv, cfg.colors), 1.0)
    n = ell ** cfg.region.d
    if np.any(counts.sum(axis=1) != n):
        raise ValueError(f"region is not a union of full cubes of side {ell}")
    return CoarseProfile(ell, uniq, counts / n)


def round_to_lattice(values, n: int) -> np.ndarray:
    """Largest-remainder rounding of simplex vectors to multiples of 1/n."""
    v = np.atleast_2d(np.asarray(values, dtype=float))
    x = v * n
    base = np.floor(x)
    deficit = (n - base.sum(axis=1)).astype(np.int64)
    frac = x - base
    order = np.argsort(-frac, axis=1, kind="stable")
    out = base.copy()
    for r in range(len(v)):
        out[r, order[r, :deficit[r]]] += 1
    out /= n
    return out.reshape(np.shape(values))


def round_profile(profile: CoarseProfile) -> CoarseProfile:
    n = profile.scale**profile.d
    return profile.with_values(round_to_lattice(profile.values, n))


def eta_labels(values, vectors: dict, zeta: float) -> np.ndarray:
    """Label of the minimizer within sup-distance < zeta of each value, else 0."""
    v = np.asarray(values, dtype=float)
    out = np.zeros(v.shape[:-1], dtype=np.int64)
    for label, m in vectors.items():
        hit = np.max(np.abs(v - m), axis=-1) < zeta
        out[hit] = label
    return out


def phase_indicator_eta(profile: CoarseProfile, minimizers: mf.MinimizerSet, acc: Accuracy) -> dict:
    labels = eta_labels(profile.values, minimizers.vectors(), acc.zeta)
    return {tuple(int(c) for c in k): int(l) for k, l in zip(profile.corners, labels)}


def _shift_view(a: np.ndarray, offset, lead: int):
    """Interior slice of `a` (trailing axes) displaced by offset in {-1,0,1}^d."""
    sl = [slice(None)] * lead
    for o, n in zip(offset, a.shape[lead:]):
        sl.append(slice(1 + o, n - 1 + o))
    return a[tuple(sl)]


def block_uniform(eta: np.ndarray, r: int, lead: int = 0) -> np.ndarray:
    """Common label of each r^d block of eta, or 0 when labels differ."""
    shape = eta.shape
    d = len(shape) - lead
    new = list(shape[:lead])
    for n in shape[lead:]:
        if n % r:
            raise ValueError("eta grid is not a union of full coarse cubes")
        new.extend([n // r, r])
    b = eta.reshape(new)
    inner = tuple(lead + 2 * k + 1 for k in range(d))
    first = b[(slice(None),) * lead + tuple(x for k in range(d) for x in (slice(None), slice(0, 1)))]
    same = np.all(b == first, axis=inner)
    lab = np.squeeze(first, axis=inner)
    return np.where(same, lab, NO_PHASE)


def theta_grid(eta: np.ndarray, r: int, lead: int = 0, periodic: bool = False) -> np.ndarray:
    """Theta on the coarse grid.

    eta holds labels on the fine grid (trailing axes); r = l+/l-. Without
    periodic wrap the outer ring of coarse cubes serves as collar and the
    result has two fewer cubes per axis.
    """
    u = block_uniform(eta, r, lead)
    d = u.ndim - lead
    if periodic:
        pad = [(0, 0)] * lead + [(1, 1)] * d
        u = np.pad(u, pad, mode="wrap")
    if any(n < 3 for n in u.shape[lead:]):
        raise ValueError("eta field lacks a one-cube collar around the target cubes")
    centre = _shift_view(u, (0,) * d, lead)
    ok = centre != NO_PHASE
    for off in itertools.product((-1, 0, 1), repeat=d):
        if any(off):
            ok &= _shift_view(u, off, lead) == centre
    return np.where(ok, centre, NO_PHASE)


def phase_indicator_theta(eta: dict, scales: ScaleTriple, targets=None) -> dict:
    """Theta on l+ cubes from an eta mapping on l- cubes.

    Theta(C) = p iff eta = p on every l- cube of C and of its *-adjacent
    l+ cubes. Without `targets`, every l+ cube whose neighbourhood is
    covered gets a label.
    """
    lm, lp = scales.lm, scales.lp
    if not eta:
        raise ValueError("empty eta field")
    d = len(next(iter(eta)))
    sub = list(itertools.product(range(0, lp, lm), repeat=d))
    blocks = {}
    for c in eta:
        big = tuple((x // lp) * lp for x in c)
        blocks.setdefault(big, []).append(c)
    uniform = {}
    for big in blocks:
        labs = []
        for s in sub:
            key = tuple(a + b for a, b in zip(big, s))
            labs.append(eta.get(key))
        if any(l is None for l in labs):
            uniform[big] = None
        else:
            uniform[big] = labs[0] if all(l == labs[0] for l in labs) else NO_PHASE
    nbrs = list(itertools.product((-1, 0, 1), repeat=d))
    out = {}
    explicit = targets is not None
    targets = sorted(blocks) if targets is None else [tuple(t) for t in targets]
    for c in targets:
        labs = [uniform.get(tuple(a + lp * o for a, o in zip(c, off))) for off in nbrs]
        if any(l is None for l in labs):
            if explicit:
                raise ValueError(f"eta field lacks the collar around l+ cube {c}")
            continue
        out[c] = labs[0] if labs[0] != NO_PHASE and all(l == labs[0] for l in labs) else NO_PHASE
    if not out:
        raise ValueError("no l+ cube has a complete collar")
    return out
