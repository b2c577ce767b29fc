"""Contours of the phase indicator, their weights by constrained enumeration,
and the contour expansion identity on small windows.

Grids: eta lives on l- cubes, Theta on l+ cubes. A contour is a maximal
*-connected component of {Theta = 0} with its frozen eta field.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from . import meanfield as mf
from .coarse import NO_PHASE, Accuracy, ScaleTriple, eta_labels, theta_grid
from .geometry import DisjointSet, Region
from .kernel import KacKernel
from .potts import BLOCK, BoundaryProfile, PottsSystem, check_cap, enumerate_blocks, one_hot


class ContourError(ValueError):
    pass


def _structure(d: int, connectivity: str):
    if connectivity == "star":
        return np.ones((3,) * d, dtype=bool)
    if connectivity == "nearest":
        return ndimage.generate_binary_structure(d, 1)
    raise ValueError(f"unknown connectivity {connectivity!r}")


@dataclass(frozen=True)
class Coarsening:
    """Scales plus accuracy: everything needed to turn spins into eta and Theta."""

    scales: ScaleTriple
    acc: Accuracy

    @cached_property
    def vectors(self) -> dict:
        return mf.minimizer_set(mf.MeanFieldParams(self.acc.Q, self.acc.beta)).vectors()

    @property
    def r(self) -> int:
        return self.scales.lp // self.scales.lm

    def eta(self, colors: np.ndarray, lead: int = 0) -> np.ndarray:
        """eta labels on the l- grid of a color grid (trailing axes)."""
        colors = np.asarray(colors)
        lm, Q = self.scales.lm, self.acc.Q
        shape = colors.shape[lead:]
        if any(n % lm for n in shape):
            raise ValueError(f"grid {shape} is not a union of l- cubes of side {lm}")
        new = list(colors.shape[:lead])
        for n in shape:
            new.extend([n // lm, lm])
        b = colors.reshape(new)
        inner = tuple(lead + 2 * k + 1 for k in range(len(shape)))
        n = lm ** len(shape)
        table = self._table(n)
        if table is None:
            counts = np.stack([np.sum(b == q, axis=inner) for q in range(Q)], axis=-1)
            return eta_labels(counts / n, self.vectors, self.acc.zeta)
        code = np.zeros(b.shape[:lead] + tuple(b.shape[k] for k in range(lead, b.ndim, 2)), dtype=np.int64)
        for q in range(Q):
            code += np.sum(b == q, axis=inner) * (n + 1) ** q
        return table[code]

    def _table(self, n: int):
        """eta label for every count vector, indexed by its base-(n+1) code; None if too large."""
        Q = self.acc.Q
        if (n + 1) ** Q > 2_000_000:
            return None
        cache = self.__dict__.setdefault("_tables", {})
        if n not in cache:
            grid = np.stack(np.meshgrid(*[np.arange(n + 1)] * Q, indexing="ij"), axis=-1).reshape(-1, Q)
            # row order of the meshgrid is big-endian; codes are little-endian
            code = grid @ ((n + 1) ** np.arange(Q))
            table = np.zeros(len(grid), dtype=np.int64)
            table[code] = eta_labels(grid / n, self.vectors, self.acc.zeta)
            cache[n] = table
        return cache[n]

    def theta(self, eta: np.ndarray, lead: int = 0, periodic: bool = False) -> np.ndarray:
        return theta_grid(eta, self.r, lead, periodic)


@dataclass
class Contour:
    """Support (l+ corners), frozen eta on the support, collar labels and interiors."""

    scales: ScaleTriple
    support: tuple
    eta: dict
    collar: dict
    exterior: frozenset
    interiors: tuple = ()
    interior_labels: tuple = ()
    label: int | None = None

    @property
    def d(self):
        return len(self.support[0])

    @property
    def N(self) -> int:
        return len(self.support)

    @property
    def volume(self) -> int:
        return self.N * self.scales.lp**self.d

    @property
    def key(self):
        return (self.support, tuple(sorted(self.eta.items())))

    def collar_sets(self) -> dict:
        """A^q: collar cubes grouped by their Theta label."""
        out = {}
        for c, q in self.collar.items():
            out.setdefault(q, set()).add(c)
        return out

    def interior(self, q: int) -> set:
        out = set()
        for comp, lab in zip(self.interiors, self.interior_labels):
            if lab == q:
                out |= set(comp)
        return out

    def record(self, weight=None) -> dict:
        rec = {"label": self.label, "N": self.N, "volume": self.volume,
               "collar_labels": sorted({int(v) for v in self.collar.values()})}
        if weight is not None:
            rec["weight"] = weight
        return rec


def extract_contours(theta: np.ndarray, eta: np.ndarray, scales: ScaleTriple, origin=None,
                     connectivity: str = "star", lenient: bool = False) -> list:
    """Contours of a Theta field on a window of l+ cubes.

    `eta` covers the same cubes as `theta`, optionally with one extra ring of
    l+ cubes (as produced by a non-periodic theta_grid). `origin` is the site
    of the corner of theta[0, ..., 0]. With lenient=True contours touching
    the window edge are returned unlabelled instead of raising.
    """
    theta = np.asarray(theta)
    eta = np.asarray(eta)
    d = theta.ndim
    lp, lm = scales.lp, scales.lm
    r = lp // lm
    origin = np.zeros(d, dtype=np.int64) if origin is None else np.asarray(origin, dtype=np.int64)
    offs = {(e // r - t) for e, t in zip(eta.shape, theta.shape)}
    if len(offs) != 1 or next(iter(offs)) not in (0, 2) or any(e % r for e in eta.shape):
        raise ValueError("eta grid must cover the Theta grid, with or without a one-cube ring")
    ring = next(iter(offs)) // 2 * r
    zero = theta == NO_PHASE
    edge = np.zeros_like(zero)
    for ax in range(d):
        sl = [slice(None)] * d
        sl[ax] = 0
        edge[tuple(sl)] = True
        sl[ax] = -1
        edge[tuple(sl)] = True
    labels, n = ndimage.label(zero, structure=_structure(d, connectivity))
    star = _structure(d, "star")
    out = []
    for k in range(1, n + 1):
        sp = labels == k
        touches = bool(np.any(sp & edge))
        if touches and not lenient:
            raise ContourError("contour touches the observation window")
        idx = np.argwhere(sp)
        corners = tuple(tuple(int(x) for x in origin + lp * i) for i in idx)
        frozen = {}
        for i in idx:
            for sub in itertools.product(range(r), repeat=d):
                e = tuple(int(a) for a in i * r + np.array(sub) + ring)
                frozen[tuple(int(x) for x in origin + lp * i + lm * np.array(sub))] = int(eta[e])
        collar_mask = ndimage.binary_dilation(sp, structure=star) & ~sp
        collar = {tuple(int(x) for x in origin + lp * i): int(theta[tuple(i)]) for i in np.argwhere(collar_mask)}
        if touches:
            out.append(Contour(scales, corners, frozen, collar, frozenset(), label=None))
            continue
        comp, m = ndimage.label(~sp)
        ext_ids = set(np.unique(comp[edge & ~sp])) - {0}
        exterior, interiors, int_labels = set(), [], []
        ext_labels = set()
        for i in np.argwhere(collar_mask):
            c = tuple(int(x) for x in origin + lp * i)
            if comp[tuple(i)] in ext_ids:
                exterior.add(c)
                ext_labels.add(int(theta[tuple(i)]))
        for j in range(1, m + 1):
            if j in ext_ids:
                continue
            cells = np.argwhere(comp == j)
            interiors.append(frozenset(tuple(int(x) for x in origin + lp * i) for i in cells))
            labs = {int(theta[tuple(i)]) for i in cells if collar_mask[tuple(i)]}
            int_labels.append(labs.pop() if len(labs) == 1 else None)
        label = ext_labels.pop() if len(ext_labels) == 1 else None
        out.append(Contour(scales, corners, frozen, collar, frozenset(exterior), tuple(interiors),
                           tuple(int_labels), label))
    return out


def periodic_components(theta: np.ndarray, connectivity: str = "star") -> list:
    """Sizes (in l+ cubes) of the components of {Theta = 0} on a torus."""
    zero = np.asarray(theta) == NO_PHASE
    d = zero.ndim
    labels, n = ndimage.label(zero, structure=_structure(d, connectivity))
    ds = DisjointSet(n + 1)
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)]
    if connectivity == "nearest":
        offsets = [o for o in offsets if sum(map(abs, o)) == 1]
    shape = np.array(zero.shape)
    for idx in np.argwhere(zero):
        for o in offsets:
            j = idx + o
            if np.all((j >= 0) & (j < shape)):
                continue
            j = tuple(j % shape)
            if zero[j]:
                ds.union(labels[tuple(idx)], labels[j])
    sizes = {}
    for idx in np.argwhere(zero):
        root = ds.find(labels[tuple(idx)])
        sizes[root] = sizes.get(root, 0) + 1
    return sorted(sizes.values(), reverse=True)


# Peierls constant ------------------------------------------------------------

def peierls_cf(d: int, Q: int, beta: float, form: str = "ratio") -> float:
    """c_f = (Q/beta - 1)/3^(d+1); form="difference" gives (Q - beta_c)/3^(d+1)."""
    if form == "ratio":
        if beta >= Q:
            raise ValueError(f"beta={beta} >= Q={Q} makes c_f nonpositive")
        return (Q / beta - 1.0) / 3 ** (d + 1)
    if form == "difference":
        return (Q - mf.beta_c(Q)) / 3 ** (d + 1)
    raise ValueError(f"unknown form {form!r}")


def peierls_constant(d: int, Q: int, beta: float, gamma: float, a: float, lm: int, form: str = "ratio") -> float:
    """K_gamma = c_f gamma^(2a) lm^d."""
    return peierls_cf(d, Q, beta, form) * gamma ** (2 * a) * lm**d


# Enumeration toys ------------------------------------------------------------

class ContourToy:
    """Box window of l+ cubes with a frozen frame and a set of free l+ cubes.

    Sites beyond the window feel the constant profile `outside`. The free
    cubes must sit at least two l+ cubes away from the window edge so that
    every contour has a complete collar.
    """

    def __init__(self, kernel: KacKernel, coarse: Coarsening, origin, ncubes, frozen: dict, free_cubes,
                 outside: BoundaryProfile, phase: int):
        self.kernel, self.coarse = kernel, coarse
        self.Q = coarse.acc.Q
        self.lp = coarse.scales.lp
        self.d = len(ncubes)
        self.origin = np.asarray(origin, dtype=np.int64)
        self.shape = tuple(int(n) * self.lp for n in ncubes)
        self.window = Region.box(self.origin, self.shape)
        self.free_cubes = sorted(tuple(int(x) for x in c) for c in free_cubes)
        self.phase = phase
        for c in self.free_cubes:
            rel = (np.asarray(c) - self.origin) // self.lp
            if np.any(rel < 2) or np.any(rel > np.asarray(ncubes) - 3):
                raise ValueError(f"free cube {c} is closer than two l+ cubes to the window edge")
        free = []
        for c in self.free_cubes:
            free.extend(itertools.product(*[range(a, a + self.lp) for a in c]))
        self.R = Region.from_sites(free)
        self.frozen = {tuple(int(x) for x in s): int(v) for s, v in frozen.items() if tuple(s) not in self.R}
        missing = [s for s in self.window if s not in self.R and s not in self.frozen]
        if missing:
            raise ValueError(f"frame leaves window sites unspecified, e.g. {missing[0]}")
        if kernel.reach > self.lp:
            raise ValueError("interaction range exceeds l+; contour families would not factorize")
        mapping = {s: one_hot(v, self.Q) for s, v in self.frozen.items()}
        self.bc = BoundaryProfile.custom(mapping, self.Q, default=outside.value)
        self.system = PottsSystem(self.R, self.bc, kernel, self.Q)
        base = np.zeros(self.shape, dtype=np.int64)
        for s, v in self.frozen.items():
            base[tuple(np.asarray(s) - self.origin)] = v
        self.base = base
        self.free_pos = tuple(np.array([np.asarray(s) - self.origin for s in self.R.sites]).T)

    @classmethod
    def segment(cls, kernel: KacKernel, coarse: Coarsening, free, frame_block, margin: int = 3,
                outside: BoundaryProfile | None = None, phase: int = mf.DISORDERED):
        """d = 1 window: free cube indices (in l+ units), frame filled with `frame_block` repeats."""
        lp = coarse.scales.lp
        free = sorted(free)
        lo, hi = free[0] - margin, free[-1] + margin + 1
        block = list(frame_block)
        if lp % len(block):
            raise ValueError("frame block must tile an l+ cube")
        frozen = {(x,): block[(x - lo * lp) % len(block)] for x in range(lo * lp, hi * lp)}
        outside = outside or BoundaryProfile.disordered(coarse.acc.Q)
        return cls(kernel, coarse, (lo * lp,), (hi - lo,), frozen, [(c * lp,) for c in free], outside, phase)

    @property
    def n_free(self) -> int:
        return len(self.R)

    def grids(self, batch: np.ndarray) -> np.ndarray:
        """Full window color grids for a batch of free-site configurations."""
        batch = np.asarray(batch)
        g = np.broadcast_to(self.base, (len(batch),) + self.shape).copy()
        g[(slice(None),) + self.free_pos] = batch
        return g

    @cached_property
    def _eta_plan(self):
        lm = self.coarse.scales.lm
        eta0 = self.coarse.eta(self.base)
        cells = {}
        for n, s in enumerate(self.R.sites):
            cells.setdefault(self._cube_index((np.asarray(s) // lm) * lm, lm), []).append(n)
        return eta0, [(k, np.array(v)) for k, v in sorted(cells.items())]

    def fields(self, batch):
        """(eta on the window, Theta on the window minus one ring) per configuration."""
        batch = np.asarray(batch)
        lm, Q = self.coarse.scales.lm, self.Q
        n = lm**self.d
        table = self.coarse._table(n)
        if table is None:
            eta = self.coarse.eta(self.grids(batch), lead=1)
        else:
            eta0, cells = self._eta_plan
            eta = np.broadcast_to(eta0, (len(batch),) + eta0.shape).copy()
            for k, pos in cells:
                if len(pos) != n:
                    raise ValueError("free region must be a union of l- cubes")
                sub = batch[:, pos]
                code = np.zeros(len(batch), dtype=np.int64)
                for q in range(Q):
                    code += np.sum(sub == q, axis=1) * (n + 1) ** q
                eta[(slice(None),) + k] = table[code]
        return eta, self.coarse.theta(eta, lead=1)

    @property
    def theta_origin(self):
        return self.origin + self.lp

    def contours_of(self, colors, connectivity="star") -> list:
        eta, theta = self.fields(np.asarray(colors)[None, :])
        return extract_contours(theta[0], eta[0], self.coarse.scales, self.theta_origin, connectivity)

    def _cube_index(self, corner, scale):
        return tuple(int(x) for x in (np.asarray(corner) - self.origin) // scale)

    def free_index(self, contour: Contour) -> np.ndarray:
        """Positions (in R order) of the free sites inside the contour's support."""
        sp = set(contour.support)
        lp = self.lp
        return np.array([n for n, s in enumerate(self.R.sites)
                         if tuple((x // lp) * lp for x in s) in sp], dtype=np.int64)


@dataclass
class WeightResult:
    weight: float
    log_weight: float
    n_numerator: int
    n_denominator: int
    diagnostic: str = ""


def _event_masks(toy: ContourToy, contour: Contour, batch):
    """Numerator and denominator masks for a batch of free configurations."""
    eta, theta = toy.fields(batch)
    lm, lp = toy.coarse.scales.lm, toy.lp
    num = np.ones(len(batch), dtype=bool)
    for c, lab in contour.eta.items():
        num &= eta[(slice(None),) + toy._cube_index(c, lm)] == lab
    p = contour.label
    den = np.ones(len(batch), dtype=bool)
    tor = np.asarray(toy.theta_origin)
    for c, lab in contour.collar.items():
        t = theta[(slice(None),) + tuple(int(x) for x in (np.asarray(c) - tor) // lp)]
        num &= t == lab
        den &= t == p
    for c in contour.support:
        den &= theta[(slice(None),) + tuple(int(x) for x in (np.asarray(c) - tor) // lp)] == p
    return num, den


def contour_weight(toy: ContourToy, contour: Contour, xi, beta: float, cap: int = 10**7) -> WeightResult:
    """Ratio of the constrained sums over the free sites of sp(contour), all other spins fixed by xi."""
    if contour.label is None:
        raise ContourError("contour without a single exterior label has no weight")
    xi = np.asarray(xi, dtype=np.int64)
    idx = toy.free_index(contour)
    check_cap(len(idx), toy.Q, cap)
    num_acc, den_acc = [], []
    n_num = n_den = 0
    for sub in enumerate_blocks(len(idx), toy.Q):
        batch = np.broadcast_to(xi, (len(sub), len(xi))).copy()
        batch[:, idx] = sub
        num, den = _event_masks(toy, contour, batch)
        logw = -beta * toy.system.energies(batch)
        num_acc.append(logw[num])
        den_acc.append(logw[den])
        n_num += int(num.sum())
        n_den += int(den.sum())
    if n_den == 0:
        raise ContourError("denominator event is empty: ill-posed instance")
    lden = logsumexp(np.concatenate(den_acc))
    if n_num == 0:
        return WeightResult(0.0, -math.inf, 0, n_den, "numerator event is empty")
    lw = float(logsumexp(np.concatenate(num_acc)) - lden)
    return WeightResult(math.exp(lw), lw, n_num, n_den)


def weight_oracle(toy: ContourToy, contour: Contour, xi, beta: float) -> float:
    """Direct loops over the free sites of sp, recomputing energy and labels from scratch."""
    xi = [int(c) for c in xi]
    k, Q, lm, lp = toy.kernel, toy.Q, toy.coarse.scales.lm, toy.lp
    d = toy.d
    sites = list(toy.R.sites)
    idx = list(toy.free_index(contour))
    vectors, zeta = toy.coarse.vectors, toy.coarse.acc.zeta

    def energy(colors):
        spin = dict(zip(sites, colors))
        e = 0.0
        for a, x in enumerate(sites):
            for b in range(a + 1, len(sites)):
                if colors[a] == colors[b]:
                    e -= k.at(np.subtract(x, sites[b]))
            for off in itertools.product(range(-k.reach, k.reach + 1), repeat=d):
                y = tuple(np.add(x, off))
                if y in spin:
                    continue
                j = k.at(off)
                if j:
                    e -= j * toy.bc.at(y)[colors[a]]
        return e

    def label(colors, corner):
        spin = dict(zip(sites, colors))
        cnt = np.zeros(Q)
        for s in itertools.product(*[range(a, a + lm) for a in corner]):
            cnt[spin[s] if s in spin else toy.frozen[s]] += 1
        v = cnt / lm**d
        for lab, m in vectors.items():
            if np.max(np.abs(v - m)) < zeta:
                return lab
        return NO_PHASE

    def theta(colors, corner):
        labs = set()
        for off in itertools.product((-1, 0, 1), repeat=d):
            base = np.add(corner, np.multiply(off, lp))
            for sub in itertools.product(range(0, lp, lm), repeat=d):
                labs.add(label(colors, tuple(int(x) for x in base + np.array(sub))))
        return labs.pop() if len(labs) == 1 else NO_PHASE

    num = den = 0.0
    for sub in itertools.product(range(Q), repeat=len(idx)):
        colors = list(xi)
        for i, c in zip(idx, sub):
            colors[i] = c
        w = math.exp(-beta * energy(colors))
        if (all(label(colors, c) == lab for c, lab in contour.eta.items())
                and all(theta(colors, c) == lab for c, lab in contour.collar.items())):
            num += w
        if all(theta(colors, c) == contour.label for c in list(contour.collar) + list(contour.support)):
            den += w
    return num / den


def compatible(a: Contour, b: Contour, rule: str = "separated") -> bool:
    """Supports disjoint and not *-adjacent ("separated"), or also disjoint collars ("disjoint-collars")."""
    sa, sb = set(a.support), set(b.support)
    if sa & sb:
        return False
    lp = a.scales.lp
    for c in sa:
        for off in itertools.product((-1, 0, 1), repeat=a.d):
            if tuple(x + lp * o for x, o in zip(c, off)) in sb:
                return False
    if rule == "separated":
        return True
    if rule == "disjoint-collars":
        return not (set(a.collar) & set(b.collar))
    raise ValueError(f"unknown compatibility rule {rule!r}")


@dataclass
class IdentityReport:
    log_lhs: float
    log_rhs: float
    residual: float
    n_configs: int
    n_correct: int
    contours: list = field(default_factory=list)
    families: int = 0

    def as_dict(self):
        return {"log_lhs": self.log_lhs, "log_rhs": self.log_rhs, "residual": self.residual,
                "n_configs": self.n_configs, "n_correct": self.n_correct,
                "n_contours": len(self.contours), "n_families": self.families}


def contour_identity_check(toy: ContourToy, beta: float, rule: str = "separated",
                           cap: int = 10**7) -> IdentityReport:
    """Z over the free sites directly and as a sum over compatible contour families.

    Every contour must have empty interior; the right side sums products of
    weights times exp(-beta H) over configurations without contours.
    """
    check_cap(toy.n_free, toy.Q, cap)
    lm = toy.coarse.scales.lm
    free_eta = sorted({tuple(int(x) for x in (np.asarray(s) // lm) * lm) for s in toy.R.sites})
    eta_pos = [toy._cube_index(c, lm) for c in free_eta]
    groups, correct_cfg, correct_logw = {}, [], []
    total = 0
    pattern_of = {}
    for batch in enumerate_blocks(toy.n_free, toy.Q, BLOCK):
        eta, _ = toy.fields(batch)
        pat = np.stack([eta[(slice(None),) + p] for p in eta_pos], axis=1)
        logw = -beta * toy.system.energies(batch)
        keys, inv = np.unique(pat, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        for n, key in enumerate(keys):
            sel = inv == n
            kb = key.tobytes()
            groups.setdefault(kb, []).append(logsumexp(logw[sel]))
            pattern_of[kb] = (key, batch[np.argmax(sel)])
        total += len(batch)
    log_lhs = float(logsumexp([logsumexp(v) for v in groups.values()]))
    realizable = {}
    correct_keys = set()
    for kb, (key, example) in pattern_of.items():
        found = toy.contours_of(example)
        if not found:
            correct_keys.add(kb)
        for c in found:
            if c.interiors:
                raise ContourError("instance outside identity-check scope")
            if c.label != toy.phase:
                raise ContourError(f"contour with exterior label {c.label} in a phase-{toy.phase} window")
            realizable[c.key] = c
    # configurations without contours
    for batch in enumerate_blocks(toy.n_free, toy.Q, BLOCK):
        eta, _ = toy.fields(batch)
        pat = np.stack([eta[(slice(None),) + p] for p in eta_pos], axis=1)
        ok = np.array([row.tobytes() in correct_keys for row in pat])
        if ok.any():
            correct_cfg.append(batch[ok])
            correct_logw.append(-beta * toy.system.energies(batch[ok]))
    xis = np.concatenate(correct_cfg) if correct_cfg else np.zeros((0, toy.n_free), dtype=np.int64)
    base_logw = np.concatenate(correct_logw) if correct_logw else np.zeros(0)
    contours = sorted(realizable.values(), key=lambda c: c.key)
    # log weights per contour and per correct configuration, cached on the spins outside sp
    logw_c = np.empty((len(contours), len(xis)))
    for n, c in enumerate(contours):
        idx = toy.free_index(c)
        keep = np.setdiff1d(np.arange(toy.n_free), idx)
        cache = {}
        for m, xi in enumerate(xis):
            kb = xi[keep].tobytes()
            if kb not in cache:
                cache[kb] = contour_weight(toy, c, xi, beta).log_weight
            logw_c[n, m] = cache[kb]
    families = [()]
    for n in range(len(contours)):
        families += [f + (n,) for f in families if all(compatible(contours[m], contours[n], rule) for m in f)]
    terms = []
    for f in families:
        lw = base_logw + (logw_c[list(f)].sum(axis=0) if f else 0.0)
        terms.append(logsumexp(lw) if len(lw) else -math.inf)
    log_rhs = float(logsumexp(terms))
    res = abs(math.expm1(log_rhs - log_lhs))
    return IdentityReport(log_lhs, log_rhs, res, total, len(xis), contours, len(families))


def synthetic_correct_config(shape, coarse: Coarsening, label: int, rng) -> np.ndarray:
    """Random color grid whose every l- block average is within zeta of the phase-`label` minimizer."""
    lm, Q = coarse.scales.lm, coarse.acc.Q
    target = coarse.vectors[label]
    d = len(shape)
    n = lm**d
    out = np.empty(shape, dtype=np.int64)
    for corner in itertools.product(*[range(0, s, lm) for s in shape]):
        while True:
            counts = rng.multinomial(n, target)
            if np.max(np.abs(counts / n - target)) < coarse.acc.zeta:
                break
        block = rng.permutation(np.repeat(np.arange(Q), counts)).reshape((lm,) * d)
        out[tuple(slice(c, c + lm) for c in corner)] = block
    return out
