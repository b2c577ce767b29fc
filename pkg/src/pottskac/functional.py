"""Coarse-grained free-energy functional, Lebowitz-Penrose check and relaxation dynamics.

Cube-pair couplings are exact per-site double sums of J_gamma over the two
cubes (diagonal i = j included, as in the double integral), divided by the
lattice normalization so that every site couples with total weight one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import meanfield as mf
from .coarse import CoarseProfile, cube_corners, round_to_lattice
from .geometry import Region
from .kernel import KacKernel
from .potts import BoundaryProfile, PottsSystem, check_cap, enumerate_blocks


def cube_coupling(k: KacKernel, disp, ell: int) -> float:
    """sum over i in C, j in C + disp of J_gamma(i, j), C a cube of side ell."""
    offs, vals = k.table
    D = np.asarray(disp, dtype=np.int64)
    overlap = np.prod(np.clip(ell - np.abs(offs - D[None, :]), 0, None), axis=1)
    return math.fsum(vals * overlap)


class FunctionalContext:
    """Region, boundary, kernel and scale for the coarse functional."""

    def __init__(self, kernel: KacKernel, beta: float, Q: int, region: Region, bc: BoundaryProfile,
                 ell: int, normalize: bool = True):
        if not 1 < ell < 1.0 / kernel.gamma:
            raise ValueError(f"scale ell={ell} must lie in (1, 1/gamma={1.0 / kernel.gamma})")
        if bc.is_periodic:
            raise ValueError("the functional needs a fixed boundary profile")
        self.kernel, self.beta, self.Q, self.region, self.bc, self.ell = kernel, float(beta), Q, region, bc, ell
        self.d = region.d
        self.vol = ell**self.d
        self.norm = kernel.lattice_normalization if normalize else 1.0
        sites = region.as_array()
        corners = cube_corners(sites, ell)
        uniq, counts = np.unique(corners, axis=0, return_counts=True)
        if np.any(counts != self.vol):
            raise ValueError(f"region is not a union of full cubes of side {ell}")
        self.corners = uniq
        inside = {tuple(c) for c in uniq}
        reach = kernel.reach
        lo = uniq.min(axis=0) - reach - ell
        hi = uniq.max(axis=0) + reach + ell
        cand = itertools.product(*[range((a // ell) * ell, b + 1, ell) for a, b in zip(lo, hi)])
        cache = {}

        def K(disp):
            key = tuple(int(x) for x in disp)
            if key not in cache:
                cache[key] = cube_coupling(kernel, key, ell) / self.norm
            return cache[key]

        collar = []
        for c in cand:
            if c in inside:
                continue
            if any(K(np.subtract(c, a)) > 0 for a in uniq):
                collar.append(c)
        self.collar = np.array(sorted(collar), dtype=np.int64).reshape(-1, self.d)
        n, m = len(uniq), len(self.collar)
        self.K_in = np.array([[K(b - a) for b in uniq] for a in uniq]).reshape(n, n)
        self.K_bd = np.array([[K(b - a) for b in self.collar] for a in uniq]).reshape(n, m)
        bvals = np.zeros((m, Q))
        for r, c in enumerate(self.collar):
            pts = itertools.product(*[range(a, a + ell) for a in c])
            bvals[r] = np.mean([bc.at(p) for p in pts], axis=0)
        self.s = bvals

    @property
    def n_cubes(self):
        return len(self.corners)

    def profile(self, values) -> CoarseProfile:
        return CoarseProfile(self.ell, self.corners.copy(), values)

    def constant(self, v) -> np.ndarray:
        return np.tile(np.asarray(v, dtype=float), (self.n_cubes, 1))

    def field(self, rho) -> np.ndarray:
        """Average coupling field per site of each cube: (K_in rho + K_bd s) / ell^d."""
        return (self.K_in @ rho + self.K_bd @ self.s) / self.vol


def _values(profile):
    return profile.values if isinstance(profile, CoarseProfile) else np.asarray(profile, dtype=float)


def energy_V(ctx: FunctionalContext, profile) -> float:
    rho = _values(profile)
    return float(-0.5 * np.sum(rho * (ctx.K_in @ rho)) - np.sum(rho * (ctx.K_bd @ ctx.s)))


def entropy_I(ctx: FunctionalContext, profile) -> float:
    rho = _values(profile)
    return float(-ctx.vol * np.sum(mf.xlogx(rho)))


def free_energy(ctx: FunctionalContext, profile) -> float:
    """F = V - I / beta."""
    return energy_V(ctx, profile) - entropy_I(ctx, profile) / ctx.beta


def free_energy_batch(ctx: FunctionalContext, rhos: np.ndarray) -> np.ndarray:
    """F for a stack of profiles of shape (n, cubes, Q)."""
    rhos = np.asarray(rhos, dtype=float)
    V = -0.5 * np.einsum("bcq,cd,bdq->b", rhos, ctx.K_in, rhos) - np.einsum("bcq,cq->b", rhos, ctx.K_bd @ ctx.s)
    I = -ctx.vol * mf.xlogx(rhos).sum(axis=(1, 2))
    return V - I / ctx.beta


@dataclass
class Excess:
    bulk: float
    interaction: float
    boundary: float
    boundary_self: float
    lattice_defect: float

    def recombine(self) -> float:
        return self.bulk + self.interaction + self.boundary - self.boundary_self - self.lattice_defect


def excess_decomposition(ctx: FunctionalContext, profile) -> Excess:
    """Split F into bulk phi, interaction and boundary penalties.

    F = bulk + interaction + boundary - boundary_self - lattice_defect,
    where lattice_defect vanishes when each cube's couplings sum to ell^d.
    """
    rho = _values(profile)
    bulk = ctx.vol * float(np.sum(mf.phi_mf_array(rho, ctx.beta)))
    diff = rho[:, None, :] - rho[None, :, :]
    inter = 0.25 * float(np.sum(ctx.K_in * np.sum(diff * diff, axis=2)))
    bd = rho[:, None, :] - ctx.s[None, :, :]
    bnd = 0.5 * float(np.sum(ctx.K_bd * np.sum(bd * bd, axis=2)))
    bself = 0.5 * float(np.sum(ctx.K_bd * np.sum(ctx.s * ctx.s, axis=1)[None, :]))
    rows = ctx.K_in.sum(axis=1) + ctx.K_bd.sum(axis=1)
    defect = 0.5 * float(np.sum(np.sum(rho * rho, axis=1) * (rows - ctx.vol)))
    return Excess(bulk, inter, bnd, bself, defect)


def phi_u(v, u: float, ref, beta: float) -> np.ndarray:
    """-u |v|^2 / 2 - (1 - u) v . ref + (1/beta) v . ln v (last axis)."""
    v = np.asarray(v, dtype=float)
    return -0.5 * u * np.sum(v * v, axis=-1) - (1 - u) * v @ np.asarray(ref) + np.sum(mf.xlogx(v), axis=-1) / beta


def phi_u_inf(u: float, ref, beta: float) -> float:
    """Infimum of phi_u over the simplex, from all damped fixed-point limits."""
    ref = np.asarray(ref, dtype=float)
    Q = len(ref)
    starts = [np.full(Q, 1.0 / Q), ref]
    for q in range(Q):
        e = np.full(Q, 0.02 / (Q - 1))
        e[q] = 0.98
        starts.append(e)
        starts.append(np.roll(ref, q))
    best = math.inf
    for v in starts:
        for _ in range(20000):
            w = mf.softmax(beta * (u * v + (1 - u) * ref))
            if np.max(np.abs(w - v)) < 1e-15:
                v = w
                break
            v = 0.5 * v + 0.5 * w
        best = min(best, float(phi_u(v, u, ref, beta)))
    return best


def phi_eff(ctx: FunctionalContext, profile, u: float, label: int) -> np.ndarray:
    """Per-cube phi_u(rho_c) - inf phi_u, nonnegative up to rounding."""
    ref = reference_vector(ctx.Q, ctx.beta, label)
    rho = _values(profile)
    return phi_u(rho, u, ref, ctx.beta) - phi_u_inf(u, ref, ctx.beta)


def reference_vector(Q: int, beta: float, label: int) -> np.ndarray:
    ms = mf.minimizer_set(mf.MeanFieldParams(Q, beta))
    return ms.vector(label)


def surface_correction(ctx: FunctionalContext, label: int) -> float:
    """(beta/2) sum_{x in region, y outside} J_gamma(x, y) |rho^label|^2, with the raw kernel."""
    ref = reference_vector(ctx.Q, ctx.beta, label)
    return 0.5 * ctx.beta * boundary_coupling(ctx.kernel, ctx.region) * float(ref @ ref)


def boundary_coupling(k: KacKernel, region: Region) -> float:
    """sum over x in region and y outside of J_gamma(x, y)."""
    sites = region.as_array()
    offs, vals = k.table
    keys = {tuple(s) for s in region.sites}
    tot = []
    for o, w in zip(offs, vals):
        tgt = sites + o
        out = sum(1 for t in map(tuple, tgt) if t not in keys)
        if out:
            tot.append(w * out)
    return math.fsum(tot)


# Lebowitz-Penrose check ------------------------------------------------------

def lp_epsilon(gamma: float, ell: int, d: int) -> float:
    return gamma * ell + math.log(ell) / ell**d


def lp_constant(k: KacKernel, Q: int, beta: float) -> float:
    return max(k.c_d, 2.0 * Q * k.d / beta)


def compositions(n: int, Q: int) -> np.ndarray:
    """All Q-part compositions of n, lexicographic."""
    rows = [c for c in itertools.product(range(n + 1), repeat=Q) if sum(c) == n]
    return np.array(rows, dtype=np.int64)


def log_multinomial(counts) -> np.ndarray:
    counts = np.asarray(counts)
    n = counts.sum(axis=-1)
    return gammaln(n + 1) - gammaln(counts + 1).sum(axis=-1)


def stirling_gap(counts) -> np.ndarray:
    """|ln multinomial - n H(counts / n)| per row."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum(axis=-1, keepdims=True)
    ent = -n[..., 0] * np.sum(mf.xlogx(counts / n), axis=-1)
    return np.abs(log_multinomial(counts) - ent)


@dataclass
class LPReport:
    n_configs: int
    n_classes: int
    classes_per_cube: int
    budget: float
    lhs_upper: float
    lhs_lower: float
    lhs_lower_rounded: float
    stirling_max: float
    stirling_bound: float
    stirling_cube_max: float
    stirling_cube_bound: float
    count_check: bool
    extras: dict = field(default_factory=dict)

    @property
    def upper_ok(self):
        return self.lhs_upper <= self.budget

    @property
    def lower_ok(self):
        return self.lhs_lower >= -self.budget and self.lhs_lower_rounded >= -self.budget

    @property
    def stirling_ok(self):
        return self.stirling_max <= self.stirling_bound and self.stirling_cube_max <= self.stirling_cube_bound

    @property
    def ok(self):
        return self.upper_ok and self.lower_ok and self.stirling_ok and self.count_check

    def as_dict(self):
        out = {k: getattr(self, k) for k in ("n_configs", "n_classes", "classes_per_cube", "budget",
                                             "lhs_upper", "lhs_lower", "lhs_lower_rounded", "stirling_max",
                                             "stirling_bound", "stirling_cube_max", "stirling_cube_bound",
                                             "count_check", "upper_ok", "lower_ok", "stirling_ok", "ok")}
        out.update(self.extras)
        return out


def class_table(ctx: FunctionalContext, cap: int = 10**7):
    """Enumerate configurations and group exp(-beta H) by coarse class.

    Returns (class count arrays (n_classes, cubes, Q), log Z per class,
    number of configurations per class, total configurations).
    """
    Q = ctx.Q
    system = PottsSystem(ctx.region, ctx.bc, ctx.kernel, Q)
    total = check_cap(system.N, Q, cap)
    sites = ctx.region.as_array()
    lookup = {tuple(c): n for n, c in enumerate(ctx.corners)}
    cube_idx = np.array([lookup[tuple(c)] for c in cube_corners(sites, ctx.ell)])
    comps = compositions(ctx.vol, Q)
    comp_code = {tuple(c): n for n, c in enumerate(comps)}
    radix = len(comps)
    # code of a cube composition from its counts: use a dense lookup over counts
    dense = np.full((ctx.vol + 1,) * Q, -1, dtype=np.int64)
    for c, n in comp_code.items():
        dense[c] = n
    codes_all, logw_all = [], []
    for batch in enumerate_blocks(system.N, Q):
        counts = np.zeros((len(batch), ctx.n_cubes, Q), dtype=np.int64)
        for s in range(system.N):
            counts[np.arange(len(batch)), cube_idx[s], batch[:, s]] += 1
        per_cube = dense[tuple(counts[:, :, q] for q in range(Q))]
        code = np.zeros(len(batch), dtype=np.int64)
        for c in range(ctx.n_cubes):
            code = code * radix + per_cube[:, c]
        codes_all.append(code)
        logw_all.append(-ctx.beta * system.energies(batch))
    codes = np.concatenate(codes_all)
    logw = np.concatenate(logw_all)
    uniq, inv, cnt = np.unique(codes, return_inverse=True, return_counts=True)
    order = np.argsort(inv, kind="stable")
    splits = np.cumsum(cnt)[:-1]
    logz = np.array([logsumexp(g) for g in np.split(logw[order], splits)])
    classes = np.zeros((len(uniq), ctx.n_cubes, Q), dtype=np.int64)
    rem = uniq.copy()
    for c in range(ctx.n_cubes - 1, -1, -1):
        classes[:, c, :] = comps[rem % radix]
        rem //= radix
    return classes, logz, cnt, total


def lp_verify(ctx: FunctionalContext, classes=None, n_random: int = 200, seed: int = 0) -> LPReport:
    """Both Lebowitz-Penrose inequalities and the class-count bound by enumeration.

    `classes` is an optional list of coarse classes (count arrays of shape
    (cubes, Q)); default is every class.
    """
    all_classes, logz, cnt, total = class_table(ctx)
    if classes is not None:
        want = {np.asarray(c, dtype=np.int64).tobytes() for c in classes}
        if not want:
            raise ValueError("empty class set")
        keep = np.array([c.tobytes() in want for c in all_classes])
        if not keep.any():
            raise ValueError("none of the requested classes occurs")
        sel_classes, sel_logz, sel_cnt = all_classes[keep], logz[keep], cnt[keep]
    else:
        sel_classes, sel_logz, sel_cnt = all_classes, logz, cnt
    rho = sel_classes / ctx.vol
    F = free_energy_batch(ctx, rho)
    budget = ctx.beta * lp_constant(ctx.kernel, ctx.Q, ctx.beta) * lp_epsilon(ctx.kernel.gamma, ctx.ell, ctx.d) \
        * len(ctx.region)
    upper = float(logsumexp(sel_logz) + ctx.beta * F.min())
    lower = float(np.min(sel_logz + ctx.beta * F))
    # rounded single-class version on random interior profiles
    rng = np.random.default_rng(seed)
    index = {c.tobytes(): n for n, c in enumerate(all_classes)}
    lower_r = math.inf
    for _ in range(n_random):
        r = rng.dirichlet(np.ones(ctx.Q), size=ctx.n_cubes)
        counts = np.rint(round_to_lattice(r, ctx.vol) * ctx.vol).astype(np.int64)
        n = index[counts.tobytes()]
        lower_r = min(lower_r, float(logz[n] + ctx.beta * free_energy(ctx, r)))
    # class counts
    lm = log_multinomial(sel_classes).sum(axis=1)
    I = -ctx.vol * mf.xlogx(rho).sum(axis=(1, 2))
    st_bound = ctx.d * ctx.Q * len(ctx.region) * math.log(ctx.ell) / ctx.vol
    comps = compositions(ctx.vol, ctx.Q)
    cube_bound = ctx.d * ctx.Q * math.log(ctx.ell)
    count_check = bool(np.allclose(np.log(sel_cnt), lm, rtol=0, atol=1e-9))
    return LPReport(
        n_configs=int(total), n_classes=len(sel_classes), classes_per_cube=len(comps), budget=budget,
        lhs_upper=upper, lhs_lower=lower, lhs_lower_rounded=lower_r,
        stirling_max=float(np.max(np.abs(lm - I))), stirling_bound=st_bound,
        stirling_cube_max=float(np.max(stirling_gap(comps))), stirling_cube_bound=cube_bound,
        count_check=count_check, extras={"beta": ctx.beta, "bc": ctx.bc.tag})


# Relaxation dynamics ---------------------------------------------------------

class DynamicsError(RuntimeError):
    pass


@dataclass
class DynamicsTrace:
    iters: list = field(default_factory=list)
    free_energy: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    step: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.iters, self.free_energy, self.residual))


def free_energy_u(ctx: FunctionalContext, rho, u: float, ref) -> float:
    """Interpolated functional whose stationary points solve rho = M(rho)."""
    rho = np.asarray(rho, dtype=float)
    inter = -0.5 * u * np.sum(rho * (ctx.K_in @ rho)) - u * np.sum(rho * (ctx.K_bd @ ctx.s))
    one_body = -(1 - u) * ctx.vol * np.sum(rho @ ref)
    return float(inter + one_body + ctx.vol * np.sum(mf.xlogx(rho)) / ctx.beta)


def relax_map(ctx: FunctionalContext, rho, u: float, ref) -> np.ndarray:
    """M_q(rho) = softmax(beta L_q), L = u (coupled field) + (1 - u) ref."""
    L = u * ctx.field(rho) + (1 - u) * np.asarray(ref)[None, :]
    return mf.softmax(ctx.beta * L)


def dissipation(ctx: FunctionalContext, rho, m) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.log(rho / m) * (m - rho)
    return float(ctx.vol * np.sum(t) / ctx.beta)


def dynamics_minimize(ctx: FunctionalContext, start, u: float, label: int, tol: float = 1e-10,
                      h: float = 0.5, max_iter: int = 100_000, ref=None):
    """Damped iteration rho <- (1 - h) rho + h M(rho) until |rho - M(rho)|_inf < tol."""
    if not 0 <= u <= 1:
        raise ValueError("u must lie in [0, 1]")
    ref = reference_vector(ctx.Q, ctx.beta, label) if ref is None else np.asarray(ref, dtype=float)
    rho = _values(start).copy()
    trace = DynamicsTrace()
    F = free_energy_u(ctx, rho, u, ref)
    for it in range(max_iter + 1):
        m = relax_map(ctx, rho, u, ref)
        res = float(np.max(np.abs(rho - m)))
        trace.iters.append(it)
        trace.free_energy.append(F)
        trace.residual.append(res)
        trace.step.append(h)
        if res < tol:
            return ctx.profile(rho), trace
        trace.dissipation.append(dissipation(ctx, rho, m))
        for _ in range(21):
            cand = (1 - h) * rho + h * m
            Fc = free_energy_u(ctx, cand, u, ref)
            if Fc <= F + 1e-12:
                break
            h *= 0.5
        else:
            raise DynamicsError("free energy increased for every trial step size")
        rho, F = cand, Fc
    raise DynamicsError(f"no convergence within {max_iter} iterations (residual {res:.3e})")


def one_body_minimizer(ref, beta: float) -> np.ndarray:
    """Minimizer of the u = 0 local functional: softmax(beta ref)."""
    return mf.softmax(beta * np.asarray(ref, dtype=float))


def floor_bound(Q: int, beta: float) -> float:
    return 1.0 / (Q * math.exp(beta))


def random_tube_profile(ctx: FunctionalContext, center, radius: float, rng) -> np.ndarray:
    """Random profile with every cube within sup-distance < radius of `center`."""
    center = np.asarray(center, dtype=float)
    out = np.empty((ctx.n_cubes, ctx.Q))
    for c in range(ctx.n_cubes):
        while True:
            w = rng.uniform(-radius, radius, ctx.Q)
            w -= w.mean()
            v = center + w
            if np.all(v > 0) and np.max(np.abs(w)) < radius:
                out[c] = v
                break
    return out
