"""Potts-Kac configurations, Hamiltonian, exact enumeration and heat-bath sampling.

Colors are stored 0-based (0..Q-1) in integer arrays aligned with
`Region.sites`; color c corresponds to the ordered phase label c + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import Region
from .kernel import KacKernel

ENUMERATION_CAP = 10**7
BLOCK = 1 << 15


class CollarError(ValueError):
    pass


class EnumerationCapError(ValueError):
    pass


class EmptyEventError(ValueError):
    pass


def check_simplex(v, Q: int, tol: float = 1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (Q,):
        raise ValueError(f"simplex vector must have {Q} components, got shape {v.shape}")
    if np.any(v < -tol) or np.any(v > 1 + tol) or abs(v.sum() - 1.0) > tol:
        raise ValueError(f"not a point of the simplex: {v}")
    return v


def one_hot(colors, Q: int) -> np.ndarray:
    colors = np.asarray(colors)
    return np.eye(Q)[colors]


@dataclass
class SpinConfig:
    region: Region
    colors: np.ndarray
    Q: int

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.int64).reshape(-1)
        if len(self.colors) != len(self.region):
            raise ValueError("one color per site required")
        if np.any(self.colors < 0) or np.any(self.colors >= self.Q):
            raise ValueError(f"colors must lie in 0..{self.Q - 1}")

    @classmethod
    def constant(cls, region: Region, color: int, Q: int):
        return cls(region, np.full(len(region), color, dtype=np.int64), Q)

    def color_at(self, x) -> int:
        return int(self.colors[self.region.index(x)])

    def grid(self) -> np.ndarray:
        if not self.region.is_box:
            raise ValueError("grid view needs a box region")
        return self.colors.reshape(self.region.sides)

    def with_color(self, x, c: int) -> "SpinConfig":
        cols = self.colors.copy()
        cols[self.region.index(x)] = c
        return SpinConfig(self.region, cols, self.Q)

    def densities(self) -> np.ndarray:
        return np.bincount(self.colors, minlength=self.Q) / len(self.colors)


class BoundaryProfile:
    """Simplex-valued boundary condition outside a region.

    tag is one of "ordered", "disordered", "custom", "periodic". Constant
    profiles cover every site; custom profiles cover only their mapping.
    """

    def __init__(self, tag: str, Q: int, value=None, mapping=None, phase=None):
        if tag not in ("ordered", "disordered", "custom", "periodic"):
            raise ValueError(f"unknown boundary tag {tag!r}")
        self.tag = tag
        self.Q = Q
        self.phase = phase
        self.value = None if value is None else check_simplex(value, Q)
        self.mapping = None
        if mapping is not None:
            self.mapping = {tuple(int(c) for c in k): check_simplex(v, Q) for k, v in mapping.items()}

    @classmethod
    def ordered(cls, p: int, Q: int, beta: float | None = None, vector=None):
        """Constant ordered profile: the mean-field minimizer of phase p.

        Uses the minimizer at `beta` when the ordered branch exists there,
        otherwise the one at the coexistence point.
        """
        from . import meanfield as mf
        if vector is None:
            sol = None
            if beta is not None:
                sol = mf.ordered_solution(mf.MeanFieldParams(Q, beta, Q == 2))
            if sol is None:
                sol = mf.ordered_solution(mf.MeanFieldParams(Q, mf.beta_c(Q)))
            vector = mf.ordered_vector(p, Q, *sol)
        return cls("ordered", Q, value=vector, phase=p)

    @classmethod
    def pure(cls, color: int, Q: int):
        """Constant profile equal to a single color (0-based)."""
        return cls("ordered", Q, value=one_hot(color, Q), phase=color + 1)

    @classmethod
    def disordered(cls, Q: int):
        return cls("disordered", Q, value=np.full(Q, 1.0 / Q), phase=-1)

    @classmethod
    def custom(cls, mapping, Q: int, default=None):
        return cls("custom", Q, value=default, mapping=mapping)

    @classmethod
    def periodic(cls, Q: int):
        return cls("periodic", Q)

    @classmethod
    def from_config(cls, cfg: SpinConfig, default=None):
        """Custom profile given by the occupancy vectors of a configuration."""
        mapping = {s: one_hot(c, cfg.Q) for s, c in zip(cfg.region.sites, cfg.colors)}
        return cls("custom", cfg.Q, value=default, mapping=mapping)

    @property
    def is_periodic(self):
        return self.tag == "periodic"

    @property
    def metadata(self) -> dict:
        return {"tag": self.tag, "phase": self.phase, "fixed_boundary": self.tag != "periodic"}

    def at(self, x) -> np.ndarray:
        x = tuple(int(c) for c in x)
        if self.mapping is not None and x in self.mapping:
            return self.mapping[x]
        if self.value is not None:
            return self.value
        raise CollarError(f"boundary profile does not cover site {x}")

    def permuted(self, perm) -> "BoundaryProfile":
        """Apply a color permutation: new color perm[c] carries old color c."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)

        def tr(v):
            return None if v is None else np.asarray(v)[inv]
        mapping = None if self.mapping is None else {k: tr(v) for k, v in self.mapping.items()}
        out = BoundaryProfile(self.tag, self.Q, value=tr(self.value), mapping=mapping)
        out.phase = self.phase
        return out


def _site_keys(coords: np.ndarray, lo: np.ndarray, span: np.ndarray) -> np.ndarray:
    shifted = coords - lo
    key = np.zeros(len(coords), dtype=np.int64)
    for k in range(coords.shape[1]):
        key = key * span[k] + shifted[:, k]
    return key


class PottsSystem:
    """Precomputed couplings for a region, a boundary profile and a kernel.

    `field0[i, q]` is the boundary field sum_{j outside} J(i, j) s_{j,q};
    pairs (pi < pj, pw) list the couplings inside the region, and the CSR
    arrays give each site's neighbours within the region.
    """

    def __init__(self, region: Region, bc: BoundaryProfile, kernel: KacKernel, Q: int):
        if bc.Q != Q:
            raise ValueError("boundary profile has a different Q")
        if region.d != kernel.d:
            raise ValueError("region and kernel dimensions differ")
        self.region, self.bc, self.kernel, self.Q = region, bc, kernel, Q
        N = len(region)
        sites = region.as_array()
        offs, vals = kernel.table
        nz = np.any(offs != 0, axis=1)
        offs, vals = offs[nz], vals[nz]
        self.self_coupling = kernel.self_coupling
        field0 = np.zeros((N, Q))
        rows, cols, ws = [], [], []
        if bc.is_periodic:
            if not region.is_box:
                raise ValueError("periodic boundary requires a box region")
            origin = np.array(region.origin)
            sides = np.array(region.sides)
            strides = np.array([int(np.prod(sides[k + 1:])) for k in range(region.d)], dtype=np.int64)
            for o, w in zip(offs, vals):
                tgt = (sites - origin + o) % sides
                j = tgt @ strides
                i = np.arange(N)
                keep = j != i
                rows.append(i[keep]); cols.append(j[keep]); ws.append(np.full(keep.sum(), w))
        else:
            lo = sites.min(axis=0) - kernel.reach
            span = sites.max(axis=0) + kernel.reach - lo + 1
            keys = _site_keys(sites, lo, span)
            order = np.argsort(keys)
            skeys = keys[order]
            outside = {}
            for o, w in zip(offs, vals):
                tgt = sites + o
                tk = _site_keys(tgt, lo, span)
                pos = np.searchsorted(skeys, tk)
                pos_c = np.minimum(pos, N - 1)
                inside = skeys[pos_c] == tk
                i = np.arange(N)
                rows.append(i[inside]); cols.append(order[pos_c[inside]]); ws.append(np.full(inside.sum(), w))
                if bc.mapping is None and bc.value is not None:
                    field0[~inside] += w * bc.value
                    continue
                for n in np.nonzero(~inside)[0]:
                    y = tuple(int(c) for c in tgt[n])
                    s = outside.get(y)
                    if s is None:
                        s = bc.at(y)
                        outside[y] = s
                    field0[n] += w * s
            self.outside_sites = sorted(outside)
        rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        ws = np.concatenate(ws) if ws else np.zeros(0)
        # merge duplicate (i, j) entries created by periodic images
        key = rows * N + cols
        uniq, inv = np.unique(key, return_inverse=True)
        wsum = np.zeros(len(uniq))
        np.add.at(wsum, inv, ws)
        rows, cols = uniq // N, uniq % N
        self.indptr = np.searchsorted(rows, np.arange(N + 1)).astype(np.int64)
        self.indices = cols.astype(np.int64)
        self.weights = wsum
        upper = rows < cols
        self.pi, self.pj, self.pw = rows[upper], cols[upper], wsum[upper]
        self.field0 = field0

    @property
    def N(self):
        return len(self.region)

    def energy(self, colors) -> float:
        """H for one configuration, summed with math.fsum."""
        c = np.asarray(colors, dtype=np.int64)
        pair = self.pw[c[self.pi] == c[self.pj]]
        bnd = self.field0[np.arange(self.N), c]
        return -math.fsum(np.concatenate([pair, bnd]))

    def energies(self, batch) -> np.ndarray:
        """H for a batch of configurations of shape (n, N)."""
        batch = np.asarray(batch)
        eq = batch[:, self.pi] == batch[:, self.pj]
        e = eq @ self.pw
        e += self.field0[np.arange(self.N)[None, :], batch].sum(axis=1)
        return -e

    def local_field(self, colors, i: int) -> np.ndarray:
        """sum_{j != i} J(i, j) xi_j (inside) plus the boundary field at i."""
        c = np.asarray(colors, dtype=np.int64)
        f = self.field0[i].copy()
        a, b = self.indptr[i], self.indptr[i + 1]
        np.add.at(f, c[self.indices[a:b]], self.weights[a:b])
        return f

    def all_fields(self, colors) -> np.ndarray:
        c = np.asarray(colors, dtype=np.int64)
        f = self.field0.copy()
        rows = np.repeat(np.arange(self.N), np.diff(self.indptr))
        np.add.at(f, (rows, c[self.indices]), self.weights)
        return f


def hamiltonian(cfg: SpinConfig, bc: BoundaryProfile, k: KacKernel) -> float:
    return PottsSystem(cfg.region, bc, k, cfg.Q).energy(cfg.colors)


def enumerate_blocks(N: int, Q: int, block: int = BLOCK):
    """Yield all Q^N configurations in lexicographic order as (n, N) int arrays."""
    total = Q**N
    powers = Q ** np.arange(N - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, block):
        idx = np.arange(start, min(total, start + block), dtype=np.int64)
        yield (idx[:, None] // powers[None, :]) % Q


class LogSumExp:
    """Running log-sum-exp with max shift."""

    def __init__(self):
        self.m = -math.inf
        self.s = 0.0
        self.count = 0

    def add(self, x):
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return
        self.count += x.size
        m = float(x.max())
        if m > self.m:
            self.s = self.s * math.exp(self.m - m) if self.s else 0.0
            self.m = m
        self.s += float(np.sum(np.exp(x - self.m)))

    @property
    def value(self) -> float:
        return self.m + math.log(self.s) if self.s > 0 else -math.inf


def check_cap(N: int, Q: int, cap: int = ENUMERATION_CAP):
    need = Q**N
    if need > cap:
        raise EnumerationCapError(f"enumeration needs {need} configurations, cap is {cap}")
    return need


def exact_partition(region: Region, bc: BoundaryProfile, k: KacKernel, beta: float, Q: int | None = None,
                    constraint=None, cap: int = ENUMERATION_CAP, system: PottsSystem | None = None) -> float:
    """log of the sum of exp(-beta H) over configurations accepted by `constraint`.

    `constraint` receives a batch of color arrays (n, |region|) and returns
    a boolean mask.
    """
    Q = bc.Q if Q is None else Q
    system = system or PottsSystem(region, bc, k, Q)
    check_cap(system.N, Q, cap)
    acc = LogSumExp()
    for batch in enumerate_blocks(system.N, Q):
        if constraint is not None:
            mask = np.asarray(constraint(batch), dtype=bool)
            batch = batch[mask]
            if len(batch) == 0:
                continue
        acc.add(-beta * system.energies(batch))
    if acc.count == 0:
        raise EmptyEventError("constraint rejects every configuration")
    return acc.value


def site_conditional(cfg: SpinConfig, i, bc: BoundaryProfile, k: KacKernel, beta: float,
                     system: PottsSystem | None = None) -> np.ndarray:
    """Law of the color at site i given the rest of cfg and the boundary."""
    system = system or PottsSystem(cfg.region, bc, k, cfg.Q)
    n = i if isinstance(i, (int, np.integer)) else cfg.region.index(i)
    f = beta * system.local_field(cfg.colors, int(n))
    e = np.exp(f - f.max())
    return e / e.sum()


@numba.njit(cache=True, nogil=True)
def _heat_bath(colors, fields, indptr, indices, weights, beta, Q, uniforms, energy, comp,
               energies_out, counts_out, counts):
    n_sweeps, N = uniforms.shape
    p = np.empty(Q)
    for s in range(n_sweeps):
        for i in range(N):
            m = fields[i, 0]
            for q in range(1, Q):
                if fields[i, q] > m:
                    m = fields[i, q]
            tot = 0.0
            for q in range(Q):
                p[q] = math.exp(beta * (fields[i, q] - m))
                tot += p[q]
            r = uniforms[s, i] * tot
            new = Q - 1
            acc = 0.0
            for q in range(Q):
                acc += p[q]
                if r < acc:
                    new = q
                    break
            old = colors[i]
            if new != old:
                de = -(fields[i, new] - fields[i, old])
                y = de - comp
                t = energy + y
                comp = (t - energy) - y
                energy = t
                for n in range(indptr[i], indptr[i + 1]):
                    j = indices[n]
                    fields[j, old] -= weights[n]
                    fields[j, new] += weights[n]
                colors[i] = new
                counts[old] -= 1
                counts[new] += 1
        energies_out[s] = energy
        for q in range(Q):
            counts_out[s, q] = counts[q]
    return energy, comp


@dataclass
class Trajectory:
    seed: int
    beta: float
    sweeps: np.ndarray
    energy: np.ndarray
    densities: np.ndarray
    final: SpinConfig
    snapshots: list = field(default_factory=list)

    def records(self):
        for s, e, d in zip(self.sweeps, self.energy, self.densities):
            yield {"sweep": int(s), "energy": float(e), "densities": [float(v) for v in d]}


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def heat_bath_run(initial: SpinConfig, bc: BoundaryProfile, k: KacKernel, beta: float, sweeps: int,
                  seed: int, snapshot_every: int | None = None, system: PottsSystem | None = None,
                  chunk: int = 256) -> Trajectory:
    """Raster-order heat-bath sweeps; records energy and color densities after each sweep."""
    system = system or PottsSystem(initial.region, bc, k, initial.Q)
    Q, N = initial.Q, system.N
    colors = initial.colors.copy()
    fields = system.all_fields(colors)
    energy = system.energy(colors)
    comp = 0.0
    counts = np.bincount(colors, minlength=Q).astype(np.int64)
    rng = philox(seed)
    e_out = np.empty(sweeps)
    c_out = np.empty((sweeps, Q), dtype=np.int64)
    snaps = []
    done = 0
    while done < sweeps:
        n = min(chunk, sweeps - done)
        if snapshot_every:
            n = min(n, snapshot_every - done % snapshot_every)
        u = rng.random((n, N))
        energy, comp = _heat_bath(colors, fields, system.indptr, system.indices, system.weights, float(beta), Q,
                                  u, energy, comp, e_out[done:done + n], c_out[done:done + n], counts)
        done += n
        if snapshot_every and done % snapshot_every == 0:
            snaps.append((done, colors.copy()))
    return Trajectory(seed=int(seed), beta=float(beta), sweeps=np.arange(1, sweeps + 1), energy=e_out,
                      densities=c_out / N, final=SpinConfig(initial.region, colors, Q), snapshots=snaps)
