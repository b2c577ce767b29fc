"""Kac interaction J_gamma(x, y) = gamma^d * Jbase(gamma (x - y)) on Z^d."""

from __future__ import annotations

import itertools
import math
from functools import cached_property

import numpy as np
from scipy import integrate, special


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1} in R^d."""
    return 2.0 * math.pi ** (d / 2) / special.gamma(d / 2)


def quartic_constant(d: int) -> float:
    """C_d with C_d * integral of (1-|r|^2)^2 over the unit ball equal to 1."""
    radial = 1.0 / d - 2.0 / (d + 2) + 1.0 / (d + 4)
    return 1.0 / (sphere_area(d) * radial)


class KacKernel:
    """Scaled interaction with a radial base density supported in the unit ball.

    `profile` is an optional radial function f(r) on [0, 1]; it is normalized
    numerically. The default is the quartic bump (1 - r^2)^2.
    """

    def __init__(self, gamma: float, d: int, profile=None):
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
        if d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {d}")
        self.gamma = float(gamma)
        self.d = int(d)
        self._profile = profile
        if profile is None:
            self.C = quartic_constant(d)
        else:
            mass, _ = integrate.quad(lambda r: profile(r) * r ** (d - 1), 0.0, 1.0,
                                     epsabs=1e-14, epsrel=1e-13)
            self.C = 1.0 / (sphere_area(d) * mass)

    def __repr__(self):
        return f"KacKernel(gamma={self.gamma!r}, d={self.d})"

    def base(self, r):
        """Base density at Euclidean radius r (scalar or array)."""
        r = np.asarray(r, dtype=float)
        if self._profile is None:
            val = self.C * (1.0 - r * r) ** 2
        else:
            val = self.C * np.vectorize(self._profile)(np.clip(r, 0.0, 1.0))
        return np.where(r < 1.0, val, 0.0)

    @cached_property
    def sup_norm(self) -> float:
        if self._profile is None:
            return self.C
        r = np.linspace(0.0, 1.0, 20001)
        return float(np.max(self.base(r)))

    @cached_property
    def grad_norm(self) -> float:
        """Sup of |grad Jbase|; analytic C_d * 8 / (3 sqrt 3) for the quartic bump."""
        if self._profile is None:
            return self.C * 8.0 / (3.0 * math.sqrt(3.0))
        r = np.linspace(0.0, 1.0, 200001)
        return float(np.max(np.abs(np.gradient(self.base(r), r))))

    @property
    def c_d(self) -> float:
        """Lebowitz-Penrose constant 2 * 3^d * sqrt(d) * |grad Jbase|_inf."""
        return 2.0 * 3**self.d * math.sqrt(self.d) * self.grad_norm

    @property
    def reach(self) -> int:
        """Largest coordinate offset that can carry a nonzero coupling."""
        return int(math.ceil(1.0 / self.gamma)) - 1

    @cached_property
    def table(self):
        """(offsets, values) for every displacement with J > 0, lexicographic order."""
        R = self.reach
        offs = np.array(list(itertools.product(range(-R, R + 1), repeat=self.d)),
                        dtype=np.int64).reshape(-1, self.d)
        vals = self.values(offs)
        keep = vals > 0.0
        offs, vals = offs[keep], vals[keep]
        offs.setflags(write=False)
        vals.setflags(write=False)
        return offs, vals

    @cached_property
    def _lookup(self):
        offs, vals = self.table
        return {tuple(int(c) for c in o): float(v) for o, v in zip(offs, vals)}

    def values(self, disp) -> np.ndarray:
        """J_gamma at an array of displacement vectors (n, d)."""
        disp = np.asarray(disp, dtype=float).reshape(-1, self.d)
        r = self.gamma * np.sqrt(np.sum(disp * disp, axis=1))
        return self.gamma**self.d * self.base(r)

    def at(self, disp) -> float:
        return self._lookup.get(tuple(int(c) for c in disp), 0.0)

    @cached_property
    def lattice_normalization(self) -> float:
        return math.fsum(self.table[1])

    @property
    def self_coupling(self) -> float:
        return self.gamma**self.d * float(self.base(0.0))


def evaluate(k: KacKernel, x, y) -> float:
    return k.at(tuple(int(a) - int(b) for a, b in zip(x, y)))


def lattice_normalization(k: KacKernel) -> float:
    """Sum over j in Z^d of J_gamma(0, j)."""
    return k.lattice_normalization


def coarse_kernel(k: KacKernel, x, cube, ell: int) -> float:
    """Average of J_gamma(x, y) over the sites y of the ell-cube with corner `cube`."""
    if ell > 1.0 / k.gamma:
        raise ValueError(f"cube scale {ell} exceeds the interaction range 1/gamma = {1.0 / k.gamma}")
    grid = np.array(list(itertools.product(*[range(c, c + ell) for c in cube])), dtype=np.int64)
    disp = np.asarray(x, dtype=np.int64)[None, :] - grid
    return float(np.mean(k.values(disp)))


def coarse_error_bound(k: KacKernel, ell: int) -> float:
    """sqrt(d) |grad Jbase|_inf gamma^(d+1) ell."""
    return math.sqrt(k.d) * k.grad_norm * k.gamma ** (k.d + 1) * ell
