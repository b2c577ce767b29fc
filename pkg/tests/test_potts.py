import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from pottskac.geometry import Region
from pottskac.kernel import KacKernel, evaluate
from pottskac.potts import (BoundaryProfile, CollarError, EmptyEventError, EnumerationCapError, PottsSystem,
                            SpinConfig, exact_partition, hamiltonian, heat_bath_run, site_conditional)


def naive_energy(cfg, bc, k):
    sites = list(cfg.region)
    e = 0.0
    for a, x in enumerate(sites):
        for b, y in enumerate(sites):
            if a != b and cfg.colors[a] == cfg.colors[b]:
                e -= 0.5 * evaluate(k, x, y)
    R = k.reach
    for a, x in enumerate(sites):
        for off in itertools.product(range(-R, R + 1), repeat=cfg.region.d):
            y = tuple(np.add(x, off))
            if y not in cfg.region:
                e -= evaluate(k, x, y) * bc.at(y)[cfg.colors[a]]
    return e


def test_two_site_energy():
    k = KacKernel(0.5, 1)
    reg = Region.box((0,), (2,))
    zero = BoundaryProfile.custom({}, 2, default=[0.5, 0.5])
    J = evaluate(k, (0,), (1,))
    e_same = hamiltonian(SpinConfig(reg, np.array([1, 1]), 2), zero, k)
    e_diff = hamiltonian(SpinConfig(reg, np.array([0, 1]), 2), zero, k)
    # the boundary contributes the same constant to both
    assert e_same - e_diff == pytest.approx(-J, abs=1e-15)


def test_monochrome_box_matches_double_loop():
    k = KacKernel(0.25, 2)
    reg = Region.box((0, 0), (3, 3))
    cfg = SpinConfig.constant(reg, 0, 3)
    bc = BoundaryProfile.ordered(1, 3)
    assert abs(hamiltonian(cfg, bc, k) - naive_energy(cfg, bc, k)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=9, max_size=9), st.permutations([0, 1, 2]))
def test_energy_and_permutation(colors, perm):
    k = KacKernel(0.3, 2)
    reg = Region.box((0, 0), (3, 3))
    bc = BoundaryProfile.custom({(x, y): np.random.default_rng((x + 4) * 31 + y + 4).dirichlet(np.ones(3))
                                 for x in range(-4, 7) for y in range(-4, 7)}, 3)
    cfg = SpinConfig(reg, np.array(colors), 3)
    e = hamiltonian(cfg, bc, k)
    assert abs(e - naive_energy(cfg, bc, k)) < 1e-12
    moved = SpinConfig(reg, np.array(perm)[cfg.colors], 3)
    assert abs(hamiltonian(moved, bc.permuted(perm), k) - e) < 1e-12


def test_collar_error():
    k = KacKernel(0.5, 1)
    bc = BoundaryProfile.custom({(-1,): [1, 0, 0]}, 3)
    with pytest.raises(CollarError):
        PottsSystem(Region.box((0,), (2,)), bc, k, 3)


def test_single_site_partition():
    k = KacKernel(0.5, 1)
    reg = Region.box((0,), (1,))
    beta = 1.7
    dis = BoundaryProfile.disordered(3)
    h = (k.lattice_normalization - k.self_coupling) / 3
    assert exact_partition(reg, dis, k, beta) == pytest.approx(math.log(3 * math.exp(beta * h)), abs=1e-13)
    ordb = BoundaryProfile.ordered(1, 3, beta=3.0)
    f = [sum(evaluate(k, (0,), (j,)) * ordb.at((j,))[q] for j in (-1, 1)) for q in range(3)]
    expect = math.log(sum(math.exp(beta * v) for v in f))
    assert exact_partition(reg, ordb, k, beta) == pytest.approx(expect, abs=1e-13)


def test_constraint_and_empty_event():
    k = KacKernel(0.5, 1)
    reg = Region.box((0,), (4,))
    bc = BoundaryProfile.ordered(1, 3)
    beta = 2.0
    one = exact_partition(reg, bc, k, beta, constraint=lambda b: np.all(b == 0, axis=1))
    assert one == pytest.approx(-beta * hamiltonian(SpinConfig.constant(reg, 0, 3), bc, k), abs=1e-13)
    with pytest.raises(EmptyEventError):
        exact_partition(reg, bc, k, beta, constraint=lambda b: np.zeros(len(b), bool))
    with pytest.raises(EnumerationCapError):
        exact_partition(Region.box((0,), (16,)), bc, k, beta)


def test_additivity_over_split():
    k = KacKernel(0.3, 1)
    reg = Region.box((0,), (6,))
    bc = BoundaryProfile.ordered(2, 3)
    full = exact_partition(reg, bc, k, 2.5)
    parts = [exact_partition(reg, bc, k, 2.5, constraint=lambda b, q=q: b[:, 2] == q) for q in range(3)]
    assert full == pytest.approx(float(np.logaddexp.reduce(parts)), abs=1e-12)


def test_site_conditional_examples():
    k = KacKernel(0.5, 1)
    reg = Region.box((0,), (3,))
    cfg = SpinConfig(reg, np.array([0, 1, 2]), 3)
    p = site_conditional(cfg, 1, BoundaryProfile.disordered(3), k, 2.0)
    assert np.allclose(site_conditional(SpinConfig.constant(Region.box((0,), (1,)), 0, 3), 0,
                                        BoundaryProfile.disordered(3), k, 2.0), 1 / 3, atol=1e-15)
    mono = SpinConfig.constant(reg, 0, 3)
    assert np.allclose(site_conditional(mono, 1, BoundaryProfile.pure(0, 3), k, 1e-9), 1 / 3, atol=1e-8)
    assert abs(p.sum() - 1) < 1e-15


def test_site_conditional_vs_enumeration():
    # d=1, gamma=0.5: the site at 0 has neighbours -1, 1 (color 2) inside and a color-2 boundary
    k = KacKernel(0.5, 1)
    reg = Region.box((-1,), (3,))
    bc = BoundaryProfile.pure(1, 3)
    cfg = SpinConfig(reg, np.array([1, 0, 1]), 3)
    got = site_conditional(cfg, 1, bc, k, 2.0)
    logs = [exact_partition(reg, bc, k, 2.0, constraint=lambda b, q=q: (b[:, 0] == 1) & (b[:, 2] == 1) & (b[:, 1] == q))
            for q in range(3)]
    want = np.exp(np.array(logs) - np.logaddexp.reduce(logs))
    assert np.max(np.abs(got - want)) < 1e-12


def test_detailed_balance_two_sites():
    k = KacKernel(0.5, 1)
    reg = Region.box((0,), (2,))
    bc = BoundaryProfile.ordered(1, 3)
    beta = 2.3
    sysm = PottsSystem(reg, bc, k, 3)
    confs = list(itertools.product(range(3), repeat=2))
    w = np.array([math.exp(-beta * sysm.energy(c)) for c in confs])
    pi = w / w.sum()
    for i in range(2):
        P = np.zeros((9, 9))
        for a, c in enumerate(confs):
            p = site_conditional(SpinConfig(reg, np.array(c), 3), i, bc, k, beta, sysm)
            for q in range(3):
                d = list(c); d[i] = q
                P[a, confs.index(tuple(d))] += p[q]
        flow = pi[:, None] * P
        assert np.max(np.abs(flow - flow.T)) < 1e-15
        assert np.allclose(pi @ P, pi, atol=1e-15)


def test_beta_zero_uniform():
    reg = Region.box((0, 0), (100, 100))
    tr = heat_bath_run(SpinConfig.constant(reg, 0, 3), BoundaryProfile.disordered(3), KacKernel(0.25, 2), 0.0, 1, 7)
    counts = np.bincount(tr.final.colors, minlength=3)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_frozen_ferromagnet():
    reg = Region.box((0, 0), (16, 16))
    tr = heat_bath_run(SpinConfig.constant(reg, 0, 3), BoundaryProfile.ordered(1, 3), KacKernel(0.25, 2), 1e3, 100, 3)
    assert np.mean(tr.final.colors == 0) >= 0.99


def test_seed_determinism_and_energy_tracking():
    reg = Region.box((0, 0), (12, 12))
    k = KacKernel(0.25, 2)
    bc = BoundaryProfile.disordered(3)
    init = SpinConfig(reg, np.random.default_rng(0).integers(0, 3, len(reg)), 3)
    a = heat_bath_run(init, bc, k, 2.8, 300, 11)
    b = heat_bath_run(init, bc, k, 2.8, 300, 11)
    assert np.array_equal(a.energy, b.energy) and np.array_equal(a.final.colors, b.final.colors)
    assert abs(a.energy[-1] - hamiltonian(a.final, bc, k)) < 1e-8
    assert np.allclose(a.densities.sum(axis=1), 1)
