import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pottskac import coarse as co
from pottskac import meanfield as mf
from pottskac.geometry import Region
from pottskac.potts import SpinConfig


def test_scales_from_gamma():
    s = co.scales_from_gamma(2**-10, 0.03, 2)
    assert (s.l0, s.lm, s.lp) == (32, 512, 1024)
    with pytest.raises(ValueError, match=r"alpha < 1/\(16d\)"):
        co.scales_from_gamma(2**-10, 0.2, 2)
    with pytest.raises(ValueError):
        co.scales_from_gamma(1.0, 0.01, 2)


@given(st.integers(6, 40), st.floats(0.001, 0.031))
def test_scales_divisible(k, alpha):
    s = co.scales_from_gamma(2.0**-k, alpha, 2)
    assert s.lp % s.lm == 0 and s.lm % s.l0 == 0


def test_empirical_average_examples():
    reg = Region.box((0, 0), (4, 4))
    prof = co.empirical_average(SpinConfig.constant(reg, 1, 3), 2)
    assert np.all(prof.values == [0, 1, 0])
    cube = Region.box((0, 0), (2, 2))
    p = co.empirical_average(SpinConfig(cube, np.array([0, 0, 1, 2]), 3), 2)
    assert np.allclose(p.values, [[0.5, 0.25, 0.25]])
    with pytest.raises(ValueError):
        co.empirical_average(SpinConfig.constant(Region.box((0, 0), (3, 2)), 0, 3), 2)


@settings(max_examples=30)
@given(arrays(np.int64, 36, elements=st.integers(0, 2)))
def test_mass_conservation(colors):
    reg = Region.box((0, 0), (6, 6))
    prof = co.empirical_average(SpinConfig(reg, colors, 3), 3)
    assert np.array_equal(np.rint(9 * prof.values.sum(axis=0)).astype(int), np.bincount(colors, minlength=3))
    assert prof.is_discrete()


simplex_rows = arrays(np.float64, (5, 3), elements=st.floats(0.0, 1.0)).filter(
    lambda a: np.all(a.sum(axis=1) > 1e-3)).map(lambda a: a / a.sum(axis=1, keepdims=True))


@settings(max_examples=100)
@given(simplex_rows, st.sampled_from([1, 2, 4, 8, 9]))
def test_rounding(v, n):
    r = co.round_to_lattice(v, n)
    assert np.allclose(r.sum(axis=1), 1, atol=1e-12)
    assert np.allclose(r * n, np.rint(r * n), atol=1e-9)
    # largest remainder keeps every component within one lattice step
    assert np.all(np.abs(r - v) < 1 / n + 1e-12)
    nearest = np.floor(v * n + 0.5)
    ok_rows = nearest.sum(axis=1) == n
    err = r[ok_rows] - v[ok_rows]
    assert np.all(err <= 1 / (2 * n) + 1e-12) and np.all(err > -1 / (2 * n) - 1e-12)


def test_half_step_rounding_not_always_possible():
    # uniform on three colors at n = 1: any lattice point is a vertex, off by 2/3
    r = co.round_to_lattice(np.full(3, 1 / 3), 1)
    assert np.max(np.abs(r - 1 / 3)) == pytest.approx(2 / 3)


def test_accuracy_constructor():
    sep = mf.min_separation(mf.critical_minimizers(3))
    co.Accuracy.manual(0.9 * sep / 2, 3)
    with pytest.raises(ValueError):
        co.Accuracy.manual(sep / 2, 3)


def test_eta_examples():
    ms = mf.critical_minimizers(3)
    vec = ms.vectors()
    vals = np.array([vec[1], vec[-1], 0.5 * (vec[1] + vec[2])])
    assert co.eta_labels(vals, vec, 0.05).tolist() == [1, -1, 0]
    prof = co.CoarseProfile(2, np.array([[0], [2], [4]]), vals)
    assert co.phase_indicator_eta(prof, ms, co.Accuracy.manual(0.05, 3)) == {(0,): 1, (2,): -1, (4,): 0}


def test_theta_examples():
    eta = np.ones((20, 20), dtype=np.int64)
    assert np.all(co.theta_grid(eta, 4) == 1)
    eta[9, 9] = 0  # fine cube in coarse cube (2, 2)
    th = co.theta_grid(eta, 4)  # coarse grid 5x5 -> interior 3x3, index shift by 1
    full = np.ones((5, 5), dtype=np.int64)
    full[1:4, 1:4] = 0
    assert np.array_equal(th, full[1:4, 1:4])
    periodic = co.theta_grid(eta, 4, periodic=True)
    assert np.array_equal(periodic, full)
    check = np.kron((np.indices((6, 6)).sum(axis=0) % 2) + 1, np.ones((2, 2), dtype=np.int64))
    assert np.all(co.theta_grid(check, 2) == 0)
    with pytest.raises(ValueError):
        co.theta_grid(np.ones((4, 4), dtype=np.int64), 2)


def test_theta_mapping_matches_grid():
    rng = np.random.default_rng(3)
    eta = rng.choice([1, 1, 1, 1, 2, 0], size=(12, 12))
    eta[:6] = 1
    scales = co.ScaleTriple.manual(1, 1, 3)
    mapping = {(i, j): int(eta[i, j]) for i in range(12) for j in range(12)}
    th = co.phase_indicator_theta(mapping, scales)
    grid = co.theta_grid(eta, 3)
    for (a, b), lab in th.items():
        assert grid[a // 3 - 1, b // 3 - 1] == lab


@settings(max_examples=60, deadline=None)
@given(arrays(np.int64, (8, 8), elements=st.sampled_from([1, 1, 1, 2, 2, 2, -1, 0])))
def test_theta_separation(coarse_labels):
    eta = np.kron(coarse_labels, np.ones((2, 2), dtype=np.int64))
    th = co.theta_grid(eta, 2, periodic=True)
    pts = {lab: np.argwhere(th == lab) for lab in np.unique(th) if lab != co.NO_PHASE}
    labs = list(pts)
    for i in range(len(labs)):
        for j in range(i + 1, len(labs)):
            for x in pts[labs[i]]:
                diff = np.abs(pts[labs[j]] - x)
                diff = np.minimum(diff, 8 - diff)
                # in units of coarse cubes: at least two cubes between distinct phases
                assert np.min(np.max(diff, axis=1)) >= 3
    assert np.array_equal(th, co.theta_grid(eta, 2, periodic=True))
