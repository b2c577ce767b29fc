import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pottskac import coarse as co
from pottskac import contour as ct
from pottskac import meanfield as mf
from pottskac.acceptance import toy_coarsening, toy_window
from pottskac.kernel import KacKernel

CZ = ct.Coarsening(co.ScaleTriple.manual(1, 6, 12), co.Accuracy.manual(0.1, 3))


def sea(n_lp, label=1, seed=0):
    return ct.synthetic_correct_config((12 * n_lp,), CZ, label, np.random.default_rng(seed))


def fields(grid):
    eta = CZ.eta(grid)
    return CZ.theta(eta), eta


def test_constant_theta_no_contours():
    theta, eta = fields(sea(9))
    assert np.all(theta == 1)
    assert ct.extract_contours(theta, eta, CZ.scales, origin=(12,)) == []


def test_single_flip():
    g = sea(9)
    g[48:54] = [0, 0, 1, 1, 2, 2]  # first l- block of l+ cube 4
    theta, eta = fields(g)
    cs = ct.extract_contours(theta, eta, CZ.scales, origin=(12,))
    assert len(cs) == 1
    c = cs[0]
    assert c.label == 1 and c.support == ((36,), (48,), (60,))
    assert c.N == 3 and c.volume == 36 and c.volume == c.N * 12
    assert c.eta[(48,)] == -1 and c.eta[(54,)] == 1
    assert set(c.collar) == {(24,), (72,)} and not c.interiors
    A = c.collar_sets()
    assert set().union(*A.values()) == set(c.collar) and sum(map(len, A.values())) == len(c.collar)
    assert all(q != co.NO_PHASE for q in c.collar.values())


def test_two_far_flips():
    g = sea(15)
    g[48:54] = [0, 0, 1, 1, 2, 2]
    g[120:126] = [0, 0, 1, 1, 2, 2]
    theta, eta = fields(g)
    cs = ct.extract_contours(theta, eta, CZ.scales, origin=(12,))
    assert len(cs) == 2
    assert not set(cs[0].support) & set(cs[1].support)
    assert ct.compatible(cs[0], cs[1])


def test_touching_window():
    g = sea(6)
    g[12:18] = [0, 0, 1, 1, 2, 2]
    theta, eta = fields(g)
    with pytest.raises(ct.ContourError, match="touches the observation window"):
        ct.extract_contours(theta, eta, CZ.scales, origin=(12,))
    assert ct.extract_contours(theta, eta, CZ.scales, origin=(12,), lenient=True)[0].label is None


def test_interior_and_labels():
    sc = co.ScaleTriple.manual(1, 1, 1)
    theta = np.ones((7, 7), dtype=np.int64)
    theta[1:6, 1:6] = 0
    theta[3, 3] = 2
    eta = np.zeros_like(theta)
    cs = ct.extract_contours(theta, eta, sc)
    assert len(cs) == 1
    c = cs[0]
    assert c.label == 1 and len(c.interiors) == 1 and c.interior_labels == (2,)
    assert c.interior(2) == {(3, 3)}
    # collar: outer ring plus the enclosed cube
    assert c.collar_sets() == {1: set(c.exterior), 2: {(3, 3)}}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([-1, 1, 2, 3]))
def test_correct_configs_have_no_contours(seed, label):
    rng = np.random.default_rng(seed)
    cz2 = ct.Coarsening(co.ScaleTriple.manual(1, 6, 12), co.Accuracy.manual(0.1, 3))
    g = ct.synthetic_correct_config((48, 48), cz2, label, rng)
    eta = cz2.eta(g)
    assert ct.extract_contours(cz2.theta(eta), eta, cz2.scales) == []
    assert np.all(cz2.theta(eta, periodic=True) == label)


def test_peierls():
    bc = mf.beta_c(3)
    cf = ct.peierls_cf(2, 3, bc)
    assert cf == pytest.approx((3 / bc - 1) / 27, abs=1e-15)
    assert abs(cf - 0.082021 / 27) < 1e-6
    assert ct.peierls_cf(2, 3, bc, "difference") == pytest.approx((3 - bc) / 27)
    k1 = ct.peierls_constant(2, 3, bc, 0.01, 0.1, 8)
    k2 = ct.peierls_constant(2, 3, bc, 0.01, 0.2, 8)
    assert k1 / k2 == pytest.approx(0.01 ** (2 * (0.1 - 0.2)), rel=1e-12)
    with pytest.raises(ValueError):
        ct.peierls_cf(2, 3, 3.0)


@pytest.fixture(scope="module")
def toy():
    return toy_window()


def flipped(start, block):
    cfg = np.tile([0, 1, 2], 4)
    cfg[start:start + 3] = block
    return cfg


def test_toy_weights_nonnegative_and_small_beta(toy):
    cfg = flipped(3, [0, 0, 1])
    cs = toy.contours_of(cfg)
    assert cs
    xi = np.tile([0, 1, 2], 4)
    for c in cs:
        w = ct.contour_weight(toy, c, xi, 1.0)
        assert w.weight >= 0
        tiny = ct.contour_weight(toy, c, xi, 1e-6)
        assert tiny.weight == pytest.approx(tiny.n_numerator / tiny.n_denominator, rel=1e-4)


def test_toy_weight_vs_oracle(toy):
    c = toy.contours_of(flipped(0, [2, 2, 2]))[0]
    xi = np.tile([1, 2, 0], 4)
    assert ct.contour_weight(toy, c, xi, 2.0).weight == pytest.approx(ct.weight_oracle(toy, c, xi, 2.0), rel=1e-12)


def test_weight_permutation_invariance():
    perm = np.array([2, 0, 1])
    toy_a = toy_window((0, 1))
    toy_b = ct.ContourToy.segment(KacKernel(0.25, 1), toy_coarsening(), [0, 1], perm[[0, 1, 2]])
    cfg = np.tile([0, 1, 2], 2)
    cfg[0:3] = [0, 0, 1]
    ca = toy_a.contours_of(cfg)[0]
    cb = toy_b.contours_of(perm[cfg])[0]
    assert cb.support == ca.support
    relabel = {-1: -1, 0: 0, 1: perm[0] + 1, 2: perm[1] + 1, 3: perm[2] + 1}
    assert cb.eta == {k: relabel[v] for k, v in ca.eta.items()}
    xi = np.tile([0, 1, 2], 2)
    wa = ct.contour_weight(toy_a, ca, xi, 1.5).weight
    wb = ct.contour_weight(toy_b, cb, perm[xi], 1.5).weight
    assert wb == pytest.approx(wa, rel=1e-12)


def test_identity_small_window():
    rep = ct.contour_identity_check(toy_window((0,)), 1.5)
    assert rep.residual < 1e-10 and rep.n_configs == 27


def test_census_record(toy):
    c = toy.contours_of(flipped(3, [0, 0, 1]))[0]
    rec = c.record(0.5)
    assert rec["N"] == c.N and rec["weight"] == 0.5 and rec["label"] == c.label
