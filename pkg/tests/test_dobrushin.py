import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pottskac import coarse as co
from pottskac import contour as ct
from pottskac import dobrushin as db
from pottskac import meanfield as mf
from pottskac.geometry import Region
from pottskac.kernel import KacKernel
from pottskac.potts import BoundaryProfile, PottsSystem

BC = mf.beta_c(3)
simplex = arrays(np.float64, 4, elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 1e-3).map(
    lambda a: a / a.sum())


def test_vaserstein_examples():
    assert db.vaserstein_site([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0
    assert db.vaserstein_site([0.5, 0.3, 0.2], [0.4, 0.4, 0.2]) == pytest.approx(0.1, abs=1e-15)


@given(simplex, simplex, simplex)
def test_vaserstein_metric(a, b, c):
    assert db.vaserstein_site(a, b) == pytest.approx(db.vaserstein_site(b, a), abs=1e-15)
    assert db.vaserstein_site(a, c) <= db.vaserstein_site(a, b) + db.vaserstein_site(b, c) + 1e-12
    assert db.vaserstein_site(a, a) == 0


def test_greedy_equals_lp():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        P = db.greedy_coupling(a, b)
        assert np.allclose(P.sum(axis=1), a, atol=1e-14) and np.allclose(P.sum(axis=0), b, atol=1e-14)
        assert db.coupling_cost(P) == pytest.approx(db.vaserstein_site(a, b), abs=1e-12)
        assert db.lp_coupling_distance(a, b) == pytest.approx(db.vaserstein_site(a, b), abs=1e-9)


CZ = ct.Coarsening(co.ScaleTriple.manual(1, 9, 9), co.Accuracy.manual(0.15, 3))
W9 = Region.box((0,), (9,))


def test_good_set_examples():
    dis = np.array([0, 1, 2] * 3)
    assert db.good_set_membership(W9, dis, 4, CZ, mf.DISORDERED)
    # counts (4, 2, 3): recoloring the color-2 site at i to color 0 gives (5, 2, 2), out of the tube
    edge = np.array([0, 0, 0, 0, 2, 1, 1, 2, 2])
    assert db.in_phase(W9, edge, CZ, mf.DISORDERED)
    assert not db.good_set_membership(W9, edge, 4, CZ, mf.DISORDERED)
    with pytest.raises(ValueError):
        db.good_set_membership(W9, np.zeros(9, dtype=int), 4, CZ, mf.DISORDERED)


def test_good_set_independent_of_site():
    dis = np.array([0, 1, 2] * 3)
    for i in range(9):
        vals = set()
        for q in range(3):
            c = dis.copy()
            c[i] = q
            if db.in_phase(W9, c, CZ, mf.DISORDERED):
                vals.add(db.good_set_membership(W9, c, i, CZ, mf.DISORDERED))
        assert len(vals) == 1


def test_matrix_examples():
    k = KacKernel(0.2, 1)
    reg = Region.box((0,), (21,))
    B, rep = db.dobrushin_matrix(k, 3, 1.0, reg, 21)
    assert np.all(B.diagonal() == 0)
    closed = (1 - 1 / 6) * (k.lattice_normalization - k.self_coupling)
    assert rep.sup_row_sum == pytest.approx(closed, abs=1e-14)
    assert rep.full_range_kac == pytest.approx(closed, abs=1e-14)
    assert db.kac_row_sum(k, 3, 1.0) == pytest.approx(closed, abs=1e-14)
    B0, rep0 = db.dobrushin_matrix(k, 3, 0.0, reg, 21)
    assert B0.nnz == 0 and rep0.sup_row_sum == 0
    Bt, _ = db.dobrushin_matrix(k, 3, 0.0, Region.box((0,), (6,)), 3, lp=3, K=1.0, tail=True)
    assert np.all(Bt.diagonal() == 0) and Bt.nnz == 30


def test_cube_count_distance():
    assert db.cube_count_distance((0, 0), (5, 0), 2, 4) == 9
    assert db.cube_count_distance((0,), (40,), 1, 4) == 10


def test_cube_row_sums_decrease():
    sums = [db.dobrushin_matrix(KacKernel(g, 1), 3, 1.0, Region.box((0,), (48,)), 8)[1].sup_row_sum_cube
            for g in (0.2, 0.1, 0.05)]
    assert sums[0] > sums[1] > sums[2]
    assert sums[1] < 1


def test_contraction_check_trivial_cases():
    k = KacKernel(0.2, 1)
    fld = db.InterpolatedField(k, BC, 3, 1.0, mf.DISORDERED)
    dis = np.array([0, 1, 2] * 3)
    assert db.contraction_check(W9, 4, dis, dis, fld, CZ) == (0.0, 0.0)
    reg = Region.box((0,), (18,))
    a = np.array([0, 1, 2] * 6)
    b = a.copy()
    b[16] = 0
    lhs, rhs = db.contraction_check(reg, 4, a, b, fld, CZ)
    assert lhs == 0.0 and rhs == 0.0
    with pytest.raises(ValueError):
        db.contraction_check(reg, 4, a, a[::-1].copy(), fld, CZ)


def test_field_identity_vs_energy():
    rng = np.random.default_rng(4)
    k = KacKernel(0.2, 1)
    system = PottsSystem(W9, BoundaryProfile.disordered(3), k, 3)
    for u in (0.0, 0.5, 1.0):
        fld = db.InterpolatedField(k, BC, 3, u, 1)
        for _ in range(20):
            c = rng.integers(0, 3, 9)
            i = int(rng.integers(0, 9))
            a = fld.conditional(W9, c, i)
            b = db.interpolated_conditional_from_energy(system, c, i, BC, u, fld.ref)
            assert np.max(np.abs(a - b)) < 1e-12


def test_linearized_ratio_exceeds_entry_bound():
    # the half-L1 response of the one-site law exceeds the entrywise Jacobian bound at coexistence
    assert db.linearized_ratio(3, BC, mf.DISORDERED) == pytest.approx(BC / 3, abs=1e-12)
    assert db.linearized_ratio(3, BC, mf.DISORDERED) > 1 - 1 / 6
