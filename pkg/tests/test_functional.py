import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pottskac import functional as fn
from pottskac import meanfield as mf
from pottskac.geometry import Region
from pottskac.kernel import KacKernel, evaluate
from pottskac.potts import BoundaryProfile, SpinConfig, exact_partition, hamiltonian

BC = mf.beta_c(3)


def ctx_1d(beta=BC, phase=1, n=8, ell=2, gamma=0.2):
    bc = BoundaryProfile.disordered(3) if phase == -1 else BoundaryProfile.ordered(phase, 3, beta)
    return fn.FunctionalContext(KacKernel(gamma, 1), beta, 3, Region.box((0,), (n,)), bc, ell)


def ctx_2d(beta=BC, bc=None):
    bc = bc or BoundaryProfile.ordered(1, 3, beta)
    return fn.FunctionalContext(KacKernel(0.25, 2), beta, 3, Region.box((0, 0), (4, 6)), bc, 2)


def naive_F(ctx, rho):
    """Per-site double loop with cube-averaged boundary values."""
    k, ell = ctx.kernel, ctx.ell
    cube = {tuple(c): n for n, c in enumerate(ctx.corners)}
    coll = {tuple(c): n for n, c in enumerate(ctx.collar)}
    corner = lambda x: tuple((c // ell) * ell for c in x)
    V = 0.0
    R = k.reach
    for x in ctx.region:
        rx = rho[cube[corner(x)]]
        for off in itertools.product(range(-R, R + 1), repeat=ctx.d):
            y = tuple(np.add(x, off))
            J = evaluate(k, x, y) / ctx.norm
            if J == 0:
                continue
            if y in ctx.region:
                V -= 0.5 * J * rx @ rho[cube[corner(y)]]
            else:
                V -= J * rx @ ctx.s[coll[corner(y)]]
    return V + ell**ctx.d * np.sum(mf.xlogx(rho)) / ctx.beta


def random_profile(ctx, rng):
    return rng.dirichlet(np.ones(ctx.Q), size=ctx.n_cubes)


def test_free_energy_vs_double_loop():
    rng = np.random.default_rng(0)
    mix = {(x, y): rng.dirichlet(np.ones(3)) for x in range(-6, 10) for y in range(-6, 12)}
    for ctx in (ctx_1d(), ctx_2d(), ctx_2d(bc=BoundaryProfile.custom(mix, 3))):
        for _ in range(3):
            rho = random_profile(ctx, rng)
            assert abs(fn.free_energy(ctx, rho) - naive_F(ctx, rho)) < 1e-10


@pytest.mark.parametrize("phase", [1, 2, -1])
def test_constant_profile(phase):
    ctx = ctx_2d(bc=BoundaryProfile.disordered(3) if phase == -1 else BoundaryProfile.ordered(phase, 3, BC))
    ref = fn.reference_vector(3, BC, phase)
    rho = ctx.constant(ref)
    p = mf.MeanFieldParams(3, BC)
    expect = len(ctx.region) * mf.phi_mf(ref, p) - fn.surface_correction(ctx, phase) / (BC * ctx.norm)
    assert fn.free_energy(ctx, rho) == pytest.approx(expect, abs=1e-10)
    assert abs(fn.free_energy(ctx, rho) - naive_F(ctx, rho)) < 1e-10


def test_uniform_entropy():
    ctx = ctx_2d()
    assert fn.entropy_I(ctx, ctx.constant(np.full(3, 1 / 3))) == pytest.approx(len(ctx.region) * math.log(3))


@settings(max_examples=20, deadline=None)
@given(st.permutations([0, 1, 2]), st.integers(0, 10**6))
def test_permutation_covariance(perm, seed):
    rng = np.random.default_rng(seed)
    ctx = ctx_1d(phase=2)
    moved = fn.FunctionalContext(ctx.kernel, ctx.beta, 3, ctx.region, ctx.bc.permuted(perm), ctx.ell)
    rho = random_profile(ctx, rng)
    inv = np.argsort(perm)
    assert fn.free_energy(moved, rho[:, inv]) == pytest.approx(fn.free_energy(ctx, rho), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_excess_recombination(seed):
    rng = np.random.default_rng(seed)
    ctx = ctx_2d()
    rho = random_profile(ctx, rng)
    ex = fn.excess_decomposition(ctx, rho)
    F = fn.free_energy(ctx, rho)
    assert abs(ex.recombine() - F) <= 1e-10 * max(1, abs(F))


def test_excess_constant_profile():
    ctx = ctx_2d()
    ex = fn.excess_decomposition(ctx, ctx.constant(fn.reference_vector(3, BC, 1)))
    assert abs(ex.interaction) < 1e-14 and abs(ex.boundary) < 1e-14


def test_phi_eff():
    ctx = ctx_1d()
    ref = fn.reference_vector(3, BC, 1)
    for label in (1, -1):
        v = fn.phi_eff(ctx, ctx.constant(fn.reference_vector(3, BC, label)), 1.0, 1)
        assert np.all(np.abs(v) < 1e-10)
    rng = np.random.default_rng(1)
    for u in (0.0, 0.5, 1.0):
        assert np.all(fn.phi_eff(ctx, random_profile(ctx, rng), u, 1) >= -1e-12)


def test_stirling_instance():
    gap = fn.stirling_gap([[2, 1, 1]])[0]
    H = -(0.5 * math.log(0.5) + 2 * 0.25 * math.log(0.25))
    assert gap == pytest.approx(abs(math.log(12) - 4 * H), abs=1e-12)
    assert abs(gap - 1.674) < 1e-3 and gap <= 3 * math.log(2)
    assert len(fn.compositions(4, 3)) == 15 and len(fn.compositions(2, 3)) == 6


def test_single_monochrome_class():
    ctx = ctx_1d()
    cls = np.zeros((ctx.n_cubes, 3), dtype=np.int64)
    cls[:, 0] = ctx.vol
    classes, logz, cnt, total = fn.class_table(ctx)
    n = [i for i, c in enumerate(classes) if np.array_equal(c, cls)][0]
    e = hamiltonian(SpinConfig.constant(ctx.region, 0, 3), ctx.bc, ctx.kernel)
    assert cnt[n] == 1 and abs(logz[n] + ctx.beta * e) < 1e-12
    assert total == 3**8
    assert abs(np.logaddexp.reduce(logz) - exact_partition(ctx.region, ctx.bc, ctx.kernel, ctx.beta)) < 1e-10
    rep = fn.lp_verify(ctx, classes=[cls])
    assert rep.n_classes == 1 and rep.ok
    with pytest.raises(ValueError):
        fn.lp_verify(ctx, classes=[])


@pytest.mark.parametrize("beta,phase", [(BC - 0.2, 1), (BC - 0.2, -1), (BC + 0.2, 1), (BC + 0.2, -1)])
def test_lp_four_combinations(beta, phase):
    rep = fn.lp_verify(ctx_1d(beta, phase), n_random=50)
    assert rep.ok, rep.as_dict()


def test_context_rejects_bad_scale():
    with pytest.raises(ValueError):
        ctx_1d(ell=1)
    with pytest.raises(ValueError):
        ctx_1d(n=7)


def test_dynamics_constant_start_is_fixed():
    for phase in (1, -1):
        ctx = ctx_1d(phase=phase)
        ref = fn.reference_vector(3, BC, phase)
        for u in (0.0, 0.3, 1.0):
            _, tr = fn.dynamics_minimize(ctx, ctx.constant(ref), u, phase)
            assert tr.residual[0] < 1e-10 and len(tr.iters) == 1


def test_dynamics_u0_closed_form_and_kl():
    ctx = ctx_2d()
    rng = np.random.default_rng(2)
    ref = fn.reference_vector(3, BC, 1)
    star = fn.one_body_minimizer(ref, BC)
    prof, tr = fn.dynamics_minimize(ctx, random_profile(ctx, rng), 0.0, 1)
    assert np.max(np.abs(prof.values - star)) < 1e-9
    F0 = fn.free_energy_u(ctx, ctx.constant(star), 0.0, ref)
    for _ in range(20):
        rho = random_profile(ctx, rng)
        diff = fn.free_energy_u(ctx, rho, 0.0, ref) - F0
        kl = ctx.vol * np.sum(rho * np.log(rho / star)) / BC
        assert abs(diff - kl) < 1e-9
        assert diff >= 0.5 * ctx.vol * np.sum((rho - star) ** 2) / BC


@pytest.mark.parametrize("phase", [1, -1])
def test_dynamics_u1_tube_and_dissipation(phase):
    ctx = ctx_1d(phase=phase)
    rng = np.random.default_rng(5)
    ref = fn.reference_vector(3, BC, phase)
    zeta = 0.1
    ends = []
    for _ in range(3):
        prof, tr = fn.dynamics_minimize(ctx, fn.random_tube_profile(ctx, ref, zeta, rng), 1.0, phase)
        assert np.max(np.abs(prof.values - ref)) < zeta
        assert np.all(np.diff(tr.free_energy) <= 1e-12)
        assert all(d <= 1e-15 for d in tr.dissipation)
        assert prof.values.min() >= fn.floor_bound(3, BC) - 1e-9
        ends.append(prof.values)
    assert np.max(np.abs(ends[0] - ends[1])) < 1e-9


def test_dynamics_vertex_start():
    ctx = ctx_1d()
    start = ctx.constant([1.0, 0.0, 0.0])
    prof, tr = fn.dynamics_minimize(ctx, start, 0.5, 1)
    assert prof.values.min() > 0 and tr.residual[-1] < 1e-10


def test_dynamics_errors():
    ctx = ctx_1d()
    with pytest.raises(ValueError):
        fn.dynamics_minimize(ctx, ctx.constant(np.full(3, 1 / 3)), 1.5, 1)
    with pytest.raises(fn.DynamicsError):
        fn.dynamics_minimize(ctx, ctx.constant([0.5, 0.3, 0.2]), 1.0, 1, max_iter=2)


def test_surface_correction():
    ctx_o = ctx_2d()
    ctx_d = ctx_2d(bc=BoundaryProfile.disordered(3))
    assert fn.surface_correction(ctx_o, 1) / fn.surface_correction(ctx_d, -1) == pytest.approx(1.5, abs=1e-9)
    assert fn.boundary_coupling(KacKernel(1.0, 2), Region.box((0, 0), (4, 4))) == 0.0


def test_boundary_coupling_additivity_and_scaling():
    k = KacKernel(0.25, 2)
    A, B = Region.box((0, 0), (6, 4)), Region.box((0, 4), (6, 5))
    AB = Region.box((0, 0), (6, 9))
    cross = sum(evaluate(k, x, y) for x in A for y in B)
    assert fn.boundary_coupling(k, AB) == pytest.approx(
        fn.boundary_coupling(k, A) + fn.boundary_coupling(k, B) - 2 * cross, abs=1e-12)
    vals = [fn.boundary_coupling(k, Region.box((0, 0), (L, L))) for L in (8, 16, 24)]
    assert abs((vals[2] - vals[1]) - (vals[1] - vals[0])) < 1e-9
