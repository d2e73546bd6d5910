import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mch.eulerian import TestFunction, reconstruct, total_variation
from mch.flow import evolve, init_flow
from mch.kernel import Mollifier, build_green_table
from mch.momentum import build_momentum
from mch.regularized import (ParticleEnsemble, consistency_residuals, consistency_sweep,
                             ensemble_from_momentum, field_snapshot, make_table, reg_density,
                             reg_evolve, reg_fields, reg_fields_direct, reg_velocity,
                             single_peakon_speed)


def random_ensemble(seed, n=40, eps=0.1):
    rng = np.random.default_rng(seed)
    return ParticleEnsemble(rng.uniform(-1, 1, n), rng.normal(0, 1, n), eps)


def test_single_atom_fields():
    ens = ParticleEnsemble(np.zeros(1), np.array([2.0]), 0.1)
    tab = make_table(ens)
    u, ux = reg_fields(ens, tab, 0.0)
    assert u[0] == pytest.approx(2 * tab.value(0.0), rel=1e-14)
    assert u[0] <= 1.0
    assert ux[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.05, 0.1, 0.3]))
def test_fast_fields_match_direct(seed, eps):
    ens = random_ensemble(seed, eps=eps)
    tab = make_table(ens)
    x = np.linspace(-2, 2, 301)
    u, ux = reg_fields(ens, tab, x)
    ud, uxd = reg_fields_direct(ens, tab, x)
    M1 = ens.m1
    # the two paths differ only by table interpolation for eps < |x - X_i| < 2 eps
    assert np.abs(u - ud).max() <= 1e-11 * M1
    assert np.abs(ux - uxd).max() <= 1e-9 * M1
    assert np.abs(u).max() <= 0.5 * M1 + 1e-12
    assert np.abs(ux).max() <= 0.5 * M1 + 1e-12


def test_fields_reject_mismatched_table():
    ens = random_ensemble(1)
    tab = make_table(ParticleEnsemble(ens.positions, ens.weights, 0.2))
    with pytest.raises(ValueError):
        reg_fields(ens, tab, 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_velocity_bound(seed):
    ens = random_ensemble(seed)
    U = reg_velocity(ens, make_table(ens))
    assert np.abs(U).max() <= 0.5 * ens.m1**2 + 1e-12


@pytest.mark.parametrize("sign", [1, -1])
def test_mirror_symmetry(sign):
    # even or odd weights both make u^2 - u_x^2 even, so mirrored particles share U
    rng = np.random.default_rng(3)
    x = rng.uniform(0.05, 1, 20)
    p = rng.normal(size=20)
    ens = ParticleEnsemble(np.concatenate([x, -x]), np.concatenate([p, sign * p]), 0.1)
    U = reg_velocity(ens, make_table(ens))
    assert np.allclose(U[:20], U[20:], rtol=0, atol=1e-13)


@pytest.mark.parametrize("eps", [0.05, 0.1, 0.2])
def test_quadrature_converged_for_polynomial_mollifier(eps):
    # particles farther apart than 2 eps keep the integrand polynomial times smooth
    ens = ParticleEnsemble(np.array([-0.9, -0.2, 0.5, 1.3]), np.array([1.0, -0.5, 2.0, 0.7]), eps)
    tab = build_green_table(Mollifier("poly", eps), 2 * eps, eps / 256)
    assert np.abs(reg_velocity(ens, tab, 16) - reg_velocity(ens, tab, 32)).max() <= 1e-10


@pytest.mark.parametrize("shape, tol", [("poly", 1e-6), ("cosine", 1e-7), ("bump", 1e-4)])
def test_quadrature_difference_on_dense_ensemble(shape, tol):
    # overlapping particles put mollifier edges inside the window, so GL converges algebraically
    ens = ensemble_from_momentum(build_momentum("bump(4)"), 65, 0.05)
    tab = make_table(ens, shape)
    assert np.abs(reg_velocity(ens, tab, 16) - reg_velocity(ens, tab, 32)).max() <= tol


def test_ensemble_construction():
    m = build_momentum("bump(2) + atoms(0.3:2, -0.4:-1)")
    ens = ensemble_from_momentum(m, 65)
    assert ens.epsilon == pytest.approx(0.05)
    assert len(ens.positions) == 63 + 2        # end labels carry zero weight
    assert ens.m1 == pytest.approx(m.m1Norm, rel=1e-6)
    assert ensemble_from_momentum(build_momentum("atoms(0:1.5)")).m1 == 1.5


def test_empty_ensemble_has_zero_fields():
    ens = ParticleEnsemble(np.zeros(0), np.zeros(0), 0.1)
    tab = make_table(ens)
    u, ux = reg_fields(ens, tab, np.linspace(-1, 1, 5))
    assert np.all(u == 0) and np.all(ux == 0)
    tr = reg_evolve(ens, tab, 0.1)
    assert tr.max_U == [0.0] * len(tr.t)


def test_zero_momentum_gives_zero_residual():
    class Zero:
        L = 1.0
        has_density = True
        atoms = ()

        def density(self, x):
            return np.zeros_like(x)

        def integrate(self, f):
            return 0.0

    phi = TestFunction(0.0, 0.5, 0.2)
    assert consistency_residuals(Zero(), 0.1, [phi], 0.2, N=33) == [0.0]


def test_density_relation():
    # m^eps = rho_eps * m_eps agrees with u^eps - u^eps_xx on a smooth window
    ens = ensemble_from_momentum(build_momentum("bump(4)"), 129, 0.1)
    tab = make_table(ens, "cosine")
    errs = []
    for h in (0.01, 0.005):
        x = np.arange(-0.5, 0.5 + h / 2, h)
        u, _ = reg_fields(ens, tab, x)
        m = reg_density(ens, tab.mollifier, x)
        uxx = (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
        errs.append(np.abs(u[1:-1] - uxx - m[1:-1]).max())
    assert errs[0] / errs[1] > 3.5


@pytest.fixture(scope="module")
def short_run():
    m = build_momentum("bump(4)")
    ens = ensemble_from_momentum(m, 65, 0.1)
    tab = make_table(ens)
    x = np.linspace(-3, 3, 3001)
    snaps = []
    tr = reg_evolve(ens, tab, 0.25, observer=lambda e: snaps.append(field_snapshot(e, tab, x)))
    return ens, tr, snaps


def test_reg_evolve_conserves_weights_and_bounds(short_run):
    ens, tr, snaps = short_run
    assert tr.t[-1] == pytest.approx(0.25)
    assert np.array_equal(tr.weights, ens.weights)
    M1 = ens.m1
    assert max(tr.max_U) <= 0.5 * M1**2
    assert max(tr.max_u) <= 0.5 * M1 and max(tr.max_ux) <= 0.5 * M1
    assert len(snaps) == len(tr.t)


def test_reg_tv_and_lipschitz(short_run):
    ens, _, snaps = short_run
    M1 = ens.m1
    for f in snaps:
        assert total_variation(f.u) <= M1 + 1e-6
        assert total_variation(f.ux) <= 2 * M1 + 1e-6
    for a, b in zip(snaps[::4], snaps[2::4]):
        dt = b.t - a.t
        assert np.trapezoid(np.abs(a.u - b.u), a.x) <= 0.5 * M1**3 * dt + 1e-6
        assert np.trapezoid(np.abs(a.ux - b.ux), a.x) <= M1**3 * dt + 1e-6


def test_reg_evolve_rejects_past_horizon(short_run):
    ens, _, _ = short_run
    with pytest.raises(ValueError):
        reg_evolve(ens, make_table(ens), 0.0)


def test_regularized_approaches_classical():
    m = build_momentum("bump(4)")
    N, T = 129, 0.1
    classical = evolve(init_flow(m, N), T, dt_max=1e-3).state
    dist, udist = [], []
    x = np.linspace(-1.5, 1.5, 601)
    for eps in (0.1, 0.05, 0.025):
        ens = ensemble_from_momentum(m, N, eps)
        tab = make_table(ens)
        tr = reg_evolve(ens, tab, T, dt=1e-3)
        pos = tr.positions[-1]
        inner = classical.m0[1:-1] != 0
        dist.append(np.abs(pos - classical.X[1:-1][inner]).max())
        u_cl = reconstruct(classical, x).u
        udist.append(np.abs(reg_fields(tr.ensemble(len(tr.t) - 1), tab, x)[0] - u_cl).max())
    assert dist[0] > dist[1] > dist[2]
    assert udist[0] > udist[1] > udist[2]


def test_particle_csv(tmp_path):
    ens = ParticleEnsemble(np.array([0.0, 0.5]), np.array([1.0, -2.0]), 0.1, 0.25)
    path = tmp_path / "p.csv"
    ens.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# t=0.25, eps=0.10000000000000001"
    assert lines[1] == "x,p"
    assert lines[3] == "0.5,-2"


def test_sweep_validation():
    m = build_momentum("atoms(0:1)")
    phi = TestFunction(0, 0.5, 0.1)
    with pytest.raises(ValueError):
        consistency_sweep(m, [0.1, 0.05, 0.025], [phi], 0.1)
    with pytest.raises(ValueError):
        consistency_sweep(m, [0.1, 0.2, 0.05, 0.025], [phi], 0.1)


def test_single_peakon_speed_reported():
    speeds = {eps: single_peakon_speed(1.0, eps) for eps in (0.2, 0.1, 0.05, 0.025)}
    print("single-particle speed, p = 1:", speeds)
    assert all(np.isfinite(v) and v > 0 for v in speeds.values())
    # speed of a lone particle scales with p^2
    assert single_peakon_speed(2.0, 0.05) == pytest.approx(4 * speeds[0.05], rel=1e-13)
