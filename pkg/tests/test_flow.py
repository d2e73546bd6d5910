import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from mch.flow import (FlowState, NonMonotoneError, advance, evolve, init_flow, rhs,
                      velocity_profile, velocity_profile_naive, xxi_consistency, LOG_COLUMNS)
from mch.kernel import green, green_prime
from mch.momentum import build_momentum, label_grid, scale, sign_partition


def random_state(seed, N, rule="gregory", L=1.0, spread=0.8):
    """Random strictly increasing X pinned at +-L and a random m0 vanishing at the ends."""
    rng = np.random.default_rng(seed)
    labels = label_grid(L, N, rule)
    gaps = rng.uniform(1 - spread, 1 + spread, N - 1)
    X = -L + 2 * L * np.concatenate([[0.0], np.cumsum(gaps)]) / gaps.sum()
    X[-1] = L
    m0 = rng.normal(0, 3, N)
    m0[0] = m0[-1] = 0.0
    mom = build_momentum(f"bump(c=1, L={L}, width={L})")
    return FlowState(0.0, X, np.ones(N), labels, mom, m0, sign_partition(m0))


def test_init_flow_identity():
    s = init_flow(build_momentum("bump(1)"), 65)
    assert s.X[0] == -1 and s.X[64] == 1
    assert np.all(s.Xxi == 1) and s.t == 0
    assert np.array_equal(s.X, s.labels.nodes)


@pytest.mark.parametrize("N", [64, 31])
def test_init_flow_rejects_bad_N(N):
    with pytest.raises(ValueError):
        init_flow(build_momentum("bump(1)"), N)


def test_init_flow_rejects_atoms():
    with pytest.raises(ValueError):
        init_flow(build_momentum("bump(1) + atoms(0:1)"), 65)


@pytest.mark.parametrize("desc", ["bump(4)", "bump(c=10, width=0.1, L=0.1)",
                                  "bump(c=3, center=0.2, width=0.5, L=1) + bump(c=-2, center=-0.5, width=0.3)"])
def test_initial_bounds(desc):
    m = build_momentum(desc)
    vp = velocity_profile(init_flow(m, 129))
    M1 = m.m1Norm
    assert np.abs(vp.u).max() <= 0.5 * M1
    assert np.abs(vp.ux).max() <= 0.5 * M1
    assert np.abs(vp.U).max() <= 0.5 * M1**2


def test_symmetric_bump_center_and_boundary():
    s = init_flow(build_momentum("bump(1)"), 65)
    vp = velocity_profile(s)
    c = 32
    assert abs(vp.ux[c]) <= 1e-15
    assert vp.U[c] == pytest.approx(vp.u[c] ** 2, rel=1e-14)
    assert vp.U[0] == 0.0 and vp.U[-1] == 0.0


@pytest.mark.parametrize("N", [65, 129])
def test_velocity_matches_adaptive_quadrature(N):
    m = build_momentum("bump(4)")
    s = init_flow(m, N)
    vp = velocity_profile(s)
    f = lambda y: float(m.density(np.array(y)))
    idx = [5, N // 3, N // 2 + 3, N - 7]
    for i in idx:
        x = s.X[i]
        u = quad(lambda y: green(x - y) * f(y), -1, 1, points=[x], epsabs=1e-14)[0]
        ux = quad(lambda y: green_prime(x - y) * f(y), -1, 1, points=[x], epsabs=1e-14)[0]
        assert vp.u[i] == pytest.approx(u, abs=2e-5 * (65 / N) ** 4)
        assert vp.ux[i] == pytest.approx(ux, abs=2e-5 * (65 / N) ** 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([33, 49, 65]), st.sampled_from(["gregory", "simpson"]))
def test_fast_velocity_equals_naive(seed, N, rule):
    s = random_state(seed, N, rule)
    fast = velocity_profile(s)
    slow = velocity_profile_naive(s)
    scale_ = np.abs(slow.U).max()
    assert np.abs(fast.U - slow.U).max() <= 1e-12 * scale_
    assert np.allclose(fast.u, slow.u, rtol=1e-13, atol=1e-15)


def test_non_monotone_is_rejected():
    s = init_flow(build_momentum("bump(1)"), 33)
    X = s.X.copy()
    X[10], X[11] = X[11], X[10]
    with pytest.raises(NonMonotoneError):
        velocity_profile(s, X)


def test_rhs_zero_labels_and_identity():
    m = build_momentum("bump(c=4, width=0.5, L=1)")
    s = init_flow(m, 129)
    dX, dY = rhs(s)
    zero = s.m0 == 0
    assert zero.sum() > 20
    assert np.all(dY[zero] == 0)
    assert np.array_equal(dX, velocity_profile(s).U)
    r = evolve(s, 0.05)
    st_ = r.state
    dX, dY = rhs(st_)
    vp = velocity_profile(st_)
    m_along = st_.m0 / st_.Xxi
    assert np.allclose(dY / st_.Xxi, 2 * m_along * vp.ux, rtol=1e-13, atol=1e-15)


def test_rk4_order():
    m = build_momentum("bump(4)")
    s0 = init_flow(m, 65)
    finals = []
    for n in (10, 20, 40, 80):
        s = s0
        for _ in range(n):
            s = advance(s, 0.1 / n)
        finals.append(s.X)
    d = [np.abs(a - b).max() for a, b in zip(finals, finals[1:])]
    assert np.log2(d[0] / d[1]) >= 3.5
    assert np.log2(d[1] / d[2]) >= 3.5


def test_zero_momentum_state_is_stationary():
    s = init_flow(build_momentum("bump(1)"), 33)
    z = FlowState(0.0, s.X, s.Xxi, s.labels, s.momentum, np.zeros(33), np.zeros(33, np.int8))
    n = advance(z, 0.1)
    assert n.t == pytest.approx(0.1)
    assert np.array_equal(n.X, z.X) and np.array_equal(n.Xxi, z.Xxi)


def test_one_step_matches_integral_formula():
    s = init_flow(build_momentum("bump(4)"), 65)
    errs = []
    for dt in (0.02, 0.01, 0.005):
        one = advance(s, dt)
        half = advance(s, dt / 2)
        ux = [velocity_profile(x).ux for x in (s, half, one)]
        integral = dt / 6 * (ux[0] + 4 * ux[1] + ux[2])
        errs.append(np.abs(one.Xxi - (1 + 2 * s.m0 * integral)).max())
    assert np.log2(errs[0] / errs[1]) >= 3.5
    assert np.log2(errs[1] / errs[2]) >= 3.5


def test_small_data_run_completes():
    m = scale(build_momentum("bump(1)"), 0.1)
    r = evolve(init_flow(m, 129), 1.0)
    assert r.reason == "t_end"
    assert r.state.t == pytest.approx(1.0)
    assert r.state.Xxi.min() >= 1 - m.mInfNorm * m.m1Norm * 1.0


@pytest.fixture(scope="module")
def bump4_run():
    m = build_momentum("bump(4)")
    return m, evolve(init_flow(m, 129), 0.2)


def test_run_invariants(bump4_run):
    m, r = bump4_run
    tr = r.trajectory
    M1 = m.m1Norm
    X = tr.arrays("X")
    assert np.abs(X[:, 0] + 1).max() < 1e-9 and np.abs(X[:, -1] - 1).max() < 1e-9
    l1 = tr.column("m_l1")
    assert np.abs(l1 / l1[0] - 1).max() < 1e-6
    assert l1[0] == pytest.approx(M1, rel=1e-6)
    assert np.abs(tr.arrays("u")).max() <= 0.5 * M1 + 1e-9
    assert np.abs(tr.arrays("ux")).max() <= 0.5 * M1 + 1e-9
    assert np.abs(tr.arrays("U")).max() <= 0.5 * M1**2 + 1e-9
    Y = tr.arrays("Xxi")
    assert np.all(np.sign(tr.m0 / Y) == np.sign(tr.m0))
    ok = Y.min(axis=1) > 1e-4
    assert np.all(np.diff(X[ok], axis=1) > 0)


def test_step_controller(bump4_run):
    m, r = bump4_run
    t = r.trajectory.column("t")
    minf = r.trajectory.column("m_inf")
    dt = np.diff(t)
    assert np.all(dt <= np.minimum(1e-2, 0.1 / (minf[:-1] * m.m1Norm)) * (1 + 1e-12))


def test_evolve_rejects_past_horizon():
    s = init_flow(build_momentum("bump(1)"), 33)
    with pytest.raises(ValueError):
        evolve(s, 0.0)


def test_trajectory_csv(tmp_path, bump4_run):
    _, r = bump4_run
    path = tmp_path / "traj.csv"
    r.trajectory.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,min_xxi,m_inf,m_l1,min_mux,max_mux,x_left,x_right"
    assert len(lines) == len(r.trajectory.t) + 1
    assert len(lines[1].split(",")) == len(LOG_COLUMNS)


def test_xxi_consistency_initial_and_zero_labels():
    m = build_momentum("bump(c=4, width=0.5, L=1)")
    r = evolve(init_flow(m, 129), 0.1)
    rep = xxi_consistency(r.trajectory)
    for name in ("evolved", "exponential", "integral"):
        assert np.all(getattr(rep, name)[0] == 1.0)
    assert np.abs(rep.differences[0] - 1).max() < 1e-12
    zero = r.trajectory.m0 == 0
    inner = zero.copy()
    inner[:3] = inner[-3:] = False        # stencil reach of the edge differences
    inner &= np.abs(r.trajectory.nodes) > 0.55
    for name in ("evolved", "exponential", "integral"):
        assert np.abs(getattr(rep, name)[:, zero] - 1).max() <= 1e-10
    assert np.abs(rep.differences[:, inner] - 1).max() <= 1e-10


def test_xxi_time_formulas_converge():
    m = build_momentum("bump(4)")
    d = []
    for dt in (0.01, 0.005, 0.0025):
        r = evolve(init_flow(m, 65), 0.15, dt_max=dt, c_safe=10.0)
        d.append(xxi_consistency(r.trajectory).max_time_discrepancy)
    assert np.log2(d[0] / d[1]) >= 3 and np.log2(d[1] / d[2]) >= 3
