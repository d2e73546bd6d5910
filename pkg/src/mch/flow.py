"""Lagrangian solver: characteristics X(xi, t) and X_xi(xi, t) with O(N) velocity evaluation.

Along the flow the velocity U = u^2 - u_x^2 factors as 4*L*R where
    L_i = int_{-L}^{xi_i} G(X_i - X(theta)) m0 dtheta = exp(-X_i)/2 * P_i
    R_i = int_{xi_i}^{L}  G(X_i - X(theta)) m0 dtheta = exp(X_i)/2  * Q_i
and P, Q are cumulative integrals of exp(+-X) m0 over the labels.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .momentum import label_grid, sign_partition

MAX_SUPPORT = 50.0


class NonMonotoneError(RuntimeError):
    """Characteristics crossed: X is no longer strictly increasing over the labels."""


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    X: np.ndarray
    Xxi: np.ndarray
    labels: object
    momentum: object
    m0: np.ndarray
    signs: np.ndarray

    def evolved(self, t, X, Xxi):
        return FlowState(t, X, Xxi, self.labels, self.momentum, self.m0, self.signs)

    @property
    def m(self):
        """Eulerian momentum along the flow, m0 / X_xi."""
        return self.m0 / self.Xxi


@dataclass(frozen=True, eq=False)
class VelocityProfile:
    u: np.ndarray
    ux: np.ndarray
    U: np.ndarray
    left: np.ndarray = None
    right: np.ndarray = None


def init_flow(m, N, rule="gregory"):
    if N % 2 == 0:
        raise ValueError("N must be odd")
    if N < 33:
        raise ValueError("N must be at least 33")
    if m.atoms:
        raise ValueError("the classical solver takes densities only; use the regularized scheme for atoms")
    if m.L > MAX_SUPPORT:
        raise ValueError(f"support radius {m.L} exceeds {MAX_SUPPORT}")
    labels = label_grid(m.L, N, rule)
    m0 = m.density(labels.nodes)
    return FlowState(0.0, labels.nodes.copy(), np.ones(N), labels, m,
                     m0, sign_partition(m0))


# --- cumulative quadrature --------------------------------------------------

def interval_integrals(f, h):
    """Fourth-order integrals of sampled f over each interval [x_k, x_k+1]."""
    n = len(f)
    out = np.empty(n - 1)
    out[1:-1] = h / 24.0 * (-f[:-3] + 13.0 * f[1:-2] + 13.0 * f[2:-1] - f[3:])
    out[0] = h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    out[-1] = h / 24.0 * (9.0 * f[-1] + 19.0 * f[-2] - 5.0 * f[-3] + f[-4])
    return out


def interval_stencils(n):
    """(interval, node, weight/h) triples of the interval rule, for the naive oracle."""
    rows = []
    for k in range(n - 1):
        if k == 0:
            nodes, ws = (0, 1, 2, 3), (9, 19, -5, 1)
        elif k == n - 2:
            nodes, ws = (n - 1, n - 2, n - 3, n - 4), (9, 19, -5, 1)
        else:
            nodes, ws = (k - 1, k, k + 1, k + 2), (-1, 13, 13, -1)
        rows.append([(j, w / 24.0) for j, w in zip(nodes, ws)])
    return rows


def _check_monotone(X):
    if not np.all(np.diff(X) > 0):
        raise NonMonotoneError("flow map is not strictly increasing")


def velocity_profile(state, X=None):
    """u, u_x and U = u^2 - u_x^2 at every label, O(N) via prefix/suffix sums."""
    X = state.X if X is None else X
    _check_monotone(X)
    m0 = state.m0
    labels = state.labels
    a = np.exp(X) * m0
    b = np.exp(-X) * m0
    if labels.rule == "gregory":
        P = np.concatenate([[0.0], np.cumsum(interval_integrals(a, labels.h))])
        Ib = interval_integrals(b, labels.h)
        Q = np.concatenate([np.cumsum(Ib[::-1])[::-1], [0.0]])
    else:
        # split-node convention: the node xi_i gives half its weight to each side
        wa = labels.weights * a
        wb = labels.weights * b
        P = np.cumsum(wa) - 0.5 * wa
        Q = np.cumsum(wb[::-1])[::-1] - 0.5 * wb
    left = 0.5 * np.exp(-X) * P
    right = 0.5 * np.exp(X) * Q
    return VelocityProfile(left + right, right - left, 4.0 * left * right, left, right)


def velocity_profile_naive(state, X=None):
    """Same quadrature as velocity_profile, evaluated as an explicit O(N^2) double loop."""
    X = state.X if X is None else X
    _check_monotone(X)
    n = len(X)
    m0 = state.m0
    labels = state.labels
    # weight of node j in int_{-L}^{xi_i} and in int_{xi_i}^{L}
    WL = np.zeros((n, n))
    WR = np.zeros((n, n))
    if labels.rule == "gregory":
        st = interval_stencils(n)
        for i in range(n):
            for k in range(i):
                for j, w in st[k]:
                    WL[i, j] += w * labels.h
            for k in range(i, n - 1):
                for j, w in st[k]:
                    WR[i, j] += w * labels.h
    else:
        w = labels.weights
        for i in range(n):
            WL[i, :i] = w[:i]
            WR[i, i + 1:] = w[i + 1:]
            WL[i, i] = WR[i, i] = 0.5 * w[i]
    left = np.empty(n)
    right = np.empty(n)
    for i in range(n):
        # the one-sided exponential branches of G on each side of xi_i
        left[i] = np.sum(WL[i] * 0.5 * np.exp(-(X[i] - X)) * m0)
        right[i] = np.sum(WR[i] * 0.5 * np.exp(-(X - X[i])) * m0)
    u = left + right
    ux = right - left
    return VelocityProfile(u, ux, u * u - ux * ux, left, right)


def rhs(state, X=None):
    vp = velocity_profile(state, X)
    return vp.U, 2.0 * state.m0 * vp.ux


def advance(state, dt, k1=None):
    """One classical RK4 step of (X, X_xi). Raises NonMonotoneError on crossing."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    X = state.X
    if k1 is None:
        k1 = rhs(state)
    k2 = rhs(state, X + 0.5 * dt * k1[0])
    k3 = rhs(state, X + 0.5 * dt * k2[0])
    k4 = rhs(state, X + dt * k3[0])
    Xn = X + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    Yn = state.Xxi + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    _check_monotone(Xn)
    return state.evolved(state.t + dt, Xn, Yn)


# --- driver -----------------------------------------------------------------

LOG_COLUMNS = ("t", "min_xxi", "m_inf", "m_l1", "min_mux", "max_mux", "x_left", "x_right")


@dataclass(eq=False)
class Trajectory:
    """Per-step log plus per-label histories of X, X_xi, u, u_x, U."""

    t: list = field(default_factory=list)
    X: list = field(default_factory=list)
    Xxi: list = field(default_factory=list)
    u: list = field(default_factory=list)
    ux: list = field(default_factory=list)
    U: list = field(default_factory=list)
    log: list = field(default_factory=list)
    m0: np.ndarray = None
    weights: np.ndarray = None
    nodes: np.ndarray = None

    def record(self, state, vp):
        m = state.m0 / state.Xxi
        mux = m * vp.ux
        self.t.append(state.t)
        self.X.append(state.X)
        self.Xxi.append(state.Xxi)
        self.u.append(vp.u)
        self.ux.append(vp.ux)
        self.U.append(vp.U)
        w = state.labels.weights
        self.log.append((state.t, float(state.Xxi.min()), float(np.abs(m).max()),
                         float(np.sum(w * np.abs(m) * state.Xxi)),
                         float(mux.min()), float(mux.max()),
                         float(state.X[0]), float(state.X[-1])))

    def drop_last(self):
        for name in ("t", "X", "Xxi", "u", "ux", "U", "log"):
            getattr(self, name).pop()

    def arrays(self, name):
        return np.asarray(getattr(self, name))

    def column(self, name):
        return np.array([row[LOG_COLUMNS.index(name)] for row in self.log])

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(LOG_COLUMNS) + "\n")
            for row in self.log:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


@dataclass(eq=False)
class EvolveResult:
    state: FlowState
    trajectory: Trajectory
    reason: str          # "t_end", "collapse" or "crossing"
    previous: FlowState = None
    last_dt: float = None


def step_size(state, M1, dt_max, c_safe):
    m_inf = float(np.max(np.abs(state.m0 / state.Xxi)))
    return min(dt_max, c_safe / (m_inf * M1 + 1e-12))


def evolve(state, t_end, dt_max=1e-2, c_safe=0.1, delta_stop=None, trajectory=None):
    """Advance to t_end with dt = min(dt_max, c_safe/(|m|_inf M1)).

    Stops early when min X_xi < delta_stop ("collapse") or when a step would
    make X non-monotone ("crossing"); the state before that step is kept in
    `previous` so callers can refine the event time.
    """
    if not t_end > state.t:
        raise ValueError("t_end must exceed the current time")
    M1 = state.momentum.m1Norm
    traj = trajectory if trajectory is not None else Trajectory(
        m0=state.m0, weights=state.labels.weights, nodes=state.labels.nodes)
    vp = velocity_profile(state)
    if not traj.t:
        traj.record(state, vp)
    prev, dt = None, None
    while state.t < t_end * (1 - 1e-15):
        dt = min(step_size(state, M1, dt_max, c_safe), t_end - state.t)
        if dt <= 1e-15 * max(1.0, state.t):
            # |m|_inf has effectively reached infinity
            return EvolveResult(state, traj, "collapse", prev, dt)
        try:
            new = advance(state, dt, k1=(vp.U, 2.0 * state.m0 * vp.ux))
            vp_new = velocity_profile(new)
        except NonMonotoneError:
            return EvolveResult(state, traj, "crossing", state, dt)
        prev, state, vp = state, new, vp_new
        traj.record(state, vp)
        if state.Xxi.min() < (delta_stop or 0.0) or state.Xxi.min() <= 0.0:
            return EvolveResult(state, traj, "collapse", prev, dt)
    return EvolveResult(state, traj, "t_end", prev, dt)


# --- X_xi cross-checks -------------------------------------------------------

@dataclass(eq=False)
class XxiReport:
    t: np.ndarray
    evolved: np.ndarray
    exponential: np.ndarray
    integral: np.ndarray
    differences: np.ndarray

    def discrepancy(self, a, b):
        return float(np.max(np.abs(getattr(self, a) - getattr(self, b))))

    @property
    def max_time_discrepancy(self):
        """Largest disagreement among the three time-integrated forms."""
        return max(self.discrepancy("evolved", "exponential"),
                   self.discrepancy("evolved", "integral"),
                   self.discrepancy("exponential", "integral"))

    @property
    def max_discrepancy(self):
        return max(self.max_time_discrepancy,
                   self.discrepancy("evolved", "differences"),
                   self.discrepancy("exponential", "differences"),
                   self.discrepancy("integral", "differences"))


def cumulative_time_integral(t, f):
    """int_0^t f ds at every logged time, by piecewise-cubic interpolation of the log."""
    t = np.asarray(t)
    f = np.asarray(f)
    if len(t) < 2:
        return np.zeros_like(f)
    if len(t) < 4:
        steps = 0.5 * (f[1:] + f[:-1]) * np.diff(t)[:, None]
        return np.concatenate([np.zeros((1,) + f.shape[1:]), np.cumsum(steps, axis=0)])
    return CubicSpline(t, f, axis=0).antiderivative()(t)


_CENTRAL5 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_ONE_SIDED5 = (np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
               np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0)


def label_derivative(X, h):
    """Fourth-order finite differences of X over a uniform label grid (last axis)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[-1]
    if n < 5:
        raise ValueError("need at least five labels")
    out = np.empty_like(X)
    out[..., 2:-2] = sum(c * X[..., k:n - 4 + k] for k, c in enumerate(_CENTRAL5))
    a, b = _ONE_SIDED5
    out[..., 0] = X[..., :5] @ a
    out[..., 1] = X[..., :5] @ b
    out[..., -1] = -(X[..., -1:-6:-1] @ a)
    out[..., -2] = -(X[..., -1:-6:-1] @ b)
    return out / h


def xxi_consistency(trajectory):
    """Compare evolved X_xi against exp(2 int m u_x), 1 + 2 m0 int u_x, and dX/dxi."""
    t = trajectory.arrays("t")
    Y = trajectory.arrays("Xxi")
    ux = trajectory.arrays("ux")
    X = trajectory.arrays("X")
    m0 = trajectory.m0
    mux = (m0 / Y) * ux
    expo = np.exp(2.0 * cumulative_time_integral(t, mux))
    integ = 1.0 + 2.0 * m0 * cumulative_time_integral(t, ux)
    fd = label_derivative(X, trajectory.nodes[1] - trajectory.nodes[0])
    return XxiReport(t, Y, expo, integ, fd)
