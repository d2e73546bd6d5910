"""Eulerian fields from a flow state, total variation, and the weak-form residual."""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .flow import NonMonotoneError


@dataclass(frozen=True, eq=False)
class EulerianField:
    x: np.ndarray
    u: np.ndarray
    ux: np.ndarray
    m: np.ndarray
    t: float = 0.0

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# t={self.t:.17g}\n")
            fh.write("x,u,ux,m\n")
            for row in zip(self.x, self.u, self.ux, self.m):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def kernel_sums(X, q, x):
    """sum_j q_j G(x - X_j) and sum_j q_j G'(x - X_j) for sorted X, O(log N) per query.

    Coincident points contribute G(0) = 1/2 to u and the principal value 0 to u_x.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    shift = 0.5 * (X[0] + X[-1])
    Xs = X - shift
    xs = x - shift
    ea = np.exp(Xs) * q
    eb = np.exp(-Xs) * q
    P = np.concatenate([[0.0], np.cumsum(ea)])            # sum over j < k
    Q = np.concatenate([np.cumsum(eb[::-1])[::-1], [0.0]])  # sum over j >= k
    lo = np.searchsorted(X, x, side="left")
    hi = np.searchsorted(X, x, side="right")
    with np.errstate(over="ignore", invalid="ignore"):
        left = np.where(lo > 0, 0.5 * np.exp(-xs) * P[lo], 0.0)
        right = np.where(hi < len(X), 0.5 * np.exp(xs) * Q[hi], 0.0)
    # exact coincidences (at most one node when X is strictly increasing)
    same = 0.5 * (P[hi] - P[lo]) * np.exp(-xs) if np.any(hi > lo) else 0.0
    same = np.where(hi > lo, same, 0.0)
    return left + right + same, right - left


def _inverse_labels(state, x):
    """Label xi with X(xi) = x by cubic Hermite interpolation of X (slopes X_xi) and Newton."""
    xi = state.labels.nodes
    X = state.X
    Xh = CubicHermiteSpline(xi, X, np.maximum(state.Xxi, 0.0))
    dXh = Xh.derivative()
    k = np.clip(np.searchsorted(X, x) - 1, 0, len(X) - 2)
    a, b = xi[k], xi[k + 1]
    Xa, Xb = X[k], X[k + 1]
    s = a + (b - a) * (x - Xa) / (Xb - Xa)
    for _ in range(50):
        f = Xh(s) - x
        d = dXh(s)
        step = np.where(d > 0, f / np.where(d > 0, d, 1.0), 0.0)
        s_new = s - step
        # fall back to bisection-style clamping inside the bracket
        s_new = np.clip(s_new, a, b)
        if np.max(np.abs(s_new - s)) < 1e-15 * max(1.0, np.max(np.abs(xi))):
            s = s_new
            break
        s = s_new
    return s


def reconstruct(state, xGrid):
    """u, u_x by direct kernel sums over the labels; m = m0(xi)/X_xi(xi) via the inverse map."""
    X = state.X
    if not np.all(np.diff(X) > 0):
        raise NonMonotoneError("flow map is not strictly increasing")
    x = np.asarray(xGrid, dtype=float)
    q = state.labels.weights * state.m0
    u, ux = kernel_sums(X, q, x)
    m = np.zeros_like(x)
    inside = (x >= X[0]) & (x <= X[-1])
    if np.any(inside):
        s = _inverse_labels(state, x[inside])
        Y = PchipInterpolator(state.labels.nodes, state.Xxi)(s)
        m0 = state.momentum.density(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            m[inside] = np.where(Y > 0, m0 / Y, 0.0)
    return EulerianField(x, u, ux, m, state.t)


def total_variation(samples):
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise ValueError("total variation needs at least two samples")
    return float(np.sum(np.abs(np.diff(samples))))


def l1_distance(a, b, x):
    return float(np.trapezoid(np.abs(np.asarray(a) - np.asarray(b)), x))


@dataclass(frozen=True, eq=False)
class TestFunction:
    """phi(x, t) = (1 - s^2)^power * p(x) * (1 - t/T)^2 * q(t), s = (x - center)/width.

    p and q are polynomials given by coefficient lists (lowest degree first).
    phi and its t-derivative vanish at t = T; phi vanishes with its first
    power-1 x-derivatives at the edges of the support.
    """

    __test__ = False

    center: float
    width: float
    horizon: float
    x_coeffs: tuple = (1.0,)
    t_coeffs: tuple = (1.0,)
    power: int = 5

    def __post_init__(self):
        if not (self.width > 0 and self.horizon > 0):
            raise ValueError("test function width and horizon must be positive")
        if self.power < 4:
            raise ValueError("power must be at least 4 so that phi_xxx is continuous")
        s = Polynomial([-self.center / self.width, 1.0 / self.width])
        S = (1 - s * s) ** self.power * Polynomial(self.x_coeffs)
        tau = Polynomial([1.0, -1.0 / self.horizon]) ** 2 * Polynomial(self.t_coeffs)
        object.__setattr__(self, "_S", [S.deriv(k) if k else S for k in range(4)])
        object.__setattr__(self, "_tau", [tau, tau.deriv()])

    @property
    def support(self):
        return self.center - self.width, self.center + self.width

    def _eval(self, kx, kt, x, t):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x - self.center) < self.width
        val = np.where(inside, self._S[kx](x), 0.0)
        tt = np.asarray(t, dtype=float)
        tv = np.where(tt < self.horizon, self._tau[kt](tt), 0.0)
        return val * tv

    def phi(self, x, t):
        return self._eval(0, 0, x, t)

    def phi_t(self, x, t):
        return self._eval(0, 1, x, t)

    def phi_x(self, x, t):
        return self._eval(1, 0, x, t)

    def phi_xx(self, x, t):
        return self._eval(2, 0, x, t)

    def phi_xxx(self, x, t):
        return self._eval(3, 0, x, t)

    def phi_txx(self, x, t):
        return self._eval(2, 1, x, t)


def weak_integrand(field, phi):
    """Space integral of the weak-form integrand at one time."""
    x, u, ux, t = field.x, field.u, field.ux, field.t
    f = (u * (phi.phi_t(x, t) - phi.phi_txx(x, t))
         - ux**3 * phi.phi_xx(x, t) / 3.0
         - u**3 * phi.phi_xxx(x, t) / 3.0
         + (u**3 + u * ux**2) * phi.phi_x(x, t))
    return float(np.trapezoid(f, x))


def weak_residual(uTrajectory, phi, m):
    """L(u, phi) + int phi(x, 0) dm0, by trapezoid quadrature in x and t.

    uTrajectory is a time-ordered sequence of EulerianField snapshots starting
    at t = 0 and reaching phi's horizon.
    """
    snaps = list(uTrajectory)
    if not snaps:
        raise ValueError("empty trajectory")
    lo, hi = phi.support
    for f in snaps:
        if f.x[0] > lo or f.x[-1] < hi:
            raise ValueError(f"snapshot at t={f.t} does not cover the test-function support")
    t = np.array([f.t for f in snaps])
    if abs(t[0]) > 1e-14 or t[-1] < phi.horizon * (1 - 1e-12) or np.any(np.diff(t) <= 0):
        raise ValueError("trajectory must run from t=0 through the test-function horizon")
    keep = t <= phi.horizon
    vals = np.array([weak_integrand(f, phi) for f, k in zip(snaps, keep) if k])
    tt = t[keep]
    if tt[-1] < phi.horizon:
        # integrand vanishes at the horizon
        tt = np.append(tt, phi.horizon)
        vals = np.append(vals, 0.0)
    total = float(np.trapezoid(vals, tt))
    return total + m.integrate(lambda x: phi.phi(x, 0.0))
