"""Mollified particle scheme for measure data: u^eps = sum_i p_i G^eps(x - X_i).

Particles move with U^eps = rho_eps * [(u^eps)^2 - (u^eps_x)^2]; weights never change.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .eulerian import EulerianField, weak_residual
from .kernel import Mollifier, build_green_table
from .momentum import label_grid

QUAD_NODES = 16


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    weights: np.ndarray
    epsilon: float
    t: float = 0.0

    @property
    def m1(self):
        return float(np.sum(np.abs(self.weights)))

    def moved(self, positions, t):
        return ParticleEnsemble(positions, self.weights, self.epsilon, t)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# t={self.t:.17g}, eps={self.epsilon:.17g}\n")
            fh.write("x,p\n")
            for x, p in zip(self.positions, self.weights):
                fh.write(f"{x:.17g},{p:.17g}\n")


def default_epsilon(m):
    return 0.05 * m.L


def ensemble_from_momentum(m, N=129, epsilon=None, rule="gregory"):
    """One particle per label node (weight w_j m0(xi_j)) plus one per atom."""
    eps = default_epsilon(m) if epsilon is None else epsilon
    xs, ps = [], []
    if m.has_density:
        grid = label_grid(m.L, N, rule)
        xs.append(grid.nodes)
        ps.append(grid.weights * m.density(grid.nodes))
    if m.atoms:
        xs.append(np.array([a.position for a in m.atoms]))
        ps.append(np.array([a.weight for a in m.atoms]))
    X = np.concatenate(xs) if xs else np.zeros(0)
    P = np.concatenate(ps) if ps else np.zeros(0)
    keep = P != 0
    return ParticleEnsemble(X[keep], P[keep], eps, 0.0)


def make_table(ens, mollifier="bump", extent=None):
    moll = mollifier if isinstance(mollifier, Mollifier) else Mollifier(mollifier, ens.epsilon)
    if moll.epsilon != ens.epsilon:
        raise ValueError("mollifier and ensemble epsilon differ")
    R = 2.0 * ens.epsilon if extent is None else extent
    return build_green_table(moll, R)


# --- field evaluation ---------------------------------------------------------

def reg_fields(ens, table, x):
    """u^eps and u^eps_x at x.

    Particles farther than eps from x see the pure exponential K*G, summed with
    prefix sums over the sorted positions; only the near ones use the table.
    """
    if table.epsilon != ens.epsilon:
        raise ValueError("table epsilon differs from the ensemble")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if len(ens.positions) == 0:
        return np.zeros_like(x), np.zeros_like(x)
    eps = ens.epsilon
    order = np.argsort(ens.positions, kind="stable")
    X = ens.positions[order]
    p = ens.weights[order]
    shift = 0.5 * (X[0] + X[-1])
    Xs, xs = X - shift, x - shift
    K = table.tail
    P = np.concatenate([[0.0], np.cumsum(np.exp(Xs) * p)])
    Q = np.concatenate([np.cumsum((np.exp(-Xs) * p)[::-1])[::-1], [0.0]])
    lo = np.searchsorted(X, x - eps, side="left")
    hi = np.searchsorted(X, x + eps, side="right")
    with np.errstate(over="ignore", invalid="ignore"):
        left = np.where(lo > 0, 0.5 * K * np.exp(-xs) * P[lo], 0.0)
        right = np.where(hi < len(X), 0.5 * K * np.exp(xs) * Q[hi], 0.0)
    u = left + right
    ux = right - left
    width = int(np.max(hi - lo)) if len(x) else 0
    if width > 0:
        idx = lo[:, None] + np.arange(width)[None, :]
        mask = idx < hi[:, None]
        idx = np.where(mask, idx, 0)
        d = x[:, None] - X[idx]
        pw = np.where(mask, p[idx], 0.0)
        u = u + np.sum(pw * table.value(d), axis=1)
        ux = ux + np.sum(pw * table.deriv(d), axis=1)
    return u, ux


def reg_fields_direct(ens, table, x):
    """Dense O(N M) evaluation, used as an oracle for reg_fields."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x[:, None] - ens.positions[None, :]
    return table.value(d) @ ens.weights, table.deriv(d) @ ens.weights


def reg_density(ens, moll, x):
    """m^eps(x) = sum_i p_i rho_eps(x - X_i)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if len(ens.positions) == 0:
        return np.zeros_like(x)
    order = np.argsort(ens.positions, kind="stable")
    X = ens.positions[order]
    p = ens.weights[order]
    lo = np.searchsorted(X, x - moll.epsilon, side="left")
    hi = np.searchsorted(X, x + moll.epsilon, side="right")
    width = int(np.max(hi - lo)) if len(x) else 0
    if width == 0:
        return np.zeros_like(x)
    idx = lo[:, None] + np.arange(width)[None, :]
    mask = idx < hi[:, None]
    idx = np.where(mask, idx, 0)
    return np.sum(np.where(mask, p[idx], 0.0) * moll(x[:, None] - X[idx]), axis=1)


def _quadrature(table, Q):
    gx, gw = np.polynomial.legendre.leggauss(Q)
    eps = table.epsilon
    y = eps * gx
    w = eps * gw * table.mollifier(y)
    # unit discrete mass, so constant fields are reproduced exactly
    return y, w / w.sum()


@dataclass(eq=False)
class VelocityEval:
    U: np.ndarray
    max_u: float
    max_ux: float


def reg_velocity(ens, table, Q=QUAD_NODES, full=False):
    """U_i = int rho_eps(y) [(u^eps)^2 - (u^eps_x)^2](X_i - y) dy by Q-point Gauss-Legendre."""
    y, w = _quadrature(table, Q)
    pts = (ens.positions[:, None] - y[None, :]).ravel()
    u, ux = reg_fields(ens, table, pts)
    F = (u * u - ux * ux).reshape(len(ens.positions), len(y))
    U = F @ w
    if full:
        if len(U) == 0:
            return VelocityEval(U, 0.0, 0.0)
        return VelocityEval(U, float(np.max(np.abs(u))), float(np.max(np.abs(ux))))
    return U


@dataclass(eq=False)
class RegTrajectory:
    t: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    max_U: list = field(default_factory=list)
    max_u: list = field(default_factory=list)
    max_ux: list = field(default_factory=list)
    weights: np.ndarray = None
    epsilon: float = None

    def ensemble(self, k):
        return ParticleEnsemble(self.positions[k], self.weights, self.epsilon, self.t[k])


def default_dt(ens, dt_max=1e-2, c_safe=1.0):
    M1 = ens.m1
    return min(dt_max, c_safe * ens.epsilon / max(M1 * M1, 1e-12))


def reg_evolve(ens, table, tEnd, dt=None, observer=None, Q=QUAD_NODES):
    """RK4 on particle positions with a fixed step (dt divides the horizon evenly).

    Never stops on coincident particles. observer(ensemble) is called at every
    step, including the initial one.
    """
    if not tEnd > ens.t:
        raise ValueError("tEnd must exceed the ensemble time")
    span = tEnd - ens.t
    dt = default_dt(ens) if dt is None else dt
    n = max(1, int(np.ceil(span / dt - 1e-9)))
    dt = span / n
    traj = RegTrajectory(weights=ens.weights, epsilon=ens.epsilon)

    def vel(X):
        return reg_velocity(ens.moved(X, 0.0), table, Q, full=True)

    cur = ens
    ev = vel(cur.positions)
    for k in range(n + 1):
        traj.t.append(cur.t)
        traj.positions.append(cur.positions)
        traj.max_U.append(float(np.max(np.abs(ev.U), initial=0.0)))
        traj.max_u.append(ev.max_u)
        traj.max_ux.append(ev.max_ux)
        if observer is not None:
            observer(cur)
        if k == n:
            break
        X = cur.positions
        k1 = ev.U
        k2 = vel(X + 0.5 * dt * k1).U
        k3 = vel(X + 0.5 * dt * k2).U
        k4 = vel(X + dt * k3).U
        t_new = ens.t + (k + 1) * dt
        cur = cur.moved(X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), t_new)
        ev = vel(cur.positions)
    return traj


def single_peakon_speed(p, epsilon, mollifier="bump", Q=QUAD_NODES):
    """Speed of one isolated particle of weight p; constant in time for a lone particle."""
    ens = ParticleEnsemble(np.zeros(1), np.array([float(p)]), epsilon)
    return float(reg_velocity(ens, make_table(ens, mollifier), Q)[0])


def field_snapshot(ens, table, x):
    u, ux = reg_fields(ens, table, x)
    m = reg_density(ens, table.mollifier, x)
    return EulerianField(np.asarray(x, dtype=float), u, ux, m, ens.t)


# --- weak consistency -----------------------------------------------------------

@dataclass(eq=False)
class SweepResult:
    eps: list
    E: list
    slope: float
    monotone: bool
    signed: list = None

    def to_dict(self):
        return {"eps": list(self.eps), "E": list(self.E), "slope": self.slope,
                "monotone": self.monotone}


def worker_count():
    try:
        n = int(os.environ.get("MCH_THREADS", "0"))
    except ValueError:
        n = 0
    return max(1, n) if n else max(1, min(4, os.cpu_count() or 1))


def consistency_residuals(m, eps, phis, T, N=129, mollifier="bump", points_per_eps=16, dt=None):
    """E_eps = L(u^eps, phi) + int phi(x,0) dm0 for each test function."""
    ens = ensemble_from_momentum(m, N, eps)
    table = make_table(ens, mollifier)
    h = eps / points_per_eps
    grids = []
    for phi in phis:
        lo, hi = phi.support
        n = int(np.ceil((hi - lo) / h))
        grids.append(np.linspace(lo, hi, n + 1))
    snaps = [[] for _ in phis]

    def observe(cur):
        for k, x in enumerate(grids):
            snaps[k].append(field_snapshot(cur, table, x))

    reg_evolve(ens, table, T, dt=dt, observer=observe)
    return [weak_residual(s, phi, m) for s, phi in zip(snaps, phis)]


def consistency_sweep(m, epsList, phiFamily, T, N=129, mollifier="bump", dt=None):
    """|E_eps| over an eps list and the log-log regression slope."""
    epsList = [float(e) for e in epsList]
    if len(epsList) < 4 or any(b >= a for a, b in zip(epsList, epsList[1:])):
        raise ValueError("epsList must be strictly decreasing with at least 4 entries")
    phis = list(phiFamily)

    def one(eps):
        return consistency_residuals(m, eps, phis, T, N, mollifier, dt=dt)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        signed = list(pool.map(one, epsList))
    E = [max(abs(v) for v in row) for row in signed]
    if all(e > 0 for e in E):
        slope = float(np.polyfit(np.log(epsList), np.log(E), 1)[0])
    else:
        slope = 0.0
    monotone = all(b < a for a, b in zip(E, E[1:]))
    return SweepResult(epsList, E, slope, monotone, signed)
