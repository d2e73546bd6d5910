"""Lifespan bounds, blow-up detection, collapsed label intervals and the limit measure."""

from dataclasses import dataclass, field

import numpy as np

from .flow import (FlowState, NonMonotoneError, advance, cumulative_time_integral, evolve,
                   init_flow, velocity_profile)
from .eulerian import kernel_sums
from .momentum import momentum_from_samples, partial_integral


# --- analytic bounds ----------------------------------------------------------

def blowup_time_bound(M1, m0_value, ux0):
    """Upper bound on the blow-up time from one label, or None if the label is no witness.

    Returns (t_star, t_sub_star, C) where t_star < t_sub_star are the roots of
    M1^3 t^2 / 2 + 2 ux0 t + 1/m0 and C = M1^3 t_sub_star / 2.
    """
    a = 0.5 * M1**3
    if m0_value > 0 and -ux0 > np.sqrt(M1**3 / (2.0 * m0_value)):
        root = np.sqrt(ux0**2 - M1**3 / (2.0 * m0_value))
        return (-ux0 - root) / a, (-ux0 + root) / a, -ux0 + root
    if m0_value < 0 and ux0 > np.sqrt(M1**3 / (-2.0 * m0_value)):
        root = np.sqrt(ux0**2 + M1**3 / (2.0 * m0_value))
        return (ux0 - root) / a, (ux0 + root) / a, ux0 + root
    return None


@dataclass
class LifespanBounds:
    lower: float
    tStar: float = None
    tSubStar: float = None
    witnessLabel: float = None
    witnessIndex: int = None
    witnessM0: float = None
    witnessUx: float = None
    rateC: float = None

    def quadratic(self, t, M1):
        """M1^3 t^2/2 + 2 u0'(xi0) t + 1/m0(xi0)."""
        return 0.5 * M1**3 * t**2 + 2.0 * self.witnessUx * t + 1.0 / self.witnessM0


def lifespan_bounds(m, N=257, rule="gregory"):
    lower = 1.0 / (m.mInfNorm * m.m1Norm)
    state = init_flow(m, N, rule)
    ux0 = velocity_profile(state).ux
    best = LifespanBounds(lower)
    for i, (mv, uv) in enumerate(zip(state.m0, ux0)):
        b = blowup_time_bound(m.m1Norm, mv, uv)
        if b is not None and (best.tStar is None or b[0] < best.tStar):
            best = LifespanBounds(lower, b[0], b[1], float(state.labels.nodes[i]), i,
                                  float(mv), float(uv), b[2])
    return best


# --- blow-up runs -------------------------------------------------------------

@dataclass(eq=False)
class BlowupReport:
    blew_up: bool
    t_max: float
    lower_bound: float
    t_star: float
    colliding_labels: list
    rate_constant: float
    rate_r2: float
    criteria: dict
    reason: str = ""
    delta_stop: float = 1e-4
    N: int = 0
    state: object = None
    trajectory: object = None
    bounds: object = None

    def to_dict(self):
        return {
            "t_max": self.t_max,
            "lower_bound": self.lower_bound,
            "t_star": self.t_star,
            "colliding_labels": [int(i) for i in self.colliding_labels],
            "rate_constant": self.rate_constant,
            "rate_r2": self.rate_r2,
            "blew_up": self.blew_up,
            "reason": self.reason,
            "delta_stop": self.delta_stop,
            "N": self.N,
            "criteria": self.criteria,
        }


def _bisect(prev, dt, ok, rel_tol=1e-6):
    """Largest step in (0, dt) with ok(advance(prev, tau)) true, to rel_tol in time."""
    lo, hi = 0.0, dt
    while hi - lo > rel_tol * (prev.t + hi):
        mid = 0.5 * (lo + hi)
        try:
            good = ok(advance(prev, mid))
        except NonMonotoneError:
            good = False
        if good:
            lo = mid
        else:
            hi = mid
    return lo, hi


def fit_rate(trajectory, t_max, delta_stop):
    """Least squares 1/|m|_inf ~ C (T - t) + b over the final decade of min X_xi."""
    t = trajectory.column("t")
    minx = trajectory.column("min_xxi")
    minf = trajectory.column("m_inf")
    sel = minx <= 10.0 * delta_stop
    if sel.sum() < 5:
        sel = np.zeros_like(sel)
        sel[-min(10, len(sel)):] = True
    x = t_max - t[sel]
    y = 1.0 / minf[sel]
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / sst if sst > 0 else 1.0
    return float(slope), float(r2), int(sel.sum())


def criteria_diagnostics(trajectory, state, delta_stop):
    """The six blow-up indicators plus their discrete co-firing proxies."""
    t = trajectory.arrays("t")
    Y = trajectory.arrays("Xxi")
    ux = trajectory.arrays("ux")
    m0 = trajectory.m0
    m_inf = trajectory.column("m_inf")
    min_mux = trajectory.column("min_mux")
    minx = trajectory.column("min_xxi")
    int_mux = cumulative_time_integral(t, (m0 / Y) * ux)
    m = state.m0 / state.Xxi
    dX = np.diff(state.X)
    w11 = float(np.sum(state.labels.weights * np.abs(m) * state.Xxi)
                + np.sum(np.abs(np.diff(m) / dX) * dX))
    final = minx <= 10.0 * delta_stop
    if not final.any():
        final[-1] = True
    m0_inf = float(np.max(np.abs(m0)))
    inf_mux_initial = float(min_mux[0])
    out = {
        "m_inf_max": float(m_inf.max()),
        "m_inf_initial": float(m_inf[0]),
        "min_xxi": float(minx.min()),
        "min_int_mux": float(int_mux[-1].min()),
        "inf_mux": float(min_mux.min()),
        "inf_mux_initial": inf_mux_initial,
        "w11_norm": w11,
        "int_m_inf_dt": float(np.trapezoid(m_inf, t)),
    }
    out["growth_fires"] = bool(out["m_inf_max"] > 10.0 * m0_inf)
    out["xxi_fires"] = bool(out["min_xxi"] < delta_stop)
    out["int_mux_fires"] = bool(out["min_int_mux"] < 0.5 * np.log(delta_stop))
    out["inf_mux_fires"] = bool(min_mux[final].min() < -10.0 * abs(inf_mux_initial))
    out["all_fire"] = all(out[k] for k in ("growth_fires", "xxi_fires", "int_mux_fires", "inf_mux_fires"))
    return out


def run_to_blowup(m, N=129, deltaStop=1e-4, t_end=None, dt_max=1e-2, c_safe=0.1,
                  rule="gregory", bounds=None):
    """Evolve until min X_xi < deltaStop, refine the crossing time, fit the rate."""
    if not (0 < deltaStop <= 0.1):
        raise ValueError("deltaStop must lie in (0, 0.1]")
    if bounds is None:
        bounds = lifespan_bounds(m, N, rule)
    if t_end is None:
        t_end = 50.0 * bounds.lower if bounds.tStar is None else 2.0 * bounds.tStar
    state = init_flow(m, N, rule)
    res = evolve(state, t_end, dt_max=dt_max, c_safe=c_safe, delta_stop=deltaStop)
    traj = res.trajectory
    if res.reason == "t_end":
        return BlowupReport(False, None, bounds.lower, bounds.tStar, [], None, None,
                            criteria_diagnostics(traj, res.state, deltaStop),
                            reason=f"no blow-up before t={t_end:.6g}", delta_stop=deltaStop,
                            N=N, state=res.state, trajectory=traj, bounds=bounds)
    prev = res.previous
    if res.reason == "collapse":
        lo, hi = _bisect(prev, res.last_dt, lambda s: s.Xxi.min() >= deltaStop)
        final = advance(prev, hi)
        traj.drop_last()
        reason = "collapse"
    else:
        lo, hi = _bisect(prev, res.last_dt, lambda s: s.Xxi.min() >= deltaStop)
        final = advance(prev, lo) if lo > 0 else prev
        reason = "crossing"
    if final.t > prev.t:
        traj.record(final, velocity_profile(final))
    t_max = prev.t + hi
    rate, r2, _ = fit_rate(traj, t_max, deltaStop)
    colliding = [int(i) for i in np.nonzero(final.Xxi < deltaStop)[0]]
    return BlowupReport(True, float(t_max), bounds.lower, bounds.tStar, colliding, rate, r2,
                        criteria_diagnostics(traj, final, deltaStop), reason=reason,
                        delta_stop=deltaStop, N=N, state=final, trajectory=traj, bounds=bounds)


# --- diagnostics along the run ------------------------------------------------

def ux_rate(trajectory):
    """Largest |d/dt u_x(X(xi,t),t)| over labels, from consecutive logged steps."""
    t = trajectory.arrays("t")
    ux = trajectory.arrays("ux")
    dt = np.diff(t)
    keep = dt > 0
    return float(np.max(np.abs(np.diff(ux, axis=0)[keep]) / dt[keep, None]))


def lagrangian_rate_margin(trajectory, bounds):
    """min over logged times of C m0(xi0) (t* - t) - min X_xi (>= 0 when the bound holds)."""
    t = trajectory.column("t")
    minx = trajectory.column("min_xxi")
    return float(np.min(bounds.rateC * bounds.witnessM0 * (bounds.tStar - t) - minx))


# --- collapsed intervals and the limit measure --------------------------------

@dataclass(frozen=True)
class LabelInterval:
    start: int
    stop: int     # inclusive

    @property
    def single(self):
        return self.start == self.stop

    def __len__(self):
        return self.stop - self.start + 1


def collapse_intervals(state, deltaStop):
    """Maximal runs of consecutive labels with X_xi < deltaStop."""
    below = np.asarray(state.Xxi) < deltaStop
    out = []
    i, n = 0, len(below)
    while i < n:
        if below[i]:
            j = i
            while j + 1 < n and below[j + 1]:
                j += 1
            out.append(LabelInterval(i, j))
            i = j + 1
        else:
            i += 1
    return out


def interval_bounds(labels, interval):
    """Label-space ends of the cells owned by an interval of nodes."""
    nodes = labels.nodes
    h = labels.h
    a = max(nodes[0], nodes[interval.start] - 0.5 * h)
    b = min(nodes[-1], nodes[interval.stop] + 0.5 * h)
    return float(a), float(b)


@dataclass(eq=False)
class MeasureSolution:
    atoms: list                  # [(x, p)]
    density_x: np.ndarray
    density_m: np.ndarray
    density_mass: np.ndarray     # |m1| mass carried by each surviving label
    flagged: list = field(default_factory=list)

    def total_variation(self):
        return float(sum(abs(p) for _, p in self.atoms) + np.sum(self.density_mass))

    def to_dict(self):
        return {"atoms": [{"x": float(x), "p": float(p)} for x, p in self.atoms],
                "density": [{"x": float(x), "m": float(v)}
                            for x, v in zip(self.density_x, self.density_m)]}


def ux_jump(state, interval, eta=1e-8):
    """u_x just left of a collapsed cluster minus u_x just right of it (direct kernel sums)."""
    q = state.labels.weights * state.m0
    xs = np.array([state.X[interval.start] - eta, state.X[interval.stop] + eta])
    _, ux = kernel_sums(state.X, q, xs)
    return float(ux[0] - ux[1])


def limit_measure(state, intervals):
    """Atoms from multi-label collapsed intervals, density m0/X_xi on the remaining labels."""
    surviving = np.ones(len(state.X), dtype=bool)
    atoms, flagged = [], []
    for iv in intervals:
        if iv.single:
            flagged.append(iv.start)
            continue
        a, b = interval_bounds(state.labels, iv)
        p = partial_integral(state.momentum, a, b)
        x = 0.5 * (state.X[iv.start] + state.X[iv.stop])
        atoms.append((float(x), p))
        surviving[iv.start:iv.stop + 1] = False
    w = state.labels.weights
    return MeasureSolution(atoms, state.X[surviving], (state.m0 / state.Xxi)[surviving],
                           (w * np.abs(state.m0))[surviving], flagged)


def design_collapse_datum(base, N, t_target, center, halfwidth, iterations=40, relax=0.5,
                          gain=1.6, rule="gregory"):
    """Reshape m0 on a label block so that the whole block collapses near t_target.

    X_xi is passive in the discrete dynamics (X_xi - 1 = 2 m0 int u_x), so the
    block values are updated by m0 <- m0 (target - 1)/(X_xi(t_target) - 1) with
    a smooth blend towards the unmodified profile at the block edges.
    """
    state0 = init_flow(base, N, rule)
    xi = state0.labels.nodes
    s = (xi - center) / halfwidth
    blend = np.where(np.abs(s) < 1, np.minimum(1.0, gain * np.clip(1 - s * s, 0, None) ** 3), 0.0)
    if np.any((blend > 0) & (state0.m0 <= 0)):
        raise ValueError("design block must lie where the base momentum is positive")
    base_m0 = state0.m0.copy()
    m0 = base_m0.copy()
    for _ in range(iterations):
        st = FlowState(0.0, xi.copy(), np.ones(N), state0.labels, base, m0, state0.signs)
        res = evolve(st, t_target)
        Y = res.state.Xxi
        target = Y * (1 - blend)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = np.where((blend > 0) & (np.abs(Y - 1) > 1e-12), m0 * (target - 1) / (Y - 1), base_m0)
        m0 = (1 - relax) * m0 + relax * new
    return momentum_from_samples(xi, m0, base.L, descriptor=f"designed({base.descriptor})")
