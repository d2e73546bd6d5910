"""Scenario runner: `mch run <config> [--out DIR] [--svg]` and `mch verify <report.json>`."""

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import blowup as bu
from .eulerian import (EulerianField, TestFunction, l1_distance, reconstruct,
                       total_variation, weak_residual)
from .flow import evolve, init_flow
from .kernel import SHAPES, green, green_prime
from .momentum import MomentumError, build_momentum, scale
from .regularized import (ensemble_from_momentum, field_snapshot, make_table, reg_evolve,
                          consistency_residuals, consistency_sweep, worker_count)
from .svg import Snapshot, emit_svg

SCENARIOS = ("classical", "blowup", "lifespan-scan", "peakon-formation", "continuation",
             "consistency-sweep", "weak-check")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    momentum: str = "bump(4)"
    N: int = 129
    delta_stop: float = 1e-4
    epsilon: float = 0.0           # 0 selects 0.05 L
    eps_list: tuple = ()
    t_end: float = 0.0             # 0 selects a scenario default
    out: str = "out"
    snapshot_every: int = 10
    svg: bool = False
    nx: int = 2001
    mollifier: str = "bump"
    phi_center: float = 0.0
    phi_width: float = 0.0         # 0 selects L
    collapse_threshold: float = 0.0  # 0 selects 10 delta_stop
    design_t_target: float = 0.0   # > 0 reshapes the datum before the peakon run
    design_center: float = 0.0
    design_halfwidth: float = 0.0

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(float(e)) for e in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_REQUIRED_T_END = ("classical", "consistency-sweep", "weak-check")


def _coerce(name, ftype, raw):
    try:
        if ftype is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is tuple:
            return tuple(float(e) for e in raw.split(",") if e.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text):
    types = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
    types = {k: {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}.get(v, v)
             for k, v in types.items()}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    if "scenario" not in values:
        raise ConfigError("missing scenario")
    cfg = ScenarioConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; expected one of {', '.join(SCENARIOS)}")
    if cfg.N < 33 or cfg.N % 2 == 0:
        raise ConfigError("N must be odd and at least 33")
    if not 0 < cfg.delta_stop <= 0.1:
        raise ConfigError("delta_stop must lie in (0, 0.1]")
    for name in ("epsilon", "t_end", "phi_width", "collapse_threshold", "design_t_target",
                 "design_halfwidth"):
        if getattr(cfg, name) < 0 or not math.isfinite(getattr(cfg, name)):
            raise ConfigError(f"{name} must be nonnegative")
    if any(not (e > 0 and math.isfinite(e)) for e in cfg.eps_list):
        raise ConfigError("eps_list entries must be positive")
    if cfg.snapshot_every < 1 or cfg.nx < 3:
        raise ConfigError("snapshot_every must be >= 1 and nx >= 3")
    if cfg.mollifier not in SHAPES:
        raise ConfigError(f"unknown mollifier {cfg.mollifier!r}")
    if cfg.scenario in _REQUIRED_T_END and cfg.t_end <= 0:
        raise ConfigError(f"scenario {cfg.scenario} needs t_end > 0")
    if cfg.scenario == "lifespan-scan" and not cfg.eps_list:
        raise ConfigError("lifespan-scan needs eps_list")
    if cfg.scenario == "consistency-sweep":
        e = cfg.eps_list
        if len(e) < 4 or any(b >= a for a, b in zip(e, e[1:])):
            raise ConfigError("consistency-sweep needs a strictly decreasing eps_list of >= 4 entries")
    if cfg.design_t_target > 0 and cfg.design_halfwidth <= 0:
        raise ConfigError("design_halfwidth must be positive when design_t_target is set")


# --- output helpers -----------------------------------------------------------

def dumps(obj, indent=0):
    """JSON with every float printed to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{dumps(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def check(name, value, bound, op="<="):
    value = float(value)
    bound = float(bound)
    ok = value <= bound if op == "<=" else value >= bound
    return {"name": name, "value": value, "bound": bound, "op": op, "pass": bool(ok)}


def recheck(entry):
    if entry["op"] == "<=":
        return entry["value"] <= entry["bound"]
    if entry["op"] == ">=":
        return entry["value"] >= entry["bound"]
    raise ValueError(f"unknown comparison {entry['op']!r}")


def _x_grid(m, n):
    return np.linspace(-m.L - 1.0, m.L + 1.0, n)


def _field_checks(fields, M1, tag):
    out = [check(f"{tag}_tv_u", max(total_variation(f.u) for f in fields), M1 + 1e-6),
           check(f"{tag}_tv_ux", max(total_variation(f.ux) for f in fields), 2 * M1 + 1e-6)]
    lip_u, lip_ux = 0.0, 0.0
    for i, a in enumerate(fields):
        for b in fields[i + 1:]:
            dt = abs(b.t - a.t)
            if dt == 0:
                continue
            lip_u = max(lip_u, l1_distance(a.u, b.u, a.x) - 0.5 * M1**3 * dt)
            lip_ux = max(lip_ux, l1_distance(a.ux, b.ux, a.x) - M1**3 * dt)
    out.append(check(f"{tag}_lipschitz_u_excess", lip_u, 1e-6))
    out.append(check(f"{tag}_lipschitz_ux_excess", lip_ux, 1e-6))
    return out


def _traj_checks(traj, m):
    M1 = m.m1Norm
    L = m.L
    X = traj.arrays("X")
    l1 = traj.column("m_l1")
    signs = np.sign(traj.m0)
    Y = traj.arrays("Xxi")
    return [
        check("support_pinning", max(np.abs(X[:, 0] + L).max(), np.abs(X[:, -1] - L).max()), 1e-9),
        check("max_u", np.abs(traj.arrays("u")).max(), 0.5 * M1 + 1e-9),
        check("max_ux", np.abs(traj.arrays("ux")).max(), 0.5 * M1 + 1e-9),
        check("max_U", np.abs(traj.arrays("U")).max(), 0.5 * M1**2 + 1e-9),
        check("mass_drift", np.abs(l1 / l1[0] - 1).max(), 1e-6),
        check("sign_flips", int(np.sum(np.sign(traj.m0 / Y) != signs)), 0),
        check("ux_rate", bu.ux_rate(traj), 0.5 * M1**3 + 1e-6),
    ]


def _state_at(traj, k, template):
    return template.evolved(traj.t[k], traj.X[k], traj.Xxi[k])


def _snapshot_indices(n, every):
    idx = list(range(0, n, every))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    return idx


def _classical_fields(traj, template, x, every, skip_collapsed=0.0):
    fields, snaps = [], []
    for k in _snapshot_indices(len(traj.t), every):
        st = _state_at(traj, k, template)
        f = reconstruct(st, x)
        fields.append(f)
        snaps.append(Snapshot(st.t, x, f.u, f.m, st.labels.nodes, st.Xxi))
    return fields, snaps


# --- scenarios ----------------------------------------------------------------

def _run_classical(cfg, m, out):
    st = init_flow(m, cfg.N)
    res = evolve(st, cfg.t_end, delta_stop=cfg.delta_stop)
    traj = res.trajectory
    traj.write_csv(os.path.join(out, "trajectory.csv"))
    x = _x_grid(m, cfg.nx)
    fields, snaps = _classical_fields(traj, st, x, cfg.snapshot_every)
    os.makedirs(os.path.join(out, "snapshots"), exist_ok=True)
    for k, f in enumerate(fields):
        f.write_csv(os.path.join(out, "snapshots", f"field_{k:04d}.csv"))
    M1 = m.m1Norm
    inv = _traj_checks(traj, m) + _field_checks(fields, M1, "eulerian")
    idx = _snapshot_indices(len(traj.t), cfg.snapshot_every)
    resolved = [f for f, k in zip(fields, idx) if traj.log[k][1] >= 1e-2]
    if resolved:
        err = max(abs(np.trapezoid(np.abs(f.m), f.x) / M1 - 1) for f in resolved)
        inv.append(check("eulerian_mass", err, 1e-4))
    keep = 0.0
    for k in idx:
        s = _state_at(traj, k, st)
        keep = max(keep, np.abs(reconstruct(s, s.X).m * s.Xxi - s.m0).max())
    inv.append(check("keepsign", keep, 1e-8))
    results = {"reason": res.reason, "t_final": res.state.t, "steps": len(traj.t) - 1,
               "min_xxi": float(res.state.Xxi.min()), "M1": M1, "M_inf": m.mInfNorm}
    return results, inv, snaps


def _blowup_checks(rep, m):
    inv = []
    if not rep.blew_up:
        return inv
    inv.append(check("t_max_lower", rep.t_max, rep.lower_bound - 1e-4, ">="))
    if rep.t_star is not None:
        inv.append(check("t_max_upper", rep.t_max, rep.t_star + 1e-3))
        inv.append(check("lagrangian_rate_margin",
                         bu.lagrangian_rate_margin(rep.trajectory, rep.bounds), -1e-9, ">="))
    inv.append(check("rate_r2", rep.rate_r2, 0.99, ">="))
    inv.append(check("criteria_cofire", int(rep.criteria["all_fire"]), 1, ">="))
    return inv


def _run_blowup(cfg, m, out):
    rep = bu.run_to_blowup(m, cfg.N, cfg.delta_stop, t_end=cfg.t_end or None)
    rep.trajectory.write_csv(os.path.join(out, "trajectory.csv"))
    inv = _traj_checks(rep.trajectory, m) + _blowup_checks(rep, m)
    st = rep.state
    f = reconstruct(st, _x_grid(m, cfg.nx))
    snaps = [Snapshot(st.t, f.x, f.u, f.m, st.labels.nodes, st.Xxi)]
    return rep.to_dict(), inv, snaps


def _run_lifespan(cfg, m, out):
    def one(eps):
        return bu.run_to_blowup(scale(m, eps), cfg.N, cfg.delta_stop)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        reports = list(pool.map(one, cfg.eps_list))
    lower = 1.0 / (m.mInfNorm * m.m1Norm)
    upper = 1.0 / m.m1Norm**2
    rows, inv = [], []
    with open(os.path.join(out, "scan.csv"), "w") as fh:
        fh.write("eps,t_max,scaled,lower,upper\n")
        for eps, rep in zip(cfg.eps_list, reports):
            scaled = rep.t_max * eps**2 if rep.blew_up else float("nan")
            rows.append({"eps": eps, "t_max": rep.t_max, "scaled": scaled,
                         "t_star": rep.t_star, "blew_up": rep.blew_up})
            t_max = rep.t_max if rep.blew_up else float("nan")
            fh.write(",".join(format(v, ".17g") for v in (eps, t_max, scaled, lower, upper)) + "\n")
            inv.append(check(f"scaled_lower_eps_{eps:g}", scaled if rep.blew_up else -1.0,
                             lower - 1e-3, ">="))
            inv.append(check(f"scaled_upper_eps_{eps:g}", scaled if rep.blew_up else math.inf,
                             upper + 1e-3))
    return {"rows": rows, "lower": lower, "upper": upper}, inv, []


def _run_peakon(cfg, m, out):
    if cfg.design_t_target > 0:
        m = bu.design_collapse_datum(m, cfg.N, cfg.design_t_target, cfg.design_center,
                                     cfg.design_halfwidth)
        xi = init_flow(m, cfg.N).labels.nodes
        with open(os.path.join(out, "datum.csv"), "w") as fh:
            fh.write("xi,m0\n")
            for a, b in zip(xi, m.density(xi)):
                fh.write(f"{a:.17g},{b:.17g}\n")
    rep = bu.run_to_blowup(m, cfg.N, cfg.delta_stop)
    inv = _traj_checks(rep.trajectory, m) + _blowup_checks(rep, m)
    results = rep.to_dict()
    snaps = []
    if rep.blew_up:
        thr = cfg.collapse_threshold or 10.0 * cfg.delta_stop
        st = rep.state
        ivs = bu.collapse_intervals(st, thr)
        meas = bu.limit_measure(st, ivs)
        with open(os.path.join(out, "measure.json"), "w") as fh:
            fh.write(dumps(meas.to_dict()) + "\n")
        results["intervals"] = [[iv.start, iv.stop] for iv in ivs]
        results["flagged_single_labels"] = meas.flagged
        inv.append(check("limit_mass", abs(meas.total_variation() / m.m1Norm - 1), 0.02))
        for iv in ivs:
            if not iv.single:
                s = np.sign(st.m0[iv.start:iv.stop + 1])
                inv.append(check(f"constant_sign_{iv.start}_{iv.stop}",
                                 int(np.any(s != s[0]) or s[0] == 0), 0))
        multi = [iv for iv in ivs if not iv.single]
        for iv, (x, p) in zip(multi, meas.atoms):
            inv.append(check(f"atom_nonzero_{x:.6f}", abs(p), 1e-12, ">="))
            inv.append(check(f"jump_vs_weight_{x:.6f}", abs(bu.ux_jump(st, iv) / p - 1), 0.05))
        f = reconstruct(st, _x_grid(m, cfg.nx))
        snaps = [Snapshot(st.t, f.x, f.u, f.m, st.labels.nodes, st.Xxi)]
    return results, inv, snaps


def _run_continuation(cfg, m, out):
    results = {}
    horizon = cfg.t_end
    if m.has_density and not m.atoms and horizon == 0:
        rep = bu.run_to_blowup(m, cfg.N, cfg.delta_stop)
        results["classical_t_max"] = rep.t_max
        horizon = 2.0 * rep.t_max if rep.blew_up else 50.0 * rep.lower_bound
    if horizon <= 0:
        raise ConfigError("continuation of this datum needs t_end > 0")
    ens = ensemble_from_momentum(m, cfg.N, cfg.epsilon or None)
    table = make_table(ens, cfg.mollifier)
    x = _x_grid(m, cfg.nx)
    fields, particles = [], []
    tr = reg_evolve(ens, table, horizon)
    os.makedirs(os.path.join(out, "particles"), exist_ok=True)
    idx = _snapshot_indices(len(tr.t), cfg.snapshot_every)
    snaps = []
    for j, k in enumerate(idx):
        e = tr.ensemble(k)
        e.write_csv(os.path.join(out, "particles", f"particles_{j:04d}.csv"))
        f = field_snapshot(e, table, x)
        fields.append(f)
        order = np.argsort(ens.positions, kind="stable")
        lab = ens.positions[order]
        dX = np.gradient(e.positions[order], lab) if len(lab) > 1 else np.ones(1)
        snaps.append(Snapshot(e.t, x, f.u, f.m, lab, dX))
    mass = ens.m1
    inv = [check("weight_change", max(abs(np.sum(np.abs(tr.weights)) - mass), 0.0), 0.0),
           check("max_u", max(tr.max_u), 0.5 * mass + 1e-9),
           check("max_ux", max(tr.max_ux), 0.5 * mass + 1e-9),
           check("max_U", max(tr.max_U), 0.5 * mass**2 + 1e-9)]
    inv += _field_checks(fields, mass, "regularized")
    results.update({"epsilon": ens.epsilon, "t_final": tr.t[-1], "steps": len(tr.t) - 1,
                    "particles": len(ens.positions), "particle_mass": mass, "M1": m.m1Norm})
    return results, inv, snaps


def _phi(cfg, m, horizon):
    return TestFunction(cfg.phi_center, cfg.phi_width or m.L, horizon)


def _run_sweep(cfg, m, out):
    phi = _phi(cfg, m, cfg.t_end)
    res = consistency_sweep(m, cfg.eps_list, [phi], cfg.t_end, cfg.N, cfg.mollifier)
    with open(os.path.join(out, "sweep.json"), "w") as fh:
        fh.write(dumps({"eps": res.eps, "E": res.E, "slope": res.slope}) + "\n")
    eps_c = cfg.eps_list[1]
    fine = consistency_residuals(m, eps_c, [phi], cfg.t_end, 2 * cfg.N - 1, cfg.mollifier)[0]
    coarse = res.signed[1][0]
    ctrl = abs(abs(fine) - abs(coarse)) / abs(coarse) if coarse else 0.0
    inv = [check("slope_low", res.slope, 0.8, ">="), check("slope_high", res.slope, 1.2),
           check("monotone", int(res.monotone), 1, ">="),
           check("particle_refinement", ctrl, 0.10)]
    return {**res.to_dict(), "control_eps": eps_c, "control_change": ctrl}, inv, []


def solitary_trajectory(p, c, phi, levels):
    """Exact u = p G(x - c - p^2 t/6) sampled at successively refined grids."""
    lo, hi = phi.support
    out = []
    for k in range(levels):
        nx = 50 * 2**k
        nt = 10 * 2**k
        x = np.linspace(lo, hi, nx + 1)
        ts = np.linspace(0.0, phi.horizon, nt + 1)
        snaps = []
        for t in ts:
            y = x - c - p * p * t / 6.0
            snaps.append(EulerianField(x, p * green(y), p * green_prime(y), np.zeros_like(x), t))
        out.append(((hi - lo) / nx, snaps))
    return out


def _run_weak(cfg, m, out):
    phi = _phi(cfg, m, cfg.t_end)
    levels = 4
    hs, res = [], []
    if not m.has_density and len(m.atoms) == 1:
        a = m.atoms[0]
        for h, snaps in solitary_trajectory(a.weight, a.position, phi, levels):
            hs.append(h)
            res.append(weak_residual(snaps, phi, m))
    elif m.has_density and not m.atoms:
        lo, hi = phi.support
        for k in range(levels - 1):
            N = (cfg.N - 1) * 2**k + 1
            st = init_flow(m, N)
            r = evolve(st, phi.horizon, dt_max=0.01 / 2**k, delta_stop=cfg.delta_stop)
            if r.reason != "t_end":
                raise ConfigError("weak-check horizon reaches the classical blow-up time")
            x = np.linspace(lo, hi, 50 * 2**k + 1)
            snaps = [reconstruct(_state_at(r.trajectory, j, st), x)
                     for j in range(len(r.trajectory.t))]
            hs.append(2 * m.L / (N - 1))
            res.append(weak_residual(snaps, phi, m))
    else:
        raise ConfigError("weak-check needs either one atom or a pure density")
    E = np.abs(res)
    order = float(np.polyfit(np.log(hs), np.log(E), 1)[0]) if np.all(E > 0) else math.inf
    inv = [check("residual_decrease", int(all(b < a for a, b in zip(E, E[1:]))), 1, ">="),
           check("observed_order", order, 1.0, ">=")]
    return {"h": hs, "residual": res, "order": order}, inv, []


RUNNERS = {"classical": _run_classical, "blowup": _run_blowup, "lifespan-scan": _run_lifespan,
           "peakon-formation": _run_peakon, "continuation": _run_continuation,
           "consistency-sweep": _run_sweep, "weak-check": _run_weak}


def run_scenario(cfg, out=None, svg=None):
    """Run one scenario; returns (exit status, report dict)."""
    validate(cfg)
    try:
        m = build_momentum(cfg.momentum)
    except (MomentumError, ValueError, OSError) as exc:
        raise ConfigError(f"momentum: {exc}") from exc
    out = out or cfg.out
    fresh = not os.path.exists(out)
    os.makedirs(out, exist_ok=True)
    try:
        results, inv, snaps = RUNNERS[cfg.scenario](cfg, m, out)
    except ConfigError:
        if fresh and not os.listdir(out):
            os.rmdir(out)
        raise
    if (cfg.svg if svg is None else svg) and snaps:
        emit_svg(snaps, out)
    report = {"scenario": cfg.scenario, "momentum": cfg.momentum,
              "M1": m.m1Norm, "M_inf": m.mInfNorm, "results": results,
              "invariants": inv, "pass": all(e["pass"] for e in inv)}
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(dumps(report) + "\n")
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    return (0 if report["pass"] else 1), report


def verify_report(path):
    with open(path) as fh:
        report = json.load(fh)
    entries = report.get("invariants", [])
    bad = []
    for e in entries:
        value = e["value"] if e["value"] is not None else math.nan
        ok = recheck({**e, "value": value})
        if ok != e["pass"] or not ok:
            bad.append(e["name"])
    return bad, len(entries)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="mch", description="Lagrangian mCH simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--out", default=None)
    r.add_argument("--svg", action="store_true", default=None)
    v = sub.add_parser("verify", help="re-check an invariant summary")
    v.add_argument("report")
    args = ap.parse_args(argv)
    if args.cmd == "verify":
        try:
            bad, n = verify_report(args.report)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        for name in bad:
            print(f"FAIL {name}")
        print(f"{n - len(bad)}/{n} invariants pass")
        return 1 if bad else 0
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
        status, report = run_scenario(cfg, args.out, args.svg)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for e in report["invariants"]:
        print(f"{'PASS' if e['pass'] else 'FAIL'} {e['name']}: {e['value']:.6g} {e['op']} {e['bound']:.6g}")
    return status


if __name__ == "__main__":
    sys.exit(main())
