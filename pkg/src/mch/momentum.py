"""Initial momenta: compactly supported densities, atoms, norms and label grids."""

import csv
import re
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar
from scipy.interpolate import CubicSpline


class MomentumError(ValueError):
    pass


# --- density profiles -------------------------------------------------------

@dataclass(frozen=True)
class BumpDensity:
    """c * (1 - s^2)^2 with s = (x - center)/width, zero for |s| >= 1."""

    c: float
    center: float = 0.0
    width: float = 1.0

    def __call__(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.width
        return np.where(np.abs(s) < 1.0, self.c * (1.0 - s * s) ** 2, 0.0)

    def _prim(self, x):
        s = np.clip((np.asarray(x, dtype=float) - self.center) / self.width, -1.0, 1.0)
        return self.c * self.width * (s - 2.0 * s**3 / 3.0 + s**5 / 5.0)

    def integral(self, a, b):
        return float(self._prim(b) - self._prim(a))

    def abs_integral(self):
        return abs(self.c) * self.width * 16.0 / 15.0

    def sup_norm(self):
        return abs(self.c)

    def extent(self):
        return self.center - self.width, self.center + self.width

    def breakpoints(self):
        return [self.center - self.width, self.center, self.center + self.width]

    def scaled(self, k):
        return replace(self, c=self.c * k)


@dataclass(frozen=True, eq=False)
class TableDensity:
    """Cubic interpolant of sampled (xi, m0) values, zero outside the table."""

    xi: np.ndarray
    values: np.ndarray
    factor: float = 1.0
    _spline: CubicSpline = field(default=None, repr=False)

    def __post_init__(self):
        if self._spline is None:
            xi = np.asarray(self.xi, dtype=float)
            if np.any(np.diff(xi) <= 0):
                raise MomentumError("sample table abscissae must be strictly increasing")
            object.__setattr__(self, "_spline", CubicSpline(xi, np.asarray(self.values, float)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.xi[0], self.xi[-1]
        inside = (x >= lo) & (x <= hi)
        return np.where(inside, self.factor * self._spline(np.clip(x, lo, hi)), 0.0)

    def integral(self, a, b):
        lo, hi = self.xi[0], self.xi[-1]
        a, b = max(a, lo), min(b, hi)
        if b <= a:
            return 0.0
        return float(self.factor * self._spline.integrate(a, b))

    def _pieces(self):
        lo, hi = self.xi[0], self.xi[-1]
        r = self._spline.roots(extrapolate=False)
        return np.unique(np.concatenate([[lo, hi], r[(r > lo) & (r < hi)]]))

    def abs_integral(self):
        cuts = self._pieces()
        return float(abs(self.factor) * sum(abs(self._spline.integrate(a, b))
                                            for a, b in zip(cuts[:-1], cuts[1:])))

    def sup_norm(self):
        lo, hi = self.xi[0], self.xi[-1]
        r = self._spline.derivative().roots(extrapolate=False)
        pts = np.concatenate([[lo, hi], r[(r >= lo) & (r <= hi)], self.xi])
        return float(abs(self.factor) * np.max(np.abs(self._spline(pts))))

    def extent(self):
        return float(self.xi[0]), float(self.xi[-1])

    def breakpoints(self):
        return list(self.xi)

    def scaled(self, k):
        return TableDensity(self.xi, self.values, self.factor * k, self._spline)


@dataclass(frozen=True)
class FunctionDensity:
    """Arbitrary vectorised callable on [lo, hi]; norms by adaptive quadrature."""

    func: object
    lo: float
    hi: float
    factor: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > self.lo) & (x < self.hi)
        return np.where(inside, self.factor * self.func(np.clip(x, self.lo, self.hi)), 0.0)

    def integral(self, a, b):
        a, b = max(a, self.lo), min(b, self.hi)
        if b <= a:
            return 0.0
        return float(quad(lambda s: float(self(s)), a, b, epsabs=1e-14, epsrel=1e-12, limit=500)[0])

    def abs_integral(self):
        return float(quad(lambda s: abs(float(self(s))), self.lo, self.hi,
                          epsabs=1e-14, epsrel=1e-12, limit=500)[0])

    def sup_norm(self):
        x = np.linspace(self.lo, self.hi, 200001)
        return float(np.max(np.abs(self(x))))

    def extent(self):
        return self.lo, self.hi

    def breakpoints(self):
        return [self.lo, self.hi]

    def scaled(self, k):
        return replace(self, factor=self.factor * k)


# --- momentum ---------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    position: float
    weight: float


@dataclass(frozen=True, eq=False)
class Momentum:
    supportRadius: float
    densities: tuple = ()
    atoms: tuple = ()
    m1Norm: float = 0.0
    mInfNorm: float = 0.0
    descriptor: str = ""

    @property
    def L(self):
        return self.supportRadius

    @property
    def has_density(self):
        return len(self.densities) > 0

    def density(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for d in self.densities:
            out = out + d(x)
        return out

    def density_integral(self, a, b):
        return sum(d.integral(a, b) for d in self.densities)

    def breakpoints(self):
        pts = {-self.L, self.L}
        for d in self.densities:
            pts.update(float(p) for p in d.breakpoints() if -self.L <= p <= self.L)
        return sorted(pts)

    def integrate(self, f, panels=64, order=10):
        """int f dm over the density part (composite Gauss-Legendre) plus the atoms."""
        total = 0.0
        if self.densities:
            gx, gw = np.polynomial.legendre.leggauss(order)
            cuts = np.array(self.breakpoints())
            if len(cuts) > 200:  # dense sample tables: plain uniform panels
                cuts = np.linspace(-self.L, self.L, 201)
            for a, b in zip(cuts[:-1], cuts[1:]):
                edges = np.linspace(a, b, max(2, int(np.ceil(panels * (b - a) / (2 * self.L))) + 1))
                mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
                half = 0.5 * np.diff(edges)[:, None]
                x = (mid + half * gx).ravel()
                w = (half * gw).ravel()
                total += float(np.sum(w * f(x) * self.density(x)))
        for atom in self.atoms:
            total += atom.weight * float(f(np.array([atom.position]))[0])
        return total


def _combined_norms(densities, L, samples=4001):
    """L1 and sup norms of a sum of densities, split at its sign changes."""
    def total(x):
        return sum(d(x) for d in densities)

    cuts = {-L, L}
    for d in densities:
        cuts.update(float(p) for p in d.breakpoints() if -L <= p <= L)
    cuts = sorted(cuts)
    pieces, peak = [], 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        x = np.linspace(a, b, max(3, int(samples * (b - a) / (2 * L))))
        v = total(x)
        k = int(np.argmax(np.abs(v)))
        lo, hi = x[max(k - 1, 0)], x[min(k + 1, len(x) - 1)]
        res = minimize_scalar(lambda s: -abs(float(total(np.array(s)))), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-13})
        peak = max(peak, abs(v[k]), -res.fun)
        roots = [a]
        for i in np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]:
            roots.append(brentq(lambda s: float(total(np.array(s))), x[i], x[i + 1], xtol=1e-15))
        roots.append(b)
        pieces += list(zip(roots[:-1], roots[1:]))
    l1 = sum(abs(sum(d.integral(a, b) for d in densities)) for a, b in pieces)
    return float(l1), float(peak)


def _finalize(L, densities, atoms, descriptor=""):
    densities = tuple(densities)
    atoms = tuple(sorted(atoms, key=lambda a: a.position))
    if not (L > 0 and np.isfinite(L)):
        raise MomentumError("support radius must be positive")
    for d in densities:
        lo, hi = d.extent()
        if lo < -L - 1e-12 or hi > L + 1e-12:
            raise MomentumError(f"density extends outside (-{L}, {L})")
    for a in atoms:
        if not (-L < a.position < L):
            raise MomentumError(f"atom at {a.position} outside (-{L}, {L})")
        if a.weight == 0:
            raise MomentumError("atom weights must be nonzero")
    pos = [a.position for a in atoms]
    if len(set(pos)) != len(pos):
        raise MomentumError("atom positions must be distinct")
    dens_l1 = 0.0
    minf = 0.0
    if densities:
        if len(densities) == 1:
            dens_l1 = densities[0].abs_integral()
            minf = densities[0].sup_norm()
        else:
            dens_l1, minf = _combined_norms(densities, L)
        edge = abs(sum(float(d(np.array(-L))) for d in densities)) + \
            abs(sum(float(d(np.array(L))) for d in densities))
        if edge > 1e-12 * max(1.0, minf):
            raise MomentumError("density does not vanish at the ends of the support")
    m1 = dens_l1 + sum(abs(a.weight) for a in atoms)
    if not m1 > 0:
        raise MomentumError("momentum has zero total variation")
    return Momentum(float(L), densities, atoms, float(m1), float(minf), descriptor)


def make_momentum(L, densities=(), atoms=(), descriptor=""):
    atoms = [a if isinstance(a, Atom) else Atom(float(a[0]), float(a[1])) for a in atoms]
    return _finalize(L, densities, atoms, descriptor)


def momentum_from_samples(xi, m0, L=None, descriptor="samples"):
    xi = np.asarray(xi, dtype=float)
    m0 = np.asarray(m0, dtype=float)
    if L is None:
        L = max(abs(xi[0]), abs(xi[-1]))
    return _finalize(L, [TableDensity(xi, m0)], [], descriptor)


def read_sample_table(path):
    xs, ms = [], []
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise MomentumError(f"empty sample table {path}")
    if [c.strip() for c in rows[0]] == ["xi", "m0"]:
        rows = rows[1:]
    try:
        for r in rows:
            xs.append(float(r[0]))
            ms.append(float(r[1]))
    except (ValueError, IndexError) as exc:
        raise MomentumError(f"bad sample table row in {path}: {exc}") from exc
    return np.array(xs), np.array(ms)


# --- descriptor parsing -----------------------------------------------------
#   bump(4)  bump(c=10, center=0, width=0.1, L=0.1)
#   atoms(0:2, 0.3:-1)  table(path.csv)  scaled(bump(1), 0.1)
#   terms joined with "+", e.g. "bump(2) + atoms(0.3:2)"

_CALL = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$", re.S)


def _split_top(text, sep):
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise MomentumError("unbalanced parentheses in momentum descriptor")
    parts.append("".join(cur))
    return [p.strip() for p in parts]


def _num(s):
    try:
        return float(s)
    except ValueError as exc:
        raise MomentumError(f"not a number: {s!r}") from exc


def _parse_term(text):
    """Return (densities, atoms, L-or-None, explicit-L?)."""
    m = _CALL.match(text)
    if not m:
        raise MomentumError(f"cannot parse momentum term {text!r}")
    name, body = m.group(1), m.group(2)
    if name == "bump":
        kw = {"c": 1.0, "center": 0.0, "width": 1.0}
        L = None
        for i, arg in enumerate(a for a in _split_top(body, ",") if a):
            if "=" in arg:
                k, v = (s.strip() for s in arg.split("=", 1))
                if k == "L":
                    L = _num(v)
                elif k in kw:
                    kw[k] = _num(v)
                else:
                    raise MomentumError(f"unknown bump parameter {k!r}")
            elif i == 0:
                kw["c"] = _num(arg)
            else:
                raise MomentumError("bump takes one positional argument")
        if kw["width"] <= 0:
            raise MomentumError("bump width must be positive")
        d = BumpDensity(kw["c"], kw["center"], kw["width"])
        return [d], [], L if L is not None else abs(kw["center"]) + kw["width"], L is not None
    if name == "atoms":
        atoms, L = [], None
        for arg in (a for a in _split_top(body, ",") if a):
            if arg.startswith("L="):
                L = _num(arg[2:])
                continue
            if ":" not in arg:
                raise MomentumError(f"atom entries are position:weight, got {arg!r}")
            x, p = arg.split(":", 1)
            atoms.append(Atom(_num(x), _num(p)))
        if not atoms:
            raise MomentumError("atoms() needs at least one entry")
        if L is None:
            L = max(1.0, 1.05 * max(abs(a.position) for a in atoms))
            return [], atoms, L, False
        return [], atoms, L, True
    if name in ("table", "csv"):
        xs, ms = read_sample_table(body.strip().strip("'\""))
        return [TableDensity(xs, ms)], [], max(abs(xs[0]), abs(xs[-1])), True
    if name == "scaled":
        args = _split_top(body, ",")
        if len(args) != 2:
            raise MomentumError("scaled(descriptor, factor) takes two arguments")
        k = _num(args[1])
        if not k > 0:
            raise MomentumError("scale factor must be positive")
        dens, atoms, L, explicit = _parse_sum(args[0])
        return [d.scaled(k) for d in dens], [Atom(a.position, a.weight * k) for a in atoms], L, explicit
    raise MomentumError(f"unknown momentum profile {name!r}")


def _parse_sum(text):
    dens, atoms, terms = [], [], []
    for term in _split_top(text, "+"):
        d, a, L, e = _parse_term(term)
        dens += d
        atoms += a
        terms.append((L, e, bool(d)))
    # explicit radii win; otherwise densities fix the support, atoms only when alone
    explicit = [L for L, e, _ in terms if e]
    if explicit:
        L = max(explicit)
    elif dens:
        L = max(L for L, _, has_d in terms if has_d)
    else:
        L = max(L for L, _, _ in terms)
    return dens, atoms, L, bool(explicit)


def build_momentum(descriptor):
    """Build a Momentum from a profile descriptor string (or pass a Momentum through)."""
    if isinstance(descriptor, Momentum):
        return descriptor
    if not isinstance(descriptor, str) or not descriptor.strip():
        raise MomentumError("empty momentum descriptor")
    dens, atoms, L, _ = _parse_sum(descriptor)
    return _finalize(L, dens, atoms, descriptor.strip())


def partial_integral(m, a, b):
    """int_a^b m0 plus the weights of atoms located in [a, b]."""
    if b < a:
        raise ValueError("partial_integral needs a <= b")
    total = m.density_integral(a, b) if a < b else 0.0
    total += sum(at.weight for at in m.atoms if a <= at.position <= b)
    return float(total)


def scale(m, eps):
    if not eps > 0:
        raise ValueError("scale factor must be positive")
    if eps == 1:
        return m
    return Momentum(m.supportRadius,
                    tuple(d.scaled(eps) for d in m.densities),
                    tuple(Atom(a.position, a.weight * eps) for a in m.atoms),
                    m.m1Norm * eps, m.mInfNorm * eps,
                    f"scaled({m.descriptor}, {eps!r})" if m.descriptor else "")


# --- label grids ------------------------------------------------------------

def simpson_weights(n, h):
    if n < 3 or n % 2 == 0:
        raise ValueError("composite Simpson needs an odd node count >= 3")
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3.0


def gregory_weights(n, h):
    """Node weights of the summed four-point interval rule (end-corrected trapezoid)."""
    if n < 8:
        raise ValueError("the four-point interval rule needs at least 8 nodes")
    w = np.ones(n)
    ends = np.array([8.0, 31.0, 20.0, 25.0]) / 24.0
    w[:4] = ends
    w[-4:] = ends[::-1]
    return w * h


@dataclass(frozen=True, eq=False)
class LabelGrid:
    nodes: np.ndarray
    weights: np.ndarray
    rule: str = "gregory"

    @property
    def h(self):
        return float(self.nodes[1] - self.nodes[0])

    @property
    def N(self):
        return len(self.nodes)

    @property
    def L(self):
        return float(self.nodes[-1])


def label_grid(L, N, rule="gregory"):
    if N % 2 == 0:
        raise ValueError("label grids use an odd node count")
    nodes = np.linspace(-L, L, N)
    nodes[0], nodes[-1] = -L, L
    h = 2.0 * L / (N - 1)
    if rule == "gregory":
        w = gregory_weights(N, h)
    elif rule == "simpson":
        w = simpson_weights(N, h)
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return LabelGrid(nodes, w, rule)


def sign_partition(values, tol=0.0):
    """Per-node tags +1 / -1 / 0 for the sets where m0 is positive, negative, zero."""
    values = np.asarray(values, dtype=float)
    tags = np.zeros(values.shape, dtype=np.int8)
    tags[values > tol] = 1
    tags[values < -tol] = -1
    return tags
