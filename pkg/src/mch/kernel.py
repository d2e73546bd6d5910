"""Helmholtz Green kernel G(x) = exp(-|x|)/2, mollifiers, and tabulated G^eps = rho_eps * G."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

SHAPES = ("bump", "cosine", "poly")

# Gauss-Legendre panel used for the convolution integrals
_GL_X, _GL_W = np.polynomial.legendre.leggauss(96)


def green(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.exp(-np.abs(x))


def green_prime(x):
    # np.sign(0) == 0, so the kink gets the principal value 0
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sign(x) * np.exp(-np.abs(x))


def _raw_shape(shape, s):
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    out = np.zeros_like(s)
    si = s[inside]
    if shape == "bump":
        out[inside] = np.exp(-1.0 / (1.0 - si * si))
    elif shape == "cosine":
        out[inside] = (1.0 + np.cos(np.pi * si)) ** 2
    elif shape == "poly":
        out[inside] = (1.0 - si * si) ** 3
    else:
        raise ValueError(f"unknown mollifier shape {shape!r}")
    return out


@lru_cache(maxsize=None)
def _shape_mass(shape):
    if shape == "cosine":
        return 3.0
    if shape == "poly":
        return 32.0 / 35.0
    # only the exp bump needs numerical normalisation
    half, _ = quad(lambda s: float(_raw_shape(shape, np.array(s))), 0.0, 1.0,
                   epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2.0 * half


@dataclass(frozen=True)
class Mollifier:
    """Even nonnegative bump on (-1, 1) with unit mass, rescaled to width epsilon.

    shape: "bump" (C-infinity, exp(-1/(1-x^2))), "cosine" ((1+cos pi x)^2, C^2)
    or "poly" ((1-x^2)^3, C^2).
    """

    shape: str = "bump"
    epsilon: float = 0.05

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown mollifier shape {self.shape!r}")
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ValueError("mollifier epsilon must be positive")

    def unit(self, s):
        """Unit-scale profile rho(s)."""
        return _raw_shape(self.shape, s) / _shape_mass(self.shape)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.unit(x / self.epsilon) / self.epsilon

    def with_epsilon(self, epsilon):
        return Mollifier(self.shape, epsilon)


def _convolve_at(moll, x, deriv):
    """rho_eps * G (or * G') at points x, splitting the panel at the kink y = x."""
    eps = moll.epsilon
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    kern = green_prime if deriv else green
    for k, xk in enumerate(x):
        cuts = [-eps, eps]
        if -eps < xk < eps:
            cuts = [-eps, xk, eps]
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            y = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X
            w = 0.5 * (b - a) * _GL_W
            total += np.sum(w * moll(y) * kern(xk - y))
        out[k] = total
    return out


def tail_factor(moll):
    """K = int rho_eps(y) cosh(y) dy, so that G^eps(x) = K G(x) for |x| >= eps."""
    s = _GL_X
    return float(np.sum(_GL_W * moll.unit(s) * np.cosh(moll.epsilon * s)))


@dataclass(frozen=True, eq=False)
class GreenTable:
    epsilon: float
    mollifier: Mollifier
    grid: np.ndarray
    gValues: np.ndarray
    gxValues: np.ndarray
    tail: float
    _g: CubicSpline
    _gx: CubicSpline

    @property
    def radius(self):
        return float(self.grid[-1])

    def value(self, x):
        """G^eps(x); cubic interpolation inside the table, exact exponential tail outside."""
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        out = self.tail * 0.5 * np.exp(-ax)
        inside = ax <= self.radius
        if np.any(inside):
            out = np.where(inside, self._g(np.where(inside, x, 0.0)), out)
        return out

    def deriv(self, x):
        """G^eps_x(x), odd in x."""
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        out = -self.tail * 0.5 * np.sign(x) * np.exp(-ax)
        inside = ax <= self.radius
        if np.any(inside):
            out = np.where(inside, self._gx(np.where(inside, x, 0.0)), out)
        return out


def build_green_table(moll, R, h_tab=None):
    """Tabulate G^eps and G^eps_x on a uniform grid covering [-R, R].

    Nodes inside the mollification layer |x| < eps use panel quadrature of the
    convolution; outside it the convolution is exactly K*G(x).
    """
    eps = moll.epsilon
    if h_tab is None:
        h_tab = eps / 64
    if h_tab > eps / 8:
        raise ValueError(f"table spacing {h_tab} exceeds eps/8 = {eps / 8}")
    if R < eps:
        raise ValueError("table radius must be at least epsilon")
    n = int(np.ceil(R / h_tab))
    xs = np.arange(n + 1) * h_tab
    K = tail_factor(moll)
    g = K * green(xs)
    gx = K * green_prime(xs)
    inner = xs < eps
    g[inner] = _convolve_at(moll, xs[inner], deriv=False)
    gx[inner] = _convolve_at(moll, xs[inner], deriv=True)
    gx[0] = 0.0
    # mirror so that evenness / oddness hold exactly
    grid = np.concatenate([-xs[:0:-1], xs])
    gv = np.concatenate([g[:0:-1], g])
    gxv = np.concatenate([-gx[:0:-1], gx])
    return GreenTable(eps, moll, grid, gv, gxv, K,
                      CubicSpline(grid, gv), CubicSpline(grid, gxv))


def mollify_field(samples, h, moll):
    """Discrete convolution of uniformly sampled values with rho_eps.

    Weights are normalised to unit sum so constants pass through exactly;
    values beyond the ends are extended by the end values.
    """
    samples = np.asarray(samples, dtype=float)
    eps = moll.epsilon
    if h > eps / 4:
        raise ValueError(f"grid spacing {h} exceeds eps/4 = {eps / 4}")
    k = int(np.floor(eps / h))
    offsets = np.arange(-k, k + 1) * h
    w = moll(offsets)
    w = w / w.sum()
    padded = np.concatenate([np.full(k, samples[0]), samples, np.full(k, samples[-1])])
    return np.convolve(padded, w[::-1], mode="valid")
