"""Riemann-Liouville calculus on uniform grids.

All integrals use product integration: the grid function is interpolated
linearly and the power kernel ``(x - y)^{alpha - 1}``, together with an
optional power weight ``y^gamma``, is integrated exactly against the hat
basis. Singular weights such as ``s^{H - 1/2}`` therefore never have to be
sampled at ``s = 0``.

The operators built on top:

* ``I^alpha`` and ``D^alpha = d/dx I^{1 - alpha}``,
* ``K_H = I^{2H} s^{1/2-H} I^{1/2-H} s^{H-1/2}``,
* ``K_H^{-1}``, in the general form and in the shortcut for absolutely
  continuous arguments,
* the operator ``K_H^*`` acting on functions of ``[0, b]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from . import _quad
from .errors import DomainError
from .fbm import TimeGrid, as_hurst, c_h, kernel_K

__all__ = [
    "GridFunction",
    "frac_integral",
    "frac_derivative",
    "op_KH",
    "op_KH_inverse_ac",
    "op_KH_inverse_general",
    "op_KH_star",
    "volterra_scale",
    "kh_star_eval",
    "kh_star_l2_norm_sq",
    "selftest",
]


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values of a real function at the points of a :class:`TimeGrid`."""

    grid: TimeGrid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.grid),):
            raise DomainError(
                f"expected {len(self.grid)} values for this grid, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise DomainError(f"grid function {self.label!r} has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid, fn, label=""):
        return cls(grid, np.asarray(fn(grid.points), dtype=float) * np.ones(len(grid)), label)

    @property
    def t(self):
        return self.grid.points

    def with_values(self, values, label=None):
        return GridFunction(self.grid, values, self.label if label is None else label)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "value"])
            for t, v in zip(self.t, self.values):
                out.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, label=""):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        return cls(TimeGrid.from_points(data[:, 0]), data[:, 1], label)


# -- product-integration weights ------------------------------------------


def _power_diff(j, p):
    """``j^p - (j-1)^p`` without cancellation for large ``j``."""
    with np.errstate(divide="ignore"):
        return -(j**p) * np.expm1(p * np.log1p(-1.0 / j))


@lru_cache(maxsize=16)
def _toeplitz_weights(alpha, n):
    # gamma = 0: moments against the hat basis are closed form in j = m - k
    j = np.arange(1, n + 1, dtype=float)
    d1 = _power_diff(j, alpha + 1)
    d0 = _power_diff(j, alpha)
    left = d1 / (alpha + 1) - (j - 1) * d0 / alpha
    right = j * d0 / alpha - d1 / (alpha + 1)
    w = np.zeros((n + 1, n + 1))
    m, k = np.tril_indices(n + 1, -1)
    np.add.at(w, (m, k), left[m - k - 1])
    np.add.at(w, (m, k + 1), right[m - k - 1])
    return w


_NODES_NEAR = 16
_NODES_FAR = 6
_NEAR = 8


@lru_cache(maxsize=4)
def _rules(alpha, gamma):
    a, g = alpha - 1.0, gamma
    return {
        "far": _quad.legendre(_NODES_FAR),
        "near": _quad.legendre(_NODES_NEAR),
        "right": _quad.jacobi(_NODES_NEAR, a, 0.0),
        "left": _quad.jacobi(_NODES_NEAR, 0.0, g),
        "both": _quad.jacobi(_NODES_NEAR, a, g),
    }


@lru_cache(maxsize=16)
def _weighted_weights(alpha, gamma, n):
    """Weights for ``int_0^m (m-u)^{alpha-1} u^gamma f(u) du`` with ``f`` piecewise linear."""
    rules = _rules(alpha, gamma)
    a = alpha - 1.0
    w = np.zeros((n + 1, n + 1))
    for m in range(1, n + 1):
        k = np.arange(m)
        kinds = np.full(m, "near", dtype=object)
        kinds[(k >= _NEAR) & (m - 1 - k >= _NEAR)] = "far"
        kinds[m - 1] = "right"
        if m == 1:
            kinds[0] = "both"
        else:
            kinds[0] = "left"
        for kind in ("far", "near", "right", "left", "both"):
            sel = k[kinds == kind]
            if sel.size == 0:
                continue
            x, wq = rules[kind]
            u = sel[:, None] + 0.5 * (x + 1.0)
            f = np.ones_like(u)
            if kind in ("far", "near", "left"):
                f = f * (m - u) ** a
            else:
                f = f * 0.5**a
            if kind in ("far", "near", "right"):
                f = f * u**gamma
            else:
                f = f * 0.5**gamma
            lo = 0.5 * ((f * (1 - x) / 2) * wq).sum(axis=1)
            hi = 0.5 * ((f * (1 + x) / 2) * wq).sum(axis=1)
            np.add.at(w[m], sel, lo)
            np.add.at(w[m], sel + 1, hi)
    return w


def _weights(alpha, gamma, n):
    if gamma == 0.0:
        return _toeplitz_weights(alpha, n)
    return _weighted_weights(alpha, gamma, n)


def _frac_integral_values(alpha, values, dt, gamma=0.0):
    """``I^alpha [s^gamma f]`` on the grid, batched over leading axes of ``values``."""
    n = values.shape[-1] - 1
    w = _weights(float(alpha), float(gamma), n)
    scale = dt ** (alpha + gamma) / special.gamma(alpha)
    return scale * (values @ w.T)


def _frac_derivative_values(alpha, values, dt, gamma=0.0):
    g = _frac_integral_values(1.0 - alpha, values, dt, gamma)
    return np.gradient(g, dt, axis=-1, edge_order=2)


def _check_gf(f):
    if not isinstance(f, GridFunction):
        raise DomainError("expected a GridFunction")
    if f.grid.n_steps < 2:
        raise DomainError("fractional operators need at least two grid steps")


def frac_integral(alpha, f: GridFunction, weight_power=0.0) -> GridFunction:
    """Left Riemann-Liouville integral ``I^alpha_{0+}`` of ``s^weight_power f(s)``.

    ``I^alpha g (x) = 1/Gamma(alpha) int_0^x (x - y)^{alpha - 1} g(y) dy``.
    The power weight is integrated exactly, so it may be singular at 0 as long
    as ``weight_power > -1``.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"integral order must lie in (0, 1], got {alpha}")
    if weight_power <= -1.0:
        raise DomainError(f"weight power must exceed -1, got {weight_power}")
    _check_gf(f)
    out = _frac_integral_values(alpha, f.values, f.grid.dt, weight_power)
    return f.with_values(out, f"I^{alpha:g}[{f.label}]")


def frac_derivative(alpha, f: GridFunction, weight_power=0.0) -> GridFunction:
    """Left Riemann-Liouville derivative ``D^alpha_{0+} = d/dx I^{1-alpha}``.

    The integral is taken by product integration and differentiated with
    second-order central differences (one-sided at the ends). Accuracy is
    best when ``f(0) = 0``; otherwise ``D^alpha f`` is unbounded at 0.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"derivative order must lie in (0, 1), got {alpha}")
    if weight_power <= -1.0:
        raise DomainError(f"weight power must exceed -1, got {weight_power}")
    _check_gf(f)
    out = _frac_derivative_values(alpha, f.values, f.grid.dt, weight_power)
    return f.with_values(out, f"D^{alpha:g}[{f.label}]")


# -- K_H and its inverse ---------------------------------------------------


def volterra_scale(h) -> float:
    """``c_H Gamma(H + 1/2)``, the factor between the kernel and the composition.

    ``int_0^t K_H(t, s) f(s) ds = volterra_scale(h) * op_KH(f)(t)``. The
    composition operators below are implemented exactly as compositions, so
    inverting the kernel integral needs a division by this factor.
    """
    h = as_hurst(h).h
    return c_h(h) * math.gamma(h + 0.5)


def _kh_values(values, dt, h):
    inner = _frac_integral_values(0.5 - h, values, dt, h - 0.5)
    return _frac_integral_values(2 * h, inner, dt, 0.5 - h)


def op_KH(f: GridFunction, h) -> GridFunction:
    """``K_H f = I^{2H} s^{1/2-H} I^{1/2-H} s^{H-1/2} f``.

    The integral ``int_0^t K_H(t, s) f(s) ds`` equals ``volterra_scale(h)``
    times this composition.
    """
    h = as_hurst(h).h
    _check_gf(f)
    return f.with_values(_kh_values(f.values, f.grid.dt, h), f"K_H[{f.label}]")


def _kh_inverse_ac_values(deriv, t, dt, h):
    inner = _frac_integral_values(0.5 - h, deriv, dt, 0.5 - h)
    out = np.zeros_like(inner)
    out[..., 1:] = t[1:] ** (h - 0.5) * inner[..., 1:]
    return out


def op_KH_inverse_ac(f: GridFunction, f_derivative: GridFunction, h, atol=1e-12) -> GridFunction:
    """``K_H^{-1} f = s^{H-1/2} I^{1/2-H} s^{1/2-H} f'`` for absolutely continuous ``f``.

    The derivative is supplied by the caller. ``f`` must vanish at 0, as does
    every element of the range of ``K_H``. The value at ``s = 0`` is the right
    limit, which is 0 for bounded ``f'``.
    """
    h = as_hurst(h).h
    _check_gf(f)
    _check_gf(f_derivative)
    if f.grid != f_derivative.grid:
        raise DomainError("f and f_derivative live on different grids")
    if abs(f.values[0]) > atol * max(1.0, np.abs(f.values).max()):
        raise DomainError("K_H^{-1} needs f(0) = 0")
    out = _kh_inverse_ac_values(f_derivative.values, f.t, f.grid.dt, h)
    return f.with_values(out, f"K_H^-1[{f.label}]")


def op_KH_inverse_general(f: GridFunction, h) -> GridFunction:
    """``K_H^{-1} f = s^{1/2-H} D^{1/2-H} s^{H-1/2} D^{2H} f``.

    Both derivative stages are discrete; use ``f(0) = 0`` and ``f`` in C^1.
    Rougher arguments should go through :func:`op_KH_inverse_ac`.
    """
    h = as_hurst(h).h
    _check_gf(f)
    dt = f.grid.dt
    d2h = _frac_derivative_values(2 * h, f.values, dt)
    inner = _frac_derivative_values(0.5 - h, d2h, dt, h - 0.5)
    out = np.zeros_like(inner)
    out[1:] = f.t[1:] ** (0.5 - h) * inner[1:]
    return f.with_values(out, f"K_H^-1[{f.label}]")


# -- K_H^* ------------------------------------------------------------------
#
# Integrating by parts against the linear interpolant of f,
#   (K* f)(s) = f(b) K(b, s) - int_s^b f'(t) K(t, s) dt,
# and f' is constant on each cell.

_STAR_NODES = 12


@lru_cache(maxsize=4)
def _star_rules(h):
    return _quad.legendre(_STAR_NODES), _quad.jacobi(_STAR_NODES, 0.0, h - 0.5)


def _int_K_dt(h, s, lo, hi):
    """``int_lo^hi K(t, s) dt`` for ``s <= lo < hi``, vectorised."""
    (xl, wl), (xj, wj) = _star_rules(h)
    a = h - 0.5
    s, lo, hi = np.broadcast_arrays(s, lo, hi)
    out = np.zeros(s.shape)

    def jacobi(upper, sel):
        # int_s^upper with weight (t - s)^{H-1/2} pulled out
        ss = s[sel][:, None]
        half = 0.5 * (upper[sel][:, None] - ss)
        tt = ss + half * (xj + 1)
        f = kernel_K(h, tt, ss) / (tt - ss) ** a
        return (f * wj).sum(axis=1) * half[:, 0] ** (a + 1)

    width = hi - lo
    close = (lo - s) < 2 * width
    if np.any(close):
        val = jacobi(hi, close)
        touching = close & (lo > s)
        if np.any(touching):
            sub = np.zeros(s.shape)
            sub[touching] = jacobi(lo, touching)
            val = val - sub[close]
        out[close] = val
    away = ~close
    if np.any(away):
        half = 0.5 * width[away][:, None]
        tt = lo[away][:, None] + half * (xl + 1)
        out[away] = (kernel_K(h, tt, s[away][:, None]) * wl).sum(axis=1) * half[:, 0]
    return out


def _check_endpoint(f, endpoint_b):
    b = f.grid.horizon if endpoint_b is None else float(endpoint_b)
    if not 0.0 < b <= f.grid.horizon * (1 + 1e-12):
        raise DomainError(f"endpoint b={b} must lie in (0, T={f.grid.horizon}]")
    return min(b, f.grid.horizon)


def _check_interp(interpolation):
    if interpolation not in ("linear", "step"):
        raise DomainError(f"interpolation must be 'linear' or 'step', got {interpolation!r}")


def kh_star_eval(f: GridFunction, h, s, endpoint_b=None, interpolation="linear") -> np.ndarray:
    """``(K_H^* f)(s)`` at arbitrary points ``0 < s``; zero for ``s >= b``.

    ``interpolation="linear"`` reads ``f`` as its piecewise-linear interpolant.
    ``"step"`` reads it as the step function equal to ``f[k+1]`` on
    ``(t_k, t_{k+1}]``, so indicators ``1_[0, t_m]`` are represented exactly.
    """
    h = as_hurst(h).h
    _check_gf(f)
    _check_interp(interpolation)
    b = _check_endpoint(f, endpoint_b)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s <= 0):
        raise DomainError("K_H^* is evaluated at s > 0 only")
    t, dt = f.t, f.grid.dt
    out = np.zeros(s.shape)
    inside = s < b
    si = s[inside]
    if interpolation == "step":
        cell = min(int(np.ceil(b / dt - 1e-9)), f.grid.n_steps)
        fb = f.values[max(cell, 1)]
    else:
        fb = np.interp(b, t, f.values)
    val = fb * kernel_K(h, b, si) if fb != 0.0 else np.zeros(si.shape)
    if interpolation == "step":
        # (K* f)(s) = f(b) K(b, s) - sum over jumps tau in (s, b) of [f]_tau K(tau, s)
        jumps = np.diff(f.values)[1:]
        for k in np.flatnonzero(jumps != 0.0) + 1:
            tau = t[k]
            if tau >= b:
                break
            sel = si < tau
            if np.any(sel):
                val[sel] -= jumps[k - 1] * kernel_K(h, tau, si[sel])
    else:
        slopes = np.diff(f.values) / dt
        for k in np.flatnonzero(slopes != 0.0):
            lo = np.maximum(t[k], si)
            hi = np.full(si.shape, min(t[k + 1], b))
            sel = hi > lo
            if np.any(sel):
                val[sel] -= slopes[k] * _int_K_dt(h, si[sel], lo[sel], hi[sel])
    out[inside] = val
    return out


def op_KH_star(f: GridFunction, h, endpoint_b=None, interpolation="linear") -> GridFunction:
    """``(K_H^* f)(s) = K_H(b,s) f(s) + int_s^b (f(t) - f(s)) dK_H/dt(t,s) dt``.

    Evaluated at the grid points; see :func:`kh_star_eval` for how ``f`` is
    read between them. ``b`` defaults to the grid horizon. The output is an
    L^2 function and is not defined at ``s = 0``; that entry, and every
    ``s >= b``, is stored as 0.
    """
    b = _check_endpoint(f, endpoint_b)
    out = np.zeros(len(f.grid))
    out[1:] = kh_star_eval(f, h, f.t[1:], b, interpolation)
    return f.with_values(out, f"K_H*[{f.label}]")


def kh_star_l2_norm_sq(f: GridFunction, h, endpoint_b=None, interpolation="linear",
                       nodes=8) -> float:
    """``int_0^b |(K_H^* f)(s)|^2 ds`` by cell-wise Gauss quadrature.

    Cells touching a singularity of the squared kernel (``s = 0``, ``s = b``
    and, for step functions, the left side of every jump) carry the
    ``|s - s_*|^{2H-1}`` factor as a Jacobi weight.
    """
    h = as_hurst(h).h
    _check_interp(interpolation)
    b = _check_endpoint(f, endpoint_b)
    dt = f.grid.dt
    edges = np.append(f.t[f.t < b - 1e-12 * dt], b)
    lo, hi = edges[:-1], edges[1:]
    n = lo.size
    if n < 2:
        raise DomainError("the L^2 norm needs at least two grid cells below b")
    a2 = 2 * h - 1
    right_sing = np.zeros(n, dtype=bool)
    right_sing[-1] = True
    if interpolation == "step":
        jumps = np.diff(f.values)[1:]
        k = np.flatnonzero(jumps != 0.0) + 1
        k = k[k < n]
        right_sing[k - 1] = True
    left_sing = np.zeros(n, dtype=bool)
    left_sing[0] = True
    left_sing &= ~right_sing

    def integrate(sel, x, w, weight):
        if not np.any(sel):
            return 0.0
        half = 0.5 * (hi[sel] - lo[sel])[:, None]
        s = lo[sel][:, None] + half * (x + 1)
        v = kh_star_eval(f, h, s.ravel(), b, interpolation).reshape(s.shape) ** 2
        if weight == "left":
            v = v / (s - lo[sel][:, None]) ** a2
            scale = half ** (a2 + 1)
        elif weight == "right":
            v = v / (hi[sel][:, None] - s) ** a2
            scale = half ** (a2 + 1)
        elif weight == "both":
            v = v / ((s - lo[sel][:, None]) * (hi[sel][:, None] - s)) ** a2
            scale = half ** (2 * a2 + 1)
        else:
            scale = half
        return float(((v * w) * scale).sum())

    both = np.zeros(n, dtype=bool)
    both[0] = right_sing[0]
    right_only = right_sing & ~both
    plain = ~(right_sing | left_sing | both)
    total = integrate(plain, *_quad.legendre(nodes), "none")
    total += integrate(left_sing, *_quad.jacobi(nodes, 0.0, a2), "left")
    total += integrate(right_only, *_quad.jacobi(nodes, a2, 0.0), "right")
    total += integrate(both, *_quad.jacobi(nodes, a2, a2), "both")
    return total


# -- self test --------------------------------------------------------------


def _observed_order(sizes, errors):
    slope = np.polyfit(np.log(1.0 / np.asarray(sizes, float)), np.log(errors), 1)[0]
    return float(slope)


def selftest(h=0.2, sizes=(128, 512, 2048)):
    """Convergence tables for the operator identities.

    Returns a list of rows ``(check, n_steps, max_error, observed_order)``;
    the order is the least-squares slope of log error against log step over
    all sizes and is repeated on every row of a check.
    """
    h = as_hurst(h).h
    rows = []

    def study(name, fn):
        errs = [fn(TimeGrid(1.0, n)) for n in sizes]
        order = _observed_order(sizes, errs) if all(e > 0 for e in errs) else math.inf
        rows.extend((name, n, e, order) for n, e in zip(sizes, errs))

    def d_of_i(grid, alpha=0.5):
        f = GridFunction.from_callable(grid, lambda t: np.sin(3 * t))
        back = frac_derivative(alpha, frac_integral(alpha, f))
        return float(np.abs(back.values - f.values).max())

    def semigroup(grid, a=0.3, b=0.4):
        f = GridFunction.from_callable(grid, lambda t: np.sin(3 * t))
        lhs = frac_integral(a, frac_integral(b, f))
        rhs = frac_integral(a + b, f)
        return float(np.abs(lhs.values - rhs.values).max())

    def kh_roundtrip(grid):
        f = GridFunction.from_callable(grid, lambda t: t**2)
        df = GridFunction.from_callable(grid, lambda t: 2 * t)
        back = op_KH(op_KH_inverse_ac(f, df, h), h)
        return float(np.abs(back.values - f.values).max() / np.abs(f.values).max())

    def inverse_agree(grid):
        f = GridFunction.from_callable(grid, lambda t: t**2)
        df = GridFunction.from_callable(grid, lambda t: 2 * t)
        ac = op_KH_inverse_ac(f, df, h).values
        gen = op_KH_inverse_general(f, h).values
        return float(np.abs(gen - ac).max() / np.abs(ac).max())

    study("D^a I^a = id", d_of_i)
    study("I^a I^b = I^(a+b)", semigroup)
    study("K_H K_H^-1 = id", kh_roundtrip)
    study("general vs AC inverse", inverse_agree)
    return rows
