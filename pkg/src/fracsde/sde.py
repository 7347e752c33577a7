"""Euler scheme for ``dX = b(t, X) dt + dB^H`` with bounded drift.

The noise is additive, so the scheme is exact except for the drift
integral. Drifts carry their declared sup-norm and every evaluation is
checked against it: the measure-change bounds downstream rely on it.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special

from . import _quad
from .errors import DomainError, DriftBoundError
from .fbm import CoupledPath, PathBatch, TimeGrid

__all__ = [
    "DriftField",
    "SolutionPath",
    "SolutionBatch",
    "drift_catalog",
    "CATALOG",
    "bump",
    "bump_constant",
    "mollify_drift",
    "euler_solve",
    "coupled_gap_sup",
    "lattice_lp_distance",
]

_BOUND_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class DriftField:
    """Bounded drift ``b(t, x)``, vectorised over ``x`` of shape ``(..., dim)``."""

    fn: Callable[[float, np.ndarray], np.ndarray]
    dim: int
    sup_norm: float
    continuous: bool
    support_radius: float = math.inf
    lipschitz: float | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sup_norm >= 0 or not math.isfinite(self.sup_norm):
            raise DomainError(f"sup_norm must be finite and >= 0, got {self.sup_norm}")
        if not self.support_radius >= 0:
            raise DomainError(f"support_radius must be >= 0, got {self.support_radius}")
        if math.isinf(self.support_radius):
            warnings.warn(
                f"drift {self.name!r} has unbounded support and need not be integrable in x",
                stacklevel=3,
            )

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"drift {self.name!r} expects points of dimension {self.dim}")
        out = np.asarray(self.fn(t, x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).copy()
        norm = np.sqrt(np.sum(out * out, axis=-1))
        worst = float(norm.max(initial=0.0))
        if worst > self.sup_norm * (1 + _BOUND_RTOL) + 1e-300:
            raise DriftBoundError(
                f"drift {self.name!r} evaluated to norm {worst!r} above its declared "
                f"sup-norm {self.sup_norm!r}"
            )
        return out

    eval = __call__

    def check_support(self, rng=None, n=1000, t=0.0) -> bool:
        """True if the field vanishes at ``n`` random points outside its support."""
        if math.isinf(self.support_radius):
            return True
        rng = np.random.default_rng(0) if rng is None else rng
        d = rng.standard_normal((n, self.dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.support_radius * (1 + 1e-9) + rng.exponential(self.support_radius + 1.0, n)
        return bool(np.all(self(t, d * r[:, None]) == 0.0))


def _norm(x):
    return np.sqrt(np.sum(x * x, axis=-1, keepdims=True))


def _radial_unit(x):
    r = _norm(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(r > 0, x / r, 0.0)
    return u, r


# -- catalog ----------------------------------------------------------------


def _zero(dim):
    return DriftField(lambda t, x: np.zeros_like(x), dim, 0.0, True, 0.0, 0.0, "zero", {})


def _constant_capped(dim, value=1.0, R=10.0):
    value = float(value)

    def fn(t, x):
        inside = _norm(x) <= R
        return np.where(inside, value, 0.0) * np.ones_like(x)

    return DriftField(fn, dim, abs(value) * math.sqrt(dim), value == 0.0, float(R), None,
                      "constant_capped", {"value": value, "R": R})


def _sine_capped(dim, R=2 * math.pi):
    periods = R / math.pi
    if abs(periods - round(periods)) > 1e-9 or round(periods) < 1:
        raise DomainError(f"sine_capped needs R a positive multiple of pi (continuity), got {R}")

    def fn(t, x):
        u, r = _radial_unit(x)
        return np.where(r <= R, np.sin(r), 0.0) * u

    return DriftField(fn, dim, 1.0, True, float(R), 1.0, "sine_capped", {"R": R})


def _indicator_box(dim, R=1.0, value=1.0):
    value = float(value)

    def fn(t, x):
        inside = np.max(np.abs(x), axis=-1, keepdims=True) <= R
        return np.where(inside, value, 0.0) * np.ones_like(x)

    return DriftField(fn, dim, abs(value) * math.sqrt(dim), value == 0.0, R * math.sqrt(dim),
                      None, "indicator_box", {"R": R, "value": value})


def _sign_capped(dim, R=2.0, value=1.0):
    value = float(value)

    def fn(t, x):
        u, r = _radial_unit(x)
        return np.where(r <= R, value, 0.0) * u

    return DriftField(fn, dim, abs(value), value == 0.0, float(R), None, "sign_capped",
                      {"R": R, "value": value})


CATALOG = {
    "zero": _zero,
    "constant_capped": _constant_capped,
    "sine_capped": _sine_capped,
    "indicator_box": _indicator_box,
    "sign_capped": _sign_capped,
}


def drift_catalog(name, dim=1, **params) -> DriftField:
    """Named bounded, compactly supported drifts.

    ``zero``; ``constant_capped(value, R)``: ``value`` in every component on
    ``|x| <= R``; ``sine_capped(R)``: ``sin|x| x/|x|`` on ``|x| <= R`` with R a
    multiple of pi, continuous and 1-Lipschitz; ``indicator_box(R, value)`` on
    ``max|x_i| <= R``; ``sign_capped(R, value)``: ``value x/|x|`` on ``|x| <= R``.
    """
    try:
        factory = CATALOG[name]
    except KeyError:
        raise DomainError(f"unknown drift {name!r}; catalog: {', '.join(sorted(CATALOG))}") from None
    try:
        return factory(int(dim), **params)
    except TypeError as exc:
        raise DomainError(f"bad parameters for drift {name!r}: {exc}") from None


# -- mollifier --------------------------------------------------------------


def _bump_raw(r2):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(r2 < 1.0, np.exp(-1.0 / (1.0 - np.minimum(r2, 1.0))), 0.0)


@lru_cache(maxsize=8)
def bump_constant(dim) -> float:
    """``C_d`` with ``int C_d exp(-1/(1 - |z|^2)) dz = 1`` over the unit ball."""
    surface = 2 * math.pi ** (dim / 2) / special.gamma(dim / 2)
    radial, _ = integrate.quad(lambda r: r ** (dim - 1) * math.exp(-1.0 / (1.0 - r * r)),
                               0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    return 1.0 / (surface * radial)


def bump(z, dim=1):
    """Standard mollifier on the unit ball, normalised to unit mass.

    Points carry their coordinates on the last axis; for ``dim=1`` plain
    scalars are accepted too.
    """
    z = np.asarray(z, dtype=float)
    if dim == 1 and z.shape[-1:] != (1,):
        r2 = z * z
    else:
        r2 = np.sum(z * z, axis=-1)
    return bump_constant(dim) * _bump_raw(r2)


@lru_cache(maxsize=8)
def _bump_rule(dim, n):
    x, w = _quad.legendre(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    wz = np.prod(np.meshgrid(*([w] * dim), indexing="ij"), axis=0).ravel()
    wz = wz * bump(z, dim)
    keep = wz > 0
    z, wz = z[keep], wz[keep]
    # exact unit mass for the discrete rule keeps b^delta a convex combination
    return z, wz / wz.sum()


def mollify_drift(b: DriftField, delta, quad_points=16) -> DriftField:
    """``b^delta(t, x) = int phi(z) b(t, x - delta z) dz`` by tensor Gauss quadrature."""
    delta = float(delta)
    if not delta > 0:
        raise DomainError(f"mollification width must be positive, got {delta}")
    if int(quad_points) < 2:
        raise DomainError("quad_points must be >= 2")
    z, wz = _bump_rule(b.dim, int(quad_points))
    shift = delta * z

    def fn(t, x):
        pts = x[..., None, :] - shift
        vals = b(t, pts)
        return np.einsum("...qd,q->...d", vals, wz)

    return DriftField(fn, b.dim, b.sup_norm, True, b.support_radius + delta, b.lipschitz,
                      f"{b.name}*phi_{delta:g}", {**b.params, "delta": delta,
                                                 "quad_points": int(quad_points)})


def lattice_lp_distance(b1: DriftField, b2: DriftField, p, radius, n=2001, t=0.0) -> float:
    """``(int_{|x|_inf <= radius} |b1 - b2|^p dx)^{1/p}`` on a midpoint lattice (time-independent part)."""
    if b1.dim != b2.dim:
        raise DomainError("drift dimensions differ")
    h = 2 * radius / n
    axis = -radius + h * (np.arange(n) + 0.5)
    pts = np.stack(np.meshgrid(*([axis] * b1.dim), indexing="ij"), axis=-1).reshape(-1, b1.dim)
    diff = _norm(b1(t, pts) - b2(t, pts))[..., 0]
    return float((np.sum(diff**p) * h**b1.dim) ** (1.0 / p))


# -- Euler ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolutionPath:
    grid: TimeGrid
    x0: np.ndarray
    values: np.ndarray
    driver: CoupledPath

    @property
    def dim(self):
        return self.values.shape[0]

    def to_csv(self, path):
        t = self.grid.points
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t"] + [f"X_{k + 1}" for k in range(self.dim)]
                         + [f"BH_{k + 1}" for k in range(self.dim)])
            for i in range(len(t)):
                out.writerow([repr(float(t[i]))] + [repr(float(v)) for v in self.values[:, i]]
                             + [repr(float(v)) for v in self.driver.bh[:, i]])


@dataclass(frozen=True, eq=False)
class SolutionBatch:
    """Solutions for a :class:`PathBatch`, ``values`` of shape ``(n_paths, dim, n+1)``."""

    grid: TimeGrid
    x0: np.ndarray
    values: np.ndarray
    driver: PathBatch

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i) -> SolutionPath:
        return SolutionPath(self.grid, self.x0, self.values[i], self.driver[i])


def _as_point(x0, dim):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (dim,):
        raise DomainError(f"initial point has shape {x0.shape}, driver dimension is {dim}")
    return x0


def _euler(b, x0, bh, grid):
    # X_i = x0 + A_i + B^H_i with A the Euler sum of the drift; identical to the
    # recursion X_{i+1} = X_i + b dt + dB^H and exact when b = 0
    n, dim, m = bh.shape
    if b.dim != dim:
        raise DomainError(f"drift dimension {b.dim} does not match driver dimension {dim}")
    t = grid.points
    dt = grid.dt
    x = np.empty_like(bh)
    acc = np.zeros((n, dim))
    x[:, :, 0] = x0
    for i in range(m - 1):
        acc = acc + b(t[i], x[:, :, i]) * dt
        x[:, :, i + 1] = x0 + acc + bh[:, :, i + 1]
    return x


def euler_solve(b: DriftField, x0, driver):
    """``X_{i+1} = X_i + b(t_i, X_i) dt + (B^H_{i+1} - B^H_i)``.

    ``driver`` is a :class:`CoupledPath` (returns :class:`SolutionPath`) or a
    :class:`PathBatch` (returns :class:`SolutionBatch`).
    """
    if isinstance(driver, CoupledPath):
        x0 = _as_point(x0, driver.dim)
        x = _euler(b, x0, driver.bh[None], driver.grid)[0]
        return SolutionPath(driver.grid, x0, x, driver)
    if isinstance(driver, PathBatch):
        x0 = _as_point(x0, driver.dim)
        return SolutionBatch(driver.grid, x0, _euler(b, x0, driver.bh, driver.grid), driver)
    raise DomainError("driver must be a CoupledPath or PathBatch")


def coupled_gap_sup(b: DriftField, x, gaps, grid: TimeGrid, direction=None):
    """``sup_i |Y_i - X_i|`` for solutions started at ``x_0 + g e`` on the same driver.

    ``x`` holds the reference solutions, shape ``(n_paths, dim, n+1)``. The
    difference ``D = Y - X`` obeys ``D_{i+1} = D_i + (b(Y_i) - b(X_i)) dt``:
    the noise cancels exactly, so for ``b = 0`` the result is ``g`` to the bit.
    Returns an array ``(len(gaps), n_paths)``.
    """
    n, dim, m = x.shape
    e = np.zeros(dim)
    e[0] = 1.0
    if direction is not None:
        e = np.asarray(direction, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    t, dt = grid.points, grid.dt
    diff = np.broadcast_to(gaps[:, None, None] * e, (gaps.size, n, dim)).copy()
    sup = np.sqrt(np.sum(diff * diff, axis=-1))
    for i in range(m - 1):
        xi = x[None, :, :, i]
        diff = diff + (b(t[i], xi + diff) - b(t[i], np.broadcast_to(xi, diff.shape))) * dt
        np.maximum(sup, np.sqrt(np.sum(diff * diff, axis=-1)), out=sup)
    return sup
