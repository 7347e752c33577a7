"""Fractional Brownian motion for H < 1/2.

Covariance, the Volterra kernel ``K_H`` with its normalising constant and
time derivative, and two exact-in-law samplers:

* :func:`sample_cholesky` draws from ``N(0, R_H)`` on the grid,
* :func:`sample_from_bm` builds ``B^H_t = int_0^t K_H(t, s) dW_s`` from Brownian
  increments and keeps ``W``, which the measure change needs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from . import _quad, _rng
from ._parallel import DEFAULT_BATCH, map_batches
from .errors import CholeskyError, DomainError

__all__ = [
    "HurstParam",
    "TimeGrid",
    "CoupledPath",
    "PathBatch",
    "as_hurst",
    "covariance",
    "covariance_matrix",
    "c_h",
    "kernel_K",
    "kernel_dK_dt",
    "cholesky_factor",
    "kernel_matrix",
    "induced_covariance",
    "sample_cholesky",
    "sample_from_bm",
]


@dataclass(frozen=True)
class HurstParam:
    """Hurst exponent ``h`` in (0, 1/2) for a ``dim``-dimensional driver."""

    h: float
    dim: int = 1

    def __post_init__(self):
        h = float(self.h)
        if not 0.0 < h < 0.5:
            raise DomainError(f"Hurst parameter must lie in (0, 1/2), got {self.h}")
        if int(self.dim) < 1:
            raise DomainError(f"dimension must be >= 1, got {self.dim}")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def uniqueness_bound(self) -> float:
        """Largest H for which strong uniqueness is known: 1/(2(3d-1))."""
        return 1.0 / (2.0 * (3 * self.dim - 1))

    @property
    def uniqueness_ok(self) -> bool:
        return self.h < self.uniqueness_bound

    def with_dim(self, dim: int) -> "HurstParam":
        return HurstParam(self.h, dim)


def as_hurst(h, dim=None) -> HurstParam:
    if isinstance(h, HurstParam):
        return h if dim is None or dim == h.dim else h.with_dim(dim)
    return HurstParam(h, 1 if dim is None else dim)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i T / n`` on [0, T]."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError(f"horizon must be a positive finite time, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_points(cls, points, rtol=1e-12) -> "TimeGrid":
        """Recover the grid from its points; anything non-uniform is rejected."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2 or pts[0] != 0.0:
            raise DomainError("grid points must be a 1-d array starting at 0")
        grid = cls(float(pts[-1]), pts.size - 1)
        if not np.allclose(pts, grid.points, rtol=0, atol=rtol * grid.horizon):
            raise DomainError("only uniform grids are supported")
        return grid

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def __len__(self):
        return self.n_steps + 1


@dataclass(frozen=True, eq=False)
class CoupledPath:
    """One driver: Brownian values ``w`` and fBm values ``bh``, both ``(dim, n+1)``.

    ``w`` is ``None`` for paths drawn by the Cholesky sampler.
    """

    grid: TimeGrid
    h: HurstParam
    bh: np.ndarray
    w: np.ndarray | None = None
    seed: int = 0
    index: int = 0
    sampler: str = "kernel"

    @property
    def dim(self) -> int:
        return self.bh.shape[0]


@dataclass(frozen=True, eq=False)
class PathBatch:
    """``n_paths`` drivers stored as arrays of shape ``(n_paths, dim, n+1)``."""

    grid: TimeGrid
    h: HurstParam
    bh: np.ndarray
    w: np.ndarray | None
    seed: int
    sampler: str
    first_index: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.bh.shape[1]

    def __len__(self):
        return self.bh.shape[0]

    def __getitem__(self, i) -> CoupledPath:
        n = len(self)
        if not -n <= i < n:
            raise IndexError(i)
        i %= n
        return CoupledPath(
            self.grid, self.h, self.bh[i], None if self.w is None else self.w[i],
            self.seed, self.first_index + i, self.sampler,
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def manifest(self) -> dict:
        from . import __version__

        return {
            "h": self.h.h,
            "dim": self.dim,
            "horizon": self.grid.horizon,
            "n_steps": self.grid.n_steps,
            "n_paths": len(self),
            "seed": self.seed,
            "sampler": self.sampler,
            "version": __version__,
        }

    def to_csv(self, path, index=0):
        """Write one path: ``t``, then ``W_k`` (kernel sampler only), then ``BH_k``."""
        t = self.grid.points
        cols = [t]
        header = ["t"]
        if self.w is not None:
            cols += list(self.w[index])
            header += [f"W_{k + 1}" for k in range(self.dim)]
        cols += list(self.bh[index])
        header += [f"BH_{k + 1}" for k in range(self.dim)]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(header)
            for row in zip(*cols):
                out.writerow([repr(float(x)) for x in row])

    def write_manifest(self, path):
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- covariance ------------------------------------------------------------


def covariance(h, t, s):
    """``R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2``."""
    h = as_hurst(h).h
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise DomainError("covariance is defined for non-negative times only")
    r = 0.5 * (t ** (2 * h) + s ** (2 * h) - np.abs(t - s) ** (2 * h))
    return float(r) if r.ndim == 0 else r


def covariance_matrix(h, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return covariance(h, times[:, None], times[None, :])


# -- Volterra kernel -------------------------------------------------------


def c_h(h) -> float:
    """Normalising constant ``[2H / ((1 - 2H) B(1 - 2H, H + 1/2))]^{1/2}``."""
    h = as_hurst(h).h
    return math.sqrt(2 * h / ((1 - 2 * h) * special.beta(1 - 2 * h, h + 0.5)))


def _check_ts(t, s):
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= t):
        raise DomainError("kernel requires 0 < s < t")
    return t, s


def _kernel_beta(h, t, s):
    # inner integral written with the regularised incomplete Beta function:
    # int_s^t (u-s)^{H-1/2} u^{H-3/2} du = s^{2H-1} B(1-2H, H+1/2) Q(s/t)
    a = h - 0.5
    q = special.betaincc(1 - 2 * h, h + 0.5, s / t)
    tail = -a * special.beta(1 - 2 * h, h + 0.5) * s**a * q
    return c_h(h) * ((t / s) ** a * (t - s) ** a + tail)


# graded Gauss-Legendre panels in v = sqrt(u - s): edges V q^k, k = 0..P
_QUAD_PANELS = 48
_QUAD_RATIO = 0.5
_QUAD_NODES = 10


@lru_cache(maxsize=4)
def _graded_rule(h):
    x, w = _quad.legendre(_QUAD_NODES)
    edges = _QUAD_RATIO ** np.arange(_QUAD_PANELS + 1)
    lo, hi = edges[1:], edges[:-1]
    nodes = (0.5 * (hi - lo)[:, None] * (x + 1) + lo[:, None]).ravel()
    weights = (0.5 * (hi - lo)[:, None] * w).ravel()
    # last panel [0, q^P] carries the v^{2H} factor as a Jacobi weight
    xj, wj = _quad.jacobi(_QUAD_NODES, 0.0, 2 * h)
    e = edges[-1]
    nodes = np.concatenate([nodes, 0.5 * e * (xj + 1)])
    weights = np.concatenate([weights, wj * (0.5 * e) ** (2 * h + 1)])
    flag = np.concatenate([np.zeros(nodes.size - _QUAD_NODES), np.ones(_QUAD_NODES)])
    return nodes, weights, flag.astype(bool)


def _kernel_quadrature(h, t, s):
    # u = s + v^2 turns (u - s)^{H-1/2} du into 2 v^{2H} dv
    v_max = np.sqrt(t - s)[..., None]
    y, w, jac = _graded_rule(h)
    v = v_max * y
    smooth = 2.0 * (s[..., None] + v**2) ** (h - 1.5)
    f = np.where(jac, smooth, smooth * v ** (2 * h))
    scale = np.where(jac, v_max ** (2 * h + 1), v_max)
    inner = np.sum(f * w * scale, axis=-1)
    a = h - 0.5
    return c_h(h) * ((t / s) ** a * (t - s) ** a - a * s ** (-a) * inner)


def kernel_K(h, t, s, method="beta"):
    """Square-integrable kernel with ``B^H_t = int_0^t K_H(t, s) dW_s``.

    ``K_H(t,s) = c_H [(t/s)^{H-1/2} (t-s)^{H-1/2}
    - (H-1/2) s^{1/2-H} int_s^t (u-s)^{H-1/2} u^{H-3/2} du]`` for ``0 < s < t``.

    ``method="beta"`` evaluates the inner integral in closed form through the
    incomplete Beta function; ``method="quadrature"`` integrates it numerically
    after the substitution ``u = s + v^2``.
    """
    h = as_hurst(h).h
    t, s = _check_ts(t, s)
    t, s = np.broadcast_arrays(t, s)
    if method == "beta":
        r = _kernel_beta(h, t, s)
    elif method == "quadrature":
        r = _kernel_quadrature(h, t, s)
    else:
        raise DomainError(f"unknown kernel method {method!r}; use 'beta' or 'quadrature'")
    return float(r) if r.ndim == 0 else r


def kernel_dK_dt(h, t, s):
    """``dK_H/dt (t, s) = c_H (H - 1/2) (t/s)^{H-1/2} (t - s)^{H-3/2}``."""
    h = as_hurst(h).h
    t, s = _check_ts(t, s)
    r = c_h(h) * (h - 0.5) * (t / s) ** (h - 0.5) * (t - s) ** (h - 1.5)
    return float(r) if np.ndim(r) == 0 else r


# -- samplers --------------------------------------------------------------


@lru_cache(maxsize=8)
def _cholesky(h, horizon, n, jitter):
    grid = TimeGrid(horizon, n)
    sigma = covariance_matrix(h, grid.points[1:])
    if jitter:
        sigma[np.diag_indices_from(sigma)] += jitter
    try:
        factor = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(
            f"fBm covariance not numerically positive definite for H={h}, "
            f"grid size {n}; pass an explicit jitter to regularise"
        ) from exc
    factor.setflags(write=False)
    return factor


def cholesky_factor(h, grid: TimeGrid, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor of ``R_H`` on ``t_1..t_n`` (cached, read-only)."""
    return _cholesky(as_hurst(h).h, grid.horizon, grid.n_steps, float(jitter))


# Gauss rules for the cell integrals int_i^{i+1} K(j, sigma) d sigma
_CELL_NODES_NEAR = 16
_CELL_NODES_FAR = 6
_NEAR = 8


@lru_cache(maxsize=4)
def _unit_kernel_cells(h, n):
    """Dimensionless ``C[j-1, i] = int_i^{i+1} K_H(j, sigma) d sigma`` for ``i < j <= n``.

    ``K_H`` is homogeneous of degree ``H - 1/2``, so the grid matrix is a
    rescaling of this one. Diagonal cells use a Gauss-Jacobi rule with the
    ``(j - sigma)^{H-1/2}`` factor as weight. Near ``sigma = 0`` the kernel mixes
    the powers ``sigma^{H-1/2}`` and ``sigma^{1/2-H}``, so the first cell is
    obtained from the closed-form row integral instead.
    """
    a = h - 0.5
    rows, cols = np.tril_indices(n)
    j = rows + 1.0
    i = cols.astype(float)
    out = np.empty(rows.size)
    last = cols == rows
    first = cols == 0
    far = (cols >= _NEAR) & (rows - cols >= _NEAR)
    cases = [
        (far, _quad.legendre(_CELL_NODES_FAR), 0),
        (~far & ~last & ~first, _quad.legendre(_CELL_NODES_NEAR), 0),
        (last & ~first, _quad.jacobi(_CELL_NODES_NEAR, a, 0.0), 1),
    ]
    out[first] = 0.0
    for mask, (x, w), right in cases:
        idx = np.flatnonzero(mask)
        for chunk in np.array_split(idx, max(1, idx.size // 65536)):
            if chunk.size == 0:
                continue
            jj = j[chunk, None]
            sig = i[chunk, None] + 0.5 * (x + 1.0)
            f = _kernel_beta(h, jj, sig)
            # divide out the Jacobi weight, expressed in sigma units
            if right:
                f = f / (jj - sig) ** a * 0.5**a
            out[chunk] = 0.5 * (f * w).sum(axis=1)
    cells = np.zeros((n, n))
    cells[rows, cols] = out
    # int_0^j K(j, sigma) d sigma = c_H Gamma(H+1/2)^2 Gamma(3/2-H) / Gamma(3/2+H) j^{H+1/2}
    row_total = (c_h(h) * special.gamma(h + 0.5) ** 2 * special.gamma(1.5 - h)
                 / special.gamma(1.5 + h)) * np.arange(1, n + 1) ** (h + 0.5)
    cells[:, 0] = row_total - cells.sum(axis=1)
    cells.setflags(write=False)
    return cells


def kernel_matrix(h, grid: TimeGrid) -> np.ndarray:
    """Cell-averaged kernel ``Kbar[j-1, i] = (1/dt) int_{t_i}^{t_{i+1}} K_H(t_j, s) ds``.

    ``bh(t_j) = sum_i Kbar[j-1, i] dW_i``; the matrix is lower triangular.
    """
    h = as_hurst(h).h
    return _unit_kernel_cells(h, grid.n_steps) * grid.dt ** (h - 0.5)


def induced_covariance(h, grid: TimeGrid) -> np.ndarray:
    """Exact covariance of :func:`sample_from_bm` output on ``t_1..t_n``."""
    k = kernel_matrix(h, grid)
    return grid.dt * k @ k.T


def _validate_sampling(grid, dim, n_paths):
    if not isinstance(grid, TimeGrid):
        raise DomainError("grid must be a TimeGrid")
    if int(dim) < 1:
        raise DomainError(f"dim must be >= 1, got {dim}")
    if int(n_paths) < 1:
        raise DomainError(f"n_paths must be >= 1, got {n_paths}")


def sample_cholesky(h, grid: TimeGrid, dim=1, n_paths=1, seed=0, *, jitter=0.0,
                    threads=1, batch_size=DEFAULT_BATCH) -> PathBatch:
    """Draw fBm paths from the exact Gaussian law on the grid.

    The Cholesky factor is built once and shared by every path and dimension.
    """
    hp = as_hurst(h, dim)
    _validate_sampling(grid, dim, n_paths)
    seed = _rng.check_seed(seed)
    lower = cholesky_factor(hp, grid, jitter)
    n = grid.n_steps

    def run(paths):
        z = _rng.standard_normals(seed, _rng.NOISE, paths, dim, n)
        out = np.zeros((len(paths), dim, n + 1))
        out[:, :, 1:] = z @ lower.T
        return out

    bh = np.concatenate(map_batches(run, n_paths, threads, batch_size))
    return PathBatch(grid, hp, bh, None, seed, "cholesky", meta={"jitter": jitter})


def sample_from_bm(h, grid: TimeGrid, dim=1, n_paths=1, seed=0, *, threads=1,
                   batch_size=DEFAULT_BATCH) -> PathBatch:
    """Coupled Brownian / fractional paths through the Volterra representation.

    Brownian increments ``dW_i ~ N(0, dt)`` are mapped through
    :func:`kernel_matrix`. The fBm values are a deterministic function of
    ``w``, which is kept alongside them.
    """
    hp = as_hurst(h, dim)
    _validate_sampling(grid, dim, n_paths)
    seed = _rng.check_seed(seed)
    kbar = kernel_matrix(hp, grid)
    n = grid.n_steps
    sd = math.sqrt(grid.dt)

    def run(paths):
        dw = sd * _rng.standard_normals(seed, _rng.NOISE, paths, dim, n)
        w = np.zeros((len(paths), dim, n + 1))
        np.cumsum(dw, axis=-1, out=w[:, :, 1:])
        bh = np.zeros_like(w)
        bh[:, :, 1:] = dw @ kbar.T
        return w, bh

    parts = map_batches(run, n_paths, threads, batch_size)
    w = np.concatenate([p[0] for p in parts])
    bh = np.concatenate([p[1] for p in parts])
    return PathBatch(grid, hp, bh, w, seed, "kernel")
