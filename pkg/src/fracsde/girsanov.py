"""Measure change removing the drift.

For a solution ``X`` the process ``v = K_H^{-1}(int_0^. b(r, X_r) dr)`` is
computed with the absolutely continuous form of the composition
``K_H^{-1}``, whose argument here is ``b(s, X_s)`` itself. The explicit
bounds below are bounds on this ``v``.

The kernel that generates the fBm acts as ``volterra_scale(h)`` times the
composition, so the Brownian shift that absorbs the drift is
``u = v / volterra_scale(h)``. The density
``dP^/dP = exp(-int u dW - 1/2 int u^2 dt)`` is built from ``u``; under it
``X - x`` is an fBm.
Also here: the explicit bounds on ``v``, and the two closed forms behind the
occupation-time (Krylov) inequality.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError
from .fbm import CoupledPath, TimeGrid, as_hurst
from .fracops import GridFunction, _kh_inverse_ac_values, volterra_scale
from .sde import DriftField, SolutionPath

__all__ = [
    "GirsanovRecord",
    "LatticeFunction",
    "compute_v",
    "compute_v_batch",
    "v_bound",
    "v_constant",
    "l2_constant",
    "exp_moment_bound",
    "log_inv_density",
    "shift_from_v",
    "log_inv_density_batch",
    "v_l2_sq",
    "gaussian_occupation",
    "krylov_rhs",
    "girsanov_record",
]


def v_constant(h) -> float:
    """``Gamma(3/2 - H) / Gamma(2 - 2H)``: ``|v_s| <= ||b|| * this * s^{1/2-H}``."""
    h = as_hurst(h).h
    return math.exp(special.gammaln(1.5 - h) - special.gammaln(2 - 2 * h))


def l2_constant(h) -> float:
    """``C_H = Gamma(3/2 - H)^2 / Gamma(2 - 2H)^2``."""
    return v_constant(h) ** 2


def v_bound(h, b_sup, s):
    """Pointwise bound ``||b|| Gamma(3/2-H)/Gamma(2-2H) s^{1/2-H}``."""
    hp = as_hurst(h)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("v_bound needs s >= 0")
    r = b_sup * v_constant(hp) * s ** (0.5 - hp.h)
    return float(r) if r.ndim == 0 else r


def exp_moment_bound(h, b_sup, horizon_T) -> float:
    """``exp(C_H T^{2(1-H)} ||b||^2 / 2)``, the bound on ``E exp(1/2 int |v|^2)``."""
    hp = as_hurst(h)
    if horizon_T <= 0 or b_sup < 0:
        raise DomainError("need horizon_T > 0 and b_sup >= 0")
    expo = 0.5 * l2_constant(hp) * horizon_T ** (2 * (1 - hp.h)) * b_sup**2
    if expo > 709.0:
        raise NumericalError(f"exponential moment bound overflows (exponent {expo:.4g})")
    return math.exp(expo)


def compute_v_batch(b: DriftField, x: np.ndarray, grid: TimeGrid, h) -> np.ndarray:
    """``v`` for every path and dimension; ``x`` and the result are ``(n, dim, n+1)``."""
    hp = as_hurst(h)
    if x.shape[-1] != len(grid):
        raise DomainError("solution values do not match the grid")
    t = grid.points
    drift = np.stack([b(t[i], x[:, :, i]) for i in range(len(grid))], axis=-1)
    return _kh_inverse_ac_values(drift, t, grid.dt, hp.h)


def compute_v(b: DriftField, x: SolutionPath, h) -> list[GridFunction]:
    """``v = K_H^{-1}(int_0^. b(r, X_r) dr)``, one grid function per dimension."""
    if not isinstance(x, SolutionPath):
        raise DomainError("compute_v expects a SolutionPath")
    v = compute_v_batch(b, x.values[None], x.grid, h)[0]
    return [GridFunction(x.grid, v[k], f"v_{k + 1}") for k in range(v.shape[0])]


def _trapezoid(y, dt):
    return dt * (np.sum(y, axis=-1) - 0.5 * (y[..., 0] + y[..., -1]))


def v_l2_sq(v: np.ndarray, dt) -> np.ndarray:
    """``int_0^T |v_s|^2 ds`` (trapezoid), summed over the dimension axis."""
    return _trapezoid(np.sum(v * v, axis=-2), dt)


def shift_from_v(v, h):
    """Brownian shift ``u`` with ``int_0^t K_H(t, s) u(s) ds = int_0^t b``."""
    return np.asarray(v) / volterra_scale(h)


def log_inv_density_batch(v: np.ndarray, w: np.ndarray, dt, h) -> np.ndarray:
    """``-sum_i u(t_i) dW_i - 1/2 int |u|^2 dt`` with ``u = shift_from_v(v, h)``.

    ``v`` and ``w`` are arrays of shape ``(n, dim, n+1)``.
    """
    if v.shape != w.shape:
        raise DomainError(f"v has shape {v.shape}, Brownian path {w.shape}")
    u = shift_from_v(v, h)
    ito = np.sum(u[..., :-1] * np.diff(w, axis=-1), axis=(-2, -1))
    return -ito - 0.5 * v_l2_sq(u, dt)


def log_inv_density(v, driver: CoupledPath, h) -> float:
    """``log Z_T^{-1}`` for one path; ``v`` is a list of grid functions, one per dimension."""
    if driver.w is None:
        raise DomainError("measure change needs the Brownian path; use sample_from_bm")
    if len(v) != driver.dim or any(f.grid != driver.grid for f in v):
        raise DomainError("v does not live on the driver's grid")
    arr = np.stack([f.values for f in v])[None]
    return float(log_inv_density_batch(arr, driver.w[None], driver.grid.dt, h)[0])


@dataclass
class GirsanovRecord:
    v_l2_sq: float
    shift_l2_sq: float
    log_inv_density: float
    drift_sup: float
    v_l2_bound: float
    v_pointwise_ratio: float
    seed: int
    path_index: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def girsanov_record(b: DriftField, x: SolutionPath, h) -> tuple[list[GridFunction], GirsanovRecord]:
    """``v`` for one path plus its summary record."""
    hp = as_hurst(h)
    v = compute_v(b, x, hp)
    arr = np.stack([f.values for f in v])
    grid = x.grid
    bound = v_bound(hp, b.sup_norm, grid.points[1:])
    mag = np.sqrt(np.sum(arr * arr, axis=0))[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(bound > 0, mag / bound, 0.0)
    rec = GirsanovRecord(
        v_l2_sq=float(v_l2_sq(arr[None], grid.dt)[0]),
        shift_l2_sq=float(v_l2_sq(shift_from_v(arr[None], hp), grid.dt)[0]),
        log_inv_density=log_inv_density(v, x.driver, hp),
        drift_sup=b.sup_norm,
        v_l2_bound=l2_constant(hp) * grid.horizon ** (2 * (1 - hp.h)) * b.sup_norm**2,
        v_pointwise_ratio=float(ratio.max(initial=0.0)),
        seed=x.driver.seed,
        path_index=x.driver.index,
    )
    return v, rec


# -- occupation-time closed forms ------------------------------------------


def gaussian_occupation(gamma_prime, h, dim, t) -> float:
    """``int (2 pi t^{2H})^{-d g/2} exp(-g |y-x|^2 / (2 t^{2H})) dy``, ``g = gamma_prime``.

    Equals ``(2 pi)^{d/2 - d g/2} g^{-d/2} t^{(1-g) d H}``.
    """
    hp = as_hurst(h)
    if not gamma_prime >= 1:
        raise DomainError(f"gamma_prime must be >= 1, got {gamma_prime}")
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    g, d = float(gamma_prime), int(dim)
    return (2 * math.pi) ** (d / 2 - d * g / 2) * g ** (-d / 2) * t ** ((1 - g) * d * hp.h)


@dataclass(frozen=True, eq=False)
class LatticeFunction:
    """Non-negative ``g(t, x)`` sampled at cell centres of a space-time lattice.

    ``values`` has shape ``(n_t, n_x, ..., n_x)`` with ``dim`` spatial axes.
    """

    values: np.ndarray
    dt: float
    dx: float
    dim: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 + self.dim:
            raise DomainError(f"expected {1 + self.dim} lattice axes, got {v.ndim}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DomainError("lattice function must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @classmethod
    def ball_indicator(cls, horizon, radius, dim=1, n_x=128, n_t=1):
        """``1_{[0,T] x B(0, radius)}`` on a lattice over the bounding box."""
        dx = 2 * radius / n_x
        axis = -radius + dx * (np.arange(n_x) + 0.5)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        inside = (sum(m * m for m in mesh) <= radius**2).astype(float)
        return cls(np.broadcast_to(inside, (n_t,) + inside.shape), horizon / n_t, dx, dim)


def krylov_rhs(g: LatticeFunction, beta, h) -> float:
    """``(int_0^T int g^beta dx dt)^{1/beta}``; needs ``beta > 1 + d H``."""
    hp = as_hurst(h)
    if not beta > 1 + g.dim * hp.h:
        raise DomainError(
            f"Krylov exponent beta={beta} must exceed 1 + d H = {1 + g.dim * hp.h:g}"
        )
    mass = float(np.sum(g.values**beta)) * g.dt * g.dx**g.dim
    return mass ** (1.0 / beta)
