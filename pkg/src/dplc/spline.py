"""Monotone baseline cumulative hazard built from I-splines.

M-splines are B-splines rescaled to integrate to one; I-splines are their
running integrals, so every I-spline rises from 0 at ``t_min`` to 1 at
``t_max``. A cumulative hazard written as a positive combination of
I-splines is therefore non-negative and non-decreasing by construction.
Coefficients are stored on the log scale (``gamma_tilde``) so that
unconstrained optimizers can be used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "SplineConfigError",
    "SplineConfig",
    "mspline_eval",
    "ispline_eval",
    "cum_hazard",
    "cum_hazard_grad",
    "default_config",
    "flat_gamma_tilde",
]


class SplineConfigError(ValueError):
    """Raised for an invalid knot/degree configuration."""


@dataclass(frozen=True)
class SplineConfig:
    """Knot and order configuration of the monotone spline family.

    Parameters
    ----------
    degree : int
        Order ``l`` of the M-splines (piecewise polynomials of degree
        ``l - 1``); the I-splines are then of polynomial degree ``l``.
    interior_knots : tuple of float
        Non-decreasing knots strictly inside ``boundary``.
    boundary : tuple of float
        ``(t_min, t_max)``.
    """

    degree: int = 3
    interior_knots: tuple[float, ...] = ()
    boundary: tuple[float, float] = (0.0, 1.0)
    _mknots: np.ndarray = field(init=False, repr=False, compare=False)
    _iknots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.degree, (int, np.integer)) or self.degree < 1:
            raise SplineConfigError(f"degree must be an integer >= 1, got {self.degree!r}")
        t_min, t_max = (float(b) for b in self.boundary)
        if not (math.isfinite(t_min) and math.isfinite(t_max)) or t_min >= t_max:
            raise SplineConfigError(f"invalid boundary {self.boundary!r}")
        knots = tuple(float(k) for k in self.interior_knots)
        if any(b < a for a, b in zip(knots, knots[1:])):
            raise SplineConfigError("interior knots must be sorted")
        if any(not (t_min < k < t_max) for k in knots):
            raise SplineConfigError("interior knots must lie strictly inside the boundary")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "interior_knots", knots)
        object.__setattr__(self, "boundary", (t_min, t_max))
        inner = np.asarray(knots, dtype=float)
        l = self.degree
        object.__setattr__(
            self, "_mknots", np.concatenate([np.full(l, t_min), inner, np.full(l, t_max)])
        )
        object.__setattr__(
            self, "_iknots", np.concatenate([np.full(l + 1, t_min), inner, np.full(l + 1, t_max)])
        )

    @property
    def n_basis(self) -> int:
        """Basis count ``q_n = p_n + l``."""
        return len(self.interior_knots) + self.degree

    @property
    def t_min(self) -> float:
        return self.boundary[0]

    @property
    def t_max(self) -> float:
        return self.boundary[1]

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "interior_knots": list(self.interior_knots),
            "boundary": list(self.boundary),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineConfig":
        return cls(
            degree=int(d["degree"]),
            interior_knots=tuple(d["interior_knots"]),
            boundary=tuple(d["boundary"]),
        )


def _as_times(t):
    t = np.asarray(t, dtype=float)
    if np.isnan(t).any():
        raise ValueError("time values must not be NaN")
    return t


def _design(x: np.ndarray, knots: np.ndarray, k: int) -> np.ndarray:
    # dense B-spline design matrix; x is already clipped into the knot span
    return BSpline.design_matrix(x, knots, k).toarray()


def mspline_eval(t, cfg: SplineConfig) -> np.ndarray:
    """Evaluate the M-spline densities.

    Returns an array of shape ``t.shape + (q_n,)``. Each column is
    non-negative, integrates to one over the boundary interval and is zero
    outside it.
    """
    t = _as_times(t)
    flat = t.reshape(-1)
    l = cfg.degree
    inside = (flat >= cfg.t_min) & (flat <= cfg.t_max)
    out = np.zeros((flat.size, cfg.n_basis))
    if inside.any():
        knots = cfg._mknots
        b = _design(flat[inside], knots, l - 1)
        width = knots[l:] - knots[:-l]
        out[inside] = b * (l / width)
    return out.reshape(t.shape + (cfg.n_basis,))


def ispline_eval(t, cfg: SplineConfig) -> np.ndarray:
    """Evaluate the I-spline basis, shape ``t.shape + (q_n,)``.

    ``I_k(t) = sum_{j > k} B_{j, l+1}(t)`` on the knot vector padded by one
    extra boundary knot at each end. Values are clamped below ``t_min``
    (zero) and above ``t_max`` (one), so the cumulative hazard is flat past
    the last support point.
    """
    t = _as_times(t)
    flat = np.clip(t.reshape(-1), cfg.t_min, cfg.t_max)
    b = _design(flat, cfg._iknots, cfg.degree)
    # reverse cumulative sum, dropping the first (always-zero-sum) column
    tail = np.cumsum(b[:, ::-1], axis=1)[:, ::-1]
    out = np.clip(tail[:, 1:], 0.0, 1.0)
    return out.reshape(t.shape + (cfg.n_basis,))


def cum_hazard(t, gamma_tilde, cfg: SplineConfig):
    """Baseline cumulative hazard ``sum_k exp(gamma_tilde_k) I_k(t)``."""
    coef = np.exp(np.asarray(gamma_tilde, dtype=float))
    if coef.shape != (cfg.n_basis,):
        raise ValueError(f"expected {cfg.n_basis} coefficients, got {coef.shape}")
    return ispline_eval(t, cfg) @ coef


def cum_hazard_grad(t, gamma_tilde, cfg: SplineConfig) -> np.ndarray:
    """Gradient of :func:`cum_hazard` with respect to ``gamma_tilde``."""
    coef = np.exp(np.asarray(gamma_tilde, dtype=float))
    if coef.shape != (cfg.n_basis,):
        raise ValueError(f"expected {cfg.n_basis} coefficients, got {coef.shape}")
    return ispline_eval(t, cfg) * coef


def default_config(left, right, degree: int = 3, n_knots: int | None = None) -> SplineConfig:
    """Quantile-knot configuration for a set of censoring intervals.

    Boundary is ``(0, max finite endpoint)``. Interior knots default to
    ``ceil(n ** (1/5))`` empirical quantiles of the pooled positive finite
    endpoints.
    """
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    pooled = np.concatenate([left, right[np.isfinite(right)]])
    pooled = pooled[pooled > 0]
    if pooled.size == 0:
        raise SplineConfigError("no positive finite endpoints to place knots on")
    t_max = float(pooled.max())
    if n_knots is None:
        n_knots = math.ceil(len(left) ** 0.2)
    probs = np.arange(1, n_knots + 1) / (n_knots + 1)
    knots = np.unique(np.quantile(pooled, probs))
    knots = knots[(knots > 0) & (knots < t_max)]
    return SplineConfig(degree=degree, interior_knots=tuple(knots), boundary=(0.0, t_max))


def flat_gamma_tilde(cfg: SplineConfig, total: float = 1.0) -> np.ndarray:
    """Coefficients of a hazard reaching ``total`` at ``t_max`` in equal parts."""
    return np.full(cfg.n_basis, math.log(total / cfg.n_basis))
