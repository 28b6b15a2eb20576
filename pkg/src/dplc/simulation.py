"""Synthetic interval-censored data and evaluation metrics.

Covariates: ``X ~ Bernoulli(1/2)`` and ``Z`` on a box with Clayton-copula
dependence between its components (``copula_theta = 0`` is the independence
limit of the Clayton family). Event times follow the partial linear
Cox model with Weibull-type baseline ``mu * t**kappa``; examination times
are a random subset of an equally spaced visit grid on ``[0, tau]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .likelihood import SurvData

__all__ = [
    "G_CASES",
    "G_SCALES",
    "SimDesign",
    "sample_clayton",
    "make_covariates",
    "g_true",
    "variance_ratio",
    "sample_event",
    "censor",
    "g_population_mean",
    "g_centered",
    "simulate",
    "rmse_g",
    "imse",
    "simpson",
]

G_CASES = ("linear", "additive", "deep1", "deep2")
G_SCALES = {"linear": 2.4, "additive": 1.2, "deep1": 4.0, "deep2": 4.5}


@dataclass(frozen=True)
class SimDesign:
    """One simulation setting.

    ``mu=None`` picks the baseline scale that puts the median event time
    at ``eta = 0`` in the middle of the follow-up window. The default
    covariate design is independent uniform margins on ``[0, 1]``; the
    four effect functions are centered at ``z = 1/2``.
    """

    n: int = 500
    g_case: str = "linear"
    r: int = 10
    copula_theta: float = 0.0
    margin: tuple[float, float] = (0.0, 1.0)
    mu: float | None = None
    kappa: float = 1.0
    beta0: float = 1.2
    visit_p: float = 0.7
    tau: float = 5.0
    n_visits: int = 10
    g_scale: float | None = None

    def __post_init__(self):
        if self.g_case not in G_CASES:
            raise ValueError(f"unknown g_case {self.g_case!r}; expected one of {G_CASES}")
        if self.n < 1 or self.r < 1 or self.n_visits < 1:
            raise ValueError("n, r and n_visits must be positive")
        if not self.copula_theta >= 0:
            raise ValueError("copula_theta must be >= 0 (0 means independent components)")
        if self.kappa <= 0 or self.tau <= 0 or (self.mu is not None and self.mu <= 0):
            raise ValueError("kappa, tau and mu must be positive")
        if not 0 < self.visit_p <= 1:
            raise ValueError("visit_p must lie in (0, 1]")
        lo, hi = self.margin
        if not lo < hi:
            raise ValueError(f"invalid margin {self.margin}")
        object.__setattr__(self, "margin", (float(lo), float(hi)))

    @property
    def baseline_scale(self) -> float:
        if self.mu is not None:
            return float(self.mu)
        return math.log(2.0) / (self.tau / 2.0) ** self.kappa

    @property
    def scale(self) -> float:
        return G_SCALES[self.g_case] if self.g_scale is None else float(self.g_scale)

    @property
    def visit_times(self) -> np.ndarray:
        return self.tau / self.n_visits * np.arange(1, self.n_visits + 1)

    def with_(self, **kw) -> "SimDesign":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["margin"] = list(self.margin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimDesign":
        d = dict(d)
        if "margin" in d:
            d["margin"] = tuple(d["margin"])
        return cls(**d)


def sample_clayton(n: int, r: int, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Marshall-Olkin sampler for the ``r``-variate Clayton copula.

    A gamma frailty ``W`` (shape ``1/theta``) is shared by all components;
    ``U_k = (1 - log(E_k) / W) ** (-1/theta)`` with independent uniforms
    ``E_k``. Pairwise Kendall's tau equals ``theta / (theta + 2)``.
    """
    if theta <= 0:
        raise ValueError(f"Clayton parameter must be positive, got {theta}")
    shape = 1.0 / theta
    # log W via W = G(shape + 1) * V**(1/shape): a direct gamma draw with a
    # small shape underflows to 0 for large theta
    log_w = np.log(rng.gamma(shape + 1.0, 1.0, size=(n, 1))) + np.log(rng.uniform(size=(n, 1))) / shape
    e = rng.uniform(size=(n, r))
    # U = (1 + (-log E) / W) ** (-1/theta), evaluated as exp(-log1p(.)/theta)
    return np.exp(-np.logaddexp(0.0, np.log(-np.log(e)) - log_w) / theta)


def make_covariates(design: SimDesign, rng: np.random.Generator, n: int | None = None):
    """Draw ``(x, z)``: ``x`` of shape ``(n, 1)`` in {0, 1}, ``z`` of shape ``(n, r)``."""
    n = design.n if n is None else n
    x = rng.binomial(1, 0.5, size=(n, 1)).astype(float)
    if design.copula_theta == 0:
        u = rng.uniform(size=(n, design.r))
    else:
        u = sample_clayton(n, design.r, design.copula_theta, rng)
    lo, hi = design.margin
    return x, lo + (hi - lo) * u


def g_true(case: str, z, scale: float | None = None) -> np.ndarray:
    """True nonparametric effect for one of the four designs.

    Uses the first ten (``additive``, ``linear``, ``deep1``) or first three
    (``deep2``) components of ``z``.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if case not in G_CASES:
        raise ValueError(f"unknown g case {case!r}")
    c = G_SCALES[case] if scale is None else scale
    if case == "linear":
        out = c * np.sum(z[:, :10] - 0.5, axis=1)
    elif case == "additive":
        k = np.arange(1, min(10, z.shape[1]) + 1)
        out = c * np.sum(np.cos(2.0 * np.pi * z[:, : k.size] / k), axis=1)
    elif case == "deep1":
        out = c * np.abs(np.sum(z[:, :10] - 0.5, axis=1))
    elif case == "deep2":
        head = z[:, :3]
        out = c * (head.max(axis=1) - head.min(axis=1))
    else:
        raise ValueError(f"unknown g case {case!r}")
    return out[0] if single else out


def variance_ratio(case: str, design: SimDesign, rng: np.random.Generator, n_draws: int = 100_000) -> float:
    """Monte Carlo ``Var(g(Z)) / Var(X beta0)`` with ``X ~ Bernoulli(1/2)``."""
    _, z = make_covariates(design, rng, n=n_draws)
    num = np.var(g_true(case, z, design.scale if case == design.g_case else None), ddof=1)
    return float(num / (design.beta0**2 * 0.25))


def sample_event(design: SimDesign, eta, rng: np.random.Generator) -> np.ndarray:
    """Inverse-transform draw with cumulative hazard ``mu t**kappa exp(eta)``."""
    eta = np.asarray(eta, dtype=float)
    e = rng.standard_exponential(size=eta.shape)
    return (e / (design.baseline_scale * np.exp(eta))) ** (1.0 / design.kappa)


def censor(t, design: SimDesign, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Bracket event times between realized visits.

    Each grid visit happens independently with probability ``visit_p``;
    schedules with no visit at all are redrawn. An event exactly at a visit
    is counted at that visit.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    grid = design.visit_times
    seen = rng.uniform(size=(t.size, grid.size)) < design.visit_p
    empty = ~seen.any(axis=1)
    while empty.any():
        seen[empty] = rng.uniform(size=(int(empty.sum()), grid.size)) < design.visit_p
        empty = ~seen.any(axis=1)
    before = seen & (grid[None, :] < t[:, None])
    after = seen & (grid[None, :] >= t[:, None])
    left = np.where(before, grid[None, :], 0.0).max(axis=1)
    right = np.where(after, grid[None, :], np.inf).min(axis=1)
    return left, right


@dataclass
class SimSample:
    data: SurvData
    time: np.ndarray
    g: np.ndarray = field(repr=False)


@lru_cache(maxsize=64)
def _g_mean(case: str, scale: float, r: int, theta: float, margin: tuple[float, float]) -> float:
    design = SimDesign(g_case=case, r=r, copula_theta=theta, margin=margin)
    _, z = make_covariates(design, np.random.default_rng(20240101), n=400_000)
    return float(np.mean(g_true(case, z, scale)))


def g_population_mean(design: SimDesign) -> float:
    """Monte Carlo ``E g(Z)`` (fixed internal seed, 4e5 draws)."""
    return _g_mean(design.g_case, design.scale, design.r, design.copula_theta, design.margin)


def g_centered(design: SimDesign, z) -> np.ndarray:
    """True effect shifted to population mean zero, as used for event times."""
    return g_true(design.g_case, z, design.scale) - g_population_mean(design)


def simulate(design: SimDesign, rng: np.random.Generator, n: int | None = None) -> SimSample:
    """Draw one interval-censored dataset from ``design``.

    Event times use the population-centered effect (``E g(Z) = 0``), so
    ``mu`` alone sets the baseline risk level.
    """
    x, z = make_covariates(design, rng, n)
    g = g_centered(design, z)
    t = sample_event(design, x[:, 0] * design.beta0 + g, rng)
    left, right = censor(t, design, rng)
    return SimSample(SurvData(x, z, left, right), t, g)


def rmse_g(ghat, g0) -> float:
    """Relative squared error of ``ghat`` against the test-centered truth.

    ``sum (ghat - (g0 - mean g0))**2 / sum (g0 - mean g0)**2``; ``ghat`` is
    expected to be centered already.
    """
    ghat = np.asarray(ghat, dtype=float).reshape(-1)
    g0 = np.asarray(g0, dtype=float).reshape(-1)
    if ghat.size != g0.size:
        raise ValueError(f"ghat has {ghat.size} values but g0 has {g0.size}")
    dev = g0 - np.mean(g0)
    return float(np.sum((ghat - dev) ** 2) / np.sum(dev**2))


def simpson(f, a, b, n_points: int = 201):
    """Composite Simpson rule with an odd number of nodes, vectorized over
    rows of ``a``/``b`` (``f`` maps an ``(m, k)`` array of times to values)."""
    if n_points % 2 == 0:
        n_points += 1
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.linspace(0.0, 1.0, n_points)
    nodes = a[..., None] + (b - a)[..., None] * u
    w = np.ones(n_points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    h = (b - a) / (n_points - 1)
    return (f(nodes) @ w) * h / 3.0


def imse(survival_fn, left, right, tau: float, n_points: int = 201) -> float:
    """Integrated squared error of predicted survival curves.

    ``survival_fn(rows, times)`` returns predicted survival for subject
    ``rows[i]`` at ``times[i, :]``. Per subject the error is
    ``int_0^L (1 - S)^2 + int_{min(R, tau)}^tau S^2``, averaged over
    subjects.
    """
    left = np.minimum(np.asarray(left, dtype=float), tau)
    right = np.minimum(np.asarray(right, dtype=float), tau)
    rows = np.arange(left.size)
    early = simpson(lambda t: (1.0 - survival_fn(rows, t)) ** 2, np.zeros_like(left), left, n_points)
    late = simpson(lambda t: survival_fn(rows, t) ** 2, right, np.full_like(right, tau), n_points)
    return float(np.mean(early + late))
