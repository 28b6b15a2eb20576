"""Interval-censored log-likelihood of the partial linear Cox model.

The conditional cumulative hazard is ``Lambda0(t) * exp(eta)`` with
``eta = x'beta + g(z)``. An observation is stored as an interval
``(left, right]`` known to contain the event time:

* left-censored: ``left == 0`` and ``right`` finite,
* interval-censored: ``0 < left < right < inf``,
* right-censored: ``right == inf``.

Writing ``G(t) = Lambda0(t) exp(eta)``, the per-subject contributions are
``log(1 - exp(-G(R)))``, ``-G(L) + log(1 - exp(-(G(R) - G(L))))`` and
``-G(L)``. All derivatives are expressed through the two partials
``dl/dG(L)`` and ``dl/dG(R)``, which gives the score in ``eta`` and the
directional derivative along any perturbation of ``Lambda0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import CenteredNet, Gradients, backward, forward
from .spline import SplineConfig, cum_hazard, ispline_eval

__all__ = [
    "LEFT",
    "INTERVAL",
    "RIGHT",
    "TINY",
    "Observation",
    "SurvData",
    "ModelState",
    "LoglikGrad",
    "censoring_kind",
    "survival",
    "loglik",
    "loglik_terms",
    "loglik_grad",
    "score_eta",
    "score_lambda",
    "dG_partials",
]

LEFT, INTERVAL, RIGHT = 1, 2, 3
# floor for G(R) - G(L) and G(R); hitting it is counted as a numerical-floor event
TINY = 1e-300


def censoring_kind(left, right) -> np.ndarray:
    """Censoring class (1 left, 2 interval, 3 right) of each interval.

    Raises ``ValueError`` for intervals that violate ``0 <= left < right``
    or carry no information (``left == 0`` and ``right == inf``).
    """
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    bad = ~(np.isfinite(left) & (left >= 0) & (right > left)) | np.isnan(right)
    bad |= (left == 0) & np.isinf(right)
    if bad.any():
        rows = np.flatnonzero(np.atleast_1d(bad)).tolist()
        raise ValueError(f"invalid censoring intervals at rows {rows}")
    return np.where(np.isinf(right), RIGHT, np.where(left == 0, LEFT, INTERVAL)).astype(np.int8)


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    z: np.ndarray
    left: float
    right: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))
        object.__setattr__(self, "left", float(self.left))
        object.__setattr__(self, "right", float(self.right))
        censoring_kind([self.left], [self.right])

    @property
    def kind(self) -> int:
        return int(censoring_kind([self.left], [self.right])[0])

    @property
    def flags(self) -> tuple[int, int, int]:
        k = self.kind
        return (int(k == LEFT), int(k == INTERVAL), int(k == RIGHT))


class SurvData:
    """Column-oriented batch of observations.

    I-spline evaluations at the interval endpoints are cached per spline
    configuration, since they do not change during training.
    """

    def __init__(self, x, z, left, right):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.z = np.atleast_2d(np.asarray(z, dtype=float))
        self.left = np.asarray(left, dtype=float).reshape(-1)
        self.right = np.asarray(right, dtype=float).reshape(-1)
        n = self.left.size
        if self.x.shape[0] != n or self.z.shape[0] != n or self.right.size != n:
            raise ValueError("x, z, left and right must have the same number of rows")
        self.kind = censoring_kind(self.left, self.right)
        self._basis: dict = {}

    @classmethod
    def from_observations(cls, observations) -> "SurvData":
        obs = list(observations)
        return cls(
            np.stack([o.x for o in obs]),
            np.stack([o.z for o in obs]),
            [o.left for o in obs],
            [o.right for o in obs],
        )

    def __len__(self) -> int:
        return self.left.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def r(self) -> int:
        return self.z.shape[1]

    def with_z(self, z) -> "SurvData":
        """Same intervals and ``x`` with replaced network inputs (basis cache shared)."""
        out = SurvData(self.x, z, self.left, self.right)
        out._basis = self._basis
        return out

    def subset(self, idx) -> "SurvData":
        idx = np.asarray(idx)
        return SurvData(self.x[idx], self.z[idx], self.left[idx], self.right[idx])

    def observation(self, i: int) -> Observation:
        return Observation(self.x[i], self.z[i], self.left[i], self.right[i])

    def finite_right(self) -> np.ndarray:
        """Right endpoints with ``inf`` replaced by ``left`` (never used there)."""
        return np.where(np.isinf(self.right), self.left, self.right)

    def basis(self, cfg: SplineConfig) -> tuple[np.ndarray, np.ndarray]:
        key = (cfg.degree, cfg.interior_knots, cfg.boundary)
        if key not in self._basis:
            self._basis = {key: (ispline_eval(self.left, cfg), ispline_eval(self.finite_right(), cfg))}
        return self._basis[key]

    def class_counts(self) -> dict:
        return {name: int(np.sum(self.kind == k)) for name, k in (("left", LEFT), ("interval", INTERVAL), ("right", RIGHT))}


@dataclass
class ModelState:
    beta: np.ndarray
    gamma_tilde: np.ndarray
    spline: SplineConfig
    g: CenteredNet

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.gamma_tilde = np.asarray(self.gamma_tilde, dtype=float)
        if self.gamma_tilde.shape != (self.spline.n_basis,):
            raise ValueError("gamma_tilde length does not match the spline basis")

    def eta(self, x, z) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ self.beta + self.g(np.atleast_2d(z))[:, 0]

    def baseline(self, t) -> np.ndarray:
        return cum_hazard(t, self.gamma_tilde, self.spline)

    def copy(self) -> "ModelState":
        return ModelState(
            self.beta.copy(),
            self.gamma_tilde.copy(),
            self.spline,
            CenteredNet(self.g.params.copy(), self.g.offset),
        )


def survival(t, obs: Observation, st: ModelState):
    """Conditional survival ``exp(-Lambda0(t) exp(eta))``."""
    eta = st.eta(obs.x, obs.z)[0]
    return np.exp(-st.baseline(t) * np.exp(eta))


def dG_partials(kind, GL, GR):
    """Per-row log-likelihood and its partials in ``G(L)`` and ``G(R)``.

    Returns ``(ll, dL, dR, floors)`` where ``floors`` flags rows whose
    increment (or ``G(R)`` for left-censored rows) had to be floored.
    """
    kind = np.asarray(kind)
    ll = np.empty(kind.shape)
    dL = np.zeros(kind.shape)
    dR = np.zeros(kind.shape)
    floors = np.zeros(kind.shape, dtype=bool)
    with np.errstate(over="ignore"):
        _fill_partials(kind, GL, GR, ll, dL, dR, floors)
    return ll, dL, dR, floors


def _fill_partials(kind, GL, GR, ll, dL, dR, floors):
    m = kind == LEFT
    if m.any():
        g = GR[m]
        floors[m] = g <= TINY
        g = np.maximum(g, TINY)
        ll[m] = np.log(-np.expm1(-g))
        dR[m] = 1.0 / np.expm1(g)

    m = kind == INTERVAL
    if m.any():
        diff = GR[m] - GL[m]
        floors[m] = diff <= TINY
        diff = np.maximum(diff, TINY)
        inv = 1.0 / np.expm1(diff)
        ll[m] = -GL[m] + np.log(-np.expm1(-diff))
        dL[m] = -1.0 - inv
        dR[m] = inv

    m = kind == RIGHT
    if m.any():
        ll[m] = -GL[m]
        dL[m] = -1.0


def _evaluate(data: SurvData, st: ModelState, eta=None):
    if eta is None:
        eta = st.eta(data.x, data.z)
    IL, IR = data.basis(st.spline)
    coef = np.exp(st.gamma_tilde)
    e = np.exp(eta)
    lamL, lamR = IL @ coef, IR @ coef
    ll, dL, dR, floors = dG_partials(data.kind, lamL * e, lamR * e)
    return eta, e, lamL, lamR, ll, dL, dR, floors, IL, IR, coef


def loglik_terms(data: SurvData, st: ModelState) -> np.ndarray:
    """Per-observation log-likelihood contributions."""
    return _evaluate(data, st)[4]


def loglik(obs, st: ModelState) -> float:
    """Log-likelihood of one :class:`Observation` (or total over a :class:`SurvData`)."""
    if isinstance(obs, Observation):
        obs = SurvData.from_observations([obs])
    return float(np.sum(loglik_terms(obs, st)))


@dataclass
class LoglikGrad:
    total: float
    beta: np.ndarray
    gamma_tilde: np.ndarray
    net: Gradients
    floor_events: int = 0
    terms: np.ndarray | None = field(default=None, repr=False)


def loglik_grad(data: SurvData, st: ModelState) -> LoglikGrad:
    """Total log-likelihood with exact gradients in beta, gamma_tilde and the network."""
    if not isinstance(data, SurvData):
        data = SurvData.from_observations(data)
    eta, e, lamL, lamR, ll, dL, dR, floors, IL, IR, coef = _evaluate(data, st)
    s = dL * lamL * e + dR * lamR * e
    g_beta = data.x.T @ s
    # dl/dgamma_tilde_k = e^eta (dL I_k(L) + dR I_k(R)) exp(gamma_tilde_k)
    g_gamma = ((dL * e) @ IL + (dR * e) @ IR) * coef
    g_net = backward(st.g.params, data.z, s[:, None])
    return LoglikGrad(float(np.sum(ll)), g_beta, g_gamma, g_net, int(floors.sum()), ll)


def score_eta(obs, st: ModelState):
    """Derivative of the log-likelihood with respect to the linear predictor.

    Accepts an :class:`Observation` (returns a float) or a :class:`SurvData`
    (returns one value per row).
    """
    single = isinstance(obs, Observation)
    data = SurvData.from_observations([obs]) if single else obs
    _, e, lamL, lamR, _, dL, dR, *_ = _evaluate(data, st)
    s = dL * lamL * e + dR * lamR * e
    return float(s[0]) if single else s


def score_lambda(obs, st: ModelState, h1_at_L, h1_at_R):
    """Directional derivative of the log-likelihood along ``Lambda0 + s*h1``.

    Only the values of ``h1`` at the interval endpoints enter. For a
    :class:`SurvData`, ``h1_at_L``/``h1_at_R`` are arrays of shape ``(n,)``
    or ``(n, m)`` and the result has the same shape.
    """
    single = isinstance(obs, Observation)
    data = SurvData.from_observations([obs]) if single else obs
    _, e, _, _, _, dL, dR, *_ = _evaluate(data, st)
    hL = np.asarray(h1_at_L, dtype=float)
    hR = np.asarray(h1_at_R, dtype=float)
    a_L, a_R = dL * e, dR * e
    if hL.ndim == 2 or hR.ndim == 2:
        a_L, a_R = a_L[:, None], a_R[:, None]
        hL = hL.reshape(len(data), -1)
        hR = hR.reshape(len(data), -1)
    # a zero coefficient means the endpoint does not enter (h may be inf there)
    with np.errstate(invalid="ignore"):
        out = np.where(a_L == 0, 0.0, a_L * hL) + np.where(a_R == 0, 0.0, a_R * hR)
    if single:
        return float(out.reshape(-1)[0]) if out.size == 1 else out.reshape(-1)
    return out
