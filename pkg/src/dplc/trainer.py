"""Sieve maximum likelihood fitting with Adam, restarts and hold-out selection.

All parameters (``beta``, log spline coefficients and network weights) are
updated jointly by Adam ascent on the mean log-likelihood. Architectures are
compared by the summed log-likelihood on a hold-out split; the winner is
refit on the whole dataset.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .likelihood import RIGHT, ModelState, SurvData, _evaluate, loglik_grad, loglik_terms
from .network import Architecture, CenteredNet, center, fold_input_scaling, init_params
from .spline import SplineConfig, default_config, flat_gamma_tilde

__all__ = [
    "FitError",
    "IdentifiabilityError",
    "TrainConfig",
    "FitResult",
    "Adam",
    "full_grid",
    "width_grid",
    "derive_seed",
    "split_indices",
    "initial_state",
    "fit_once",
    "fit_with_restarts",
    "select_and_refit",
    "polish",
]

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """Optimization failed (e.g. diverged after all learning-rate retries)."""


class IdentifiabilityError(ValueError):
    """The baseline hazard is not identified (no event-bracketing row)."""


def width_grid(r: int) -> list[int]:
    """Hidden widths ``ceil(u * r / 4)`` for ``u = 1..8`` (deduplicated)."""
    return sorted({math.ceil(u * r / 4) for u in range(1, 9)})


def full_grid(r: int, depths=(2, 3, 4)) -> list[tuple[int, ...]]:
    """All depth/width combinations with a common width across hidden layers."""
    return [(w,) * k for k in depths for w in width_grid(r)]


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and model-selection settings.

    ``grid`` holds candidate hidden-width tuples; ``()`` is the affine
    (linear Cox) network. ``None`` means the full depth {2,3,4} x width
    grid built from the data dimension. ``batch_size`` is ``"auto"``
    (full batch up to 2000 rows, else 256), ``"full"`` or an integer.
    With ``standardize`` the network sees columnwise standardized inputs
    during training; the scaling is folded into its first layer afterwards.
    With ``polish`` the final refit ends by maximizing over ``beta`` and
    the spline coefficients with the network frozen (see :func:`polish`).
    """

    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int | str = "auto"
    restarts: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grid: tuple[tuple[int, ...], ...] | None = None
    validation_fraction: float = 0.2
    seed: int = 0
    patience: int = 25
    tol: float = 1e-6
    max_retries: int = 3
    spline_degree: int = 3
    n_knots: int | None = None
    early_stopping: bool = True
    standardize: bool = True
    polish: bool = True

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(tuple(int(w) for w in g) for g in self.grid))
            if not self.grid:
                raise ValueError("architecture grid is empty")

    def grid_for(self, r: int) -> list[tuple[int, ...]]:
        return list(self.grid) if self.grid is not None else full_grid(r)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["grid"] = None if self.grid is None else [list(g) for g in self.grid]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        if d.get("grid") is not None:
            d["grid"] = tuple(tuple(g) for g in d["grid"])
        return cls(**d)


@dataclass
class FitResult:
    state: ModelState
    selected_arch: Architecture
    train_loglik: float
    val_loglik: float | None = None
    restart_logs: list[float] = field(default_factory=list)
    numerical_floor_events: int = 0
    epochs_run: int = 0
    best_epoch: int = 0
    seed: int | None = None
    learning_rate: float | None = None
    history: list[float] = field(default_factory=list, repr=False)
    grid_scores: dict = field(default_factory=dict)


class Adam:
    """Adam ascent over a list of arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p += self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32).view(np.uint64)[0] >> 1)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded ``(train, validation)`` index split; validation gets ``round(fraction*n)`` rows."""
    perm = np.random.default_rng(derive_seed(seed, 0x5B1)).permutation(n)
    n_val = max(1, int(round(fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _check_identifiable(data: SurvData) -> None:
    if len(data) == 0:
        raise IdentifiabilityError("empty dataset")
    if np.all(data.kind == RIGHT):
        raise IdentifiabilityError("all observations are right-censored; the baseline hazard is not identified")


def initial_state(data: SurvData, widths, spline: SplineConfig, seed: int) -> ModelState:
    arch = Architecture(data.r, tuple(widths), 1)
    params = init_params(arch, np.random.default_rng(seed))
    return ModelState(np.zeros(data.d), flat_gamma_tilde(spline), spline, CenteredNet(params, 0.0))


def input_scaling(z) -> tuple[np.ndarray, np.ndarray]:
    """Column means and standard deviations (constant columns get scale 1)."""
    z = np.asarray(z, dtype=float)
    sd = z.std(axis=0)
    return z.mean(axis=0), np.where(sd > 0, sd, 1.0)


def _param_list(st: ModelState) -> list[np.ndarray]:
    return [st.beta, st.gamma_tilde, *st.g.params.arrays()]


def _batches(n: int, batch_size, rng: np.random.Generator):
    if batch_size == "auto":
        batch_size = n if n <= 2000 else 256
    if batch_size == "full" or int(batch_size) >= n:
        yield None
        return
    order = rng.permutation(n)
    for start in range(0, n, int(batch_size)):
        yield np.sort(order[start : start + int(batch_size)])


def _absorb_offset(st: ModelState, data: SurvData) -> ModelState:
    # centering g shifts its output by c; exp(c) moves into the baseline so the model is unchanged
    raw = CenteredNet(st.g.params, 0.0)
    g = center(raw.params, data.z)
    gamma = st.gamma_tilde + g.offset
    return ModelState(st.beta, gamma, st.spline, g)


def _train(data, st, cfg: TrainConfig, lr: float, seed: int, val_data=None, max_epochs=None):
    """Adam loop. Returns ``(state, history, floors, epochs, best_epoch)`` or
    ``state=None`` on divergence.

    With ``val_data`` and ``cfg.early_stopping`` the state from the epoch
    with the best validation log-likelihood is returned and patience is
    counted on the validation score; otherwise patience is counted on the
    full training log-likelihood.
    """
    n = len(data)
    params = _param_list(st)
    opt = Adam(params, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng(derive_seed(seed, 0xBA7C))
    watch_val = val_data is not None and cfg.early_stopping
    n_watch = len(val_data) if watch_val else n
    history = []
    floors = 0
    best = -np.inf
    best_epoch = 0
    snapshot = None
    since_best = 0
    epochs = 0
    limit = cfg.epochs if max_epochs is None else max_epochs
    for epoch in range(limit):
        for idx in _batches(n, cfg.batch_size, rng):
            batch = data if idx is None else data.subset(idx)
            gr = loglik_grad(batch, st)
            floors += gr.floor_events
            if not math.isfinite(gr.total):
                return None, history, floors, epochs, best_epoch
            m = 1.0 / len(batch)
            grads = [gr.beta * m, gr.gamma_tilde * m, *(a * m for a in gr.net.arrays())]
            opt.step(grads)
        epochs = epoch + 1
        total = float(np.sum(loglik_terms(data, st)))
        if not math.isfinite(total):
            return None, history, floors, epochs, best_epoch
        history.append(total)
        score = float(np.sum(loglik_terms(val_data, st))) if watch_val else total
        if score > best + cfg.tol * n_watch:
            best = score
            best_epoch = epochs
            since_best = 0
            if watch_val:
                snapshot = [p.copy() for p in params]
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if snapshot is not None:
        for p, saved in zip(params, snapshot):
            p[...] = saved
    else:
        best_epoch = epochs
    return st, history, floors, epochs, best_epoch


def polish(data: SurvData, st: ModelState, cfg: TrainConfig, lr: float | None = None) -> tuple[ModelState, int]:
    """Maximize over ``beta`` and ``gamma_tilde`` with ``g`` held fixed.

    Early stopping halts every parameter at the epoch where the network
    generalizes best, which is typically before the low-dimensional
    parametric part has converged. Given the network, the remaining problem
    is a smooth parametric one, so it is run to convergence (same Adam
    settings, full batch, patience rule on the training log-likelihood).
    Returns the new state and the number of epochs used.
    """
    st = st.copy()
    params = [st.beta, st.gamma_tilde]
    opt = Adam(params, cfg.learning_rate if lr is None else lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    n = len(data)
    eta_g = st.g(data.z)[:, 0]
    best, since, epochs = -np.inf, 0, 0
    best_params = [p.copy() for p in params]
    for epoch in range(cfg.epochs):
        eta = data.x @ st.beta + eta_g
        _, e, lamL, lamR, ll, dL, dR, _, IL, IR, coef = _evaluate(data, st, eta)
        total = float(np.sum(ll))
        if not math.isfinite(total):
            break
        if total > best:
            if total > best + cfg.tol * n:
                since = 0
            best, best_params = total, [p.copy() for p in params]
        since += 1
        if since > cfg.patience:
            break
        s = dL * lamL * e + dR * lamR * e
        g_gamma = ((dL * e) @ IL + (dR * e) @ IR) * coef
        opt.step([data.x.T @ s / n, g_gamma / n])
        epochs = epoch + 1
    final = float(np.sum(loglik_terms(data, st)))
    if not final >= best:
        for p, old in zip(params, best_params):
            p[...] = old
    return st, epochs


def fit_once(
    data: SurvData,
    widths=(),
    cfg: TrainConfig | None = None,
    seed: int | None = None,
    *,
    spline: SplineConfig | None = None,
    val_data: SurvData | None = None,
    max_epochs: int | None = None,
) -> FitResult:
    """Fit one architecture from one random initialization.

    ``val_data`` is scored after training and, when ``cfg.early_stopping``
    is set, also drives early stopping. ``max_epochs`` overrides
    ``cfg.epochs``. Divergence (a non-finite log-likelihood) triggers a
    retry from the same initialization with half the learning rate, up to
    ``cfg.max_retries`` times.
    """
    cfg = cfg or TrainConfig()
    seed = cfg.seed if seed is None else seed
    _check_identifiable(data)
    if isinstance(widths, Architecture):
        widths = widths.widths
    if spline is None:
        spline = default_config(data.left, data.right, cfg.spline_degree, cfg.n_knots)
    shift, scale = input_scaling(data.z) if cfg.standardize else (0.0, 1.0)
    work = data.with_z((data.z - shift) / scale)
    work_val = None if val_data is None else val_data.with_z((val_data.z - shift) / scale)
    lr = cfg.learning_rate
    for attempt in range(cfg.max_retries + 1):
        st = initial_state(work, widths, spline, seed)
        trained, history, floors, epochs, best_epoch = _train(work, st, cfg, lr, seed, work_val, max_epochs)
        if trained is not None:
            break
        log.warning("fit diverged (attempt %d, lr=%g); retrying with lr=%g", attempt, lr, lr / 2)
        lr /= 2
    else:
        raise FitError(f"optimization diverged after {cfg.max_retries} learning-rate reductions")
    if cfg.standardize:
        params = fold_input_scaling(trained.g.params, shift, scale)
        trained = ModelState(trained.beta, trained.gamma_tilde, spline, CenteredNet(params, 0.0))
    final = _absorb_offset(trained, data)
    train_ll = float(np.sum(loglik_terms(data, final)))
    val_ll = None if val_data is None else float(np.sum(loglik_terms(val_data, final)))
    return FitResult(
        state=final,
        selected_arch=final.g.params.arch,
        train_loglik=train_ll,
        val_loglik=val_ll,
        restart_logs=[val_ll if val_ll is not None else train_ll],
        numerical_floor_events=floors,
        epochs_run=epochs,
        best_epoch=best_epoch,
        seed=seed,
        learning_rate=lr,
        history=history,
    )


def fit_with_restarts(
    data: SurvData,
    widths=(),
    cfg: TrainConfig | None = None,
    *,
    val_data: SurvData | None = None,
    spline: SplineConfig | None = None,
    arch_index: int = 0,
) -> FitResult:
    """Best of ``cfg.restarts`` fits, scored on ``val_data`` (or the training
    log-likelihood when no validation data is given).

    Restart ``k`` uses seed ``derive_seed(cfg.seed, arch_index, k)``.
    """
    cfg = cfg or TrainConfig()
    if spline is None:
        spline = default_config(data.left, data.right, cfg.spline_degree, cfg.n_knots)
    best = None
    logs = []
    floors = 0
    for k in range(cfg.restarts):
        seed = derive_seed(cfg.seed, arch_index, k)
        res = fit_once(data, widths, cfg, seed, spline=spline, val_data=val_data)
        score = res.val_loglik if val_data is not None else res.train_loglik
        logs.append(score)
        floors += res.numerical_floor_events
        if best is None or score > logs[best[0]]:
            best = (k, res)
    res = best[1]
    res.restart_logs = logs
    res.numerical_floor_events = floors
    return res


def select_and_refit(data: SurvData, cfg: TrainConfig | None = None) -> FitResult:
    """Hold-out architecture selection followed by a full-data refit.

    The data are split by a seeded permutation; every grid architecture is
    fit on the training part with restarts and scored by the summed
    validation log-likelihood. The best architecture is refit on all rows
    starting from the initialization of its winning restart; with early
    stopping the refit runs for the winning restart's best epoch count.
    """
    cfg = cfg or TrainConfig()
    _check_identifiable(data)
    grid = cfg.grid_for(data.r)
    if not grid:
        raise ValueError("architecture grid is empty")
    spline = default_config(data.left, data.right, cfg.spline_degree, cfg.n_knots)
    tr_idx, va_idx = split_indices(len(data), cfg.validation_fraction, cfg.seed)
    train, val = data.subset(tr_idx), data.subset(va_idx)
    _check_identifiable(train)
    scores = {}
    best = None
    floors = 0
    for a, widths in enumerate(grid):
        res = fit_with_restarts(train, widths, cfg, val_data=val, spline=spline, arch_index=a)
        floors += res.numerical_floor_events
        scores[Architecture(data.r, widths).label()] = res.val_loglik
        log.debug("arch %s: val loglik %.4f", widths, res.val_loglik)
        if best is None or res.val_loglik > best[1].val_loglik:
            best = (widths, res)
    widths, chosen = best
    refit_cfg = cfg.with_(learning_rate=chosen.learning_rate)
    epochs = chosen.best_epoch if cfg.early_stopping else None
    refit = fit_once(data, widths, refit_cfg, chosen.seed, spline=spline, max_epochs=epochs)
    if cfg.polish:
        refit.state, extra = polish(data, refit.state, refit_cfg)
        refit.epochs_run += extra
        refit.train_loglik = float(np.sum(loglik_terms(data, refit.state)))
    refit.val_loglik = chosen.val_loglik
    refit.restart_logs = chosen.restart_logs
    refit.numerical_floor_events += floors
    refit.grid_scores = scores
    return refit
