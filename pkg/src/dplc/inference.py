"""Information matrix and Wald inference for the linear coefficients.

The efficient score for ``beta`` is the parametric score ``x * s`` (``s``
being the score in the linear predictor) minus its projection on the
nuisance scores: perturbations ``h1`` of the baseline cumulative hazard and
``h2`` of the nonparametric effect. The projection is found by least
squares over two auxiliary ReLU networks, ``h1: t -> R^d`` and
``h2: z -> R^d``, and the information matrix is the mean outer product of
the residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .likelihood import ModelState, SurvData, _evaluate
from .network import Architecture, NetParams, _forward_cache, backward, fold_input_scaling, forward, init_params
from .trainer import Adam, FitResult, TrainConfig, derive_seed, input_scaling, split_indices

__all__ = [
    "SingularInformationError",
    "ScoreParts",
    "LfdPair",
    "InferenceResult",
    "score_parts",
    "projection_residuals",
    "estimate_lfd",
    "information_from_residuals",
    "information_matrix",
    "wald_report",
    "format_wald_table",
]

Z_975 = float(norm.ppf(0.975))


class SingularInformationError(np.linalg.LinAlgError):
    """The estimated information matrix is (numerically) singular."""

    def __init__(self, message, eigenvalues=None, condition=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.condition = condition


@dataclass
class ScoreParts:
    """Per-observation ingredients of the projection at a fixed model state.

    ``score_beta`` is ``x * s``; ``coef_left``/``coef_right`` multiply
    ``h1`` at the interval endpoints; ``s`` multiplies ``h2(z)``.
    """

    score_beta: np.ndarray
    s: np.ndarray
    coef_left: np.ndarray
    coef_right: np.ndarray
    t_left: np.ndarray
    t_right: np.ndarray
    z: np.ndarray


def score_parts(data: SurvData, st: ModelState) -> ScoreParts:
    _, e, lamL, lamR, _, dL, dR, *_ = _evaluate(data, st)
    s = (dL * lamL + dR * lamR) * e
    return ScoreParts(
        score_beta=data.x * s[:, None],
        s=s,
        coef_left=dL * e,
        coef_right=dR * e,
        t_left=data.left,
        t_right=data.finite_right(),
        z=data.z,
    )


@dataclass
class LfdPair:
    """Estimated least favourable directions.

    ``h1`` takes the rescaled time ``t / t_scale`` (clamped to ``[0, 1]``).
    """

    h1: NetParams
    h2: NetParams
    t_scale: float
    rho_initial: float
    rho_final: float
    history: list[float] = field(default_factory=list, repr=False)

    def h1_at(self, t) -> np.ndarray:
        u = np.clip(np.asarray(t, dtype=float) / self.t_scale, 0.0, 1.0)
        return forward(self.h1, u.reshape(-1, 1))

    def h2_at(self, z) -> np.ndarray:
        return forward(self.h2, np.atleast_2d(z))


def projection_residuals(parts: ScoreParts, h1L, h1R, h2z) -> np.ndarray:
    """``score_beta - l1[h1] - l2[h2]`` row by row, shape ``(n, d)``."""
    return (
        parts.score_beta
        - parts.coef_left[:, None] * h1L
        - parts.coef_right[:, None] * h1R
        - parts.s[:, None] * h2z
    )


def _hidden(params: NetParams, inputs: np.ndarray) -> np.ndarray:
    # last hidden activations with a trailing ones column (the output layer's design)
    _, acts = _forward_cache(params, inputs)
    return np.hstack([acts[-1], np.ones((inputs.shape[0], 1))])


def _refit_output_layers(parts: ScoreParts, h1: NetParams, h2: NetParams, uL, uR, z) -> None:
    """Exact least squares over both output layers with the hidden layers frozen."""
    phiL, phiR = _hidden(h1, uL), _hidden(h1, uR)
    phi2 = _hidden(h2, z)
    design = np.hstack(
        [parts.coef_left[:, None] * phiL + parts.coef_right[:, None] * phiR, parts.s[:, None] * phi2]
    )
    coef, *_ = np.linalg.lstsq(design, parts.score_beta, rcond=None)
    k1 = phiL.shape[1]
    h1.weights[-1][...] = coef[: k1 - 1].T
    h1.biases[-1][...] = coef[k1 - 1]
    h2.weights[-1][...] = coef[k1:-1].T
    h2.biases[-1][...] = coef[-1]


def _subset(parts: ScoreParts, idx) -> ScoreParts:
    return ScoreParts(*(getattr(parts, f)[idx] for f in ScoreParts.__dataclass_fields__))


def estimate_lfd(
    data: SurvData,
    fit: FitResult | ModelState,
    aux_cfg: TrainConfig | None = None,
    *,
    h1_widths=(8, 8),
    h2_widths=None,
    refit_output: bool = True,
) -> LfdPair:
    """Minimize the empirical projection residual over two ReLU networks.

    Both networks are trained jointly, full batch, by Adam on
    ``rho = mean ||score_beta - l1[h1] - l2[h2]||^2`` with the fitted model
    held fixed. The output layers start at zero, so training starts from
    ``h1 = h2 = 0``. ``h1`` sees time rescaled to ``[0, 1]``; ``h2`` sees
    standardized covariates (folded back into its first layer).

    With ``aux_cfg.early_stopping`` a ``validation_fraction`` of the rows is
    held out and the networks are taken from the epoch with the smallest
    held-out residual, which keeps the projection from fitting noise in
    the scores. With ``refit_output`` the output layers are then set to
    their exact least-squares values (on the training rows) given the
    learned hidden layers. If the result does not improve on the zero
    directions over the full sample, the zero directions are returned.
    """
    st = fit.state if isinstance(fit, FitResult) else fit
    cfg = aux_cfg or TrainConfig(learning_rate=1e-3, epochs=500, early_stopping=False)
    d, r = data.d, data.r
    if h2_widths is None:
        h2_widths = (max(8, r),) * 2
    parts = score_parts(data, st)
    t_scale = st.spline.t_max
    shift, scale = input_scaling(parts.z)
    n = len(data)
    if cfg.early_stopping:
        tr_idx, va_idx = split_indices(n, cfg.validation_fraction, derive_seed(cfg.seed, 0x4810))
    else:
        tr_idx, va_idx = np.arange(n), None

    def inputs(p: ScoreParts):
        uL = np.clip(p.t_left / t_scale, 0.0, 1.0)[:, None]
        uR = np.clip(p.t_right / t_scale, 0.0, 1.0)[:, None]
        return np.vstack([uL, uR]), (p.z - shift) / scale

    train = _subset(parts, tr_idx)
    u_tr, z_tr = inputs(train)
    n_tr = len(tr_idx)
    if va_idx is not None:
        val = _subset(parts, va_idx)
        u_va, z_va = inputs(val)

    rng1 = np.random.default_rng(derive_seed(cfg.seed, 0x4811))
    rng2 = np.random.default_rng(derive_seed(cfg.seed, 0x4812))
    h1 = init_params(Architecture(1, tuple(h1_widths), d), rng1)
    h2 = init_params(Architecture(r, tuple(h2_widths), d), rng2)
    for p in (h1, h2):
        p.weights[-1][...] = 0.0

    def residuals(p: ScoreParts, u, z):
        h1v = forward(h1, u)
        m = len(z)
        return projection_residuals(p, h1v[:m], h1v[m:], forward(h2, z))

    def rho_of(res):
        return float(np.mean(np.sum(res**2, axis=1)))

    rho0 = rho_of(parts.score_beta)
    history = [rho0]
    params = h1.arrays() + h2.arrays()
    lr = cfg.learning_rate
    for attempt in range(cfg.max_retries + 1):
        start = [p.copy() for p in params]
        best_params, best_val, since = start, np.inf, 0
        opt = Adam(params, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        ok = True
        for _ in range(cfg.epochs):
            res = residuals(train, u_tr, z_tr)
            rho = rho_of(res)
            if not math.isfinite(rho):
                ok = False
                break
            history.append(rho)
            if va_idx is not None:
                score = rho_of(residuals(val, u_va, z_va))
                if score < best_val - cfg.tol * abs(best_val if math.isfinite(best_val) else 0.0):
                    best_val, best_params, since = score, [p.copy() for p in params], 0
                else:
                    since += 1
                    if since >= cfg.patience:
                        break
            # Adam ascends, so feed the gradient of -rho
            up1 = np.vstack([train.coef_left[:, None] * res, train.coef_right[:, None] * res]) * (2.0 / n_tr)
            up2 = train.s[:, None] * res * (2.0 / n_tr)
            opt.step(backward(h1, u_tr, up1).arrays() + backward(h2, z_tr, up2).arrays())
        if ok:
            if va_idx is not None:
                for p, saved in zip(params, best_params):
                    p[...] = saved
            break
        for p, saved in zip(params, start):
            p[...] = saved
        lr /= 2
    if refit_output:
        m = len(z_tr)
        _refit_output_layers(train, h1, h2, u_tr[:m], u_tr[m:], z_tr)
    h2 = fold_input_scaling(h2, shift, scale)
    lfd = LfdPair(h1, h2, t_scale, rho0, rho0, history)
    full = projection_residuals(parts, lfd.h1_at(parts.t_left), lfd.h1_at(parts.t_right), lfd.h2_at(parts.z))
    rho_final = rho_of(full)
    if not rho_final <= rho0:
        # zero output layers are always available
        for p in (h1, h2):
            p.weights[-1][...] = 0.0
            p.biases[-1][...] = 0.0
        rho_final = rho0
    lfd.rho_final = rho_final
    history.append(rho_final)
    return lfd


@dataclass
class InferenceResult:
    beta: np.ndarray
    info: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    z_values: np.ndarray
    p_values: np.ndarray
    n: int
    rho_final: float | None = None
    rho_initial: float | None = None
    names: list[str] | None = None

    def to_dict(self) -> dict:
        return {
            "format": "dplc-inference/1",
            "beta": self.beta.tolist(),
            "info": self.info.tolist(),
            "se": self.se.tolist(),
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
            "z_values": self.z_values.tolist(),
            "p_values": self.p_values.tolist(),
            "n": self.n,
            "rho_final": self.rho_final,
            "rho_initial": self.rho_initial,
            "names": self.names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceResult":
        arr = lambda k: np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(
            beta=arr("beta"),
            info=arr("info"),
            se=arr("se"),
            ci_lower=arr("ci_lower"),
            ci_upper=arr("ci_upper"),
            z_values=arr("z_values"),
            p_values=arr("p_values"),
            n=int(d["n"]),
            rho_final=d.get("rho_final"),
            rho_initial=d.get("rho_initial"),
            names=d.get("names"),
        )


def information_from_residuals(resid, beta, max_condition: float = 1e12, **extra) -> InferenceResult:
    """Wald inference from per-observation efficient-score residuals."""
    resid = np.atleast_2d(np.asarray(resid, dtype=float))
    if resid.shape[0] == 1 and np.ndim(beta) == 1 and len(beta) != 1:
        resid = resid.T
    n, d = resid.shape
    beta = np.asarray(beta, dtype=float).reshape(d)
    info = resid.T @ resid / n
    info = 0.5 * (info + info.T)
    eig = np.linalg.eigvalsh(info)
    cond = math.inf if eig[0] <= 0 else float(eig[-1] / eig[0])
    if not np.all(np.isfinite(eig)) or cond > max_condition:
        raise SingularInformationError(
            f"information matrix is singular (condition number {cond:.3g}, eigenvalues {eig.tolist()})",
            eigenvalues=eig,
            condition=cond,
        )
    cov = np.linalg.inv(info) / n
    se = np.sqrt(np.diag(cov))
    z = beta / se
    return InferenceResult(
        beta=beta,
        info=info,
        se=se,
        ci_lower=beta - Z_975 * se,
        ci_upper=beta + Z_975 * se,
        z_values=z,
        p_values=2.0 * norm.sf(np.abs(z)),
        n=n,
        **extra,
    )


def information_matrix(data: SurvData, fit: FitResult | ModelState, lfd: LfdPair, names=None) -> InferenceResult:
    """Plug-in information ``mean(e e')`` from the projection residuals ``e``."""
    st = fit.state if isinstance(fit, FitResult) else fit
    parts = score_parts(data, st)
    res = projection_residuals(
        parts, lfd.h1_at(parts.t_left), lfd.h1_at(parts.t_right), lfd.h2_at(parts.z)
    )
    return information_from_residuals(
        res, st.beta, rho_final=lfd.rho_final, rho_initial=lfd.rho_initial, names=names
    )


def wald_report(result: InferenceResult, names=None) -> list[dict]:
    """Rows with ``EST``, ``HR = exp(EST)``, ``SE``, ``Z`` and two-sided ``p``."""
    names = names or result.names or [f"x_{j + 1}" for j in range(len(result.beta))]
    rows = []
    for j, name in enumerate(names):
        est, se = float(result.beta[j]), float(result.se[j])
        z = est / se
        rows.append(
            {"name": name, "EST": est, "HR": math.exp(est), "SE": se, "Z": z, "p": float(2.0 * norm.sf(abs(z)))}
        )
    return rows


def format_wald_table(rows: list[dict]) -> str:
    width = max([len(r["name"]) for r in rows] + [4])
    lines = [f"{'':<{width}}  {'EST':>8}  {'HR':>8}  {'SE':>8}  {'Z-value':>9}  {'p-value':>9}"]
    for r in rows:
        lines.append(
            f"{r['name']:<{width}}  {r['EST']:>8.3f}  {r['HR']:>8.3f}  {r['SE']:>8.3f}  {r['Z']:>9.3f}  {r['p']:>9.3f}"
        )
    return "\n".join(lines)
