"""Monte Carlo studies: replicate, fit, evaluate, aggregate.

Each replication draws a training sample and an independent test sample
from a :class:`~dplc.simulation.SimDesign`, fits every requested model and
records the coefficient estimate, its Wald interval, the relative error of
the nonparametric effect on the test sample and the IMSE of predicted
survival curves. Replication results are checkpointed one JSON file per
(design, replication), so an interrupted study resumes where it stopped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .inference import SingularInformationError, estimate_lfd, information_matrix
from .io import atomic_write_text, dump_json
from .likelihood import ModelState
from .simulation import SimDesign, imse, rmse_g, simulate
from .trainer import FitResult, TrainConfig, derive_seed, fit_with_restarts, select_and_refit

__all__ = [
    "MODELS",
    "StudyConfig",
    "StudyError",
    "MetricReport",
    "ReplicationResult",
    "StudyResult",
    "run_replication",
    "run_study",
    "aggregate",
    "write_metric_csv",
    "read_metric_csv",
]

log = logging.getLogger(__name__)

MODELS = ("DPLC", "CPH")
CSV_COLUMNS = ["setting", "rho", "p", "n", "model", "kappa", "metric", "value"]
METRICS = ["bias", "ese", "coverage", "rmse_g", "rmse_g_median", "imse", "n_reps", "n_failed"]


class StudyError(RuntimeError):
    """Too many replications failed."""


def _default_dplc() -> TrainConfig:
    return TrainConfig(
        learning_rate=0.01, epochs=3000, patience=100, restarts=2, grid=((3, 3), (5, 5), (8, 8))
    )


def _default_cph() -> TrainConfig:
    return TrainConfig(learning_rate=0.05, epochs=3000, patience=50, restarts=1, grid=((),), early_stopping=False)


def _default_aux() -> TrainConfig:
    return TrainConfig(learning_rate=1e-3, epochs=500, early_stopping=False)


@dataclass(frozen=True)
class StudyConfig:
    """What to simulate, which models to fit, and how.

    ``names`` optionally labels the designs in output tables (default: the
    ``g_case``). ``dplc`` and ``cph`` are the training settings of the two
    models; CPH is the same likelihood with an affine ``g``. ``aux`` trains
    the least-favourable-direction networks.
    """

    designs: tuple[SimDesign, ...]
    reps: int = 50
    seed: int = 0
    models: tuple[str, ...] = MODELS
    names: tuple[str, ...] | None = None
    test_size: int = 4000
    inference: bool = True
    dplc: TrainConfig = field(default_factory=_default_dplc)
    cph: TrainConfig = field(default_factory=_default_cph)
    aux: TrainConfig = field(default_factory=_default_aux)
    h1_widths: tuple[int, ...] = (8, 8)
    h2_widths: tuple[int, ...] | None = None
    max_failure_rate: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "designs", tuple(self.designs))
        object.__setattr__(self, "models", tuple(self.models))
        if not self.designs:
            raise ValueError("study has no designs")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        bad = [m for m in self.models if m not in MODELS]
        if bad or not self.models:
            raise ValueError(f"unknown models {bad}; choose from {MODELS}")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != len(self.designs):
                raise ValueError("names must match designs one to one")

    def name(self, i: int) -> str:
        return self.names[i] if self.names is not None else self.designs[i].g_case

    def to_dict(self) -> dict:
        return {
            "designs": [d.to_dict() for d in self.designs],
            "reps": self.reps,
            "seed": self.seed,
            "models": list(self.models),
            "names": None if self.names is None else list(self.names),
            "test_size": self.test_size,
            "inference": self.inference,
            "dplc": self.dplc.to_dict(),
            "cph": self.cph.to_dict(),
            "aux": self.aux.to_dict(),
            "h1_widths": list(self.h1_widths),
            "h2_widths": None if self.h2_widths is None else list(self.h2_widths),
            "max_failure_rate": self.max_failure_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__) | {"design"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown study options: {sorted(unknown)}")
        designs = d.pop("designs", None) or [d.pop("design", {})]
        d.pop("design", None)
        kw = {k: v for k, v in d.items() if v is not None or k in ("names", "h2_widths")}
        kw["designs"] = tuple(SimDesign.from_dict(x) for x in designs)
        defaults = {"dplc": _default_dplc(), "cph": _default_cph(), "aux": _default_aux()}
        for key, base in defaults.items():
            if key in kw:
                kw[key] = TrainConfig.from_dict({**base.to_dict(), **kw[key]})
        for key in ("models", "names", "h1_widths", "h2_widths"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def design_key(self, i: int) -> str:
        """Stable hash of everything that determines a replication's outcome."""
        payload = {k: v for k, v in self.to_dict().items() if k not in ("designs", "names", "reps", "max_failure_rate")}
        payload["design"] = self.designs[i].to_dict()
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ReplicationResult:
    """Outcome of one model on one replication; ``error`` is set on failure."""

    model: str
    rep: int
    beta: float | None = None
    se: float | None = None
    ci_lower: float | None = None
    ci_upper: float | None = None
    covered: bool | None = None
    rmse_g: float | None = None
    imse: float | None = None
    arch: str | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _predict_survival(st: ModelState, x, z):
    eta = st.eta(x, z)

    def surv(rows, t):
        return np.exp(-st.baseline(t) * np.exp(eta[rows])[:, None])

    return surv


def _evaluate_model(model: str, cfg: StudyConfig, design: SimDesign, sample, test, fit_seed: int) -> ReplicationResult:
    data = sample.data
    if model == "DPLC":
        fit: FitResult = select_and_refit(data, cfg.dplc.with_(seed=fit_seed))
        h2 = cfg.h2_widths
    else:
        fit = fit_with_restarts(data, (), cfg.cph.with_(seed=fit_seed))
        h2 = ()
    st = fit.state
    out = ReplicationResult(model, -1, beta=float(st.beta[0]), arch=fit.selected_arch.label())
    if cfg.inference:
        try:
            lfd = estimate_lfd(data, fit, cfg.aux.with_(seed=fit_seed), h1_widths=cfg.h1_widths, h2_widths=h2)
            inf = information_matrix(data, fit, lfd)
            out.se = float(inf.se[0])
            out.ci_lower, out.ci_upper = float(inf.ci_lower[0]), float(inf.ci_upper[0])
            out.covered = bool(out.ci_lower <= design.beta0 <= out.ci_upper)
        except SingularInformationError as exc:
            log.warning("%s rep: singular information (%s)", model, exc)
    if test is not None:
        ghat = st.g(test.data.z)[:, 0]
        out.rmse_g = rmse_g(ghat - ghat.mean(), test.g)
        surv = _predict_survival(st, test.data.x, test.data.z)
        out.imse = imse(surv, test.data.left, test.data.right, design.tau)
    return out


def run_replication(cfg: StudyConfig, design_index: int, rep: int) -> list[ReplicationResult]:
    """Simulate and fit one replication of one design (all models).

    The training sample, test sample and fitting seeds come from
    ``derive_seed(cfg.seed, rep, k)``, so different designs share random
    numbers at the same replication index.
    """
    design = cfg.designs[design_index]
    sample = simulate(design, np.random.default_rng(derive_seed(cfg.seed, rep, 0)))
    test = None
    if cfg.test_size > 0:
        test = simulate(design, np.random.default_rng(derive_seed(cfg.seed, rep, 1)), n=cfg.test_size)
    fit_seed = derive_seed(cfg.seed, rep, 2) % (2**31)
    results = []
    for model in cfg.models:
        try:
            res = _evaluate_model(model, cfg, design, sample, test, fit_seed)
        except Exception as exc:  # recorded, counted, excluded from aggregates
            log.warning("%s rep %d failed: %s", model, rep, exc)
            res = ReplicationResult(model, rep, error=f"{type(exc).__name__}: {exc}")
            log.debug(traceback.format_exc())
        res.rep = rep
        results.append(res)
    return results


def _ckpt_path(ckpt_dir: Path, cfg: StudyConfig, i: int, rep: int) -> Path:
    return ckpt_dir / f"{cfg.name(i)}-{cfg.design_key(i)}" / f"rep{rep:04d}.json"


def _load_ckpt(path: Path) -> list[ReplicationResult] | None:
    if not path.exists():
        return None
    with open(path) as fh:
        return [ReplicationResult(**r) for r in json.load(fh)]


def _task(args):
    cfg, i, rep, ckpt = args
    res = run_replication(cfg, i, rep)
    if ckpt is not None:
        dump_json(ckpt, [asdict(r) for r in res])
    return res


@dataclass
class MetricReport:
    """Aggregates over successful replications; ``None`` marks an undefined value."""

    bias: float | None
    ese: float | None
    coverage: float | None
    rmse_g: float | None
    rmse_g_median: float | None
    imse: float | None
    n_reps: int
    n_failed: int = 0


def aggregate(results: list[ReplicationResult], beta0: float) -> MetricReport:
    ok = [r for r in results if not r.failed]
    betas = np.array([r.beta for r in ok], dtype=float)
    covered = [r.covered for r in ok if r.covered is not None]
    rm = np.array([r.rmse_g for r in ok if r.rmse_g is not None], dtype=float)
    im = np.array([r.imse for r in ok if r.imse is not None], dtype=float)
    return MetricReport(
        bias=float(betas.mean() - beta0) if betas.size else None,
        ese=float(betas.std(ddof=1)) if betas.size > 1 else None,
        coverage=float(np.mean(covered)) if covered else None,
        rmse_g=float(rm.mean()) if rm.size else None,
        rmse_g_median=float(np.median(rm)) if rm.size else None,
        imse=float(im.mean()) if im.size else None,
        n_reps=len(ok),
        n_failed=len(results) - len(ok),
    )


@dataclass
class StudyResult:
    config: StudyConfig
    replicates: dict  # (design index, model) -> list[ReplicationResult]
    reports: dict  # (design index, model) -> MetricReport

    def rows(self) -> list[dict]:
        out = []
        for (i, model), rep in self.reports.items():
            d = self.config.designs[i]
            key = {
                "setting": self.config.name(i),
                "rho": d.copula_theta / (d.copula_theta + 2.0),
                "p": d.visit_p,
                "n": d.n,
                "model": model,
                "kappa": d.kappa,
            }
            for metric in METRICS:
                out.append({**key, "metric": metric, "value": getattr(rep, metric)})
        return out


def run_study(cfg: StudyConfig, checkpoint_dir=None, threads: int = 1, strict: bool = True) -> StudyResult:
    """Run (or resume) every replication of every design and aggregate.

    Finished replications found under ``checkpoint_dir`` are loaded instead
    of recomputed. Replications run in ``threads`` worker processes;
    results are always combined in replication order. With ``strict`` a
    failure rate above ``cfg.max_failure_rate`` for any (design, model)
    raises :class:`StudyError` after all replications have finished.
    """
    ckpt_dir = None if checkpoint_dir is None else Path(checkpoint_dir)
    done: dict = {}
    todo = []
    for i in range(len(cfg.designs)):
        for rep in range(cfg.reps):
            path = None if ckpt_dir is None else _ckpt_path(ckpt_dir, cfg, i, rep)
            cached = None if path is None else _load_ckpt(path)
            if cached is not None:
                done[(i, rep)] = cached
            else:
                todo.append((cfg, i, rep, path))
    log.info("study: %d replications cached, %d to run", len(done), len(todo))
    if threads > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for args, res in zip(todo, pool.map(_task, todo)):
                done[(args[1], args[2])] = res
    else:
        for args in todo:
            done[(args[1], args[2])] = _task(args)

    replicates, reports = {}, {}
    for i, design in enumerate(cfg.designs):
        for m, model in enumerate(cfg.models):
            reps = [done[(i, rep)][m] for rep in range(cfg.reps)]
            replicates[(i, model)] = reps
            reports[(i, model)] = aggregate(reps, design.beta0)
    result = StudyResult(cfg, replicates, reports)
    if strict:
        bad = [
            f"{cfg.name(i)}/{model}: {r.n_failed} of {cfg.reps}"
            for (i, model), r in reports.items()
            if r.n_failed > cfg.max_failure_rate * cfg.reps
        ]
        if bad:
            raise StudyError("too many failed replications: " + ", ".join(bad))
    return result


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metric_csv(path, result: StudyResult) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for row in result.rows():
        lines.append(",".join(_cell(row[c]) for c in CSV_COLUMNS))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_replicates_csv(path, result: StudyResult) -> None:
    cols = ["setting", "model", "rep", "beta", "se", "ci_lower", "ci_upper", "covered", "rmse_g", "imse", "arch", "error"]
    lines = [",".join(cols)]
    for (i, model), reps in result.replicates.items():
        for r in reps:
            d = asdict(r)
            d["setting"] = result.config.name(i)
            vals = [_cell(d[c]) for c in cols]
            lines.append(",".join(v.replace(",", ";") for v in vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_metric_csv(path) -> dict:
    """Parse a metric table back into ``{(setting, rho, p, n, model, kappa): MetricReport}``."""
    cells: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (
                row["setting"],
                float(row["rho"]),
                float(row["p"]),
                int(row["n"]),
                row["model"],
                float(row["kappa"]),
            )
            cells.setdefault(key, {})[row["metric"]] = row["value"]
    out = {}
    for key, vals in cells.items():
        kw = {}
        for metric in METRICS:
            raw = vals.get(metric, "")
            if metric in ("n_reps", "n_failed"):
                kw[metric] = int(raw)
            else:
                kw[metric] = None if raw == "" else float(raw)
        out[key] = MetricReport(**kw)
    return out

