"""Command-line interface: ``dplc fit | infer | simulate | study | predict``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
``--threads`` (default from the ``DPLC_THREADS`` environment variable, else
1) sets the number of worker processes for study replications.

Exit codes: 0 success, 1 fitting or study failure, 2 invalid input or
configuration, 3 singular information matrix.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .inference import SingularInformationError, estimate_lfd, format_wald_table, information_matrix, wald_report
from .io import (
    DatasetError,
    atomic_write_text,
    dump_json,
    load_config,
    load_model,
    read_dataset,
    save_model,
    write_dataset,
    write_manifest,
)
from .likelihood import survival
from .simulation import SimDesign, simulate
from .study import StudyConfig, StudyError, run_study, write_metric_csv, write_replicates_csv
from .trainer import FitError, IdentifiabilityError, TrainConfig, select_and_refit

THREADS_ENV = "DPLC_THREADS"
log = logging.getLogger("dplc")


class UsageError(Exception):
    """Bad configuration or arguments (exit code 2)."""


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _config(path) -> dict:
    if path is None:
        return {}
    try:
        return load_config(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _load_model(path):
    try:
        return load_model(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from exc


def _train_config(raw: dict, seed) -> TrainConfig:
    section = raw.get("train", raw)
    try:
        cfg = TrainConfig.from_dict(section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training configuration: {exc}") from exc
    return cfg if seed is None else cfg.with_(seed=seed)


def cmd_fit(args) -> int:
    started = time.time()
    out = Path(args.out)
    raw = _config(args.config)
    cfg = _train_config(raw, args.seed)
    ds = read_dataset(args.data)
    fit = select_and_refit(ds.data, cfg)
    model_path = out / "model.json"
    save_model(model_path, fit, ds.x_names, ds.z_names, cfg.to_dict())
    log_path = out / "training_log.json"
    dump_json(
        log_path,
        {
            "selected_arch": fit.selected_arch.label(),
            "grid_scores": fit.grid_scores,
            "restart_logs": fit.restart_logs,
            "epochs_run": fit.epochs_run,
            "train_loglik": fit.train_loglik,
            "val_loglik": fit.val_loglik,
            "numerical_floor_events": fit.numerical_floor_events,
            "history": fit.history,
        },
    )
    write_manifest(out, "fit", cfg.to_dict(), cfg.seed, [model_path, log_path], started)
    print(f"selected {fit.selected_arch.label()}; beta = {np.array2string(fit.state.beta, precision=4)}")
    print(f"model written to {model_path}")
    return 0


def cmd_infer(args) -> int:
    started = time.time()
    out = Path(args.out)
    raw = _config(args.config)
    h1 = tuple(raw.pop("h1_widths", (8, 8)))
    h2 = raw.pop("h2_widths", None)
    aux = _train_config(raw, args.seed)
    model = _load_model(args.model)
    ds = read_dataset(args.data)
    if ds.x_names != model.x_names or ds.z_names != model.z_names:
        raise UsageError("dataset columns do not match the model's covariates")
    lfd = estimate_lfd(ds.data, model.state, aux, h1_widths=h1, h2_widths=None if h2 is None else tuple(h2))
    try:
        result = information_matrix(ds.data, model.state, lfd, names=ds.x_names)
    except SingularInformationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    res_path, table_path = out / "inference.json", out / "wald.txt"
    dump_json(res_path, result.to_dict())
    table = format_wald_table(wald_report(result))
    atomic_write_text(table_path, table + "\n")
    config = {**aux.to_dict(), "h1_widths": list(h1), "h2_widths": h2}
    write_manifest(out, "infer", config, aux.seed, [res_path, table_path], started)
    print(table)
    return 0


def cmd_simulate(args) -> int:
    started = time.time()
    out = Path(args.out)
    raw = _config(args.config)
    seed = args.seed if args.seed is not None else raw.pop("seed", 0)
    raw.pop("seed", None)
    try:
        design = SimDesign.from_dict(raw.get("design", raw))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid design: {exc}") from exc
    if args.n is not None:
        design = design.with_(n=args.n)
    sample = simulate(design, np.random.default_rng(seed))
    data_path = out / "data.csv"
    truth_path = out / "truth.csv"
    write_dataset(data_path, sample.data)
    lines = ["time,g"] + [f"{t!r},{g!r}" for t, g in zip(sample.time.tolist(), sample.g.tolist())]
    atomic_write_text(truth_path, "\n".join(lines) + "\n")
    write_manifest(out, "simulate", design.to_dict(), seed, [data_path, truth_path], started)
    print(f"{design.n} rows written to {data_path}")
    return 0


def cmd_study(args) -> int:
    started = time.time()
    out = Path(args.out)
    raw = _config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = StudyConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid study configuration: {exc}") from exc
    ckpt = out / "checkpoints"
    try:
        result = run_study(cfg, checkpoint_dir=ckpt, threads=args.threads)
        status = 0
    except StudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        result = run_study(cfg, checkpoint_dir=ckpt, threads=args.threads, strict=False)
        status = 1
    metrics, reps = out / "metrics.csv", out / "replicates.csv"
    write_metric_csv(metrics, result)
    write_replicates_csv(reps, result)
    write_manifest(out, "study", cfg.to_dict(), cfg.seed, [metrics, reps], started)
    for (i, model), rep in result.reports.items():
        ese = "NA" if rep.ese is None else f"{rep.ese:.3f}"
        cov = "NA" if rep.coverage is None else f"{rep.coverage:.3f}"
        bias = "NA" if rep.bias is None else f"{rep.bias:+.3f}"
        print(f"{cfg.name(i):<12} {model:<5} bias {bias}  ese {ese}  coverage {cov}  reps {rep.n_reps}")
    return status


def _parse_times(text: str) -> np.ndarray:
    try:
        times = np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError:
        raise UsageError(f"--times must be comma-separated numbers, got {text!r}") from None
    if times.size == 0 or np.any(times < 0) or not np.all(np.isfinite(times)):
        raise UsageError("--times needs at least one finite, non-negative time")
    return times


def cmd_predict(args) -> int:
    started = time.time()
    out = Path(args.out)
    times = _parse_times(args.times)
    model = _load_model(args.model)
    ds = read_dataset(args.data)
    if ds.x_names != model.x_names or ds.z_names != model.z_names:
        raise UsageError("dataset columns do not match the model's covariates")
    surv = np.stack([survival(times, ds.data.observation(i), model.state) for i in range(len(ds.data))])
    path = out / "survival.csv"
    header = ["row"] + [f"S({float(t)!r})" for t in times]
    lines = [",".join(header)]
    for i, row in enumerate(surv):
        lines.append(",".join([str(i + 1)] + [repr(float(v)) for v in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")
    write_manifest(out, "predict", {"model": str(args.model), "times": times.tolist()}, None, [path], started)
    print(f"survival for {len(ds.data)} subjects at {times.size} times written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dplc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, model=False):
        if model:
            p.add_argument("model", help="model JSON written by 'fit'")
        if data:
            p.add_argument("data", help="dataset CSV (x_*, z_*, left, right)")
        p.add_argument("--config", help="JSON or TOML configuration file")
        p.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("fit", help="select an architecture and fit the model")
    common(p, data=True)
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("infer", help="standard errors and Wald tests for beta")
    common(p, data=True, model=True)
    p.set_defaults(func=cmd_infer)
    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, default=None, help="overrides the design's sample size")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("study", help="run a Monte Carlo study (resumable)")
    common(p)
    p.set_defaults(func=cmd_study)
    p = sub.add_parser("predict", help="predicted survival curves")
    common(p, data=True, model=True)
    p.add_argument("--times", required=True, help="comma-separated time points")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except (UsageError, DatasetError, IdentifiabilityError) as exc:
        if isinstance(exc, DatasetError):
            for problem in exc.problems:
                print(f"error: {problem}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
