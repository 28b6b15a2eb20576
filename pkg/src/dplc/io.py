"""Dataset files, configuration files, model/result serialization and run manifests.

Datasets are delimiter-separated text with a header: covariate columns
prefixed ``x_`` (linear part) and ``z_`` (network part), plus ``left`` and
``right``. ``right`` may be the literal ``inf`` (any case) for
right-censored rows.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .likelihood import ModelState, SurvData
from .network import CenteredNet
from .spline import SplineConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

__all__ = [
    "MODEL_FORMAT",
    "DatasetError",
    "Dataset",
    "read_dataset",
    "write_dataset",
    "load_config",
    "atomic_write_text",
    "dump_json",
    "model_to_dict",
    "save_model",
    "load_model",
    "LoadedModel",
    "write_manifest",
]

MODEL_FORMAT = "dplc-model/1"


class DatasetError(ValueError):
    """Schema or row-level validation failure; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class Dataset:
    data: SurvData
    x_names: list[str]
    z_names: list[str]


def _parse_float(text: str) -> float:
    t = text.strip()
    if t.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(t)


def read_dataset(path, delimiter: str | None = None) -> Dataset:
    """Read and validate a dataset file.

    Every problem (missing columns, unparsable or missing values, invalid
    intervals) is collected with its 1-based data row number before
    :class:`DatasetError` is raised.
    """
    path = Path(path)
    text = path.read_text()
    if delimiter is None:
        delimiter = "\t" if path.suffix in (".tsv", ".tab") else ","
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DatasetError([f"{path}: empty file"]) from None
    x_names = [h for h in header if h.startswith("x_")]
    z_names = [h for h in header if h.startswith("z_")]
    problems = []
    for col in ("left", "right"):
        if col not in header:
            problems.append(f"missing required column '{col}'")
    if not x_names:
        problems.append("no parametric covariate columns (prefix 'x_')")
    if not z_names:
        problems.append("no nonparametric covariate columns (prefix 'z_')")
    if problems:
        raise DatasetError(problems)

    col = {name: i for i, name in enumerate(header)}
    xs, zs, ls, rs = [], [], [], []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            problems.append(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            continue
        values = {}
        for name in x_names + z_names + ["left", "right"]:
            raw = row[col[name]]
            if not raw.strip() or raw.strip().lower() in ("na", "nan"):
                problems.append(f"row {row_no}: missing value in '{name}'")
                continue
            try:
                values[name] = _parse_float(raw)
            except ValueError:
                problems.append(f"row {row_no}: cannot parse {raw!r} in '{name}'")
        if len(values) != len(x_names) + len(z_names) + 2:
            continue
        bad_cov = [n for n in x_names + z_names if not math.isfinite(values[n])]
        if bad_cov:
            problems.append(f"row {row_no}: non-finite covariate in {bad_cov}")
            continue
        left, right = values["left"], values["right"]
        if not (math.isfinite(left) and left >= 0):
            problems.append(f"row {row_no}: left must be finite and >= 0 (got {left})")
            continue
        if not right > left:
            problems.append(f"row {row_no}: right must exceed left (got left={left}, right={right})")
            continue
        if left == 0 and math.isinf(right):
            problems.append(f"row {row_no}: interval (0, inf) carries no information")
            continue
        xs.append([values[n] for n in x_names])
        zs.append([values[n] for n in z_names])
        ls.append(left)
        rs.append(right)
    if not problems and not ls:
        problems.append("no data rows")
    if not problems and all(math.isinf(r) for r in rs):
        problems.append("all rows are right-censored; at least one finite 'right' is required")
    if problems:
        raise DatasetError(problems)
    return Dataset(SurvData(np.array(xs), np.array(zs), ls, rs), x_names, z_names)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def write_dataset(path, data: SurvData, x_names=None, z_names=None) -> None:
    x_names = x_names or [f"x_{j + 1}" for j in range(data.d)]
    z_names = z_names or [f"z_{j + 1}" for j in range(data.r)]
    lines = [",".join(list(x_names) + list(z_names) + ["left", "right"])]
    for i in range(len(data)):
        vals = [_fmt(v) for v in data.x[i]] + [_fmt(v) for v in data.z[i]]
        vals += [_fmt(data.left[i]), _fmt(data.right[i])]
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_config(path) -> dict:
    """Read a JSON or TOML configuration (by file extension)."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def model_to_dict(fit, x_names, z_names, config: dict | None = None) -> dict:
    st: ModelState = fit.state
    return {
        "format": MODEL_FORMAT,
        "beta": st.beta.tolist(),
        "gamma_tilde": st.gamma_tilde.tolist(),
        "spline": st.spline.to_dict(),
        "g": st.g.to_dict(),
        "x_names": list(x_names),
        "z_names": list(z_names),
        "selected_arch": list(fit.selected_arch.widths),
        "train_loglik": fit.train_loglik,
        "val_loglik": fit.val_loglik,
        "restart_logs": list(fit.restart_logs),
        "grid_scores": dict(fit.grid_scores),
        "numerical_floor_events": int(fit.numerical_floor_events),
        "epochs_run": int(fit.epochs_run),
        "config": config,
    }


def save_model(path, fit, x_names, z_names, config: dict | None = None) -> None:
    dump_json(path, model_to_dict(fit, x_names, z_names, config))


@dataclass
class LoadedModel:
    state: ModelState
    x_names: list[str]
    z_names: list[str]
    meta: dict


def load_model(path) -> LoadedModel:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: unsupported model format {d.get('format')!r}")
    st = ModelState(
        np.asarray(d["beta"], dtype=float),
        np.asarray(d["gamma_tilde"], dtype=float),
        SplineConfig.from_dict(d["spline"]),
        CenteredNet.from_dict(d["g"]),
    )
    return LoadedModel(st, d["x_names"], d["z_names"], d)


def write_manifest(out_dir, command: str, config, seed, outputs, started: float) -> Path:
    """Record what was run; one manifest per command invocation."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": round(time.time() - started, 3),
        "outputs": sorted(str(p) for p in outputs),
    }
    path = out_dir / "manifest.json"
    dump_json(path, manifest)
    return path
