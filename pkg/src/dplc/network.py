"""Dense ReLU networks with hand-written reverse-mode gradients.

A network with depth ``K`` has ``K`` hidden ReLU layers followed by an
affine output layer; depth 0 is a plain affine map. Everything works on
batches: inputs of shape ``(n, input_dim)`` give outputs of shape
``(n, output_dim)``. A single 1-D input vector is accepted as a batch of one
and the result is returned as a 1-D vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FORMAT_TAG",
    "Architecture",
    "NetParams",
    "CenteredNet",
    "Gradients",
    "init_params",
    "forward",
    "backward",
    "center",
    "fold_input_scaling",
    "param_diagnostics",
]

FORMAT_TAG = "dplc-net/1"


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    widths: tuple[int, ...] = ()
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input and output dimensions must be positive")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"hidden widths must be positive, got {self.widths}")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.widths, self.output_dim)

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))

    def label(self) -> str:
        if not self.widths:
            return "affine"
        return "x".join(str(w) for w in self.widths)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "widths": list(self.widths), "output_dim": self.output_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(int(d["input_dim"]), tuple(d["widths"]), int(d["output_dim"]))


@dataclass
class NetParams:
    """Weights ``W[l]`` of shape ``(out, in)`` and biases ``b[l]`` of shape ``(out,)``."""

    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.arch.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("number of layers does not match the architecture")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l + 1], sizes[l]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l} has shapes {w.shape}, {b.shape}")

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "NetParams":
        return NetParams(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "architecture": self.arch.to_dict(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetParams":
        arch = Architecture.from_dict(d["architecture"])
        sizes = arch.layer_sizes
        weights = [
            np.asarray(w, dtype=float).reshape(sizes[l + 1], sizes[l]) for l, w in enumerate(d["weights"])
        ]
        biases = [np.asarray(b, dtype=float).reshape(-1) for b in d["biases"]]
        return cls(arch, weights, biases)


@dataclass
class Gradients:
    """Per-parameter partials, laid out like :class:`NetParams`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = field(default=None)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_params(arch: Architecture, rng: np.random.Generator) -> NetParams:
    """He-normal weights (std ``sqrt(2 / fan_in)``) and zero biases."""
    sizes = arch.layer_sizes
    weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return NetParams(arch, weights, biases)


def _as_batch(params: NetParams, z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != params.arch.input_dim:
        raise ValueError(f"input of shape {z.shape} does not match input_dim={params.arch.input_dim}")
    return z, single


def _forward_cache(params: NetParams, z: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    # activations[l] is the input to layer l
    activations = [z]
    h = z
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w.T + b
        if l < last:
            h = np.maximum(a, 0.0)
            activations.append(h)
        else:
            h = a
    return h, activations


def forward(params: NetParams, z) -> np.ndarray:
    z, single = _as_batch(params, z)
    out, _ = _forward_cache(params, z)
    return out[0] if single else out


def backward(params: NetParams, z, upstream, *, wrt_input: bool = False) -> Gradients:
    """Gradient of ``sum_i upstream_i . forward(params, z_i)``.

    ``upstream`` has the shape of the network output for ``z``. Partials are
    summed over the batch. Set ``wrt_input`` to also return the per-row
    input gradient.
    """
    z, single = _as_batch(params, z)
    up = np.asarray(upstream, dtype=float)
    if single:
        up = up.reshape(1, -1)
    if up.shape != (z.shape[0], params.arch.output_dim):
        raise ValueError(f"upstream of shape {up.shape} does not match the output")
    _, acts = _forward_cache(params, z)
    n_layers = len(params.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = up
    for l in range(n_layers - 1, -1, -1):
        h_in = acts[l]
        gw[l] = delta.T @ h_in
        gb[l] = delta.sum(axis=0)
        if l > 0 or wrt_input:
            delta = delta @ params.weights[l]
            if l > 0:
                delta = delta * (h_in > 0.0)
    dz = None
    if wrt_input:
        dz = delta[0] if single else delta
    return Gradients(gw, gb, dz)


@dataclass
class CenteredNet:
    """A network shifted so that its mean over a reference batch is zero."""

    params: NetParams
    offset: float

    def __call__(self, z) -> np.ndarray:
        out = forward(self.params, z)
        return out - self.offset

    def to_dict(self) -> dict:
        d = self.params.to_dict()
        d["offset"] = float(self.offset)
        d["format"] = FORMAT_TAG
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CenteredNet":
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"unsupported network format {d.get('format')!r}")
        return cls(NetParams.from_dict(d), float(d["offset"]))


def center(params: NetParams, training_z) -> CenteredNet:
    """Center a scalar-output network on ``training_z``."""
    if params.arch.output_dim != 1:
        raise ValueError("centering is defined for scalar-output networks")
    out = forward(params, np.atleast_2d(training_z))[:, 0]
    return CenteredNet(params, float(np.mean(np.sort(out))))


def fold_input_scaling(params: NetParams, mean, scale) -> NetParams:
    """Parameters of ``z -> net((z - mean) / scale)`` as a plain network."""
    mean = np.asarray(mean, dtype=float)
    scale = np.asarray(scale, dtype=float)
    out = params.copy()
    out.weights[0] = params.weights[0] / scale
    out.biases[0] = params.biases[0] - out.weights[0] @ mean
    return out


def param_diagnostics(params: NetParams, tol: float = 1e-8) -> dict:
    """Max-norms and near-zero counts; the sparsity/norm bounds of the
    theoretical network class are reported here, never enforced."""
    arrays = params.arrays()
    flat = np.concatenate([a.ravel() for a in arrays])
    return {
        "max_abs_weight": float(max(np.abs(w).max() for w in params.weights)),
        "max_abs_bias": float(max((np.abs(b).max() for b in params.biases if b.size), default=0.0)),
        "n_params": int(flat.size),
        "n_near_zero": int(np.sum(np.abs(flat) <= tol)),
    }
