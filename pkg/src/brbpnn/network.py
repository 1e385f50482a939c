"""Feedforward network topology, forward propagation and error Jacobian.

Conventions used throughout the package:

* a network with input size ``R`` and layer sizes ``[N1, ..., NL]`` has
  ``K = sum_l N_l * (N_{l-1} + 1)`` parameters (``N_0 = R``);
* the flat parameter vector lists, layer by layer, the weight matrix
  ``W^l`` in row-major order followed by the bias vector ``b^l``;
* network errors are ``e = t - a`` so Jacobian entries are ``-da/dw``;
* rows of the Jacobian are sample-major: row ``p * NL + o`` belongs to
  output ``o`` of sample ``p``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from brbpnn.linalg import ShapeError, as_vector

# name -> (f(n), f'(n, a)); the derivative gets the activation output too so
# tanh can reuse it.
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "linear": (lambda n: n, lambda n, a: np.ones_like(n)),
    "tanh": (np.tanh, lambda n, a: 1.0 - a * a),
}


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not sizes:
            raise ValueError("a network needs at least one layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        acts = tuple(self.activations) or ("linear",) * len(sizes)
        if len(acts) != len(sizes):
            raise ValueError("one activation per layer required")
        unknown = set(acts) - set(ACTIVATIONS)
        if unknown:
            raise ValueError(f"unknown activation(s): {sorted(unknown)}")
        object.__setattr__(self, "activations", acts)

    @classmethod
    def parse(cls, text: str, input_dim: int = 1, hidden: str = "linear") -> "NetworkSpec":
        """Parse ``"1-5-3"``; ``hidden`` sets the activation of interior layers."""
        try:
            sizes = tuple(int(tok) for tok in text.strip().split("-"))
        except ValueError as exc:
            raise ValueError(f"bad network structure {text!r}") from exc
        if len(sizes) < 2:
            raise ValueError(f"structure {text!r} needs at least two layers")
        acts = ("linear",) + (hidden,) * (len(sizes) - 2) + ("linear",)
        return cls(input_dim, sizes, acts)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def fan_in(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.layer_sizes[:-1]

    @property
    def param_count(self) -> int:
        return sum(n * (m + 1) for n, m in zip(self.layer_sizes, self.fan_in))

    def label(self) -> str:
        return "-".join(str(s) for s in self.layer_sizes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layer_sizes": list(self.layer_sizes),
            "activations": list(self.activations),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(int(d["input_dim"]), tuple(d["layer_sizes"]), tuple(d["activations"]))


def _layer_slices(spec: NetworkSpec):
    """Yield (weight_slice, bias_slice, rows, cols) per layer in flat order."""
    pos = 0
    for n, m in zip(spec.layer_sizes, spec.fan_in):
        w = slice(pos, pos + n * m)
        b = slice(pos + n * m, pos + n * m + n)
        pos += n * (m + 1)
        yield w, b, n, m


def _views(spec: NetworkSpec, flat: np.ndarray):
    return [(flat[w].reshape(n, m), flat[b]) for w, b, n, m in _layer_slices(spec)]


@dataclass(frozen=True)
class NetworkParams:
    spec: NetworkSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise ShapeError("one weight matrix and bias vector per layer required")
        ws, bs = [], []
        for l, (n, m) in enumerate(zip(self.spec.layer_sizes, self.spec.fan_in)):
            w = np.array(self.weights[l], dtype=np.float64)
            b = np.array(self.biases[l], dtype=np.float64)
            if w.shape != (n, m) or b.shape != (n,):
                raise ShapeError(f"layer {l + 1}: expected W {(n, m)} and b {(n,)}, got {w.shape} and {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l + 1} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    def __eq__(self, other):
        if not isinstance(other, NetworkParams) or other.spec != self.spec:
            return NotImplemented
        return np.array_equal(flatten(self), flatten(other))

    __hash__ = None

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "NetworkParams":
        return unflatten(spec, np.zeros(spec.param_count))


def flatten(params: NetworkParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(spec: NetworkSpec, flat) -> NetworkParams:
    flat = as_vector(flat)
    if flat.shape[0] != spec.param_count:
        raise ShapeError(f"expected {spec.param_count} parameters for {spec.label()}, got {flat.shape[0]}")
    views = _views(spec, flat)
    return NetworkParams(spec, tuple(w for w, _ in views), tuple(b for _, b in views))


@dataclass(frozen=True)
class ForwardTrace:
    """Net inputs ``n[l]`` and outputs ``a[l]`` for one sample; ``a[0]`` is the input."""

    n: list[np.ndarray] = field(default_factory=list)
    a: list[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.a[-1]


def forward(params: NetworkParams, u) -> ForwardTrace:
    u = as_vector(u)
    if u.shape[0] != params.spec.input_dim:
        raise ShapeError(f"input length {u.shape[0]} != {params.spec.input_dim}")
    ns, as_ = [], [u]
    for w, b, act in zip(params.weights, params.biases, params.spec.activations):
        n = w @ as_[-1] + b
        ns.append(n)
        as_.append(ACTIVATIONS[act][0](n))
    return ForwardTrace(ns, as_)


def _check_inputs(spec: NetworkSpec, inputs) -> np.ndarray:
    u = np.asarray(inputs, dtype=np.float64)
    if u.ndim == 1:
        u = u.reshape(-1, spec.input_dim)
    if u.ndim != 2 or u.shape[1] != spec.input_dim or u.shape[0] < 1:
        raise ShapeError(f"inputs must be (n_samples, {spec.input_dim}), got {u.shape}")
    return u


def _propagate(spec: NetworkSpec, views, u: np.ndarray):
    """Batched forward pass; returns per-layer (n, a) with a[0] = u."""
    ns, as_ = [], [u]
    for (w, b), act in zip(views, spec.activations):
        n = as_[-1] @ w.T + b
        ns.append(n)
        as_.append(ACTIVATIONS[act][0](n))
    return ns, as_


def predict(params: NetworkParams, inputs) -> np.ndarray:
    """Network outputs for a batch, shape (n_samples, output_dim)."""
    u = _check_inputs(params.spec, inputs)
    _, as_ = _propagate(params.spec, list(zip(params.weights, params.biases)), u)
    return as_[-1]


def sensitivities(params: NetworkParams, trace: ForwardTrace, target) -> list[np.ndarray]:
    """Backpropagated sensitivities ``s^1 .. s^L`` for one sample.

    ``s^L = F'(n^L)(t - a)`` and ``s^l = F'(n^l) W^{l+1}^T s^{l+1}``, so
    ``s^l`` is the negative gradient of ``0.5 * |t - a|^2`` with respect to
    the net input ``n^l``.
    """
    t = as_vector(target)
    spec = params.spec
    if t.shape[0] != spec.output_dim:
        raise ShapeError(f"target length {t.shape[0]} != {spec.output_dim}")
    if len(trace.n) != spec.n_layers:
        raise ShapeError("trace does not match network depth")
    deriv = [ACTIVATIONS[act][1](n, a) for act, n, a in zip(spec.activations, trace.n, trace.a[1:])]
    s = [None] * spec.n_layers
    s[-1] = deriv[-1] * (t - trace.output)
    for l in range(spec.n_layers - 2, -1, -1):
        s[l] = deriv[l] * (params.weights[l + 1].T @ s[l + 1])
    return s


def _residuals_and_jacobian(spec: NetworkSpec, flat: np.ndarray, u: np.ndarray, t: np.ndarray | None):
    """Flat-vector fast path used by the trainer.

    Returns (outputs (P, NL), e or None, J (P*NL, K)).
    """
    views = _views(spec, flat)
    ns, as_ = _propagate(spec, views, u)
    p, nl = u.shape[0], spec.output_dim
    derivs = [ACTIVATIONS[act][1](n, a) for act, n, a in zip(spec.activations, ns, as_[1:])]

    # Marquardt sensitivity matrices, shape (P, N_l, NL): d e_o / d n^l_i
    sens = [None] * spec.n_layers
    sens[-1] = -derivs[-1][:, :, None] * np.eye(nl)[None, :, :]
    for l in range(spec.n_layers - 2, -1, -1):
        w_next = views[l + 1][0]
        sens[l] = derivs[l][:, :, None] * np.einsum("ji,pjo->pio", w_next, sens[l + 1])

    jac = np.empty((p, nl, spec.param_count))
    for l, (wsl, bsl, n, m) in enumerate(_layer_slices(spec)):
        sl = sens[l]  # (P, n, NL)
        jac[:, :, wsl] = np.einsum("pio,pj->poij", sl, as_[l]).reshape(p, nl, n * m)
        jac[:, :, bsl] = sl.transpose(0, 2, 1)
    out = as_[-1]
    e = None if t is None else (t - out).ravel()
    return out, e, jac.reshape(p * nl, spec.param_count)


def error_jacobian(params: NetworkParams, inputs) -> np.ndarray:
    """Jacobian of the errors ``e = t - a`` w.r.t. the flat parameters.

    Does not depend on the targets; shape ``(n_samples * NL, K)``.
    """
    u = _check_inputs(params.spec, inputs)
    _, _, jac = _residuals_and_jacobian(params.spec, flatten(params), u, None)
    return jac


def network_errors(params: NetworkParams, inputs, targets) -> np.ndarray:
    """Sample-major flat error vector ``t - a``."""
    u = _check_inputs(params.spec, inputs)
    t = np.asarray(targets, dtype=np.float64).reshape(u.shape[0], params.spec.output_dim)
    return (t - predict(params, u)).ravel()


def init_params(spec: NetworkSpec, rng: np.random.Generator, scale: float = 0.5) -> NetworkParams:
    """Uniform ``[-scale, scale]`` initial weights and biases."""
    return unflatten(spec, rng.uniform(-scale, scale, size=spec.param_count))


def save_checkpoint(path, params: NetworkParams, *, seed=None, meta: dict | None = None) -> None:
    doc = {
        "spec": params.spec.to_dict(),
        "weights": flatten(params).tolist(),
        "seed": seed,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    doc = json.loads(Path(path).read_text())
    spec = NetworkSpec.from_dict(doc["spec"])
    params = unflatten(spec, np.array(doc["weights"], dtype=np.float64))
    return params, {"seed": doc.get("seed"), **doc.get("meta", {})}

