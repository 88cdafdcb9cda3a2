"""A small dense-network stack: ReLU MLPs with hand-written backprop, Adam, cosine decay."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import ValidationError, rng_from

CHECKPOINT_FORMAT = "smore-lab-params"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


class DenseNet:
    """Affine layers with ReLU between them and a linear output.

    Parameters are stored as ``[W0, b0, W1, b1, ...]`` with ``W`` of shape
    ``(fan_in, fan_out)``. Weights use He-uniform initialization and biases
    start at zero.
    """

    def __init__(self, layer_sizes, seed=None, dtype=np.float32):
        sizes = [int(n) for n in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValidationError(f"layer_sizes needs >= 2 positive entries, got {layer_sizes}")
        self.layer_sizes = sizes
        self.dtype = np.dtype(dtype)
        rng = rng_from(seed)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype))
            self.params.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def astype(self, dtype) -> "DenseNet":
        twin = self.copy()
        twin.dtype = np.dtype(dtype)
        twin.params = [p.astype(dtype) for p in self.params]
        return twin

    def copy(self) -> "DenseNet":
        twin = DenseNet.__new__(DenseNet)
        twin.layer_sizes = list(self.layer_sizes)
        twin.dtype = self.dtype
        twin.params = [p.copy() for p in self.params]
        return twin

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vector) -> None:
        vector = np.asarray(vector)
        if vector.size != self.n_params():
            raise ValidationError(f"expected {self.n_params()} parameters, got {vector.size}")
        offset = 0
        for p in self.params:
            p[...] = vector[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def forward(self, x, keep_cache: bool = False):
        return forward(self, x, keep_cache)

    def __call__(self, x):
        return forward(self, x)


def _check_input(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValidationError(f"input of shape {x.shape} does not match width {net.in_dim}")
    return x


def forward(net: DenseNet, x, keep_cache: bool = False):
    """Output ``[n, out_dim]``; with ``keep_cache`` also returns the activations for backward."""
    h = _check_input(net, x)
    cache = [h]
    last = net.n_layers - 1
    for i in range(net.n_layers):
        h = h @ net.params[2 * i] + net.params[2 * i + 1]
        if i < last:
            h = np.maximum(h, 0)
            cache.append(h)
    return (h, cache) if keep_cache else h


def backward(net: DenseNet, cache, upstream):
    """Reverse-mode pass: returns ``(param_grads, input_grad)`` for ``sum(upstream * out)``."""
    delta = np.asarray(upstream, dtype=net.dtype)
    n = cache[0].shape[0]
    if delta.shape != (n, net.out_dim):
        raise ValidationError(f"upstream gradient shape {delta.shape} != {(n, net.out_dim)}")
    grads: list[np.ndarray] = [None] * len(net.params)  # type: ignore[list-item]
    for i in reversed(range(net.n_layers)):
        inputs = cache[i]
        grads[2 * i] = inputs.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ net.params[2 * i].T
        if i > 0:
            delta = delta * (inputs > 0)
    return grads, delta


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    moments1: list
    moments2: list
    base_lr: float = 3e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, base_lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   base_lr=base_lr, betas=tuple(betas), eps=eps)


def adam_step(state: AdamState, params, grads, lr_now: float | None = None) -> None:
    """In-place bias-corrected Adam update; rejects non-finite gradients."""
    if len(grads) != len(params):
        raise ValidationError("one gradient per parameter tensor is required")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at Adam step {state.step + 1}")
    lr = state.base_lr if lr_now is None else lr_now
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.moments1, state.moments2):
        if g.shape != p.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class CosineSchedule:
    total_steps: int
    floor_fraction: float = 0.0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ValidationError("total_steps must be positive")


def cosine_lr(schedule: CosineSchedule, base_lr: float, step: int) -> float:
    t = min(max(step, 0), schedule.total_steps) / schedule.total_steps
    floor = schedule.floor_fraction
    return base_lr * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * t)))


# ---------------------------------------------------------------------------
# verification


def gradient_check(net: DenseNet, loss_fn, batch, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference parameter gradients.

    ``loss_fn(net, batch)`` must return ``(loss, grads)``. The check runs in
    double precision on a copy of ``net``; the relative error uses the
    denominator ``max(|a|, |b|, 1e-8)``.
    """
    work = net.astype(np.float64)
    _, analytic = loss_fn(work, batch)
    worst = 0.0
    for p, g in zip(work.params, analytic):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            plus = float(loss_fn(work, batch)[0])
            p[idx] = orig - h
            minus = float(loss_fn(work, batch)[0])
            p[idx] = orig
            numeric = (plus - minus) / (2.0 * h)
            a = float(g[idx])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    return worst


def mse_loss(net: DenseNet, batch):
    """``mean((net(x) - y)^2)`` and its parameter gradients; ``batch = (x, y)``."""
    x, y = batch
    out, cache = forward(net, x, keep_cache=True)
    diff = out - np.asarray(y, dtype=net.dtype)
    grads, _ = backward(net, cache, 2.0 * diff / diff.size)
    return float(np.mean(diff * diff)), grads


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, nets: dict, meta: dict | None = None) -> None:
    """JSON header line, then every parameter as little-endian float32."""
    nets = dict(sorted(nets.items()))  # data order must match the sorted JSON header
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "nets": {name: {"layer_sizes": net.layer_sizes,
                        "counts": [int(p.size) for p in net.params]}
                 for name, net in nets.items()},
        "meta": meta or {},
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for net in nets.values():
        for p in net.params:
            buf.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(nets, meta)``."""
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValidationError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:newline])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a parameter checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: checkpoint version {header.get('version')} "
                              f"unsupported (expected {CHECKPOINT_VERSION})")
    offset = newline + 1
    nets = {}
    for name, spec in header["nets"].items():
        net = DenseNet(spec["layer_sizes"], seed=0)
        for i, count in enumerate(spec["counts"]):
            end = offset + 4 * count
            if end > len(raw):
                raise ValidationError(f"{path}: truncated at byte {len(raw)}, "
                                      f"expected data up to byte {end}")
            net.params[i] = np.frombuffer(raw[offset:end], dtype="<f4").astype(
                np.float32).reshape(net.params[i].shape)
            offset = end
        nets[name] = net
    if offset != len(raw):
        raise ValidationError(f"{path}: {len(raw) - offset} trailing bytes after byte {offset}")
    return nets, header.get("meta", {})
