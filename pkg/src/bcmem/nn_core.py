"""Minimal deterministic float64 NN stack with hand-written gradients.

Layers cache what their backward pass needs, accumulate parameter
gradients, and are wired into fixed sequential stacks; there is no
general autodiff graph. numpy provides storage and matrix multiply,
every derivative is written out by hand and validated against central
finite differences.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"BCMEM001"


class CheckpointError(ValueError):
    """Raised for unreadable or malformed checkpoint files."""


class Param:
    """A trainable tensor and its gradient accumulator."""

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LinearLayer:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.W = Param(uniform_init(rng, (out_dim, in_dim), in_dim))
        self.b = Param(uniform_init(rng, (out_dim,), in_dim))
        self._x = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        return x @ self.W.data.T + self.b.data

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.W.grad += dy.T @ self._x
        self.b.grad += dy.sum(axis=0)
        return dy @ self.W.data

    def params(self):
        return [("W", self.W), ("b", self.b)]

    def buffers(self):
        return []


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch on sign so neither exp() can overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class SiLULayer:
    def __init__(self):
        self._x = None
        self._sig = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        self._sig = _sigmoid(x)
        return x * self._sig

    def backward(self, dy: np.ndarray) -> np.ndarray:
        s = self._sig
        return dy * (s + self._x * s * (1.0 - s))

    def params(self):
        return []

    def buffers(self):
        return []


class BatchNormLayer:
    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Param(np.ones(dim))
        self.beta = Param(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            n = x.shape[0]
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            self._cache = ("train", xhat, inv_std, n)
            var_unbiased = var * n / (n - 1) if n > 1 else var
            self.running_mean += self.momentum * (mu - self.running_mean)
            self.running_var += self.momentum * (var_unbiased - self.running_var)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
            self._cache = ("eval", xhat, inv_std, x.shape[0])
        return self.gamma.data * xhat + self.beta.data

    def backward(self, dy: np.ndarray) -> np.ndarray:
        mode, xhat, inv_std, n = self._cache
        self.beta.grad += dy.sum(axis=0)
        self.gamma.grad += (dy * xhat).sum(axis=0)
        dxhat = dy * self.gamma.data
        if mode == "eval":
            return dxhat * inv_std
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class DropoutLayer:
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng
        self._mask = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if not train or self.p == 0.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dy
        return dy * self._mask

    def params(self):
        return []

    def buffers(self):
        return []


class Sequential:
    def __init__(self, layers: list):
        self.layers = layers

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> list[Param]:
        return [p for layer in self.layers for _, p in layer.params()]

    def named_tensors(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                out.append((f"{prefix}.{i}.{name}", p.data))
            for name, buf in layer.buffers():
                out.append((f"{prefix}.{i}.{name}", buf))
        return out

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params())


def build_mlp(
    dims: tuple[int, ...],
    rng: np.random.Generator,
    dropout_p: float = 0.1,
    dropout_rng: np.random.Generator | None = None,
) -> Sequential:
    """Linear -> SiLU -> BatchNorm -> Dropout blocks, plain final Linear."""
    layers = []
    for i in range(len(dims) - 2):
        layers.append(LinearLayer(dims[i], dims[i + 1], rng))
        layers.append(SiLULayer())
        layers.append(BatchNormLayer(dims[i + 1]))
        layers.append(DropoutLayer(dropout_p, dropout_rng if dropout_rng is not None else rng))
    layers.append(LinearLayer(dims[-2], dims[-1], rng))
    return Sequential(layers)


ENCODER_DIMS = (784, 512, 256, 128, 64, 3)
CLASSIFIER_DIMS = (3, 512, 512, 512, 128, 64, 10)


def build_encoder(rng: np.random.Generator, dropout_rng=None, dropout_p: float = 0.1) -> Sequential:
    """784 -> 512 -> 256 -> 128 -> 64 -> 3, block after every hidden Linear."""
    return build_mlp(ENCODER_DIMS, rng, dropout_p, dropout_rng)


def build_classifier(rng: np.random.Generator, dropout_rng=None, dropout_p: float = 0.1) -> Sequential:
    """3 -> 512 -> 512 -> 512 -> 128 -> 64 -> 10, no activation on the logits."""
    return build_mlp(CLASSIFIER_DIMS, rng, dropout_p, dropout_rng)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"shape mismatch: logits {logits.shape}, labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels out of range 0..{logits.shape[1] - 1}")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    loss = -log_probs[np.arange(n), labels].mean()
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


class AdamW:
    """Adam with decoupled weight decay applied to every parameter."""

    def __init__(
        self,
        params: list[Param],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    """lr0 * (1 + cos(pi * epoch / total_epochs)) / 2."""
    return lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def max_rel_error(loss_and_grads, arrays: list[np.ndarray], eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``loss_and_grads()`` recomputes the forward/backward pass from the
    current contents of ``arrays`` and returns (loss, grads) with grads
    aligned to ``arrays``. Error per array is normalized by the largest
    gradient magnitude in that array; arrays whose analytic and numeric
    gradients are both ~0 count as exact.
    """
    _, grads = loss_and_grads()
    grads = [np.array(g, dtype=np.float64, copy=True) for g in grads]
    worst = 0.0
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        numeric = np.zeros(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp, _ = loss_and_grads()
            flat[j] = orig - eps
            lm, _ = loss_and_grads()
            flat[j] = orig
            numeric[j] = (lp - lm) / (2.0 * eps)
        ga = g.reshape(-1)
        scale = max(np.abs(ga).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        if scale < 1e-9:
            continue
        worst = max(worst, float(np.abs(ga - numeric).max() / scale))
    return worst


def gradcheck_stack(stack: Sequential, x: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative gradient error of sum(output^2) w.r.t. params and input.

    Dropout layers must be built with p=0 so repeated forward passes are
    deterministic; BatchNorm runs in train mode so the batch-statistics
    backward path is exercised.
    """
    params = stack.params()
    x_arr = x.copy()

    def loss_and_grads():
        stack.zero_grad()
        out = stack.forward(x_arr, train=True)
        dx = stack.backward(2.0 * out)
        return float((out**2).sum()), [p.grad.copy() for p in params] + [dx]

    arrays = [p.data for p in params] + [x_arr]
    return max_rel_error(loss_and_grads, arrays, eps)


def save_checkpoint(
    path: str | Path,
    tensors: list[tuple[str, np.ndarray]],
    config: dict,
    loss_mode: str,
) -> None:
    """Write magic, little-endian header length, JSON header, raw f64 data."""
    records = []
    offset = 0
    blobs = []
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        records.append(
            {"name": name, "shape": list(arr.shape), "dtype": "f64", "byte_offset": offset}
        )
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"tensors": records, "config": config, "loss_mode": loss_mode},
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict, str]:
    """Read a checkpoint back into (tensors by name, config, loss_mode)."""
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    pos = len(CHECKPOINT_MAGIC)
    if len(raw) < pos + 4:
        raise CheckpointError(f"{path}: truncated header length")
    (hlen,) = struct.unpack("<I", raw[pos : pos + 4])
    pos += 4
    if len(raw) < pos + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    data = raw[pos + hlen :]
    tensors = {}
    for rec in header["tensors"]:
        if rec["dtype"] != "f64":
            raise CheckpointError(f"{path}: unsupported dtype {rec['dtype']!r}")
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = rec["byte_offset"]
        end = start + 8 * count
        if end > len(data):
            raise CheckpointError(f"{path}: tensor {rec['name']!r} runs past end of file")
        tensors[rec["name"]] = (
            np.frombuffer(data[start:end], dtype="<f8").astype(np.float64).reshape(shape)
        )
    return tensors, header.get("config", {}), header.get("loss_mode", "")


def first_nonfinite(named: list[tuple[str, np.ndarray]]) -> str | None:
    """Name of the first tensor containing NaN/Inf, or None."""
    for name, arr in named:
        if not np.isfinite(arr).all():
            return name
    return None
