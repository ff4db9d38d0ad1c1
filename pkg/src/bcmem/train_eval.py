"""Training loop, evaluation metrics, and latent-embedding extraction."""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import nn_core
from .data_mnist import BatchIterator, Dataset, load_split, split_indices
from .nn_core import AdamW, cosine_lr, first_nonfinite, softmax_cross_entropy
from .quad_reg import (
    CubeHead,
    ProbeQuadraticForm,
    QuadLossMode,
    cube_discriminants,
    discriminant_residuals,
    quad_loss,
    quad_loss_backward,
    total_loss,
)


class NonFiniteLossError(RuntimeError):
    """Training hit a NaN/Inf loss; the message names the offending tensor."""


@dataclass
class TrainConfig:
    data_dir: str | None = None
    out: str | None = None
    log: str | None = None
    epochs: int = 200
    batch: int = 256
    lr: float = 0.001
    lam: float = 0.1
    mode: str = "cube"
    seed: int = 0
    patience: int = 20
    val_fraction: float = 0.1
    train_limit: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.patience < 1:
            raise ValueError("epochs, batch and patience must be positive")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        QuadLossMode.parse(self.mode)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochReport:
    """Per-epoch record; quad_loss is the raw (unweighted) regularizer value,
    reported as exactly 0.0 when the regularizer is inactive (lambda = 0 or
    mode none)."""

    epoch: int
    train_task_loss: float
    train_quad_loss: float
    val_loss: float
    val_accuracy: float
    lr: float
    wall_time_s: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


class Model:
    """Encoder, classifier, cube head and probes under one seeded init."""

    def __init__(self, seed: int, mode: QuadLossMode, dropout_p: float = 0.1):
        init_rng = np.random.default_rng([seed, 0])
        dropout_rng = np.random.default_rng([seed, 2])
        self.encoder = nn_core.build_encoder(init_rng, dropout_rng, dropout_p)
        self.classifier = nn_core.build_classifier(init_rng, dropout_rng, dropout_p)
        self.head = CubeHead(init_rng)
        self.probes = [ProbeQuadraticForm(init_rng) for _ in range(3)]
        self.mode = mode
        self.seed = seed

    def forward(self, x: np.ndarray, train: bool) -> tuple[np.ndarray, np.ndarray]:
        z = self.encoder.forward(x, train)
        logits = self.classifier.forward(z, train)
        return z, logits

    def trainable_params(self, lam: float) -> list[nn_core.Param]:
        """Parameters the loss actually reaches; inactive heads stay frozen."""
        params = self.encoder.params() + self.classifier.params()
        if lam > 0 and self.mode is QuadLossMode.CUBE:
            params += [self.head.W, self.head.b]
        if lam > 0 and self.mode is QuadLossMode.PROBE:
            for p in self.probes:
                params += [p.A, p.b, p.c]
        return params

    def zero_grad(self) -> None:
        self.encoder.zero_grad()
        self.classifier.zero_grad()
        for _, p in self.head.params():
            p.grad[...] = 0.0
        for probe in self.probes:
            for _, p in probe.params():
                p.grad[...] = 0.0

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = self.encoder.named_tensors("encoder")
        out += self.classifier.named_tensors("classifier")
        out += [("head.W", self.head.W.data), ("head.b", self.head.b.data)]
        for k, probe in enumerate(self.probes):
            for name, p in probe.params():
                out.append((f"probe{k}.{name}", p.data))
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, arr in self.named_tensors():
            if name not in tensors:
                raise nn_core.CheckpointError(f"checkpoint is missing tensor {name!r}")
            src = tensors[name]
            if src.shape != arr.shape:
                raise nn_core.CheckpointError(
                    f"tensor {name!r} has shape {src.shape}, expected {arr.shape}"
                )
            arr[...] = src

    def num_params(self) -> int:
        n = self.encoder.num_params() + self.classifier.num_params()
        n += sum(p.data.size for _, p in self.head.params())
        n += sum(p.data.size for probe in self.probes for _, p in probe.params())
        return n


@dataclass
class TrainResult:
    reports: list[EpochReport]
    best_epoch: int
    best_val_loss: float
    model: Model
    checkpoint_path: str | None = None


def _batched_eval(model: Model, ds: Dataset, lam: float, batch: int = 1024):
    """Eval-mode pass: (task_loss, accuracy, quad, latents, predictions)."""
    n = len(ds)
    zs = np.empty((n, 3))
    preds = np.empty(n, dtype=np.int64)
    task_sum = 0.0
    correct = 0
    for start in range(0, n, batch):
        sl = slice(start, min(start + batch, n))
        z, logits = model.forward(ds.images[sl], train=False)
        zs[sl] = z
        p = logits.argmax(axis=1)
        preds[sl] = p
        loss, _ = softmax_cross_entropy(logits, ds.labels[sl])
        task_sum += loss * (sl.stop - sl.start)
        correct += int((p == ds.labels[sl]).sum())
    quad = quad_loss(model.head, model.probes, zs, model.mode) if lam > 0 else 0.0
    return task_sum / n, correct / n, quad, zs, preds


def train(config: TrainConfig, dataset: Dataset | None = None) -> TrainResult:
    """Run the full protocol and write the best-validation checkpoint.

    ``dataset`` overrides loading from config.data_dir (used by tests);
    either way it is split into stratified train/validation parts.
    """
    mode = QuadLossMode.parse(config.mode)
    lam = config.lam if mode is not QuadLossMode.NONE else 0.0

    if dataset is None:
        if config.data_dir is None:
            raise ValueError("config.data_dir is required when no dataset is passed")
        dataset = load_split(config.data_dir, "train")
    train_idx, val_idx = split_indices(dataset.labels, config.val_fraction, config.seed)
    if config.train_limit is not None and config.train_limit < train_idx.size:
        sel = np.random.default_rng([config.seed, 4]).choice(
            train_idx.size, size=config.train_limit, replace=False
        )
        train_idx = train_idx[np.sort(sel)]
    train_ds = dataset.subset(train_idx)
    val_ds = dataset.subset(val_idx)

    model = Model(config.seed, mode)
    opt = AdamW(model.trainable_params(lam), lr=config.lr)
    batches = BatchIterator(len(train_ds), config.batch, config.seed)

    log_fh = open(config.log, "w") if config.log else None
    reports: list[EpochReport] = []
    best_val = np.inf
    best_epoch = -1
    best_tensors: dict[str, np.ndarray] | None = None
    try:
        for epoch in range(config.epochs):
            t0 = time.time()
            opt.lr = cosine_lr(epoch, config.epochs, config.lr)
            task_sum = 0.0
            quad_sum = 0.0
            for step, idx in enumerate(batches.epoch(epoch)):
                x, y = train_ds.images[idx], train_ds.labels[idx]
                model.zero_grad()
                z, logits = model.forward(x, train=True)
                task, dlogits = softmax_cross_entropy(logits, y)
                quad = quad_loss(model.head, model.probes, z, mode) if lam > 0 else 0.0
                total = total_loss(task, quad, lam)
                if not np.isfinite(total):
                    named = [("latent_z", z), ("logits", logits)] + model.named_tensors()
                    culprit = first_nonfinite(named) or "total_loss"
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch} step {step}; "
                        f"first non-finite tensor: {culprit}"
                    )
                dz = model.classifier.backward(dlogits)
                if lam > 0:
                    qg = quad_loss_backward(model.head, model.probes, z, mode)
                    dz = dz + lam * qg.d_z
                    if mode is QuadLossMode.CUBE:
                        model.head.W.grad += lam * qg.d_head_w
                        model.head.b.grad += lam * qg.d_head_b
                    else:
                        for k, probe in enumerate(model.probes):
                            probe.A.grad += lam * qg.d_probe_a[k]
                            probe.b.grad += lam * qg.d_probe_b[k]
                            probe.c.grad += lam * qg.d_probe_c[k]
                model.encoder.backward(dz)
                opt.step()
                if lam > 0 and mode is QuadLossMode.PROBE:
                    for probe in model.probes:
                        probe.symmetrize()
                task_sum += task * len(idx)
                quad_sum += quad * len(idx)

            val_task, val_acc, val_quad, _, _ = _batched_eval(model, val_ds, lam)
            val_total = total_loss(val_task, val_quad, lam)
            report = EpochReport(
                epoch=epoch,
                train_task_loss=task_sum / len(train_ds),
                train_quad_loss=quad_sum / len(train_ds),
                val_loss=val_total,
                val_accuracy=val_acc,
                lr=opt.lr,
                wall_time_s=time.time() - t0,
            )
            reports.append(report)
            if log_fh:
                log_fh.write(report.to_json() + "\n")
                log_fh.flush()

            if val_total < best_val:
                best_val = val_total
                best_epoch = epoch
                best_tensors = {k: v.copy() for k, v in model.named_tensors()}
            elif epoch - best_epoch >= config.patience:
                break
    finally:
        if log_fh:
            log_fh.close()

    assert best_tensors is not None
    model.load_tensors(best_tensors)
    path = None
    if config.out:
        nn_core.save_checkpoint(
            config.out, model.named_tensors(), config.to_dict(), mode.value
        )
        path = config.out
    return TrainResult(reports, best_epoch, best_val, model, path)


def load_model(checkpoint: str | Path) -> tuple[Model, dict]:
    """Rebuild a Model from a checkpoint file."""
    tensors, config, mode_str = nn_core.load_checkpoint(checkpoint)
    mode = QuadLossMode.parse(mode_str or config.get("mode", "cube"))
    model = Model(int(config.get("seed", 0)), mode)
    model.load_tensors(tensors)
    return model, config


@dataclass
class EvalResult:
    accuracy: float
    task_loss: float
    residual: float


def evaluate(model: Model, test: Dataset) -> EvalResult:
    """Eval-mode accuracy, mean cross-entropy, and mean |D(D^3-1)| residual."""
    task, acc, _, zs, _ = _batched_eval(model, test, lam=0.0)
    residual = float(discriminant_residuals(model.head, zs).mean())
    return EvalResult(accuracy=acc, task_loss=task, residual=residual)


def extract_embeddings(model: Model, ds: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eval-mode pass in dataset order: (latents (N,3), labels, predictions)."""
    _, _, _, zs, preds = _batched_eval(model, ds, lam=0.0)
    return zs, ds.labels.copy(), preds


def write_embeddings_csv(path: str | Path, z: np.ndarray, labels: np.ndarray, preds: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("z1,z2,z3,label,pred\n")
        for row, lab, pred in zip(z, labels, preds):
            fh.write(f"{row[0]:.6f},{row[1]:.6f},{row[2]:.6f},{int(lab)},{int(pred)}\n")


def nearest_centroid_accuracy(z: np.ndarray, labels: np.ndarray) -> float:
    """Geometry-only clustering metric: assign each latent to the closest
    class centroid computed from the same rows."""
    classes = np.unique(labels)
    centroids = np.stack([z[labels == c].mean(axis=0) for c in classes])
    d2 = ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assigned = classes[d2.argmin(axis=1)]
    return float((assigned == labels).mean())
