"""Seeded mini-batch training and evaluation for classifiers and the VAE."""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .coords import append_coords
from .data import DatasetSplit
from .errors import ConfigError, NumericError, ShapeError
from .models import Network, Vae, predict
from .nn.optim import make_optimizer
from .nn.tensor import STREAM_NOISE, STREAM_SHUFFLE, RngState

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 1
    use_coords: bool = True
    precision: str = "f32"
    patience: int = 5
    checkpoint_path: str | None = None
    eval_batch_size: int = 500

    def validate(self, train_size: int | None = None) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.lr <= 0 or self.patience < 1:
            raise ConfigError("batch_size, lr and patience must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if train_size is not None and self.batch_size > train_size:
            raise ConfigError(f"batch_size {self.batch_size} exceeds the {train_size}-image training set")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Metrics:
    accuracy: float
    error_rate: float
    per_class_accuracy: list[float]
    per_class_count: list[int]
    loss: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    validation: Metrics | None
    batch_order_hash: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["validation"] = None if self.validation is None else self.validation.to_dict()
        return d


@dataclass
class TrainResult:
    net: Network
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False


def prepare_inputs(images: np.ndarray, use_coords: bool) -> np.ndarray:
    return append_coords(images) if use_coords else images


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Batch order for one epoch; depends only on (seed, epoch, n), so every variant sees the same batches."""
    return RngState(seed).stream(STREAM_SHUFFLE, epoch).permutation(n)


def _check_channels(net: Network, use_coords: bool) -> None:
    want = 3 if use_coords else 1
    if net.spec.input_channels != want:
        raise ShapeError(f"network has {net.spec.input_channels} input channels but use_coords={use_coords} "
                         f"feeds {want}; rebuild the network or toggle coordinate encoding")


def evaluate(net: Network, split: DatasetSplit, use_coords: bool, batch_size: int = 500) -> Metrics:
    if len(split) == 0:
        raise ConfigError(f"cannot evaluate on the empty {split.name} split")
    _check_channels(net, use_coords)
    k = net.spec.class_count
    correct = np.zeros(k, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    nll = 0.0
    for start in range(0, len(split), batch_size):
        xb = prepare_inputs(split.images[start:start + batch_size], use_coords)
        yb = split.labels[start:start + batch_size]
        probs, pred = predict(net, xb)
        nll += float(-np.log(np.clip(probs[np.arange(len(yb)), yb], 1e-7, 1.0)).sum())
        counts += np.bincount(yb, minlength=k)
        correct += np.bincount(yb[pred == yb], minlength=k)
    total = int(counts.sum())
    acc = float(correct.sum()) / total
    per_class = [float(c) / n if n else 0.0 for c, n in zip(correct, counts)]
    return Metrics(acc, 1.0 - acc, per_class, counts.tolist(), nll / total, total)


def _snapshot(net) -> list[np.ndarray]:
    return [p.value.copy() for p in net.parameters()]


def _restore(net, values) -> None:
    for p, v in zip(net.parameters(), values):
        p.value[...] = v


def train(net: Network, train_split: DatasetSplit, val_split: DatasetSplit | None, config: TrainConfig,
          progress=None) -> TrainResult:
    """Train ``net`` in place; restores the best-validation parameters on return."""
    config.validate(len(train_split))
    _check_channels(net, config.use_coords)
    result = TrainResult(net)
    if config.epochs == 0:
        return result
    opt = make_optimizer(config.optimizer, net.parameters(), config.lr)
    have_val = val_split is not None and len(val_split) > 0
    best_acc, best_params, stale = -1.0, None, 0
    n = len(train_split)
    for epoch in range(config.epochs):
        order = epoch_order(config.seed, epoch, n)
        hasher = hashlib.sha256()
        losses, correct = [], 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            hasher.update(idx.astype("<i8").tobytes())
            xb = prepare_inputs(train_split.images[idx], config.use_coords)
            yb = train_split.labels[idx]
            try:
                loss, probs = net.loss_and_grads(xb, yb)
                opt.step()
            except NumericError as exc:
                raise NumericError(f"epoch {epoch + 1}, batch {b}: {exc}") from None
            losses.append(loss)
            correct += int((probs.argmax(axis=1) == yb).sum())
            if progress is not None:
                progress(epoch, b)
        val = evaluate(net, val_split, config.use_coords, config.eval_batch_size) if have_val else None
        rec = EpochRecord(epoch + 1, float(np.mean(losses)), correct / n, val, hasher.hexdigest())
        result.history.append(rec)
        log.info("epoch %d loss %.4f train_acc %.4f val_acc %s", rec.epoch, rec.train_loss,
                 rec.train_accuracy, None if val is None else f"{val.accuracy:.4f}")
        score = val.accuracy if have_val else -rec.train_loss
        if score > best_acc:
            best_acc, best_params, stale = score, _snapshot(net), 0
            result.best_epoch = rec.epoch
            if config.checkpoint_path:
                save_checkpoint(net, config.checkpoint_path)
        else:
            stale += 1
            if stale >= config.patience:
                result.stopped_early = True
                break
    if best_params is not None:
        _restore(net, best_params)
    return result


@dataclass
class VaeEpoch:
    epoch: int
    loss: float


def train_vae(vae: Vae, images3: np.ndarray, epochs: int, batch_size: int = 64, lr: float = 1e-3,
              seed: int = 1, beta: float = 1.0) -> list[VaeEpoch]:
    """Mean per-batch ELBO loss for each epoch."""
    if batch_size > len(images3):
        raise ConfigError("batch_size exceeds the number of VAE training images")
    opt = make_optimizer("adam", vae.parameters(), lr)
    rng = RngState(seed)
    history = []
    for epoch in range(epochs):
        order = epoch_order(seed, epoch, len(images3))
        noise = rng.stream(STREAM_NOISE, epoch)
        losses = []
        for start in range(0, len(images3), batch_size):
            xb = images3[order[start:start + batch_size]]
            eps = noise.standard_normal((len(xb), vae.spec.latent_dim)).astype(vae.dtype)
            loss, _ = vae.loss_and_grads(xb, eps, beta)
            opt.step()
            losses.append(loss)
        history.append(VaeEpoch(epoch + 1, float(np.mean(losses))))
        log.info("vae epoch %d loss %.3f", epoch + 1, history[-1].loss)
    return history


def clone(net):
    return copy.deepcopy(net)
