"""SGD training for the reference networks on the synthetic known split.

Plain momentum SGD with a two-step learning-rate decay (x0.1 at 50% and 75%
of the epoch budget), random circular time-shift augmentation, and a
stratified validation split carved from the known training records. Training
is bit-reproducible from the config seed: batch order, augmentation shifts,
and dropout masks all derive from it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .layers import INFER, TRAIN, NetSpec, Network, build_network
from .netio import load_weights, save_weights
from .pipeline import iq_to_features, shift_rows
from .rngutil import derive_rng, derive_seed
from .synthrf import Dataset


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; learning rate too high or gradients broken."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    decay_factor: float = 0.1
    seed: int = 0
    max_shift: int = 50
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch norm needs it)")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        """Step decay at 50% and 75% of the epoch budget."""
        lr = self.lr
        if epoch >= int(self.epochs * 0.5):
            lr *= self.decay_factor
        if epoch >= int(self.epochs * 0.75):
            lr *= self.decay_factor
        return lr


@dataclass
class TrainResult:
    net: Network
    log_rows: List[Dict]
    final_val_acc: float


def _stratified_split(classes: np.ndarray, val_fraction: float,
                      seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = derive_rng(seed, "valsplit")
    train_idx, val_idx = [], []
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(idx.size * val_fraction))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def evaluate_accuracy(net: Network, features: np.ndarray, classes: np.ndarray,
                      batch_size: int = 256) -> float:
    """Deterministic single-pass top-1 accuracy."""
    if features.shape[0] == 0:
        return float("nan")
    probs = net.predict_probs(features, INFER, 0, batch_size)
    return float((probs.argmax(axis=1) == classes).mean())


def train(dataset: Dataset, spec: NetSpec, cfg: TrainConfig) -> TrainResult:
    """Train on the known-transmitter training split."""
    if dataset.train_iq.shape[0] == 0:
        raise ValueError("dataset has no training records")
    classes = dataset.train_classes()
    if spec.n_classes != len(dataset.manifest.known_ids):
        raise ValueError(
            f"net expects {spec.n_classes} classes, dataset has {len(dataset.manifest.known_ids)}")
    train_idx, val_idx = _stratified_split(classes, cfg.val_fraction, cfg.seed)
    iq_train, y_train = dataset.train_iq[train_idx], classes[train_idx]
    val_features = iq_to_features(dataset.train_iq[val_idx])
    y_val = classes[val_idx]

    net = build_network(spec, seed=cfg.seed)
    velocity = {id(p): np.zeros_like(p) for _, p in net.params()}
    log_rows: List[Dict] = []
    n = iq_train.shape[0]

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(n)
        losses, hits, seen = [], 0, 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue  # batch norm cannot train on a single record
            iq_b = iq_train[idx]
            if cfg.max_shift > 0:
                shifts = derive_rng(cfg.seed, "aug", epoch, bi).integers(
                    -cfg.max_shift, cfg.max_shift + 1, size=idx.size)
                iq_b = shift_rows(iq_b, shifts)
            xb = iq_to_features(iq_b)
            yb = y_train[idx]
            loss, grads, probs = net.loss_and_grads(
                xb, yb, TRAIN, seed=derive_seed(cfg.seed, "drop", epoch, bi))
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} batch {bi} (lr={lr:g})")
            for p, g in grads:
                v = velocity[id(p)]
                v *= cfg.momentum
                v -= lr * g
                p += v
            losses.append(loss)
            hits += int((probs.argmax(axis=1) == yb).sum())
            seen += idx.size
        val_acc = evaluate_accuracy(net, val_features, y_val)
        log_rows.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_acc": hits / seen if seen else float("nan"),
            "val_acc": val_acc,
            "lr": lr,
        })
    return TrainResult(net=net, log_rows=log_rows,
                       final_val_acc=log_rows[-1]["val_acc"])


def write_train_log(rows: List[Dict], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "train_acc", "val_acc", "lr"])
        for r in rows:
            w.writerow([r["epoch"], f"{r['train_loss']:.10g}", f"{r['train_acc']:.10g}",
                        f"{r['val_acc']:.10g}", f"{r['lr']:.10g}"])


def save_model(net: Network, out_dir) -> Path:
    """weights.bin (parameters + batch-norm state) plus model.json (NetSpec)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(out / "weights.bin", net.params() + net.state())
    with open(out / "model.json", "w") as f:
        json.dump(net.spec.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def load_model(model_dir) -> Network:
    root = Path(model_dir)
    with open(root / "model.json") as f:
        spec = NetSpec.from_dict(json.load(f))
    net = build_network(spec, seed=0)
    net.load_param_dict(load_weights(root / "weights.bin"))
    return net
