"""Training loop, evaluation metrics and accuracy-curve export.

Training minimizes the mean cross-entropy with Adam over shuffled
mini-batches, holds out a stratified validation slice of the training
data for early stopping, and restores the best-validation state.  The
decision-averaging ensemble is trained on single-antenna examples pooled
from all antennas and fuses only at inference.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .archs import CoAMC, build_model, snapshot_state, assign_state
from .config import TrainSettings
from .dataset import SignalDataset, split
from .optim import adam_step
from .tensor import Tensor, softmax_cross_entropy

logger = logging.getLogger(__name__)

__all__ = ["EvalReport", "TrainResult", "antenna_pool", "train", "evaluate", "export_curves"]


@dataclass
class EvalReport:
    """Accuracy summary of one model on one labeled test set."""

    overall: float
    accuracy_by_snr: dict[float, float]
    accuracy_by_nr: dict[int, float]
    confusion: np.ndarray
    n_antennas: int
    n_examples: int

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "accuracy_by_snr": {str(k): v for k, v in self.accuracy_by_snr.items()},
            "accuracy_by_nr": {str(k): v for k, v in self.accuracy_by_nr.items()},
            "confusion": self.confusion.tolist(),
            "n_antennas": self.n_antennas,
            "n_examples": self.n_examples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            overall=float(d["overall"]),
            accuracy_by_snr={float(k): float(v) for k, v in d["accuracy_by_snr"].items()},
            accuracy_by_nr={int(k): float(v) for k, v in d["accuracy_by_nr"].items()},
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            n_antennas=int(d["n_antennas"]),
            n_examples=int(d["n_examples"]),
        )


@dataclass
class TrainResult:
    model: object
    log: list[dict] = field(default_factory=list)
    best_val_accuracy: float = 0.0
    final_train_loss: float = math.inf


def antenna_pool(dataset: SignalDataset) -> SignalDataset:
    """Re-slice a multi-antenna dataset into single-antenna examples.

    Every antenna of every example becomes its own example with the same
    label; the per-antenna signal distribution is identical, so this is
    the natural training set for the per-antenna ensemble.
    """
    n, n_r, _, frame_len = dataset.tensors.shape
    tensors = dataset.tensors.reshape(n * n_r, 1, 2, frame_len)
    return SignalDataset(
        tensors,
        np.repeat(dataset.labels, n_r),
        np.repeat(dataset.snrs_db, n_r),
        np.repeat(dataset.seeds, n_r),
        dataset.n_classes,
        dataset.snr_grid_db,
        dataset.master_seed,
    )


def _epoch_indices(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _rotate_phases(batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotate each antenna slice by an independent random phase.

    The fading coefficient's phase is uniform and the noise circularly
    symmetric, so the rotated batch is an exact sample from the same
    distribution; at small dataset sizes this is what separates learning
    phase-invariant structure from memorizing realizations.
    """
    n, n_r = batch.shape[0], batch.shape[1]
    theta = rng.uniform(0.0, 2.0 * np.pi, (n, n_r)).astype(batch.dtype)
    cos = np.cos(theta)[..., None]
    sin = np.sin(theta)[..., None]
    i, q = batch[:, :, 0], batch[:, :, 1]
    out = np.empty_like(batch)
    out[:, :, 0] = cos * i - sin * q
    out[:, :, 1] = sin * i + cos * q
    return out


def _accuracy(model, dataset: SignalDataset, batch_size: int = 256) -> float:
    probs = model.predict_proba(dataset.tensors, batch_size=batch_size)
    return float(np.mean(np.argmax(probs, axis=1) == dataset.labels))


def train(settings: TrainSettings, dataset: SignalDataset) -> TrainResult:
    """Train the configured architecture on ``dataset``.

    With ``val_fraction > 0`` a stratified slice of the training data is
    held out for early stopping (patience epochs without improvement) and
    the best-validation state is restored at the end.  With
    ``target_loss`` set, training also stops once the epoch's mean loss
    drops below it.  Deterministic given the seed.
    """
    rng = np.random.default_rng(settings.seed)

    model = build_model(
        settings.arch,
        n_classes=dataset.n_classes,
        n_antennas=dataset.n_antennas,
        frame_len=dataset.frame_len,
        width=settings.width_multiplier,
        seed=settings.seed,
    )
    # The ensemble trains its base network on pooled single-antenna slices.
    train_model: object = model.base if isinstance(model, CoAMC) else model
    train_ds = antenna_pool(dataset) if isinstance(model, CoAMC) else dataset

    val_ds = None
    if settings.val_fraction > 0.0:
        split_rng = np.random.default_rng(settings.seed + 1)
        train_ds, val_ds = split(train_ds, 1.0 - settings.val_fraction, split_rng)

    params = list(train_model.named_parameters())
    result = TrainResult(model=model)
    best_state = None
    best_val = -math.inf
    stale = 0
    learning_rate = settings.learning_rate

    for epoch in range(settings.max_epochs):
        losses = []
        for batch_idx in _epoch_indices(len(train_ds), settings.batch_size, rng):
            xb = train_ds.tensors[batch_idx]
            if settings.augment_phase:
                xb = _rotate_phases(xb, rng)
            x = Tensor(xb)
            y = train_ds.labels[batch_idx]
            logits = train_model.forward(x, "train")
            loss = softmax_cross_entropy(logits, y)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise RuntimeError(
                    f"training diverged: loss={loss_value} at epoch {epoch}"
                )
            loss.backward()
            adam_step(params, learning_rate)
            losses.append(loss_value * len(batch_idx))

        train_loss = sum(losses) / len(train_ds)
        entry = {"epoch": epoch, "train_loss": train_loss, "lr": learning_rate}

        if val_ds is not None:
            val_acc = _accuracy(train_model, val_ds)
            entry["val_accuracy"] = val_acc
            if val_acc > best_val:
                best_val = val_acc
                best_state = snapshot_state(train_model)
                stale = 0
            else:
                stale += 1
                if settings.lr_plateau_decay < 1.0 and stale % 2 == 0:
                    learning_rate *= settings.lr_plateau_decay
        result.log.append(entry)
        logger.info(
            "epoch %d: train_loss=%.4f%s",
            epoch,
            train_loss,
            f" val_acc={entry['val_accuracy']:.4f}" if val_ds is not None else "",
        )

        result.final_train_loss = train_loss
        if settings.target_loss is not None and train_loss < settings.target_loss:
            break
        if val_ds is not None and stale > settings.patience:
            break

    if best_state is not None:
        assign_state(train_model, best_state)
        result.best_val_accuracy = best_val
    return result


def evaluate(model, dataset: SignalDataset, batch_size: int = 256) -> EvalReport:
    """Eval-mode accuracy overall, per SNR, and the confusion matrix."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = model.predict_proba(dataset.tensors, batch_size=batch_size)
    predictions = np.argmax(probs, axis=1)
    correct = predictions == dataset.labels

    k = dataset.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, predictions), 1)

    by_snr = {}
    for snr in sorted(set(dataset.snrs_db.tolist())):
        mask = dataset.snrs_db == snr
        by_snr[float(snr)] = float(correct[mask].mean())

    overall = float(correct.mean())
    n_antennas = getattr(model, "n_antennas", dataset.n_antennas)
    return EvalReport(
        overall=overall,
        accuracy_by_snr=by_snr,
        accuracy_by_nr={int(n_antennas): overall},
        confusion=confusion,
        n_antennas=int(n_antennas),
        n_examples=len(dataset),
    )


def export_curves(reports: dict[tuple[str, int], EvalReport], path: str) -> None:
    """CSV with one row per (arch, n_antennas, snr_db), sorted, 6 decimals."""
    if not reports:
        raise ValueError("export_curves needs at least one report")
    rows = []
    for (arch, n_r), report in reports.items():
        for snr, acc in report.accuracy_by_snr.items():
            rows.append((arch, int(n_r), float(snr), acc))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["arch", "n_antennas", "snr_db", "accuracy"])
        for arch, n_r, snr, acc in rows:
            writer.writerow([arch, n_r, f"{snr:g}", f"{acc:.6f}"])
