"""Training loop with per-epoch norm instrumentation.

Each epoch shuffles the training set, takes one optimizer step per
mini-batch (dropout masks resampled on every forward), then evaluates in
inference mode.  The instrumentation follows the layer after the model's
instrumented dropout site:

* ``norm_w``: Frobenius norm of that layer's weights
* ``norm_x_batch_mean``: mean Frobenius norm of that layer's pre-dropout input
  over the fixed, unshuffled mini-batch partition of the training set
* ``norm_x_mask``: norm of the site's replacement parameter (0 for standard)

All three are measured after the epoch's last step, so a run with learning
rate 0 records identical rows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .data import RegressionDataset, TextDataset
from .tensor import RngState, frobenius_norm


class DivergenceError(RuntimeError):
    def __init__(self, message: str, epoch: int, step: int, records=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.records = list(records or [])


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    test_loss: float
    test_accuracy: float
    norm_w: float
    norm_x_batch_mean: float
    ratio_w_over_x: float
    norm_x_mask: float
    site: str = "input"

    def to_dict(self) -> dict:
        return asdict(self)


def dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(dataset, RegressionDataset):
        return dataset.X_train, dataset.y_train, dataset.X_test, dataset.y_test
    if isinstance(dataset, TextDataset):
        return dataset.ids_train, dataset.y_train, dataset.ids_test, dataset.y_test
    raise TypeError(f"unsupported dataset type {type(dataset).__name__}")


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def evaluate(model, inputs: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Inference-mode loss and (for classifiers) accuracy."""
    model.train(False)
    out = model.forward(inputs)
    loss = float(model.loss(out, targets).value)
    if model.task == "classification":
        accuracy = float(np.mean(np.argmax(out.value, axis=1) == targets))
    else:
        accuracy = math.nan
    return loss, accuracy


def _site_input_norm(model, inputs: np.ndarray, batch_size: int) -> float:
    model.train(False)
    model.forward(inputs)
    site_input = model.site_input
    norms = [frobenius_norm(site_input[b]) for b in _batches(len(inputs), batch_size)]
    return float(np.mean(norms))


def epoch_record(model, epoch: int, train: tuple, test: tuple, batch_size: int) -> MetricsRecord:
    train_loss, _ = evaluate(model, *train)
    test_loss, test_acc = evaluate(model, *test)
    norm_w = model.site_weight_norm()
    norm_x = _site_input_norm(model, train[0], batch_size)
    ratio = norm_w / norm_x if norm_x > 0 else math.inf
    return MetricsRecord(epoch, train_loss, test_loss, test_acc, norm_w, norm_x, ratio,
                         model.site_mask_norm(), model.site)


def train_model(model, dataset, optimizer, epochs: int, rng: RngState,
                batch_size: int = 32) -> list[MetricsRecord]:
    """Run ``epochs`` epochs of mini-batch training; one record per epoch."""
    if epochs < 1:
        raise ValueError(f"epochs must be at least 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    X_train, y_train, X_test, y_test = dataset_arrays(dataset)
    records = []
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(X_train))
        for batch in _batches(len(X_train), batch_size, order):
            model.train(True)
            optimizer.zero_grad()
            loss = model.loss(model.forward(X_train[batch]), y_train[batch])
            if not np.isfinite(loss.value):
                raise DivergenceError(f"training loss became {float(loss.value)} at epoch "
                                      f"{epoch}, step {step}", epoch, step, records)
            ag.backward(loss)
            optimizer.step()
            step += 1
        record = epoch_record(model, epoch, (X_train, y_train), (X_test, y_test), batch_size)
        if not np.isfinite(record.train_loss):
            raise DivergenceError(f"training loss became {record.train_loss} after epoch {epoch}",
                                  epoch, step, records)
        records.append(record)
    return records
