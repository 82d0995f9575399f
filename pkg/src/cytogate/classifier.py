"""Multinomial logistic regression over flattened patches.

A deliberately small stand-in producer of predictions for the evaluation
stack: class-balanced batches, cross-entropy loss, plain gradient descent,
deterministic for a given seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .patches import PatchDataset, balanced_sampler


class ClassifierError(Exception):
    pass


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 256
    learning_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.steps <= 0 or self.batch_size <= 0 or self.learning_rate < 0:
            raise ClassifierError("steps/batch_size must be positive, lr >= 0")


@dataclass
class SoftmaxModel:
    weights: np.ndarray          # (K, F) float64
    bias: np.ndarray             # (K,) float64
    classes: list[str]
    loss_trace: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def save(self, path) -> None:
        path = Path(path)
        header = {
            "classes": self.classes,
            "n_features": self.n_features,
            "dtype": "<f4",
        }
        blob = np.concatenate([self.weights.ravel(), self.bias]).astype("<f4")
        with open(path, "wb") as f:
            h = json.dumps(header).encode()
            f.write(len(h).to_bytes(4, "little"))
            f.write(h)
            f.write(blob.tobytes())

    @classmethod
    def load(cls, path) -> "SoftmaxModel":
        with open(path, "rb") as f:
            hlen = int.from_bytes(f.read(4), "little")
            header = json.loads(f.read(hlen).decode())
            blob = np.frombuffer(f.read(), dtype="<f4").astype(np.float64)
        k = len(header["classes"])
        nf = header["n_features"]
        if blob.size != k * nf + k:
            raise ClassifierError("model blob size mismatch")
        return cls(
            weights=blob[: k * nf].reshape(k, nf),
            bias=blob[k * nf :],
            classes=list(header["classes"]),
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_and_grad(weights, bias, x, y, n_classes):
    """Mean cross-entropy plus gradients w.r.t. weights and bias.

    x: (N, F); y: (N,) int class indices.
    """
    logits = x @ weights.T + bias
    p = softmax(logits)
    n = len(y)
    loss = -np.log(np.clip(p[np.arange(n), y], 1e-300, None)).mean()
    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    return loss, delta.T @ x, delta.sum(axis=0)


def train(dataset: PatchDataset, cfg: TrainConfig) -> SoftmaxModel:
    """Gradient descent on balanced batches drawn from the dataset."""
    classes = sorted(dataset.manifest.class_counts())
    if len(classes) < 2:
        raise ClassifierError("training needs at least 2 classes")
    class_index = {c: i for i, c in enumerate(classes)}
    sample = dataset.patch(0)
    n_features = sample.size
    k = len(classes)

    weights = np.zeros((k, n_features))
    bias = np.zeros(k)
    trace: list[float] = []
    draws = balanced_sampler(dataset.manifest, cfg.seed, cfg.steps * cfg.batch_size)
    for step in range(cfg.steps):
        idx = [next(draws) for _ in range(cfg.batch_size)]
        x = np.stack([dataset.patch(i).ravel() for i in idx])
        y = np.array([class_index[dataset.label(i)] for i in idx])
        loss, gw, gb = cross_entropy_and_grad(weights, bias, x, y, k)
        if not np.isfinite(loss):
            raise ClassifierError(f"non-finite loss at step {step}: {loss}")
        weights -= cfg.learning_rate * gw
        bias -= cfg.learning_rate * gb
        trace.append(float(loss))
    return SoftmaxModel(weights, bias, classes, trace)


def predict(model: SoftmaxModel, patches: np.ndarray):
    """(classes, probabilities) for a batch of patches.

    patches: (N, 41, 41, C) or (N, F).
    """
    x = patches.reshape(len(patches), -1)
    if x.shape[1] != model.n_features:
        raise ClassifierError(
            f"feature count {x.shape[1]} does not match model {model.n_features}"
        )
    p = softmax(x @ model.weights.T + model.bias)
    labels = [model.classes[i] for i in p.argmax(axis=1)]
    return labels, p


def predictions_to_csv(path, instance_ids, labels, probs, classes) -> None:
    """Emit the prediction CSV schema consumed by the evaluation CLI."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["instance_id", "class"] + [f"prob_{c}" for c in classes])
        for iid, lab, p in zip(instance_ids, labels, probs):
            w.writerow([int(iid), lab] + [repr(float(v)) for v in p])
