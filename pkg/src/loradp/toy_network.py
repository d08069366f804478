"""Small dense ReLU network with hand-written backprop.

Layer ``l`` holds a weight of shape ``(out, in)`` and acts on row-major
samples as ``h @ W.T + b``. Gradients are returned in the same ``(out, in)``
layout, which is the ``n x m`` convention used by the adapter code.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .tensor_core import RngStream

SPLITS = ("train", "validation", "auxiliary")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (samples, dim)
    labels: np.ndarray  # int class ids, or float targets (samples, outputs) for mse
    split: str
    indices: np.ndarray = field(default=None)  # global sample ids, for disjointness checks

    def __post_init__(self):
        if self.split not in SPLITS and self.split != "pretrain":
            raise InvalidArgumentError(f"unknown split {self.split!r}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError("features and labels disagree on sample count")
        if self.indices is None:
            object.__setattr__(self, "indices", np.arange(self.features.shape[0]))

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.split, self.indices[idx])


@dataclass
class ToyModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    adapter_mask: tuple[bool, ...]
    loss: str = "xent"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.adapter_mask):
            raise InvalidArgumentError("weights, biases and adapter_mask must align")
        if self.loss not in ("xent", "mse"):
            raise InvalidArgumentError(f"loss must be 'xent' or 'mse', got {self.loss!r}")

    @property
    def adapter_layers(self) -> list[int]:
        return [i for i, flag in enumerate(self.adapter_mask) if flag]

    def copy(self) -> "ToyModel":
        return dataclasses.replace(self, weights=[w.copy() for w in self.weights],
                                   biases=[b.copy() for b in self.biases])


def init_toy_model(rng: RngStream, sizes: Sequence[int], adapter_mask: Sequence[bool] | None = None,
                   loss: str = "xent") -> ToyModel:
    """He-initialised network with layer widths ``sizes`` (input first).

    By default every hidden layer (all but the output layer) is an adapter.
    """
    if len(sizes) < 2:
        raise InvalidArgumentError("need at least an input and an output size")
    gen = rng.generator()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(gen.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    if adapter_mask is None:
        adapter_mask = [True] * (len(weights) - 1) + [False]
    return ToyModel(weights, biases, tuple(bool(f) for f in adapter_mask), loss)


def _forward(model: ToyModel, x: np.ndarray):
    inputs = []
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if l < last else z
    return h, inputs


def predict(model: ToyModel, x) -> np.ndarray:
    return _forward(model, np.asarray(x, dtype=np.float64))[0]


def _loss_and_delta(model: ToyModel, out: np.ndarray, y: np.ndarray):
    if model.loss == "xent":
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        rows = np.arange(out.shape[0])
        losses = logz - shifted[rows, y]
        delta = np.exp(shifted - logz[:, None])
        delta[rows, y] -= 1.0
    else:
        resid = out - y
        losses = 0.5 * np.einsum("ij,ij->i", resid, resid)
        delta = resid
    return losses, delta


def per_sample_losses(model: ToyModel, x, y) -> np.ndarray:
    out, _ = _forward(model, np.asarray(x, dtype=np.float64))
    return _loss_and_delta(model, out, np.asarray(y))[0]


def mean_loss(model: ToyModel, data: Dataset) -> float:
    return float(np.mean(per_sample_losses(model, data.features, data.labels)))


def _backward(model: ToyModel, x: np.ndarray, y: np.ndarray):
    """Per-sample output deltas and layer inputs for every layer."""
    out, inputs = _forward(model, x)
    losses, delta = _loss_and_delta(model, out, y)
    deltas = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        deltas[l] = delta
        if l > 0:
            delta = (delta @ model.weights[l]) * (inputs[l] > 0)
    return losses, deltas, inputs


def batch_gradients(model: ToyModel, x, y) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Mean-loss gradients ``(grad_w, grad_b, per_sample_losses)`` over the batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    losses, deltas, inputs = _backward(model, x, np.asarray(y))
    k = x.shape[0]
    grad_w = [d.T @ a / k for d, a in zip(deltas, inputs)]
    grad_b = [d.sum(axis=0) / k for d in deltas]
    return grad_w, grad_b, losses


def per_sample_weight_grads(model: ToyModel, x, y, layers: Sequence[int]) -> list[np.ndarray]:
    """Per-sample weight gradients, one ``(k, out, in)`` array per requested layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    _, deltas, inputs = _backward(model, x, np.asarray(y))
    return [np.einsum("kn,km->knm", deltas[l], inputs[l]) for l in layers]
