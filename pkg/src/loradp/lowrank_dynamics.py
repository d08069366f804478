"""Low-rank adapter state, its gradients and SGD dynamics.

An adapter layer applies ``(W0 + B A) x``. Only ``A`` (r x m) and ``B``
(n x r) are trained; ``W0`` stays fixed. With ``B`` initialised to zero and
``A`` frozen, ``T`` SGD steps on ``B`` move the effective weight by exactly
``-eta * sum_t G_t A0^T A0``, which :func:`projected_update_reference`
computes without touching the factors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, InvalidArgumentError, ShapeError
from .tensor_core import RngStream, as_matrix, frobenius_norm, frozen, sample_gaussian_matrix


@dataclass(frozen=True)
class AdapterLayer:
    w0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    rank: int
    frozen_a: bool
    eta: float

    @property
    def n(self) -> int:
        return self.w0.shape[0]

    @property
    def m(self) -> int:
        return self.w0.shape[1]


@dataclass(frozen=True)
class GradientRecord:
    step: int
    grad_w: np.ndarray
    grad_a: np.ndarray
    grad_b: np.ndarray


def init_adapter(rng: RngStream, n: int, m: int, r: int, frozen_a: bool = False,
                 eta: float = 1e-2, w0: np.ndarray | None = None) -> AdapterLayer:
    """Fresh adapter with ``B = 0`` and ``A`` entries drawn from N(0, 1/r).

    ``w0`` defaults to zeros; pass the pretrained weight to wrap a real layer.
    """
    if not (isinstance(r, (int, np.integer)) and 1 <= r <= min(n, m)):
        raise InvalidArgumentError(f"rank must satisfy 1 <= r <= min(n, m) = {min(n, m)}, got {r}")
    if not eta > 0:
        raise InvalidArgumentError(f"eta must be positive, got {eta}")
    if w0 is None:
        w0 = np.zeros((n, m))
    w0 = as_matrix(w0, "w0")
    if w0.shape != (n, m):
        raise ShapeError(f"w0 has shape {w0.shape}, expected {(n, m)}")
    a = sample_gaussian_matrix(rng, r, m, np.sqrt(1.0 / r))
    return AdapterLayer(w0=frozen(w0.copy()), a=frozen(a), b=frozen(np.zeros((n, r))),
                        rank=int(r), frozen_a=bool(frozen_a), eta=float(eta))


def _check_grad(layer: AdapterLayer, grad_w) -> np.ndarray:
    grad_w = np.asarray(grad_w, dtype=np.float64)
    if grad_w.shape != layer.w0.shape:
        raise ShapeError(f"gradient has shape {grad_w.shape}, expected {layer.w0.shape}")
    return grad_w


def forward(layer: AdapterLayer, x) -> np.ndarray:
    """``W0 x + B (A x)``; the n x m product ``B A`` is never formed."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != layer.m:
        raise ShapeError(f"input must have shape ({layer.m}, k), got {x.shape}")
    return layer.w0 @ x + layer.b @ (layer.a @ x)


def lora_gradients(layer: AdapterLayer, grad_w, step: int = 0) -> GradientRecord:
    grad_w = _check_grad(layer, grad_w)
    return GradientRecord(step=step, grad_w=grad_w,
                          grad_a=layer.b.T @ grad_w,
                          grad_b=grad_w @ layer.a.T)


def sgd_step(layer: AdapterLayer, grad_w) -> AdapterLayer:
    """One simultaneous SGD step on both factors.

    Both factor gradients are taken at the pre-step values. A frozen ``A`` is
    carried over as the same array object.
    """
    rec = lora_gradients(layer, grad_w)
    b = layer.b - layer.eta * rec.grad_b
    a = layer.a if layer.frozen_a else frozen(layer.a - layer.eta * rec.grad_a)
    return dataclasses.replace(layer, a=a, b=frozen(b))


def effective_weight(layer: AdapterLayer) -> np.ndarray:
    return layer.w0 + layer.b @ layer.a


def projected_update_reference(w0, grads: Sequence[np.ndarray], a0, eta: float) -> np.ndarray:
    """``W0 - eta * (sum_t G_t) A0^T A0``, the full-weight view of frozen-A LoRA."""
    w0 = np.asarray(w0, dtype=np.float64)
    a0 = np.asarray(a0, dtype=np.float64)
    if a0.ndim != 2 or a0.shape[1] != w0.shape[1]:
        raise ShapeError(f"a0 shape {a0.shape} does not match w0 shape {w0.shape}")
    if len(grads) == 0:
        return w0.copy()
    total = np.zeros_like(w0)
    for g in grads:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != w0.shape:
            raise ShapeError(f"gradient has shape {g.shape}, expected {w0.shape}")
        total += g
    return w0 - eta * (total @ (a0.T @ a0))


@dataclass(frozen=True)
class LeastSquaresProblem:
    """Loss ``0.5 * ||W X - Y||_F^2`` on fixed data."""

    x: np.ndarray  # (m, k)
    y: np.ndarray  # (n, k)

    def loss(self, w: np.ndarray) -> float:
        resid = w @ self.x - self.y
        return 0.5 * float(np.sum(resid * resid))

    def grad(self, w: np.ndarray) -> np.ndarray:
        return (w @ self.x - self.y) @ self.x.T


def make_least_squares(rng: RngStream, n: int, m: int, k: int, scale: float = 1.0) -> LeastSquaresProblem:
    """Random problem with inputs scaled so ``||X X^T||_2`` is about ``scale``."""
    gen = rng.generator()
    x = gen.standard_normal((m, k)) * np.sqrt(scale / (np.sqrt(m) + np.sqrt(k)) ** 2)
    y = gen.standard_normal((n, k))
    return LeastSquaresProblem(x=x, y=y)


def run_trajectory(layer: AdapterLayer, grad_fn: Callable[[np.ndarray], np.ndarray],
                   steps: int) -> tuple[AdapterLayer, list[np.ndarray]]:
    """Run ``steps`` SGD steps, returning the final layer and the gradients used."""
    grads = []
    for t in range(steps):
        g = grad_fn(effective_weight(layer))
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at step {t}")
        grads.append(g)
        layer = sgd_step(layer, g)
        if not (np.all(np.isfinite(layer.a)) and np.all(np.isfinite(layer.b))):
            raise DivergenceError(f"non-finite adapter factors after step {t}")
    return layer, grads


def frozen_a_approximation_error(rng: RngStream, n: int, m: int, r: int, eta: float, T: int,
                                 loss_problem: LeastSquaresProblem) -> float:
    """Relative gap between trainable-A and frozen-A LoRA after ``T`` steps.

    Returns ``||W_trainable - W_frozen||_F / ||W_frozen - W0||_F`` with both runs
    starting from the same factors; 0 when the frozen run has not moved.
    """
    if eta < 0:
        raise InvalidArgumentError(f"eta must be non-negative, got {eta}")
    if eta == 0:
        return 0.0
    base = init_adapter(rng, n, m, r, frozen_a=False, eta=eta)
    trainable, _ = run_trajectory(base, loss_problem.grad, T)
    frozen_run, _ = run_trajectory(dataclasses.replace(base, frozen_a=True), loss_problem.grad, T)
    w_train = effective_weight(trainable)
    w_frozen = effective_weight(frozen_run)
    denom = frobenius_norm(w_frozen - base.w0)
    if denom == 0:
        return 0.0
    return frobenius_norm(w_train - w_frozen) / denom
