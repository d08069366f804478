"""Per-sample clipping, the Gaussian mechanism, and noise-profile comparison.

DPSGD adds i.i.d. N(0, (c z / b)^2) noise to every entry of the clipped batch
mean. A frozen LoRA projection instead perturbs row ``i`` of the batch
gradient with noise whose std is ``||G_i|| / sqrt(r)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, ShapeError
from .noise_analysis import chunk_trials
from .tensor_core import RngStream, as_generator, frobenius_norm, row_l2_norms


@dataclass(frozen=True)
class DpConfig:
    clip_threshold: float
    noise_scale: float
    batch_size: int

    def __post_init__(self):
        if not self.clip_threshold > 0:
            raise InvalidArgumentError(f"clip threshold must be positive, got {self.clip_threshold}")
        if self.noise_scale < 0:
            raise InvalidArgumentError(f"noise scale must be non-negative, got {self.noise_scale}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch size must be >= 1, got {self.batch_size}")

    @property
    def noise_std(self) -> float:
        """Per-entry std of the noise added to the clipped batch mean."""
        return self.clip_threshold * self.noise_scale / self.batch_size


def clip_gradient(g, c: float) -> np.ndarray:
    """``min(||g||, c) * g / ||g||`` with the Frobenius norm; zero stays zero."""
    if not c > 0:
        raise InvalidArgumentError(f"clip threshold must be positive, got {c}")
    g = np.asarray(g, dtype=np.float64)
    norm = frobenius_norm(g)
    if norm <= c:
        return g.copy()
    return g * (c / norm)


def gaussian_noise(rng, shape, cfg: DpConfig) -> np.ndarray:
    gen = as_generator(rng)
    if cfg.noise_std == 0:
        return np.zeros(shape)
    return gen.standard_normal(shape) * cfg.noise_std


def _stack(per_sample_grads) -> np.ndarray:
    grads = np.asarray(per_sample_grads, dtype=np.float64)
    if grads.ndim != 3 or grads.shape[0] == 0:
        raise InvalidArgumentError("expected a non-empty sequence of equally shaped matrices")
    return grads


def dpsgd_batch_gradient(per_sample_grads: Sequence[np.ndarray], cfg: DpConfig, rng) -> np.ndarray:
    """``mean_i clip(g_i, c) + N(0, (c z / b)^2)`` entrywise."""
    grads = _stack(per_sample_grads)
    b = grads.shape[0]
    if b != cfg.batch_size:
        raise InvalidArgumentError(f"batch has {b} samples but config says {cfg.batch_size}")
    flat = np.ascontiguousarray(grads.reshape(b, -1))
    clipped = kernels.clip_rows(flat, float(cfg.clip_threshold))
    mean = clipped.mean(axis=0).reshape(grads.shape[1:])
    return mean + gaussian_noise(rng, mean.shape, cfg)


def lora_noisy_batch_gradient(per_sample_grads: Sequence[np.ndarray], a0) -> np.ndarray:
    """Batch mean pushed through the projection ``A0^T A0``."""
    grads = _stack(per_sample_grads)
    a0 = np.asarray(a0, dtype=np.float64)
    if a0.ndim != 2 or a0.shape[1] != grads.shape[2]:
        raise ShapeError(f"projection {a0.shape} does not match gradients {grads.shape[1:]}")
    mean = grads.mean(axis=0)
    return (mean @ a0.T) @ a0


@dataclass(frozen=True)
class NoiseProfile:
    r: int
    trials: int
    grad_row_norm: np.ndarray
    lora_std_emp: np.ndarray
    lora_std_theory: np.ndarray
    dpsgd_std_emp: np.ndarray
    dpsgd_std_theory: np.ndarray

    def rows(self):
        for i in range(self.grad_row_norm.shape[0]):
            yield (i, self.grad_row_norm[i], self.lora_std_emp[i], self.lora_std_theory[i],
                   self.dpsgd_std_emp[i], self.dpsgd_std_theory[i])


def _pooled_std(sums, sumsq, count):
    var = (sumsq - sums * sums / count) / (count - 1)
    return np.sqrt(np.maximum(var, 0.0))


def compare_noise_profiles(grad, r: int, cfg: DpConfig, trials: int, rng: RngStream) -> NoiseProfile:
    """Empirical per-row noise std of LoRA (fresh ``A`` per trial) and of DPSGD.

    Each row's std pools all ``m`` entries over all trials.
    """
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.ndim != 2:
        raise ShapeError(f"gradient must be 2-D, got shape {grad.shape}")
    if trials < 1000:
        raise InvalidArgumentError(f"need at least 1000 trials, got {trials}")
    n, m = grad.shape
    lora_rng = rng.substream(0)
    sums = np.zeros(n)
    sumsq = np.zeros(n)
    for j, count in chunk_trials(trials, r * m + n * m):
        draws = lora_rng.substream(j).generator().standard_normal((count, r, m)) * np.sqrt(1.0 / r)
        s, ss = kernels.lora_row_moments(grad, draws)
        sums += s
        sumsq += ss
    lora_std = _pooled_std(sums, sumsq, trials * m)

    dp_rng = rng.substream(1)
    sums = np.zeros(n)
    sumsq = np.zeros(n)
    for j, count in chunk_trials(trials, n * m):
        noise = gaussian_noise(dp_rng.substream(j), (count, n, m), cfg)
        sums += noise.sum(axis=(0, 2))
        sumsq += np.einsum("tnm,tnm->n", noise, noise)
    dp_std = _pooled_std(sums, sumsq, trials * m)

    row_norm = row_l2_norms(grad)
    return NoiseProfile(r=r, trials=trials, grad_row_norm=row_norm,
                        lora_std_emp=lora_std, lora_std_theory=row_norm / np.sqrt(r),
                        dpsgd_std_emp=dp_std, dpsgd_std_theory=np.full(n, cfg.noise_std))
