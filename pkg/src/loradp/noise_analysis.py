"""The noise that a frozen random projection adds to a batch gradient.

For a gradient ``G`` and ``A0`` with N(0, 1/r) entries,
``G A0^T A0 = G + G (A0^T A0 - I)``. The second term is the injected noise.
Element ``i`` of ``q (A^T A - I)`` has mean zero and variance
``(q_i^2 + ||q||^2) / r`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .errors import InvalidArgumentError, ShapeError
from .lowrank_dynamics import effective_weight, init_adapter, sgd_step
from .parallel import map_ordered
from .tensor_core import RngStream, frobenius_norm, sample_gaussian_matrix
from .toy_network import Dataset, ToyModel, batch_gradients

# upper bound on doubles held by one chunk of projection draws
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class NoiseStats:
    m: int
    r: int
    index: int
    element_count: int
    trials: int
    empirical_mean: float
    empirical_variance: float
    exact_variance: float
    z_score_of_mean: float

    @property
    def relative_variance_error(self) -> float:
        return abs(self.empirical_variance - self.exact_variance) / self.exact_variance


def noise_term(grad, a0) -> np.ndarray:
    """``G (A0^T A0 - I)``."""
    grad = np.asarray(grad, dtype=np.float64)
    a0 = np.asarray(a0, dtype=np.float64)
    if grad.ndim != 2 or a0.ndim != 2 or grad.shape[1] != a0.shape[1]:
        raise ShapeError(f"gradient {grad.shape} and projection {a0.shape} are not conformable")
    # literal form: far less rounding than (G A0^T) A0 - G on small entries
    return grad @ (a0.T @ a0 - np.eye(a0.shape[1]))


def exact_element_variance(q, r: int, index: int = 0) -> float:
    q = np.asarray(q, dtype=np.float64)
    return float((q[index] ** 2 + q @ q) / r)


def chunk_trials(trials: int, per_trial: int) -> list[tuple[int, int]]:
    """Fixed ``(chunk_index, count)`` split; depends only on the problem size."""
    size = max(1, _CHUNK_ELEMENTS // max(per_trial, 1))
    return [(i, min(size, trials - start)) for i, start in enumerate(range(0, trials, size))]


def _row_noise_chunk(task):
    q, r, index, count, stream = task
    draws = stream.generator().standard_normal((count, r, q.shape[0])) * np.sqrt(1.0 / r)
    return kernels.row_noise_element(draws, q, index)


def sample_row_noise(q, r: int, trials: int, rng: RngStream, index: int = 0,
                     parallelism: int = 1) -> np.ndarray:
    """``trials`` independent draws of element ``index`` of ``q (A^T A - I)``.

    ``A`` is resampled for every trial. Chunk ``j`` always uses
    ``rng.substream(j)`` so the result does not depend on ``parallelism``.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ShapeError(f"q must be a vector, got shape {q.shape}")
    if not 0 <= index < q.shape[0]:
        raise InvalidArgumentError(f"index {index} out of range for length {q.shape[0]}")
    if r < 1:
        raise InvalidArgumentError(f"r must be >= 1, got {r}")
    tasks = [(q, r, index, count, rng.substream(j)) for j, count in chunk_trials(trials, r * q.shape[0])]
    return np.concatenate(map_ordered(_row_noise_chunk, tasks, parallelism))


def row_noise_stats(q, r: int, trials: int, rng: RngStream, index: int = 0,
                    parallelism: int = 1) -> NoiseStats:
    q = np.asarray(q, dtype=np.float64)
    if trials < 2:
        raise InvalidArgumentError(f"need at least 2 trials, got {trials}")
    if not np.any(q):
        raise InvalidArgumentError("q must be non-zero")
    u = sample_row_noise(q, r, trials, rng, index=index, parallelism=parallelism)
    mean = float(np.mean(u))
    var = float(np.var(u, ddof=1))
    return NoiseStats(m=q.shape[0], r=r, index=index, element_count=1, trials=trials,
                      empirical_mean=mean, empirical_variance=var,
                      exact_variance=exact_element_variance(q, r, index),
                      z_score_of_mean=mean / np.sqrt(var / trials))


def variance_ci(sample_variance: float, n: int, level: float = 0.99) -> tuple[float, float]:
    """Chi-squared confidence interval for a population variance (Gaussian model)."""
    dof = n - 1
    lo_q, hi_q = stats.chi2.ppf([(1 + level) / 2, (1 - level) / 2], dof)
    return dof * sample_variance / lo_q, dof * sample_variance / hi_q


def variance_within_ci(st: NoiseStats, level: float = 0.99, slack: float = 0.05) -> bool:
    lo, hi = variance_ci(st.empirical_variance, st.trials, level)
    return lo * (1 - slack) <= st.exact_variance <= hi * (1 + slack)


def _adapter_grads(network: ToyModel, batch: Dataset) -> dict[int, np.ndarray]:
    if len(batch) == 0:
        raise InvalidArgumentError("empty batch")
    grad_w, _, _ = batch_gradients(network, batch.features, batch.labels)
    return {l: grad_w[l] for l in network.adapter_layers}


def noise_measure(network: ToyModel, batch: Dataset, eta: float, r: int, rng: RngStream) -> np.ndarray:
    """Per adapter layer, ``||W1 - (W0 + B1 A1)||_F`` after one step from fresh factors.

    ``W1`` is one plain SGD step on the full weight; the LoRA side wraps the
    same weight in a fresh adapter (A from ``rng.substream(layer)``) and takes
    one factor step with the same gradient.
    """
    grads = _adapter_grads(network, batch)
    if eta == 0:
        return np.zeros(len(grads))
    out = []
    for l, g in grads.items():
        w0 = network.weights[l]
        n, m = w0.shape
        layer = init_adapter(rng.substream(l), n, m, r, frozen_a=False, eta=eta, w0=w0)
        w1 = w0 - eta * g
        out.append(frobenius_norm(w1 - effective_weight(sgd_step(layer, g))))
    return np.array(out)


def noise_measure_closed_form(network: ToyModel, batch: Dataset, eta: float, r: int,
                              rng: RngStream) -> np.ndarray:
    """``eta * ||G (A0^T A0 - I)||_F`` with the same ``A0`` draws as :func:`noise_measure`."""
    grads = _adapter_grads(network, batch)
    out = []
    for l, g in grads.items():
        a0 = sample_gaussian_matrix(rng.substream(l), r, g.shape[1], np.sqrt(1.0 / r))
        out.append(eta * frobenius_norm(noise_term(g, a0)))
    return np.array(out)


def layer_gradient_norms(network: ToyModel, batch: Dataset) -> np.ndarray:
    return np.array([frobenius_norm(g) for g in _adapter_grads(network, batch).values()])
