"""Dense float64 matrices and reproducible random sub-streams.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64. The
helpers here validate shapes and finiteness at the boundaries of the public
operations; nothing wraps the arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair naming an independent Philox stream.

    The stream is a value: every call to :meth:`generator` starts from the
    same counter, so passing the same ``RngStream`` twice reproduces the same
    draws. Use :meth:`substream` to derive disjoint streams for parallel work.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= _MASK64:
                raise InvalidArgumentError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(seq))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, _splitmix64(_splitmix64(int(self.stream_id)) ^ int(index)))


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite float64 2-D array (a copy only if needed)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def frozen(x: np.ndarray) -> np.ndarray:
    """Read-only view; used for values that must never be mutated."""
    view = x.view()
    view.flags.writeable = False
    return view


def sample_gaussian_matrix(rng: RngStream, rows: int, cols: int, std: float) -> np.ndarray:
    """i.i.d. N(0, std^2) entries; consumes exactly ``rows * cols`` normal draws."""
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"dimensions must be positive, got ({rows}, {cols})")
    if not std > 0 or not np.isfinite(std):
        raise InvalidArgumentError(f"std must be positive and finite, got {std}")
    return rng.generator().standard_normal((rows, cols)) * std


def matmul(lhs, rhs) -> np.ndarray:
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if lhs.ndim != 2 or rhs.ndim != 2 or lhs.shape[1] != rhs.shape[0]:
        raise ShapeError(f"cannot multiply {lhs.shape} by {rhs.shape}")
    return lhs @ rhs


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m)))


def row_l2_norms(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def as_generator(rng) -> np.random.Generator:
    """Accept either an ``RngStream`` or an already-running numpy generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidArgumentError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")
