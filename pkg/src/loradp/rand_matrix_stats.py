"""Chi-squared / variance-gamma machinery and distance-to-Gaussian experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from . import kernels
from .errors import InvalidArgumentError
from .noise_analysis import chunk_trials, sample_row_noise
from .parallel import map_ordered
from .tensor_core import RngStream


def chi_squared_raw_moment(k: int, order: int) -> float:
    """``E[X^order]`` for ``X ~ chi2(k)``: the product of ``k + 2i`` for ``i < order``."""
    if k < 1 or order < 1:
        raise InvalidArgumentError(f"k and order must be >= 1, got k={k}, order={order}")
    return float(np.prod([k + 2 * i for i in range(order)], dtype=np.float64))


def _chi2_chunk(task):
    k, count, stream = task
    z = stream.generator().standard_normal((count, k))
    return np.einsum("ij,ij->i", z, z)


def sample_chi_squared(rng: RngStream, k: int, n: int) -> np.ndarray:
    """Each sample is a sum of ``k`` squared standard normals."""
    if k < 1 or n < 1:
        raise InvalidArgumentError(f"k and n must be >= 1, got k={k}, n={n}")
    tasks = [(k, count, rng.substream(j)) for j, count in chunk_trials(n, k)]
    return np.concatenate([_chi2_chunk(t) for t in tasks])


def sample_variance_gamma_sym(rng: RngStream, k: int, n: int) -> np.ndarray:
    """``nu1 - nu2`` with independent ``nu_i ~ chi2(k)``."""
    return sample_chi_squared(rng.substream(1), k, n) - sample_chi_squared(rng.substream(2), k, n)


def sample_skewness(x) -> float:
    return float(stats.skew(np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class CrossProductStats:
    trials: int
    mean: float
    variance: float
    ks_to_variance_gamma: float  # two-sample KS against (nu1 - nu2) / 2


def cross_product_stats(rng: RngStream, trials: int, ks_samples: int = 100_000) -> CrossProductStats:
    """Moments of ``a * b`` for independent standard normals.

    The cross-check draws ``(nu1 - nu2) / 2`` with k = 1 on a separate
    sub-stream and compares the two laws by two-sample KS.
    """
    if trials < 1000:
        raise InvalidArgumentError(f"need at least 1000 trials, got {trials}")
    z = rng.substream(0).generator().standard_normal((trials, 2))
    prod = z[:, 0] * z[:, 1]
    n_ks = min(ks_samples, trials)
    vg = sample_variance_gamma_sym(rng.substream(3), 1, n_ks) / 2.0
    ks = kernels.ks_two_sample(np.sort(prod[:n_ks]), np.sort(vg))
    return CrossProductStats(trials=trials, mean=float(prod.mean()),
                             variance=float(prod.var(ddof=1)), ks_to_variance_gamma=float(ks))


@dataclass(frozen=True)
class GramStats:
    m: int
    r: int
    trials: int
    diag_mean: float
    diag_var: float
    offdiag_mean: float
    offdiag_var: float


def _gram_chunk(task):
    r, count, stream = task
    draws = stream.generator().standard_normal((count, r, 2)) * np.sqrt(1.0 / r)
    return kernels.gram_pair(draws)


def gram_element_stats(rng: RngStream, m: int, r: int, trials: int) -> GramStats:
    """Moments of entries (0, 0) and (0, 1) of ``A^T A - I``, A with N(0, 1/r) entries.

    Both entries depend only on the first two columns of ``A``, so only those
    columns are drawn; the law does not depend on ``m``.
    """
    if m < 2:
        raise InvalidArgumentError(f"m must be >= 2, got {m}")
    if r < 1 or trials < 2:
        raise InvalidArgumentError(f"need r >= 1 and trials >= 2, got r={r}, trials={trials}")
    parts = [_gram_chunk((r, count, rng.substream(j))) for j, count in chunk_trials(trials, 2 * r)]
    diag = np.concatenate([p[0] for p in parts])
    off = np.concatenate([p[1] for p in parts])
    return GramStats(m=m, r=r, trials=trials,
                     diag_mean=float(diag.mean()), diag_var=float(diag.var(ddof=1)),
                     offdiag_mean=float(off.mean()), offdiag_var=float(off.var(ddof=1)))


def lyapounov_l3(q, r: int) -> float:
    """``8 / (pi sqrt(r)) * (||q||_3 / ||q||_2)^3``."""
    q = np.asarray(q, dtype=np.float64)
    if r < 1:
        raise InvalidArgumentError(f"r must be >= 1, got {r}")
    if not np.any(q):
        raise InvalidArgumentError("q must be non-zero")
    ratio = np.sum(np.abs(q) ** 3) ** (1 / 3) / np.sqrt(q @ q)
    return float(8.0 / (np.pi * np.sqrt(r)) * ratio ** 3)


def dkw_bound(n: int, confidence: float = 0.99) -> float:
    """Dvoretzky-Kiefer-Wolfowitz band half-width for ``n`` samples."""
    return float(np.sqrt(np.log(2.0 / (1.0 - confidence)) / (2.0 * n)))


def gaussian_distances(samples, sigma: float, bins: int = 64) -> tuple[float, float]:
    """KS statistic and equal-probability binned TV against N(0, sigma^2)."""
    if bins < 2:
        raise InvalidArgumentError(f"bins must be >= 2, got {bins}")
    x = np.sort(np.asarray(samples, dtype=np.float64))
    ks = float(kernels.ks_one_sample(special.ndtr(x / sigma)))
    inner = sigma * special.ndtri(np.arange(1, bins) / bins)
    freq = kernels.bin_counts(x, inner) / x.shape[0]
    tv = 0.5 * float(np.sum(np.abs(freq - 1.0 / bins)))
    return ks, tv


@dataclass(frozen=True)
class DistanceReport:
    m: int
    r: int
    sample_count: int
    ks_statistic: float
    tv_binned: float
    bin_count: int
    target_sigma: float
    l3_closed_form: float
    reference_scale: float  # 1 / sqrt(m r)
    q_compliant: bool  # all |q_i| bounded away from zero


def distance_to_gaussian(q, r: int, trials: int, bins: int, rng: RngStream,
                         parallelism: int = 1) -> DistanceReport:
    """Distance between element 0 of ``q (A^T A - I)`` and N(0, ||q||^2 / r)."""
    q = np.asarray(q, dtype=np.float64)
    if trials < 1000:
        raise InvalidArgumentError(f"need at least 1000 trials, got {trials}")
    if bins < 16:
        raise InvalidArgumentError(f"need at least 16 bins, got {bins}")
    sigma = float(np.sqrt(q @ q / r))
    u = sample_row_noise(q, r, trials, rng, index=0, parallelism=parallelism)
    ks, tv = gaussian_distances(u, sigma, bins)
    m = q.shape[0]
    return DistanceReport(m=m, r=r, sample_count=trials, ks_statistic=ks, tv_binned=tv,
                          bin_count=bins, target_sigma=sigma, l3_closed_form=lyapounov_l3(q, r),
                          reference_scale=float(1.0 / np.sqrt(m * r)),
                          q_compliant=bool(np.min(np.abs(q)) > 0))


@dataclass(frozen=True)
class ScalingPoint:
    m: int
    r: int
    seed: int
    ks: float
    tv: float
    l3_closed_form: float


@dataclass(frozen=True)
class ScalingFit:
    grid: list[tuple[int, int, float]]  # (m, r, seed-averaged distance)
    slope: float
    intercept: float
    r_squared: float
    metric: str
    trials: int
    seeds: int
    points: list[ScalingPoint] = field(default_factory=list)
    # separate exponents from log d = c + a log m + b log r
    exponent_m: float = float("nan")
    exponent_r: float = float("nan")
    slope_stderr: float = float("nan")


def _scaling_task(task):
    m, r, seed, trials, bins, stream = task
    rep = distance_to_gaussian(np.ones(m), r, trials, bins, stream)
    return ScalingPoint(m=m, r=r, seed=seed, ks=rep.ks_statistic, tv=rep.tv_binned,
                        l3_closed_form=rep.l3_closed_form)


def fit_power_law(x, y) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``: slope, intercept, r^2."""
    res = stats.linregress(np.log(np.asarray(x, dtype=np.float64)), np.log(np.asarray(y, dtype=np.float64)))
    return float(res.slope), float(res.intercept), float(res.rvalue ** 2)


def tv_scaling_experiment(m_grid, r_grid, trials: int, seeds: int, rng: RngStream,
                          metric: str = "ks", bins: int = 64, parallelism: int = 1) -> ScalingFit:
    """Fit the decay of distance-to-Gaussian against ``m * r`` on a grid (q all-ones).

    Every ``(m, r, seed)`` cell draws from its own sub-stream keyed by those
    three values, so cells are reproducible in isolation.
    """
    m_grid = [int(v) for v in m_grid]
    r_grid = [int(v) for v in r_grid]
    if len(set(m_grid)) < 2 and len(set(r_grid)) < 2:
        raise InvalidArgumentError("grid must contain more than one (m, r) point")
    if metric not in ("ks", "tv"):
        raise InvalidArgumentError(f"metric must be 'ks' or 'tv', got {metric!r}")
    if seeds < 1:
        raise InvalidArgumentError(f"seeds must be >= 1, got {seeds}")
    tasks = [(m, r, s, trials, bins, rng.substream(m).substream(r).substream(s))
             for m in m_grid for r in r_grid for s in range(seeds)]
    points = map_ordered(_scaling_task, tasks, parallelism)
    grid = []
    for m in m_grid:
        for r in r_grid:
            vals = [getattr(p, metric) for p in points if p.m == m and p.r == r]
            grid.append((m, r, float(np.mean(vals))))
    mr = [m * r for m, r, _ in grid]
    dist = [d for _, _, d in grid]
    slope, intercept, r2 = fit_power_law(mr, dist)
    stderr = float(stats.linregress(np.log(mr), np.log(dist)).stderr)
    design = np.column_stack([np.ones(len(grid)), np.log([g[0] for g in grid]), np.log([g[1] for g in grid])])
    coef, *_ = np.linalg.lstsq(design, np.log(dist), rcond=None)
    return ScalingFit(grid=grid, slope=slope, intercept=intercept, r_squared=r2, metric=metric,
                      trials=trials, seeds=seeds, points=list(points),
                      exponent_m=float(coef[1]), exponent_r=float(coef[2]), slope_stderr=stderr)
