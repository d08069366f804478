"""Time the numpy and numba implementation of every kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Numba timings exclude compilation (one warm-up call first).
"""

import argparse
import time

import numpy as np

from loradp.kernels import IMPLEMENTATIONS


def make_inputs(scale):
    rng = np.random.default_rng(0)
    t = max(1, int(200 * scale))
    draws = rng.standard_normal((t, 16, 256)) * 0.25
    q = np.ones(256)
    x = np.sort(rng.standard_normal(int(200_000 * scale)))
    y = np.sort(rng.standard_normal(int(200_000 * scale)))
    members = rng.standard_normal(int(4000 * scale)) + 0.3
    nonmembers = rng.standard_normal(int(4000 * scale))
    flat = rng.standard_normal((64, int(20_000 * scale)))
    grad = rng.standard_normal((64, 256))
    edges = np.sort(rng.standard_normal(63))
    from scipy.special import ndtr
    return {
        "row_noise_element": (draws, q, 0),
        "gram_pair": (np.ascontiguousarray(draws[:, :, :2]),),
        "ks_one_sample": (ndtr(x),),
        "ks_two_sample": (x, y),
        "auc_lower": (members, nonmembers),
        "clip_rows": (flat, 1.0),
        "lora_row_moments": (grad, draws),
        "bin_counts": (x, edges),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0)
    args = parser.parse_args()
    inputs = make_inputs(args.scale)
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (np_fn, nb_fn) in IMPLEMENTATIONS.items():
        call = inputs[name]
        nb_fn(*call)  # compile
        t_np = best_of(np_fn, call, args.repeat)
        t_nb = best_of(nb_fn, call, args.repeat)
        print(f"{name:<20} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>8.2f}")


if __name__ == "__main__":
    main()
