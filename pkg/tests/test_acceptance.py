"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Commands run through the CLI entry point at parallelism 1 with their
acceptance-scale parameters; criterion 9 replays every manifest produced here.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from loradp.cli import main
from loradp.noise_analysis import noise_term
from loradp.tensor_core import RngStream, sample_gaussian_matrix

pytestmark = pytest.mark.acceptance

RUNS = {}


class Run:
    def __init__(self, out: Path, seconds: float):
        self.out = out
        self.seconds = seconds

    def json(self, name):
        return json.loads((self.out / name).read_text())


@pytest.fixture(scope="session")
def runner(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")

    def run(key, command, *params):
        if key not in RUNS:
            out = root / key
            argv = [command, "--seed", "0", "--parallelism", "1", "--output-dir", str(out)]
            for p in params:
                argv += ["-p", p]
            start = time.perf_counter()
            code = main(argv)
            seconds = time.perf_counter() - start
            assert code == 0, f"{command} exited with {code}"
            RUNS[key] = Run(out, seconds)
        return RUNS[key]

    return run


def test_criterion_1_exact_equivalence(runner, report):
    run = runner("identity", "verify-identity", "n=128", "m=96", "r=8", "T=50")
    err = run.json("identity.json")["max_rel_error"]
    ok = err <= 1e-10 and run.seconds < 5
    report(1, ok, f"max relative Frobenius error {err:.3e} (<= 1e-10), {run.seconds:.2f}s (< 5s)")
    assert ok


def test_criterion_2_decomposition_identity(report):
    start = time.perf_counter()
    strict = floored = 0.0
    base = RngStream(2024)
    for i in range(100):
        s = base.substream(i)
        g = s.substream(0).generator()
        n, m = (int(v) for v in g.integers(8, 129, 2))
        r = int(g.integers(1, min(n, m) + 1))
        grad = g.standard_normal((n, m))
        a0 = sample_gaussian_matrix(s.substream(1), r, m, np.sqrt(1.0 / r))
        lhs = grad @ (a0.T @ a0)
        rhs = grad + noise_term(grad, a0)
        diff = np.abs(lhs - rhs)
        strict = max(strict, float(np.max(diff / np.abs(lhs))))
        floored = max(floored, float(np.max(diff / np.maximum(np.abs(lhs), np.abs(grad)))))
    seconds = time.perf_counter() - start
    ok = strict <= 1e-11 and seconds < 5
    report(2, ok, f"max elementwise relative error {strict:.3e} (<= 1e-11); "
                  f"relative to max(|G A^T A|, |G|): {floored:.3e}; {seconds:.2f}s (< 5s)")
    assert ok


def test_criterion_3_row_noise_statistics(runner, report):
    run = runner("lemma1", "lemma1", "m=[256, 256, 768]", "r=[4, 16, 16]", "trials=100000", "q=ones")
    results = run.json("lemma1.json")["results"]
    checks = []
    for res in results:
        checks.append(abs(res["z_mean"]) <= 4 and res["rel_var_error"] <= 0.05)
    theory_768 = [res["exact_var"] for res in results if res["m"] == 768][0]
    ok = all(checks) and theory_768 == 48.0625 and run.seconds < 120
    detail = "; ".join(f"(m={res['m']}, r={res['r']}) z={res['z_mean']:+.2f} var {res['empirical_var']:.4f} "
                       f"vs {res['exact_var']:.4f} ({100 * res['rel_var_error']:.2f}%)" for res in results)
    report(3, ok, f"{detail}; {run.seconds:.1f}s (< 120s)")
    assert ok


def test_criterion_4_proof_level_statistics(runner, report):
    gram = runner("gram", "gram-stats", "m=64", "r=16", "trials=1000000", "cross_trials=1000000",
                  "vg_samples=1000000")
    mom = runner("moments", "moments", "k=[1, 2, 4, 8]", "orders=[1, 2, 3]", "samples=1000000")
    g = gram.json("gram_stats.json")

    def rel(name):
        return abs(g[name]["empirical"] - g[name]["theory"]) / g[name]["theory"]

    limits = {"gram_diag_var": 0.03, "gram_offdiag_var": 0.03, "cross_product_var": 0.02,
              "vg_k1_abs_third_moment": 0.03}
    errs = {name: rel(name) for name in limits}
    moment_worst = max(res["rel_error"] for res in mom.json("moments.json")["results"])
    seconds = gram.seconds + mom.seconds
    ok = all(errs[n] <= lim for n, lim in limits.items()) and moment_worst <= 0.03 and seconds < 180
    detail = ", ".join(f"{n} {100 * e:.2f}% (<= {100 * limits[n]:.0f}%)" for n, e in errs.items())
    report(4, ok, f"{detail}, chi2 raw moments worst {100 * moment_worst:.2f}% (<= 3%); {seconds:.1f}s (< 180s)")
    assert ok


def test_criterion_5_scaling_law(runner, report):
    run = runner("tv", "tv-scaling", "m_grid=[64, 128, 256, 512]", "r_grid=[4, 8, 16, 32]", "seeds=5",
                 "trials=20000", "metric=ks")
    res = run.json("tv_scaling.json")
    ref = res["reference"]["inv_sqrt_mr"]
    slope_ok = -0.65 <= res["slope"] <= -0.35
    r2_ok = res["r_squared"] >= 0.8
    ref_ok = abs(ref - 9e-3) / 9e-3 <= 0.01
    ok = slope_ok and r2_ok and ref_ok and run.seconds < 600
    report(5, ok, f"slope {res['slope']:.3f} in [-0.65, -0.35]: {slope_ok}; r^2 {res['r_squared']:.3f} >= 0.8: "
                  f"{r2_ok}; reference 1/sqrt(768*16) = {ref:.4e} within 1% of 9e-3: {ref_ok}; "
                  f"separate exponents m {res['exponent_m']:.3f}, r {res['exponent_r']:.3f}; "
                  f"{run.seconds:.0f}s (< 600s)")
    assert ok


def test_criterion_6_noise_profiles(runner, report):
    run = runner("dp", "dp-compare", "n=64", "m=512", "r=16", "trials=10000", "row_norm_span=10.0",
                 "clip=1.0", "noise=1.0", "batch=16")
    res = run.json("dp_compare.json")
    lora_ok = 0.9 <= res["lora_ratio_min"] and res["lora_ratio_max"] <= 1.1
    dp_ok = res["dpsgd_max_over_min"] <= 1.05 and res["dpsgd_max_rel_dev"] <= 0.02
    ok = lora_ok and dp_ok and run.seconds < 120
    report(6, ok, f"LoRA std/theory per row in [{res['lora_ratio_min']:.4f}, {res['lora_ratio_max']:.4f}] "
                  f"(within [0.9, 1.1]); DPSGD max/min {res['dpsgd_max_over_min']:.4f} (<= 1.05), "
                  f"max deviation from cz/b {100 * res['dpsgd_max_rel_dev']:.2f}% (<= 2%); "
                  f"{run.seconds:.1f}s (< 120s)")
    assert ok


def test_criterion_7_noise_measure(runner, report):
    run = runner("profile", "noise-profile", "adapter_layers=3", "ranks=[2, 4, 8, 16, 32]", "seeds=20")
    res = run.json("noise_profile.json")
    closed_ok = res["max_closed_form_abs_diff"] <= 1e-10
    mono_ok = all(res["noise_non_increasing_in_r"])
    rho = min(res["spearman_grad_norm_vs_noise"])
    ok = closed_ok and mono_ok and rho >= 0.8 and run.seconds < 120
    report(7, ok, f"closed form vs two-path max diff {res['max_closed_form_abs_diff']:.2e} (<= 1e-10); "
                  f"mean N non-increasing in r per layer {res['noise_non_increasing_in_r']}; "
                  f"min Spearman(grad norm, N) over r {rho:.3f} (>= 0.8); {run.seconds:.1f}s (< 120s)")
    assert ok


def test_criterion_8_mia_study(runner, report):
    mia = runner("mia", "mia", 'methods=[full, "lora:2", "lora:8", dpsgd]', "seeds=10",
                 "study={n_per_split: 200, epochs: 40}")
    abl = runner("ablate", "ablate-r", "ranks=[2, 4, 8, 16]", "seeds=10", "kind=lora",
                 "study={n_per_split: 200, epochs: 40}")
    res = mia.json("mia.json")
    per = res["methods"]
    summ = res["summary"]
    auc = {k: v["auc_mean"] for k, v in summ.items()}
    val = {k: v["val_loss_mean"] for k, v in summ.items()}
    dp_strong = all(s["noise_std"] >= 0.5 * s["clip"] - 1e-12 for s in per["dpsgd"])
    a = auc["full"] - auc["dpsgd"] >= 0.05 and dp_strong
    b = auc["full"] >= auc["lora(r=2)"]
    rho = abl.json("ablation.json")["spearman_r_auc"]
    c = rho > 0
    d = val["full"] <= val["lora(r=8)"] <= val["dpsgd"]
    seconds = mia.seconds + abl.seconds
    ok = a and b and c and d and seconds < 900
    detail = (f"(a) AUC full {auc['full']:.4f} - dpsgd {auc['dpsgd']:.4f} = {auc['full'] - auc['dpsgd']:.4f} "
              f">= 0.05 with cz/b >= 0.5 median grad norm: {a}; (b) full >= lora(r=2) {auc['lora(r=2)']:.4f}: {b}; "
              f"(c) Spearman(r, AUC) {rho:.3f} > 0: {c}; (d) val loss full {val['full']:.3f} <= lora(r=8) "
              f"{val['lora(r=8)']:.3f} <= dpsgd {val['dpsgd']:.3f}: {d}; {seconds:.1f}s (< 900s)")
    if not ok:
        detail += "; per-seed: " + json.dumps({k: [(s["seed"], round(s["auc"], 4), round(s["val_loss"], 4))
                                                   for s in v] for k, v in per.items()})
    report(8, ok, detail)
    assert ok


def test_criterion_9_reproducibility(runner, report, tmp_path):
    # make sure every acceptance command has a run to replay, even under -k selection
    baseline = [
        ("identity", "verify-identity", ("n=128", "m=96", "r=8", "T=50")),
        ("lemma1", "lemma1", ("m=[256, 256, 768]", "r=[4, 16, 16]", "trials=100000", "q=ones")),
    ]
    for key, command, params in baseline:
        runner(key, command, *params)
    mismatches, compared = [], 0
    for key, run in sorted(RUNS.items()):
        manifest = run.json("manifest.json")
        replay = tmp_path / key
        assert main(["replay", str(run.out / "manifest.json"), "--output-dir", str(replay)]) == 0
        for name in manifest["outputs"]:
            compared += 1
            if (run.out / name).read_bytes() != (replay / name).read_bytes():
                mismatches.append(f"{key}/{name}")
    ok = not mismatches
    report(9, ok, f"replayed {len(RUNS)} manifests ({', '.join(sorted(RUNS))}); {compared} output files "
                  f"byte-identical" + (f"; mismatched: {mismatches}" if mismatches else ""))
    assert ok
