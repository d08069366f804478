"""Command implementations behind the CLI.

Every command takes a validated :class:`ExperimentConfig`, writes its CSV and
JSON outputs into ``config.output_dir`` and returns a JSON-able summary.
:func:`run` adds the manifest. Numeric outputs depend only on the config, so
rerunning a manifest reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from ._accel import BACKEND
from .config import ExperimentConfig, emit_config
from .dp_optimizer import DpConfig, compare_noise_profiles
from .errors import ConfigError
from .lowrank_dynamics import (effective_weight, init_adapter, make_least_squares,
                               projected_update_reference, run_trajectory)
from .mia_harness import MiaConfig, Method, ablation_rank, run_mia_study, summarize
from .noise_analysis import (layer_gradient_norms, noise_measure, noise_measure_closed_form,
                             row_noise_stats)
from .rand_matrix_stats import (chi_squared_raw_moment, cross_product_stats, gram_element_stats,
                                sample_chi_squared, sample_variance_gamma_sym, tv_scaling_experiment)
from .tensor_core import RngStream, frobenius_norm, sample_gaussian_matrix
from .toy_network import init_toy_model

MANIFEST_VERSION = 1


def write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path: Path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------


def verify_identity(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    n, m, r, T, eta = p["n"], p["m"], p["r"], p["T"], p["eta"]
    rng = RngStream(cfg.seed)
    problem = make_least_squares(rng.substream(1), n, m, p["samples"])
    w0 = sample_gaussian_matrix(rng.substream(2), n, m, 1.0 / np.sqrt(m))
    layer = init_adapter(rng.substream(3), n, m, r, frozen_a=True, eta=eta, w0=w0)
    a0 = layer.a
    w0_before = w0.copy()
    rows, grads = [], []
    worst = worst_update = 0.0
    for t in range(1, T + 1):
        layer, step_grads = run_trajectory(layer, problem.grad, 1)
        grads.extend(step_grads)
        eff = effective_weight(layer)
        ref = projected_update_reference(w0, grads, a0, eta)
        err = frobenius_norm(eff - ref) / frobenius_norm(ref)
        upd = frobenius_norm(ref - w0)
        err_update = frobenius_norm(eff - ref) / upd if upd > 0 else 0.0
        worst = max(worst, err)
        worst_update = max(worst_update, err_update)
        rows.append((t, err, err_update, problem.loss(eff)))
    delta = effective_weight(layer) - w0
    sv = np.linalg.svd(delta, compute_uv=False)
    numerical_rank = int(np.sum(sv > 1e-9 * sv[0])) if sv[0] > 0 else 0
    write_csv(out / "identity_steps.csv", ["step", "rel_error", "rel_update_error", "loss"], rows)
    summary = {
        "n": n, "m": m, "r": r, "T": T, "eta": eta,
        "max_rel_error": worst, "max_rel_update_error": worst_update,
        "tolerance": p["tolerance"], "passes": worst <= p["tolerance"],
        "w0_unchanged": bool(np.array_equal(layer.w0, w0_before)),
        "a_unchanged": bool(np.array_equal(layer.a, a0)),
        "delta_numerical_rank": numerical_rank,
    }
    write_json(out / "identity.json", summary)
    return summary


def _make_q(spec: str, m: int, rng: RngStream) -> np.ndarray:
    if spec == "ones":
        return np.ones(m)
    if spec == "ramp":
        return np.linspace(1.0, 2.0, m)
    if spec == "gaussian":
        return rng.generator().standard_normal(m)
    raise ConfigError(f"q must be ones, ramp or gaussian; got {spec!r}", field="params.q")


def lemma1(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    ms = p["m"] if isinstance(p["m"], list) else [p["m"]]
    rs = p["r"] if isinstance(p["r"], list) else [p["r"]]
    if len(ms) != len(rs):
        if len(ms) == 1:
            ms = ms * len(rs)
        elif len(rs) == 1:
            rs = rs * len(ms)
        else:
            raise ConfigError("params.m and params.r lists must have equal length", field="params.r")
    base = RngStream(cfg.seed)
    rows, results = [], []
    for m, r in zip(ms, rs):
        stream = base.substream(m).substream(r)
        q = _make_q(p["q"], m, stream.substream(0))
        st = row_noise_stats(q, r, p["trials"], stream.substream(1), index=p["index"],
                             parallelism=cfg.parallelism)
        rows.append((m, r, st.trials, p["q"], st.empirical_mean, st.empirical_variance,
                     st.exact_variance, st.z_score_of_mean))
        results.append({"m": m, "r": r, "empirical_mean": st.empirical_mean,
                        "empirical_var": st.empirical_variance, "exact_var": st.exact_variance,
                        "z_mean": st.z_score_of_mean, "rel_var_error": st.relative_variance_error,
                        "passes": abs(st.z_score_of_mean) <= 4 and st.relative_variance_error <= 0.05})
    write_csv(out / "lemma1.csv", ["m", "r", "trials", "q_spec", "empirical_mean", "empirical_var",
                                   "exact_var", "z_mean"], rows)
    summary = {"trials": p["trials"], "q": p["q"], "results": results}
    write_json(out / "lemma1.json", summary)
    return summary


def gram_stats(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    rng = RngStream(cfg.seed)
    g = gram_element_stats(rng.substream(1), p["m"], p["r"], p["trials"])
    cp = cross_product_stats(rng.substream(2), p["cross_trials"])
    v = sample_variance_gamma_sym(rng.substream(3), 1, p["vg_samples"])
    abs3 = float(np.mean(np.abs(v) ** 3))
    r = p["r"]
    rows = [
        ("gram_diag_mean", g.diag_mean, 0.0),
        ("gram_diag_var", g.diag_var, 2.0 / r),
        ("gram_offdiag_mean", g.offdiag_mean, 0.0),
        ("gram_offdiag_var", g.offdiag_var, 1.0 / r),
        ("cross_product_mean", cp.mean, 0.0),
        ("cross_product_var", cp.variance, 1.0),
        ("vg_k1_abs_third_moment", abs3, 64.0 / np.pi),
        ("vg_k1_mean", float(v.mean()), 0.0),
        ("vg_k1_var", float(v.var(ddof=1)), 4.0),
    ]
    write_csv(out / "gram_stats.csv", ["quantity", "empirical", "theory", "rel_error"],
              [(q, e, t, abs(e - t) / t if t else float("nan")) for q, e, t in rows])
    summary = {q: {"empirical": e, "theory": t} for q, e, t in rows}
    summary["cross_product_ks_to_variance_gamma"] = cp.ks_to_variance_gamma
    summary["params"] = dict(p)
    write_json(out / "gram_stats.json", summary)
    return summary


def moments(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    rng = RngStream(cfg.seed)
    rows, results = [], []
    for k in p["k"]:
        x = sample_chi_squared(rng.substream(k), k, p["samples"])
        for order in p["orders"]:
            exact = chi_squared_raw_moment(k, order)
            emp = float(np.mean(x ** order))
            rel = abs(emp - exact) / exact
            rows.append((k, order, emp, exact, rel))
            results.append({"k": k, "order": order, "empirical": emp, "exact": exact, "rel_error": rel})
    write_csv(out / "moments.csv", ["k", "order", "empirical", "exact", "rel_error"], rows)
    summary = {"samples": p["samples"], "results": results}
    write_json(out / "moments.json", summary)
    return summary


def tv_scaling(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    fit = tv_scaling_experiment(p["m_grid"], p["r_grid"], p["trials"], p["seeds"], RngStream(cfg.seed),
                                metric=p["metric"], bins=p["bins"], parallelism=cfg.parallelism)
    write_csv(out / "tv_scaling.csv", ["m", "r", "trials", "seed", "ks", "tv", "l3_closed_form"],
              [(pt.m, pt.r, fit.trials, pt.seed, pt.ks, pt.tv, pt.l3_closed_form) for pt in fit.points])
    dof = len(fit.grid) - 2
    half = float(stats.t.ppf(0.975, dof) * fit.slope_stderr) if dof > 0 else float("nan")
    ref_m, ref_r = p["reference_m"], p["reference_r"]
    summary = {
        "metric": fit.metric, "trials": fit.trials, "seeds": fit.seeds,
        "slope": fit.slope, "slope_ci95": [fit.slope - half, fit.slope + half],
        "intercept": fit.intercept, "r_squared": fit.r_squared,
        "exponent_m": fit.exponent_m, "exponent_r": fit.exponent_r,
        "grid": [{"m": m, "r": r, "distance": d, "inv_sqrt_mr": 1.0 / np.sqrt(m * r)} for m, r, d in fit.grid],
        "reference": {"m": ref_m, "r": ref_r, "inv_sqrt_mr": 1.0 / np.sqrt(ref_m * ref_r)},
    }
    write_json(out / "tv_scaling.json", summary)
    return summary


def synthetic_gradient(rng: RngStream, n: int, m: int, span: float) -> np.ndarray:
    """Gaussian row directions rescaled to norms spaced geometrically over ``[1, span]``."""
    g = rng.generator().standard_normal((n, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * np.geomspace(1.0, span, n)[:, None]


def dp_compare(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    rng = RngStream(cfg.seed)
    grad = synthetic_gradient(rng.substream(1), p["n"], p["m"], p["row_norm_span"])
    dp = DpConfig(p["clip"], p["noise"], p["batch"])
    prof = compare_noise_profiles(grad, p["r"], dp, p["trials"], rng.substream(2))
    write_csv(out / "dp_compare.csv", ["row_index", "grad_row_norm", "lora_std_emp", "lora_std_theory",
                                       "dpsgd_std_emp", "dpsgd_std_theory"], prof.rows())
    ratio = prof.lora_std_emp / prof.lora_std_theory
    summary = {
        "n": p["n"], "m": p["m"], "r": p["r"], "trials": p["trials"], "noise_std": dp.noise_std,
        "lora_ratio_min": float(ratio.min()), "lora_ratio_max": float(ratio.max()),
        "dpsgd_max_over_min": float(prof.dpsgd_std_emp.max() / prof.dpsgd_std_emp.min()),
        "dpsgd_max_rel_dev": float(np.max(np.abs(prof.dpsgd_std_emp / dp.noise_std - 1.0))),
    }
    write_json(out / "dp_compare.json", summary)
    return summary


def noise_profile_study(seed: int, width: int, adapter_layers: int, classes: int, batch: int,
                        eta: float, ranks, seeds: int) -> dict:
    """Per-layer gradient norms and one-step noise measures on random toy networks."""
    from .mia_harness import synth_dataset

    sizes = [width] * (adapter_layers + 1) + [classes]
    mask = [True] * adapter_layers + [False]
    base = RngStream(seed)
    grad_norms = np.zeros((seeds, adapter_layers))
    noise = np.zeros((seeds, len(ranks), adapter_layers))
    closed = np.zeros_like(noise)
    for s in range(seeds):
        stream = base.substream(s)
        net = init_toy_model(stream.substream(0), sizes, mask)
        data = synth_dataset(stream.substream(1), batch, width, classes)[0]
        grad_norms[s] = layer_gradient_norms(net, data)
        for j, r in enumerate(ranks):
            a_stream = stream.substream(100 + r)
            noise[s, j] = noise_measure(net, data, eta, r, a_stream)
            closed[s, j] = noise_measure_closed_form(net, data, eta, r, a_stream)
    return {"grad_norms": grad_norms, "noise": noise, "closed_form": closed}


def noise_profile(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    res = noise_profile_study(cfg.seed, p["width"], p["adapter_layers"], p["classes"], p["batch"],
                              p["eta"], p["ranks"], p["seeds"])
    g, nm, cf = res["grad_norms"], res["noise"], res["closed_form"]
    rows = []
    for s in range(g.shape[0]):
        for j, r in enumerate(p["ranks"]):
            for l in range(g.shape[1]):
                rows.append((s, l, r, g[s, l], nm[s, j, l], cf[s, j, l]))
    write_csv(out / "noise_profile.csv", ["seed", "layer", "r", "grad_norm", "noise", "noise_closed_form"], rows)
    mean_g = g.mean(axis=0)
    mean_n = nm.mean(axis=0)  # (ranks, layers)
    spearman = [float(stats.spearmanr(mean_g, mean_n[j])[0]) for j in range(len(p["ranks"]))]
    summary = {
        "ranks": p["ranks"], "mean_grad_norm": mean_g, "mean_noise": mean_n,
        "noise_non_increasing_in_r": [bool(np.all(np.diff(mean_n[:, l]) <= 0)) for l in range(g.shape[1])],
        "spearman_grad_norm_vs_noise": spearman,
        "max_closed_form_abs_diff": float(np.max(np.abs(nm - cf))),
        "max_closed_form_rel_diff": float(np.max(np.abs(nm - cf) / np.maximum(np.abs(cf), 1e-300))),
    }
    write_json(out / "noise_profile.json", summary)
    return summary


def study_config(params: dict) -> MiaConfig:
    raw = dict(params.get("study") or {})
    names = {f.name for f in dataclasses.fields(MiaConfig)}
    unknown = [k for k in raw if k not in names]
    if unknown:
        raise ConfigError(f"unknown study key(s): {', '.join(unknown)}", field=f"params.study.{unknown[0]}")
    if "lr" in raw:
        lr = dict(MiaConfig().lr)
        lr.update(raw["lr"])
        raw["lr"] = lr
    if "alphas" in raw:
        raw["alphas"] = tuple(raw["alphas"])
    return MiaConfig(**raw)


def _report_rows(reports):
    out = {}
    for rep in reports:
        out.setdefault(rep.method, []).append({
            "seed": rep.seed, "auc": rep.auc,
            "tpr10": rep.tpr_at_fpr.get(0.1), "tpr1": rep.tpr_at_fpr.get(0.01),
            "gamma10": rep.gamma.get(0.1), "gamma1": rep.gamma.get(0.01),
            "val_loss": rep.validation_loss, "train_loss": rep.train_loss, **rep.extra,
        })
    return out


def mia(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    study = study_config(p)
    try:
        methods = [Method.parse(s) for s in p["methods"]]
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), field="params.methods") from exc
    reports = run_mia_study(study, methods, list(range(p["seeds"])), RngStream(cfg.seed), cfg.parallelism)
    summary = {"study": dataclasses.asdict(study), "methods": _report_rows(reports),
               "summary": summarize(reports)}
    write_json(out / "mia.json", summary)
    return summary


def ablate_r(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params
    study = study_config(p)
    res = ablation_rank(study, p["ranks"], list(range(p["seeds"])), RngStream(cfg.seed), kind=p["kind"],
                        parallelism=cfg.parallelism)
    write_csv(out / "ablation.csv", ["r", "mean_auc", "mean_tpr10", "mean_val_loss"],
              [(row.r, row.mean_auc, row.mean_tpr10, row.mean_val_loss) for row in res.rows])
    summary = {"rows": [dataclasses.asdict(row) for row in res.rows],
               "spearman_r_auc": res.spearman_auc, "spearman_r_val_loss": res.spearman_val_loss,
               "methods": _report_rows(res.reports)}
    write_json(out / "ablation.json", summary)
    return summary


COMMAND_FUNCS = {
    "verify-identity": verify_identity,
    "lemma1": lemma1,
    "gram-stats": gram_stats,
    "moments": moments,
    "tv-scaling": tv_scaling,
    "dp-compare": dp_compare,
    "noise-profile": noise_profile,
    "mia": mia,
    "ablate-r": ablate_r,
}


def run(config: ExperimentConfig) -> dict:
    """Execute one command and write ``manifest.json`` next to its outputs."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    summary = COMMAND_FUNCS[config.command](config, out)
    wall = time.perf_counter() - start
    produced = sorted(p.name for p in out.iterdir() if p.is_file())
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "artifact_version": __version__,
        "backend": BACKEND,
        "config": config.to_dict(),
        "config_yaml": emit_config(config),
        "outputs": [name for name in produced if name not in ("manifest.json", "error.json")],
        "wall_time_s": wall,
    }
    write_json(out / "manifest.json", manifest)
    return summary
