"""Desk-scale membership-inference study on a toy classifier.

Per seed: draw a pretraining pool and three disjoint fine-tuning splits,
pretrain a base model, fine-tune one reference model on the auxiliary split
and one model per method on the train split, then attack with the
loss-difference score ``L(x; model) - L(x; ref)``. Train samples are the
members and validation samples the non-members.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import kernels
from .dp_optimizer import DpConfig, dpsgd_batch_gradient
from .errors import DivergenceError, InvalidArgumentError
from .lowrank_dynamics import effective_weight, init_adapter, sgd_step
from .parallel import map_ordered
from .tensor_core import RngStream
from .toy_network import (Dataset, ToyModel, batch_gradients, init_toy_model, mean_loss,
                          per_sample_losses, per_sample_weight_grads)

METHOD_KINDS = ("full", "adapters", "lora", "lora_frozen", "dpsgd")


@dataclass(frozen=True)
class Method:
    """A fine-tuning recipe.

    ``adapters`` is plain SGD on the adapter weights only. For ``dpsgd``,
    ``clip`` and ``noise`` may be left as None to be resolved per seed from
    the study config.
    """

    kind: str
    rank: int | None = None
    clip: float | None = None
    noise: float | None = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise InvalidArgumentError(f"unknown method {self.kind!r}")
        if self.kind in ("lora", "lora_frozen") and (self.rank is None or self.rank < 1):
            raise InvalidArgumentError(f"{self.kind} needs a positive rank")

    @property
    def id(self) -> str:
        if self.kind in ("lora", "lora_frozen"):
            return f"{self.kind}(r={self.rank})"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "Method":
        """``full``, ``adapters``, ``dpsgd``, ``lora:8``, ``lora_frozen:8``."""
        kind, _, arg = text.partition(":")
        return cls(kind, rank=int(arg) if arg else None)


# ---------------------------------------------------------------------------
# data


def synth_dataset(rng: RngStream, n_per_split: int, dim: int, classes: int,
                  separation: float = 3.0, label_noise: float = 0.0,
                  means: np.ndarray | None = None) -> tuple[Dataset, Dataset, Dataset]:
    """Gaussian class clusters split into disjoint train/validation/auxiliary sets.

    Class means have norm ``separation`` (unless ``means`` is given) and each
    feature vector adds unit isotropic noise. A ``label_noise`` fraction of
    samples gets a uniformly random label.
    """
    if classes < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {classes}")
    if n_per_split < 1 or dim < 1:
        raise InvalidArgumentError("n_per_split and dim must be positive")
    gen = rng.generator()
    if means is None:
        means = class_means(rng.substream(0), dim, classes, separation)
    total = 3 * n_per_split
    labels = gen.integers(0, classes, total)
    features = means[labels] + gen.standard_normal((total, dim))
    flip = gen.random(total) < label_noise
    labels = np.where(flip, gen.integers(0, classes, total), labels)
    splits = []
    for k, name in enumerate(("train", "validation", "auxiliary")):
        idx = np.arange(k * n_per_split, (k + 1) * n_per_split)
        splits.append(Dataset(features[idx], labels[idx], name, idx))
    return tuple(splits)


def class_means(rng: RngStream, dim: int, classes: int, separation: float) -> np.ndarray:
    raw = rng.generator().standard_normal((classes, dim))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True) * separation


# ---------------------------------------------------------------------------
# training


def _check_finite(loss: float, where: str):
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {where}")


def train(model: ToyModel, data: Dataset, method: Method, epochs: int, eta: float, rng: RngStream,
          batch_size: int = 20, max_steps: int | None = None,
          history: list | None = None) -> ToyModel:
    """Fine-tune a copy of ``model`` on ``data`` with minibatch SGD.

    Random streams: substream 0 shuffles, 1 initialises adapters, 2 draws DP
    noise, so methods that share a stream layout see the same batches.
    ``history`` (if given) receives the mean training loss before training and
    after every epoch.
    """
    if epochs < 1:
        raise InvalidArgumentError(f"epochs must be >= 1, got {epochs}")
    if eta < 0:
        raise InvalidArgumentError(f"eta must be non-negative, got {eta}")
    model = model.copy()
    adapters = model.adapter_layers
    if method.kind in ("lora", "lora_frozen"):
        for l in adapters:
            if method.rank > min(model.weights[l].shape):
                raise InvalidArgumentError(f"rank {method.rank} exceeds layer {l} dims {model.weights[l].shape}")
    if method.kind == "dpsgd" and (method.clip is None or method.noise is None):
        raise InvalidArgumentError("dpsgd needs clip and noise resolved before training")
    if history is not None:
        history.append(mean_loss(model, data))
    if eta == 0:
        return model

    shuffle = rng.substream(0).generator()
    noise_gen = rng.substream(2).generator()
    lora = {}
    if method.kind in ("lora", "lora_frozen"):
        init_rng = rng.substream(1)
        for l in adapters:
            n, m = model.weights[l].shape
            lora[l] = init_adapter(init_rng.substream(l), n, m, method.rank,
                                   frozen_a=(method.kind == "lora_frozen"), eta=eta, w0=model.weights[l])

    k = len(data)
    steps = 0
    for epoch in range(epochs):
        order = shuffle.permutation(k)
        for start in range(0, k, batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            idx = order[start:start + batch_size]
            x, y = data.features[idx], data.labels[idx]
            if method.kind == "full":
                gw, gb, losses = batch_gradients(model, x, y)
                for l in range(len(model.weights)):
                    model.weights[l] = model.weights[l] - eta * gw[l]
                    model.biases[l] = model.biases[l] - eta * gb[l]
            elif method.kind == "adapters":
                gw, _, losses = batch_gradients(model, x, y)
                for l in adapters:
                    model.weights[l] = model.weights[l] - eta * gw[l]
            elif method.kind == "dpsgd":
                per = per_sample_weight_grads(model, x, y, adapters)
                flat = np.concatenate([p.reshape(len(idx), -1) for p in per], axis=1)
                cfg = DpConfig(method.clip, method.noise, len(idx))
                noisy = dpsgd_batch_gradient(flat[:, None, :], cfg, noise_gen)[0]
                offset = 0
                for l, p in zip(adapters, per):
                    size = p[0].size
                    model.weights[l] = model.weights[l] - eta * noisy[offset:offset + size].reshape(p.shape[1:])
                    offset += size
                losses = None
            else:
                gw, _, losses = batch_gradients(model, x, y)
                for l in adapters:
                    lora[l] = sgd_step(lora[l], gw[l])
                    model.weights[l] = effective_weight(lora[l])
            if losses is not None:
                _check_finite(float(np.mean(losses)), f"at epoch {epoch}")
            steps += 1
        epoch_loss = mean_loss(model, data)
        _check_finite(epoch_loss, f"after epoch {epoch}")
        if history is not None:
            history.append(epoch_loss)
    return model


def pretrain_model(rng: RngStream, pool: Dataset, sizes: Sequence[int], epochs: int, eta: float,
                   batch_size: int = 20, adapter_mask: Sequence[bool] | None = None) -> ToyModel:
    base = init_toy_model(rng.substream(0), sizes, adapter_mask)
    return train(base, pool, Method("full"), epochs, eta, rng.substream(1), batch_size)


# ---------------------------------------------------------------------------
# attack


def membership_score(model: ToyModel, ref_model: ToyModel, x, y) -> np.ndarray:
    """Per-sample ``L(x; model) - L(x; ref_model)``; lower means more member-like."""
    return per_sample_losses(model, x, y) - per_sample_losses(ref_model, x, y)


def calibrate_threshold(nonmember_scores, alpha: float) -> float:
    """Largest ``gamma`` with ``#{s < gamma} / N <= alpha`` on the non-member scores.

    When every score is equal there is no threshold that separates anything;
    return a value just below the common score so that nothing is flagged.
    """
    s = np.sort(np.asarray(nonmember_scores, dtype=np.float64))
    if s.size == 0:
        raise InvalidArgumentError("no non-member scores")
    if not 0 < alpha < 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    n = s.size
    if s[0] == s[-1]:
        return float(np.nextafter(s[0], -np.inf))
    k = int(math.floor(alpha * n))
    while k + 1 <= n and (k + 1) / n <= alpha:
        k += 1
    while k > 0 and k / n > alpha:
        k -= 1
    return float(s[min(k, n - 1)])


def auc(member_scores, nonmember_scores) -> float:
    """P(member score < non-member score), ties counted one half."""
    a = np.ascontiguousarray(member_scores, dtype=np.float64)
    b = np.ascontiguousarray(nonmember_scores, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("both score sets must be non-empty")
    return float(kernels.auc_lower(a, b))


@dataclass
class MiaReport:
    method: str
    auc: float
    tpr_at_fpr: dict[float, float]
    gamma: dict[float, float]
    fpr_at_gamma: dict[float, float] = field(default_factory=dict)
    validation_loss: float = float("nan")
    train_loss: float = float("nan")
    seed: int | None = None
    extra: dict = field(default_factory=dict)


def mia_evaluate(member_scores, nonmember_scores, alphas=(0.10, 0.01), method: str = "") -> MiaReport:
    members = np.asarray(member_scores, dtype=np.float64)
    nonmembers = np.asarray(nonmember_scores, dtype=np.float64)
    gammas, tprs, fprs = {}, {}, {}
    for alpha in alphas:
        g = calibrate_threshold(nonmembers, alpha)
        gammas[alpha] = g
        tprs[alpha] = float(np.mean(members < g))
        fprs[alpha] = float(np.mean(nonmembers < g))
    return MiaReport(method=method, auc=auc(members, nonmembers), tpr_at_fpr=tprs, gamma=gammas,
                     fpr_at_gamma=fprs)


# ---------------------------------------------------------------------------
# study


@dataclass(frozen=True)
class MiaConfig:
    n_per_split: int = 200
    dim: int = 64
    hidden: int = 64
    classes: int = 10
    separation: float = 3.0
    label_noise: float = 0.2
    pretrain_samples: int = 2000
    pretrain_epochs: int = 10
    pretrain_lr: float = 0.05
    domain_shift: float = 1.5
    epochs: int = 40
    batch_size: int = 20
    # per-method rates from a small sweep; full fine-tuning gets the smallest
    lr: dict = field(default_factory=lambda: {"full": 0.01, "adapters": 0.01, "lora": 0.02,
                                              "lora_frozen": 0.02, "dpsgd": 0.005})
    # dpsgd: clip at the median per-sample adapter-gradient norm of the base model on
    # the train split, noise std c z / b = dp_noise_ratio * clip
    dp_noise_ratio: float = 0.5
    alphas: tuple = (0.10, 0.01)

    @property
    def sizes(self) -> list[int]:
        return [self.dim, self.hidden, self.hidden, self.classes]


def _seed_task(task):
    config, methods, seed, stream = task
    return run_single_seed(config, methods, seed, stream)


def run_single_seed(config: MiaConfig, methods: Sequence[Method], seed: int,
                    rng: RngStream) -> list[MiaReport]:
    task_means = class_means(rng.substream(10), config.dim, config.classes, config.separation)
    shift = class_means(rng.substream(11), config.dim, config.classes, config.domain_shift)
    pretrain_means = task_means + shift
    pool_n = -(-config.pretrain_samples // 3)
    pool = synth_dataset(rng.substream(12), pool_n, config.dim, config.classes,
                         means=pretrain_means, label_noise=0.0)
    pool = Dataset(np.concatenate([p.features for p in pool]), np.concatenate([p.labels for p in pool]),
                   "pretrain")
    train_set, val_set, aux_set = synth_dataset(rng.substream(13), config.n_per_split, config.dim,
                                                config.classes, means=task_means,
                                                label_noise=config.label_noise)
    base = pretrain_model(rng.substream(14), pool, config.sizes, config.pretrain_epochs,
                          config.pretrain_lr, config.batch_size)
    ref = train(base, aux_set, Method("full"), config.epochs, config.lr["full"], rng.substream(15),
                config.batch_size)
    reports = []
    for j, method in enumerate(methods):
        if method.kind == "dpsgd" and (method.clip is None or method.noise is None):
            method = resolve_dp_method(config, base, train_set, method)
        try:
            model = train(base, train_set, method, config.epochs, config.lr[method.kind],
                          rng.substream(100 + j), config.batch_size)
        except DivergenceError as exc:
            raise DivergenceError(f"method {method.id}, seed {seed}: {exc}") from exc
        rep = mia_evaluate(membership_score(model, ref, train_set.features, train_set.labels),
                           membership_score(model, ref, val_set.features, val_set.labels),
                           config.alphas, method.id)
        rep.seed = seed
        rep.validation_loss = mean_loss(model, val_set)
        rep.train_loss = mean_loss(model, train_set)
        if method.kind == "dpsgd":
            rep.extra = {"clip": method.clip, "noise_scale": method.noise,
                         "noise_std": method.clip * method.noise / config.batch_size}
        reports.append(rep)
    return reports


def resolve_dp_method(config: MiaConfig, base: ToyModel, train_set: Dataset, method: Method) -> Method:
    per = per_sample_weight_grads(base, train_set.features, train_set.labels, base.adapter_layers)
    flat = np.concatenate([p.reshape(len(train_set), -1) for p in per], axis=1)
    clip = method.clip if method.clip is not None else float(np.median(np.linalg.norm(flat, axis=1)))
    noise = method.noise if method.noise is not None else config.dp_noise_ratio * config.batch_size
    return dataclasses.replace(method, clip=clip, noise=noise)


def run_mia_study(config: MiaConfig, methods: Sequence[Method], seeds: Sequence[int], rng: RngStream,
                  parallelism: int = 1) -> list[MiaReport]:
    if len(seeds) < 1:
        raise InvalidArgumentError("need at least one seed")
    tasks = [(config, list(methods), s, rng.substream(s)) for s in seeds]
    per_seed = map_ordered(_seed_task, tasks, parallelism)
    return [rep for reports in per_seed for rep in reports]


def summarize(reports: Sequence[MiaReport]) -> dict[str, dict[str, float]]:
    """Mean and std across seeds per method, in first-seen method order."""
    out = {}
    for method in dict.fromkeys(r.method for r in reports):
        rs = [r for r in reports if r.method == method]
        row = {"seeds": len(rs)}
        fields = {"auc": [r.auc for r in rs], "val_loss": [r.validation_loss for r in rs],
                  "train_loss": [r.train_loss for r in rs]}
        for alpha in rs[0].tpr_at_fpr:
            fields[f"tpr@{alpha:g}"] = [r.tpr_at_fpr[alpha] for r in rs]
        for name, vals in fields.items():
            row[f"{name}_mean"] = float(np.mean(vals))
            row[f"{name}_std"] = float(np.std(vals))
        out[method] = row
    return out


@dataclass(frozen=True)
class AblationRow:
    r: int
    mean_auc: float
    mean_tpr10: float
    mean_val_loss: float


@dataclass(frozen=True)
class AblationResult:
    rows: list[AblationRow]
    spearman_auc: float
    spearman_val_loss: float
    reports: list[MiaReport]


def ablation_rank(config: MiaConfig, r_grid: Sequence[int], seeds: Sequence[int], rng: RngStream,
                  kind: str = "lora", parallelism: int = 1) -> AblationResult:
    """LoRA rank sweep; each rank reuses the same per-seed data and base model."""
    if len(r_grid) < 3:
        raise InvalidArgumentError("rank grid needs at least 3 values")
    methods = [Method(kind, rank=int(r)) for r in r_grid]
    reports = run_mia_study(config, methods, seeds, rng, parallelism)
    summary = summarize(reports)
    rows = []
    for method, r in zip(methods, r_grid):
        s = summary[method.id]
        rows.append(AblationRow(int(r), s["auc_mean"], s.get("tpr@0.1_mean", float("nan")),
                                s["val_loss_mean"]))
    rs = [row.r for row in rows]
    return AblationResult(rows=rows,
                          spearman_auc=float(stats.spearmanr(rs, [row.mean_auc for row in rows])[0]),
                          spearman_val_loss=float(stats.spearmanr(rs, [row.mean_val_loss for row in rows])[0]),
                          reports=reports)
