"""Joint ranking loss, first-order meta-learning and the training / inference loops."""
from __future__ import annotations

import copy
import dataclasses
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data_encoder import EncoderConfig, encode_data, init_data_encoder, sample_subset
from .meta_dataset import MetaSample, TimeSeriesDataset, sample_tasks
from .metrics import evaluate_ranking
from .model_encoder import HubFeatures, encode_hub, init_model_encoder
from .numerics import AdamState, ParamStore, Tensor
from .scorer import ScoreResult, init_scorer, n_experts, score_hub

log = logging.getLogger(__name__)

STRATEGIES = ("cross_dataset", "cross_horizon")


@dataclass
class TrainConfig:
    lam: float = 0.7
    alpha: float = 0.001
    gamma: float = 0.005
    inner_steps: int = 1
    n_tasks: int = 4
    support_size: int = 4
    query_size: int = 4
    epochs: int = 80
    batch_size: int = 16
    seed: int = 0
    meta_learning: bool = True
    loss_orientation: str = "reverse"
    experts: int = 4
    lookback: int = 96
    patch: int = 16
    d: int = 64
    subset: int = 32
    resamples: int = 8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.alpha < 0 or self.gamma <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss_orientation not in ("reverse", "conventional"):
            raise ValueError(f"unknown loss orientation {self.loss_orientation!r}")

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.lookback, self.patch, self.d, self.subset, self.resamples)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named purpose derived from the root seed."""
    key = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(key)


# ---------------------------------------------------------------------------
# loss


def total_loss(r_hat: Tensor, r, lam: float, orientation: str = "reverse") -> Tensor:
    """Listwise ranking term plus ``lam`` times squared error.

    ``reverse`` weights log softmax(r) by softmax(r_hat); ``conventional``
    weights log softmax(r_hat) by softmax(r).
    """
    r = np.asarray(r, dtype=np.float64)
    if r_hat.shape != r.shape:
        raise ValueError(f"prediction {r_hat.shape} and target {r.shape} differ")
    if r.size < 2:
        raise ValueError("ranking loss needs at least two models")
    q = np.exp(r - r.max())
    q /= q.sum()
    if orientation == "reverse":
        if np.any(q < 1e-12):
            log.info("target softmax below 1e-12; clamped before log")
        logq = np.log(np.maximum(q, 1e-12))
        rank = -nx.tensor_sum(nx.mul(nx.softmax(r_hat, axis=0), logq))
    elif orientation == "conventional":
        rank = -nx.tensor_sum(nx.mul(nx.log_softmax(r_hat, axis=0), q))
    else:
        raise ValueError(f"unknown loss orientation {orientation!r}")
    mse = nx.tensor_sum(nx.square(nx.sub(r, r_hat)))
    return rank + lam * mse


# ---------------------------------------------------------------------------
# selector forward


def init_params(cfg: TrainConfig, d_in: int, rng: np.random.Generator) -> ParamStore:
    params = ParamStore()
    init_data_encoder(params, rng, cfg.encoder)
    init_model_encoder(params, rng, cfg.d, d_in)
    init_scorer(params, rng, cfg.d, cfg.experts)
    return params


def predict(params: ParamStore, hub: HubFeatures, E_d: Tensor, H: int) -> ScoreResult:
    E_m = encode_hub(hub, params).E_m
    return score_hub(E_m, E_d, H, params)


@dataclass
class SelectorContext:
    """Everything a loss evaluation needs besides the parameters."""

    datasets: Mapping[str, TimeSeriesDataset]
    hub: HubFeatures
    cfg: TrainConfig
    rng: np.random.Generator

    def __post_init__(self):
        self._train = {k: ds.train() for k, ds in self.datasets.items()}

    def train_values(self, dataset_id: str) -> np.ndarray:
        return self._train[dataset_id]

    def loss(self, params: ParamStore, samples: Sequence[MetaSample]) -> Tensor:
        """Mean joint loss over samples, one fresh window subset each."""
        enc = self.cfg.encoder
        total = None
        for s in samples:
            if len(s.scores) != self.hub.K:
                raise ValueError(f"sample {s.key} has {len(s.scores)} scores for a hub of {self.hub.K}")
            sub = sample_subset(self._train[s.dataset_id], enc.lookback, enc.subset, self.rng)
            res = predict(params, self.hub, encode_data(sub, params, enc), s.horizon)
            l = total_loss(res.scores, s.scores, self.cfg.lam, self.cfg.loss_orientation)
            total = l if total is None else total + l
        return nx.mul(total, 1.0 / len(samples))


# ---------------------------------------------------------------------------
# meta-learning


def inner_adapt(params: ParamStore, loss_fn: Callable, support, alpha: float, steps: int = 1) -> ParamStore:
    """Plain gradient steps on the support set; ``params`` is left untouched."""
    if not support:
        raise ValueError("empty support set")
    theta = params.copy()
    for _ in range(steps):
        theta.zero_grad()
        nx.backward(loss_fn(theta, support))
        grads = theta.grads()
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite support gradient for {k}; task aborted")
        theta = ParamStore({k: t.data - alpha * grads[k] for k, t in theta.items()})
    return theta


def meta_gradient(params: ParamStore, tasks, loss_fn: Callable, alpha: float, inner_steps: int = 1):
    """First-order meta-gradient summed over tasks in order, plus the mean query loss."""
    if not tasks:
        raise ValueError("no tasks")
    total = {k: np.zeros_like(t.data) for k, t in params.items()}
    losses = []
    for task in tasks:
        theta = inner_adapt(params, loss_fn, task.support, alpha, inner_steps) if inner_steps > 0 else params.copy()
        theta.zero_grad()
        lq = loss_fn(theta, task.query)
        nx.backward(lq)
        for k, g in theta.grads().items():
            total[k] = total[k] + g
        losses.append(float(lq.data))
    return total, float(np.mean(losses))


def meta_step(params: ParamStore, tasks, loss_fn: Callable, alpha: float, gamma: float, state: AdamState, inner_steps: int = 1) -> float:
    grads, loss = meta_gradient(params, tasks, loss_fn, alpha, inner_steps)
    nx.adam_step(params, grads, state, gamma)
    return loss


# ---------------------------------------------------------------------------
# inference and evaluation


@dataclass
class Ranking:
    result: ScoreResult
    model_ids: list[str]
    score_sd: np.ndarray
    E_d: np.ndarray

    @property
    def order(self) -> list[str]:
        return [self.model_ids[i] for i in self.result.ranking()]


def rank_dataset(params: ParamStore, hub: HubFeatures, train_values: np.ndarray, H: int, cfg: TrainConfig, rng: np.random.Generator) -> Ranking:
    """Average E_d over ``cfg.resamples`` subsets, score the hub, and report per-resample score spread."""
    enc = cfg.encoder
    E_m = encode_hub(hub, params).E_m
    per_E, per_r = [], []
    for _ in range(enc.resamples):
        sub = sample_subset(train_values, enc.lookback, enc.subset, rng)
        E = encode_data(sub, params, enc).data
        per_E.append(E)
        per_r.append(score_hub(E_m, Tensor(E), H, params).r_hat)
    E_d = nx.stable_mean(np.stack(per_E), axis=0)
    res = score_hub(E_m, Tensor(E_d), H, params)
    sd = np.std(np.stack(per_r), axis=0)
    return Ranking(res, list(hub.ids), sd, E_d)


def config_from_meta(meta: Mapping) -> TrainConfig:
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in meta.get("config", {}).items() if k in known})


def rank_models(checkpoint, dataset: TimeSeriesDataset, H: int, hub: HubFeatures, seed: int | None = None) -> Ranking:
    """Load a checkpoint and rank ``hub`` for ``dataset`` at horizon ``H``."""
    params, meta = nx.load_checkpoint(checkpoint)
    trained_ids = meta.get("hub_ids")
    if trained_ids is not None and len(trained_ids) != hub.K:
        raise ValueError(f"checkpoint was trained on a hub of {len(trained_ids)} models, got {hub.K}")
    cfg = config_from_meta(meta)
    seed = cfg.seed if seed is None else seed
    return rank_dataset(params, hub, dataset.train(), H, cfg, inference_rng(seed, dataset.id, H))


def inference_rng(seed: int, dataset_id: str, H: int) -> np.random.Generator:
    return substream(seed, "infer", dataset_id, H)


@dataclass
class CaseResult:
    dataset_id: str
    horizon: int
    r_hat: np.ndarray
    truth: np.ndarray
    tau: float
    tau_w: float
    loss: float

    @property
    def predicted_order(self) -> np.ndarray:
        return np.argsort(-self.r_hat, kind="stable")


def evaluate(params: ParamStore, samples: Sequence[MetaSample], datasets: Mapping[str, TimeSeriesDataset], hub: HubFeatures, cfg: TrainConfig, seed: int) -> list[CaseResult]:
    out = []
    for s in samples:
        rk = rank_dataset(params, hub, datasets[s.dataset_id].train(), s.horizon, cfg, inference_rng(seed, s.dataset_id, s.horizon))
        ev = evaluate_ranking(rk.result.r_hat, s.scores)
        loss = float(total_loss(Tensor(rk.result.r_hat), s.scores, cfg.lam, cfg.loss_orientation).data)
        out.append(CaseResult(s.dataset_id, s.horizon, rk.result.r_hat.copy(), s.scores, ev.tau, ev.tau_w, loss))
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_tau_w: float = -math.inf
    final_val_tau_w: float = math.nan
    seconds: float = 0.0
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def train(
    meta_train: Sequence[MetaSample],
    meta_val: Sequence[MetaSample],
    datasets: Mapping[str, TimeSeriesDataset],
    hub: HubFeatures,
    cfg: TrainConfig,
) -> tuple[ParamStore, TrainReport]:
    """Meta-train the selector; returns the best-validation parameters and a report.

    With ``meta_learning=False`` the support sets are ignored and each step
    is a plain Adam step on the summed query losses (ordinary mini-batch
    training on the joint loss).
    """
    t0 = time.perf_counter()
    params = init_params(cfg, hub.matrix.shape[1], substream(cfg.seed, "init"))
    task_rng = substream(cfg.seed, "tasks")
    ctx = SelectorContext(datasets, hub, cfg, substream(cfg.seed, "subset"))
    state = AdamState()

    n_ds = len({s.dataset_id for s in meta_train})
    n_h = len({s.horizon for s in meta_train})
    feasible = [st for st, ok in zip(STRATEGIES, (n_ds >= 2, n_h >= 2)) if ok]
    if not feasible:
        raise ValueError("cannot sample tasks: training data has one dataset and one horizon")
    steps_per_epoch = max(1, math.ceil(len(meta_train) / cfg.batch_size))
    inner = cfg.inner_steps if cfg.meta_learning else 0

    report = TrainReport()
    best = params.snapshot()
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for _ in range(steps_per_epoch):
            strategy = feasible[step % len(feasible)]
            tasks = sample_tasks(meta_train, strategy, cfg.n_tasks, cfg.support_size, cfg.query_size, task_rng)
            if not tasks:
                raise ValueError("task sampling returned nothing")
            losses.append(meta_step(params, tasks, ctx.loss, cfg.alpha, cfg.gamma, state, inner))
            step += 1
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if meta_val:
            cases = evaluate(params, meta_val, datasets, hub, cfg, cfg.seed)
            row["val_loss"] = float(np.mean([c.loss for c in cases]))
            row["val_tau_w"] = float(np.mean([c.tau_w for c in cases]))
            score = row["val_tau_w"]
        else:
            score = -row["train_loss"]
        if not all(math.isfinite(v) for v in row.values()):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}: {row}")
        report.epochs.append(row)
        if score > report.best_val_tau_w:
            report.best_val_tau_w = score
            report.best_epoch = epoch
            best = params.snapshot()
        log.debug("epoch %d %s", epoch, row)
    params.restore(best)
    report.final_val_tau_w = report.epochs[-1].get("val_tau_w", math.nan)
    report.seconds = time.perf_counter() - t0
    return params, report


def clone_config(cfg: TrainConfig, **changes) -> TrainConfig:
    return dataclasses.replace(copy.deepcopy(cfg), **changes)
