"""Meta-dataset records, dataset loading, the synthetic hub/world and task sampling."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .model_encoder import DagGraph, ModelCard
from .numerics import ParamStore

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_HORIZONS = (96, 192, 336, 720)
LOOKBACK = 96
_MISSING = {"", "nan", "NaN", "NAN", "na", "NA", "null", "None"}
_TIME_HEADERS = {"date", "time", "timestamp", "datetime", "step"}


class LoadError(ValueError):
    pass


@dataclass
class TimeSeriesDataset:
    id: str
    values: np.ndarray  # (L_total, C)
    domain: str = "general"
    frequency: str = "unknown"
    split: tuple[Fraction, Fraction, Fraction] = (Fraction(7, 10), Fraction(1, 10), Fraction(2, 10))
    channels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.split = tuple(Fraction(f).limit_denominator(1000) for f in self.split)
        if sum(self.split) != 1:
            raise ValueError(f"split fractions {self.split} do not sum to 1")
        if not self.channels:
            self.channels = [f"ch{i}" for i in range(self.n_channels)]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def bounds(self) -> tuple[int, int]:
        """End indices of the train and val segments."""
        n = self.length
        tr = int(n * self.split[0])
        va = int(n * (self.split[0] + self.split[1]))
        return tr, va

    def train(self) -> np.ndarray:
        return self.values[: self.bounds()[0]]

    def val(self) -> np.ndarray:
        tr, va = self.bounds()
        return self.values[tr:va]

    def test(self) -> np.ndarray:
        return self.values[self.bounds()[1] :]


def _parse_split(text: str) -> tuple[Fraction, ...]:
    parts = [Fraction(p) for p in text.split(":")]
    total = sum(parts)
    return tuple(p / total for p in parts)


def load_dataset(
    path,
    schema: str = "wide_csv",
    *,
    dataset_id: str | None = None,
    split="7:1:2",
    missing: str = "reject",
    constant: str = "reject",
    min_rows: int | None = None,
    domain: str = "general",
    frequency: str = "unknown",
) -> TimeSeriesDataset:
    """Read a wide CSV (one column per channel, one row per time step).

    A leading timestamp column is recognised by its header name or by a
    non-numeric first cell and is dropped.  ``missing`` is ``"reject"`` or
    ``"ffill"``; ``constant`` is ``"reject"``, ``"drop"`` or ``"keep"``.
    """
    if schema != "wide_csv":
        raise ValueError(f"unsupported schema {schema!r}")
    path = Path(path)
    if not path.exists():
        raise LoadError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    skip_first = header[0].strip().lower() in _TIME_HEADERS
    if not skip_first and body:
        cell = body[0][0].strip()
        if cell not in _MISSING:
            try:
                float(cell)
            except ValueError:
                skip_first = True
    names = header[1:] if skip_first else header
    if not names:
        raise LoadError(f"{path}: no data columns")
    width = len(header)
    values = np.empty((len(body), len(names)))
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise LoadError(f"{path}: row {r} has {len(row)} cells, header has {width}")
        cells = row[1:] if skip_first else row
        for c, cell in enumerate(cells):
            cell = cell.strip()
            if cell in _MISSING:
                values[r - 2, c] = np.nan
                continue
            try:
                values[r - 2, c] = float(cell)
            except ValueError:
                raise LoadError(f"{path}: row {r}, column {names[c]!r}: non-numeric cell {cell!r}") from None
    if min_rows is not None and len(body) < min_rows:
        raise LoadError(f"{path}: {len(body)} rows, need at least {min_rows} (look-back + horizon)")

    keep = []
    for c, name in enumerate(names):
        col = values[:, c]
        nan = np.isnan(col)
        if nan.any():
            if missing != "ffill":
                r = int(np.argmax(nan)) + 2
                raise LoadError(f"{path}: row {r}, column {name!r}: missing value")
            if nan.all():
                raise LoadError(f"{path}: column {name!r} has no values")
            idx = np.where(~nan, np.arange(len(col)), 0)
            np.maximum.accumulate(idx, out=idx)
            first = int(np.argmax(~nan))
            idx[:first] = first
            values[:, c] = col[idx]
        if np.ptp(values[:, c]) == 0 and len(col) > 1:
            if constant == "reject":
                raise LoadError(f"{path}: column {name!r} is constant")
            if constant == "drop":
                continue
        keep.append(c)
    if not keep:
        raise LoadError(f"{path}: every column was dropped")
    split_t = _parse_split(split) if isinstance(split, str) else tuple(split)
    return TimeSeriesDataset(
        id=dataset_id or path.stem,
        values=values[:, keep],
        domain=domain,
        frequency=frequency,
        split=split_t,
        channels=[names[c] for c in keep],
    )


def write_dataset_csv(ds: TimeSeriesDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + ds.channels)
        for t, row in enumerate(ds.values):
            w.writerow([t] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# meta samples


@dataclass
class MetaSample:
    dataset_id: str
    horizon: int
    scores: np.ndarray
    provenance: str = "oracle"
    errors: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.provenance not in ("oracle", "external"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.dataset_id, self.horizon)


@dataclass
class Task:
    support: list[MetaSample]
    query: list[MetaSample]
    strategy: str


def normalize_scores(errors, orientation: str = "lower_is_better", method: str = "minmax") -> np.ndarray:
    """Map per-model errors to scores in [0, 1] where higher is better.

    ``minmax``: best model 1.0, worst 0.0, all-equal errors give 0.5.
    ``rank``: (K - rank) / (K - 1) with rank 1 for the best model.
    """
    e = np.asarray(errors, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise ValueError("errors must be finite")
    if orientation == "higher_is_better":
        e = -e
    elif orientation != "lower_is_better":
        raise ValueError(f"unknown orientation {orientation!r}")
    lo, hi = e.min(), e.max()
    if hi == lo:
        return np.full(e.shape, 0.5)
    if method == "minmax":
        return (hi - e) / (hi - lo)
    if method == "rank":
        from scipy.stats import rankdata

        rank = rankdata(e, method="average")
        k = len(e)
        return (k - rank) / (k - 1)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# synthetic hub


def _windows(series: np.ndarray, L: int, H: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(series) - L - H + 1
    if n <= 0:
        return np.empty((0, L)), np.empty((0, H))
    starts = np.arange(0, n, stride)
    idx = starts[:, None] + np.arange(L + H)[None, :]
    win = series[idx]
    return win[:, :L], win[:, L:]


@dataclass
class SyntheticModel:
    """Cheap stand-in for a pre-trained forecaster: fixed features plus a linear head."""

    id: str
    family: str
    params: ParamStore
    architecture: str
    hidden_dim: int
    pretrain_domains: tuple[str, ...]
    config: dict

    FAMILIES = ("linear_ar", "windowed_mlp", "seasonal_mean")

    @property
    def receptive_field(self) -> int:
        c = self.config
        return {"linear_ar": c.get("order", 1), "windowed_mlp": c.get("window", 1), "seasonal_mean": c.get("period", 1)}[self.family]

    @property
    def param_count(self) -> int:
        return max(1, self.params.num_values())

    @property
    def gmacs(self) -> float:
        return self.param_count * LOOKBACK / 1e6  # pseudo figure

    def features(self, windows: np.ndarray) -> np.ndarray:
        """Map (N, L) look-back windows to (N, f) features."""
        c = self.config
        if self.family == "linear_ar":
            return windows[:, -c["order"] :]
        if self.family == "windowed_mlp":
            W = self.params["W1"].data
            b = self.params["b1"].data
            return np.tanh(windows[:, -c["window"] :] @ W + b)
        if self.family == "seasonal_mean":
            s = c["period"]
            n_cyc = windows.shape[1] // s
            tail = windows[:, -n_cyc * s :].reshape(len(windows), n_cyc, s)
            return tail.mean(axis=1) * self.params["profile_scale"].data
        raise ValueError(self.family)

    def _step(self, window: np.ndarray) -> float:
        c = self.config
        if self.family == "linear_ar":
            coef = self.params["coef"].data
            return float(window[-c["order"] :][::-1] @ coef)
        feats = self.features(window[None, :])[0]
        return float(feats @ self.params["readout"].data)

    def forecast(self, x, H: int) -> np.ndarray:
        """Pre-trained forecast of ``H`` steps for one (L,) or (L, 1) window."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if len(x) < self.receptive_field:
            raise ValueError(f"{self.id}: window of {len(x)} shorter than receptive field {self.receptive_field}")
        if self.family == "seasonal_mean":
            s = self.config["period"]
            prof = self.features(x[None, :])[0]
            reps = math.ceil(H / s)
            return np.tile(prof, reps)[:H].reshape(H, 1)
        buf = list(x)
        out = np.empty(H)
        for h in range(H):
            v = self._step(np.asarray(buf[-self.receptive_field :]))
            out[h] = v
            buf.append(v)
        return out.reshape(H, 1)

    def dag(self) -> DagGraph:
        if self.family == "linear_ar":
            nodes = [("in", "input"), ("lag", "slice"), ("fc", "linear"), ("loop", "recurse"), ("out", "output")]
            edges = [("in", "lag"), ("lag", "fc"), ("fc", "loop"), ("loop", "out")]
        elif self.family == "windowed_mlp":
            nodes = [("in", "input"), ("win", "slice"), ("fc1", "linear"), ("act", "tanh"), ("fc2", "linear"), ("out", "output")]
            edges = [("in", "win"), ("win", "fc1"), ("fc1", "act"), ("act", "fc2"), ("fc2", "out")]
        else:
            nodes = [("in", "input"), ("fold", "reshape"), ("avg", "mean"), ("rep", "tile"), ("out", "output")]
            edges = [("in", "fold"), ("fold", "avg"), ("avg", "rep"), ("rep", "out")]
        return DagGraph(nodes=[{"id": i, "op_label": o} for i, o in nodes], edges=edges)

    def to_card(self, with_signature: bool = True) -> ModelCard:
        card = ModelCard(
            id=self.id,
            architecture=self.architecture,
            param_count=self.param_count,
            gmacs=self.gmacs,
            hidden_dim=self.hidden_dim,
            pretrain_domains=tuple(self.pretrain_domains),
            dag=self.dag(),
            forecaster=self.forecast,
        )
        if with_signature:
            from .model_encoder import probe_outputs

            card.probe_signature = probe_outputs(card)
        return card


def make_linear_ar(model_id: str, coef, **meta) -> SyntheticModel:
    coef = np.atleast_1d(np.asarray(coef, dtype=np.float64))
    meta.setdefault("architecture", "decoder_only")
    meta.setdefault("hidden_dim", len(coef))
    meta.setdefault("pretrain_domains", ("general",))
    return SyntheticModel(model_id, "linear_ar", ParamStore({"coef": coef}), config={"order": len(coef)}, **meta)


def make_windowed_mlp(model_id: str, window: int, hidden: int, seed: int, **meta) -> SyntheticModel:
    rng = np.random.default_rng(seed)
    params = ParamStore(
        {
            "W1": rng.normal(size=(window, hidden)) / math.sqrt(window),
            "b1": rng.normal(scale=0.1, size=hidden),
            "readout": rng.normal(size=hidden) / math.sqrt(hidden),
        }
    )
    meta.setdefault("architecture", "encoder_only")
    meta.setdefault("hidden_dim", hidden)
    meta.setdefault("pretrain_domains", ("general",))
    return SyntheticModel(model_id, "windowed_mlp", params, config={"window": window, "hidden": hidden}, **meta)


def make_seasonal_mean(model_id: str, period: int, **meta) -> SyntheticModel:
    meta.setdefault("architecture", "encoder_decoder")
    meta.setdefault("hidden_dim", period)
    meta.setdefault("pretrain_domains", ("general",))
    params = ParamStore({"profile_scale": np.ones(period)})
    return SyntheticModel(model_id, "seasonal_mean", params, config={"period": period}, **meta)


def _ar_decay(order: int, rho: float) -> np.ndarray:
    c = rho ** np.arange(1, order + 1)
    return c / c.sum() * 0.95


def default_hub(K: int = 8, seed: int = 0) -> list[SyntheticModel]:
    """K synthetic models spanning the three families.

    The first eight follow a fixed template; larger hubs cycle it with new
    random features.
    """
    template = [
        lambda i, s: make_linear_ar(f"ar_short_{i}", _ar_decay(2, 0.5), architecture="decoder_only", pretrain_domains=("economic",)),
        lambda i, s: make_seasonal_mean(f"seasonal24_{i}", 24, architecture="encoder_decoder", pretrain_domains=("electricity", "traffic")),
        lambda i, s: make_windowed_mlp(f"mlp_small_{i}", 24, 16, s, architecture="encoder_decoder", pretrain_domains=("energy",)),
        lambda i, s: make_linear_ar(f"ar_long_{i}", _ar_decay(96, 0.97), architecture="encoder_only", pretrain_domains=("general", "electricity")),
        lambda i, s: make_seasonal_mean(f"seasonal12_{i}", 12, architecture="decoder_only", pretrain_domains=("traffic",)),
        lambda i, s: make_windowed_mlp(f"mlp_wide_{i}", 96, 64, s, architecture="encoder_only", pretrain_domains=("general", "nature")),
        lambda i, s: make_linear_ar(f"ar_mid_{i}", _ar_decay(24, 0.8), architecture="decoder_only", pretrain_domains=("environment",)),
        lambda i, s: make_seasonal_mean(f"seasonal48_{i}", 48, architecture="encoder_decoder", pretrain_domains=("energy", "environment")),
    ]
    hub = []
    for k in range(K):
        hub.append(template[k % len(template)](k, seed * 1000 + k))
    return hub


# ---------------------------------------------------------------------------
# oracle


def _standardize(ds: TimeSeriesDataset) -> np.ndarray:
    tr = ds.train()
    mu = tr.mean(axis=0)
    sd = tr.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    return (ds.values - mu) / sd


def _fit_head(F: np.ndarray, Y: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    X = np.hstack([F, np.ones((len(F), 1))])
    XtX = X.T @ X
    XtY = X.T @ Y
    if len(X) < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        log.info("singular least-squares system (%d x %d); using ridge %.0e", *X.shape, ridge)
        return np.linalg.solve(XtX + ridge * np.eye(X.shape[1]), XtY)
    return np.linalg.solve(XtX, XtY)


def model_test_mse(
    model: SyntheticModel,
    ds: TimeSeriesDataset,
    H: int,
    L: int = LOOKBACK,
    train_stride: int = 8,
    test_stride: int = 4,
) -> float:
    """Refit the model's linear head on the train split, return test-split MSE."""
    z = _standardize(ds)
    tr_end, va_end = ds.bounds()
    total, count = 0.0, 0
    for c in range(z.shape[1]):
        Xtr, Ytr = _windows(z[:tr_end, c], L, H, train_stride)
        Xte, Yte = _windows(z[va_end:, c], L, H, test_stride)
        if len(Xtr) == 0 or len(Xte) == 0:
            raise ValueError(f"{ds.id}: splits too short for L={L}, H={H}")
        W = _fit_head(model.features(Xtr), Ytr)
        Fte = np.hstack([model.features(Xte), np.ones((len(Xte), 1))])
        err = Fte @ W - Yte
        total += float(np.sum(err * err))
        count += err.size
    return total / count


def oracle_ground_truth(hub: Sequence[SyntheticModel], dataset: TimeSeriesDataset, H: int, method: str = "minmax", **kw) -> MetaSample:
    errors = np.array([model_test_mse(m, dataset, H, **kw) for m in hub])
    return MetaSample(dataset.id, int(H), normalize_scores(errors, method=method), "oracle", errors)


# ---------------------------------------------------------------------------
# synthetic world

# Per-domain regime archetypes: (frequency tag, seasonal periods, seasonal
# amplitude range, AR coefficient range, noise range, drift choices, nonlinear).
_DOMAINS = {
    "electricity": ("1 hour", (24, 168), (1.5, 3.0), (0.5, 0.8), (0.3, 0.6), (0.0, 2.0), False),
    "traffic": ("5 mins", (12, 288), (1.5, 3.0), (0.1, 0.4), (0.4, 0.8), (0.0,), False),
    "energy": ("10 mins", (48, 144), (0.0, 0.4), (0.9, 0.97), (0.3, 0.6), (0.0,), True),
    "nature": ("30 mins", (48, 96), (1.0, 2.0), (0.3, 0.6), (0.6, 1.0), (0.0, 1.0), False),
    "economic": ("1 day", (7, 30), (0.0, 0.2), (0.98, 0.995), (0.5, 1.0), (2.0, 5.0), False),
    "environment": ("1 hour", (24, 48), (0.2, 0.6), (0.6, 0.85), (0.4, 0.8), (0.0, 1.0), False),
}

# Default world: four well-separated archetypes so that every one of them
# keeps at least one training dataset after the held-out split.
WORLD_DOMAINS = ("electricity", "traffic", "energy", "economic")


def generate_dataset(ds_id: str, rng: np.random.Generator, length: int = 6000, domain: str | None = None) -> TimeSeriesDataset:
    """Trend + seasonality + AR noise drawn around a domain archetype."""
    if domain is None:
        domain = list(_DOMAINS)[rng.integers(len(_DOMAINS))]
    freq, periods, amp_r, phi_r, noise_r, drifts, nonlinear = _DOMAINS[domain]
    n_ch = int(rng.integers(1, 3))
    t = np.arange(length, dtype=np.float64)
    season_amp = rng.uniform(*amp_r)
    phi = rng.uniform(*phi_r)
    noise = rng.uniform(*noise_r)
    drift = float(rng.choice(drifts))
    cols = []
    for _ in range(n_ch):
        p1, p2 = periods
        x = season_amp * np.sin(2 * np.pi * t / p1 + rng.uniform(0, 2 * np.pi))
        x += 0.3 * season_amp * np.sin(2 * np.pi * t / p2 + rng.uniform(0, 2 * np.pi))
        x += drift * rng.uniform(0.5, 1.5) * t / length
        eps = rng.normal(scale=noise, size=length)
        ar = np.empty(length)
        prev = 0.0
        for i in range(length):
            prev = (1.2 * phi * np.tanh(1.5 * prev) if nonlinear else phi * prev) + eps[i]
            ar[i] = prev
        x += ar
        cols.append(x)
    split = (Fraction(7, 10), Fraction(1, 10), Fraction(2, 10)) if rng.random() < 0.5 else (Fraction(6, 10), Fraction(2, 10), Fraction(2, 10))
    return TimeSeriesDataset(ds_id, np.stack(cols, axis=1), domain=domain, frequency=freq, split=split)


@dataclass
class World:
    datasets: dict[str, TimeSeriesDataset]
    hub: list[SyntheticModel]
    samples: list[MetaSample]
    seed: int
    attempts: int = 1


def _top1_distinct(samples: Sequence[MetaSample]) -> bool:
    by_ds: dict[str, set[int]] = {}
    for s in samples:
        by_ds.setdefault(s.dataset_id, set()).add(int(np.argmax(s.scores)))
    winners = {min(v) for v in by_ds.values()}
    return len(winners) >= 2


def generate_synthetic_world(
    seed: int,
    n_datasets: int = 14,
    K: int = 8,
    horizons: Sequence[int] = DEFAULT_HORIZONS,
    length: int = 6000,
    max_attempts: int = 5,
    domains: Sequence[str] | None = None,
) -> World:
    if n_datasets < 4 or K < 2:
        raise ValueError("need n_datasets >= 4 and K >= 2")
    domains = list(WORLD_DOMAINS if domains is None else domains)
    for d in domains:
        if d not in _DOMAINS:
            raise ValueError(f"unknown domain {d!r}; choose from {', '.join(_DOMAINS)}")
    for attempt in range(max_attempts):
        s = seed + attempt
        rng = np.random.default_rng([s, 0x5EED])
        datasets = {}
        for i in range(n_datasets):
            # cycle the archetypes so every domain appears before any repeats
            ds = generate_dataset(f"synth{i:02d}", rng, length=length, domain=domains[i % len(domains)])
            datasets[ds.id] = ds
        hub = default_hub(K, seed=s)
        samples = [oracle_ground_truth(hub, datasets[d], H) for d in sorted(datasets) for H in horizons]
        if _top1_distinct(samples):
            return World(datasets, hub, samples, seed, attempt + 1)
        log.info("seed %d: every dataset shares one top model; retrying", s)
    raise RuntimeError(f"no world with varied top-1 models within {max_attempts} attempts")


# ---------------------------------------------------------------------------
# partitions and task sampling


def split_meta(meta: Sequence[MetaSample], holdout_count: int = 3, seed: int = 0):
    ids = sorted({s.dataset_id for s in meta})
    if len(ids) < holdout_count + 2:
        raise ValueError(f"{len(ids)} datasets; need at least holdout_count + 2 = {holdout_count + 2}")
    rng = np.random.default_rng([seed, 0x5B1])
    order = [ids[i] for i in rng.permutation(len(ids))]
    test_ids = set(order[:holdout_count])
    rest = order[holdout_count:]
    n_val = max(1, round(len(rest) / 9))
    val_ids = set(rest[:n_val])
    train = [s for s in meta if s.dataset_id not in test_ids | val_ids]
    val = [s for s in meta if s.dataset_id in val_ids]
    test = [s for s in meta if s.dataset_id in test_ids]
    return train, val, test


def sample_tasks(
    meta_train: Sequence[MetaSample],
    strategy: str,
    n_tasks: int,
    support_size: int,
    query_size: int,
    rng: np.random.Generator,
) -> list[Task]:
    by_ds: dict[str, list[MetaSample]] = {}
    by_h: dict[int, list[MetaSample]] = {}
    for s in meta_train:
        by_ds.setdefault(s.dataset_id, []).append(s)
        by_h.setdefault(s.horizon, []).append(s)
    ds_ids = sorted(by_ds)
    hs = sorted(by_h)

    def pick(pool: list[MetaSample], n: int) -> list[MetaSample]:
        idx = rng.choice(len(pool), size=min(n, len(pool)), replace=False)
        return [pool[i] for i in sorted(idx)]

    tasks = []
    for _ in range(n_tasks):
        if strategy == "cross_dataset":
            if len(ds_ids) < 2:
                raise ValueError(f"cross_dataset sampling needs >= 2 datasets, got {len(ds_ids)}")
            a, b = rng.choice(len(ds_ids), size=2, replace=False)
            support = pick(by_ds[ds_ids[a]], support_size)
            query = pick(by_ds[ds_ids[b]], query_size)
        elif strategy == "cross_horizon":
            if len(hs) < 2:
                raise ValueError(f"cross_horizon sampling needs >= 2 horizons, got {len(hs)}")
            h = hs[rng.integers(len(hs))]
            support = pick(by_h[h], support_size)
            query = pick([s for s in meta_train if s.horizon != h], query_size)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        tasks.append(Task(support, query, strategy))
    return tasks


# ---------------------------------------------------------------------------
# files


def meta_to_json(hub_ids: Sequence[str], samples: Sequence[MetaSample]) -> dict:
    out = []
    for s in samples:
        rec = {"dataset_id": s.dataset_id, "horizon": s.horizon, "scores": [float(v) for v in s.scores], "provenance": s.provenance}
        if s.errors is not None:
            rec["errors"] = [float(v) for v in s.errors]
        out.append(rec)
    return {"format_version": FORMAT_VERSION, "hub": list(hub_ids), "samples": out}


def save_meta(path, hub_ids, samples) -> None:
    Path(path).write_text(json.dumps(meta_to_json(hub_ids, samples), indent=1) + "\n")


def load_meta(path) -> tuple[list[str], list[MetaSample]]:
    blob = json.loads(Path(path).read_text())
    if blob.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {blob.get('format_version')}")
    hub = blob["hub"]
    samples = []
    for rec in blob["samples"]:
        if len(rec["scores"]) != len(hub):
            raise ValueError(f"{path}: sample {rec['dataset_id']}/{rec['horizon']} has {len(rec['scores'])} scores for a hub of {len(hub)}")
        samples.append(
            MetaSample(rec["dataset_id"], int(rec["horizon"]), rec["scores"], rec.get("provenance", "external"),
                       np.asarray(rec["errors"]) if "errors" in rec else None)
        )
    return hub, samples
