"""Model embeddings from meta-information, architecture graph and probe behaviour."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numerics import ParamStore, Tensor, matmul, relu, stable_mean

ARCHITECTURES = ("encoder_only", "decoder_only", "encoder_decoder")
DOMAIN_VOCAB = ("electricity", "energy", "traffic", "environment", "nature", "economic", "general")
D_META, D_TOPO, D_FUNC = 16, 32, 32
WL_SALT = b"hubrank-wl-v1"


@dataclass
class DagGraph:
    nodes: list[dict]
    edges: list[tuple[str, str]]

    def __post_init__(self):
        self.edges = [tuple(e) for e in self.edges]
        ids = [n["id"] for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node ids in DAG")
        known = set(ids)
        for s, d in self.edges:
            if s not in known or d not in known:
                raise ValueError(f"edge ({s}, {d}) references an unknown node")

    def topological_order(self) -> list[str]:
        ts = TopologicalSorter({n["id"]: set() for n in self.nodes})
        for s, d in self.edges:
            ts.add(d, s)
        try:
            return list(ts.static_order())
        except CycleError as exc:
            raise ValueError(f"graph has a cycle: {' -> '.join(map(str, exc.args[1]))}") from None

    def to_json(self) -> dict:
        return {"nodes": [dict(n) for n in self.nodes], "edges": [list(e) for e in self.edges]}


@dataclass
class ModelCard:
    id: str
    architecture: str
    param_count: int
    gmacs: float
    hidden_dim: int
    pretrain_domains: tuple[str, ...]
    dag: DagGraph
    probe_signature: np.ndarray | None = None
    forecaster: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"{self.id}: architecture must be one of {ARCHITECTURES}")
        if self.param_count <= 0 or self.gmacs <= 0 or self.hidden_dim <= 0:
            raise ValueError(f"{self.id}: numeric fields must be positive")
        for d in self.pretrain_domains:
            if d not in DOMAIN_VOCAB:
                raise ValueError(f"{self.id}: unknown domain {d!r}; vocabulary is {', '.join(DOMAIN_VOCAB)}")
        self.pretrain_domains = tuple(self.pretrain_domains)
        if self.probe_signature is not None:
            self.probe_signature = np.asarray(self.probe_signature, dtype=np.float64)

    def to_json(self) -> dict:
        out = {
            "format_version": 1,
            "id": self.id,
            "architecture": self.architecture,
            "param_count": int(self.param_count),
            "gmacs": float(self.gmacs),
            "hidden_dim": int(self.hidden_dim),
            "pretrain_domains": list(self.pretrain_domains),
            "dag": self.dag.to_json(),
        }
        if self.probe_signature is not None:
            out["probe_signature"] = [float(v) for v in self.probe_signature]
        return out

    @classmethod
    def from_json(cls, blob: dict) -> "ModelCard":
        return cls(
            id=blob["id"],
            architecture=blob["architecture"],
            param_count=int(blob["param_count"]),
            gmacs=float(blob["gmacs"]),
            hidden_dim=int(blob["hidden_dim"]),
            pretrain_domains=tuple(blob.get("pretrain_domains", ())),
            dag=DagGraph(blob["dag"]["nodes"], blob["dag"]["edges"]),
            probe_signature=blob.get("probe_signature"),
        )


def save_card(card: ModelCard, path) -> None:
    Path(path).write_text(json.dumps(card.to_json(), indent=1) + "\n")


def load_card(path) -> ModelCard:
    return ModelCard.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# meta-information


def meta_embedding(card: ModelCard, d_a: int = D_META) -> np.ndarray:
    """Raw (hub-unnormalized) meta-information vector."""
    for d in card.pretrain_domains:
        if d not in DOMAIN_VOCAB:
            raise ValueError(f"unknown domain {d!r}; vocabulary is {', '.join(DOMAIN_VOCAB)}")
    arch = [1.0 if card.architecture == a else 0.0 for a in ARCHITECTURES]
    cont = [math.log10(card.param_count), math.log10(card.gmacs), math.log2(card.hidden_dim)]
    dom = [1.0 if d in card.pretrain_domains else 0.0 for d in DOMAIN_VOCAB]
    v = np.array(arch + cont + dom)
    out = np.zeros(d_a)
    n = min(d_a, len(v))
    out[:n] = v[:n]
    return out


_META_CONTINUOUS = slice(3, 6)


# ---------------------------------------------------------------------------
# topology


def _h64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8, key=WL_SALT).digest(), "little")


def wl_topo_embedding(dag: DagGraph, iterations: int = 3, d_t: int = D_TOPO) -> np.ndarray:
    """Weisfeiler-Lehman subtree labels hashed into ``d_t`` signed buckets, L2-normalized."""
    dag.topological_order()  # raises with a cycle witness
    v = np.zeros(d_t)
    if not dag.nodes:
        return v
    preds: dict[str, list[str]] = {n["id"]: [] for n in dag.nodes}
    succs: dict[str, list[str]] = {n["id"]: [] for n in dag.nodes}
    for s, d in dag.edges:
        preds[d].append(s)
        succs[s].append(d)
    labels = {n["id"]: str(n["op_label"]) for n in dag.nodes}

    def emit(label: str) -> None:
        h = _h64(label)
        v[h % d_t] += 1.0 if (h >> 63) & 1 else -1.0

    for lab in labels.values():
        emit(lab)
    for it in range(iterations):
        new = {}
        for node, lab in labels.items():
            ins = ",".join(sorted(labels[p] for p in preds[node]))
            outs = ",".join(sorted(labels[s] for s in succs[node]))
            long = f"{it}|{lab}|in[{ins}]|out[{outs}]"
            new[node] = hashlib.blake2b(long.encode(), digest_size=8, key=WL_SALT).hexdigest()
        labels = new
        for lab in labels.values():
            emit(lab)
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


# ---------------------------------------------------------------------------
# functionality


@dataclass(frozen=True)
class ProbeConfig:
    n_probe: int = 4
    length: int = 96
    horizon: int = 96
    d_c: int = D_FUNC
    seed: int = 20240917


def probe_batch(cfg: ProbeConfig = ProbeConfig()) -> np.ndarray:
    return np.random.default_rng(cfg.seed).standard_normal((cfg.n_probe, cfg.length))


def probe_projection(cfg: ProbeConfig = ProbeConfig()) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 1])
    n_in = cfg.n_probe * cfg.horizon
    return rng.standard_normal((n_in, cfg.d_c)) / math.sqrt(n_in)


def probe_outputs(card: ModelCard, cfg: ProbeConfig = ProbeConfig()) -> np.ndarray:
    """Concatenated forecasts of the card's model on the shared noise probes."""
    if card.forecaster is None:
        if card.probe_signature is None:
            raise ValueError(f"{card.id}: no forecaster and no stored probe signature")
        return card.probe_signature
    outs = []
    for x in probe_batch(cfg):
        y = np.asarray(card.forecaster(x.reshape(-1, 1), cfg.horizon), dtype=np.float64)
        if y.shape not in ((cfg.horizon, 1), (cfg.horizon,)):
            raise ValueError(f"{card.id}: forecast shape {y.shape}, expected ({cfg.horizon}, 1)")
        outs.append(y.reshape(-1))
    return np.concatenate(outs)


def functional_embedding(card: ModelCard, cfg: ProbeConfig = ProbeConfig()) -> np.ndarray:
    """Probe signature projected to ``d_c`` dims (before hub normalization)."""
    sig = card.probe_signature if card.probe_signature is not None else probe_outputs(card, cfg)
    sig = np.asarray(sig, dtype=np.float64)
    P = probe_projection(cfg)
    if sig.shape != (P.shape[0],):
        raise ValueError(f"{card.id}: probe signature has {sig.size} values, expected {P.shape[0]}")
    return sig @ P


# ---------------------------------------------------------------------------
# hub


@dataclass
class HubStats:
    """Per-feature centre and scale used for hub-level z-normalization."""

    meta_mu: np.ndarray
    meta_sd: np.ndarray
    func_mu: np.ndarray
    func_sd: np.ndarray


def _zstats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = stable_mean(x, axis=0)
    sd = np.sqrt(stable_mean((x - mu) ** 2, axis=0))
    return mu, np.where(sd < 1e-8, np.inf, sd)


@dataclass
class HubFeatures:
    ids: list[str]
    v_a: np.ndarray
    v_t: np.ndarray
    v_c: np.ndarray
    stats: HubStats

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.v_a, self.v_t, self.v_c])

    @property
    def K(self) -> int:
        return len(self.ids)


def hub_features(cards: Sequence[ModelCard], stats: HubStats | None = None, probe_cfg: ProbeConfig = ProbeConfig()) -> HubFeatures:
    """Stack v_a, v_t, v_c for every card.

    Continuous meta features and functional vectors are z-normalized across
    the hub; pass ``stats`` to freeze that normalization.  A feature with no
    spread across the hub maps to zero.
    """
    v_a = np.stack([meta_embedding(c) for c in cards])
    v_t = np.stack([wl_topo_embedding(c.dag) for c in cards])
    v_c = np.stack([functional_embedding(c, probe_cfg) for c in cards])
    if stats is None:
        mm, ms = _zstats(v_a[:, _META_CONTINUOUS])
        fm, fs = _zstats(v_c)
        stats = HubStats(mm, ms, fm, fs)
    v_a = v_a.copy()
    v_a[:, _META_CONTINUOUS] = (v_a[:, _META_CONTINUOUS] - stats.meta_mu) / stats.meta_sd
    v_c = (v_c - stats.func_mu) / stats.func_sd
    return HubFeatures([c.id for c in cards], v_a, v_t, v_c, stats)


def init_model_encoder(params: ParamStore, rng: np.random.Generator, d: int = 64, d_in: int = D_META + D_TOPO + D_FUNC) -> None:
    lim = math.sqrt(6.0 / (d + d_in))
    params["model.W_m"] = rng.uniform(-lim, lim, size=(d, d_in))


@dataclass
class HubEmbedding:
    E_m: Tensor
    v_a: np.ndarray
    v_t: np.ndarray
    v_c: np.ndarray


def encode_hub(hub, params: ParamStore) -> HubEmbedding:
    """relu([v_a, v_t, v_c] W_m^T), one row per card.  ``hub`` is cards or HubFeatures."""
    features = hub if isinstance(hub, HubFeatures) else hub_features(hub)
    W = params["model.W_m"]
    X = features.matrix
    if W.shape[1] != X.shape[1]:
        raise ValueError(f"W_m expects {W.shape[1]} input features, hub provides {X.shape[1]}")
    E_m = relu(matmul(Tensor(X), W.T))
    return HubEmbedding(E_m, features.v_a, features.v_t, features.v_c)
