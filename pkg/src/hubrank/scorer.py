"""Cross-attention compatibility scoring with a horizon-routed mixture of expert heads."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ParamStore, Tensor

ROUTER_HIDDEN = 16
EXPERT_HIDDEN = 128
H_REF = 720.0


@dataclass
class ScoreResult:
    scores: Tensor  # (K,)
    expert_weights: np.ndarray  # (G,)
    attention: np.ndarray  # (K, P)

    @property
    def r_hat(self) -> np.ndarray:
        return self.scores.data

    def ranking(self) -> np.ndarray:
        """Model indices, best first; ties keep hub order."""
        return np.argsort(-self.r_hat, kind="stable")


def init_scorer(params: ParamStore, rng: np.random.Generator, d: int = 64, G: int = 4) -> None:
    if G < 1:
        raise ValueError("need at least one expert")
    for name in ("W_q", "W_k", "W_v"):
        params[f"ca.{name}"] = nx.glorot(rng, d, d)
    params["router.W1"] = nx.glorot(rng, 2, ROUTER_HIDDEN)
    params["router.b1"] = np.zeros(ROUTER_HIDDEN)
    params["router.W2"] = nx.glorot(rng, ROUTER_HIDDEN, G)
    params["router.b2"] = np.zeros(G)
    for g in range(G):
        params[f"expert{g}.W1"] = nx.glorot(rng, d, EXPERT_HIDDEN)
        params[f"expert{g}.b1"] = np.zeros(EXPERT_HIDDEN)
        params[f"expert{g}.W2"] = nx.glorot(rng, EXPERT_HIDDEN, 1)
        params[f"expert{g}.b2"] = np.zeros(1)


def n_experts(params: ParamStore) -> int:
    return params["router.b2"].shape[0]


def cross_attention(E_m: Tensor, E_d: Tensor, params: ParamStore) -> tuple[Tensor, Tensor]:
    """Model rows attend over data patches; returns (E_ca, attention matrix)."""
    if E_m.shape[-1] != E_d.shape[-1]:
        raise ValueError(f"model embedding width {E_m.shape[-1]} != data embedding width {E_d.shape[-1]}")
    d = E_m.shape[-1]
    for name in ("W_q", "W_k", "W_v"):
        if params[f"ca.{name}"].shape != (d, d):
            raise ValueError(f"ca.{name} is {params[f'ca.{name}'].shape}, embeddings need ({d}, {d})")
    Q = nx.matmul(E_m, params["ca.W_q"])
    K = nx.matmul(E_d, params["ca.W_k"])
    V = nx.matmul(E_d, params["ca.W_v"])
    return nx.scaled_dot_attention(Q, K, V, return_weights=True)


def horizon_features(H: int) -> np.ndarray:
    if H < 1:
        raise ValueError(f"horizon must be >= 1, got {H}")
    return np.array([[H / H_REF, math.log(H) / math.log(H_REF)]])


def router_logits(H: int, params: ParamStore) -> Tensor:
    layers = [(params["router.W1"], params["router.b1"]), (params["router.W2"], params["router.b2"])]
    return nx.reshape(nx.mlp_forward(Tensor(horizon_features(H)), layers, "gelu"), (-1,))


def router_weights(H: int, params: ParamStore) -> Tensor:
    return nx.softmax(router_logits(H, params), axis=0)


def expert_scores(E_ca: Tensor, w: Tensor, params: ParamStore) -> Tensor:
    """sum_g w_g * MLP_g(E_ca), each expert mapping a row to one scalar."""
    G = w.shape[0]
    total = None
    for g in range(G):
        layers = [(params[f"expert{g}.W1"], params[f"expert{g}.b1"]), (params[f"expert{g}.W2"], params[f"expert{g}.b2"])]
        out = nx.reshape(nx.mlp_forward(E_ca, layers, "relu"), (-1,))
        term = nx.mul(out, nx.reshape(w_slice(w, g), ()))
        total = term if total is None else total + term
    return total


def w_slice(w: Tensor, g: int) -> Tensor:
    """Differentiable pick of one entry of a 1-D tensor."""
    onehot = np.zeros(w.shape[0])
    onehot[g] = 1.0
    return nx.tensor_sum(nx.mul(w, onehot))


def score_hub(E_m: Tensor, E_d: Tensor, H: int, params: ParamStore) -> ScoreResult:
    E_ca, A = cross_attention(E_m, E_d, params)
    w = router_weights(H, params)
    r_hat = expert_scores(E_ca, w, params)
    return ScoreResult(r_hat, w.data.copy(), A.data.copy())


def write_attention_csv(result: ScoreResult, model_ids, path) -> None:
    A = result.attention
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["model_id"] + [f"patch{p}" for p in range(A.shape[1])])
        for mid, row in zip(model_ids, A):
            wr.writerow([mid] + [repr(float(v)) for v in row])


def write_expert_weights_csv(result: ScoreResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["expert", "weight"])
        for g, v in enumerate(result.expert_weights):
            wr.writerow([g, repr(float(v))])
