"""Rank agreement metrics: Kendall's tau, weighted tau and top-k hit rate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def _check(r_hat, r) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(r_hat, dtype=np.float64)
    b = np.asarray(r, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 1 or a.size < 2:
        raise ValueError("need at least two models")
    return a, b


def _pair_signs(r_hat: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    i, j = np.triu_indices(len(r), k=1)
    return i, j, np.sign(r[i] - r[j]) * np.sign(r_hat[i] - r_hat[j])


def kendall_tau(r_hat, r) -> float:
    a, b = _check(r_hat, r)
    K = len(b)
    _, _, s = _pair_signs(a, b)
    return 2.0 * math.fsum(s) / (K * (K - 1))


def descending_ranks(x: np.ndarray) -> np.ndarray:
    """Zero-based ranks, largest value first, ties averaged."""
    return rankdata(-np.asarray(x, dtype=np.float64), method="average") - 1.0


def weighted_kendall_tau(r_hat, r, weigh_by: str = "truth", return_pairs: bool = False):
    """Kendall's tau with additive hyperbolic pair weights 1/(rho_i+1) + 1/(rho_j+1).

    ``rho`` are descending ranks of the ground truth (or of the prediction
    with ``weigh_by="pred"``).
    """
    a, b = _check(r_hat, r)
    rho = descending_ranks(b if weigh_by == "truth" else a)
    i, j, s = _pair_signs(a, b)
    w = 1.0 / (rho[i] + 1.0) + 1.0 / (rho[j] + 1.0)
    num = math.fsum(w * s)
    den = math.fsum(w)
    tau = num / den
    if return_pairs:
        return tau, [(int(x), int(y), float(ww), float(ss)) for x, y, ww, ss in zip(i, j, w, s)]
    return tau


def pr_top_k(predicted_rankings: Sequence[Sequence[int]], truth_scores: Sequence[Sequence[float]], k: int) -> float:
    """Fraction of cases whose true best model is among the first k predicted."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not predicted_rankings:
        raise ValueError("no evaluation cases")
    hits = 0
    for ranking, truth in zip(predicted_rankings, truth_scores, strict=True):
        kk = min(k, len(ranking))
        best = int(np.argmax(truth))
        hits += best in list(ranking[:kk])
    return hits / len(predicted_rankings)


@dataclass
class RankEval:
    tau: float
    tau_w: float
    pairs: list = field(default_factory=list, repr=False)


def evaluate_ranking(r_hat, r, with_pairs: bool = False, weigh_by: str = "truth") -> RankEval:
    tw = weighted_kendall_tau(r_hat, r, weigh_by=weigh_by, return_pairs=with_pairs)
    if with_pairs:
        return RankEval(kendall_tau(r_hat, r), tw[0], tw[1])
    return RankEval(kendall_tau(r_hat, r), tw)
