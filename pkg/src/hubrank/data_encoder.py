"""Patch-level dataset embedding from a random subset of univariate windows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ParamStore, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    lookback: int = 96
    patch: int = 16
    d: int = 64
    subset: int = 32
    resamples: int = 8

    def __post_init__(self):
        if min(self.lookback, self.patch, self.d, self.subset, self.resamples) < 1:
            raise ValueError("encoder sizes must be positive")
        if self.patch > self.lookback:
            raise ValueError(f"patch size {self.patch} exceeds look-back {self.lookback}")

    @property
    def n_patches(self) -> int:
        return self.lookback // self.patch


def sample_subset(values: np.ndarray, L: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """Draw B z-normalized length-L windows uniformly over (channel, start).

    ``values`` is the (T, C) train segment of a dataset.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    T, C = values.shape
    n_starts = T - L + 1
    if n_starts < 1:
        raise ValueError(f"no channel has {L} contiguous points (train length {T})")
    flat = rng.integers(0, C * n_starts, size=B)
    ch, start = flat // n_starts, flat % n_starts
    idx = start[:, None] + np.arange(L)[None, :]
    win = values[idx, ch[:, None]]
    mu = win.mean(axis=1, keepdims=True)
    sd = np.maximum(win.std(axis=1, keepdims=True), 1e-8)
    return (win - mu) / sd


def patchify(x: np.ndarray, S: int) -> np.ndarray:
    """(B, L) -> (B, P, S) with P = L // S; the remainder is dropped."""
    B, L = x.shape
    if S > L:
        raise ValueError(f"patch size {S} exceeds window length {L}")
    P = L // S
    return x[:, : P * S].reshape(B, P, S)


def positional_encoding(P: int, d: int) -> np.ndarray:
    if d % 2:
        raise ValueError("embedding width must be even for sinusoidal encoding")
    pos = np.arange(P, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.empty((P, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def init_data_encoder(params: ParamStore, rng: np.random.Generator, cfg: EncoderConfig) -> None:
    S, d = cfg.patch, cfg.d
    params["enc.W_patch"] = nx.glorot(rng, S, d)
    params["enc.b_patch"] = np.zeros(d)
    for name in ("W_q", "W_k", "W_v"):
        params[f"enc.{name}"] = nx.glorot(rng, d, d)


def encode_data(subset: np.ndarray, params: ParamStore, cfg: EncoderConfig) -> Tensor:
    """E_d (P x d): patch projection + positions, one self-attention pass per window, mean over windows."""
    subset = np.asarray(subset)
    if subset.ndim != 2 or subset.shape[1] < cfg.lookback:
        raise ValueError(f"subset must be (B, {cfg.lookback}), got {subset.shape}")
    W_p = params["enc.W_patch"]
    if W_p.shape != (cfg.patch, cfg.d):
        raise ValueError(f"enc.W_patch is {W_p.shape}, config needs ({cfg.patch}, {cfg.d})")
    for name in ("W_q", "W_k", "W_v"):
        if params[f"enc.{name}"].shape != (cfg.d, cfg.d):
            raise ValueError(f"enc.{name} is {params[f'enc.{name}'].shape}, config needs ({cfg.d}, {cfg.d})")
    patches = Tensor(patchify(subset[:, -cfg.lookback :], cfg.patch))
    E_patch = nx.linear(patches, W_p, params["enc.b_patch"])
    E_inp = E_patch + Tensor(positional_encoding(cfg.n_patches, cfg.d))
    Q = nx.matmul(E_inp, params["enc.W_q"])
    K = nx.matmul(E_inp, params["enc.W_k"])
    V = nx.matmul(E_inp, params["enc.W_v"])
    E_sa = nx.scaled_dot_attention(Q, K, V)
    return nx.mean_pool(E_sa)


def encode_resampled(values: np.ndarray, params: ParamStore, cfg: EncoderConfig, rng: np.random.Generator):
    """Encode ``cfg.resamples`` fresh subsets; return their order-invariant mean and the stack."""
    per = [encode_data(sample_subset(values, cfg.lookback, cfg.subset, rng), params, cfg).data for _ in range(cfg.resamples)]
    stack = np.stack(per)
    return nx.stable_mean(stack, axis=0), stack

