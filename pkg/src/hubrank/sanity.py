"""Self-checks: finite-difference gradient audit and a sine-family adaptation-gain toy."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .data_encoder import EncoderConfig, encode_data, init_data_encoder
from .meta_dataset import Task
from .model_encoder import D_FUNC, D_META, D_TOPO, HubFeatures, HubStats, encode_hub, init_model_encoder
from .numerics import AdamState, ParamStore, Tensor
from .scorer import init_scorer, score_hub
from .trainer import meta_step, substream, total_loss

GRAD_TOL = 1e-5

# Small shapes keep every instance cheap while exercising the same code paths.
_ENC = EncoderConfig(lookback=32, patch=8, d=8, subset=4, resamples=1)
_K = 4


def _random_hub(rng: np.random.Generator, K: int = _K) -> HubFeatures:
    v_a = rng.standard_normal((K, D_META))
    v_t = rng.standard_normal((K, D_TOPO))
    v_t /= np.linalg.norm(v_t, axis=1, keepdims=True)
    v_c = rng.standard_normal((K, D_FUNC))
    z = np.zeros(3)
    stats = HubStats(z, z + 1.0, np.zeros(D_FUNC), np.ones(D_FUNC))
    return HubFeatures([f"m{k}" for k in range(K)], v_a, v_t, v_c, stats)


def _probe_weights(rng, shape) -> np.ndarray:
    """Random readout so every output entry reaches the scalar being checked."""
    return rng.standard_normal(shape)


def _case_numerics(rng):
    params = ParamStore()
    params["x"] = rng.standard_normal((3, 5))
    params["W"] = rng.standard_normal((5, 4)) * 0.5
    params["b"] = rng.standard_normal(4) * 0.1
    params["V"] = rng.standard_normal((5, 4)) * 0.5
    w = _probe_weights(rng, (4,))

    def f():
        h = nx.linear(params["x"], params["W"], params["b"])
        g = nx.gelu(h) + nx.relu(h) * 0.5
        k = nx.matmul(params["x"], params["V"])
        att = nx.scaled_dot_attention(g, k, nx.exp(nx.mul(k, 0.3)))
        pooled = nx.mean_pool(att)
        both = nx.concat([nx.softmax(pooled, axis=0), nx.log_softmax(pooled, axis=0)], axis=0)
        return nx.tensor_sum(nx.mul(both, np.concatenate([w, -w]))) + nx.mean(nx.square(nx.transpose(h)))

    return f, params


def _case_data_encoder(rng):
    params = ParamStore()
    init_data_encoder(params, rng, _ENC)
    params["enc.b_patch"] = rng.standard_normal(_ENC.d) * 0.1
    subset = rng.standard_normal((_ENC.subset, _ENC.lookback))
    w = _probe_weights(rng, (_ENC.n_patches, _ENC.d))
    return (lambda: nx.tensor_sum(nx.mul(encode_data(subset, params, _ENC), w))), params


def _case_model_encoder(rng):
    params = ParamStore()
    hub = _random_hub(rng)
    init_model_encoder(params, rng, _ENC.d, hub.matrix.shape[1])
    w = _probe_weights(rng, (_K, _ENC.d))
    return (lambda: nx.tensor_sum(nx.mul(encode_hub(hub, params).E_m, w))), params


def _case_scorer(rng):
    params = ParamStore()
    init_scorer(params, rng, _ENC.d, G=3)
    for g in range(3):
        params[f"expert{g}.b1"] = rng.standard_normal(128) * 0.1
    params["router.b1"] = rng.standard_normal(16) * 0.1
    E_m = Tensor(np.abs(rng.standard_normal((_K, _ENC.d))))
    E_d = Tensor(rng.standard_normal((_ENC.n_patches, _ENC.d)))
    H = int(rng.integers(1, 1000))
    w = _probe_weights(rng, (_K,))
    return (lambda: nx.tensor_sum(nx.mul(score_hub(E_m, E_d, H, params).scores, w))), params


def _full_selector(rng, orientation: str):
    params = ParamStore()
    hub = _random_hub(rng)
    init_data_encoder(params, rng, _ENC)
    init_model_encoder(params, rng, _ENC.d, hub.matrix.shape[1])
    init_scorer(params, rng, _ENC.d, G=2)
    subset = rng.standard_normal((_ENC.subset, _ENC.lookback))
    r = rng.uniform(0, 1, _K)
    H = int(rng.choice([96, 192, 336, 720]))
    lam = float(rng.uniform(0.1, 1.0))

    def f():
        E_d = encode_data(subset, params, _ENC)
        res = score_hub(encode_hub(hub, params).E_m, E_d, H, params)
        return total_loss(res.scores, r, lam, orientation)

    return f, params


GRADCHECK_COMPONENTS: dict[str, Callable] = {
    "numerics": _case_numerics,
    "data_encoder": _case_data_encoder,
    "model_encoder": _case_model_encoder,
    "scorer": _case_scorer,
    "loss_reverse": lambda rng: _full_selector(rng, "reverse"),
    "loss_conventional": lambda rng: _full_selector(rng, "conventional"),
}


@dataclass
class GradCheckRow:
    component: str
    instances: int
    max_rel_error: float
    worst_param: str
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRAD_TOL


def run_gradcheck(components=None, instances: int = 20, max_entries: int = 4, seed: int = 0) -> list[GradCheckRow]:
    """Finite-difference audit at 64-bit, ``instances`` random draws per component."""
    names = list(GRADCHECK_COMPONENTS) if components is None else list(components)
    rows = []
    with nx.precision("f64"):
        for name in names:
            if name not in GRADCHECK_COMPONENTS:
                raise ValueError(f"unknown component {name!r}; choose from {', '.join(GRADCHECK_COMPONENTS)}")
            t0 = time.perf_counter()
            worst, worst_param = 0.0, ""
            for i in range(instances):
                rng = substream(seed, "gradcheck", name, i)
                f, params = GRADCHECK_COMPONENTS[name](rng)
                errs = nx.grad_check(f, params, max_entries=max_entries, seed=i)
                for pname, e in errs.items():
                    if not e <= worst:
                        worst, worst_param = e, pname
            rows.append(GradCheckRow(name, instances, worst, worst_param, time.perf_counter() - t0))
    return rows


# ---------------------------------------------------------------------------
# sine-family adaptation gain


@dataclass(frozen=True)
class SineConfig:
    hidden: int = 40
    shots: int = 10
    query_points: int = 50
    alpha: float = 0.01
    gamma: float = 0.002
    meta_steps: int = 1500
    tasks_per_step: int = 5
    eval_tasks: int = 100


def _sine_task(rng, n: int, amp: float, phase: float):
    x = rng.uniform(-5.0, 5.0, size=(n, 1))
    return x, amp * np.sin(x + phase)


def _sine_params(rng, hidden: int) -> ParamStore:
    p = ParamStore()
    p["l1.W"] = nx.glorot(rng, 1, hidden)
    p["l1.b"] = np.zeros(hidden)
    p["l2.W"] = nx.glorot(rng, hidden, 1)
    p["l2.b"] = np.zeros(1)
    return p


def _sine_loss(params: ParamStore, batch) -> Tensor:
    x, y = batch
    out = nx.mlp_forward(Tensor(x), [(params["l1.W"], params["l1.b"]), (params["l2.W"], params["l2.b"])], "relu")
    return nx.mean(nx.square(nx.sub(out, y)))


def _draw_task(rng, cfg: SineConfig):
    amp, phase = rng.uniform(0.1, 5.0), rng.uniform(0.0, math.pi)
    return _sine_task(rng, cfg.shots, amp, phase), _sine_task(rng, cfg.query_points, amp, phase)


def adaptation_mse(params: ParamStore, tasks, alpha: float) -> float:
    """Mean query MSE after one plain gradient step on each task's support points."""
    losses = []
    for support, query in tasks:
        theta = params.copy()
        theta.zero_grad()
        nx.backward(_sine_loss(theta, support))
        grads = theta.grads()
        adapted = ParamStore({k: t.data - alpha * grads[k] for k, t in theta.items()})
        losses.append(float(_sine_loss(adapted, query).data))
    return float(np.mean(losses))


@dataclass
class SineResult:
    seed: int
    pre: float
    post: float

    @property
    def improved(self) -> bool:
        return self.post < self.pre


def sine_adaptation_gain(seed: int, cfg: SineConfig = SineConfig()) -> SineResult:
    """Meta-train a small regressor on phase/amplitude-shifted sines; compare 1-step adaptation before and after."""
    params = _sine_params(substream(seed, "sine", "init"), cfg.hidden)
    eval_rng = substream(seed, "sine", "eval")
    eval_tasks = [_draw_task(eval_rng, cfg) for _ in range(cfg.eval_tasks)]
    pre = adaptation_mse(params, eval_tasks, cfg.alpha)
    rng = substream(seed, "sine", "train")
    state = AdamState()
    for _ in range(cfg.meta_steps):
        tasks = [Task(*_draw_task(rng, cfg), strategy="sine") for _ in range(cfg.tasks_per_step)]
        meta_step(params, tasks, _sine_loss, cfg.alpha, cfg.gamma, state, inner_steps=1)
    post = adaptation_mse(params, eval_tasks, cfg.alpha)
    return SineResult(seed, pre, post)
