"""Small dense-tensor kernel with tape-based reverse-mode differentiation.

Only the handful of ops needed by the encoders, the scorer and the losses are
provided.  Each forward op records its parents and a closure that pushes the
upstream gradient back; ``backward`` walks that graph in reverse topological
order.
"""
from __future__ import annotations

import contextlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64, "f128": np.longdouble}
_default_dtype = np.float64


def set_precision(name: str) -> None:
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def get_dtype():
    return _default_dtype


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype new tensors are created with."""
    global _default_dtype
    old = _default_dtype
    set_precision(name)
    try:
        yield
    finally:
        _default_dtype = old


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=_default_dtype, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def validate(self) -> None:
        """Raise if any value (or gradient) is NaN or infinite."""
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in tensor {self.name or ''} {self.shape}")
        if self.grad is not None:
            if self.grad.shape != self.data.shape:
                raise ValueError("gradient shape differs from data shape")
            if not np.all(np.isfinite(self.grad)):
                raise FloatingPointError(f"non-finite gradient in tensor {self.name or ''}")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    live = tuple(p for p in parents if p.requires_grad)
    out.requires_grad = bool(live)
    out._parents = live
    out._backward = backward if live else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


# Gradients of interior nodes live in this map only while backward runs.
_pending: dict[int, np.ndarray] = {}


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    key = id(t)
    if key in _pending:
        _pending[key] = _pending[key] + g
    else:
        _pending[key] = g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf tensor with requires_grad reachable from ``loss``.

    Leaf gradients accumulate across calls until zeroed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    _pending.clear()
    _pending[id(loss)] = np.ones_like(loss.data)
    try:
        for node in reversed(order):
            g = _pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            else:
                node._backward(g)
    finally:
        _pending.clear()


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def square(x: Tensor) -> Tensor:
    def bw(g):
        _accumulate(x, 2.0 * x.data * g)

    return _make(x.data * x.data, (x,), bw)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def bw(g):
        _accumulate(x, g * out_data)

    return _make(out_data, (x,), bw)


def log(x: Tensor) -> Tensor:
    def bw(g):
        _accumulate(x, g / x.data)

    return _make(np.log(x.data), (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner
        _accumulate(x, g * d)

    return _make(out, (x,), bw)


ACTIVATIONS = {"relu": relu, "gelu": gelu}


# ---------------------------------------------------------------------------
# shape ops and reductions


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""

    def bw(g):
        _accumulate(x, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(x.data, -1, -2), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape

    def bw(g):
        _accumulate(x, g.reshape(old))

    return _make(x.data.reshape(shape), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def tensor_sum(x: Tensor, axis=None) -> Tensor:
    def bw(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis), 1.0 / n)


def stable_mean(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Mean whose value does not depend on the order of entries along ``axis``.

    Entries are sorted before the sequential sum, so permuting the inputs
    gives a bitwise identical result.
    """
    s = np.sort(x, axis=axis)
    return np.add.reduce(s, axis=axis) / x.shape[axis]


def mean_pool(x: Tensor) -> Tensor:
    """Order-invariant mean over axis 0."""
    n = x.shape[0]

    def bw(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape).copy())

    return _make(stable_mean(x.data, axis=0), (x,), bw)


# ---------------------------------------------------------------------------
# linear algebra and attention


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw)


def _softmax_np(v: np.ndarray, axis: int) -> np.ndarray:
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for rank {x.ndim}")
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    s = _softmax_np(x.data, axis)

    def bw(g):
        _accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise ValueError("log_softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        s = np.exp(out)
        _accumulate(x, g - s * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), bw)


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d)) V over the last two axes.

    With ``return_weights`` the attention matrix is returned as a second
    (differentiable) tensor.
    """
    d = Q.shape[-1]
    p = K.shape[-2]
    if d == 0 or p == 0:
        raise ValueError(f"attention needs d > 0 and p > 0 (d={d}, p={p})")
    if K.shape[-1] != d:
        raise ValueError(f"query/key width mismatch: {Q.shape} vs {K.shape}")
    if V.shape[-2] != p:
        raise ValueError(f"key/value length mismatch: {K.shape} vs {V.shape}")
    logits = mul(matmul(Q, transpose(K)), 1.0 / math.sqrt(d))
    A = softmax(logits, axis=-1)
    out = matmul(A, V)
    return (out, A) if return_weights else out


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, W)
    return y if b is None else add(y, b)


def mlp_forward(x: Tensor, layers: Sequence[tuple[Tensor, Tensor]], activation: str = "relu") -> Tensor:
    """Affine layers with ``activation`` between them (none after the last)."""
    act = ACTIVATIONS[activation]
    h = x
    width = x.shape[-1]
    for i, (W, b) in enumerate(layers):
        if W.shape[0] != width or b.shape[-1] != W.shape[1]:
            raise ValueError(
                f"layer {i}: expected weight ({width}, n) and bias (n,), got {W.shape} and {b.shape}"
            )
        h = linear(h, W, b)
        if i < len(layers) - 1:
            h = act(h)
        width = W.shape[1]
    return h


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named learnable tensors, iterated in lexicographic name order."""

    def __init__(self, items: dict[str, np.ndarray | Tensor] | None = None):
        self._t: dict[str, Tensor] = {}
        for k, v in (items or {}).items():
            self[k] = v

    def __setitem__(self, name: str, value) -> None:
        data = value.data if isinstance(value, Tensor) else value
        self._t[name] = Tensor(data, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self._t[name]

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __len__(self) -> int:
        return len(self._t)

    def names(self) -> list[str]:
        return sorted(self._t)

    def items(self):
        return [(k, self._t[k]) for k in self.names()]

    def slice(self, prefix: str) -> dict[str, Tensor]:
        return {k[len(prefix):]: t for k, t in self.items() if k.startswith(prefix)}

    def zero_grad(self) -> None:
        for t in self._t.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.items()}

    def copy(self) -> "ParamStore":
        return ParamStore({k: t.data.copy() for k, t in self.items()})

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self._t[k].data = np.array(v, copy=True)

    def astype(self, dtype) -> None:
        for t in self._t.values():
            t.data = t.data.astype(dtype)

    def num_values(self) -> int:
        return sum(t.data.size for t in self._t.values())


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(
    f: Callable[[], Tensor],
    params: ParamStore,
    epsilon: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
    numeric_precision: str = "f128",
) -> dict[str, float]:
    """Compare analytic gradients of ``f()`` with central differences.

    ``f`` must read parameters from ``params`` at call time.  The analytic side
    runs at the current precision; the numeric side is evaluated at
    ``numeric_precision`` (extended by default) so that rounding noise in the
    differences stays well below the tolerances being checked.  With
    ``max_entries`` only a seeded random subset of coordinates per parameter
    is probed.  Returns the max relative error per parameter; NaN anywhere
    yields ``inf`` for that parameter.
    """
    params.zero_grad()
    loss = f()
    backward(loss)
    analytic = {k: np.array(g, dtype=np.float64) for k, g in params.grads().items()}
    params.zero_grad()

    rng = np.random.default_rng(seed)
    orig = params.snapshot()
    errors: dict[str, float] = {}
    with precision(numeric_precision):
        dt = get_dtype()
        params.astype(dt)
        try:
            for name, p in params.items():
                flat = p.data.reshape(-1)
                n = flat.size
                idx = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
                worst = 0.0
                for i in idx:
                    base = flat[i]
                    flat[i] = base + dt(epsilon)
                    up = f().data
                    flat[i] = base - dt(epsilon)
                    down = f().data
                    flat[i] = base
                    num = float((up - down) / (2 * dt(epsilon)))
                    ana = float(analytic[name].reshape(-1)[i])
                    if not (math.isfinite(num) and math.isfinite(ana)):
                        worst = math.inf
                        break
                    rel = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
                    worst = max(worst, rel)
                errors[name] = worst
        finally:
            params.restore(orig)
    return errors


# ---------------------------------------------------------------------------
# checkpoint files

_MAGIC = b"HRCKPT01"


def save_checkpoint(path, params: ParamStore, meta: dict | None = None) -> None:
    """Write a JSON header followed by a little-endian float payload."""
    entries = []
    offset = 0
    chunks = []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f64", "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = {"format_version": 1, "params": entries, "payload_bytes": offset, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + hlen])
    payload = blob[16 + hlen :]
    if len(payload) != header["payload_bytes"]:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    store = ParamStore()
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"])
        store[e["name"]] = arr.astype(np.float64)
    return store, header.get("meta", {})


def params_to_bytes(params: ParamStore) -> bytes:
    return b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for _, t in params.items())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))
