import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hubrank import numerics as nx
from hubrank.data_encoder import (
    EncoderConfig,
    encode_data,
    encode_resampled,
    init_data_encoder,
    patchify,
    positional_encoding,
    sample_subset,
)
from hubrank.numerics import ParamStore

SMALL = EncoderConfig(lookback=32, patch=8, d=8, subset=5, resamples=3)


def _params(cfg=SMALL, seed=0):
    p = ParamStore()
    init_data_encoder(p, np.random.default_rng(seed), cfg)
    return p


def test_config_validation():
    assert EncoderConfig().n_patches == 6
    with pytest.raises(ValueError):
        EncoderConfig(lookback=8, patch=16)


def test_constant_channel_normalizes_to_zero():
    sub = sample_subset(np.full((200, 1), 4.2), 32, 6, np.random.default_rng(0))
    assert np.array_equal(sub, np.zeros((6, 32)))


def test_single_exact_window():
    x = np.arange(32.0)
    (w,) = sample_subset(x[:, None], 32, 1, np.random.default_rng(0))
    assert np.allclose(w, (x - x.mean()) / x.std(), atol=1e-15)


def test_subset_windows_are_z_normalized(rng):
    sub = sample_subset(rng.standard_normal((300, 3)) * 5 + 2, 32, 20, rng)
    assert np.allclose(sub.mean(axis=1), 0, atol=1e-12)
    assert np.allclose(sub.std(axis=1), 1, atol=1e-12)


def test_subset_too_short():
    with pytest.raises(ValueError, match="contiguous"):
        sample_subset(np.zeros((10, 2)), 32, 4, np.random.default_rng(0))


def test_subset_start_census():
    T, L = 400, 32
    x = np.random.default_rng(0).standard_normal(T)
    n = T - L + 1
    # every normalized window of a random series is distinct, so draws map back to starts
    lookup = {}
    for s in range(n):
        w = x[s : s + L]
        lookup[np.round((w - w.mean()) / w.std(), 9).tobytes()] = s
    sub = sample_subset(x[:, None], L, 10_000, np.random.default_rng(3))
    starts = {lookup[np.round(w, 9).tobytes()] for w in sub}
    assert len(starts) / n >= 0.95


def test_patchify_shapes_and_partition(rng):
    x = rng.standard_normal((2, 96))
    p = patchify(x, 16)
    assert p.shape == (2, 6, 16)
    assert np.array_equal(p.reshape(2, 96), x)
    y = rng.standard_normal((2, 100))
    q = patchify(y, 16)
    assert q.shape == (2, 6, 16) and np.array_equal(q.reshape(2, 96), y[:, :96])
    with pytest.raises(ValueError):
        patchify(y, 101)


def test_positional_encoding_values():
    pe = positional_encoding(6, 64)
    assert np.array_equal(pe[0], np.tile([0.0, 1.0], 32))
    assert np.all(np.abs(pe) <= 1.0)
    assert abs(pe[1, 0] - 0.84147098480789650665) < 1e-15
    with pytest.raises(ValueError, match="even"):
        positional_encoding(4, 7)


def test_encode_shape_default_config(rng):
    cfg = EncoderConfig()
    E = encode_data(rng.standard_normal((32, 96)), _params(cfg), cfg)
    assert E.shape == (6, 64)


@given(st.integers(8, 40), st.integers(1, 8), st.sampled_from([2, 4, 6]))
def test_encode_shape_contract(L, S, d):
    if S > L:
        return
    cfg = EncoderConfig(lookback=L, patch=S, d=d, subset=3)
    E = encode_data(np.random.default_rng(L).standard_normal((3, L)), _params(cfg), cfg)
    assert E.shape == (L // S, d)


def test_identical_windows_pool_to_single(rng):
    w = rng.standard_normal((1, 32))
    p = _params()
    both = encode_data(np.vstack([w, w]), p, SMALL).data
    one = encode_data(w, p, SMALL).data
    assert np.array_equal(both, one)


@given(st.integers(0, 10_000))
def test_encode_is_bitwise_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    sub = r.standard_normal((7, 32))
    p = _params(seed=seed % 17)
    a = encode_data(sub, p, SMALL).data
    b = encode_data(sub[r.permutation(7)], p, SMALL).data
    assert np.array_equal(a, b)


def test_zero_weights_match_hand_oracle(rng):
    p = _params()
    for name in ("enc.W_patch", "enc.W_q", "enc.W_k"):
        p[name] = np.zeros_like(p[name].data)
    pe = positional_encoding(SMALL.n_patches, SMALL.d)
    V = pe @ p["enc.W_v"].data
    expected = np.tile(V.mean(axis=0), (SMALL.n_patches, 1))  # uniform attention over positions
    got = encode_data(rng.standard_normal((4, 32)), p, SMALL).data
    assert np.max(np.abs(got - expected)) < 1e-14


def test_dimension_mismatch_errors(rng):
    p = _params()
    with pytest.raises(ValueError, match="subset"):
        encode_data(rng.standard_normal((4, 16)), p, SMALL)
    p["enc.W_q"] = np.zeros((4, 4))
    with pytest.raises(ValueError, match="enc.W_q"):
        encode_data(rng.standard_normal((4, 32)), p, SMALL)


def test_encoder_gradients():
    for i in range(5):
        r = np.random.default_rng(i)
        p = _params(seed=i)
        sub = r.standard_normal((4, 32))
        w = r.standard_normal((4, 8))
        errs = nx.grad_check(lambda: nx.tensor_sum(nx.mul(encode_data(sub, p, SMALL), w)), p, max_entries=6, seed=i)
        assert max(errs.values()) < 1e-5, errs


def test_resampled_encoding_is_deterministic(rng):
    vals = rng.standard_normal((500, 2))
    p = _params()
    a, sa = encode_resampled(vals, p, SMALL, np.random.default_rng(9))
    b, sb = encode_resampled(vals, p, SMALL, np.random.default_rng(9))
    assert sa.shape == (3, 4, 8)
    assert np.array_equal(a, b) and np.array_equal(sa, sb)
    assert math.isfinite(float(a.sum()))
