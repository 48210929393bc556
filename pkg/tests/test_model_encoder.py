import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hubrank import numerics as nx
from hubrank.meta_dataset import default_hub, make_linear_ar
from hubrank.model_encoder import (
    DOMAIN_VOCAB,
    DagGraph,
    ModelCard,
    encode_hub,
    functional_embedding,
    hub_features,
    init_model_encoder,
    load_card,
    meta_embedding,
    probe_outputs,
    save_card,
    wl_topo_embedding,
)
from hubrank.numerics import ParamStore


def _chain(labels, ids=None):
    ids = ids or [f"n{i}" for i in range(len(labels))]
    return DagGraph([{"id": i, "op_label": l} for i, l in zip(ids, labels)], list(zip(ids, ids[1:])))


def _card(cid="m", arch="encoder_only", params=10**6, domains=("general",), forecaster=None, sig=None):
    return ModelCard(cid, arch, params, 1.5, 256, domains, _chain(["input", "linear", "output"]),
                     probe_signature=sig, forecaster=forecaster)


# ---------------------------------------------------------------------------
# cards and graphs


def test_card_validation():
    with pytest.raises(ValueError, match="architecture"):
        _card(arch="mixture")
    with pytest.raises(ValueError, match="positive"):
        _card(params=0)
    with pytest.raises(ValueError, match="vocabulary"):
        _card(domains=("astrology",))


def test_card_file_roundtrip(tmp_path):
    card = default_hub(8)[1].to_card()
    save_card(card, tmp_path / "c.json")
    back = load_card(tmp_path / "c.json")
    assert back.to_json() == card.to_json()
    assert np.array_equal(functional_embedding(back), functional_embedding(card))


def test_dag_validation_and_cycle_witness():
    with pytest.raises(ValueError, match="duplicate"):
        DagGraph([{"id": "a", "op_label": "x"}, {"id": "a", "op_label": "y"}], [])
    with pytest.raises(ValueError, match="unknown node"):
        DagGraph([{"id": "a", "op_label": "x"}], [("a", "b")])
    g = DagGraph([{"id": c, "op_label": "op"} for c in "abc"], [("a", "b"), ("b", "c"), ("c", "a")])
    with pytest.raises(ValueError, match="cycle: .*->"):
        wl_topo_embedding(g)


# ---------------------------------------------------------------------------
# meta-information


def test_meta_one_hot_and_log_features():
    v = meta_embedding(_card())
    assert list(v[:3]) == [1, 0, 0]
    assert v.shape == (16,)
    big = meta_embedding(_card(params=10**8))
    diff = np.nonzero(big != v)[0]
    assert list(diff) == [3] and big[3] - v[3] == 2.0


def test_domain_multi_hot():
    v = meta_embedding(_card(domains=("traffic", "general")))
    dom = v[6 : 6 + len(DOMAIN_VOCAB)]
    assert dom.sum() == 2 and dom[DOMAIN_VOCAB.index("traffic")] == 1


def test_reference_hub_architecture_counts():
    archs = {
        "moirai": "encoder_only", "units": "encoder_only", "moment": "encoder_only",
        "timesfm": "decoder_only", "timer": "decoder_only",
        "ttm": "encoder_decoder", "rose": "encoder_decoder", "chronos": "encoder_decoder",
    }
    onehots = np.stack([meta_embedding(_card(k, a))[:3] for k, a in archs.items()])
    assert list(onehots.sum(axis=0)) == [3, 2, 3]


def test_hub_normalizes_continuous_features():
    hub = hub_features([m.to_card() for m in default_hub(8)])
    cont = hub.v_a[:, 3:6]
    assert np.allclose(cont.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(cont.std(axis=0), 1, atol=1e-12)
    assert np.allclose(hub.v_c.mean(axis=0), 0, atol=1e-12)


def test_hub_without_spread_maps_to_zero():
    sig = np.ones(384)
    hub = hub_features([_card("a", sig=sig), _card("b", sig=sig)])
    assert np.array_equal(hub.v_a[:, 3:6], np.zeros((2, 3)))
    assert np.array_equal(hub.v_c, np.zeros((2, 32)))


# ---------------------------------------------------------------------------
# topology


def test_wl_single_node():
    v = wl_topo_embedding(DagGraph([{"id": "x", "op_label": "linear"}], []))
    assert math.isclose(np.linalg.norm(v), 1.0, rel_tol=1e-15)
    assert 1 <= np.count_nonzero(v) <= 4  # one label per iteration, buckets may collide
    assert np.array_equal(wl_topo_embedding(DagGraph([], [])), np.zeros(32))


def test_wl_isomorphic_graphs_match():
    a = _chain(["A", "B", "C"])
    b = _chain(["A", "B", "C"], ids=["z", "y", "x"])
    assert np.array_equal(wl_topo_embedding(a), wl_topo_embedding(b))


def test_wl_distinguishes_relabeled_chain():
    assert not np.array_equal(wl_topo_embedding(_chain(["A", "B", "C"])), wl_topo_embedding(_chain(["A", "C", "B"])))


def test_wl_invariant_under_node_renaming():
    rng = np.random.default_rng(0)
    m = default_hub(8)[2]
    g = m.dag()
    base = wl_topo_embedding(g)
    for _ in range(100):
        ids = [n["id"] for n in g.nodes]
        new = dict(zip(ids, (f"v{rng.integers(1e9)}_{i}" for i in rng.permutation(len(ids)))))
        order = rng.permutation(len(g.nodes))
        nodes = [{"id": new[g.nodes[i]["id"]], "op_label": g.nodes[i]["op_label"]} for i in order]
        edges = [(new[s], new[d]) for s, d in g.edges]
        assert np.array_equal(wl_topo_embedding(DagGraph(nodes, edges)), base)


# ---------------------------------------------------------------------------
# functionality


def test_identical_models_identical_signature():
    a = make_linear_ar("a", [0.5, 0.1]).to_card()
    b = make_linear_ar("b", [0.5, 0.1]).to_card()
    assert np.array_equal(functional_embedding(a), functional_embedding(b))
    # recomputation is bitwise stable
    assert np.array_equal(probe_outputs(a), probe_outputs(a))


def test_zero_forecaster_gives_zero_vector():
    card = _card(forecaster=lambda x, H: np.zeros((H, 1)))
    assert np.array_equal(functional_embedding(card), np.zeros(32))


def test_probe_shape_error():
    card = _card(forecaster=lambda x, H: np.zeros((H + 1, 1)))
    with pytest.raises(ValueError, match="forecast shape"):
        probe_outputs(card)


def test_ar_coefficients_distinguishable():
    a = probe_outputs(make_linear_ar("a", [0.9]).to_card(with_signature=False))
    b = probe_outputs(make_linear_ar("b", [0.1]).to_card(with_signature=False))
    cos = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cos < 0.99


# ---------------------------------------------------------------------------
# fusion


def _params(d_in=80, d=64, seed=0):
    p = ParamStore()
    init_model_encoder(p, np.random.default_rng(seed), d, d_in)
    return p


def test_zero_projection_gives_zero_embedding():
    hub = hub_features([m.to_card() for m in default_hub(8)])
    p = _params()
    p["model.W_m"] = np.zeros((64, 80))
    assert np.array_equal(encode_hub(hub, p).E_m.data, np.zeros((8, 64)))


def test_default_hub_embedding_shape():
    emb = encode_hub([m.to_card() for m in default_hub(8)], _params())
    assert emb.E_m.shape == (8, 64)
    assert emb.v_a.shape == (8, 16) and emb.v_t.shape == (8, 32) and emb.v_c.shape == (8, 32)
    assert np.all(np.isfinite(emb.E_m.data)) and np.all(emb.E_m.data >= 0)


def test_duplicate_card_duplicates_row():
    cards = [m.to_card() for m in default_hub(8)]
    stats = hub_features(cards).stats
    hub = hub_features(cards + [cards[3]], stats=stats)
    E = encode_hub(hub, _params()).E_m.data
    assert np.array_equal(E[3], E[8])


@given(st.integers(0, 7), st.integers(0, 7))
def test_row_depends_only_on_own_card(k, j):
    if k == j:
        return
    models = default_hub(8)
    cards = [m.to_card() for m in models]
    stats = hub_features(cards).stats
    p = _params()
    base = encode_hub(hub_features(cards, stats=stats), p).E_m.data
    other = list(cards)
    other[j] = make_linear_ar("swap", [0.3, 0.3], architecture="decoder_only").to_card()
    E = encode_hub(hub_features(other, stats=stats), p).E_m.data
    assert np.array_equal(E[k], base[k])


def test_projection_dimension_mismatch():
    with pytest.raises(ValueError, match="input features"):
        encode_hub([m.to_card() for m in default_hub(2)], _params(d_in=70))


def test_projection_gradients():
    hub = hub_features([m.to_card() for m in default_hub(8)])
    for i in range(3):
        p = _params(seed=i)
        w = np.random.default_rng(i).standard_normal((8, 64))
        errs = nx.grad_check(lambda: nx.tensor_sum(nx.mul(encode_hub(hub, p).E_m, w)), p, max_entries=40, seed=i)
        assert errs["model.W_m"] < 1e-5
