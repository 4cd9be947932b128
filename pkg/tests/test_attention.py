import json
import math
import time

import numpy as np
import pytest

from routegnn.attention import (AttentionConfig, AttentionHeadParams,
                                RouteAttentionParams, attention_probs,
                                init_route_attention, route_attn, route_mhsa,
                                route_scores)
from routegnn.graphs import Graph, batch, graph_from_edges, route_histogram, \
    shortest_distances
from routegnn.isomorphism import builtin_graphs, separation_model_config
from routegnn.model import RouteGraphNetwork, attention_dump
from routegnn.tensor import MASK_VALUE, Tensor
from routegnn.nn import grad_check
from routegnn.tensor import tsum, tanh


def random_inputs(rng, n, d_k, d_r, d_v, batch_shape=()):
    return {
        "q": rng.standard_normal(batch_shape + (n, d_k)),
        "k": rng.standard_normal(batch_shape + (n, d_k)),
        "qr": rng.standard_normal(batch_shape + (n, d_r)),
        "kr": rng.standard_normal(batch_shape + (n, n, d_r)),
        "v": rng.standard_normal(batch_shape + (n, d_v)),
        "vr": rng.standard_normal(batch_shape + (n, n, d_v)),
    }


# -- route_scores ------------------------------------------------------------------

def test_route_scores_reduces_to_node_term():
    rng = np.random.default_rng(0)
    x = random_inputs(rng, 4, 3, 2, 3)
    s = route_scores(Tensor(x["q"]), Tensor(x["k"]), Tensor(x["qr"]),
                     Tensor(np.zeros_like(x["kr"])), None)
    expected = x["q"] @ x["k"].T / np.sqrt(3 + 2)
    np.testing.assert_allclose(s.data, expected, atol=1e-12)


def test_route_scores_reduces_to_route_term():
    rng = np.random.default_rng(1)
    x = random_inputs(rng, 4, 3, 2, 3)
    s = route_scores(Tensor(np.zeros_like(x["q"])), Tensor(np.zeros_like(x["k"])),
                     Tensor(x["qr"]), Tensor(x["kr"]), None)
    expected = np.einsum("kf,klf->kl", x["qr"], x["kr"]) / np.sqrt(3 + 2)
    np.testing.assert_allclose(s.data, expected, atol=1e-12)


def test_route_scores_matches_double_loop_oracle():
    rng = np.random.default_rng(2)
    n, d_k, d_r = 5, 3, 2
    x = random_inputs(rng, n, d_k, d_r, 3)
    mask = np.where(rng.random((n, n)) < 0.2, MASK_VALUE, 0.0)
    s = route_scores(Tensor(x["q"]), Tensor(x["k"]), Tensor(x["qr"]),
                     Tensor(x["kr"]), mask).data
    expected = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            node = sum(x["q"][a, i] * x["k"][b, i] for i in range(d_k))
            route = sum(x["qr"][a, i] * x["kr"][a, b, i] for i in range(d_r))
            expected[a, b] = (node + route) / math.sqrt(d_k + d_r) + mask[a, b]
    np.testing.assert_allclose(s, expected, atol=1e-12)


# -- attention_probs ------------------------------------------------------------------

def test_softmax_probs_respect_mask():
    s = Tensor(np.array([[0.0, 0.0, MASK_VALUE]]))
    a = attention_probs(s, "softmax").data
    np.testing.assert_allclose(a, [[0.5, 0.5, 0.0]], atol=1e-12)


def test_sigmoid_probs():
    a = attention_probs(Tensor(np.array([[0.0, MASK_VALUE]])), "sigmoid").data
    assert a[0, 0] == 0.5
    assert a[0, 1] == 0.0


def test_fully_masked_softmax_row_is_zero():
    s = Tensor(np.full((2, 3), MASK_VALUE))
    a = attention_probs(s, "softmax").data
    np.testing.assert_array_equal(a, np.zeros((2, 3)))


def test_softmax_unmasked_rows_sum_to_one():
    rng = np.random.default_rng(3)
    scores = rng.standard_normal((4, 6))
    scores[:, -2:] = MASK_VALUE
    a = attention_probs(Tensor(scores), "softmax").data
    np.testing.assert_allclose(a.sum(axis=-1), np.ones(4), atol=1e-9)
    assert np.all(a >= 0) and np.all(a <= 1)


# -- route_attn ------------------------------------------------------------------------

def test_route_attn_identity_attention_returns_values():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((4, 3))
    out = route_attn(Tensor(np.eye(4)), Tensor(v), Tensor(np.zeros((4, 4, 3))))
    np.testing.assert_allclose(out.data, v, atol=1e-12)


def test_route_attn_identity_attention_reads_diagonal_routes():
    rng = np.random.default_rng(5)
    vr = rng.standard_normal((4, 4, 3))
    out = route_attn(Tensor(np.eye(4)), Tensor(np.zeros((4, 3))), Tensor(vr))
    np.testing.assert_allclose(out.data, vr[np.arange(4), np.arange(4)], atol=1e-12)


def test_route_attn_matches_triple_loop_oracle():
    rng = np.random.default_rng(6)
    n, d_v = 5, 3
    a = rng.standard_normal((n, n))
    v = rng.standard_normal((n, d_v))
    vr = rng.standard_normal((n, n, d_v))
    out = route_attn(Tensor(a), Tensor(v), Tensor(vr)).data
    expected = np.zeros((n, d_v))
    for k in range(n):
        for l in range(n):
            for c in range(d_v):
                expected[k, c] += a[k, l] * (v[l, c] + vr[k, l, c])
    np.testing.assert_allclose(out, expected, atol=1e-12)


# -- route_mhsa ---------------------------------------------------------------------------

def _hand_head_params():
    def t(v):
        return Tensor(np.array(v), requires_grad=True)

    return RouteAttentionParams([AttentionHeadParams(
        w_q=t([[0.5]]), w_k=t([[-0.25]]), w_v=t([[2.0]]),
        w_q_route=t([[1.0]]), w_k_route=t([[0.5]]), w_v_route=t([[-1.0]]))])


@pytest.mark.parametrize("score_map,expected", [
    ("softmax", [2.5659055472018153, 1.8771210220764563]),
    ("sigmoid", [2.588072906011539, 2.2796440926112025]),
])
def test_route_mhsa_single_head_hand_computed(score_map, expected):
    # N=2, d=1, d_k=d_v=d_r=1, H=[1,2], P[k,l]=1-delta(k,l), weights fixed by hand;
    # expected outputs were worked out with scalar arithmetic
    h = Tensor([[1.0], [2.0]])
    p = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None])
    cfg = AttentionConfig(n_heads=1, d_k=1, d_v=1, d_r=1, score_map=score_map)
    out = route_mhsa(h, p, np.zeros(2), np.zeros((2, 2)), _hand_head_params(), cfg)
    np.testing.assert_allclose(out.data[:, 0], expected, atol=1e-12)


def test_route_mhsa_batched_matches_unbatched():
    rng = np.random.default_rng(7)
    n, d, f = 5, 6, 3
    cfg = AttentionConfig(n_heads=2, d_k=2, d_v=3, d_r=2, score_map="softmax")
    params = init_route_attention(rng, d, f, cfg)
    h = rng.standard_normal((n, d))
    p = rng.standard_normal((n, n, f))
    single = route_mhsa(Tensor(h), Tensor(p), np.zeros(n), np.zeros((n, n)), params, cfg)
    batched = route_mhsa(Tensor(h[None]), Tensor(p[None]), np.zeros((1, n)),
                         np.zeros((1, n, n)), params, cfg)
    np.testing.assert_allclose(batched.data[0], single.data, atol=1e-12)


def test_route_mhsa_padding_leaves_real_rows_unchanged():
    rng = np.random.default_rng(8)
    g = graph_from_edges(4, [[0, 1], [1, 2], [2, 3], [3, 0]])
    big = graph_from_edges(7, [[i, i + 1] for i in range(6)])
    cfg = separation_model_config()
    model = RouteGraphNetwork(cfg, seed=11)
    alone = batch([g], [route_histogram(g, cfg.f_route)], pool=True)
    padded = batch([g, big], [route_histogram(g, cfg.f_route),
                              route_histogram(big, cfg.f_route)], pool=True)
    out_alone = model.forward(alone).data[0]
    out_padded = model.forward(padded).data[0]
    np.testing.assert_allclose(out_padded[:4], out_alone[:4], atol=1e-10)


def test_route_mhsa_gradients():
    rng = np.random.default_rng(9)
    n, d, f = 4, 4, 3
    cfg = AttentionConfig(n_heads=2, d_k=2, d_v=2, d_r=2, score_map="softmax")
    params = init_route_attention(rng, d, f, cfg)
    h = Tensor(rng.standard_normal((n, d)), requires_grad=True)
    p = Tensor(rng.standard_normal((n, n, f)), requires_grad=True)
    inputs = [h, p] + [getattr(hp, a) for hp in params.heads
                       for a in ("w_q", "w_k", "w_v", "w_q_route", "w_k_route", "w_v_route")]
    err = grad_check(
        lambda: tsum(tanh(route_mhsa(h, p, np.zeros(n), np.zeros((n, n)), params, cfg))),
        inputs)
    assert err < 1e-4


# -- locality -------------------------------------------------------------------------

def test_attention_respects_ball_radius():
    rng = np.random.default_rng(10)
    for trial in range(10):
        n = int(rng.integers(4, 9))
        upper = np.triu((rng.random((n, n)) < 0.35).astype(int), 1)
        g = Graph(upper + upper.T, node_features=np.ones((n, 1)))
        radius = int(rng.integers(0, 3))
        cfg = separation_model_config(radius=radius)
        model = RouteGraphNetwork(cfg, seed=trial)
        batched = batch([g], [route_histogram(g, cfg.f_route)], pool=True)
        capture = []
        model.forward(batched, capture=capture)
        dist = shortest_distances(g)
        for heads in capture:
            for a in heads:
                probs = a[0]
                for i in range(n):
                    for j in range(n):
                        if dist[i, j] > radius or dist[i, j] < 0:
                            assert probs[i, j] <= 1e-12
                        # the pool column stays attendable
                assert probs[i, batched.pool_index] >= 0


# -- equivariance and reduction ----------------------------------------------------------

def test_route_mhsa_permutation_equivariance():
    rng = np.random.default_rng(11)
    n, d, f = 6, 4, 3
    cfg = AttentionConfig(n_heads=2, d_k=2, d_v=2, d_r=2, score_map="softmax")
    params = init_route_attention(rng, d, f, cfg)
    h = rng.standard_normal((n, d))
    p = rng.standard_normal((n, n, f))
    out = route_mhsa(Tensor(h), Tensor(p), np.zeros(n), np.zeros((n, n)), params, cfg).data
    perm = rng.permutation(n)
    hp = h[perm]
    pp = p[np.ix_(perm, perm)]
    out_p = route_mhsa(Tensor(hp), Tensor(pp), np.zeros(n), np.zeros((n, n)),
                       params, cfg).data
    np.testing.assert_allclose(out_p, out[perm], atol=1e-10)


def _plain_attention_reference(h, heads, d_k, d_r):
    """Route-free multi-head dot-product attention, written with loops."""
    outs = []
    for (w_q, w_k, w_v) in heads:
        q = h @ w_q.T
        k = h @ w_k.T
        v = h @ w_v.T
        n = h.shape[0]
        scores = np.zeros((n, n))
        for a in range(n):
            for b in range(n):
                scores[a, b] = q[a] @ k[b] / math.sqrt(d_k + d_r)
        probs = np.zeros_like(scores)
        for a in range(n):
            e = np.exp(scores[a] - scores[a].max())
            probs[a] = e / e.sum()
        outs.append(probs @ v)
    return np.concatenate(outs, axis=-1)


def test_zero_routes_and_unlimited_radius_reduce_to_plain_attention():
    rng = np.random.default_rng(12)
    n, d, f = 6, 4, 3
    cfg = AttentionConfig(n_heads=2, d_k=2, d_v=2, d_r=2, score_map="softmax")
    params = init_route_attention(rng, d, f, cfg)
    h = rng.standard_normal((n, d))
    p = np.zeros((n, n, f))
    out = route_mhsa(Tensor(h), Tensor(p), np.zeros(n), np.zeros((n, n)), params, cfg).data
    reference = _plain_attention_reference(
        h, [(hp.w_q.data, hp.w_k.data, hp.w_v.data) for hp in params.heads],
        cfg.d_k, cfg.d_r)
    np.testing.assert_allclose(out, reference, atol=1e-12)


# -- injectivity smoke ---------------------------------------------------------------------

def test_sigmoid_mode_separates_nodes_with_different_route_multisets():
    g1, g2 = builtin_graphs("RegN6D3")
    cfg = separation_model_config(score_map="sigmoid")
    for seed in range(10):
        model = RouteGraphNetwork(cfg, seed=seed)
        outs = []
        for g in (g1, g2):
            g = graph_from_edges(g.n, g.edges(), node_features=np.ones((g.n, 1)))
            batched = batch([g], [route_histogram(g, cfg.f_route)], pool=True)
            outs.append(model.forward(batched).data[0, :g.n])
        gaps = np.abs(outs[0][:, None, :] - outs[1][None, :, :]).max(axis=-1)
        assert gaps.min() > 1e-9


# -- dump and determinism ---------------------------------------------------------------------

def test_attention_dump_rows_and_determinism():
    g = builtin_graphs("RegN6D3")[0]
    cfg = separation_model_config(score_map="softmax")

    def dump():
        model = RouteGraphNetwork(cfg, seed=5)
        gg = graph_from_edges(g.n, g.edges(), node_features=np.ones((g.n, 1)))
        batched = batch([gg], [route_histogram(gg, cfg.f_route)], pool=True)
        return attention_dump(model, batched)

    records = dump()
    assert len(records) == cfg.n_layers * cfg.n_heads
    for r in records:
        m = np.asarray(r["matrix"])
        np.testing.assert_allclose(m.sum(axis=-1), np.ones(m.shape[0]), atol=1e-9)
        assert r["pool_index"] == g.n
    assert json.dumps(records) == json.dumps(dump())


# -- complexity --------------------------------------------------------------------------------

def _forward_time(n, cfg, params, repeats=3):
    rng = np.random.default_rng(0)
    h = Tensor(rng.standard_normal((n, 8)))
    p = Tensor(rng.standard_normal((n, n, 4)))
    mask = np.zeros((n, n))
    nm = np.zeros(n)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        route_mhsa(h, p, nm, mask, params, cfg)
        best = min(best, time.perf_counter() - t0)
    return best


def test_forward_cost_scales_quadratically():
    cfg = AttentionConfig(n_heads=2, d_k=2, d_v=2, d_r=2, score_map="softmax")
    params = init_route_attention(np.random.default_rng(1), 8, 4, cfg)
    _forward_time(64, cfg, params)  # warm up
    t1 = _forward_time(256, cfg, params)
    t2 = _forward_time(512, cfg, params)
    assert 3.0 <= t2 / t1 <= 6.0, f"doubling n changed time by {t2 / t1:.2f}x"
