import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gotreid import autodiff as ad
from gotreid import graph as G
from gotreid.errors import EdgeOutOfRange, ShapeMismatch, SingleHeadExchange


def make_params(d, K, heads, seed=0, **hyper):
    return G.GatParams.init(d, K, heads, np.random.default_rng(seed), **hyper)


def spec(adjacency):
    A = np.asarray(adjacency, dtype=np.int8)
    return G.GraphSpec(A.shape[0] - 1, A, A.shape[0] - 1)


def reference_bn(x, gamma, beta, eps):
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


# ---------------------------------------------------------------------------
# adjacency


def test_adjacency_single_local_node():
    g = G.build_adjacency(1, [])
    np.testing.assert_array_equal(g.adjacency, np.ones((2, 2)))
    assert g.global_index == 1 and g.num_nodes == 2


def test_adjacency_default_skeleton_row_sums():
    g = G.build_adjacency(13)
    assert len(G.DEFAULT_SKELETON) == 12
    deg = np.zeros(13, dtype=int)
    for i, j in G.DEFAULT_SKELETON:
        deg[i] += 1
        deg[j] += 1
    sums = g.adjacency.sum(axis=1)
    np.testing.assert_array_equal(sums[:13], 2 + deg)
    assert sums[13] == 14
    # shoulders have degree 3, wrists and ankles 1, every other keypoint 2
    np.testing.assert_array_equal(sums[:13], [4, 5, 5, 4, 4, 3, 3, 4, 4, 4, 4, 3, 3])


@given(st.integers(1, 9), st.data())
@settings(max_examples=50, deadline=None)
def test_adjacency_invariants(K, data):
    edges = data.draw(st.lists(st.tuples(st.integers(0, K - 1), st.integers(0, K - 1)),
                               max_size=15))
    A = G.build_adjacency(K, edges).adjacency
    assert set(np.unique(A)) <= {0, 1}
    np.testing.assert_array_equal(A, A.T)
    assert (np.diag(A) == 1).all() and (A[K] == 1).all() and (A[:, K] == 1).all()


def test_adjacency_edge_out_of_range():
    with pytest.raises(EdgeOutOfRange):
        G.build_adjacency(3, [(0, 3)])
    with pytest.raises(EdgeOutOfRange):
        G.build_adjacency(3, [(-1, 1)])


def test_skeleton_file_round_trip(tmp_path):
    path = tmp_path / "skel.txt"
    G.write_skeleton(G.DEFAULT_SKELETON, path)
    assert path.read_text().splitlines()[0] == "0 1"
    assert tuple(G.read_skeleton(path)) == G.DEFAULT_SKELETON
    path.write_text("# comment\n0 1\n\n2 3  # trailing\n")
    assert G.read_skeleton(path) == [(0, 1), (2, 3)]


# ---------------------------------------------------------------------------
# attention coefficients and head forward


def test_attention_isolated_self_loop():
    g = spec([[1, 0, 0], [0, 1, 1], [0, 1, 1]])
    p = make_params(4, 2, 2)
    x = np.random.default_rng(1).normal(size=(3, 3, 4))
    alpha = G.attention_coefficients(x, g, 0, p).data
    np.testing.assert_array_equal(alpha[:, 0], np.tile([1.0, 0.0, 0.0], (3, 1)))


def test_attention_two_identical_nodes_split_evenly():
    g = G.build_adjacency(1, [])
    p = make_params(4, 1, 2, seed=3)
    v = np.random.default_rng(2).normal(size=4)
    x = np.tile(v, (2, 2, 1))
    alpha = G.attention_coefficients(x, g, 1, p).data
    np.testing.assert_allclose(alpha, 0.5, atol=1e-15)


def path_setup():
    # nodes 0 - 1 - 2 on a path; a = ones, W = identity, one head of width 2
    g = spec([[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    p = make_params(2, 2, 1)
    p.W.data = np.eye(2)
    p.W_heads.data = np.eye(2)[None]
    p.att.data = np.ones((1, 4))
    x = np.array([[[1.0, 0.0], [0.0, 2.0], [-1.0, -1.0]]])
    return g, p, x


def test_attention_three_node_path_hand_values():
    g, p, x = path_setup()
    alpha = G.attention_coefficients(x, g, 0, p).data[0]
    # node sums s = (1, 2, -2); logit_ij = LeakyReLU(s_i + s_j) on edges
    row0 = np.exp([2.0, 3.0]) / np.exp([2.0, 3.0]).sum()
    row1 = np.exp([3.0, 4.0, 0.0]) / np.exp([3.0, 4.0, 0.0]).sum()
    row2 = np.exp([0.0, -0.8]) / np.exp([0.0, -0.8]).sum()
    expect = np.array([[row0[0], row0[1], 0.0], [*row1], [0.0, row2[0], row2[1]]])
    np.testing.assert_allclose(alpha, expect, atol=1e-15)
    assert alpha[0, 2] == 0.0 and alpha[2, 0] == 0.0


def test_head_forward_three_node_path_hand_values():
    g, p, x = path_setup()
    alpha = G.attention_coefficients(x, g, 0, p)
    out = G.gat_head_forward(x, g, 0, alpha, p).data[0]
    a = alpha.data[0]
    h = a @ x[0]
    expect = np.where(h > 0, h, np.exp(h) - 1.0)
    np.testing.assert_allclose(out, expect, atol=1e-15)
    # node 2 mixes (0, 2) and (-1, -1): first channel is negative -> ELU branch
    assert h[2, 0] < 0 and out[2, 0] == pytest.approx(np.exp(h[2, 0]) - 1, abs=1e-15)


def test_head_forward_single_node_identity():
    g = spec([[1]])
    p = make_params(3, 0, 1)
    p.W_heads.data = np.eye(3)[None]
    alpha = G.attention_coefficients(np.ones((1, 1, 3)), g, 0, p)
    x = np.array([[[0.5, 1.0, 2.0]]])
    np.testing.assert_allclose(G.gat_head_forward(x, g, 0, alpha, p).data, x, atol=1e-15)


def test_head_forward_uniform_over_identical_neighbours():
    g = G.build_adjacency(1, [])
    p = make_params(4, 1, 2, seed=5)
    v = np.random.default_rng(6).normal(size=4)
    x = np.tile(v, (1, 2, 1))
    alpha = G.attention_coefficients(x, g, 0, p)
    out = G.gat_head_forward(x, g, 0, alpha, p).data
    h = v @ p.W_heads.data[0]
    np.testing.assert_allclose(out[0, 0], np.where(h > 0, h, np.exp(h) - 1), atol=1e-14)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 1000), st.data())
@settings(max_examples=40, deadline=None)
def test_attention_rows_sum_to_one_and_mask_exact(K, B, seed, data):
    edges = data.draw(st.lists(st.tuples(st.integers(0, K - 1), st.integers(0, K - 1)),
                               max_size=10))
    g = G.build_adjacency(K, edges)
    p = make_params(4, K, 2, seed)
    x = np.random.default_rng(seed).normal(size=(B, K + 1, 4)) * 3
    for head in range(2):
        alpha = G.attention_coefficients(x, g, head, p).data
        np.testing.assert_allclose(alpha.sum(-1), 1.0, atol=1e-9)
        assert (alpha[:, ~g.mask] == 0.0).all()


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    K, d = 4, 6
    A = np.triu(rng.random((K, K)) < 0.5, 1)
    edges = [tuple(e) for e in np.argwhere(A)]
    perm = rng.permutation(K)
    inv = np.argsort(perm)
    edges_p = [(int(inv[i]), int(inv[j])) for i, j in edges]
    order = np.append(perm, K)  # new node q holds old node perm[q]; global stays last
    gat = G.GraphAttention.create(d, K, 2, edges, rng=seed)
    gat_p = G.GraphAttention(G.build_adjacency(K, edges_p), gat.params)
    x = rng.normal(size=(5, K + 1, d))
    out = gat.refine(x, training=True).data
    out_p = gat_p.refine(x[:, order], training=True).data
    np.testing.assert_allclose(out_p, out[:, order], atol=1e-12)


# ---------------------------------------------------------------------------
# channel exchange


def test_exchange_no_gate_equals_bn():
    p = make_params(4, 2, 2, theta=0.02)
    p.bn_gamma.data = 0.5 + np.random.default_rng(1).random(p.bn_gamma.shape)
    p.bn_beta.data = np.random.default_rng(2).normal(size=p.bn_beta.shape)
    x = np.random.default_rng(3).normal(size=(6, 3, 2, 2))
    out = G.channel_exchange(x, p).data
    np.testing.assert_allclose(out, reference_bn(x, p.bn_gamma.data, p.bn_beta.data, 1e-5),
                               atol=1e-12)


def test_exchange_theta_zero_unit_gamma_equals_bn():
    p = make_params(4, 2, 2, theta=0.0)
    x = np.random.default_rng(4).normal(size=(5, 3, 2, 2))
    np.testing.assert_allclose(G.channel_exchange(x, p).data,
                               G.channel_exchange(x, p, exchange=False).data, atol=0)


def test_exchange_two_heads_hand_value():
    p = make_params(4, 2, 2)
    p.bn_gamma.data[1, 0, 1] = 0.0
    x = np.random.default_rng(5).normal(size=(7, 3, 2, 2))
    out = G.channel_exchange(x, p).data
    bn = reference_bn(x, p.bn_gamma.data, p.bn_beta.data, p.bn_eps)
    np.testing.assert_allclose(out[:, 1, 0, 1], bn[:, 1, 1, 1], atol=1e-12)
    mask = np.ones(out.shape, dtype=bool)
    mask[:, 1, 0, 1] = False
    np.testing.assert_allclose(out[mask], bn[mask], atol=1e-12)


def test_exchange_negative_gamma_fires():
    p = make_params(4, 1, 2)
    p.bn_gamma.data[0, 1, 0] = -3.0
    x = np.random.default_rng(6).normal(size=(4, 2, 2, 2))
    out = G.channel_exchange(x, p).data
    bn = reference_bn(x, p.bn_gamma.data, p.bn_beta.data, p.bn_eps)
    np.testing.assert_allclose(out[:, 0, 1, 0], bn[:, 0, 0, 0], atol=1e-12)


@given(st.integers(2, 4), st.integers(0, 500))
@settings(max_examples=30, deadline=None)
def test_exchange_conservation(L, seed):
    rng = np.random.default_rng(seed)
    dh = 2
    p = make_params(dh * L, 2, L, seed)
    p.bn_gamma.data = rng.uniform(-0.1, 1.0, size=p.bn_gamma.shape)
    x = rng.normal(size=(5, 3, L, dh))
    out = G.channel_exchange(x, p).data
    bn = reference_bn(x, p.bn_gamma.data, p.bn_beta.data, p.bn_eps)
    gate = p.bn_gamma.data <= p.theta
    for i, l, c in np.argwhere(gate):
        others = [bn[:, i, m, c] for m in range(L) if m != l]
        np.testing.assert_allclose(out[:, i, l, c], np.mean(others, axis=0), atol=1e-9)
    np.testing.assert_allclose(out[:, ~gate], bn[:, ~gate], atol=1e-12)


def test_single_head_exchange_warns_and_counts():
    p = make_params(4, 1, 1)
    p.bn_gamma.data[0, 0, :2] = 0.0
    x = np.random.default_rng(7).normal(size=(4, 2, 1, 4))
    counter = {}
    with pytest.warns(SingleHeadExchange):
        out = G.channel_exchange(x, p, counter=counter).data
    assert counter["single_head_exchange"] == 2
    np.testing.assert_allclose(out, reference_bn(x, p.bn_gamma.data, p.bn_beta.data,
                                                 p.bn_eps), atol=1e-12)


def test_bn_running_stats_and_eval_mode():
    stats = G.BatchNormStats.zeros((3,))
    x = np.random.default_rng(8).normal(size=(10, 3))
    gamma, beta = ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(3))
    G.batch_norm(ad.Tensor(x), gamma, beta, 1e-5, stats, training=True)
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(0), atol=1e-15)
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(0, ddof=1), atol=1e-15)
    before = (stats.mean.copy(), stats.var.copy())
    y = G.batch_norm(ad.Tensor(x), gamma, beta, 1e-5, stats, training=False).data
    np.testing.assert_allclose(y, (x - before[0]) / np.sqrt(before[1] + 1e-5), atol=1e-14)
    np.testing.assert_array_equal(stats.mean, before[0])


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_zero_omega_is_bn():
    p = make_params(4, 2, 2)
    p.omega.data[:] = 0.0
    g = np.random.default_rng(9).normal(size=(5, 4))
    refined = np.random.default_rng(10).normal(size=(5, 3, 4))
    out = G.aggregate(refined, g, p).data
    np.testing.assert_allclose(out, reference_bn(g, 1.0, 0.0, p.bn_eps), atol=1e-14)


def test_aggregate_global_only():
    p = make_params(2, 0, 1)
    p.omega.data = np.array([1.0])
    g = np.array([[1.0, 2.0], [3.0, -2.0]])
    refined = np.array([[[0.5, 0.5]], [[-1.0, 0.0]]])
    out = G.aggregate(refined, g, p).data
    np.testing.assert_allclose(out, reference_bn(g, 1.0, 0.0, p.bn_eps) + refined[:, 0],
                               atol=1e-14)


def test_aggregate_two_sample_hand_sum():
    p = make_params(2, 1, 1)
    p.omega.data = np.array([0.5, 0.5])
    g = np.array([[1.0, 0.0], [-1.0, 2.0]])
    refined = np.array([[[1.0, 2.0], [3.0, 4.0]], [[0.0, -2.0], [2.0, 0.0]]])
    # BN(g): mean (0, 1), biased var (1, 1) -> rows (+-1 / sqrt(1 + eps), -+ same)
    s = 1.0 / np.sqrt(1.0 + 1e-5)
    expect = np.array([[s + 2.0, -s + 3.0], [-s + 1.0, s - 1.0]])
    np.testing.assert_allclose(G.aggregate(refined, g, p).data, expect, atol=1e-14)


@given(st.integers(1, 5), st.integers(0, 5), st.sampled_from([(4, 1), (4, 2), (6, 3), (8, 4)]))
@settings(max_examples=25, deadline=None)
def test_shape_contract(B, K, dims):
    d, L = dims
    gat = G.GraphAttention.create(d, K, L, [], rng=0)
    nodes = np.random.default_rng(B).normal(size=(max(B, 2), K + 1, d))
    out = gat(nodes, nodes[:, K])
    assert out.shape == (max(B, 2), d)


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        make_params(6, 2, 4)
    gat = G.GraphAttention.create(4, 2, 2, [], rng=0)
    with pytest.raises(ShapeMismatch):
        gat.refine(np.zeros((2, 4, 4)))


def test_default_init_values():
    p = make_params(8, 3, 2)
    np.testing.assert_array_equal(p.bn_gamma.data, 1.0)
    np.testing.assert_array_equal(p.bn_beta.data, 0.0)
    np.testing.assert_allclose(p.omega.data, 0.25)
    bound = np.sqrt(6.0 / (8 + 4))
    assert np.abs(p.W.data).max() <= bound and np.abs(p.W_heads.data).max() <= bound
    assert (p.leaky_slope, p.bn_eps, p.theta) == (0.2, 1e-5, 0.02)


def test_no_warning_when_gate_idle():
    p = make_params(4, 1, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        G.channel_exchange(np.random.default_rng(0).normal(size=(3, 2, 1, 4)), p)
