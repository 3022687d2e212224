import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gotreid import autodiff as ad
from gotreid import losses as L
from gotreid import ot
from gotreid.errors import (LabelOutOfRange, LossDimensionMismatch, NonFinite, NoValidTriplet,
                            ZeroNormRow)


def T(x):
    return ad.Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# config


def test_defaults_are_the_published_values():
    cfg = L.LossConfig()
    assert (cfg.triplet_margin, cfg.contrastive_margin, cfg.theta, cfg.phi) == (0.3, 2.0, 0.02, 0.5)
    assert (cfg.lambda_b, cfg.lambda_o, cfg.lambda_c, cfg.lambda_id) == (1.0, 1.0, 0.1, 1.0)


@pytest.mark.parametrize("kwargs", [{"triplet_margin": -0.1}, {"contrastive_margin": 0.0},
                                    {"phi": 1.2}, {"lambda_o": -1.0},
                                    {"lambda_c": float("inf")}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        L.LossConfig(**kwargs)


# ---------------------------------------------------------------------------
# identity loss


def test_identity_uniform_logits():
    for C in (2, 5, 16):
        assert float(L.identity_loss(T(np.zeros((4, C))), [0, 1, 1, 0]).data) == pytest.approx(
            math.log(C), abs=1e-14)


def test_identity_saturates():
    logits = np.zeros((1, 3))
    values = []
    for gap in (1.0, 10.0, 50.0):
        logits[0, 1] = gap
        values.append(float(L.identity_loss(T(logits), [1]).data))
    assert values[0] > values[1] > values[2] >= 0 and values[2] < 1e-20


def test_identity_hand_values():
    logits = [[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]]
    e = math.e
    expect = ((math.log(e + e ** 2 + e ** 3) - 3.0) + math.log(2.0 + e)) / 2.0
    assert float(L.identity_loss(T(logits), [2, 0]).data) == pytest.approx(expect, abs=1e-14)


def test_identity_errors():
    with pytest.raises(LabelOutOfRange):
        L.identity_loss(T(np.zeros((2, 3))), [0, 3])
    with pytest.raises(LabelOutOfRange):
        L.identity_loss(T(np.zeros((2, 3))), [-1, 0])
    with pytest.raises(LossDimensionMismatch):
        L.identity_loss(T(np.zeros((2, 1))), [0, 0])


# ---------------------------------------------------------------------------
# triplet loss


def test_triplet_margin_satisfied_is_zero():
    emb = [[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [5.0, 0.0]]
    assert float(L.hard_triplet_loss(T(emb), [0, 0, 1, 1], [0, 1, 0, 1]).data) == 0.0


def test_triplet_hinge_arithmetic():
    # every anchor: hardest cross-modality positive at 1.0, hardest negative at 0.2
    emb = [[0.0], [1.0], [0.2], [1.2]]
    ids, mods = [0, 0, 1, 1], [0, 1, 1, 0]
    value = float(L.hard_triplet_loss(T(emb), ids, mods, 0.3).data)
    assert value == pytest.approx(1.1, abs=1e-14)


def test_triplet_four_sample_hand_mining():
    emb = [[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [1.0, 0.5]]
    ids, mods = [0, 0, 1, 1], [0, 1, 0, 1]
    # anchor 0: pos d(0,1)=1, neg d(0,3)=sqrt(1.25); anchor 3: pos d(3,2)=sqrt(7.25), neg sqrt(1.25)
    # anchors 1 and 2 satisfy the margin
    expect = (max(0.0, 0.3 + 1.0 - math.sqrt(1.25))
              + max(0.0, 0.3 + math.sqrt(7.25) - math.sqrt(1.25))) / 4.0
    assert float(L.hard_triplet_loss(T(emb), ids, mods, 0.3).data) == pytest.approx(
        expect, abs=1e-14)


def test_triplet_requires_cross_modality_pairs():
    with pytest.raises(NoValidTriplet):
        L.hard_triplet_loss(T(np.zeros((4, 2))), [0, 0, 1, 1], [0, 0, 1, 1])
    with pytest.raises(NoValidTriplet):
        L.hard_triplet_loss(T(np.zeros((2, 2))), [0, 0], [0, 1])


@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_triplet_zero_loss_certificate(P, Q, seed):
    rng = np.random.default_rng(seed)
    centres = 10.0 * np.arange(P)[:, None] * np.ones((1, 3))
    emb, ids, mods = [], [], []
    for p in range(P):
        for m in (0, 1):
            for _ in range(Q):
                emb.append(centres[p] + rng.uniform(-1, 1, size=3))
                ids.append(p)
                mods.append(m)
    emb = np.array(emb)
    assert float(L.hard_triplet_loss(T(emb), ids, mods, 0.3).data) == 0.0


# ---------------------------------------------------------------------------
# contrastive loss


def test_contrastive_identical_positive_pairs():
    x = np.random.default_rng(0).normal(size=(3, 4, 5))
    assert float(L.multilevel_contrastive_loss(T(x), T(x), [0, 0, 0]).data) == 0.0


def test_contrastive_far_negatives():
    a = np.zeros((2, 3, 2))
    b = a + np.array([2.5, 0.0])
    assert float(L.multilevel_contrastive_loss(T(a), T(b), [1, 1], 2.0).data) == 0.0


def test_contrastive_formula_substitution():
    a = np.zeros((1, 2, 2))
    b = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert float(L.multilevel_contrastive_loss(T(a), T(b), [0]).data) == pytest.approx(0.5)


def test_contrastive_negative_hinge_value():
    a = np.zeros((1, 1, 1))
    b = np.full((1, 1, 1), 0.5)
    # (1 / (2 * 1 * 1)) * (2 - 0.5)^2
    assert float(L.multilevel_contrastive_loss(T(a), T(b), [1], 2.0).data) == pytest.approx(1.125)


@given(arrays(np.float64, (3, 2, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, (3, 2, 3), elements=st.floats(-3, 3)),
       arrays(np.int64, (3,), elements=st.integers(0, 1)))
@settings(max_examples=50, deadline=None)
def test_contrastive_swap_symmetry_and_nonnegative(a, b, y):
    ab = float(L.multilevel_contrastive_loss(T(a), T(b), y).data)
    ba = float(L.multilevel_contrastive_loss(T(b), T(a), y).data)
    assert ab >= 0 and abs(ab - ba) < 1e-12


def test_contrastive_shape_errors():
    with pytest.raises(LossDimensionMismatch):
        L.multilevel_contrastive_loss(T(np.zeros((2, 3, 4))), T(np.zeros((2, 2, 4))), [0, 1])
    with pytest.raises(LossDimensionMismatch):
        L.multilevel_contrastive_loss(T(np.zeros((2, 3, 4))), T(np.zeros((2, 3, 4))), [0])


# ---------------------------------------------------------------------------
# GOT term


def test_cosine_cost_matches_ot_cost():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 5, 3))
    np.testing.assert_allclose(L.cosine_cost(T(A), T(B), eps=0.0).data, ot.cost_matrix(A, B),
                               atol=1e-12)
    np.testing.assert_allclose(L.cosine_cost(T(A), T(B)).data, ot.cost_matrix(A, B), atol=1e-10)


def test_cosine_cost_zero_rows():
    A = np.zeros((1, 2, 3))
    with pytest.raises(ZeroNormRow):
        L.cosine_cost(T(A), T(A), eps=0.0)
    np.testing.assert_allclose(L.cosine_cost(T(A), T(A)).data, 1.0)


def test_frozen_energy_matches_gw_energy():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
    Ca, Cb = ot.cost_matrix(X, X), ot.cost_matrix(Y, Y)
    plans = rng.random((3, 4, 4))
    plans /= plans.sum(axis=(1, 2), keepdims=True)
    got = L.gw_energy_frozen(T(Ca), T(Cb), plans).data
    np.testing.assert_allclose(got, [ot.gw_energy(Ca[p], Cb[p], plans[p]) for p in range(3)],
                               atol=1e-14)


def test_got_loss_zero_for_identical_pairs():
    x = np.random.default_rng(3).normal(size=(4, 5, 3))
    loss, plans = L.got_loss(T(x), T(x), 0.5)
    assert abs(float(loss.data)) <= 1e-6
    assert plans.shape == (4, 5, 5)


def test_got_loss_is_mean_of_pair_distances():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 4, 3)), rng.normal(size=(3, 4, 3))
    loss, plans = L.got_loss(T(a), T(b), 0.5)
    per = [0.5 * (plans[p] * ot.cost_matrix(a[p], b[p])).sum()
           + 0.5 * ot.gw_energy(ot.cost_matrix(a[p], a[p]), ot.cost_matrix(b[p], b[p]), plans[p])
           for p in range(3)]
    assert float(loss.data) == pytest.approx(np.mean(per), abs=1e-12)


# ---------------------------------------------------------------------------
# total objective


def test_total_all_zero_weights():
    cfg = L.LossConfig(lambda_b=0, lambda_o=0, lambda_c=0, lambda_id=0)
    comps = {k: T(1.7) for k in L.COMPONENTS}
    total, parts = L.total_loss(comps, cfg)
    assert float(total.data) == 0.0 and parts["total"] == 0.0


def test_total_published_weights_unit_components():
    comps = {k: T(1.0) for k in L.COMPONENTS}
    total, parts = L.total_loss(comps, L.LossConfig())
    assert float(total.data) == pytest.approx(4.1, abs=1e-15)
    assert set(parts) == set(L.COMPONENTS) | {"total"}


def test_total_merge_identity_reuses_id():
    comps = {"id": T(2.0), "tri": T(1.0)}
    _, parts = L.total_loss(comps, L.LossConfig())
    assert parts["total"] == pytest.approx(1 * (2 + 1) + 1 * 2.0)


@given(st.sampled_from(L.COMPONENTS), st.floats(-5, 5),
       st.lists(st.floats(0, 3), min_size=5, max_size=5))
@settings(max_examples=50, deadline=None)
def test_total_linearity(key, delta, values):
    cfg = L.LossConfig()
    comps = dict(zip(L.COMPONENTS, (T(v) for v in values)))
    base = L.total_loss(comps, cfg)[1]["total"]
    comps[key] = T(values[L.COMPONENTS.index(key)] + delta)
    moved = L.total_loss(comps, cfg)[1]["total"]
    weight = {"id": cfg.lambda_b, "tri": cfg.lambda_b, "ot": cfg.lambda_o,
              "contrastive": cfg.lambda_c, "id_graph": cfg.lambda_id}[key]
    assert moved - base == pytest.approx(weight * delta, abs=1e-9)


def test_total_rejects_non_finite_and_unknown():
    with pytest.raises(NonFinite):
        L.total_loss({"id": T(float("nan"))})
    with pytest.raises(NonFinite):
        L.total_loss({"ot": T(float("inf"))})
    with pytest.raises(KeyError):
        L.total_loss({"center": T(1.0)})
