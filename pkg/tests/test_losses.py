import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranklsd import tensor as T
from ranklsd.losses import (
    GatheredBatch,
    LossParts,
    LossWeights,
    confidence_loss,
    edge_map_loss,
    junction_map_loss,
    position_loss,
    ranking_loss,
    total_loss,
)
from ranklsd.tensor import Tensor


def batch(c, labels, pred=None, tgt=None):
    labels = np.asarray(labels, dtype=float)
    pos = np.flatnonzero(labels > 0)
    n = len(pos)
    pred = np.zeros((n, 4)) if pred is None else np.asarray(pred, dtype=float).reshape(n, 4)
    tgt = np.zeros((n, 4)) if tgt is None else np.asarray(tgt, dtype=float).reshape(n, 4)
    return GatheredBatch(Tensor(np.asarray(c, dtype=float)), labels, Tensor(pred), tgt, pos)


def rank_batch(c, d):
    """All-positive batch whose quality distances equal ``d``."""
    n = len(c)
    tgt = np.zeros((n, 4))
    pred = np.zeros((n, 4))
    pred[:, 0] = d
    return batch(c, np.ones(n), pred, tgt)


def ranking_oracle(c, d):
    n = len(c)
    if n <= 1:
        return 0.0
    s = 0.0
    for i in range(n):
        for j in range(n):
            s += (1.0 / (1.0 + math.exp(-(c[j] - c[i])))) * (d[i] - d[j])
    return -s / (n * n)


def test_confidence_examples():
    assert confidence_loss(batch([0.5, 0.5], [1, 0])).item() == pytest.approx(0.693147, abs=1e-6)
    eps = 1e-7
    assert confidence_loss(batch([1 - eps, eps], [1, 0])).item() <= 1e-6
    assert confidence_loss(batch([0.9, 0.2], [1, 0])).item() == pytest.approx(0.164252, abs=1e-6)


def test_confidence_clamps_extremes():
    v = confidence_loss(batch([0.0, 1.0], [1, 0])).item()
    assert math.isfinite(v) and v == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_confidence_empty_errors():
    with pytest.raises(ValueError):
        confidence_loss(batch([], []))


def test_position_examples():
    t = np.array([[0.1, 0.2, 0.3, 0.4]])
    assert position_loss(batch([0.5], [1], t, t)).item() == 0.0
    assert position_loss(batch([0.5], [1], t + [0.1, 0, 0, 0], t)).item() == pytest.approx(0.1)
    p = np.array([[0.3, 0, 0, 0], [0.2, 0.3, 0, 0]])
    assert position_loss(batch([0.5, 0.5], [1, 1], p, np.zeros((2, 4)))).item() == pytest.approx(0.8)
    assert position_loss(batch([0.5], [0])).item() == 0.0


def test_position_normalized_flag():
    p = np.array([[0.3, 0, 0, 0], [0.2, 0.3, 0, 0]])
    b = batch([0.5, 0.5], [1, 1], p, np.zeros((2, 4)))
    assert position_loss(b, normalize=True).item() == pytest.approx(0.4)


def test_ranking_equal_confidences_zero():
    rng = np.random.default_rng(0)
    d = rng.random(7)
    assert abs(ranking_loss(rank_batch(np.full(7, 0.3), d)).item()) <= 1e-12


def test_ranking_worked_example():
    # -(1/4) * (sigmoid(0.6) - sigmoid(-0.6)), evaluated independently
    expected = -0.25 * math.tanh(0.3)
    assert expected == pytest.approx(-0.072828, abs=1e-6)
    assert ranking_loss(rank_batch([0.8, 0.2], [0.0, 1.0])).item() == pytest.approx(expected, abs=1e-12)
    assert ranking_loss(rank_batch([0.2, 0.8], [0.0, 1.0])).item() == pytest.approx(-expected, abs=1e-12)


def test_ranking_single_positive_zero():
    assert ranking_loss(rank_batch([0.4], [0.3])).item() == 0.0


def test_ranking_distances_stop_gradient():
    with T.new_tape() as tape:
        pred = Tensor(np.array([[0.2, 0, 0, 0], [0.5, 0, 0, 0]]), requires_grad=True)
        c = Tensor(np.array([0.7, 0.1]), requires_grad=True)
        b = GatheredBatch(c, np.ones(2), pred, np.zeros((2, 4)), np.arange(2))
        tape.backward(ranking_loss(b))
        assert pred.grad is None or np.all(pred.grad == 0)
        assert np.any(c.grad != 0)


def test_map_losses():
    z = [np.zeros((4, 4)), np.zeros((2, 2))]
    assert junction_map_loss([Tensor(m) for m in z], z).item() == 0.0
    d = np.zeros((4, 4))
    d[1, 2] = 3.0
    assert edge_map_loss([Tensor(d)], [np.zeros((4, 4))]).item() == 3.0
    d[0, 0] = 4.0
    assert edge_map_loss([Tensor(d)], [np.zeros((4, 4))]).item() == 5.0
    with pytest.raises(T.ShapeError):
        edge_map_loss([Tensor(np.zeros((4, 4)))], [np.zeros((2, 2))])


def test_map_loss_sums_levels():
    a = [Tensor(np.full((2, 2), 1.0)), Tensor(np.full((1, 1), 2.0))]
    g = [np.zeros((2, 2)), np.zeros((1, 1))]
    assert junction_map_loss(a, g).item() == pytest.approx(4.0)


def parts(vals):
    return LossParts(*(Tensor(float(v)) for v in vals))


def test_total_examples():
    assert total_loss(parts([0] * 5)).item() == 0.0
    assert total_loss(parts([1] * 5)).item() == 14.0
    assert total_loss(parts([3, 1, 4, 1, 5]), LossWeights(0, 0, 0, 0, 0)).item() == 0.0
    w = LossWeights(2, 3, 5, 7, 11)
    assert total_loss(parts([1, 1, 1, 1, 1]), w).item() == 28.0


def test_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(rank=-1.0)
    with pytest.raises(ValueError):
        LossWeights(conf=float("nan"))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0, 2)), min_size=0, max_size=9))
def test_ranking_matches_double_loop(pairs):
    c = [p[0] for p in pairs]
    d = [p[1] for p in pairs]
    got = ranking_loss(rank_batch(c, d)).item() if pairs else 0.0
    assert got == pytest.approx(ranking_oracle(c, d), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0, 2)), min_size=2, max_size=6),
       st.data())
def test_ranking_swap_negates_pair_term(pairs, data):
    c = [p[0] for p in pairs]
    d = [p[1] for p in pairs]
    n = len(c)
    i = data.draw(st.integers(0, n - 1))
    j = data.draw(st.integers(0, n - 1).filter(lambda k: k != i))

    def pair_term(cc):
        s = lambda a, b: 1.0 / (1.0 + math.exp(-(cc[b] - cc[a])))
        return s(i, j) * (d[i] - d[j]) + s(j, i) * (d[j] - d[i])

    swapped = list(c)
    swapped[i], swapped[j] = c[j], c[i]
    # the pair's own contribution flips sign when its confidences are exchanged
    assert pair_term(swapped) == pytest.approx(-pair_term(c), abs=1e-12)


def test_ranking_monotone_in_correct_ordering():
    d = [0.1, 0.9]
    grid = np.linspace(-0.9, 0.9, 19)
    vals = [ranking_loss(rank_batch([0.5 + g / 2, 0.5 - g / 2], d)).item() for g in grid]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.integers(0, 1)), min_size=1, max_size=8),
       st.randoms(use_true_random=False))
def test_confidence_permutation_invariant(rows, rnd):
    c = [r[0] for r in rows]
    y = [r[1] for r in rows]
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    a = confidence_loss(batch(c, y)).item()
    b = confidence_loss(batch([c[k] for k in perm], [y[k] for k in perm])).item()
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.floats(0.1, 10))
def test_position_linear_in_gap_scale(n, k):
    gap = np.random.default_rng(n).normal(size=(n, 4))
    a = position_loss(batch(np.full(n, 0.5), np.ones(n), gap, np.zeros((n, 4)))).item()
    b = position_loss(batch(np.full(n, 0.5), np.ones(n), gap * k, np.zeros((n, 4)))).item()
    assert b == pytest.approx(k * a, rel=1e-12)
