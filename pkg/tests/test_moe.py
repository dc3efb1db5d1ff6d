from types import SimpleNamespace

import numpy as np
import pytest

from gmmfill import tensor as T
from gmmfill.distributions import Categorical, DiagGaussian, GaussianMixture, make_rng
from gmmfill.gradcheck import check_gradients
from gmmfill.moe import (
    BestPrimitive,
    best_primitive,
    bm_loss,
    dominance,
    frequency_loss,
    gmm_loss,
    simulate_frequency_fixed_point,
)
from gmmfill.tensor import ShapeError, Tensor


def mixture(means, log_vars, weights=None):
    means = np.asarray(means, float)
    k = means.shape[0]
    w = np.full(k, 1.0 / k) if weights is None else weights
    return GaussianMixture(Categorical(w), means, np.asarray(log_vars, float))


def kl_loop(mp, lp, mq, lq):
    """Scalar-loop KL between diagonal Gaussians, written from the variance form."""
    total = 0.0
    for a, va, b, vb in zip(mp, np.exp(lp), mq, np.exp(lq)):
        total += np.log(np.sqrt(vb) / np.sqrt(va)) + (va + (a - b) ** 2) / (2 * vb) - 0.5
    return total


def test_identical_component_wins_with_zero_kl():
    target = DiagGaussian(np.array([0.3, -1.0]), np.array([0.1, 0.2]))
    m = mixture([[0.3, -1.0], [2.0, 2.0]], [[0.1, 0.2], [0.0, 0.0]])
    best = best_primitive(m, target)
    assert int(best.index) == 0
    assert best.kls[0] == 0.0


def test_nearer_mean_wins():
    m = mixture([[0.0], [5.0]], [[0.0], [0.0]])
    best = best_primitive(m, DiagGaussian(np.array([4.9]), np.array([0.0])))
    assert int(best.index) == 1


def test_ties_go_to_lowest_index():
    m = mixture([[1.0], [1.0], [1.0]], [[0.0], [0.0], [0.0]])
    best = best_primitive(m, DiagGaussian(np.array([0.0]), np.array([0.0])))
    assert int(best.index) == 0


@pytest.mark.parametrize("seed", range(20))
def test_selection_matches_brute_force(seed):
    rng = make_rng(seed)
    k, d = rng.integers(1, 7), rng.integers(1, 9)
    means, lvs = rng.normal(0, 2, (k, d)), rng.uniform(-2, 2, (k, d))
    tm, tl = rng.normal(0, 2, d), rng.uniform(-2, 2, d)
    best = best_primitive(mixture(means, lvs), DiagGaussian(tm, tl))
    brute = [kl_loop(means[i], lvs[i], tm, tl) for i in range(k)]
    assert int(best.index) == int(np.argmin(brute))
    assert np.allclose(best.kls, brute, rtol=1e-12, atol=1e-12)


def test_appending_worse_component_keeps_selection():
    rng = make_rng(5)
    means, lvs = rng.normal(0, 1, (3, 4)), rng.uniform(-1, 1, (3, 4))
    target = DiagGaussian(rng.normal(0, 1, 4), rng.uniform(-1, 1, 4))
    before = best_primitive(mixture(means, lvs), target)
    far = np.vstack([means, np.full((1, 4), 50.0)])
    after = best_primitive(mixture(far, np.vstack([lvs, np.zeros((1, 4))])), target)
    assert int(after.index) == int(before.index)


def test_batched_selection_matches_rows():
    rng = make_rng(1)
    means, lvs = rng.normal(0, 1, (5, 3, 2)), rng.uniform(-1, 1, (5, 3, 2))
    tm, tl = rng.normal(0, 1, (5, 2)), rng.uniform(-1, 1, (5, 2))
    batch = best_primitive(SimpleNamespace(means=means, log_vars=lvs), DiagGaussian(tm, tl))
    for r in range(5):
        row = best_primitive(mixture(means[r], lvs[r]), DiagGaussian(tm[r], tl[r]))
        assert batch.index[r] == row.index


def test_selection_dimension_mismatch():
    with pytest.raises(ShapeError):
        best_primitive(mixture([[0.0, 0.0]], [[0.0, 0.0]]), DiagGaussian(np.zeros(3), np.zeros(3)))


def test_frequency_loss_hand_values():
    best = BestPrimitive(index=np.array(0), kls=np.zeros(2))
    assert frequency_loss(Tensor([0.5, 0.5]), best).item() == 0.5
    assert frequency_loss(Tensor([1.0, 0.0]), best).item() == 0.0


def test_frequency_loss_range():
    rng = make_rng(2)
    for _ in range(200):
        k = int(rng.integers(1, 7))
        alpha = T.softmax(Tensor(rng.normal(0, 3, k)))
        best = BestPrimitive(index=np.array(rng.integers(k)), kls=np.zeros(k))
        v = frequency_loss(alpha, best).item()
        assert 0.0 <= v <= 2.0


def test_frequency_loss_gradient_through_softmax():
    logits = Tensor(np.array([0.2, -0.4, 1.0]), requires_grad=True)
    best = BestPrimitive(index=np.array(1), kls=np.zeros(3))
    assert check_gradients(lambda: frequency_loss(T.softmax(logits), best), [logits]) < 1e-7


@pytest.mark.parametrize("p", [[0.7, 0.3], [0.25, 0.25, 0.25, 0.25]])
def test_frequency_fixed_point_is_true_frequency(p):
    alpha = simulate_frequency_fixed_point(p, steps=10_000, lr=0.05, batch=16, rng=make_rng(0))
    assert np.max(np.abs(alpha - np.asarray(p))) <= 0.02


def test_bm_loss_value_and_gradient():
    means = Tensor(np.array([[1.0], [3.0]]), requires_grad=True)
    lvs = Tensor(np.zeros((2, 1)), requires_grad=True)
    target = DiagGaussian(np.zeros(1), np.zeros(1))
    m = GaussianMixture(Categorical([0.5, 0.5]), means, lvs)
    best = best_primitive(m, target)
    assert int(best.index) == 0
    with T.Tape() as tape:
        loss = bm_loss(m, best, target)
    tape.backward(loss)
    assert loss.item() == pytest.approx(0.5, abs=1e-15)
    assert means.grad[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert means.grad[1, 0] == 0.0


def test_bm_loss_zero_at_match():
    mean = Tensor(np.array([[0.5, -0.5]]), requires_grad=True)
    lv = Tensor(np.array([[0.1, 0.3]]), requires_grad=True)
    m = GaussianMixture(Categorical([1.0]), mean, lv)
    target = DiagGaussian(np.array([0.5, -0.5]), np.array([0.1, 0.3]))
    best = best_primitive(m, target)
    with T.Tape() as tape:
        loss = bm_loss(m, best, target)
    tape.backward(loss)
    assert loss.item() == 0.0
    assert np.all(mean.grad == 0) and np.allclose(lv.grad, 0, atol=1e-15)


def test_bm_loss_reaches_both_sides():
    rng = make_rng(4)
    means = Tensor(rng.normal(0, 1, (3, 2)), requires_grad=True)
    lvs = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
    tm = Tensor(rng.normal(0, 1, 2), requires_grad=True)
    tl = Tensor(rng.uniform(-1, 1, 2), requires_grad=True)
    m = GaussianMixture(Categorical(np.full(3, 1 / 3)), means, lvs)
    best = best_primitive(m, DiagGaussian(tm, tl))
    err = check_gradients(lambda: bm_loss(m, best, DiagGaussian(tm, tl)), [means, lvs, tm, tl])
    assert err < 1e-6


def test_gmm_loss_is_sum_of_parts():
    rng = make_rng(6)
    logits = Tensor(rng.normal(0, 1, 3), requires_grad=True)
    means = Tensor(rng.normal(0, 1, (3, 2)), requires_grad=True)
    lvs = Tensor(rng.uniform(-1, 1, (3, 2)), requires_grad=True)
    target = DiagGaussian(rng.normal(0, 1, 2), rng.uniform(-1, 1, 2))
    m = GaussianMixture(Categorical(np.full(3, 1 / 3)), means, lvs)
    best = best_primitive(m, target)
    total, lf, lbm = gmm_loss(m, best, target, T.softmax(logits))
    assert total.item() == lf.item() + lbm.item()
    err = check_gradients(lambda: gmm_loss(m, best, target, T.softmax(logits))[0], [logits, means, lvs])
    assert err < 1e-5


def test_dominance_bounds():
    assert dominance(np.full(4, 0.25)) == 0.25
    assert dominance(np.array([0.0, 1.0, 0.0])) == 1.0
    rng = make_rng(3)
    for _ in range(50):
        a = rng.dirichlet(np.ones(5))
        assert 1 / 5 <= dominance(a) <= 1.0
