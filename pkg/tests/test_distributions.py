import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmfill import tensor as T
from gmmfill.distributions import (
    LOG_2PI,
    Categorical,
    DiagGaussian,
    DiscretePgm,
    GaussianMixture,
    kl_diag_gaussian,
    kl_monte_carlo,
    log_prob,
    make_rng,
    sample_categorical,
    sample_gaussian,
    sample_gmm,
    verify_decomposition,
)
from gmmfill.gradcheck import check_gradients
from gmmfill.tensor import ShapeError, Tensor


def gauss(mean, log_var):
    return DiagGaussian(np.atleast_1d(np.asarray(mean, float)), np.atleast_1d(np.asarray(log_var, float)))


def random_gauss(rng, d):
    return gauss(rng.normal(0, 1.5, d), rng.uniform(-1.5, 1.5, d))


# --- sampling ---------------------------------------------------------------


def test_zero_variance_sample_is_mean():
    g = gauss([1.0, -2.0], [-40.0, -40.0])
    x, _ = sample_gaussian(g, make_rng(0))
    assert np.allclose(x, g.mean, atol=1e-8)


def test_standard_normal_moments():
    rng = make_rng(1)
    big, _ = sample_gaussian(DiagGaussian(np.zeros((100_000, 2)), np.zeros((100_000, 2))), rng)
    assert np.all(np.abs(big.mean(axis=0)) <= 0.02)
    assert np.all(np.abs(big.var(axis=0) - 1.0) <= 0.05)


def test_sampling_is_deterministic_under_seed():
    g = gauss([0.3, 0.1], [0.2, -0.4])
    a, _ = sample_gaussian(g, make_rng(7))
    b, _ = sample_gaussian(g, make_rng(7))
    assert np.array_equal(a, b)


def test_reparameterized_sample_is_differentiable():
    mean = Tensor([0.5, -1.0], requires_grad=True)
    lv = Tensor([0.1, -0.3], requires_grad=True)
    noise = np.array([0.7, -1.2])
    from gmmfill.distributions import reparameterize

    err = check_gradients(lambda: T.sum(T.square(reparameterize(DiagGaussian(mean, lv), noise))), [mean, lv])
    assert err <= 1e-6


def test_categorical_degenerate():
    rng = make_rng(2)
    assert all(sample_categorical(Categorical([1.0, 0.0, 0.0]), rng) == 0 for _ in range(500))


def test_categorical_uniform_counts():
    rng = make_rng(3)
    c = Categorical([0.25] * 4)
    counts = np.bincount([sample_categorical(c, rng) for _ in range(100_000)], minlength=4)
    assert np.all((counts >= 24_000) & (counts <= 26_000))


def test_categorical_reproducible():
    c = Categorical([0.1, 0.2, 0.7])
    r1, r2 = make_rng(9), make_rng(9)
    assert [sample_categorical(c, r1) for _ in range(50)] == [sample_categorical(c, r2) for _ in range(50)]


def test_categorical_validation():
    with pytest.raises(ValueError):
        Categorical([0.5, 0.6])
    with pytest.raises(ValueError):
        Categorical([1.2, -0.2])


def test_gmm_single_component_is_gaussian_draw():
    g = gauss([1.0, 2.0], [0.0, 0.5])
    m = GaussianMixture.from_components([1.0], [g])
    r1, r2 = make_rng(11), make_rng(11)
    i, x = sample_gmm(m, r1)
    r2.random()  # the categorical draw consumes one uniform
    y, _ = sample_gaussian(g, r2)
    assert i == 0 and np.array_equal(x, y)


def test_gmm_well_separated_split():
    m = GaussianMixture.from_components([0.5, 0.5], [gauss([-10.0], [0.0]), gauss([10.0], [0.0])])
    rng = make_rng(12)
    signs = np.array([sample_gmm(m, rng)[1][0] > 0 for _ in range(100_000)])
    assert abs(signs.mean() - 0.5) <= 0.01


def test_gmm_mixture_mean_and_frequencies():
    w = np.array([0.2, 0.5, 0.3])
    comps = [gauss([1.0, -1.0], [0.0, 0.0]), gauss([3.0, 0.5], [-1.0, 0.3]), gauss([-2.0, 2.0], [0.2, -0.5])]
    m = GaussianMixture.from_components(w, comps)
    rng = make_rng(13)
    draws = [sample_gmm(m, rng) for _ in range(100_000)]
    xs = np.array([x for _, x in draws])
    idx = np.array([i for i, _ in draws])
    expected = sum(wi * c.mean for wi, c in zip(w, comps))
    assert np.all(np.abs(xs.mean(axis=0) - expected) <= 0.05)
    freq = np.bincount(idx, minlength=3) / idx.size
    se = np.sqrt(w * (1 - w) / idx.size)
    assert np.all(np.abs(freq - w) <= 3 * se)


def test_mixture_shape_errors():
    with pytest.raises(ShapeError):
        GaussianMixture(Categorical([0.5, 0.5]), np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        DiagGaussian(np.zeros(2), np.zeros(3))


# --- KL ---------------------------------------------------------------------


def test_kl_identity_and_known_value():
    p = gauss([0.3, -0.2], [0.1, 0.4])
    assert abs(kl_diag_gaussian(p, p)) <= 1e-12
    assert kl_diag_gaussian(gauss([0.0], [0.0]), gauss([1.0], [0.0])) == pytest.approx(0.5, abs=1e-15)


def test_kl_known_value_monte_carlo():
    est, se = kl_monte_carlo(gauss([0.0], [0.0]), gauss([1.0], [0.0]), 200_000, make_rng(14))
    assert abs(est - 0.5) <= 3 * se


def test_kl_matches_monte_carlo_on_random_pairs():
    rng = make_rng(15)
    for _ in range(100):
        d = int(rng.integers(1, 9))
        p, q = random_gauss(rng, d), random_gauss(rng, d)
        closed = kl_diag_gaussian(p, q)
        est, se = kl_monte_carlo(p, q, 200_000, rng)
        assert closed >= 0
        assert abs(closed - est) <= 5 * se


def test_monte_carlo_self_and_permutation():
    rng = make_rng(16)
    p = random_gauss(rng, 4)
    est, se = kl_monte_carlo(p, p, 10_000, rng)
    assert abs(est) <= 3 * se + 1e-15
    q = random_gauss(rng, 4)
    perm = [2, 0, 3, 1]
    a, sa = kl_monte_carlo(p, q, 200_000, make_rng(1))
    b, sb = kl_monte_carlo(gauss(p.mean[perm], p.log_var[perm]), gauss(q.mean[perm], q.log_var[perm]), 200_000, make_rng(2))
    assert abs(a - b) <= 3 * np.hypot(sa, sb)


def test_monte_carlo_requires_samples():
    with pytest.raises(ValueError):
        kl_monte_carlo(gauss([0.0], [0.0]), gauss([0.0], [0.0]), 10, make_rng(0))


def test_kl_dimension_mismatch():
    with pytest.raises(ShapeError):
        kl_diag_gaussian(gauss([0.0], [0.0]), gauss([0.0, 1.0], [0.0, 0.0]))


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-5, 5), st.floats(-4, 4), st.floats(-5, 5), st.floats(-4, 4)), min_size=1, max_size=8)
)
def test_kl_nonnegative_and_additive(rows):
    a = np.array(rows)
    p, q = gauss(a[:, 0], a[:, 1]), gauss(a[:, 2], a[:, 3])
    total = kl_diag_gaussian(p, q)
    assert total >= -1e-12
    parts = sum(kl_diag_gaussian(gauss(r[0], r[1]), gauss(r[2], r[3])) for r in a)
    assert total == pytest.approx(parts, rel=1e-12, abs=1e-12)


def test_kl_two_dim_equals_sum_exactly():
    p, q = gauss([0.1, 0.7], [0.3, -0.2]), gauss([-0.5, 0.2], [0.0, 0.4])
    one = kl_diag_gaussian(gauss(0.1, 0.3), gauss(-0.5, 0.0)) + kl_diag_gaussian(gauss(0.7, -0.2), gauss(0.2, 0.4))
    assert kl_diag_gaussian(p, q) == pytest.approx(one, abs=1e-15)


def test_kl_tensor_path_matches_array_path_and_gradients():
    rng = make_rng(17)
    vals = [rng.standard_normal(5) for _ in range(4)]
    ts = [Tensor(v.copy(), requires_grad=True) for v in vals]
    kt = kl_diag_gaussian(DiagGaussian(ts[0], ts[1]), DiagGaussian(ts[2], ts[3]))
    ka = kl_diag_gaussian(gauss(vals[0], vals[1]), gauss(vals[2], vals[3]))
    assert kt.item() == pytest.approx(ka, rel=1e-14)
    err = check_gradients(lambda: kl_diag_gaussian(DiagGaussian(ts[0], ts[1]), DiagGaussian(ts[2], ts[3])), ts)
    assert err <= 1e-6


# --- log density ------------------------------------------------------------


def test_log_prob_standard_normal_at_zero():
    assert log_prob(gauss([0.0], [0.0]), [0.0]) == pytest.approx(-0.5 * LOG_2PI, abs=1e-15)
    assert -0.5 * LOG_2PI == pytest.approx(-0.9189385, abs=1e-7)


def test_log_prob_integrates_to_one():
    g = gauss([0.4], [np.log(0.7)])
    xs = np.linspace(-8, 8, 200_001)
    dens = np.exp(log_prob(g, xs[:, None]))
    assert np.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-6)


def test_log_prob_peaks_at_mean():
    g = gauss([1.3], [0.2])
    at_mean = log_prob(g, [1.3])
    others = log_prob(g, np.linspace(-5, 5, 101)[:, None])
    assert np.all(others <= at_mean)


def test_log_prob_dimension_error():
    with pytest.raises(ShapeError):
        log_prob(gauss([0.0, 0.0], [0.0, 0.0]), [1.0])


# --- decomposition oracle ---------------------------------------------------


def test_decomposition_zero_when_tables_agree():
    rng = make_rng(18)
    base = DiscretePgm.random(rng, sizes={"io": 3, "im": 2, "ic": 2, "zm": 2, "zc": 2})
    # choose model tables so the two joints coincide
    q_io = np.broadcast_to(base.p_io[base.im, base.ic], base.q_io.shape).copy()
    q_zc = np.broadcast_to(base.p_zc[base.ic], base.q_zc.shape).copy()
    q_zm = base.p_zm.copy()
    pgm = DiscretePgm(q_zm, q_zc, q_io, base.p_io, base.p_zc, base.p_zm, base.im, base.ic)
    lhs, rhs = verify_decomposition(pgm)
    assert abs(lhs) <= 1e-15 and abs(rhs) <= 1e-15


def test_decomposition_random_tables():
    rng = make_rng(19)
    for _ in range(50):
        lhs, rhs = verify_decomposition(DiscretePgm.random(rng))
        assert abs(lhs - rhs) <= 1e-10
        assert lhs > 0


def _with_q_zc(pgm, q_zc, q_io=None):
    return DiscretePgm(pgm.q_zm, q_zc, pgm.q_io if q_io is None else q_io, pgm.p_io, pgm.p_zc, pgm.p_zm, pgm.im, pgm.ic)


def _random_rows(rng, shape):
    t = rng.uniform(0.05, 1.0, shape)
    return t / t.sum(axis=-1, keepdims=True)


def test_decomposition_theta_perturbation():
    rng = make_rng(20)
    for _ in range(20):
        pgm = DiscretePgm.random(rng)
        moved = _with_q_zc(pgm, _random_rows(rng, pgm.q_zc.shape))
        (a0, b0, c0), (a1, b1, c1) = pgm.terms(), moved.terms()
        dl = verify_decomposition(moved)[0] - verify_decomposition(pgm)[0]
        # the masked-posterior term never sees theta; the generation term does,
        # through the expectation over z_c
        assert c1 == c0
        assert abs(dl - ((a1 - a0) + (b1 - b0))) <= 1e-10


def test_decomposition_theta_perturbation_with_zc_free_generator():
    rng = make_rng(23)
    for _ in range(20):
        pgm = DiscretePgm.random(rng)
        zm, zc, io = pgm.q_io.shape
        q_io = np.repeat(_random_rows(rng, (zm, 1, io)), zc, axis=1)
        base = _with_q_zc(pgm, pgm.q_zc, q_io)
        moved = _with_q_zc(base, _random_rows(rng, pgm.q_zc.shape))
        dl = verify_decomposition(moved)[0] - verify_decomposition(base)[0]
        assert abs(dl - (moved.terms()[1] - base.terms()[1])) <= 1e-10


def test_decomposition_support_mismatch_is_infinite_on_both_sides():
    rng = make_rng(21)
    pgm = DiscretePgm.random(rng, sizes={"io": 2, "im": 2, "ic": 2, "zm": 2, "zc": 2})
    p_zc = pgm.p_zc.copy()
    p_zc[pgm.ic] = [1.0, 0.0]
    bad = DiscretePgm(pgm.q_zm, pgm.q_zc, pgm.q_io, pgm.p_io, p_zc, pgm.p_zm, pgm.im, pgm.ic)
    lhs, rhs = verify_decomposition(bad)
    assert np.isinf(lhs) and np.isinf(rhs)


def test_pgm_rejects_bad_rows():
    rng = make_rng(22)
    pgm = DiscretePgm.random(rng)
    with pytest.raises(ValueError):
        DiscretePgm(pgm.q_zm * 2, pgm.q_zc, pgm.q_io, pgm.p_io, pgm.p_zc, pgm.p_zm)
