import json

import numpy as np
import pytest

from gmmfill.config import TrainConfig
from gmmfill.data import read_image
from gmmfill.distributions import make_rng
from gmmfill.infer import complete, complete_per_primitive, output_name, reconstruct, write_completion_set
from gmmfill.model import init_params
from gmmfill.moe import dominance
from gmmfill.tensor import ShapeError

CFG = TrainConfig(height=16, width=16, d=4, k=3)


@pytest.fixture(scope="module")
def params():
    p = init_params(CFG, make_rng([0, 0]))
    # widen the primitives so different draws are clearly different
    p["head.logvar.b"].data[:] = 0.0
    return p


@pytest.fixture
def inputs():
    rng = make_rng(1)
    image = np.round(rng.random((1, 16, 16)) * 255) / 255
    mask = np.zeros((1, 16, 16))
    mask[:, 4:12, 4:12] = 1.0
    return (1 - mask) * image, mask


def test_visible_pixels_are_pinned_bit_exactly(params, inputs):
    x, m = inputs
    cs = complete(params, x, m, 8, make_rng(2))
    keep = m == 0
    for out in cs.outputs:
        np.testing.assert_array_equal(out[keep], x[keep])
        assert np.all((out >= 0) & (out <= 1))


def test_hidden_input_pixels_do_not_matter(params, inputs):
    x, m = inputs
    y = x + m * 0.7
    a = complete(params, x, m, 4, make_rng(3))
    b = complete(params, y, m, 4, make_rng(3))
    np.testing.assert_array_equal(a.outputs, b.outputs)


def test_fixed_seed_is_reproducible(params, inputs):
    x, m = inputs
    a = complete(params, x, m, 6, make_rng(4))
    b = complete(params, x, m, 6, make_rng(4))
    np.testing.assert_array_equal(a.outputs, b.outputs)
    assert a.primitives == b.primitives


def test_zero_samples_still_reports_alpha(params, inputs):
    x, m = inputs
    cs = complete(params, x, m, 0, make_rng(5))
    assert len(cs) == 0 and cs.outputs.shape == (0, 1, 16, 16)
    assert cs.alpha.shape == (3,)
    assert cs.alpha.sum() == pytest.approx(1.0)


def test_empty_mask_returns_the_input(params, inputs):
    x, _ = inputs
    cs = complete(params, x, np.zeros((1, 16, 16)), 3, make_rng(6))
    for out in cs.outputs:
        np.testing.assert_array_equal(out, x)


def test_dominance_is_max_alpha(params, inputs):
    x, m = inputs
    cs = complete(params, x, m, 1, make_rng(7))
    assert cs.dominance == float(dominance(cs.alpha)) == cs.alpha.max()


def test_primitive_draws_follow_alpha(params, inputs):
    x, m = inputs
    cs = complete(params, x, m, 3000, make_rng(8))
    freq = np.bincount(cs.primitives, minlength=3) / 3000
    np.testing.assert_allclose(freq, cs.alpha, atol=0.03)


def test_per_primitive_order_and_diversity(params, inputs):
    x, m = inputs
    cs = complete_per_primitive(params, x, m, 2, make_rng(9))
    assert cs.primitives == [0, 0, 1, 1, 2, 2]
    hole = m.astype(bool)
    assert np.abs(cs.outputs[0][hole] - cs.outputs[1][hole]).mean() > 0
    one = complete_per_primitive(params, x, m, 1, make_rng(9))
    assert one.primitives == [0, 1, 2]


def test_single_primitive_model_matches_forced_index(inputs):
    cfg = TrainConfig(height=16, width=16, d=4, k=1)
    p = init_params(cfg, make_rng([0, 0]))
    x, m = inputs
    a = complete(p, x, m, 3, make_rng(10))
    # with k=1 complete consumes one uniform per sample before the latent noise
    rng = make_rng(10)
    noise = []
    for _ in range(3):
        rng.random()
        noise.append(rng.standard_normal(4))
    from gmmfill.infer import _finish, _prepare

    b = _finish(p, *_prepare(p, x, m), [0, 0, 0], np.array(noise))
    np.testing.assert_array_equal(a.outputs, b.outputs)


def test_dimension_mismatch(params):
    with pytest.raises(ShapeError):
        complete(params, np.zeros((1, 8, 8)), np.zeros((1, 8, 8)), 1, make_rng(0))


def test_reconstruct_shape(params):
    rng = make_rng(11)
    imgs = rng.random((3, 1, 16, 16))
    masks = np.zeros((3, 1, 16, 16))
    masks[:, :, 4:12, 4:12] = 1
    out = reconstruct(params, imgs, masks)
    assert out.shape == imgs.shape


def test_write_completion_set(tmp_path, params, inputs):
    x, m = inputs
    cs = complete(params, x, m, 4, make_rng(12))
    paths = write_completion_set(cs, tmp_path, "img", seed=12)
    assert [p.name for p in paths] == [output_name("img", s, p) for s, p in enumerate(cs.primitives)]
    for p, out in zip(paths, cs.outputs):
        np.testing.assert_allclose(read_image(p), out, atol=0.5 / 255 + 1e-12)
    side = json.loads((tmp_path / "img.json").read_text())
    assert side["seed"] == 12 and len(side["outputs"]) == 4
    assert side["dominance"] == pytest.approx(max(side["alpha"]))
