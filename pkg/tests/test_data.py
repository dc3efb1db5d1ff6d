import json

import numpy as np
import pytest

from gmmfill.config import ConfigError, CorpusSpec
from gmmfill.data import (
    FormatError,
    ImageSample,
    ManifestError,
    build_corpus,
    center_mask,
    decode_netpbm,
    gen_sample,
    load_corpus,
    mask_from_json,
    mode_variants,
    random_mask,
    read_image,
    render_texture,
    split,
    write_corpus,
    write_image,
)
from gmmfill.distributions import make_rng
from gmmfill.metrics import masked_l1

SMALL = CorpusSpec(n_train=6, n_test=3, height=16, width=16)


# masks


def test_center_mask_quarter_is_16_square():
    m = center_mask(32, 32, 0.25)
    rows, cols = np.nonzero(m.grid[0])
    assert m.grid.sum() == 256
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (8, 23, 8, 23)


@pytest.mark.parametrize("fraction", [0.0, -0.1, 0.95])
def test_center_mask_rejects_bad_fraction(fraction):
    with pytest.raises(ConfigError):
        center_mask(32, 32, fraction)


def test_center_mask_side_is_even_and_area_close():
    for f in (0.1, 0.2, 0.3, 0.5):
        side = int(np.sqrt(center_mask(32, 32, f).grid.sum()))
        assert side % 2 == 0
        assert abs(side * side - f * 1024) <= 2 * side + 4


def test_random_masks_cover_20_to_50_percent():
    rng = make_rng(3)
    for _ in range(200):
        m = random_mask(32, 32, rng)
        assert m.kind == "random"
        assert 0.2 <= m.fraction <= 0.5
        assert set(np.unique(m.grid)) <= {0.0, 1.0}


def test_random_mask_json_round_trip():
    m = random_mask(32, 32, make_rng(9))
    again = mask_from_json(32, 32, json.loads(json.dumps(m.to_json())))
    np.testing.assert_array_equal(m.grid, again.grid)


def test_unknown_mask_kind_is_a_manifest_error():
    with pytest.raises(ManifestError):
        mask_from_json(8, 8, {"kind": "blob"})


# samples


def test_split_recomposes_exactly():
    s = gen_sample(CorpusSpec(), 5)
    masked, comp = split(s)
    np.testing.assert_array_equal(masked + comp, s.image)
    assert np.all(masked[s.mask.grid.astype(bool).repeat(s.image.shape[0], 0)] == 0)


def test_sample_is_a_pure_function_of_seed_and_index():
    a, b = gen_sample(CorpusSpec(), 17), gen_sample(CorpusSpec(), 17)
    np.testing.assert_array_equal(a.image, b.image)
    assert (a.mode_label, a.context_seed) == (b.mode_label, b.context_seed)
    c = gen_sample(CorpusSpec(seed=1), 17)
    assert not np.array_equal(a.image, c.image)


def test_modes_share_visible_pixels_and_differ_inside_mask():
    s = gen_sample(CorpusSpec(), 0)
    variants = mode_variants(CorpusSpec(), s.context_seed, s.mask)
    keep = s.mask.grid == 0
    for v in variants[1:]:
        np.testing.assert_array_equal(v * keep, variants[0] * keep)
    np.testing.assert_array_equal(variants[s.mode_label], s.image)
    for i in range(4):
        for j in range(i + 1, 4):
            assert masked_l1(variants[i], variants[j], s.mask.grid) > 0.2


def test_textures_are_distinct_gratings():
    t = [render_texture(m, 4, 32, 32, 1) for m in range(4)]
    assert all(0.04 <= x.min() and x.max() <= 0.96 for x in t)
    means = [float(x.mean()) for x in t]
    assert all(b - a > 0.15 for a, b in zip(means, means[1:]))
    np.testing.assert_allclose(t[0][0, 0, :8], t[0][0, 5, :8])  # vertical bars at 0 degrees


def test_empirical_mode_frequencies_match_probs():
    spec = CorpusSpec(n_train=10_000, n_test=0)
    rng_labels = [gen_sample(spec, i).mode_label for i in range(10_000)]
    freq = np.bincount(rng_labels, minlength=4) / 10_000
    assert np.max(np.abs(freq - 0.25)) <= 0.015


def test_skewed_mode_probs_are_respected():
    spec = CorpusSpec(n_train=4000, n_test=0, modes=2, mode_probs=(0.8, 0.2))
    freq = np.mean([gen_sample(spec, i).mode_label for i in range(4000)])
    assert abs(freq - 0.2) < 0.03


def test_pixels_sit_on_the_8bit_grid():
    img = gen_sample(CorpusSpec(), 3).image
    np.testing.assert_array_equal(np.round(img * 255) / 255, img)


def test_image_sample_views():
    s = gen_sample(CorpusSpec(), 2)
    assert isinstance(s, ImageSample)
    np.testing.assert_array_equal(s.complement, s.mask.grid * s.image)


# netpbm


@pytest.mark.parametrize("channels", [1, 3])
def test_netpbm_round_trip(tmp_path, channels):
    img = np.round(make_rng(0).random((channels, 5, 7)) * 255) / 255
    write_image(tmp_path / "x.pgm", img)
    np.testing.assert_array_equal(read_image(tmp_path / "x.pgm"), img)


def test_netpbm_header_with_comments():
    buf = b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([0, 255])
    np.testing.assert_array_equal(decode_netpbm(buf), [[[0.0, 1.0]]])


def test_netpbm_errors_carry_offsets():
    with pytest.raises(FormatError) as e:
        decode_netpbm(b"P2\n1 1\n255\n0")
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        decode_netpbm(b"P5\n2 2\n65535\n" + bytes(8))
    assert e.value.offset == 7
    with pytest.raises(FormatError, match="truncated payload"):
        decode_netpbm(b"P5\n2 2\n255\n" + bytes(3))
    with pytest.raises(FormatError, match="integer"):
        decode_netpbm(b"P5\nx 2\n255\n")


def test_write_image_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        write_image(tmp_path / "x.pgm", np.zeros((2, 4, 4)))


# corpus on disk


def test_write_then_load_round_trips(tmp_path):
    written = write_corpus(SMALL, tmp_path / "c")
    loaded = load_corpus(tmp_path / "c")
    assert len(list((tmp_path / "c").glob("*.pgm"))) == 9
    np.testing.assert_array_equal(loaded.images, written.images)
    np.testing.assert_array_equal(loaded.masks, written.masks)
    np.testing.assert_array_equal(loaded.mode_labels, written.mode_labels)
    assert loaded.spec == SMALL
    assert list(loaded.indices("test")) == [6, 7, 8]


def test_rewrite_is_byte_identical(tmp_path):
    write_corpus(SMALL, tmp_path / "a")
    write_corpus(SMALL, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_non_empty_dir_needs_force(tmp_path):
    write_corpus(SMALL, tmp_path)
    with pytest.raises(FileExistsError):
        write_corpus(SMALL, tmp_path)
    write_corpus(SMALL, tmp_path, force=True)


def test_corrupt_manifest_is_named(tmp_path):
    write_corpus(SMALL, tmp_path)
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_corpus(tmp_path)
    (tmp_path / "manifest.json").unlink()
    with pytest.raises(ManifestError, match="missing"):
        load_corpus(tmp_path)
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "nope")


def test_manifest_count_mismatch(tmp_path):
    write_corpus(SMALL, tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["samples"].pop()
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="lists 8"):
        load_corpus(tmp_path)


def test_corpus_sample_matches_generator():
    c = build_corpus(SMALL)
    s = c.sample(4)
    g = gen_sample(SMALL, 4)
    np.testing.assert_array_equal(s.image, g.image)
    np.testing.assert_array_equal(s.mask.grid, g.mask.grid)


def test_random_policy_corpus():
    c = build_corpus(CorpusSpec(n_train=5, n_test=0, mask_policy="random"))
    fractions = c.masks.mean(axis=(1, 2, 3))
    assert np.all((fractions >= 0.2) & (fractions <= 0.5))
    assert len({tuple(m.ravel()) for m in c.masks}) > 1
