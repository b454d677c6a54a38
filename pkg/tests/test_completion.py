import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmplace import CompletionConfig, DepthImage, complete_depth

from oracles import complete_column_reference, complete_reference


def _sparse(rng, h, w, density=0.3):
    d = rng.uniform(1.0, 30.0, size=(h, w))
    v = rng.random((h, w)) < density
    d[~v] = 0.0
    return DepthImage(width=w, height=h, depth=d, valid=v)


def test_matches_reference_on_random_images(rng):
    cfg = CompletionConfig(sigma=3.0, max_gap=5)
    for _ in range(100):
        img = _sparse(rng, 16, 16, density=float(rng.uniform(0.05, 0.8)))
        out = complete_depth(img, cfg)
        ref_d, ref_v = complete_reference(img.depth, img.valid, cfg.sigma, cfg.max_gap)
        assert np.array_equal(out.valid, ref_v)
        assert np.allclose(out.depth[out.valid], ref_d[ref_v])


def test_agreeing_neighbours_blend():
    # column: valid 10 at row 0, valid 12 at row 3, two invalid between
    d = np.zeros((4, 1))
    v = np.zeros((4, 1), dtype=bool)
    d[0, 0], v[0, 0] = 10.0, True
    d[3, 0], v[3, 0] = 12.0, True
    out = complete_depth(DepthImage(width=1, height=4, depth=d, valid=v), CompletionConfig(sigma=3.0, max_gap=16))
    # row 1: one step from above, two from below
    assert out.depth[1, 0] == pytest.approx((2 * 10.0 + 1 * 12.0) / 3)
    assert out.depth[2, 0] == pytest.approx((1 * 10.0 + 2 * 12.0) / 3)


def test_disagreeing_neighbours_take_minimum():
    d = np.zeros((3, 1))
    v = np.zeros((3, 1), dtype=bool)
    d[0, 0], v[0, 0] = 5.0, True
    d[2, 0], v[2, 0] = 20.0, True
    out = complete_depth(DepthImage(width=1, height=3, depth=d, valid=v), CompletionConfig(sigma=3.0, max_gap=16))
    assert out.depth[1, 0] == pytest.approx(5.0)


def test_gap_longer_than_max_stays_invalid():
    h = 10
    d = np.zeros((h, 1))
    v = np.zeros((h, 1), dtype=bool)
    d[0, 0], v[0, 0] = 4.0, True
    d[9, 0], v[9, 0] = 4.0, True
    out = complete_depth(DepthImage(width=1, height=h, depth=d, valid=v), CompletionConfig(sigma=1.0, max_gap=7))
    assert not out.valid[1:9].any()
    # widen the allowance by one and the same gap fills
    out2 = complete_depth(DepthImage(width=1, height=h, depth=d, valid=v), CompletionConfig(sigma=1.0, max_gap=8))
    assert out2.valid[1:9].all()


def test_border_pixels_without_both_neighbours_stay_invalid(rng):
    img = _sparse(rng, 12, 8, density=0.4)
    out = complete_depth(img)
    for u in range(8):
        col_valid = np.nonzero(img.valid[:, u])[0]
        if col_valid.size == 0:
            assert not out.valid[:, u].any()
            continue
        top, bottom = col_valid[0], col_valid[-1]
        assert not out.valid[:top, u].any()
        assert not out.valid[bottom + 1:, u].any()


def test_original_pixels_untouched_and_input_unmodified(rng):
    img = _sparse(rng, 20, 20)
    before_d = img.depth.copy()
    before_v = img.valid.copy()
    out = complete_depth(img)
    assert np.array_equal(img.depth, before_d)
    assert np.array_equal(img.valid, before_v)
    assert np.allclose(out.depth[img.valid], img.depth[img.valid])
    assert (out.valid & img.valid).sum() == img.valid.sum()


def test_single_pass_no_chaining():
    """A filled pixel must not seed further fills in the same call."""
    h = 8
    d = np.zeros((h, 1))
    v = np.zeros((h, 1), dtype=bool)
    d[0, 0], v[0, 0] = 10.0, True
    d[3, 0], v[3, 0] = 10.0, True
    # rows 1, 2 fill (gap 2); rows 4..7 have no valid below, never fill,
    # even though rows 1-3 become valid in the output
    out = complete_depth(DepthImage(width=1, height=h, depth=d, valid=v), CompletionConfig(sigma=1.0, max_gap=6))
    assert out.valid[1, 0] and out.valid[2, 0]
    assert not out.valid[4:, 0].any()


def test_columns_are_independent(rng):
    img = _sparse(rng, 16, 10)
    out = complete_depth(img)
    perm = rng.permutation(10)
    shuffled = DepthImage(width=10, height=16, depth=img.depth[:, perm], valid=img.valid[:, perm])
    out_s = complete_depth(shuffled)
    assert np.array_equal(out_s.depth, out.depth[:, perm])
    assert np.array_equal(out_s.valid, out.valid[:, perm])


def test_empty_image():
    img = DepthImage(width=0, height=0, depth=np.zeros((0, 0)), valid=np.zeros((0, 0), dtype=bool))
    out = complete_depth(img)
    assert out.depth.shape == (0, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        CompletionConfig(sigma=0.0)
    with pytest.raises(ValueError):
        CompletionConfig(max_gap=0)


@settings(max_examples=60, deadline=None)
@given(
    depths=st.lists(st.floats(min_value=0.5, max_value=100.0), min_size=3, max_size=24),
    mask_bits=st.integers(min_value=0),
    sigma=st.floats(min_value=0.1, max_value=20.0),
    max_gap=st.integers(min_value=1, max_value=12),
)
def test_column_property_matches_reference(depths, mask_bits, sigma, max_gap):
    """Any single column agrees with the per-pixel reference scan."""
    h = len(depths)
    valid = np.array([(mask_bits >> k) & 1 == 1 for k in range(h)])
    col = np.where(valid, depths, 0.0)
    img = DepthImage(width=1, height=h, depth=col[:, None], valid=valid[:, None])
    out = complete_depth(img, CompletionConfig(sigma=sigma, max_gap=max_gap))
    ref_d, ref_v = complete_column_reference(col, valid, sigma, max_gap)
    assert np.array_equal(out.valid[:, 0], ref_v)
    assert np.allclose(out.depth[ref_v, 0], ref_d[ref_v])
    # filled values always lie between the two source depths
    filled = out.valid[:, 0] & ~valid
    for r in np.nonzero(filled)[0]:
        lo = min(d for d, ok in zip(col, valid) if ok)
        hi = max(d for d, ok in zip(col, valid) if ok)
        assert lo - 1e-9 <= out.depth[r, 0] <= hi + 1e-9
