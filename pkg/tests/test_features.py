import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmplace import DepthImage, ExtractorConfig, FeatureMap, IntensityImage, extract_local_features
from xmplace.features import GridFeatureExtractor


def _intensity(arr):
    arr = np.asarray(arr, dtype=float)
    return IntensityImage(width=arr.shape[1], height=arr.shape[0], values=arr)


def _depth(arr, valid=None):
    arr = np.asarray(arr, dtype=float)
    if valid is None:
        valid = arr > 0
    return DepthImage(width=arr.shape[1], height=arr.shape[0], depth=arr, valid=valid)


def test_shape_and_channel_count(rng):
    img = _intensity(rng.random((64, 64)))
    cfg = ExtractorConfig(grid_h=8, grid_w=8, orientations=8)
    fm = extract_local_features(img, cfg)
    assert (fm.h, fm.w, fm.c) == (8, 8, 10)
    assert fm.data.min() >= 0
    assert fm.as_matrix().shape == (64, 10)


def test_non_negativity_on_arbitrary_inputs(rng):
    cfg = ExtractorConfig(grid_h=4, grid_w=4, orientations=6)
    for _ in range(25):
        h = int(rng.integers(4, 40))
        w = int(rng.integers(4, 40))
        fm = extract_local_features(_intensity(rng.random((h, w))), cfg)
        assert fm.data.min() >= 0


def test_determinism(rng):
    img = _intensity(rng.random((32, 48)))
    cfg = ExtractorConfig(grid_h=4, grid_w=6)
    a = extract_local_features(img, cfg)
    b = extract_local_features(img, cfg)
    assert np.array_equal(a.data, b.data)


def test_constant_image_features():
    cfg = ExtractorConfig(grid_h=4, grid_w=4, orientations=8, normalize_input=False)
    fm = extract_local_features(_intensity(np.full((16, 16), 0.7)), cfg)
    assert np.allclose(fm.data[:, :, 0], 0.7)  # mean channel
    assert np.allclose(fm.data[:, :, 1], 0.0, atol=1e-7)  # std channel
    assert np.allclose(fm.data[:, :, 2:], 0.0)  # no gradients anywhere


def test_vertical_step_edge_concentrates_horizontal_bin():
    """A left/right value step inside a cell puts the histogram peak in the
    bin of horizontal gradients (axial angle zero)."""
    img = np.full((32, 32), 0.2)
    img[:, 20:] = 0.8  # step inside the third of four cell columns
    cfg = ExtractorConfig(grid_h=4, grid_w=4, orientations=8, normalize_input=False)
    fm = extract_local_features(_intensity(img), cfg)
    for row in range(4):
        hist = fm.data[row, 2, 2:]
        assert hist.sum() > 0
        assert int(np.argmax(hist)) == 0
        # the straddling cells see nothing but horizontal structure, so the
        # peak dominates every bin outside the smoothing neighbourhood
        assert hist[0] > 4 * hist[2:-1].max()


def test_locality_without_global_normalization(rng):
    cfg = ExtractorConfig(grid_h=4, grid_w=4, orientations=8, normalize_input=False)
    img = rng.random((32, 32))
    base = extract_local_features(_intensity(img), cfg)
    edited = img.copy()
    edited[8:16, 16:24] = rng.random((8, 8))  # strictly inside cell (1, 2)
    out = extract_local_features(_intensity(edited), cfg)
    mask = np.ones((4, 4), dtype=bool)
    mask[1, 2] = False
    assert np.array_equal(base.data[mask], out.data[mask])


@settings(max_examples=30, deadline=None)
@given(shift=st.floats(min_value=-0.3, max_value=0.3), seed=st.integers(0, 10_000))
def test_intensity_shift_changes_only_mean_channel(shift, seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.35, 0.65, size=(24, 24))
    cfg = ExtractorConfig(grid_h=4, grid_w=4, orientations=6, normalize_input=False)
    a = extract_local_features(_intensity(img), cfg)
    b = extract_local_features(_intensity(img + shift), cfg)
    assert np.allclose(b.data[:, :, 0] - a.data[:, :, 0], shift, atol=1e-9)
    assert np.allclose(b.data[:, :, 1:], a.data[:, :, 1:], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(min_value=0.05, max_value=50.0), seed=st.integers(0, 10_000))
def test_depth_scale_invariance_with_normalization(scale, seed):
    """With per-image max normalization on, rescaling all depths is a no-op."""
    rng = np.random.default_rng(seed)
    d = rng.uniform(1.0, 30.0, size=(24, 24))
    cfg = ExtractorConfig(grid_h=4, grid_w=4, orientations=6, normalize_input=True)
    a = extract_local_features(_depth(d), cfg)
    b = extract_local_features(_depth(d * scale), cfg)
    assert np.allclose(a.data, b.data, atol=1e-9)


def test_invalid_pixels_excluded(rng):
    d = rng.uniform(5.0, 10.0, size=(16, 16))
    valid = np.ones((16, 16), dtype=bool)
    valid[:4, :4] = False  # first cell fully invalid
    cfg = ExtractorConfig(grid_h=4, grid_w=4, normalize_input=False)
    fm = extract_local_features(_depth(d, valid), cfg)
    assert np.allclose(fm.data[0, 0], 0.0)
    # a partially invalid cell averages only its valid pixels
    valid2 = np.ones((16, 16), dtype=bool)
    valid2[0, 0] = False
    fm2 = extract_local_features(_depth(d, valid2), cfg)
    expect = d[:4, :4][valid2[:4, :4]].mean()
    assert fm2.data[0, 0, 0] == pytest.approx(expect)


def test_image_smaller_than_grid_is_error(rng):
    with pytest.raises(ValueError):
        extract_local_features(_intensity(rng.random((3, 10))), ExtractorConfig(grid_h=4, grid_w=4))


def test_histogram_rows_are_bounded_distributions(rng):
    """Each cell's orientation block sums to at most 1 (coherence scaling
    can only shrink it) and is zero exactly when the cell has no gradient."""
    img = rng.random((40, 40))
    cfg = ExtractorConfig(grid_h=5, grid_w=5, orientations=10)
    fm = extract_local_features(_intensity(img), cfg)
    sums = fm.data[:, :, 2:].sum(axis=2)
    assert (sums <= 1.0 + 1e-12).all()
    assert (sums >= 0.0).all()


def test_extractor_config_validation():
    with pytest.raises(ValueError):
        ExtractorConfig(grid_h=0, grid_w=4)
    with pytest.raises(ValueError):
        ExtractorConfig(orientations=1)
    assert ExtractorConfig(orientations=14).channels == 16


def test_feature_map_validation():
    with pytest.raises(ValueError):
        FeatureMap(h=2, w=2, c=3, data=np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        FeatureMap(h=1, w=1, c=1, data=np.array([[[-0.1]]]))
    with pytest.raises(ValueError):
        FeatureMap(h=1, w=1, c=1, data=np.array([[[np.nan]]]))


def test_grid_extractor_wrapper(rng):
    img = _intensity(rng.random((16, 16)))
    cfg = ExtractorConfig(grid_h=4, grid_w=4)
    wrapped = GridFeatureExtractor(cfg)
    assert np.array_equal(wrapped(img).data, extract_local_features(img, cfg).data)
