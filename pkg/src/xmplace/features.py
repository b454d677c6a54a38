"""Deterministic grid features standing in for a learned backbone.

The image is partitioned into a coarse grid; every cell is summarized by
its mean value, value standard deviation, and a gradient-magnitude-weighted
orientation histogram (normalized to unit sum per cell), giving
2 + orientations channels. Gradients are computed with stencils clamped to
the cell, so no cell reads pixels of another cell and edits inside one cell
perturb only that cell's features. All channels are O(1) by construction,
which keeps the soft-assignment logits of the downstream aggregation layer
in a sane range at its standard initialization.

``extract_local_features`` is the pluggable surface: anything satisfying
``FeatureExtractor`` (image in, non-negative feature map out) can replace
the grid extractor without touching downstream clustering or aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .geometry import DepthImage, IntensityImage


@dataclass(frozen=True)
class ExtractorConfig:
    """Grid geometry and channel layout of the deterministic extractor."""

    grid_h: int = 16
    grid_w: int = 48
    orientations: int = 14
    normalize_input: bool = True

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError(f"grid must be >= 1x1, got {self.grid_h}x{self.grid_w}")
        if self.orientations < 2:
            raise ValueError(f"orientations must be >= 2, got {self.orientations}")

    @property
    def channels(self) -> int:
        return 2 + self.orientations


@dataclass
class FeatureMap:
    """Non-negative h x w x c map of local features."""

    h: int
    w: int
    c: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.h, self.w, self.c):
            raise ValueError(
                f"data shape {self.data.shape} does not match declared "
                f"({self.h}, {self.w}, {self.c})"
            )
        if not np.isfinite(self.data).all():
            raise ValueError("feature map contains non-finite entries")
        if self.data.size and self.data.min() < 0:
            raise ValueError("feature map contains negative entries")

    def as_matrix(self) -> np.ndarray:
        """Flatten to (h*w, c) with row-major spatial order."""
        return self.data.reshape(self.h * self.w, self.c)


class FeatureExtractor(Protocol):
    """Interface for pluggable local-feature backbones."""

    def __call__(self, image: DepthImage | IntensityImage) -> FeatureMap: ...


def _clamped_neighbors(n: int, cell_of: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Left/right neighbor indices, pulled back to self at cell boundaries.
    idx = np.arange(n)
    left = np.maximum(idx - 1, 0)
    left = np.where(cell_of[left] == cell_of, left, idx)
    right = np.minimum(idx + 1, n - 1)
    right = np.where(cell_of[right] == cell_of, right, idx)
    return left, right


def extract_local_features(
    image: DepthImage | IntensityImage, cfg: ExtractorConfig | None = None
) -> FeatureMap:
    """Summarize an image as a grid of per-cell statistics.

    Only pixels carrying signal contribute: the valid mask of a depth
    image, and strictly positive values of an intensity image (a black
    pixel is treated as no-signal, mirroring a no-return depth pixel so
    both modalities share one masking convention). Orientation entries
    additionally require the stencil neighbours of a pixel to be valid.
    Cells with no valid pixel emit all-zero features. With
    ``normalize_input`` the image is divided by its max valid value first,
    which bounds feature magnitudes but makes features depend (weakly,
    through the scale) on pixels outside the cell.
    """
    if cfg is None:
        cfg = ExtractorConfig()

    if isinstance(image, DepthImage):
        values = np.where(image.valid, image.depth, 0.0)
        valid = image.valid
    else:
        values = image.values
        valid = values > 0
    h, w = values.shape
    if h < cfg.grid_h or w < cfg.grid_w:
        raise ValueError(
            f"image {h}x{w} is smaller than the {cfg.grid_h}x{cfg.grid_w} grid"
        )

    values = np.asarray(values, dtype=np.float64)
    if cfg.normalize_input:
        peak = values[valid].max() if valid.any() else 0.0
        if peak > 0:
            values = values / peak

    cell_row = (np.arange(h) * cfg.grid_h) // h
    cell_col = (np.arange(w) * cfg.grid_w) // w
    cell_id = cell_row[:, None] * cfg.grid_w + cell_col[None, :]
    n_cells = cfg.grid_h * cfg.grid_w

    flat_id = cell_id[valid]
    count = np.bincount(flat_id, minlength=n_cells)
    s1 = np.bincount(flat_id, weights=values[valid], minlength=n_cells)
    s2 = np.bincount(flat_id, weights=values[valid] ** 2, minlength=n_cells)
    safe = np.maximum(count, 1)
    mean = s1 / safe
    var = np.maximum(s2 / safe - mean**2, 0.0)
    std = np.sqrt(var)

    left, right = _clamped_neighbors(w, cell_col)
    up, down = _clamped_neighbors(h, cell_row)

    # Gradients are taken on a lightly smoothed image: binomial 3x3, masked
    # by validity and clamped to the cell like the stencils below, so
    # locality and exact invariance to constant shifts both survive.
    # Sensor noise on smooth surfaces is comparable to the true pixel-to-
    # pixel variation; without this the orientation channels wash out.
    def blur(a):
        row = (a[:, left] + 2.0 * a + a[:, right]) / 4.0
        return (row[up, :] + 2.0 * row + row[down, :]) / 4.0

    weight = blur(valid.astype(np.float64))
    smooth = blur(np.where(valid, values, 0.0)) / np.maximum(weight, 1e-12)
    smooth = blur(np.where(valid, smooth, 0.0)) / np.maximum(weight, 1e-12)

    dx = right - left
    dy = down - up
    gx = np.where(dx > 0, (smooth[:, right] - smooth[:, left]) / np.maximum(dx, 1), 0.0)
    gy = np.where(
        (dy > 0)[:, None],
        (smooth[down, :] - smooth[up, :]) / np.maximum(dy, 1)[:, None],
        0.0,
    )
    g_ok = valid & valid[:, left] & valid[:, right] & valid[up, :] & valid[down, :]

    mag = np.hypot(gx, gy)
    # Axial orientation (mod pi), not direction: a gradient and its negation
    # share a bin, so any monotone value warp of the image, increasing or
    # decreasing, leaves the bin of every pixel unchanged. Depth-like and
    # brightness-like renderings of one scene then agree on these channels.
    # Each sample splits linearly between its two nearest bins (circular in
    # axial space) so a small angle perturbation moves mass continuously.
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    pos = theta * (cfg.orientations / np.pi)
    lo = np.floor(pos)
    w_hi = pos - lo
    bin_lo = np.mod(lo.astype(np.int64), cfg.orientations)
    bin_hi = np.mod(bin_lo + 1, cfg.orientations)
    flat_ok = cell_id[g_ok]
    hist = np.zeros(n_cells * cfg.orientations)
    for b, frac in ((bin_lo, 1.0 - w_hi), (bin_hi, w_hi)):
        hist += np.bincount(
            (flat_ok * cfg.orientations + b[g_ok]),
            weights=(mag * frac)[g_ok],
            minlength=n_cells * cfg.orientations,
        )
    hist = hist.reshape(n_cells, cfg.orientations)
    # Normalize each cell's histogram to a distribution so every channel is
    # O(1) regardless of cell size or image contrast; cells with no gradient
    # mass stay all-zero. The distribution is then scaled by the cell's
    # axial coherence: the squared circular resultant length of the doubled
    # angles, which is ~1 when the cell's gradients share one axis (a real
    # edge or slope) and ~1/n for incoherent noise, so cells whose
    # orientation content is unreliable contribute little.
    cos2 = np.bincount(flat_ok, weights=(mag * np.cos(2.0 * theta))[g_ok], minlength=n_cells)
    sin2 = np.bincount(flat_ok, weights=(mag * np.sin(2.0 * theta))[g_ok], minlength=n_cells)
    mass = hist.sum(axis=1)
    safe_mass = np.where(mass > 0, mass, 1.0)
    coherence = (cos2**2 + sin2**2) / safe_mass**2
    hist = hist * (coherence / safe_mass)[:, None]
    # Two circular smoothing passes over the bins; widens the soft binning
    # so two views of one scene with slightly smeared orientations still
    # land on overlapping distributions. Row sums are preserved.
    for _ in range(2):
        hist = 0.5 * hist + 0.25 * np.roll(hist, 1, axis=1) + 0.25 * np.roll(hist, -1, axis=1)

    data = np.concatenate([mean[:, None], std[:, None], hist], axis=1)
    data = np.maximum(data, 0.0).reshape(cfg.grid_h, cfg.grid_w, cfg.channels)
    return FeatureMap(h=cfg.grid_h, w=cfg.grid_w, c=cfg.channels, data=data)


@dataclass(frozen=True)
class GridFeatureExtractor:
    """Callable wrapper binding a config, satisfying ``FeatureExtractor``."""

    cfg: ExtractorConfig

    def __call__(self, image: DepthImage | IntensityImage) -> FeatureMap:
        return extract_local_features(image, self.cfg)
