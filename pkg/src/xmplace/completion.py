"""Column-wise interpolation of sparse depth images.

Sparse projections leave most pixels empty; scan lines land on distinct
image rows with gaps between them. Each invalid pixel is filled from its
nearest valid neighbours directly above and below in the same column: when
the two agree (their difference is within a threshold) the fill is the
distance-weighted average, and when they disagree the nearer of the two
wins, treating the farther as background seen past an occluder. Pixels
whose neighbours are too far apart, or that lack a neighbour on either
side, stay invalid. One pass only; fills never feed later fills.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DepthImage


@dataclass(frozen=True)
class CompletionConfig:
    """Interpolation thresholds.

    ``sigma`` is the depth-agreement threshold in meters; neighbour pairs
    farther apart than this are treated as an occlusion boundary. ``max_gap``
    is the longest vertical run of invalid pixels that may be filled.
    """

    sigma: float = 3.0
    max_gap: int = 16

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.max_gap < 1:
            raise ValueError(f"max_gap must be >= 1, got {self.max_gap}")


def complete_depth(sparse: DepthImage, cfg: CompletionConfig | None = None) -> DepthImage:
    """Fill gaps in a sparse depth image by column-wise interpolation.

    For an invalid pixel with a valid pixel above at distance j and below
    at distance i (so the valid pair spans i + j rows), the pixel is filled
    only if i + j <= max_gap + 1. If the two depths differ by at most sigma
    the fill is (j * D_below + i * D_above) / (i + j); otherwise it is
    min(D_below, D_above). All fills read the input image only; originally
    valid pixels pass through untouched. The input is not modified.
    """
    if cfg is None:
        cfg = CompletionConfig()

    h, w = sparse.height, sparse.width
    depth = sparse.depth.copy()
    valid = sparse.valid.copy()
    if h == 0 or w == 0:
        return DepthImage(width=w, height=h, depth=depth, valid=valid)

    rows = np.arange(h)[:, None]

    # Row index of the nearest valid pixel at or above each position,
    # propagated down each column (-1 where none exists).
    above = np.where(sparse.valid, rows, -1)
    above = np.maximum.accumulate(above, axis=0)

    # Same from below, propagated upward (h where none exists).
    below = np.where(sparse.valid, rows, h)
    below = np.minimum.accumulate(below[::-1], axis=0)[::-1]

    span = below - above
    fill = ~sparse.valid & (above >= 0) & (below < h) & (span <= cfg.max_gap + 1)
    if fill.any():
        vf, uf = np.nonzero(fill)
        ra, rb = above[vf, uf], below[vf, uf]
        da, db = sparse.depth[ra, uf], sparse.depth[rb, uf]
        j = vf - ra  # distance up to the valid pixel above
        i = rb - vf  # distance down to the valid pixel below
        agree = np.abs(db - da) <= cfg.sigma
        blended = (j * db + i * da) / (i + j)
        depth[vf, uf] = np.where(agree, blended, np.minimum(db, da))
        valid[vf, uf] = True

    return DepthImage(width=w, height=h, depth=depth, valid=valid)
