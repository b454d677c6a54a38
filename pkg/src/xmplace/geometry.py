"""Pinhole projection of LiDAR point clouds and field-of-view cropping.

Coordinate conventions:
  LiDAR frame   -- Cartesian (x, y, z) in meters; frame orientation is the
                   sensor's own (KITTI: x forward, y left, z up).
  Camera frame  -- x right, y down, z forward (optical axis). A point p in
                   the LiDAR frame maps to p_c = R @ p + t.
  Image frame   -- pixel (u, v); u grows right, v grows down. Arrays are
                   indexed [v, u] (row, column).

Depth images store the LiDAR-frame Euclidean range sqrt(x^2+y^2+z^2) of the
projected point, not the camera-frame z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Points with camera-frame z at or below this are treated as behind the
# image plane and discarded (avoids division blow-up near z = 0).
BEHIND_CAMERA_EPS = 1e-6

# Rec. 601 luminance weights used for all RGB-to-grayscale conversion.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass
class PointCloud:
    """Set of 3D points in the sensor's Cartesian frame.

    ``points`` is an (N, 3) float array; ``intensity`` an optional (N,)
    array in [0, 1]. Coordinates are expected to be finite; operations that
    consume clouds skip non-finite points and tally them rather than fail.
    An empty cloud is legal.
    """

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if self.intensity.shape[0] != self.points.shape[0]:
                raise ValueError(
                    f"intensity has {self.intensity.shape[0]} entries for "
                    f"{self.points.shape[0]} points"
                )

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the LiDAR-to-camera extrinsic pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 640
    height: int = 480

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        err = np.max(np.abs(self.R.T @ self.R - np.eye(3)))
        if err >= 1e-6:
            raise ValueError(f"R is not orthonormal (max |R^T R - I| = {err:.2e})")
        det = np.linalg.det(self.R)
        if abs(det - 1.0) > 1e-6:
            raise ValueError(f"R must be a proper rotation (det = {det:.8f})")


@dataclass
class DepthImage:
    """Per-pixel range image with a validity mask.

    ``depth`` and ``valid`` are (height, width) arrays; depth values are
    only meaningful where ``valid`` is True and are positive there.
    """

    width: int
    height: int
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        expected = (self.height, self.width)
        if self.depth.shape != expected or self.valid.shape != expected:
            raise ValueError(
                f"array shapes {self.depth.shape}/{self.valid.shape} do not match "
                f"declared size {expected}"
            )

    def fill_ratio(self) -> float:
        total = self.valid.size
        return float(self.valid.sum()) / total if total else 0.0


@dataclass
class IntensityImage:
    """Single-channel camera image with pixel values in [0, 1]."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {self.values.shape} does not match declared size "
                f"({self.height}, {self.width})"
            )
        if self.values.size and (self.values.min() < -1e-12 or self.values.max() > 1 + 1e-12):
            raise ValueError("intensity values must lie in [0, 1]")


def rgb_to_gray(rgb: np.ndarray) -> IntensityImage:
    """Convert an (H, W, 3) RGB array in [0, 1] to a luminance image."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {rgb.shape}")
    w = GRAY_WEIGHTS
    gray = w[0] * rgb[:, :, 0] + w[1] * rgb[:, :, 1] + w[2] * rgb[:, :, 2]
    gray = np.clip(gray, 0.0, 1.0)
    return IntensityImage(width=gray.shape[1], height=gray.shape[0], values=gray)


def project_point_cloud(
    cloud: PointCloud, cam: CameraModel, stats: dict | None = None
) -> DepthImage:
    """Project a point cloud into a sparse depth image.

    Each point p is moved to the camera frame (R p + t), dropped if it lies
    behind the image plane, and mapped to the nearest-integer pixel via the
    pinhole model. The stored value is the LiDAR-frame Euclidean range of
    the point; when several points land on one pixel the smallest range
    wins. Non-finite points are skipped (count reported in ``stats`` under
    "skipped_nonfinite" when a dict is supplied).
    """
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.inf)
    pts = cloud.points
    finite = np.isfinite(pts).all(axis=1)
    n_skipped = int(pts.shape[0] - finite.sum())
    if stats is not None:
        stats["skipped_nonfinite"] = n_skipped
    pts = pts[finite]

    if pts.shape[0]:
        pc = pts @ cam.R.T + cam.t
        front = pc[:, 2] > BEHIND_CAMERA_EPS
        pts, pc = pts[front], pc[front]

    if pts.shape[0]:
        u = np.rint(cam.fx * pc[:, 0] / pc[:, 2] + cam.cx).astype(np.int64)
        v = np.rint(cam.fy * pc[:, 1] / pc[:, 2] + cam.cy).astype(np.int64)
        inside = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        u, v = u[inside], v[inside]
        rng = np.linalg.norm(pts[inside], axis=1)

        if u.size:
            flat = v * w + u
            # Sort by (pixel, range); the first hit per pixel is the minimum.
            order = np.lexsort((rng, flat))
            flat, rng = flat[order], rng[order]
            first = np.ones(flat.size, dtype=bool)
            first[1:] = flat[1:] != flat[:-1]
            depth.flat[flat[first]] = rng[first]

    valid = np.isfinite(depth)
    depth[~valid] = 0.0
    return DepthImage(width=w, height=h, depth=depth, valid=valid)


def backproject_pixel(u: int, v: int, range_m: float, cam: CameraModel) -> np.ndarray:
    """Recover the LiDAR-frame point on the (u, v) pixel ray at the given range.

    The range is the LiDAR-frame Euclidean distance, matching what
    ``project_point_cloud`` stores, so re-projecting the returned point
    lands back on the same pixel.
    """
    d = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    # |s*d - t| = range, solved for the camera-frame scale s along the ray.
    a = d @ d
    b = -2.0 * (d @ cam.t)
    c = cam.t @ cam.t - range_m * range_m
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise ValueError(f"no point at range {range_m} m lies on pixel ray ({u}, {v})")
    s = (-b + math.sqrt(disc)) / (2.0 * a)
    if s <= BEHIND_CAMERA_EPS:
        raise ValueError(f"pixel ray ({u}, {v}) at range {range_m} m is behind the camera")
    return cam.R.T @ (s * d - cam.t)


def fov_row_window(cam: CameraModel, max_elevation_deg: float) -> int:
    """Top row of the image window whose elevation stays within the limit.

    Rows above the returned index look more than ``max_elevation_deg``
    above the optical axis. Clamped to 0 when the limit exceeds the image
    (tan overflow at 90 degrees included); raises if the window is empty.
    """
    v_top = int(round(cam.cy - cam.fy * math.tan(math.radians(max_elevation_deg))))
    v_top = max(0, v_top)
    if v_top >= cam.height:
        raise ValueError(
            f"elevation limit {max_elevation_deg} deg leaves no rows "
            f"(v_top={v_top} >= height={cam.height})"
        )
    return v_top


def _crop_rows(arrays: list[np.ndarray], cam: CameraModel, max_elevation_deg: float):
    v_top = fov_row_window(cam, max_elevation_deg)
    window = cam.height - v_top
    # Keeping the bottom `window` rows makes the crop idempotent on
    # already-cropped inputs (their height equals the window).
    return [a[-min(window, a.shape[0]):, :] for a in arrays]


def crop_fov(
    depth: DepthImage,
    image: IntensityImage,
    cam: CameraModel,
    max_elevation_deg: float = 5.0,
) -> tuple[DepthImage, IntensityImage]:
    """Crop a depth/intensity pair to the shared field-of-view window.

    Both inputs must be the same size; the identical row window (full
    width, rows from the elevation cutoff down to the bottom) is applied to
    both so the outputs stay pixel-aligned.
    """
    if (depth.height, depth.width) != (image.height, image.width):
        raise ValueError(
            f"depth {depth.height}x{depth.width} and image "
            f"{image.height}x{image.width} sizes differ"
        )
    d, va, im = _crop_rows([depth.depth, depth.valid, image.values], cam, max_elevation_deg)
    return (
        DepthImage(width=d.shape[1], height=d.shape[0], depth=d, valid=va),
        IntensityImage(width=im.shape[1], height=im.shape[0], values=im),
    )


def crop_depth(depth: DepthImage, cam: CameraModel, max_elevation_deg: float = 5.0) -> DepthImage:
    """Apply the field-of-view row window to a depth image alone."""
    d, va = _crop_rows([depth.depth, depth.valid], cam, max_elevation_deg)
    return DepthImage(width=d.shape[1], height=d.shape[0], depth=d, valid=va)


def crop_intensity(
    image: IntensityImage, cam: CameraModel, max_elevation_deg: float = 5.0
) -> IntensityImage:
    """Apply the field-of-view row window to an intensity image alone."""
    (im,) = _crop_rows([image.values], cam, max_elevation_deg)
    return IntensityImage(width=im.shape[1], height=im.shape[0], values=im)


def augment_cloud(
    cloud: PointCloud, max_rot_deg: float, max_shift_m: float, seed: int
) -> PointCloud:
    """Apply a random yaw rotation and translation to a cloud.

    Yaw is uniform in [-max_rot_deg, +max_rot_deg] about the cloud frame's
    z axis; each translation component is uniform in [-max_shift_m,
    +max_shift_m]. Deterministic for a fixed seed; point count and
    intensities are preserved.
    """
    if max_rot_deg < 0 or max_shift_m < 0:
        raise ValueError("augmentation magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    ang = math.radians(rng.uniform(-max_rot_deg, max_rot_deg))
    shift = rng.uniform(-max_shift_m, max_shift_m, size=3)
    ca, sa = math.cos(ang), math.sin(ang)
    rot = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    pts = cloud.points @ rot.T + shift
    intensity = None if cloud.intensity is None else cloud.intensity.copy()
    return PointCloud(points=pts, intensity=intensity)
