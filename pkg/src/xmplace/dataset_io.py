"""Dataset ingestion, serialization, and synthetic paired-scene generation.

Real data follows the KITTI odometry layout: point clouds as binary files
of little-endian float32 (x, y, z, intensity) records, calibration as
`KEY: v1 .. v12` text lines, poses as 12 numbers per line (row-major 3x4).
Depth and intensity images serialize as 16-bit binary portable graymaps.

The synthetic generator builds paired camera/LiDAR observations of random
box-and-pole scenes by casting the camera's own pixel rays, which gives
the two modalities exactly shared geometry; noise, shading, and pose
perturbation then open a controlled, learnable gap between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraModel, DepthImage, IntensityImage, PointCloud
from .training import Pose

_RECORD_BYTES = 16  # four little-endian float32 per point


@dataclass
class FramePair:
    """One time instant: camera image, point cloud, and pose."""

    intensity: IntensityImage
    cloud: PointCloud
    pose: Pose
    frame_id: int


def read_velodyne_bin(path: str | Path, stats: dict | None = None) -> PointCloud:
    """Parse a binary scan of (x, y, z, intensity) float32 records."""
    data = Path(path).read_bytes()
    if len(data) % _RECORD_BYTES != 0:
        raise ValueError(
            f"{path}: size {len(data)} is not a multiple of {_RECORD_BYTES} bytes"
        )
    raw = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(raw).all(axis=1)
    if stats is not None:
        stats["skipped_nonfinite"] = int(raw.shape[0] - finite.sum())
    raw = raw[finite]
    return PointCloud(points=raw[:, :3], intensity=np.clip(raw[:, 3], 0.0, 1.0))


def write_velodyne_bin(cloud: PointCloud, path: str | Path) -> None:
    """Write a cloud in the binary record format read_velodyne_bin parses."""
    n = len(cloud)
    raw = np.empty((n, 4), dtype="<f4")
    raw[:, :3] = cloud.points
    raw[:, 3] = cloud.intensity if cloud.intensity is not None else 0.0
    Path(path).write_bytes(raw.tobytes())


def _parse_calib_lines(text: str) -> dict[str, list[float]]:
    entries = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, rest = line.split(":", 1)
        entries[key.strip()] = [float(v) for v in rest.split()]
    return entries


def _nearest_rotation(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def read_calib(
    path: str | Path, width: int | None = None, height: int | None = None
) -> CameraModel:
    """Build a camera model from `P2:` (intrinsics) and `Tr:` (extrinsics).

    The rotation block of Tr must be orthonormal within 1e-3; it is then
    snapped to the nearest exact rotation. Image size comes from an
    optional `S2: width height` line, the keyword arguments, or the
    common 1226x370 default, in that order of precedence.
    """
    entries = _parse_calib_lines(Path(path).read_text())
    for key in ("P2", "Tr"):
        if key not in entries:
            raise ValueError(f"{path}: missing {key!r} line")
        if len(entries[key]) != 12:
            raise ValueError(
                f"{path}: {key} has {len(entries[key])} values, expected 12"
            )
    P2 = np.array(entries["P2"]).reshape(3, 4)
    Tr = np.array(entries["Tr"]).reshape(3, 4)
    R, t = Tr[:, :3], Tr[:, 3]
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > 1e-3:
        raise ValueError(
            f"{path}: Tr rotation is not orthonormal (max |R^T R - I| = {err:.2e})"
        )
    if "S2" in entries and len(entries["S2"]) == 2:
        width, height = int(entries["S2"][0]), int(entries["S2"][1])
    return CameraModel(
        fx=float(P2[0, 0]),
        fy=float(P2[1, 1]),
        cx=float(P2[0, 2]),
        cy=float(P2[1, 2]),
        R=_nearest_rotation(R),
        t=t,
        width=width if width is not None else 1226,
        height=height if height is not None else 370,
    )


def write_calib(cam: CameraModel, path: str | Path) -> None:
    """Write a calibration file read_calib can parse, including image size."""
    P2 = [cam.fx, 0.0, cam.cx, 0.0, 0.0, cam.fy, cam.cy, 0.0, 0.0, 0.0, 1.0, 0.0]
    Tr = np.hstack([cam.R, cam.t[:, None]]).reshape(-1)
    lines = [
        "P2: " + " ".join(repr(float(v)) for v in P2),
        "Tr: " + " ".join(repr(float(v)) for v in Tr),
        f"S2: {cam.width} {cam.height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path: str | Path) -> list[Pose]:
    """Parse a trajectory of row-major 3x4 matrices, one per line."""
    poses = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines()):
        if not raw.strip():
            continue
        vals = raw.split()
        if len(vals) != 12:
            raise ValueError(
                f"{path}:{lineno + 1}: expected 12 numbers, got {len(vals)}"
            )
        try:
            m = [float(v) for v in vals]
        except ValueError:
            raise ValueError(f"{path}:{lineno + 1}: non-numeric value") from None
        poses.append(Pose(position=np.array([m[3], m[7], m[11]]), frame_id=lineno))
    return poses


def write_poses(poses: list[Pose], path: str | Path) -> None:
    """Write identity-rotation pose lines carrying the positions."""
    lines = []
    for p in poses:
        x, y, z = (float(v) for v in p.position)
        lines.append(f"1 0 0 {x!r} 0 1 0 {y!r} 0 0 1 {z!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2  # past the magic
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated graymap header")
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1  # past the single whitespace after maxval


def _read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary portable graymap")
    (w, h, maxval), offset = _pgm_tokens(data, 3)
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset)
    return pixels.reshape(h, w).astype(np.float64), maxval


def _write_pgm(values: np.ndarray, path: str | Path) -> None:
    h, w = values.shape
    header = f"P5\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(header + values.astype(">u2").tobytes())


def write_depth_image(d: DepthImage, path: str | Path, max_depth_m: float) -> None:
    """Store a depth image as a 16-bit graymap, scaled to ``max_depth_m``.

    Valid pixels map to round(65535 * min(depth, max) / max); invalid
    pixels map to 0. Reading back recovers valid depths within one
    quantization step (max_depth_m / 65535).
    """
    if not max_depth_m > 0:
        raise ValueError(f"max_depth_m must be positive, got {max_depth_m}")
    scaled = np.rint(65535.0 * np.minimum(d.depth, max_depth_m) / max_depth_m)
    _write_pgm(np.where(d.valid, scaled, 0.0), path)


def read_depth_image(path: str | Path, max_depth_m: float) -> DepthImage:
    """Read a graymap written by write_depth_image; zero pixels are invalid."""
    if not max_depth_m > 0:
        raise ValueError(f"max_depth_m must be positive, got {max_depth_m}")
    pixels, maxval = _read_pgm(path)
    depth = pixels * (max_depth_m / maxval)
    valid = pixels > 0
    return DepthImage(width=pixels.shape[1], height=pixels.shape[0], depth=depth, valid=valid)


def write_intensity_image(img: IntensityImage, path: str | Path) -> None:
    """Store an intensity image as a 16-bit graymap over [0, 1]."""
    _write_pgm(np.rint(img.values * 65535.0), path)


def read_intensity_image(path: str | Path) -> IntensityImage:
    """Read an 8- or 16-bit graymap as an intensity image in [0, 1]."""
    pixels, maxval = _read_pgm(path)
    return IntensityImage(
        width=pixels.shape[1], height=pixels.shape[0], values=pixels / maxval
    )


# -- synthetic paired scenes -------------------------------------------------

@dataclass(frozen=True)
class SyntheticSceneConfig:
    """Shape of the generated world and its noise model.

    Each place contributes two frames sharing one random landmark layout:
    frame A at the nominal place position, frame B offset by a pose
    perturbation of up to ``pose_jitter_m``. ``scan_row_step`` subsamples
    the LiDAR's vertical resolution (1 = every camera row has a scan
    line); larger steps leave row gaps for depth completion to fill.
    """

    num_places: int = 20
    place_spacing_m: float = 12.0
    landmarks_per_place: int = 18
    noise_sigma_m: float = 0.05
    seed: int = 0
    pose_jitter_m: float = 0.3
    scan_row_step: int = 1

    def __post_init__(self):
        if self.num_places < 1:
            raise ValueError(f"num_places must be >= 1, got {self.num_places}")
        if self.noise_sigma_m < 0 or self.pose_jitter_m < 0:
            raise ValueError("noise and jitter magnitudes must be non-negative")
        if not self.place_spacing_m > 0:
            raise ValueError(f"place_spacing_m must be positive, got {self.place_spacing_m}")
        if self.landmarks_per_place < 1 or self.scan_row_step < 1:
            raise ValueError("landmarks_per_place and scan_row_step must be >= 1")


def synthetic_camera() -> CameraModel:
    """The fixed camera of the synthetic world."""
    return CameraModel(fx=96.0, fy=96.0, cx=96.0, cy=32.0, width=192, height=64)


_GROUND_Y = 2.5  # meters below the sensor (image y grows downward)
_POLE_TOP_Y = -3.0  # poles run from the ground up to here
_SHADE_SCALE = 4.0  # brightness = min(1, scale / range)
_RAY_EPS = 1e-6


def _pixel_rays(cam: CameraModel) -> np.ndarray:
    u = np.arange(cam.width, dtype=np.float64)
    v = np.arange(cam.height, dtype=np.float64)
    dx = (u - cam.cx) / cam.fx
    dy = (v - cam.cy) / cam.fy
    dirs = np.empty((cam.height, cam.width, 3))
    dirs[:, :, 0] = dx[None, :]
    dirs[:, :, 1] = dy[:, None]
    dirs[:, :, 2] = 1.0
    return dirs


def _sample_landmarks(rng: np.random.Generator, count: int) -> tuple[list, list]:
    """Random yawed boxes and cylinders in front of the sensor.

    Yaw angles, size spreads, and a wide depth range keep the layouts of
    different places visually distinct: silhouettes, face slopes, and the
    depth distribution all vary from place to place.
    """
    boxes, poles = [], []
    for _ in range(count):
        z = rng.uniform(5.0, 38.0)
        x = rng.uniform(-0.8, 0.8) * z
        if rng.uniform() < 0.55:
            half = rng.uniform(0.4, 2.2, size=3)
            y = rng.uniform(-1.2, 1.5)
            yaw = rng.uniform(0.0, math.pi)
            boxes.append((np.array([x, y, z]), half, math.cos(yaw), math.sin(yaw)))
        else:
            poles.append((x, z, rng.uniform(0.1, 0.6)))
    return boxes, poles


def _raycast(origin: np.ndarray, dirs: np.ndarray, boxes: list, poles: list) -> np.ndarray:
    """Nearest positive hit parameter per pixel ray; inf where nothing is hit."""
    s = np.full(dirs.shape[:2], np.inf)

    for center, half, cos_y, sin_y in boxes:
        # slab test in the box frame (yaw about the vertical axis)
        o = origin - center
        o_b = np.array([
            cos_y * o[0] + sin_y * o[2],
            o[1],
            cos_y * o[2] - sin_y * o[0],
        ])
        d_b = np.stack([
            cos_y * dirs[:, :, 0] + sin_y * dirs[:, :, 2],
            dirs[:, :, 1],
            cos_y * dirs[:, :, 2] - sin_y * dirs[:, :, 0],
        ], axis=2)
        safe = np.where(np.abs(d_b) < 1e-12, 1e-12, d_b)
        t1 = (-half - o_b) / safe
        t2 = (half - o_b) / safe
        t_near = np.minimum(t1, t2).max(axis=2)
        t_far = np.maximum(t1, t2).min(axis=2)
        hit = (t_near <= t_far) & (t_near > _RAY_EPS)
        s = np.where(hit, np.minimum(s, t_near), s)

    dx, dy, dz = dirs[:, :, 0], dirs[:, :, 1], dirs[:, :, 2]
    for px, pz, radius in poles:
        ox, oz = origin[0] - px, origin[2] - pz
        a = dx**2 + dz**2
        b = 2.0 * (ox * dx + oz * dz)
        c = ox * ox + oz * oz - radius * radius
        disc = b * b - 4.0 * a * c
        # -1 marks rays that miss the cylinder; keeps arithmetic finite.
        root = np.where(disc >= 0, (-b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a), -1.0)
        y_at = origin[1] + root * dy
        hit = (root > _RAY_EPS) & (y_at <= _GROUND_Y) & (y_at >= _POLE_TOP_Y)
        s = np.where(hit, np.minimum(s, root), s)

    ground = np.where(dy > _RAY_EPS, (_GROUND_Y - origin[1]) / np.where(dy > 0, dy, 1.0), np.inf)
    s = np.minimum(s, np.where(ground > _RAY_EPS, ground, np.inf))
    return s


def _render_frame(
    origin: np.ndarray,
    dirs: np.ndarray,
    boxes: list,
    poles: list,
    cam: CameraModel,
    step: int,
    noise_sigma: float,
    rng: np.random.Generator,
) -> tuple[IntensityImage, PointCloud]:
    s = _raycast(origin, dirs, boxes, poles)
    hit = np.isfinite(s)

    ranges = np.where(hit, s, 1.0) * np.linalg.norm(dirs, axis=2)
    shade = np.where(hit, np.minimum(_SHADE_SCALE / ranges, 1.0), 0.0)
    image = IntensityImage(width=cam.width, height=cam.height, values=shade)

    rows = np.arange(0, cam.height, step)
    sweep_hit = hit[rows]
    s_rows = np.where(sweep_hit, s[rows], 1.0)
    points = (s_rows[:, :, None] * dirs[rows])[sweep_hit]
    radii = np.linalg.norm(points, axis=1)
    noise = rng.normal(0.0, noise_sigma, size=radii.shape)
    points = points * ((radii + noise) / radii)[:, None]
    return image, PointCloud(points=points)


def generate_synthetic_scene(cfg: SyntheticSceneConfig) -> list[FramePair]:
    """Deterministically generate paired frames of random landmark places.

    The world is a line of places ``place_spacing_m`` apart, each with its
    own random boxes and poles plus a shared ground plane. Both modalities
    are produced by casting the camera's pixel rays from the sensor
    origin, so with zero noise and zero perturbation the camera render and
    the projected LiDAR sweep occupy exactly the same pixels. Frame ids
    are 2*place and 2*place + 1.
    """
    cam = synthetic_camera()
    dirs = _pixel_rays(cam)
    rng = np.random.default_rng(cfg.seed)

    frames = []
    for place in range(cfg.num_places):
        boxes, poles = _sample_landmarks(rng, cfg.landmarks_per_place)
        for copy in (0, 1):
            if copy == 0:
                offset = np.zeros(3)
            else:
                lateral, forward = rng.uniform(-cfg.pose_jitter_m, cfg.pose_jitter_m, size=2)
                offset = np.array([lateral, 0.0, forward])
            image, cloud = _render_frame(
                offset, dirs, boxes, poles, cam, cfg.scan_row_step,
                cfg.noise_sigma_m, rng,
            )
            # Sensor forward (+z) runs along the global x axis.
            position = np.array(
                [place * cfg.place_spacing_m + offset[2], offset[0], 0.0]
            )
            frame_id = 2 * place + copy
            frames.append(
                FramePair(
                    intensity=image,
                    cloud=cloud,
                    pose=Pose(position=position, frame_id=frame_id),
                    frame_id=frame_id,
                )
            )
    return frames


def write_dataset(frames: list[FramePair], cam: CameraModel, root: str | Path) -> None:
    """Materialize frames to a directory in the layout read_dataset expects."""
    root = Path(root)
    (root / "velodyne").mkdir(parents=True, exist_ok=True)
    (root / "image").mkdir(parents=True, exist_ok=True)
    write_calib(cam, root / "calib.txt")
    write_poses([f.pose for f in frames], root / "poses.txt")
    for i, f in enumerate(frames):
        write_velodyne_bin(f.cloud, root / "velodyne" / f"{i:06d}.bin")
        write_intensity_image(f.intensity, root / "image" / f"{i:06d}.pgm")


def read_dataset(root: str | Path) -> tuple[list[FramePair], CameraModel]:
    """Load a dataset directory: calib.txt, poses.txt, velodyne/, image/."""
    root = Path(root)
    cam = read_calib(root / "calib.txt")
    poses = read_poses(root / "poses.txt")
    cloud_paths = sorted((root / "velodyne").glob("*.bin"))
    image_paths = sorted((root / "image").glob("*.pgm"))
    if not (len(poses) == len(cloud_paths) == len(image_paths)):
        raise ValueError(
            f"{root}: {len(poses)} poses, {len(cloud_paths)} clouds, "
            f"{len(image_paths)} images; counts must match"
        )
    frames = []
    for pose, cpath, ipath in zip(poses, cloud_paths, image_paths):
        frames.append(
            FramePair(
                intensity=read_intensity_image(ipath),
                cloud=read_velodyne_bin(cpath),
                pose=pose,
                frame_id=pose.frame_id,
            )
        )
    return frames, cam
