"""Composition of the unification stages and the run-wide configuration.

The pieces (projection, crop, completion, extraction, clustering,
aggregation) are all pure functions in their own modules; this module
chains them into "point cloud in, descriptor out" and "camera image in,
descriptor out" calls, and defines the flat key=value configuration that
the command-line front end loads, overrides, and echoes into reports.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .completion import CompletionConfig, complete_depth
from .features import ExtractorConfig
from .geometry import (
    CameraModel,
    DepthImage,
    IntensityImage,
    PointCloud,
    crop_depth,
    crop_intensity,
    project_point_cloud,
)
from .vlad import EncoderModel, GlobalDescriptor, encode


@dataclass(frozen=True)
class PrepConfig:
    """How raw sensor data becomes encoder input."""

    max_elevation_deg: float = 5.0
    completion: CompletionConfig | None = dataclasses.field(default_factory=CompletionConfig)


def prepare_depth(cloud: PointCloud, cam: CameraModel, prep: PrepConfig) -> DepthImage:
    """Project a cloud and crop it; interpolate gaps unless disabled."""
    img = crop_depth(project_point_cloud(cloud, cam), cam, prep.max_elevation_deg)
    if prep.completion is not None:
        img = complete_depth(img, prep.completion)
    return img


def prepare_intensity(image: IntensityImage, cam: CameraModel, prep: PrepConfig) -> IntensityImage:
    """Crop a camera image to the shared field-of-view window."""
    return crop_intensity(image, cam, prep.max_elevation_deg)


def inverse_depth(img: DepthImage) -> DepthImage:
    """Map valid depths r to 1/r; invalid pixels stay invalid.

    Camera brightness falls off with range, so the inverse-depth view of a
    sweep lives in the same value domain as an intensity image of the same
    scene: one monotone ramp instead of two opposed ones. Local features
    computed on this view and on a camera image then agree up to the
    image's exposure scale, which the extractor's per-image normalization
    removes.
    """
    inv = np.where(img.valid, 1.0 / np.maximum(img.depth, 1e-12), 0.0)
    return DepthImage(width=img.width, height=img.height, depth=inv, valid=img.valid.copy())


def encode_cloud(
    cloud: PointCloud, cam: CameraModel, model: EncoderModel, prep: PrepConfig
) -> GlobalDescriptor:
    return encode(inverse_depth(prepare_depth(cloud, cam, prep)), model)


def encode_image(
    image: IntensityImage, cam: CameraModel, model: EncoderModel, prep: PrepConfig
) -> GlobalDescriptor:
    return encode(prepare_intensity(image, cam, prep), model)


@dataclass
class PipelineConfig:
    """Every knob of a run, loadable from a key=value file.

    Lines are `key = value`; `#` starts a comment. Booleans accept
    true/false, yes/no, 1/0. ``topn`` is a comma-separated integer list.
    Unknown keys are an error so typos fail loudly.
    """

    # unification
    max_elevation_deg: float = 5.0
    use_completion: bool = True
    sigma: float = 3.0
    max_gap: int = 16
    # local features
    grid_h: int = 8
    grid_w: int = 32
    orientations: int = 14
    normalize_input: bool = True
    # semantic clustering
    use_nmf: bool = True
    nmf_k: int = 16
    nmf_max_iters: int = 150
    nmf_tol: float = 1e-7
    nmf_sample_rows: int = 40000
    # aggregation
    d_k: int = 64
    # training
    margin: float = 0.3
    pos_radius: float = 5.0
    negatives_per_query: int = 4
    learning_rate: float = 0.5
    epochs: int = 60
    batch_size: int = 8
    momentum: float = 0.0
    hardest_negative: bool = True
    augment: bool = False
    augment_rot_deg: float = 5.0
    augment_shift_m: float = 0.1
    # retrieval and evaluation
    keyframe_spacing_m: float = 5.0
    threshold_m: float = 10.0
    topn: tuple = (1, 5, 10, 20)
    # serialization
    max_depth_m: float = 80.0
    cam_width: int = 1226
    cam_height: int = 370
    # randomness
    seed: int = 0

    def extractor_config(self) -> ExtractorConfig:
        return ExtractorConfig(
            grid_h=self.grid_h,
            grid_w=self.grid_w,
            orientations=self.orientations,
            normalize_input=self.normalize_input,
        )

    def prep_config(self) -> PrepConfig:
        completion = CompletionConfig(sigma=self.sigma, max_gap=self.max_gap)
        return PrepConfig(
            max_elevation_deg=self.max_elevation_deg,
            completion=completion if self.use_completion else None,
        )

    def echo_lines(self) -> list[str]:
        """Render the effective configuration, parseable by ``parse_line``."""
        out = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out.append(f"{f.name} = {_render(val)}")
        return out

    def with_overrides(self, pairs: list[str]) -> "PipelineConfig":
        """Apply `key=value` strings on top of this configuration."""
        cfg = dataclasses.replace(self)
        for pair in pairs:
            key, value = parse_line(pair)
            _assign(cfg, key, value)
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        cfg = cls()
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                key, value = parse_line(line)
                _assign(cfg, key, value)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
        return cfg


def _render(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, tuple):
        return ",".join(str(v) for v in val)
    return repr(val) if isinstance(val, float) else str(val)


def parse_line(line: str) -> tuple[str, str]:
    if "=" not in line:
        raise ValueError(f"expected `key = value`, got {line!r}")
    key, value = line.split("=", 1)
    return key.strip(), value.strip()


_FIELDS = None


def _assign(cfg: PipelineConfig, key: str, value: str) -> None:
    global _FIELDS
    if _FIELDS is None:
        _FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    if key not in _FIELDS:
        raise ValueError(f"unknown configuration key {key!r}")
    current = getattr(cfg, key)
    if isinstance(current, bool):
        lowered = value.lower()
        if lowered in ("true", "yes", "1"):
            parsed = True
        elif lowered in ("false", "no", "0"):
            parsed = False
        else:
            raise ValueError(f"{key}: expected a boolean, got {value!r}")
    elif isinstance(current, int):
        parsed = int(value)
    elif isinstance(current, float):
        parsed = float(value)
    elif isinstance(current, tuple):
        try:
            parsed = tuple(int(v.strip()) for v in value.split(",") if v.strip())
        except ValueError:
            raise ValueError(f"{key}: expected comma-separated integers, got {value!r}") from None
        if not parsed:
            raise ValueError(f"{key}: list must be non-empty")
    else:
        parsed = value
    setattr(cfg, key, parsed)
