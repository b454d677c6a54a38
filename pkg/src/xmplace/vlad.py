"""VLAD aggregation of local features into unit-norm place descriptors.

Each spatial location's feature vector is softly assigned to learnable
clusters; the assignment-weighted residuals against each cluster center
are summed, normalized per cluster, flattened cluster-major, and
normalized again. Two branches run side by side, one over the raw local
features and one over their cluster-assignment (semantic) channels, and
the concatenation is normalized into the final descriptor. One model
encodes both camera images and projected point clouds, which is what lets
descriptors of the two modalities live in a shared space.

The model file is a little-endian binary container with explicit dimension
headers; save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import ExtractorConfig, FeatureMap, extract_local_features
from .geometry import DepthImage, IntensityImage
from .nmf import semantic_feature_map

MODEL_MAGIC = b"XMPR"
MODEL_VERSION = 1

# Sharpness of the initial soft assignment around seeded centers.
INIT_ALPHA = 10.0


@dataclass
class VladParams:
    """Learnable per-branch aggregation parameters.

    ``clusters`` are the residual anchors (d_k x dim); ``assign_weights``
    (d_k x dim) and ``assign_bias`` (d_k) parameterize the soft assignment
    independently of the anchors.
    """

    clusters: np.ndarray
    assign_weights: np.ndarray
    assign_bias: np.ndarray

    def __post_init__(self):
        self.clusters = np.asarray(self.clusters, dtype=np.float64)
        self.assign_weights = np.asarray(self.assign_weights, dtype=np.float64)
        self.assign_bias = np.asarray(self.assign_bias, dtype=np.float64)
        if self.clusters.ndim != 2 or self.clusters.shape[0] < 1:
            raise ValueError(f"clusters must be (d_k >= 1, dim), got {self.clusters.shape}")
        if self.assign_weights.shape != self.clusters.shape:
            raise ValueError(
                f"assign_weights shape {self.assign_weights.shape} does not match "
                f"clusters {self.clusters.shape}"
            )
        if self.assign_bias.shape != (self.clusters.shape[0],):
            raise ValueError(
                f"assign_bias shape {self.assign_bias.shape} does not match "
                f"d_k={self.clusters.shape[0]}"
            )
        for name in ("clusters", "assign_weights", "assign_bias"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def d_k(self) -> int:
        return self.clusters.shape[0]

    @property
    def dim(self) -> int:
        return self.clusters.shape[1]

    def copy(self) -> "VladParams":
        return VladParams(
            clusters=self.clusters.copy(),
            assign_weights=self.assign_weights.copy(),
            assign_bias=self.assign_bias.copy(),
        )


@dataclass
class BranchForward:
    """Intermediates of one branch's aggregation, kept for backprop."""

    f: np.ndarray  # (n, dim) input features
    assign: np.ndarray  # (n, d_k) softmax assignments
    mass: np.ndarray  # (d_k,) total assignment per cluster
    V: np.ndarray  # (d_k, dim) aggregated residuals
    row_norms: np.ndarray  # (d_k,)
    U: np.ndarray  # (d_k, dim) intra-normalized rows
    flat_norm: float
    out: np.ndarray  # (d_k * dim,) normalized branch vector


def vlad_forward(f_mat: np.ndarray, params: VladParams) -> BranchForward:
    """Aggregate an (n, dim) feature matrix, keeping all intermediates."""
    f_mat = np.asarray(f_mat, dtype=np.float64)
    if f_mat.ndim != 2 or f_mat.shape[1] != params.dim:
        raise ValueError(
            f"features of shape {f_mat.shape} do not match branch dim {params.dim}"
        )
    logits = f_mat @ params.assign_weights.T + params.assign_bias
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    assign = e / e.sum(axis=1, keepdims=True)

    mass = assign.sum(axis=0)
    V = assign.T @ f_mat - mass[:, None] * params.clusters

    row_norms = np.linalg.norm(V, axis=1)
    # Rows with zero norm are all-zero, so dividing by 1 leaves them zero.
    U = V / np.where(row_norms > 0, row_norms, 1.0)[:, None]
    flat = U.reshape(-1)
    flat_norm = float(np.linalg.norm(flat))
    out = flat / flat_norm if flat_norm > 0 else flat.copy()
    return BranchForward(
        f=f_mat,
        assign=assign,
        mass=mass,
        V=V,
        row_norms=row_norms,
        U=U,
        flat_norm=flat_norm,
        out=out,
    )


def vlad_aggregate(f: FeatureMap, params: VladParams) -> np.ndarray:
    """Aggregate a feature map into a unit-norm (or zero) VLAD vector."""
    return vlad_forward(f.as_matrix(), params).out


def init_vlad_params(
    feature_sample: np.ndarray, d_k: int, seed: int, alpha: float = INIT_ALPHA
) -> VladParams:
    """Seed aggregation parameters from a sample of training features.

    Cluster centers come from distance-weighted (k-means++ style) seeding
    over the sample rows; assignment weights and biases are set so the
    initial soft assignment matches by-distance cluster membership with
    sharpness ``alpha``.
    """
    X = np.asarray(feature_sample, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"feature sample must be (m >= 1, dim), got {X.shape}")
    if d_k < 1:
        raise ValueError(f"d_k must be >= 1, got {d_k}")
    rng = np.random.default_rng(seed)

    centers = np.empty((d_k, X.shape[1]))
    centers[0] = X[rng.integers(X.shape[0])]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, d_k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(X.shape[0], p=d2 / total)
        else:
            idx = rng.integers(X.shape[0])
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))

    weights = 2.0 * alpha * centers
    bias = -alpha * (centers**2).sum(axis=1)
    return VladParams(clusters=centers, assign_weights=weights, assign_bias=bias)


@dataclass
class GlobalDescriptor:
    """Fixed-length place descriptor; unit norm, or zero for degenerate frames."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.isfinite(self.values).all():
            raise ValueError("descriptor contains non-finite entries")
        n = np.linalg.norm(self.values)
        if n != 0.0 and abs(n - 1.0) > 1e-6:
            raise ValueError(f"descriptor norm {n} is neither 0 nor 1 +- 1e-6")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class EncoderModel:
    """Everything needed to turn an image or projected cloud into a descriptor.

    ``nmf_basis`` and ``vlad_nmf`` are both present (semantic branch on) or
    both None (branch disabled, descriptor is the local-feature VLAD only).
    The same instance serves camera and LiDAR inputs; there are no
    modality-specific parameters.
    """

    extractor_cfg: ExtractorConfig
    nmf_basis: np.ndarray | None
    vlad_cnn: VladParams
    vlad_nmf: VladParams | None

    def __post_init__(self):
        if self.vlad_cnn.dim != self.extractor_cfg.channels:
            raise ValueError(
                f"local VLAD dim {self.vlad_cnn.dim} does not match extractor "
                f"channels {self.extractor_cfg.channels}"
            )
        if (self.nmf_basis is None) != (self.vlad_nmf is None):
            raise ValueError("nmf_basis and vlad_nmf must be both set or both None")
        if self.nmf_basis is not None:
            self.nmf_basis = np.asarray(self.nmf_basis, dtype=np.float64)
            if self.nmf_basis.ndim != 2 or self.nmf_basis.shape[1] != self.extractor_cfg.channels:
                raise ValueError(
                    f"basis shape {self.nmf_basis.shape} does not match extractor "
                    f"channels {self.extractor_cfg.channels}"
                )
            if self.vlad_nmf.dim != self.nmf_basis.shape[0]:
                raise ValueError(
                    f"semantic VLAD dim {self.vlad_nmf.dim} does not match "
                    f"basis k {self.nmf_basis.shape[0]}"
                )

    @property
    def descriptor_length(self) -> int:
        n = self.vlad_cnn.dim * self.vlad_cnn.d_k
        if self.vlad_nmf is not None:
            n += self.vlad_nmf.dim * self.vlad_nmf.d_k
        return n


@dataclass
class DescriptorForward:
    """Full forward pass of one input, kept for backprop."""

    branches: list[BranchForward]
    concat: np.ndarray
    concat_norm: float
    values: np.ndarray


def descriptor_forward(
    f_cnn: np.ndarray, f_nmf: np.ndarray | None, model: EncoderModel
) -> DescriptorForward:
    """Run both aggregation branches on precomputed feature matrices."""
    branches = [vlad_forward(f_cnn, model.vlad_cnn)]
    if model.vlad_nmf is not None:
        if f_nmf is None:
            raise ValueError("model has a semantic branch but no semantic features given")
        branches.append(vlad_forward(f_nmf, model.vlad_nmf))
    concat = np.concatenate([b.out for b in branches])
    n = float(np.linalg.norm(concat))
    values = concat / n if n > 0 else concat.copy()
    return DescriptorForward(branches=branches, concat=concat, concat_norm=n, values=values)


def feature_matrices(
    image: DepthImage | IntensityImage, model: EncoderModel
) -> tuple[np.ndarray, np.ndarray | None]:
    """Extract the local and (if enabled) semantic feature matrices."""
    f = extract_local_features(image, model.extractor_cfg)
    g_mat = None
    if model.nmf_basis is not None:
        g_mat = semantic_feature_map(f, model.nmf_basis).as_matrix()
    return f.as_matrix(), g_mat


def encode(image: DepthImage | IntensityImage, model: EncoderModel) -> GlobalDescriptor:
    """Encode a completed depth image or intensity image into a descriptor."""
    f_mat, g_mat = feature_matrices(image, model)
    fwd = descriptor_forward(f_mat, g_mat, model)
    return GlobalDescriptor(values=fwd.values)


def _pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _pack_vlad(p: VladParams) -> bytes:
    return (
        struct.pack("<II", p.d_k, p.dim)
        + _pack_array(p.clusters)
        + _pack_array(p.assign_weights)
        + _pack_array(p.assign_bias)
    )


def save_model(model: EncoderModel, path: str | Path) -> None:
    """Write the model to its binary container."""
    cfg = model.extractor_cfg
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<I", MODEL_VERSION)
    blob += struct.pack("<IIIBB", cfg.grid_h, cfg.grid_w, cfg.orientations,
                        int(cfg.normalize_input), int(model.nmf_basis is not None))
    if model.nmf_basis is not None:
        blob += struct.pack("<II", model.nmf_basis.shape[0], model.nmf_basis.shape[1])
        blob += _pack_array(model.nmf_basis)
    blob += _pack_vlad(model.vlad_cnn)
    if model.vlad_nmf is not None:
        blob += _pack_vlad(model.vlad_nmf)
    Path(path).write_bytes(bytes(blob))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ValueError("model file truncated")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def array(self, shape: tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape))
        size = 8 * count
        if self.pos + size > len(self.data):
            raise ValueError("model file truncated")
        a = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return a.reshape(shape).astype(np.float64)


def _read_vlad(cur: _Cursor) -> VladParams:
    d_k, dim = cur.unpack("<II")
    return VladParams(
        clusters=cur.array((d_k, dim)),
        assign_weights=cur.array((d_k, dim)),
        assign_bias=cur.array((d_k,)),
    )


def load_model(path: str | Path) -> EncoderModel:
    """Read a model written by ``save_model``."""
    data = Path(path).read_bytes()
    cur = _Cursor(data)
    (magic,) = cur.unpack("<4s")
    if magic != MODEL_MAGIC:
        raise ValueError(f"not a model file (bad magic {magic!r})")
    (version,) = cur.unpack("<I")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    grid_h, grid_w, orientations, normalize_input, has_nmf = cur.unpack("<IIIBB")
    cfg = ExtractorConfig(
        grid_h=grid_h, grid_w=grid_w, orientations=orientations,
        normalize_input=bool(normalize_input),
    )
    basis = None
    if has_nmf:
        k, c = cur.unpack("<II")
        basis = cur.array((k, c))
    vlad_cnn = _read_vlad(cur)
    vlad_nmf = _read_vlad(cur) if has_nmf else None
    if cur.pos != len(data):
        raise ValueError(f"{len(data) - cur.pos} trailing bytes in model file")
    return EncoderModel(
        extractor_cfg=cfg, nmf_basis=basis, vlad_cnn=vlad_cnn, vlad_nmf=vlad_nmf
    )
