"""Triplet mining and gradient training of the aggregation parameters.

Supervision is metric: for a query image, any point cloud captured within
pos_radius of the query pose is a positive, anything farther is a
negative, and the loss sums hinge terms max(m + d(q,p) - d(q,n_i), 0) over
the batch negatives with Euclidean d on descriptors. Gradients are
analytic, flowing through the soft assignment, residual aggregation, and
every normalization; the deterministic extractor has no parameters and the
clustering basis is fit once and frozen, so only the two aggregation
branches train.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .features import FeatureMap, extract_local_features
from .geometry import CameraModel, PointCloud, augment_cloud
from .nmf import nmf_factorize, nmf_project
from .pipeline import PipelineConfig, inverse_depth, prepare_depth, prepare_intensity
from .vlad import (
    BranchForward,
    DescriptorForward,
    EncoderModel,
    GlobalDescriptor,
    VladParams,
    descriptor_forward,
    init_vlad_params,
)

if TYPE_CHECKING:
    from .dataset_io import FramePair


@dataclass
class Pose:
    """Global-frame position tag of one frame."""

    position: np.ndarray
    frame_id: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.isfinite(self.position).all():
            raise ValueError(f"pose of frame {self.frame_id} is non-finite")


@dataclass
class TrainConfig:
    """Schedule and mining thresholds."""

    margin: float = 0.3
    pos_radius: float = 5.0
    negatives_per_query: int = 4
    learning_rate: float = 0.5
    epochs: int = 60
    seed: int = 0
    batch_size: int = 8
    momentum: float = 0.0
    hardest_negative: bool = True
    augment: bool = False
    augment_rot_deg: float = 5.0
    augment_shift_m: float = 0.1

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if not self.pos_radius > 0:
            raise ValueError(f"pos_radius must be positive, got {self.pos_radius}")
        if self.negatives_per_query < 1:
            raise ValueError(f"need >= 1 negative per query, got {self.negatives_per_query}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1, learning_rate >= 0")


@dataclass
class TripletBatch:
    """One mined training example: a query, a positive, n negatives."""

    query_id: int
    positive_id: int
    negative_ids: list[int]


def mine_triplets(
    query_poses: Sequence[Pose],
    db_poses: Sequence[Pose],
    cfg: TrainConfig,
    seed: int,
    stats: dict | None = None,
) -> list[TripletBatch]:
    """Sample one triplet per query by metric distance.

    The positive is uniform among database entries within pos_radius of
    the query; negatives are uniform among entries beyond it, without
    replacement when the pool is large enough. Queries with no positive
    are skipped (count reported in ``stats`` under "skipped_no_positive").
    A query with no negatives at all is an error: the loss is undefined.
    """
    if not query_poses or not db_poses:
        raise ValueError("pose lists must be non-empty")
    rng = np.random.default_rng(seed)
    db_pos = np.stack([p.position for p in db_poses])
    db_ids = np.array([p.frame_id for p in db_poses])

    triplets = []
    skipped = 0
    for q in query_poses:
        d = np.linalg.norm(db_pos - q.position, axis=1)
        pos_ids = db_ids[d <= cfg.pos_radius]
        neg_ids = db_ids[d > cfg.pos_radius]
        if neg_ids.size == 0:
            raise ValueError(
                f"no database entry beyond {cfg.pos_radius} m of query "
                f"{q.frame_id}; cannot mine negatives"
            )
        if pos_ids.size == 0:
            skipped += 1
            continue
        positive = int(rng.choice(pos_ids))
        replace = neg_ids.size < cfg.negatives_per_query
        negatives = rng.choice(neg_ids, size=cfg.negatives_per_query, replace=replace)
        triplets.append(
            TripletBatch(
                query_id=q.frame_id,
                positive_id=positive,
                negative_ids=[int(n) for n in negatives],
            )
        )
    if stats is not None:
        stats["skipped_no_positive"] = skipped
    return triplets


def _vec(x) -> np.ndarray:
    return x.values if isinstance(x, GlobalDescriptor) else np.asarray(x, dtype=np.float64)


def triplet_loss(s_q, s_p, s_n: Sequence, m: float) -> float:
    """Sum of hinge terms max(m + d(q, p) - d(q, n_i), 0), Euclidean d."""
    q, p = _vec(s_q), _vec(s_p)
    if q.shape != p.shape:
        raise ValueError(f"descriptor lengths differ: {q.shape} vs {p.shape}")
    d_qp = float(np.linalg.norm(q - p))
    total = 0.0
    for s in s_n:
        n = _vec(s)
        if n.shape != q.shape:
            raise ValueError(f"descriptor lengths differ: {q.shape} vs {n.shape}")
        total += max(m + d_qp - float(np.linalg.norm(q - n)), 0.0)
    return total


@dataclass
class ParamGrads:
    """Gradient (or velocity) arrays matching one branch's parameters."""

    clusters: np.ndarray
    assign_weights: np.ndarray
    assign_bias: np.ndarray

    @classmethod
    def zeros_like(cls, p: VladParams) -> "ParamGrads":
        return cls(
            clusters=np.zeros_like(p.clusters),
            assign_weights=np.zeros_like(p.assign_weights),
            assign_bias=np.zeros_like(p.assign_bias),
        )

    def add(self, other: "ParamGrads", scale: float = 1.0) -> None:
        self.clusters += scale * other.clusters
        self.assign_weights += scale * other.assign_weights
        self.assign_bias += scale * other.assign_bias


@dataclass
class TripletGradients:
    """Loss value and parameter gradients of one triplet."""

    loss: float
    cnn: ParamGrads
    nmf: ParamGrads | None
    active_negatives: int


@dataclass
class FeatureCache:
    """Precomputed feature matrices, one entry per frame and modality side.

    Values are (local matrix, semantic matrix or None) pairs; queries and
    database frames are cached separately because the same frame id plays
    both roles with different inputs (its camera image vs its point cloud).
    """

    query: dict[int, tuple[np.ndarray, np.ndarray | None]]
    db: dict[int, tuple[np.ndarray, np.ndarray | None]]


# Norms below this are treated as dead in the backward pass: the Jacobian
# of v/|v| scales with 1/|v|, so a residual row whose cluster receives
# essentially no soft assignment would amplify float noise by many orders
# of magnitude. Forward output for such rows is ~0 either way.
_DEAD_NORM = 1e-9


def _norm_backward(y: np.ndarray, norm: float, g: np.ndarray) -> np.ndarray:
    # y = v / |v|; gradient through the normalization, zero near v = 0.
    if norm < _DEAD_NORM:
        return np.zeros_like(g)
    return (g - y * (y @ g)) / norm


def _branch_backward(fwd: BranchForward, params: VladParams, g_out: np.ndarray) -> ParamGrads:
    d_k, dim = params.d_k, params.dim
    g_flat = _norm_backward(fwd.out, fwd.flat_norm, g_out)
    G_U = g_flat.reshape(d_k, dim)

    dead = fwd.row_norms < _DEAD_NORM
    safe = np.where(dead, 1.0, fwd.row_norms)
    G_V = (G_U - fwd.U * (fwd.U * G_U).sum(axis=1, keepdims=True)) / safe[:, None]
    G_V[dead] = 0.0

    g_clusters = -fwd.mass[:, None] * G_V
    rowdot = (G_V * params.clusters).sum(axis=1)
    g_assign = fwd.f @ G_V.T - rowdot[None, :]

    inner = (fwd.assign * g_assign).sum(axis=1, keepdims=True)
    g_logits = fwd.assign * (g_assign - inner)
    g_weights = g_logits.T @ fwd.f
    g_bias = g_logits.sum(axis=0)
    return ParamGrads(clusters=g_clusters, assign_weights=g_weights, assign_bias=g_bias)


def _descriptor_backward(
    fwd: DescriptorForward, model: EncoderModel, g_values: np.ndarray
) -> list[ParamGrads]:
    g_concat = _norm_backward(fwd.values, fwd.concat_norm, g_values)
    params = [model.vlad_cnn] + ([model.vlad_nmf] if model.vlad_nmf is not None else [])
    grads = []
    offset = 0
    for branch, p in zip(fwd.branches, params):
        size = p.d_k * p.dim
        grads.append(_branch_backward(branch, p, g_concat[offset : offset + size]))
        offset += size
    return grads


def loss_gradients(
    batch: TripletBatch,
    model: EncoderModel,
    cached_features: FeatureCache,
    margin: float = 0.3,
    hardest_negative: bool = False,
) -> TripletGradients:
    """Loss and analytic parameter gradients for one triplet.

    With ``hardest_negative`` only the largest hinge term contributes,
    instead of the sum over all negatives. Wherever a descriptor distance
    is exactly zero its gradient contribution is taken as zero (the hinge
    and the norm are non-differentiable there).
    """
    fwd_q = descriptor_forward(*cached_features.query[batch.query_id], model)
    fwd_p = descriptor_forward(*cached_features.db[batch.positive_id], model)
    fwd_ns = [descriptor_forward(*cached_features.db[i], model) for i in batch.negative_ids]

    q, p = fwd_q.values, fwd_p.values
    diff_qp = q - p
    d_qp = float(np.linalg.norm(diff_qp))
    d_qn = [float(np.linalg.norm(q - f.values)) for f in fwd_ns]
    hinges = [margin + d_qp - d for d in d_qn]

    if hardest_negative:
        top = int(np.argmax(hinges))
        considered = [top]
        loss = max(hinges[top], 0.0)
    else:
        considered = list(range(len(hinges)))
        loss = sum(max(h, 0.0) for h in hinges)
    active = [i for i in considered if hinges[i] > 0]

    g_cnn = ParamGrads.zeros_like(model.vlad_cnn)
    g_nmf = ParamGrads.zeros_like(model.vlad_nmf) if model.vlad_nmf is not None else None
    if active:
        u_qp = diff_qp / d_qp if d_qp > 0 else np.zeros_like(diff_qp)
        g_q = np.zeros_like(q)
        g_p = np.zeros_like(q)
        per_negative = []
        for i in active:
            diff_qn = q - fwd_ns[i].values
            u_qn = diff_qn / d_qn[i] if d_qn[i] > 0 else np.zeros_like(diff_qn)
            g_q += u_qp - u_qn
            g_p -= u_qp
            per_negative.append((fwd_ns[i], u_qn))
        backprops = [(fwd_q, g_q), (fwd_p, g_p)] + per_negative
        for fwd, g_values in backprops:
            branch_grads = _descriptor_backward(fwd, model, g_values)
            g_cnn.add(branch_grads[0])
            if g_nmf is not None:
                g_nmf.add(branch_grads[1])
    return TripletGradients(loss=loss, cnn=g_cnn, nmf=g_nmf, active_negatives=len(active))


@dataclass
class TrainResult:
    """Trained model plus the loss trace of the run."""

    model: EncoderModel
    loss_log: list[str] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    skipped_queries: int = 0


def _depth_fmap(cloud: PointCloud, cam: CameraModel, pipe: PipelineConfig) -> FeatureMap:
    return extract_local_features(
        inverse_depth(prepare_depth(cloud, cam, pipe.prep_config())),
        pipe.extractor_config(),
    )


def _with_semantic(
    fmap: FeatureMap, basis: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray | None]:
    f_mat = fmap.as_matrix()
    g_mat = nmf_project(f_mat, basis) if basis is not None else None
    return f_mat, g_mat


def build_model(
    frames: Sequence["FramePair"],
    cam: CameraModel,
    pipe: PipelineConfig,
    seed: int,
) -> EncoderModel:
    """Fit the frozen parts and seed the trainable ones.

    Local features of all training frames (both modalities) are stacked;
    the clustering basis is factorized once from a row subsample, and both
    aggregation branches are seeded from the same sample. The result is a
    fully working untrained model.
    """
    rng = np.random.default_rng(seed)
    prep = pipe.prep_config()
    ex_cfg = pipe.extractor_config()

    mats = []
    for f in frames:
        mats.append(extract_local_features(prepare_intensity(f.intensity, cam, prep), ex_cfg).as_matrix())
        mats.append(_depth_fmap(f.cloud, cam, pipe).as_matrix())
    A = np.vstack(mats)
    if A.shape[0] > pipe.nmf_sample_rows:
        keep = rng.choice(A.shape[0], size=pipe.nmf_sample_rows, replace=False)
        keep.sort()
        A = A[keep]

    basis = None
    vlad_nmf = None
    if pipe.use_nmf:
        result = nmf_factorize(
            A,
            k=pipe.nmf_k,
            max_iters=pipe.nmf_max_iters,
            tol=pipe.nmf_tol,
            seed=int(rng.integers(2**31)),
        )
        basis = result.basis
    vlad_cnn = init_vlad_params(A, pipe.d_k, seed=int(rng.integers(2**31)))
    if basis is not None:
        G = nmf_project(A, basis)
        vlad_nmf = init_vlad_params(G, pipe.d_k, seed=int(rng.integers(2**31)))
    return EncoderModel(
        extractor_cfg=ex_cfg, nmf_basis=basis, vlad_cnn=vlad_cnn, vlad_nmf=vlad_nmf
    )


def train(
    frames: Sequence["FramePair"],
    cam: CameraModel,
    cfg: TrainConfig,
    pipe: PipelineConfig | None = None,
) -> TrainResult:
    """Fit the frozen stages, then run minibatch descent on mined triplets.

    Each frame contributes its camera image as a query and its point cloud
    as a database entry. Triplets are re-mined every epoch and the
    database-side features are recomputed per epoch when cloud
    augmentation is on; query features and all frozen parameters are
    computed once. Deterministic for a fixed config.
    """
    if pipe is None:
        pipe = PipelineConfig()
    rng = np.random.default_rng(cfg.seed)
    prep = pipe.prep_config()
    ex_cfg = pipe.extractor_config()

    model = build_model(frames, cam, pipe, seed=int(rng.integers(2**31)))
    basis = model.nmf_basis

    query_cache = {}
    for f in frames:
        fmap = extract_local_features(prepare_intensity(f.intensity, cam, prep), ex_cfg)
        query_cache[f.frame_id] = _with_semantic(fmap, basis)
    base_db = {f.frame_id: _depth_fmap(f.cloud, cam, pipe) for f in frames}
    poses = [f.pose for f in frames]

    vel_cnn = ParamGrads.zeros_like(model.vlad_cnn)
    vel_nmf = ParamGrads.zeros_like(model.vlad_nmf) if model.vlad_nmf is not None else None

    result = TrainResult(model=model)
    augmenting = cfg.augment and (cfg.augment_rot_deg > 0 or cfg.augment_shift_m > 0)
    static_db = None
    if not augmenting:
        static_db = {fid: _with_semantic(fmap, basis) for fid, fmap in base_db.items()}
    for epoch in range(cfg.epochs):
        if augmenting:
            db_cache = {}
            for f in frames:
                cloud = augment_cloud(
                    f.cloud, cfg.augment_rot_deg, cfg.augment_shift_m,
                    seed=int(rng.integers(2**31)),
                )
                db_cache[f.frame_id] = _with_semantic(_depth_fmap(cloud, cam, pipe), basis)
        else:
            db_cache = static_db
        cache = FeatureCache(query=query_cache, db=db_cache)

        mstats: dict = {}
        triplets = mine_triplets(poses, poses, cfg, seed=int(rng.integers(2**31)), stats=mstats)
        result.skipped_queries = mstats["skipped_no_positive"]
        order = rng.permutation(len(triplets))

        epoch_sum, epoch_count = 0.0, 0
        for batch_no, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = order[start : start + cfg.batch_size]
            acc_cnn = ParamGrads.zeros_like(model.vlad_cnn)
            acc_nmf = ParamGrads.zeros_like(model.vlad_nmf) if vel_nmf is not None else None
            batch_loss = 0.0
            for ti in chunk:
                tg = loss_gradients(
                    triplets[ti], model, cache, cfg.margin, cfg.hardest_negative
                )
                batch_loss += tg.loss
                acc_cnn.add(tg.cnn)
                if acc_nmf is not None:
                    acc_nmf.add(tg.nmf)

            inv = 1.0 / len(chunk)
            for params, grads, vel in (
                (model.vlad_cnn, acc_cnn, vel_cnn),
                (model.vlad_nmf, acc_nmf, vel_nmf),
            ):
                if params is None:
                    continue
                for name in ("clusters", "assign_weights", "assign_bias"):
                    g = getattr(grads, name)
                    v = getattr(vel, name)
                    v *= cfg.momentum
                    v -= cfg.learning_rate * inv * g
                    getattr(params, name)[...] += v

            mean_loss = batch_loss * inv
            result.loss_log.append(f"{epoch},{batch_no},{mean_loss:.6e}")
            epoch_sum += batch_loss
            epoch_count += len(chunk)
        result.epoch_losses.append(epoch_sum / max(epoch_count, 1))
    return result
