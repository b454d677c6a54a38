"""Keyframe descriptor database, exact nearest-neighbor search, recall.

The database holds one descriptor per keyframe (frames sampled every few
meters of trajectory arc length). Queries are answered by exact
brute-force Euclidean scan: database sizes here are small enough that
approximate search buys nothing, and exactness makes evaluation
reproducible. A retrieval counts as correct when the returned frame's pose
lies within a ground-truth threshold of the query pose.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import CameraModel
from .pipeline import PrepConfig, encode_cloud
from .training import Pose
from .vlad import EncoderModel, GlobalDescriptor

INDEX_MAGIC = b"XMPX"
INDEX_VERSION = 1

# Rows per chunk of the distance scan; bounds temporary memory.
_CHUNK_ROWS = 2048


@dataclass
class DescriptorIndex:
    """Immutable search structure: aligned ids, descriptors, positions."""

    frame_ids: np.ndarray
    descriptors: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.frame_ids = np.asarray(self.frame_ids, dtype=np.int64).reshape(-1)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        n = self.frame_ids.shape[0]
        if self.descriptors.shape[0] != n or self.positions.shape != (n, 3):
            raise ValueError(
                f"misaligned index: {n} ids, descriptors {self.descriptors.shape}, "
                f"positions {self.positions.shape}"
            )
        if n:
            norms = np.linalg.norm(self.descriptors, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("index descriptors must be unit norm")

    def __len__(self) -> int:
        return self.frame_ids.shape[0]


def sample_keyframes(trajectory: Sequence[Pose], spacing_m: float) -> list[int]:
    """Greedy arc-length subsampling of a time-ordered trajectory.

    Keeps the first frame, then every frame at which the cumulative
    traveled distance since the last kept frame reaches ``spacing_m``.
    """
    if not spacing_m > 0:
        raise ValueError(f"spacing_m must be positive, got {spacing_m}")
    if not trajectory:
        return []
    kept = [trajectory[0].frame_id]
    since = 0.0
    prev = trajectory[0].position
    for pose in trajectory[1:]:
        since += float(np.linalg.norm(pose.position - prev))
        prev = pose.position
        if since >= spacing_m:
            kept.append(pose.frame_id)
            since = 0.0
    return kept


def build_index(
    frames: Sequence,
    cam: CameraModel,
    model: EncoderModel,
    prep: PrepConfig | None = None,
    stats: dict | None = None,
) -> DescriptorIndex:
    """Encode each frame's point cloud and store it with its pose.

    Frames whose encoding fails or degenerates to a zero descriptor are
    skipped; the count is reported in ``stats`` under "skipped_frames".
    """
    if prep is None:
        prep = PrepConfig()
    ids, descs, positions = [], [], []
    skipped = 0
    for frame in frames:
        try:
            d = encode_cloud(frame.cloud, cam, model, prep)
        except ValueError:
            skipped += 1
            continue
        if np.linalg.norm(d.values) == 0.0:
            skipped += 1
            continue
        ids.append(frame.frame_id)
        descs.append(d.values)
        positions.append(frame.pose.position)
    if stats is not None:
        stats["skipped_frames"] = skipped
    if not ids:
        return DescriptorIndex(
            frame_ids=np.empty(0, dtype=np.int64),
            descriptors=np.empty((0, model.descriptor_length)),
            positions=np.empty((0, 3)),
        )
    return DescriptorIndex(
        frame_ids=np.array(ids, dtype=np.int64),
        descriptors=np.stack(descs),
        positions=np.stack(positions),
    )


def save_index(index: DescriptorIndex, path: str | Path) -> None:
    """Write the index to a little-endian binary container."""
    n = len(index)
    d = index.descriptors.shape[1]
    blob = bytearray()
    blob += INDEX_MAGIC
    blob += struct.pack("<III", INDEX_VERSION, n, d)
    blob += np.ascontiguousarray(index.frame_ids, dtype="<i8").tobytes()
    blob += np.ascontiguousarray(index.positions, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(index.descriptors, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_index(path: str | Path) -> DescriptorIndex:
    """Read an index written by ``save_index``."""
    data = Path(path).read_bytes()
    head = struct.calcsize("<4sIII")
    if len(data) < head:
        raise ValueError(f"{path}: not an index file (too short)")
    magic, version, n, d = struct.unpack_from("<4sIII", data, 0)
    if magic != INDEX_MAGIC:
        raise ValueError(f"{path}: not an index file (bad magic {magic!r})")
    if version != INDEX_VERSION:
        raise ValueError(f"{path}: unsupported index format version {version}")
    expected = head + 8 * n + 24 * n + 8 * n * d
    if len(data) != expected:
        raise ValueError(f"{path}: size {len(data)} does not match header ({expected})")
    pos = head
    ids = np.frombuffer(data, dtype="<i8", count=n, offset=pos).astype(np.int64)
    pos += 8 * n
    positions = np.frombuffer(data, dtype="<f8", count=3 * n, offset=pos).reshape(n, 3)
    pos += 24 * n
    descs = np.frombuffer(data, dtype="<f8", count=n * d, offset=pos).reshape(n, d)
    return DescriptorIndex(
        frame_ids=ids, descriptors=descs.astype(np.float64),
        positions=positions.astype(np.float64),
    )


def query(
    index: DescriptorIndex, q: GlobalDescriptor | np.ndarray, top_n: int
) -> list[tuple[int, float]]:
    """Exact nearest neighbors of a query descriptor.

    Distances are computed directly as ||x - q||, chunk by chunk, so a
    query identical to a stored descriptor reports distance exactly 0.
    Results are sorted by ascending distance with ties broken by smaller
    frame id; returns min(top_n, index size) entries.
    """
    if len(index) == 0:
        raise ValueError("cannot query an empty index")
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    qv = q.values if isinstance(q, GlobalDescriptor) else np.asarray(q, dtype=np.float64)
    if qv.shape != (index.descriptors.shape[1],):
        raise ValueError(
            f"query length {qv.shape} does not match index width "
            f"{index.descriptors.shape[1]}"
        )
    n = len(index)
    d2 = np.empty(n)
    for start in range(0, n, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, n)
        diff = index.descriptors[start:stop] - qv
        d2[start:stop] = np.einsum("ij,ij->i", diff, diff)
    dist = np.sqrt(d2)
    order = np.lexsort((index.frame_ids, dist))[: min(top_n, n)]
    return [(int(index.frame_ids[i]), float(dist[i])) for i in order]


@dataclass
class RecallReport:
    """Recall at each requested depth, plus the database-relative 1% mark."""

    recall_at: dict[int, float]
    recall_at_one_percent: float
    num_queries: int
    threshold_m: float
    num_excluded: int = 0
    one_percent_n: int = 1

    def to_records(self) -> list[str]:
        """Machine-readable key=value lines, one per quantity."""
        lines = [
            f"num_queries={self.num_queries}",
            f"num_excluded={self.num_excluded}",
            f"threshold_m={self.threshold_m!r}",
        ]
        for n in sorted(self.recall_at):
            lines.append(f"recall_at_{n}={self.recall_at[n]!r}")
        lines.append(f"one_percent_n={self.one_percent_n}")
        lines.append(f"recall_at_one_percent={self.recall_at_one_percent!r}")
        return lines

    def to_text(self) -> str:
        """Human-readable table."""
        rows = [
            f"queries evaluated : {self.num_queries}"
            + (f" ({self.num_excluded} excluded, no in-range entry)" if self.num_excluded else ""),
            f"distance threshold: {self.threshold_m} m",
        ]
        for n in sorted(self.recall_at):
            rows.append(f"recall@{n:<4d}      : {self.recall_at[n]:.4f}")
        rows.append(
            f"recall@1% (N={self.one_percent_n})  : {self.recall_at_one_percent:.4f}"
        )
        return "\n".join(rows)


def evaluate_recall(
    queries: Sequence[tuple[GlobalDescriptor, Pose]],
    index: DescriptorIndex,
    threshold_m: float = 10.0,
    ns: Sequence[int] = (1, 5, 10, 20),
) -> RecallReport:
    """Fraction of queries whose top-N results contain a true neighbor.

    A query is recalled at N when any of its N nearest descriptors belongs
    to a frame within ``threshold_m`` of the query pose. Queries with no
    in-threshold database entry at all are excluded from the denominator
    and tallied separately. The 1% mark uses N = max(1, round(0.01 * n))
    with banker's rounding.
    """
    if not threshold_m > 0:
        raise ValueError(f"threshold_m must be positive, got {threshold_m}")
    if len(index) == 0:
        raise ValueError("cannot evaluate against an empty index")
    ns = [int(n) for n in ns]
    if any(n < 1 for n in ns):
        raise ValueError("every N must be >= 1")
    one_percent_n = max(1, round(0.01 * len(index)))
    depths = sorted(set(ns) | {one_percent_n})
    max_n = depths[-1]

    hits = {n: 0 for n in depths}
    evaluated = 0
    excluded = 0
    row_of = {int(fid): i for i, fid in enumerate(index.frame_ids)}
    for q, pose in queries:
        geo = np.linalg.norm(index.positions - pose.position, axis=1)
        if not (geo <= threshold_m).any():
            excluded += 1
            continue
        evaluated += 1
        results = query(index, q, max_n)
        first_hit = None
        for rank, (fid, _) in enumerate(results, start=1):
            if geo[row_of[fid]] <= threshold_m:
                first_hit = rank
                break
        if first_hit is not None:
            for n in depths:
                if first_hit <= n:
                    hits[n] += 1

    denom = max(evaluated, 1)
    return RecallReport(
        recall_at={n: hits[n] / denom for n in ns},
        recall_at_one_percent=hits[one_percent_n] / denom,
        num_queries=evaluated,
        threshold_m=threshold_m,
        num_excluded=excluded,
        one_percent_n=one_percent_n,
    )
