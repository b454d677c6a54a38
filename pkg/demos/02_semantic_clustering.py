"""Cluster grid features with non-negative matrix factorization.

Local features from many frames are stacked into one non-negative
matrix and factorized as A ~ P Q. Each row of Q is a learned part;
each cell's row of P says how much of each part it contains, so
argmax over P acts as an unsupervised segment label. The same basis Q
then re-expresses any new frame in cluster-assignment channels, which
is the second descriptor branch of the encoder.

Run:  python3 demos/02_semantic_clustering.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from xmplace import (
    CompletionConfig,
    ExtractorConfig,
    PipelineConfig,
    SyntheticSceneConfig,
    complete_depth,
    crop_depth,
    extract_local_features,
    generate_synthetic_scene,
    inverse_depth,
    nmf_factorize,
    project_point_cloud,
    semantic_feature_map,
    synthetic_camera,
)

GLYPHS = "#@%*+=-:. abcdefgh"


def main():
    pipe = PipelineConfig()
    scene = SyntheticSceneConfig(num_places=8, noise_sigma_m=0.0)
    frames = generate_synthetic_scene(scene)
    cam = synthetic_camera()
    ext = ExtractorConfig(grid_h=pipe.grid_h, grid_w=pipe.grid_w,
                          orientations=pipe.orientations)
    comp = CompletionConfig(sigma=pipe.sigma, max_gap=pipe.max_gap)

    # Stack per-cell feature rows from every LiDAR frame.
    maps = []
    for f in frames:
        if f.cloud is None:
            continue
        d = complete_depth(crop_depth(project_point_cloud(f.cloud, cam), cam), comp)
        maps.append(extract_local_features(inverse_depth(d), ext))
    A = np.concatenate([m.data.reshape(-1, m.c) for m in maps])
    print(f"feature matrix: {A.shape[0]} cells x {A.shape[1]} channels "
          f"from {len(maps)} frames")

    k = pipe.nmf_k
    res = nmf_factorize(A, k, max_iters=pipe.nmf_max_iters, tol=pipe.nmf_tol, seed=0)
    tr = res.objective_trace
    print(f"NMF with k={k}: objective {tr[0]:.2f} -> {tr[-1]:.2f} "
          f"in {len(tr) - 1} iterations (non-increasing: "
          f"{all(b <= a + 1e-9 for a, b in zip(tr, tr[1:]))})")

    labels = res.assignments.argmax(axis=1)
    occupancy = np.bincount(labels, minlength=k)
    print(f"cluster occupancy: {occupancy.tolist()}")

    # Project one held-out frame onto the frozen basis and draw its
    # argmax-cluster map. Same label = same glyph; structure (ground
    # sweep vs. obstacles) should be visible as horizontal bands and blobs.
    sem = semantic_feature_map(maps[0], res.basis)
    cell_labels = sem.data.argmax(axis=2)
    print(f"argmax-cluster map of one frame ({sem.h}x{sem.w} cells):")
    for r in range(sem.h):
        print("  " + "".join(GLYPHS[cell_labels[r, c] % len(GLYPHS)]
                             for c in range(sem.w)))


if __name__ == "__main__":
    main()
