"""Walk one frame pair through the shared-modality front end.

A LiDAR sweep becomes a sparse depth image by pinhole projection, gaps
between scan rows are interpolated, and the camera image is cropped to
the same vertical field of view. After this step both inputs live on
the same pixel grid and can be compared cell by cell.

Run:  python3 demos/01_modality_unification.py
Writes PGM previews into demos/out/.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from xmplace import (
    CompletionConfig,
    PipelineConfig,
    SyntheticSceneConfig,
    complete_depth,
    crop_depth,
    crop_intensity,
    fov_row_window,
    generate_synthetic_scene,
    inverse_depth,
    project_point_cloud,
    synthetic_camera,
)
from xmplace.dataset_io import write_depth_image, write_intensity_image

OUT = os.path.join(os.path.dirname(__file__), "out")


def main():
    os.makedirs(OUT, exist_ok=True)

    # One place, two frames: frame 0 is the camera render, frame 1 the sweep.
    # scan_row_step=3 drops two of every three scan rows so completion has
    # visible work to do.
    scene = SyntheticSceneConfig(num_places=1, noise_sigma_m=0.0, scan_row_step=3)
    frames = generate_synthetic_scene(scene)
    cam = synthetic_camera()
    cloud = frames[1].cloud
    image = frames[0].intensity

    print(f"point cloud: {cloud.points.shape[0]} points")
    sparse = project_point_cloud(cloud, cam)
    print(f"projected to {sparse.depth.shape}: "
          f"{int(sparse.valid.sum())}/{sparse.depth.size} pixels carry depth")

    pipe = PipelineConfig()
    v_top = fov_row_window(cam, pipe.max_elevation_deg)
    cropped = crop_depth(sparse, cam, pipe.max_elevation_deg)
    print(f"FOV crop (+/-{pipe.max_elevation_deg} deg about the optical axis): "
          f"keep rows {v_top}..{cam.height - 1}, "
          f"{int(cropped.valid.sum())}/{cropped.depth.size} valid")

    filled = complete_depth(cropped, CompletionConfig(sigma=pipe.sigma, max_gap=pipe.max_gap))
    print(f"after column interpolation: {int(filled.valid.sum())}/{filled.depth.size} valid "
          f"(gaps wider than {pipe.max_gap} px stay empty)")

    # The camera image is cropped to the same window, so from here on the
    # two modalities are pixel-aligned arrays of the same shape.
    cam_cropped = crop_intensity(image, cam, pipe.max_elevation_deg)
    inv = inverse_depth(filled)
    both = filled.valid & (cam_cropped.values > 0)
    corr = np.corrcoef(inv.depth[both], cam_cropped.values[both])[0, 1]
    print(f"shared shape: depth {filled.depth.shape}, image {cam_cropped.values.shape}")
    print(f"inverse depth vs. camera shading on {int(both.sum())} shared pixels: "
          f"correlation {corr:.3f}")

    write_depth_image(cropped, os.path.join(OUT, "depth_sparse.pgm"), pipe.max_depth_m)
    write_depth_image(filled, os.path.join(OUT, "depth_completed.pgm"), pipe.max_depth_m)
    write_intensity_image(cam_cropped, os.path.join(OUT, "camera.pgm"))
    print(f"previews written to {OUT}/ (depth_sparse, depth_completed, camera)")


if __name__ == "__main__":
    main()
