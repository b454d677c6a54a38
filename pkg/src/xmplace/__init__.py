"""Cross-modal place recognition: camera images against point-cloud maps.

Both modalities are reduced to depth-image-like arrays (point clouds by
pinhole projection and gap interpolation, images by field-of-view
cropping), encoded by a dual-branch aggregation of local and
cluster-assignment features into unit-norm global descriptors, and
matched by exact nearest-neighbor search over a keyframe database.
"""

from .completion import CompletionConfig, complete_depth
from .features import ExtractorConfig, FeatureMap, extract_local_features
from .geometry import (
    CameraModel,
    DepthImage,
    IntensityImage,
    PointCloud,
    augment_cloud,
    backproject_pixel,
    crop_depth,
    crop_fov,
    crop_intensity,
    fov_row_window,
    project_point_cloud,
    rgb_to_gray,
)
from .nmf import NmfResult, nmf_factorize, nmf_project, semantic_feature_map
from .pipeline import (
    PipelineConfig,
    PrepConfig,
    encode_cloud,
    encode_image,
    inverse_depth,
    prepare_depth,
    prepare_intensity,
)
from .retrieval import (
    DescriptorIndex,
    RecallReport,
    build_index,
    evaluate_recall,
    query,
    sample_keyframes,
)
from .training import (
    Pose,
    TrainConfig,
    TripletBatch,
    build_model,
    loss_gradients,
    mine_triplets,
    train,
    triplet_loss,
)
from .vlad import (
    EncoderModel,
    GlobalDescriptor,
    VladParams,
    encode,
    init_vlad_params,
    load_model,
    save_model,
    vlad_aggregate,
)
from .dataset_io import (
    FramePair,
    SyntheticSceneConfig,
    generate_synthetic_scene,
    read_calib,
    read_poses,
    read_velodyne_bin,
    synthetic_camera,
    write_depth_image,
)

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "CompletionConfig",
    "DepthImage",
    "DescriptorIndex",
    "EncoderModel",
    "ExtractorConfig",
    "FeatureMap",
    "FramePair",
    "GlobalDescriptor",
    "IntensityImage",
    "NmfResult",
    "PipelineConfig",
    "PointCloud",
    "Pose",
    "PrepConfig",
    "RecallReport",
    "SyntheticSceneConfig",
    "TrainConfig",
    "TripletBatch",
    "VladParams",
    "augment_cloud",
    "backproject_pixel",
    "build_index",
    "build_model",
    "complete_depth",
    "crop_depth",
    "crop_fov",
    "crop_intensity",
    "encode",
    "encode_cloud",
    "encode_image",
    "evaluate_recall",
    "extract_local_features",
    "fov_row_window",
    "generate_synthetic_scene",
    "init_vlad_params",
    "inverse_depth",
    "load_model",
    "loss_gradients",
    "mine_triplets",
    "nmf_factorize",
    "nmf_project",
    "prepare_depth",
    "prepare_intensity",
    "project_point_cloud",
    "query",
    "read_calib",
    "read_poses",
    "read_velodyne_bin",
    "rgb_to_gray",
    "sample_keyframes",
    "save_model",
    "semantic_feature_map",
    "synthetic_camera",
    "train",
    "triplet_loss",
    "vlad_aggregate",
    "write_depth_image",
]
