import numpy as np
import pytest

from xmplace import (
    CameraModel,
    IntensityImage,
    PointCloud,
    SyntheticSceneConfig,
    generate_synthetic_scene,
    project_point_cloud,
    read_calib,
    read_poses,
    read_velodyne_bin,
    synthetic_camera,
    write_depth_image,
)
from xmplace.dataset_io import (
    read_dataset,
    read_depth_image,
    read_intensity_image,
    write_calib,
    write_dataset,
    write_intensity_image,
    write_poses,
    write_velodyne_bin,
)
from xmplace.training import Pose


def test_velodyne_round_trip(rng, tmp_path):
    cloud = PointCloud(
        points=rng.normal(scale=20, size=(500, 3)),
        intensity=rng.random(500),
    )
    path = tmp_path / "scan.bin"
    write_velodyne_bin(cloud, path)
    again = read_velodyne_bin(path)
    assert np.allclose(again.points, cloud.points, atol=1e-3)  # float32 storage
    assert np.allclose(again.intensity, cloud.intensity, atol=1e-6)


def test_velodyne_rejects_partial_records(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 30)
    with pytest.raises(ValueError, match="multiple"):
        read_velodyne_bin(path)


def test_velodyne_skips_nonfinite_points(tmp_path):
    raw = np.zeros((3, 4), dtype="<f4")
    raw[0] = [1, 2, 3, 0.5]
    raw[1] = [np.nan, 0, 0, 0.0]
    raw[2] = [4, 5, 6, 2.0]  # intensity clipped to 1
    path = tmp_path / "scan.bin"
    path.write_bytes(raw.tobytes())
    stats = {}
    cloud = read_velodyne_bin(path, stats=stats)
    assert stats["skipped_nonfinite"] == 1
    assert len(cloud) == 2
    assert cloud.intensity.max() <= 1.0


def test_calib_round_trip(rng, tmp_path, small_cam):
    path = tmp_path / "calib.txt"
    write_calib(small_cam, path)
    cam = read_calib(path)
    assert cam.fx == small_cam.fx and cam.fy == small_cam.fy
    assert cam.cx == small_cam.cx and cam.cy == small_cam.cy
    assert np.allclose(cam.R, small_cam.R, atol=1e-12)
    assert np.allclose(cam.t, small_cam.t, atol=1e-12)
    assert (cam.width, cam.height) == (small_cam.width, small_cam.height)


def test_calib_errors(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ValueError, match="Tr"):
        read_calib(p)
    p.write_text("P2: 1 2 3\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ValueError, match="P2"):
        read_calib(p)
    # rotation block that is far from orthonormal
    p.write_text(
        "P2: 100 0 50 0 0 100 30 0 0 0 1 0\n"
        "Tr: 2 0 0 0 0 2 0 0 0 0 2 0\n"
    )
    with pytest.raises(ValueError, match="orthonormal"):
        read_calib(p)


def test_calib_size_precedence(tmp_path):
    base = "P2: 100 0 50 0 0 100 30 0 0 0 1 0\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n"
    p = tmp_path / "calib.txt"
    p.write_text(base)
    assert (read_calib(p).width, read_calib(p).height) == (1226, 370)
    assert read_calib(p, width=640, height=480).width == 640
    p.write_text(base + "S2: 100 60\n")
    cam = read_calib(p, width=640, height=480)  # file line wins
    assert (cam.width, cam.height) == (100, 60)


def test_poses_round_trip(tmp_path):
    poses = [Pose(position=np.array([1.5, -2.25, 3.0]), frame_id=0),
             Pose(position=np.array([0.1, 0.2, 0.3]), frame_id=1)]
    path = tmp_path / "poses.txt"
    write_poses(poses, path)
    again = read_poses(path)
    assert len(again) == 2
    for a, b in zip(again, poses):
        assert np.array_equal(a.position, b.position)
        assert a.frame_id == b.frame_id


def test_poses_errors(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 5 0 1 0\n")
    with pytest.raises(ValueError, match="12"):
        read_poses(p)
    p.write_text("1 0 0 x 0 1 0 0 0 0 1 0\n")
    with pytest.raises(ValueError, match="non-numeric"):
        read_poses(p)


def test_depth_image_round_trip(rng, tmp_path):
    from xmplace.geometry import DepthImage
    depth = rng.uniform(1.0, 70.0, size=(20, 30))
    valid = rng.random((20, 30)) > 0.3
    img = DepthImage(width=30, height=20, depth=np.where(valid, depth, 0.0), valid=valid)
    path = tmp_path / "d.pgm"
    write_depth_image(img, path, max_depth_m=80.0)
    again = read_depth_image(path, max_depth_m=80.0)
    assert np.array_equal(again.valid, valid)
    step = 80.0 / 65535
    assert np.abs(again.depth[valid] - depth[valid]).max() <= step
    with pytest.raises(ValueError):
        write_depth_image(img, path, max_depth_m=0.0)
    with pytest.raises(ValueError):
        read_depth_image(path, max_depth_m=-1.0)


def test_depth_image_clamps_beyond_max(tmp_path):
    from xmplace.geometry import DepthImage
    img = DepthImage(width=2, height=1, depth=np.array([[150.0, 10.0]]),
                     valid=np.array([[True, True]]))
    path = tmp_path / "d.pgm"
    write_depth_image(img, path, max_depth_m=80.0)
    again = read_depth_image(path, max_depth_m=80.0)
    assert again.depth[0, 0] == pytest.approx(80.0)


def test_intensity_image_round_trip(rng, tmp_path):
    img = IntensityImage(width=25, height=15, values=rng.random((15, 25)))
    path = tmp_path / "i.pgm"
    write_intensity_image(img, path)
    again = read_intensity_image(path)
    assert again.width == 25 and again.height == 15
    assert np.abs(again.values - img.values).max() <= 0.5 / 65535 + 1e-12


def test_pgm_parser_handles_comments_and_8bit(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment line\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = read_intensity_image(path)
    assert img.values[0, 1] == pytest.approx(128 / 255)
    assert img.values[1, 0] == pytest.approx(1.0)


def test_pgm_parser_rejects_garbage(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(ValueError, match="graymap"):
        read_intensity_image(path)
    path.write_bytes(b"P5\n2")
    with pytest.raises(ValueError, match="truncated"):
        read_intensity_image(path)


def test_synthetic_scene_determinism():
    cfg = SyntheticSceneConfig(num_places=3, seed=9)
    a = generate_synthetic_scene(cfg)
    b = generate_synthetic_scene(cfg)
    assert len(a) == len(b) == 6
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.intensity.values, fb.intensity.values)
        assert np.array_equal(fa.cloud.points, fb.cloud.points)
        assert np.array_equal(fa.pose.position, fb.pose.position)


def test_synthetic_scene_layout():
    cfg = SyntheticSceneConfig(num_places=4, place_spacing_m=12.0,
                               pose_jitter_m=0.3, seed=1)
    frames = generate_synthetic_scene(cfg)
    assert [f.frame_id for f in frames] == list(range(8))
    for place in range(4):
        a, b = frames[2 * place], frames[2 * place + 1]
        assert a.pose.position[0] == pytest.approx(place * 12.0)
        # the paired frame sits within the jitter radius of the place
        assert np.linalg.norm(b.pose.position - a.pose.position) <= 0.3 * np.sqrt(2) + 1e-9
        assert 0.0 <= a.intensity.values.min() and a.intensity.values.max() <= 1.0


def test_synthetic_pairing_is_pixel_exact_at_zero_noise():
    """With no noise and no jitter, the projected cloud occupies exactly the
    pixels where the camera render sees geometry, at matching ranges."""
    cfg = SyntheticSceneConfig(num_places=1, noise_sigma_m=0.0,
                               pose_jitter_m=0.0, seed=5)
    frames = generate_synthetic_scene(cfg)
    cam = synthetic_camera()
    for f in frames:
        proj = project_point_cloud(f.cloud, cam)
        shade = f.intensity.values
        lit = shade > 0
        assert np.array_equal(proj.valid, lit)
        expected = np.minimum(4.0 / proj.depth[proj.valid], 1.0)
        assert np.allclose(shade[proj.valid], expected, atol=1e-12)


def test_scene_config_validation():
    with pytest.raises(ValueError):
        SyntheticSceneConfig(num_places=0)
    with pytest.raises(ValueError):
        SyntheticSceneConfig(noise_sigma_m=-0.1)
    with pytest.raises(ValueError):
        SyntheticSceneConfig(place_spacing_m=0.0)
    with pytest.raises(ValueError):
        SyntheticSceneConfig(scan_row_step=0)


def test_dataset_directory_round_trip(tmp_path):
    frames = generate_synthetic_scene(SyntheticSceneConfig(num_places=2, seed=2))
    cam = synthetic_camera()
    root = tmp_path / "ds"
    write_dataset(frames, cam, root)
    again, cam2 = read_dataset(root)
    assert len(again) == len(frames)
    assert (cam2.width, cam2.height) == (cam.width, cam.height)
    for fa, fb in zip(again, frames):
        assert fa.frame_id == fb.frame_id
        assert np.allclose(fa.pose.position, fb.pose.position, atol=1e-12)
        assert np.allclose(fa.cloud.points, fb.cloud.points, atol=1e-3)
        assert np.abs(fa.intensity.values - fb.intensity.values).max() <= 1 / 65535


def test_dataset_directory_count_mismatch(tmp_path):
    frames = generate_synthetic_scene(SyntheticSceneConfig(num_places=2, seed=2))
    cam = synthetic_camera()
    root = tmp_path / "ds"
    write_dataset(frames, cam, root)
    (root / "velodyne" / "000000.bin").unlink()
    with pytest.raises(ValueError, match="counts"):
        read_dataset(root)
