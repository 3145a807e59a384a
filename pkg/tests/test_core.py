import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moves.core import PointCloud, Pose, RangeImage, SensorConfig, Trajectory, project, unproject
from moves import io


def small_config(**kw):
    base = dict(num_beams=8, num_azimuth=16, vfov_min=-0.4, vfov_max=0.3, r_max=30.0)
    base.update(kw)
    return SensorConfig(**base)


def random_image(rng, config):
    r = rng.uniform(0.5, config.r_max, config.shape).astype(np.float32)
    valid = rng.random(config.shape) < 0.8
    return RangeImage(config, np.where(valid, r, 0), valid)


def test_sensor_config_invariants():
    with pytest.raises(ValueError):
        SensorConfig(num_beams=0)
    with pytest.raises(ValueError):
        SensorConfig(num_azimuth=3)
    with pytest.raises(ValueError):
        SensorConfig(vfov_min=0.2, vfov_max=0.1)
    with pytest.raises(ValueError):
        SensorConfig(r_max=0.0)


def test_project_empty_cloud_is_all_invalid():
    img = project(PointCloud(np.zeros((0, 3))), small_config())
    assert not img.validity.any()


def test_project_single_point_lands_in_azimuth_zero_bin():
    cfg = SensorConfig(num_beams=1, num_azimuth=360, vfov_min=-0.1, vfov_max=0.1, r_max=10.0)
    img = project(PointCloud([[1.0, 0.0, 0.0]]), cfg)
    # bin j covers [-pi + j*step, -pi + (j+1)*step); angle 0 falls at the start of bin 180
    assert img.validity.sum() == 1
    assert img.validity[0, 180]
    assert img.ranges[0, 180] == 1.0


def test_project_keeps_nearest_on_collision():
    cfg = small_config()
    img = project(PointCloud([[2.0, 0.0, 0.0], [5.0, 0.0, 0.0]]), cfg)
    assert img.validity.sum() == 1
    assert img.ranges[img.validity][0] == 2.0


def test_project_drops_out_of_range_and_out_of_fov():
    cfg = small_config(r_max=3.0)
    img = project(PointCloud([[5.0, 0, 0], [0, 0, 1.0]]), cfg)
    assert not img.validity.any()


def test_unproject_all_invalid_is_empty():
    assert len(unproject(RangeImage.empty(small_config()))) == 0


def test_unproject_single_point_within_quantization_bound():
    cfg = SensorConfig(num_beams=4, num_azimuth=32, vfov_min=-0.2, vfov_max=0.2, r_max=10.0)
    p = np.array([1.0, 0.0, 0.0])
    back = unproject(project(PointCloud([p]), cfg)).points
    assert back.shape == (1, 3)
    bound = 1.0 * max(cfg.azimuth_step, cfg.elevation_step)
    assert np.linalg.norm(back[0] - p) <= bound


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_round_trip_is_idempotent_on_images(seed):
    cfg = small_config()
    img = random_image(np.random.default_rng(seed), cfg)
    again = project(unproject(img), cfg)
    assert again.equals(img)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_bin_centre_clouds_round_trip_exactly(seed):
    rng = np.random.default_rng(seed)
    cfg = small_config()
    dirs = cfg.ray_directions()
    rows = rng.choice(cfg.num_beams, 5)
    cols = rng.choice(cfg.num_azimuth, 5, replace=False)
    r = rng.uniform(1, 20, 5).astype(np.float32).astype(np.float64)
    pts = dirs[rows, cols] * r[:, None]
    back = unproject(project(PointCloud(pts), cfg)).points
    # unproject emits row-major order; compare as sets
    order = lambda a: a[np.lexsort(a.T)]  # noqa: E731
    assert np.max(np.abs(order(back) - order(pts))) < 1e-9


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_random_cloud_error_bounded_by_bin_width(seed):
    rng = np.random.default_rng(seed)
    cfg = small_config()
    az = rng.uniform(-np.pi, np.pi)
    el = rng.uniform(cfg.vfov_min + 1e-6, cfg.vfov_max - 1e-6)
    r = rng.uniform(1, 20)
    p = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    back = unproject(project(PointCloud([p]), cfg)).points[0]
    assert np.linalg.norm(back - p) <= r * max(cfg.azimuth_step, cfg.elevation_step)


def test_range_image_rejects_out_of_domain_values():
    cfg = small_config()
    with pytest.raises(ValueError):
        RangeImage(cfg, np.full(cfg.shape, 50.0), np.ones(cfg.shape, bool))
    with pytest.raises(ValueError):
        RangeImage(cfg, np.zeros((2, 2)), np.zeros((2, 2), bool))


def test_point_cloud_rejects_nan():
    with pytest.raises(ValueError):
        PointCloud([[np.nan, 0, 0]])


def test_pose_normalises_quaternion_and_composes():
    p = Pose([1, 2, 3], [0, 0, 0, 2.0])
    assert abs(np.linalg.norm(p.rotation) - 1) < 1e-12
    q = Pose.from_xyz_yaw(1, 0, 0, np.pi / 2)
    np.testing.assert_allclose(q.compose(q.inverse()).matrix(), np.eye(4), atol=1e-12)


def test_trajectory_requires_increasing_timestamps():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [Pose(), Pose()])


# -- codecs ------------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_range_image_codec_round_trip(seed):
    img = random_image(np.random.default_rng(seed), small_config())
    back = io.decode_range_image(io.encode_range_image(img))
    assert back.equals(img)


@given(st.lists(st.tuples(*[st.floats(-1e4, 1e4, width=32)] * 3), max_size=40))
def test_point_cloud_codec_round_trip(pts):
    cloud = PointCloud(np.array(pts, dtype=np.float64).reshape(-1, 3))
    back = io.decode_point_cloud(io.encode_point_cloud(cloud))
    assert np.array_equal(back.points, cloud.points)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3),
                          st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)),
                min_size=1, max_size=10))
def test_trajectory_text_round_trip(rows):
    poses = []
    for tx, ty, tz, a, b, c in rows:
        q = np.array([a, b, c, 1.0])
        poses.append(Pose([tx, ty, tz], q / np.linalg.norm(q)))
    traj = Trajectory(np.arange(len(poses)) * 0.1, poses)
    back = io.parse_trajectory(io.format_trajectory(traj))
    assert np.array_equal(back.timestamps, traj.timestamps)
    for a, b in zip(back.poses, traj.poses):
        assert np.array_equal(a.translation, b.translation)
        assert np.array_equal(a.rotation, b.rotation)


def test_trajectory_line_parses_to_identity_pose():
    traj = io.parse_trajectory("# comment\n0.0 1 2 3 0 0 0 1\n")
    assert len(traj) == 1
    np.testing.assert_array_equal(traj.poses[0].translation, [1, 2, 3])
    np.testing.assert_array_equal(traj.poses[0].rotation, [0, 0, 0, 1])


def test_trajectory_non_monotone_timestamps_rejected():
    with pytest.raises(io.FormatError):
        io.parse_trajectory("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n")


def test_codec_errors_are_distinct():
    img = random_image(np.random.default_rng(0), small_config())
    buf = io.encode_range_image(img)
    with pytest.raises(io.MalformedHeaderError):
        io.decode_range_image(b"XXXX" + buf[4:])
    with pytest.raises(io.MalformedHeaderError):
        io.decode_range_image(buf[:6])
    with pytest.raises(io.TruncatedPayloadError):
        io.decode_range_image(buf[:-4])
    bad_version = buf[:4] + (2).to_bytes(2, "little") + buf[6:]
    with pytest.raises(io.VersionMismatchError):
        io.decode_range_image(bad_version)
    cloud = io.encode_point_cloud(PointCloud(np.ones((3, 3))))
    with pytest.raises(io.TruncatedPayloadError):
        io.decode_point_cloud(cloud[:-1])


def test_mask_file_round_trip(tmp_path):
    cfg = small_config()
    mask = np.random.default_rng(1).random(cfg.shape) < 0.3
    io.write_mask(tmp_path / "m.mvri", cfg, mask)
    cfg2, back = io.read_mask(tmp_path / "m.mvri")
    assert cfg2 == cfg
    assert np.array_equal(back, mask)
