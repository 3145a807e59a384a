import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from moves.core import Pose, Trajectory
from moves.metrics import (
    DegenerateAlignmentError, UnequalCardinalityError, ate, ate_per_axis, chamfer, emd,
    farthest_point_sample, horn_align, masked_range_error, rpe,
)


def brute_emd(a, b):
    best = np.inf
    for perm in itertools.permutations(range(len(b))):
        best = min(best, float(np.linalg.norm(a - b[list(perm)], axis=1).sum()))
    return best


def scan_chamfer(a, b):
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    return float(d.min(1).sum() + d.min(0).sum())


def traj(positions, rotations=None):
    positions = np.asarray(positions, float)
    n = len(positions)
    if rotations is None:
        rotations = [np.array([0, 0, 0, 1.0])] * n
    return Trajectory(np.arange(n, dtype=float), tuple(Pose(p, q) for p, q in zip(positions, rotations)))


def random_traj(rng, n=20):
    pos = np.cumsum(rng.normal(size=(n, 3)), axis=0)
    rots = Rotation.random(n, random_state=rng.integers(1 << 31)).as_quat()
    return traj(pos, rots)


def rigid(rng):
    return Rotation.random(random_state=rng.integers(1 << 31)).as_matrix(), rng.normal(size=3) * 5


def transform_traj(t: Trajectory, R, tvec, left=True):
    m = np.eye(4)
    m[:3, :3], m[:3, 3] = R, tvec
    mats = t.matrices()
    out = [m @ x if left else x @ m for x in mats]
    return Trajectory.from_matrices(t.timestamps, out)


# -- chamfer / emd ----------------------------------------------------------------------


def test_chamfer_examples():
    a = np.array([[0.0, 0, 0]])
    assert chamfer(a, a) == 0.0
    assert chamfer(a, [[3.0, 4, 0]]) == 50.0
    assert chamfer([[0.0, 0, 0], [1, 0, 0]], a) == 1.0


def test_chamfer_rejects_empty():
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), np.zeros((2, 3)))


def test_emd_examples():
    a = np.array([[0.0, 0, 0], [1, 0, 0]])
    assert emd(a, a) == 0.0
    assert emd(a, [[0.0, 1, 0], [1, 1, 0]]) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(UnequalCardinalityError):
        emd(a, a[:1])


@pytest.mark.parametrize("n", range(1, 9))
def test_emd_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(3 if n == 8 else 10):
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        assert abs(emd(a, b) - brute_emd(a, b)) < 1e-9


@pytest.mark.parametrize("n,m", [(1, 1), (7, 300), (512, 512), (100, 3)])
def test_chamfer_matches_quadratic_scan_exactly(n, m):
    rng = np.random.default_rng(n + m)
    a, b = rng.normal(size=(n, 3)) * 4, rng.normal(size=(m, 3)) * 4
    assert chamfer(a, b) == scan_chamfer(a, b)


def test_chamfer_with_duplicate_points_is_exact():
    rng = np.random.default_rng(1)
    a = np.round(rng.normal(size=(200, 3)), 1)
    b = np.round(rng.normal(size=(200, 3)), 1)
    assert chamfer(a, b) == scan_chamfer(a, b)


clouds = st.integers(1, 6).flatmap(
    lambda n: st.tuples(*[st.lists(st.floats(-10, 10), min_size=3 * n, max_size=3 * n)] * 2))


@settings(max_examples=60, deadline=None)
@given(clouds, st.integers(0, 1000))
def test_symmetry_and_rigid_invariance(ab, seed):
    a = np.array(ab[0]).reshape(-1, 3)
    b = np.array(ab[1]).reshape(-1, 3)
    assert chamfer(a, b) == chamfer(b, a)
    assert emd(a, b) == pytest.approx(emd(b, a), abs=1e-9)
    assert chamfer(a, b) >= 0 and emd(a, b) >= 0
    R, t = rigid(np.random.default_rng(seed))
    assert chamfer(a @ R.T + t, b @ R.T + t) == pytest.approx(chamfer(a, b), rel=1e-9, abs=1e-9)
    assert emd(a @ R.T + t, b @ R.T + t) == pytest.approx(emd(a, b), rel=1e-9, abs=1e-9)


def test_emd_zero_only_for_equal_multisets():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 3))
    assert emd(a, a[::-1]) == 0.0
    b = a.copy()
    b[2, 0] += 1e-3
    assert emd(a, b) > 0


def test_farthest_point_sample_is_seeded_and_spread():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(300, 3))
    s1 = farthest_point_sample(pts, 20, seed=4)
    assert np.array_equal(s1, farthest_point_sample(pts, 20, seed=4))
    assert len(np.unique(s1, axis=0)) == 20
    assert np.array_equal(farthest_point_sample(pts, 500), pts)


# -- trajectories ----------------------------------------------------------------------


def test_horn_identity_and_translation():
    rng = np.random.default_rng(0)
    gt = random_traj(rng)
    tf = horn_align(gt, gt)
    assert np.allclose(tf.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(tf.translation, 0, atol=1e-12)
    est = traj(gt.positions() + [1.0, 0, 0])
    tf = horn_align(est, gt)
    assert np.allclose(tf.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(tf.translation, [-1, 0, 0], atol=1e-12)


def test_horn_recovers_random_transforms():
    rng = np.random.default_rng(42)
    for _ in range(100):
        gt = random_traj(rng, n=int(rng.integers(3, 30)))
        R, t = rigid(rng)
        est = gt.positions() @ R.T + t
        tf = horn_align(est, gt)
        assert np.abs(tf.rotation - R.T).max() < 1e-6
        assert np.abs(tf.translation + R.T @ t).max() < 1e-6
        assert np.linalg.det(tf.rotation) == pytest.approx(1.0)


def test_horn_flags_collinear_points():
    line = traj([[i, 0.0, 0] for i in range(5)])
    assert horn_align(line, line).degenerate
    with pytest.raises(DegenerateAlignmentError):
        horn_align(line, line, strict=True)
    with pytest.raises(ValueError):
        horn_align(line, traj(line.positions()[:4]))


def test_ate_zero_and_rigid_invariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        gt = random_traj(rng)
        assert ate(gt, gt) < 1e-9
        R, t = rigid(rng)
        noisy = traj(gt.positions() + rng.normal(size=(len(gt), 3)) * 0.3)
        moved = noisy.positions() @ R.T + t
        assert abs(ate(moved, gt) - ate(noisy, gt)) < 1e-9
        assert ate(gt.positions() @ R.T + t, gt) < 1e-9


def test_ate_length_mismatch():
    rng = np.random.default_rng(0)
    g = random_traj(rng, 5)
    with pytest.raises(ValueError):
        ate(traj(g.positions()[:4]), g)


def test_ate_matches_planar_search_oracle():
    gt = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
    est = np.array([[0.0, 0, 0], [1, 0, 0], [3, 0, 0]])

    def cost(x):
        th, tx, ty = x
        c, s = np.cos(th), np.sin(th)
        px = c * est[:, 0] - s * est[:, 1] + tx
        py = s * est[:, 0] + c * est[:, 1] + ty
        return float(np.sqrt(((px - gt[:, 0]) ** 2 + (py - gt[:, 1]) ** 2).mean()))

    # dense grid over planar rigid transforms, then local polish of the best cell
    grid = itertools.product(np.linspace(-np.pi, np.pi, 181), np.linspace(-2, 2, 41),
                             np.linspace(-2, 2, 41))
    x0 = min(grid, key=cost)
    res = minimize(cost, x0, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000})
    assert cost(x0) >= ate(est, gt) - 1e-12
    assert abs(ate(est, gt) - res.fun) < 1e-9


def test_ate_per_axis_consistent_with_ate():
    rng = np.random.default_rng(3)
    gt = random_traj(rng)
    est = traj(gt.positions() + rng.normal(size=(len(gt), 3)) * 0.2)
    ax = ate_per_axis(est, gt)
    assert np.sqrt((ax ** 2).sum()) == pytest.approx(ate(est, gt), rel=1e-12)


def test_rpe_identity_and_global_offset():
    rng = np.random.default_rng(5)
    for _ in range(20):
        gt = random_traj(rng)
        assert rpe(gt, gt) == (0.0, 0.0)
        R, t = rigid(rng)
        est = transform_traj(gt, R, t, left=True)
        tr, rot = rpe(est, gt, delta=int(rng.integers(1, 5)))
        assert tr < 1e-12 and rot < 1e-12


def test_rpe_constant_drift():
    n = 10
    gt = traj(np.zeros((n, 3)))
    est = traj([[0.1 * i, 0, 0] for i in range(n)])
    tr, rot = rpe(est, gt, delta=1)
    assert tr == pytest.approx(0.1, abs=1e-15)
    assert rot == 0.0
    # a moving gt with the same per-step surplus
    gt = traj([[float(i), 0, 0] for i in range(n)])
    est = traj([[1.125 * i, 0, 0] for i in range(n)])
    assert rpe(est, gt) == (0.125, 0.0)


def test_rpe_delta_bounds():
    g = traj(np.zeros((4, 3)))
    with pytest.raises(ValueError):
        rpe(g, g, delta=4)
    with pytest.raises(ValueError):
        rpe(g, g, delta=0)


def test_rpe_rotation_drift():
    n = 6
    gt = traj(np.zeros((n, 3)))
    rots = [Rotation.from_euler("z", 0.05 * i).as_quat() for i in range(n)]
    est = traj(np.zeros((n, 3)), rots)
    tr, rot = rpe(est, gt)
    assert tr == 0.0
    assert rot == pytest.approx(0.05, abs=1e-12)


def test_masked_range_error():
    from moves.core import RangeImage, SensorConfig
    cfg = SensorConfig(num_beams=2, num_azimuth=4, r_max=10.0)
    gt = RangeImage(cfg, np.full((2, 4), 4.0, np.float32), np.ones((2, 4), bool))
    pred_r = np.full((2, 4), 4.0, np.float32)
    pred_r[0, 0] = 5.5
    valid = np.ones((2, 4), bool)
    valid[1, 1] = False
    pred = RangeImage(cfg, np.where(valid, pred_r, 0), valid)
    mask = np.zeros((2, 4), bool)
    mask[0, 0] = mask[1, 1] = mask[1, 2] = True
    # errors 1.5, 6 (invalid reads as r_max) and 0
    assert masked_range_error(pred, gt, mask) == pytest.approx(7.5 / 3, abs=1e-12)
    assert np.isnan(masked_range_error(pred, gt, np.zeros((2, 4), bool)))
