import numpy as np
import pytest
from scipy.special import expit

from gaga import lifting as lf
from gaga.camera import orbit_camera, plane_through_origin

from oracles import fd_gradient, rel_err


def _plane_and_points(res, extent=1.0, yaw=0.0):
    cam = orbit_camera(yaw, 0.0, 2.6, 35.0, 64)
    return plane_through_origin(cam, res, extent)


def _random_grids(rng, res):
    g = rng.normal(scale=0.4, size=(2, res, res, lf.RAW_DIMS))
    # keep scale raw values away from the exp clamp edges
    g[..., lf.SCALE_SLICE] = rng.uniform(-5.0, -2.0, size=(2, res, res, 3))
    # keep quaternions away from zero norm
    g[..., lf.ROTATION_SLICE] += np.where(g[..., lf.ROTATION_SLICE] >= 0, 0.5, -0.5)
    return lf.LiftingGrids(g[0], g[1])


def test_softplus_inverse_round_trip():
    x = np.linspace(-6, 6, 25)
    np.testing.assert_allclose(lf.softplus_inverse(lf.softplus(x)), x, atol=1e-9)


def test_dual_lift_cardinality():
    # 2 * res^2 points, front sheet first
    res = 8
    plane, pts = _plane_and_points(res)
    grids = lf.init_grids(res, 1.0, seed=0)
    cloud = lf.assemble_dual_lift(grids, plane, pts)
    assert cloud.num_points == 2 * res * res
    cloud.validate()


def test_dual_lift_geometry():
    res = 6
    plane, pts = _plane_and_points(res, yaw=30.0)
    grids = lf.init_grids(res, 1.0, seed=1)
    cloud = lf.assemble_dual_lift(grids, plane, pts)
    m = res * res
    front, back = cloud.positions[:m], cloud.positions[m:]
    # front sheet lies on the +normal side, back on the -normal side,
    # both at softplus(distance_raw) from the plane
    d_front = front @ plane.normal
    d_back = back @ plane.normal
    exp_front = lf.softplus(grids.front[..., lf.DISTANCE_SLOT].reshape(-1))
    exp_back = lf.softplus(grids.back[..., lf.DISTANCE_SLOT].reshape(-1))
    np.testing.assert_allclose(d_front, exp_front, atol=1e-12)
    np.testing.assert_allclose(d_back, -exp_back, atol=1e-12)
    # in-plane coordinates are untouched by the lift
    np.testing.assert_allclose(front - d_front[:, None] * plane.normal, pts, atol=1e-12)


def test_lift_points_move_with_distance_channel():
    res = 4
    plane, pts = _plane_and_points(res)
    grids = lf.init_grids(res, 1.0, seed=0)
    bumped = grids.copy()
    bumped.front[2, 3, lf.DISTANCE_SLOT] += 1.0
    a = lf.assemble_dual_lift(grids, plane, pts)
    b = lf.assemble_dual_lift(bumped, plane, pts)
    moved = np.linalg.norm(a.positions - b.positions, axis=1)
    assert np.count_nonzero(moved > 1e-12) == 1
    assert moved[2 * res + 3] > 0  # row-major front sheet


def test_attributes_from_raw_ranges():
    rng = np.random.default_rng(2)
    raw = rng.normal(scale=3.0, size=(200, lf.ATTR_DIMS))
    feats, opac, scales, rots = lf.attributes_from_raw(raw)
    assert np.all((opac > 0) & (opac < 1))
    assert np.all((scales >= lf.SCALE_MIN) & (scales <= lf.SCALE_MAX))
    np.testing.assert_allclose(np.linalg.norm(rots, axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(feats, raw[:, lf.FEATURE_SLICE])


def test_attributes_activation_values():
    raw = np.zeros((1, lf.ATTR_DIMS))
    raw[0, lf.OPACITY_SLOT] = 0.0
    raw[0, lf.SCALE_SLICE] = np.log(0.2)
    raw[0, lf.ROTATION_SLICE] = (2.0, 0.0, 0.0, 0.0)
    _, opac, scales, rots = lf.attributes_from_raw(raw)
    assert opac[0] == pytest.approx(0.5)
    np.testing.assert_allclose(scales[0], 0.2, atol=1e-12)
    np.testing.assert_allclose(rots[0], [1, 0, 0, 0], atol=1e-12)


def test_zero_quaternion_falls_back_to_identity():
    raw = np.zeros((1, lf.ATTR_DIMS))
    _, _, _, rots = lf.attributes_from_raw(raw)
    np.testing.assert_array_equal(rots[0], [1.0, 0.0, 0.0, 0.0])


def test_merge_clouds_counts(cam64):
    rng = np.random.default_rng(3)
    res = 4
    plane, pts = _plane_and_points(res)
    a = lf.assemble_dual_lift(lf.init_grids(res, 1.0, 0), plane, pts)
    b = lf.assemble_dual_lift(lf.init_grids(res, 1.0, 1), plane, pts)
    m = lf.merge_clouds(a, b)
    assert m.num_points == a.num_points + b.num_points
    np.testing.assert_array_equal(m.positions[: a.num_points], a.positions)


def test_merge_feature_mismatch():
    c = lf.GaussianCloud(np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]]),
                         np.ones((1, 3)), np.array([0.5]), np.zeros((1, 4)))
    d = lf.GaussianCloud(np.zeros((1, 3)), np.array([[1.0, 0, 0, 0]]),
                         np.ones((1, 3)), np.array([0.5]), np.zeros((1, 5)))
    with pytest.raises(ValueError):
        lf.merge_clouds(c, d)


def test_assemble_dual_lift_backward_fd():
    rng = np.random.default_rng(4)
    res = 4
    plane, pts = _plane_and_points(res, yaw=20.0)
    grids = _random_grids(rng, res)
    m = 2 * res * res
    up = lf.CloudGradients(
        positions=rng.normal(size=(m, 3)),
        rotations=rng.normal(size=(m, 4)),
        scales=rng.normal(size=(m, 3)),
        opacities=rng.normal(size=m),
        features=rng.normal(size=(m, lf.N_FEATURES)),
    )

    def loss_of(front, back):
        cloud = lf.assemble_dual_lift(lf.LiftingGrids(front, back), plane, pts)
        return float(
            np.sum(cloud.positions * up.positions)
            + np.sum(cloud.rotations * up.rotations)
            + np.sum(cloud.scales * up.scales)
            + np.sum(cloud.opacities * up.opacities)
            + np.sum(cloud.features * up.features))

    g = lf.assemble_dual_lift_backward(grids, plane, up)
    fd_front = fd_gradient(lambda x: loss_of(x, grids.back), grids.front.copy())
    fd_back = fd_gradient(lambda x: loss_of(grids.front, x), grids.back.copy())
    assert rel_err(g.front, fd_front) < 1e-6
    assert rel_err(g.back, fd_back) < 1e-6


def test_single_plane_lift_bounds():
    rng = np.random.default_rng(5)
    res = 5
    plane, pts = _plane_and_points(res)
    sheet = rng.normal(scale=2.0, size=(res, res, lf.RAW_DIMS))
    cloud = lf.single_plane_lift(sheet, plane, pts)
    assert cloud.num_points == res * res
    d = cloud.positions @ plane.normal
    assert np.all(np.abs(d) < plane.extent)  # tanh-bounded signed offset


def test_grid_point_count_mismatch():
    res = 4
    plane, pts = _plane_and_points(res + 1)
    grids = lf.init_grids(res, 1.0, 0)
    with pytest.raises(ValueError):
        lf.assemble_dual_lift(grids, plane, pts)


def test_init_grids_documented_values():
    g = lf.init_grids(8, 1.0, seed=0)
    assert g.res == 8
    np.testing.assert_allclose(expit(g.front[..., lf.OPACITY_SLOT]), 0.1, atol=1e-12)
    np.testing.assert_allclose(np.exp(g.front[..., lf.SCALE_SLICE]), 2.0 / 8, atol=1e-12)
    np.testing.assert_allclose(lf.softplus(g.front[..., lf.DISTANCE_SLOT]), 0.05, atol=1e-12)
    # the two sheets start with different feature noise
    assert np.any(g.front[..., lf.FEATURE_SLICE] != g.back[..., lf.FEATURE_SLICE])
