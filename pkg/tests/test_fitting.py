"""Optimizer mechanics and the end-to-end fitting loop on toy scenes."""
import numpy as np
import pytest

from gaga.errors import NumericError
from gaga.fitting import (AdamState, FitConfig, Reenactor, TargetSet, TargetView,
                          adam_step, clip_global_norm, evaluate_l1, fit_avatar,
                          init_avatar, make_ground_truth_avatar,
                          make_synthetic_targets, time_reenact_frames)
from gaga.head_model import ExpressionParams, generate_toy_model
from gaga.camera import orbit_camera


@pytest.fixture(scope="module")
def tiny_problem():
    model = generate_toy_model(7, num_vertices=64)
    targets, gt = make_synthetic_targets(model, seed=1, grid_res=16,
                                         resolution=32, train_cameras=2,
                                         holdout_cameras=1)
    return model, targets, gt


def test_adam_single_step_hand_formula():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -0.25])
    params = {"p": p}
    state = AdamState(params, betas=(0.9, 0.999), eps=1e-8)
    adam_step(state, params, {"p": g}, lr=0.1)
    # Bias correction makes the first step lr * g / (|g| + eps).
    expected = np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p, expected, atol=1e-12)


def test_adam_two_steps_hand_computed():
    p = np.array([0.3])
    params = {"p": p}
    state = AdamState(params, betas=(0.9, 0.999), eps=1e-8)
    m = v = 0.0
    ref = 0.3
    for t, g in [(1, 0.2), (2, -0.4)]:
        adam_step(state, params, {"p": np.array([g])}, lr=0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p, [ref], atol=1e-12)


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, 2.0, 3.0])
    params = {"p": p}
    state = AdamState(params)
    for _ in range(5):
        adam_step(state, params, {"p": np.zeros(3)}, lr=0.5)
    np.testing.assert_array_equal(p, [1.0, 2.0, 3.0])


def test_adam_minimizes_quadratic():
    target = np.array([2.0, -1.0, 0.5])
    p = np.zeros(3)
    params = {"p": p}
    state = AdamState(params)
    for _ in range(400):
        adam_step(state, params, {"p": 2.0 * (p - target)}, lr=0.05)
    np.testing.assert_allclose(p, target, atol=1e-3)


def test_adam_shape_mismatch_rejected():
    params = {"p": np.zeros(3)}
    state = AdamState(params)
    with pytest.raises(ValueError):
        adam_step(state, params, {"p": np.zeros(4)}, lr=0.1)


def test_clip_global_norm():
    g1 = np.array([3.0, 0.0])
    g2 = np.array([4.0])
    grads = {"a": g1, "b": g2}
    norm = clip_global_norm(grads, max_norm=2.5)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(np.sum(g1 ** 2) + np.sum(g2 ** 2))
    assert total == pytest.approx(2.5)

    grads = {"a": np.array([0.3, 0.4])}
    norm = clip_global_norm(grads, max_norm=2.5)
    assert norm == pytest.approx(0.5)
    np.testing.assert_allclose(grads["a"], [0.3, 0.4])


def test_zero_iterations_returns_initial_avatar(tiny_problem):
    model, targets, _ = tiny_problem
    config = FitConfig(iterations=0, grid_res=16, resolution=32, seed=11)
    result = fit_avatar(model, targets, config)
    assert result.history == []
    init = init_avatar(model, targets.train()[0].camera, config)
    for key, val in init.params().items():
        np.testing.assert_array_equal(result.avatar.params()[key], val)


def test_ground_truth_avatar_reproduces_own_targets(tiny_problem):
    model, targets, gt = tiny_problem
    assert evaluate_l1(gt, model, targets.train()) <= 1e-10
    assert evaluate_l1(gt, model, targets.holdout()) <= 1e-10


def test_synthetic_target_counts(tiny_problem):
    _, targets, _ = tiny_problem
    # 2 ring cameras x 3 expressions train, 1 offset camera neutral holdout.
    assert len(targets.train()) == 6
    assert len(targets.holdout()) == 1
    assert len(targets.items) == 7


def test_target_set_requires_train_item(tiny_problem):
    _, targets, _ = tiny_problem
    hold_only = [t for t in targets.items if t.split == "holdout"]
    with pytest.raises(ValueError):
        TargetSet(hold_only)


def test_short_fit_reduces_loss(tiny_problem):
    model, targets, _ = tiny_problem
    config = FitConfig(iterations=40, learning_rate=1e-2, grid_res=16,
                       resolution=32, seed=0)
    result = fit_avatar(model, targets, config)
    assert len(result.history) == 40
    first, last = result.history[0]["total"], result.history[-1]["total"]
    assert last < 0.8 * first
    for row in result.history:
        assert set(row) == {"iteration", "total", "l1_coarse", "l1_fine",
                            "pyramid", "lifting"}


def test_fit_is_bit_reproducible(tiny_problem):
    model, targets, _ = tiny_problem
    config = FitConfig(iterations=8, learning_rate=1e-2, grid_res=16,
                       resolution=32, seed=5)
    a = fit_avatar(model, targets, config)
    b = fit_avatar(model, targets, config)
    assert a.history == b.history
    for key, val in a.avatar.params().items():
        np.testing.assert_array_equal(b.avatar.params()[key], val)


def test_holdout_views_not_trained_on(tiny_problem):
    model, targets, _ = tiny_problem
    marker = np.full_like(targets.holdout()[0].image, 123.0)
    poisoned = TargetSet([
        TargetView(image=marker.copy(), camera=t.camera, params=t.params,
                   split=t.split) if t.split == "holdout" else t
        for t in targets.items
    ])
    config = FitConfig(iterations=6, learning_rate=1e-2, grid_res=16,
                       resolution=32, seed=2)
    a = fit_avatar(model, targets, config)
    b = fit_avatar(model, poisoned, config)
    assert a.history == b.history  # train trajectory blind to holdout pixels


def test_non_finite_loss_raises_numeric_error(tiny_problem):
    model, targets, _ = tiny_problem
    bad = TargetSet([TargetView(image=np.full_like(t.image, np.nan),
                                camera=t.camera, params=t.params, split=t.split)
                     for t in targets.items])
    config = FitConfig(iterations=5, learning_rate=1e-2, grid_res=16,
                       resolution=32, seed=0)
    with pytest.raises(NumericError), np.errstate(all="ignore"):
        fit_avatar(model, bad, config)


def test_extreme_rate_stays_finite(tiny_problem):
    # Scale clamps and gradient clipping keep even an absurd step size from
    # overflowing into NaN; the loop must survive without propagating inf.
    model, targets, _ = tiny_problem
    config = FitConfig(iterations=25, learning_rate=1e6, grid_res=16,
                       resolution=32, seed=0)
    with np.errstate(all="ignore"):
        result = fit_avatar(model, targets, config)
    assert np.isfinite(result.history[-1]["total"])


def test_expression_changes_rendered_frame(tiny_problem):
    model, targets, gt = tiny_problem
    reenactor = Reenactor(gt, model)
    cam = targets.train()[0].camera
    neutral = reenactor.render_frame(ExpressionParams.zeros(model), cam)
    poked = ExpressionParams.zeros(model)
    poked.psi[0] = 2.0
    moved = reenactor.render_frame(poked, cam)
    assert np.abs(moved - neutral).max() > 1e-4


def test_time_reenact_frames(tiny_problem):
    model, _, gt = tiny_problem
    cam = orbit_camera(0.0, 0.0, 2.6, 35.0, 32)
    frames = [(ExpressionParams.zeros(model), cam) for _ in range(3)]
    times = time_reenact_frames(gt, model, frames)
    assert len(times) == 3
    assert all(t > 0 for t in times)


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(iterations=-1)
    with pytest.raises(ValueError):
        FitConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        FitConfig(batch=0)
