"""Dual lifting: two raw parameter sheets over the source-view plane become
a Gaussian point cloud enclosing the head.

Each sheet pixel carries 41 raw values (32 features + opacity logit +
3 log-scales + 4 rotation components + 1 lifting distance). Front pixels
lift along the plane normal (toward the camera), back pixels against it,
so the two sheets cannot swap roles during optimization: the front/back
split is built into the signs, not learned.

Activations map raw values onto their valid ranges: softplus for the
(nonnegative) dual-lift distance, sigmoid for opacity, clamped exp for
scale, normalization for rotations. The same 40-dim attribute layout is
reused by the expression branch, which predicts everything but distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .camera import ImagePlane
from .transforms import normalize_backward, normalize_quaternions
from .validation import as_float_array, check_finite

N_FEATURES = 32
RAW_DIMS = 41           # 32 + 1 + 3 + 4 + 1
ATTR_DIMS = 40          # raw dims minus lifting distance
FEATURE_SLICE = slice(0, 32)
OPACITY_SLOT = 32
SCALE_SLICE = slice(33, 36)
ROTATION_SLICE = slice(36, 40)
DISTANCE_SLOT = 40

SCALE_MIN = 1e-4
SCALE_MAX = 0.5


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    return np.log(np.expm1(y))


@dataclass
class LiftingGrids:
    front: np.ndarray  # (res, res, 41)
    back: np.ndarray   # (res, res, 41)

    def __post_init__(self):
        self.front = check_finite(
            as_float_array(self.front, "front", (-1, -1, RAW_DIMS)), "front")
        self.back = check_finite(
            as_float_array(self.back, "back", (-1, -1, RAW_DIMS)), "back")
        if self.front.shape != self.back.shape:
            raise ValueError(
                f"front shape {self.front.shape} != back shape {self.back.shape}")
        if self.front.shape[0] != self.front.shape[1]:
            raise ValueError("sheets must be square")

    @property
    def res(self) -> int:
        return self.front.shape[0]

    def copy(self) -> "LiftingGrids":
        return LiftingGrids(self.front.copy(), self.back.copy())


def init_grids(res: int, extent: float, seed: int = 0) -> LiftingGrids:
    """Grids whose assembled cloud starts as two thin translucent sheets.

    Distance 0.05 keeps front and back separated from the start, opacity 0.1
    lets early gradients reach occluded points, and scale 2*extent/res makes
    neighboring splats just overlap.
    """
    rng = np.random.default_rng(seed)
    sheet = np.zeros((res, res, RAW_DIMS))
    sheet[:, :, FEATURE_SLICE] = rng.normal(scale=0.1, size=(res, res, N_FEATURES))
    sheet[:, :, OPACITY_SLOT] = np.log(0.1 / 0.9)
    sheet[:, :, SCALE_SLICE] = np.log(2.0 * extent / res)
    sheet[:, :, ROTATION_SLICE] = (1.0, 0.0, 0.0, 0.0)
    sheet[:, :, DISTANCE_SLOT] = softplus_inverse(0.05)
    back = sheet.copy()
    back[:, :, FEATURE_SLICE] = rng.normal(scale=0.1, size=(res, res, N_FEATURES))
    return LiftingGrids(sheet, back)


@dataclass
class GaussianCloud:
    positions: np.ndarray   # (N, 3)
    rotations: np.ndarray   # (N, 4) unit quaternions
    scales: np.ndarray      # (N, 3) positive
    opacities: np.ndarray   # (N,) in (0, 1)
    features: np.ndarray    # (N, K)

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def validate(self) -> "GaussianCloud":
        n = self.positions.shape[0]
        self.positions = check_finite(
            as_float_array(self.positions, "positions", (n, 3)), "positions")
        self.rotations = check_finite(
            as_float_array(self.rotations, "rotations", (n, 4)), "rotations")
        self.scales = check_finite(
            as_float_array(self.scales, "scales", (n, 3)), "scales")
        self.opacities = check_finite(
            as_float_array(self.opacities, "opacities", (n,)), "opacities")
        self.features = check_finite(
            as_float_array(self.features, "features", (n, -1)), "features")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("rotations must be unit quaternions (within 1e-6)")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        if np.any((self.opacities <= 0) | (self.opacities >= 1)):
            raise ValueError("opacities must lie in the open interval (0, 1)")
        return self


@dataclass
class CloudGradients:
    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    features: np.ndarray

    @classmethod
    def zeros(cls, n: int, k: int) -> "CloudGradients":
        return cls(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
                   np.zeros(n), np.zeros((n, k)))


def merge_clouds(a: GaussianCloud, b: GaussianCloud) -> GaussianCloud:
    if a.num_features != b.num_features:
        raise ValueError("feature dims differ between clouds")
    return GaussianCloud(
        positions=np.concatenate([a.positions, b.positions]),
        rotations=np.concatenate([a.rotations, b.rotations]),
        scales=np.concatenate([a.scales, b.scales]),
        opacities=np.concatenate([a.opacities, b.opacities]),
        features=np.concatenate([a.features, b.features]),
    )


def attributes_from_raw(raw: np.ndarray):
    """Map raw 40-dim records onto (features, opacities, scales, rotations).

    raw: (N, 40). Scale is exp-then-clamp so a runaway log-scale cannot
    produce an all-covering splat.
    """
    features = raw[:, FEATURE_SLICE].copy()
    opacities = expit(raw[:, OPACITY_SLOT])
    scales = np.clip(np.exp(raw[:, SCALE_SLICE]), SCALE_MIN, SCALE_MAX)
    rotations = normalize_quaternions(raw[:, ROTATION_SLICE])
    return features, opacities, scales, rotations


def attributes_backward(raw: np.ndarray, grad_features, grad_opacities,
                        grad_scales, grad_rotations) -> np.ndarray:
    """Chain upstream attribute gradients back to the raw 40-dim records."""
    grad_raw = np.zeros((raw.shape[0], ATTR_DIMS))
    grad_raw[:, FEATURE_SLICE] = grad_features
    op = expit(raw[:, OPACITY_SLOT])
    grad_raw[:, OPACITY_SLOT] = grad_opacities * op * (1.0 - op)
    s = np.exp(raw[:, SCALE_SLICE])
    inside = (s >= SCALE_MIN) & (s <= SCALE_MAX)
    # Select, don't multiply: s can overflow to inf where the clamp is
    # active, and inf * 0 would poison the gradient with NaN.
    grad_raw[:, SCALE_SLICE] = np.where(inside, grad_scales * s, 0.0)
    grad_raw[:, ROTATION_SLICE] = normalize_backward(
        raw[:, ROTATION_SLICE], grad_rotations)
    return grad_raw


def _check_grid_points(grids_res: int, grid_points: np.ndarray) -> np.ndarray:
    pts = as_float_array(grid_points, "grid_points", (-1, 3))
    if pts.shape[0] != grids_res * grids_res:
        raise ValueError(
            f"grid_points count {pts.shape[0]} does not match res² = {grids_res ** 2}")
    return pts


def assemble_dual_lift(grids: LiftingGrids, plane: ImagePlane,
                       grid_points: np.ndarray) -> GaussianCloud:
    """Lift both sheets off the plane: front along +normal, back along -normal.

    Output point order is front sheet (row-major) then back sheet, N = 2*res².
    """
    pts = _check_grid_points(grids.res, grid_points)
    n = plane.normal
    front = grids.front.reshape(-1, RAW_DIMS)
    back = grids.back.reshape(-1, RAW_DIMS)

    d_front = softplus(front[:, DISTANCE_SLOT])
    d_back = softplus(back[:, DISTANCE_SLOT])
    pos_front = pts + d_front[:, None] * n
    pos_back = pts - d_back[:, None] * n

    f_f, o_f, s_f, r_f = attributes_from_raw(front[:, :ATTR_DIMS])
    f_b, o_b, s_b, r_b = attributes_from_raw(back[:, :ATTR_DIMS])

    return GaussianCloud(
        positions=np.concatenate([pos_front, pos_back]),
        rotations=np.concatenate([r_f, r_b]),
        scales=np.concatenate([s_f, s_b]),
        opacities=np.concatenate([o_f, o_b]),
        features=np.concatenate([f_f, f_b]),
    )


def assemble_dual_lift_backward(grids: LiftingGrids, plane: ImagePlane,
                                grad_cloud: CloudGradients) -> LiftingGrids:
    """Gradients wrt the raw grids, same (res, res, 41) layout as the grids.

    The returned LiftingGrids holds gradient values, not parameters.
    """
    res = grids.res
    m = res * res
    if grad_cloud.positions.shape[0] != 2 * m:
        raise ValueError(
            f"gradient count {grad_cloud.positions.shape[0]} does not match 2·res² = {2 * m}")
    n = plane.normal
    out = np.zeros((2, m, RAW_DIMS))
    for i, (sheet, sign) in enumerate([(grids.front, 1.0), (grids.back, -1.0)]):
        raw = sheet.reshape(-1, RAW_DIMS)
        sl = slice(i * m, (i + 1) * m)
        out[i, :, :ATTR_DIMS] = attributes_backward(
            raw[:, :ATTR_DIMS],
            grad_cloud.features[sl],
            grad_cloud.opacities[sl],
            grad_cloud.scales[sl],
            grad_cloud.rotations[sl],
        )
        # d pos / d distance_raw = sign * n * softplus'(raw) with softplus' = sigmoid
        out[i, :, DISTANCE_SLOT] = (grad_cloud.positions[sl] @ n) * sign * expit(
            raw[:, DISTANCE_SLOT])
    return LiftingGrids(out[0].reshape(res, res, RAW_DIMS),
                        out[1].reshape(res, res, RAW_DIMS))


def single_plane_lift(sheet: np.ndarray, plane: ImagePlane,
                      grid_points: np.ndarray) -> GaussianCloud:
    """Ablation variant: one sheet, signed distance tanh-bounded to ±extent.

    With a single signed sheet, mirror-symmetric solutions about the plane
    render identically from the source view; the dual lift exists to remove
    exactly this ambiguity.
    """
    sheet = check_finite(as_float_array(sheet, "sheet", (-1, -1, RAW_DIMS)), "sheet")
    if sheet.shape[0] != sheet.shape[1]:
        raise ValueError("sheet must be square")
    pts = _check_grid_points(sheet.shape[0], grid_points)
    raw = sheet.reshape(-1, RAW_DIMS)
    signed = plane.extent * np.tanh(raw[:, DISTANCE_SLOT])
    positions = pts + signed[:, None] * plane.normal
    features, opacities, scales, rotations = attributes_from_raw(raw[:, :ATTR_DIMS])
    return GaussianCloud(positions=positions, rotations=rotations, scales=scales,
                         opacities=opacities, features=features)
