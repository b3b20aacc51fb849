"""Reconstruction losses and the lifting-distance regularizer.

The perceptual term is a 3-level image pyramid L1 (2x2 average pooling
between levels), not a pretrained feature loss. The lifting-distance term
is one-directional: every head-model vertex pulls its nearest lifted
point, un-modeled regions of the cloud stay unconstrained. The matching
is held fixed within a step; no gradient flows through the argmin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kdtree import KDTree
from .lifting import GaussianCloud
from .validation import as_float_array, check_finite


@dataclass
class LossWeights:
    lambda_p: float = 1.0
    lambda_l: float = 0.1

    def __post_init__(self):
        if self.lambda_p < 0 or self.lambda_l < 0:
            raise ValueError("loss weights must be nonnegative")


def _check_pair(img, target):
    img = as_float_array(img, "img")
    target = as_float_array(target, "target")
    if img.shape != target.shape:
        raise ValueError(f"image shape {img.shape} != target shape {target.shape}")
    return img, target


def l1_image_loss(img, target):
    """Mean absolute error and its (sub)gradient wrt img; 0 at exact ties."""
    img, target = _check_pair(img, target)
    diff = img - target
    loss = float(np.abs(diff).mean())
    grad = np.sign(diff) / diff.size
    return loss, grad


def _downsample2(img):
    k, h, w = img.shape
    return img.reshape(k, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def pyramid_loss(img, target, levels: int = 3):
    """Sum of L1 at full, 1/2, ... resolution with 2x2 average pooling.

    img, target: (K, H, W) with H, W divisible by 2^(levels-1).
    """
    img, target = _check_pair(img, target)
    if img.ndim != 3:
        raise ValueError("expected channel-first images (K, H, W)")
    div = 2 ** (levels - 1)
    if img.shape[1] % div or img.shape[2] % div:
        raise ValueError(
            f"image dims {img.shape[1:]} not divisible by 2^(levels-1) = {div}")
    total = 0.0
    grad = np.zeros_like(img)
    cur_i, cur_t = img, target
    for lvl in range(levels):
        diff = cur_i - cur_t
        total += float(np.abs(diff).mean())
        g = np.sign(diff) / diff.size
        # Transposed average pooling: spread each pooled gradient evenly
        # over its 2^lvl x 2^lvl source block.
        up = 2 ** lvl
        grad += np.repeat(np.repeat(g, up, axis=1), up, axis=2) / (up * up)
        if lvl < levels - 1:
            cur_i = _downsample2(cur_i)
            cur_t = _downsample2(cur_t)
    return total, grad


def lifting_distance_loss(model_vertices, cloud: GaussianCloud, tree: KDTree | None = None):
    """Mean squared vertex-to-nearest-lifted-point distance.

    Returns (loss, grad wrt cloud positions, matched point indices). Points
    matched by several vertices accumulate each vertex's pull.
    """
    verts = check_finite(
        as_float_array(model_vertices, "model_vertices", (-1, 3)), "model_vertices")
    if cloud.num_points == 0:
        raise ValueError("cloud must be nonempty")
    if tree is None:
        tree = KDTree(cloud.positions)
    matched, d2 = tree.query(verts)
    v = verts.shape[0]
    loss = float(d2.sum() / v)
    grad = np.zeros_like(cloud.positions)
    pull = 2.0 * (cloud.positions[matched] - verts) / v
    np.add.at(grad, matched, pull)
    return loss, grad, matched


@dataclass
class TotalLossResult:
    total: float
    l1_coarse: float
    l1_fine: float
    pyramid: float
    lifting: float
    grad_coarse: np.ndarray = field(repr=False)        # (K, H, W)
    grad_fine: np.ndarray = field(repr=False)          # (3, H, W)
    grad_cloud_positions: np.ndarray = field(repr=False)
    matched: np.ndarray = field(repr=False)


def total_loss(coarse, fine, target, model_vertices, cloud: GaussianCloud,
               weights: LossWeights, tree: KDTree | None = None) -> TotalLossResult:
    """L1(coarse,target) + L1(fine,target) + lambda_p*(pyr+pyr) + lambda_l*lift.

    coarse is a K-channel feature buffer; its reconstruction terms compare
    the first 3 channels (the RGB-bearing ones) against the target.
    """
    coarse = as_float_array(coarse, "coarse")
    fine = as_float_array(fine, "fine")
    target = as_float_array(target, "target")
    if fine.shape != target.shape:
        raise ValueError(f"fine shape {fine.shape} != target shape {target.shape}")
    if coarse.shape[0] < 3:
        raise ValueError("coarse buffer needs at least 3 channels")

    coarse_rgb = coarse[:3]
    l1_c, g_l1_c = l1_image_loss(coarse_rgb, target)
    l1_f, g_l1_f = l1_image_loss(fine, target)
    pyr_c, g_pyr_c = pyramid_loss(coarse_rgb, target)
    pyr_f, g_pyr_f = pyramid_loss(fine, target)
    lift, g_pos, matched = lifting_distance_loss(model_vertices, cloud, tree)

    lp, ll = weights.lambda_p, weights.lambda_l
    total = l1_c + l1_f + lp * (pyr_c + pyr_f) + ll * lift

    grad_coarse = np.zeros_like(coarse)
    grad_coarse[:3] = g_l1_c + lp * g_pyr_c
    grad_fine = g_l1_f + lp * g_pyr_f

    return TotalLossResult(
        total=total,
        l1_coarse=l1_c,
        l1_fine=l1_f,
        pyramid=pyr_c + pyr_f,
        lifting=lift,
        grad_coarse=grad_coarse,
        grad_fine=grad_fine,
        grad_cloud_positions=ll * g_pos,
        matched=matched,
    )
