"""Tile-based K-channel Gaussian splatting, forward and backward.

The splatting math is the standard EWA-style projection: 3D covariance
R diag(s^2) R^T, local affine Jacobian J at the mean, 2D covariance
J W Sigma W^T J^T plus a low-pass term, front-to-back alpha compositing.
The depth sort is global per frame with ties broken by cloud index, so
any permutation of the input renders identically.

Tiles bin by a 3.5-sigma footprint: beyond that radius a splat's alpha
falls below the 1/255 skip threshold even at opacity 0.99, so tiling
never changes which entries a pixel composites.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import Camera
from .lifting import CloudGradients, GaussianCloud, merge_clouds  # noqa: F401  (merge re-exported here)
from .transforms import quat_to_matrix, quat_to_matrix_backward
from .validation import as_float_array

DET_FLOOR = 1e-12
RADIUS_SIGMA = 3.5


@dataclass
class RenderSettings:
    tile_size: int = 16
    near_plane: float = 0.05
    background: np.ndarray | None = None  # (K,), zeros if omitted
    transmittance_floor: float = 1e-4
    low_pass: float = 0.3

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.near_plane <= 0:
            raise ValueError("near_plane must be positive")
        if self.background is not None:
            self.background = as_float_array(self.background, "background", (-1,))

    def background_for(self, k: int) -> np.ndarray:
        if self.background is None:
            return np.zeros(k)
        if self.background.shape[0] != k:
            raise ValueError(
                f"background has {self.background.shape[0]} channels, cloud has {k}")
        return self.background


@dataclass
class FrameBuffer:
    channels: np.ndarray  # (K, H, W)
    alpha: np.ndarray     # (H, W)


@dataclass
class _Projection:
    """Per-gaussian forward intermediates for the kept (visible) subset."""
    kept: np.ndarray        # indices into the original cloud
    cam: np.ndarray         # (M, 3) camera-space positions
    txy: np.ndarray         # (M, 2) frustum-clamped x, y used inside J
    clipped: np.ndarray     # (M, 2) bool, clamp active
    rot_mats: np.ndarray    # (M, 3, 3)
    big_m: np.ndarray       # (M, 3, 3) R * diag(s)
    trans_a: np.ndarray     # (M, 2, 3) J @ W
    trans_t: np.ndarray     # (M, 2, 3) J @ W @ M
    jac: np.ndarray         # (M, 2, 3)
    cov2d: np.ndarray       # (M, 2, 2) incl. low-pass
    det: np.ndarray         # (M,)
    conics: np.ndarray      # (M, 3) packed (a, b, c)
    means2d: np.ndarray     # (M, 2)
    radius: np.ndarray      # (M,)


@dataclass
class RenderCache:
    proj: _Projection
    pair_gauss: np.ndarray
    tile_starts: np.ndarray
    tiles_x: int
    tiles_y: int
    trans: np.ndarray | None = None  # (H, W) final transmittance
    last: np.ndarray | None = None   # (H, W) last applied entry index


def _project(cloud: GaussianCloud, camera: Camera, settings: RenderSettings):
    cam_all = camera.world_to_camera(cloud.positions)
    kept = np.flatnonzero((cam_all[:, 2] > settings.near_plane)
                          & (cloud.opacities >= _kernels.ALPHA_SKIP))
    cam = cam_all[kept]
    m = kept.shape[0]
    if m == 0:
        return None

    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    fx, fy = camera.fx, camera.fy
    lim_x = 1.3 * (0.5 * camera.width / fx)
    lim_y = 1.3 * (0.5 * camera.height / fy)
    tx = np.clip(x / z, -lim_x, lim_x) * z
    ty = np.clip(y / z, -lim_y, lim_y) * z
    clipped = np.stack([np.abs(x / z) > lim_x, np.abs(y / z) > lim_y], axis=1)

    jac = np.zeros((m, 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * tx / z ** 2
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * ty / z ** 2

    w_mat = camera.rotation_matrix().T  # world -> camera
    rot_mats = quat_to_matrix(cloud.rotations[kept])
    big_m = rot_mats * cloud.scales[kept][:, None, :]
    trans_a = jac @ w_mat
    trans_t = trans_a @ big_m
    cov2d = trans_t @ trans_t.transpose(0, 2, 1)
    cov2d[:, 0, 0] += settings.low_pass
    cov2d[:, 1, 1] += settings.low_pass

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = np.maximum(a * c - b * b, DET_FLOOR)
    conics = np.stack([c / det, -b / det, a / det], axis=1)

    means2d = np.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 1e-9))
    radius = np.ceil(RADIUS_SIGMA * np.sqrt(lam_max))

    return _Projection(kept=kept, cam=cam, txy=np.stack([tx, ty], axis=1),
                       clipped=clipped, rot_mats=rot_mats, big_m=big_m,
                       trans_a=trans_a, trans_t=trans_t, jac=jac, cov2d=cov2d,
                       det=det, conics=conics, means2d=means2d, radius=radius)


def _make_pairs(proj: _Projection, settings: RenderSettings,
                height: int, width: int):
    ts = settings.tile_size
    tiles_x = (width + ts - 1) // ts
    tiles_y = (height + ts - 1) // ts
    u, v, r = proj.means2d[:, 0], proj.means2d[:, 1], proj.radius
    x0 = np.clip(np.floor((u - r) / ts), 0, tiles_x).astype(np.int64)
    x1 = np.clip(np.floor((u + r) / ts) + 1, 0, tiles_x).astype(np.int64)
    y0 = np.clip(np.floor((v - r) / ts), 0, tiles_y).astype(np.int64)
    y1 = np.clip(np.floor((v + r) / ts) + 1, 0, tiles_y).astype(np.int64)
    counts = np.maximum(x1 - x0, 0) * np.maximum(y1 - y0, 0)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])

    pair_tile = np.empty(total, dtype=np.int64)
    pair_gauss = np.empty(total, dtype=np.int64)
    _kernels.build_pairs(x0, x1, y0, y1, offsets[:-1], tiles_x,
                         pair_tile, pair_gauss)
    return pair_tile, pair_gauss, tiles_x, tiles_y


def _sort_pairs(pair_tile, pair_gauss, depth, num_tiles):
    # Global front-to-back order: depth, ties by original cloud index.
    # kept preserves input order, so local index order matches it.
    m = depth.shape[0]
    order = np.lexsort((np.arange(m), depth))
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    key = pair_tile * m + rank[pair_gauss]
    pair_order = np.argsort(key)
    pair_gauss = pair_gauss[pair_order]
    pair_tile = pair_tile[pair_order]

    tile_counts = np.bincount(pair_tile, minlength=num_tiles)
    tile_starts = np.concatenate([[0], np.cumsum(tile_counts)]).astype(np.int64)
    return pair_gauss, tile_starts


def _bin(proj: _Projection, depth: np.ndarray, settings: RenderSettings,
         height: int, width: int):
    pair_tile, pair_gauss, tiles_x, tiles_y = _make_pairs(proj, settings, height, width)
    pair_gauss, tile_starts = _sort_pairs(pair_tile, pair_gauss, depth,
                                          tiles_x * tiles_y)
    return pair_gauss, tile_starts, tiles_x, tiles_y


def render(cloud: GaussianCloud, camera: Camera, settings: RenderSettings | None = None,
           return_cache: bool = False):
    """Splat the cloud into a K-channel framebuffer from the camera."""
    settings = settings or RenderSettings()
    k = cloud.num_features
    h, w = camera.height, camera.width
    bg = settings.background_for(k)
    channels = np.zeros((k, h, w))
    alpha = np.zeros((h, w))

    proj = _project(cloud, camera, settings) if cloud.num_points else None
    if proj is None:
        channels += bg[:, None, None]
        fb = FrameBuffer(channels=channels, alpha=alpha)
        return (fb, None) if return_cache else fb

    pair_gauss, tile_starts, tiles_x, tiles_y = _bin(
        proj, proj.cam[:, 2], settings, h, w)
    feats = np.ascontiguousarray(cloud.features[proj.kept])
    opac = np.ascontiguousarray(cloud.opacities[proj.kept])
    trans = np.empty((h, w))
    last = np.empty((h, w), np.int64)
    _kernels.blend_forward(h, w, settings.tile_size, tiles_x, tiles_y,
                           tile_starts, pair_gauss,
                           np.ascontiguousarray(proj.means2d),
                           np.ascontiguousarray(proj.conics),
                           opac, feats, np.ascontiguousarray(proj.radius), bg,
                           settings.transmittance_floor, channels, alpha,
                           trans, last)
    fb = FrameBuffer(channels=channels, alpha=alpha)
    if return_cache:
        return fb, RenderCache(proj, pair_gauss, tile_starts, tiles_x, tiles_y,
                               trans, last)
    return fb


def render_backward(cloud: GaussianCloud, camera: Camera, settings: RenderSettings,
                    grad_channels: np.ndarray, grad_alpha: np.ndarray | None = None,
                    cache: RenderCache | None = None) -> CloudGradients:
    """Exact gradients of render() wrt every cloud field.

    Hard binning/culling boundaries and the active alpha clamp are treated
    as locally constant.
    """
    settings = settings or RenderSettings()
    k = cloud.num_features
    h, w = camera.height, camera.width
    grad_channels = as_float_array(grad_channels, "grad_channels", (k, h, w))
    if grad_alpha is None:
        grad_alpha = np.zeros((h, w))
    grad_alpha = as_float_array(grad_alpha, "grad_alpha", (h, w))

    grads = CloudGradients.zeros(cloud.num_points, k)
    if cloud.num_points == 0:
        return grads
    if cache is None:
        proj = _project(cloud, camera, settings)
        if proj is None:
            return grads
        pair_gauss, tile_starts, tiles_x, tiles_y = _bin(
            proj, proj.cam[:, 2], settings, h, w)
    else:
        proj = cache.proj
        pair_gauss, tile_starts = cache.pair_gauss, cache.tile_starts
        tiles_x, tiles_y = cache.tiles_x, cache.tiles_y

    m = proj.kept.shape[0]
    bg = settings.background_for(k)
    feats = np.ascontiguousarray(cloud.features[proj.kept])
    opac = np.ascontiguousarray(cloud.opacities[proj.kept])
    means2d = np.ascontiguousarray(proj.means2d)
    conics = np.ascontiguousarray(proj.conics)
    radii = np.ascontiguousarray(proj.radius)
    if cache is not None and cache.trans is not None:
        trans, last = cache.trans, cache.last
    else:
        trans = np.empty((h, w))
        last = np.empty((h, w), np.int64)
        _kernels.replay_forward(h, w, settings.tile_size, tiles_x, tiles_y,
                                tile_starts, pair_gauss, means2d, conics,
                                opac, radii, settings.transmittance_floor,
                                trans, last)
    dmean2d = np.zeros((m, 2))
    dconic = np.zeros((m, 3))
    dopac = np.zeros(m)
    dfeat = np.zeros((m, k))
    _kernels.blend_backward(h, w, settings.tile_size, tiles_x, tiles_y,
                            tile_starts, pair_gauss, means2d, conics,
                            opac, feats, radii, bg, trans, last,
                            grad_channels, grad_alpha,
                            dmean2d, dconic, dopac, dfeat)

    # conic = inv(cov2d): dL/dcov2d = -conic @ G @ conic with G the
    # symmetric matrix gradient implied by the packed (a, b, c) grads.
    con = np.empty((m, 2, 2))
    con[:, 0, 0] = proj.conics[:, 0]
    con[:, 0, 1] = con[:, 1, 0] = proj.conics[:, 1]
    con[:, 1, 1] = proj.conics[:, 2]
    g_con = np.empty((m, 2, 2))
    g_con[:, 0, 0] = dconic[:, 0]
    g_con[:, 0, 1] = g_con[:, 1, 0] = 0.5 * dconic[:, 1]
    g_con[:, 1, 1] = dconic[:, 2]
    floored = proj.det <= DET_FLOOR
    g_cov = -con @ g_con @ con
    g_cov[floored] = 0.0

    # cov2d = T T^T (+ const): dT = 2 G T; T = A M.
    g_t = 2.0 * (g_cov @ proj.trans_t)
    g_a = g_t @ proj.big_m.transpose(0, 2, 1)
    g_m = proj.trans_a.transpose(0, 2, 1) @ g_t

    # M = R diag(s)
    scales = cloud.scales[proj.kept]
    g_rot_mat = g_m * scales[:, None, :]
    g_scale = np.einsum("nij,nij->nj", proj.rot_mats, g_m)
    g_quat = quat_to_matrix_backward(cloud.rotations[proj.kept], g_rot_mat)

    # A = J W: dJ = dA W^T, then J's own dependence on camera coords.
    w_mat = camera.rotation_matrix().T
    g_j = g_a @ w_mat.T
    x, y, z = proj.cam[:, 0], proj.cam[:, 1], proj.cam[:, 2]
    tx, ty = proj.txy[:, 0], proj.txy[:, 1]
    fx, fy = camera.fx, camera.fy
    g_cam = np.zeros((m, 3))
    g_tx = g_j[:, 0, 2] * (-fx / z ** 2)
    g_ty = g_j[:, 1, 2] * (-fy / z ** 2)
    g_cam[:, 2] += (g_j[:, 0, 0] * (-fx / z ** 2)
                    + g_j[:, 1, 1] * (-fy / z ** 2)
                    + g_j[:, 0, 2] * (2.0 * fx * tx / z ** 3)
                    + g_j[:, 1, 2] * (2.0 * fy * ty / z ** 3))
    # Clamped coords stop depending on x (resp. y) and scale with z instead.
    cx_on = ~proj.clipped[:, 0]
    cy_on = ~proj.clipped[:, 1]
    g_cam[:, 0] += np.where(cx_on, g_tx, 0.0)
    g_cam[:, 2] += np.where(cx_on, 0.0, g_tx * tx / z)
    g_cam[:, 1] += np.where(cy_on, g_ty, 0.0)
    g_cam[:, 2] += np.where(cy_on, 0.0, g_ty * ty / z)

    # Projected mean: u = fx x / z + cx, v = fy y / z + cy.
    g_cam[:, 0] += dmean2d[:, 0] * fx / z
    g_cam[:, 1] += dmean2d[:, 1] * fy / z
    g_cam[:, 2] += (-dmean2d[:, 0] * fx * x / z ** 2
                    - dmean2d[:, 1] * fy * y / z ** 2)

    g_pos = g_cam @ camera.rotation_matrix().T

    grads.positions[proj.kept] = g_pos
    grads.rotations[proj.kept] = g_quat
    grads.scales[proj.kept] = g_scale
    grads.opacities[proj.kept] = dopac
    grads.features[proj.kept] = dfeat
    return grads


def bench(cloud: GaussianCloud, camera: Camera, settings: RenderSettings | None = None,
          frames: int = 10) -> dict:
    """Deterministic replay of the same frame with a per-stage ms breakdown."""
    if frames < 1:
        raise ValueError("frames must be >= 1")
    settings = settings or RenderSettings()
    k = cloud.num_features
    h, w = camera.height, camera.width
    bg = settings.background_for(k)
    render(cloud, camera, settings)  # warm-up: JIT compile outside the timers
    stage = {"cull": 0.0, "sort": 0.0, "bin": 0.0, "blend": 0.0}
    for _ in range(frames):
        t0 = time.perf_counter()
        proj = _project(cloud, camera, settings) if cloud.num_points else None
        t1 = time.perf_counter()
        stage["cull"] += t1 - t0
        channels = np.zeros((k, h, w))
        alpha = np.zeros((h, w))
        if proj is not None:
            pair_tile, pair_gauss, tiles_x, tiles_y = _make_pairs(proj, settings, h, w)
            t2 = time.perf_counter()
            stage["bin"] += t2 - t1
            pair_gauss, tile_starts = _sort_pairs(pair_tile, pair_gauss,
                                                  proj.cam[:, 2], tiles_x * tiles_y)
            t3 = time.perf_counter()
            stage["sort"] += t3 - t2
            t2 = t3
            _kernels.blend_forward(h, w, settings.tile_size, tiles_x, tiles_y,
                                   tile_starts, pair_gauss,
                                   np.ascontiguousarray(proj.means2d),
                                   np.ascontiguousarray(proj.conics),
                                   np.ascontiguousarray(cloud.opacities[proj.kept]),
                                   np.ascontiguousarray(cloud.features[proj.kept]),
                                   np.ascontiguousarray(proj.radius),
                                   bg, settings.transmittance_floor,
                                   channels, alpha,
                                   np.empty((h, w)), np.empty((h, w), np.int64))
            stage["blend"] += time.perf_counter() - t2
        else:
            channels += bg[:, None, None]
    total_s = sum(stage.values())
    report = {
        "frames": frames,
        "num_points": cloud.num_points,
        "channels": k,
        "resolution": [w, h],
        "fps": frames / total_s if total_s > 0 else float("inf"),
        "ms_per_frame": {name: 1000.0 * t / frames for name, t in stage.items()},
        "ms_total": 1000.0 * total_s / frames,
    }
    return report
