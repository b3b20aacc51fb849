"""Per-identity avatar fitting and reenactment.

One avatar = lifting grids + vertex feature bank + global feature +
expression head + decoder, all optimized directly against rendered
targets of a single identity. The source camera (and hence the lifting
plane) is frozen for the whole fit.

Reenactment reuses the assembled lifting cloud and the expression-head
attributes across frames; only vertex positions and the render change
per frame.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import expression as ex
from . import head_model as hm
from .camera import Camera, ImagePlane, orbit_camera, plane_through_origin
from .decoder import Decoder, decode, decode_backward, init_decoder
from .errors import NumericError
from .kdtree import KDTree
from .lifting import (CloudGradients, GaussianCloud, LiftingGrids,
                      assemble_dual_lift, assemble_dual_lift_backward,
                      attributes_backward, attributes_from_raw, init_grids,
                      merge_clouds, softplus_inverse)
from .losses import LossWeights, total_loss
from .rasterizer import RenderSettings, render, render_backward

GRAD_CLIP_NORM = 10.0


@dataclass
class FitConfig:
    iterations: int = 2000
    learning_rate: float = 1.0e-4
    batch: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    resolution: int = 128
    grid_res: int = 64
    plane_extent: float = 1.0
    decoder_mode: str = "affine"
    source_camera: Camera | None = None  # default: first train target's camera

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass
class TargetView:
    image: np.ndarray  # (3, H, W) float
    camera: Camera
    params: hm.ExpressionParams
    split: str = "train"


@dataclass
class TargetSet:
    items: list

    def __post_init__(self):
        if not any(t.split == "train" for t in self.items):
            raise ValueError("target set needs at least one train item")

    def train(self):
        return [t for t in self.items if t.split == "train"]

    def holdout(self):
        return [t for t in self.items if t.split == "holdout"]


@dataclass
class Avatar:
    lifting_grids: LiftingGrids
    source_camera: Camera
    feature_bank: ex.VertexFeatureBank
    expression_head: ex.ExpressionHead
    decoder: Decoder
    model_hash: str
    plane_extent: float = 1.0
    _reenactor: object = field(default=None, repr=False, compare=False)

    def params(self) -> dict:
        out = {
            "grids.front": self.lifting_grids.front,
            "grids.back": self.lifting_grids.back,
            "bank.per_vertex": self.feature_bank.per_vertex,
            "bank.global_feature": self.feature_bank.global_feature,
        }
        for i, (w, b) in enumerate(zip(self.expression_head.weights,
                                       self.expression_head.biases)):
            out[f"head.w{i}"] = w
            out[f"head.b{i}"] = b
        out.update(self.decoder.params())
        return out


class AdamState:
    def __init__(self, params: dict, betas=(0.9, 0.999), eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0
        self.betas = betas
        self.eps = eps


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> None:
    """Standard bias-corrected Adam; updates params in place."""
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_global_norm(grads: dict, max_norm: float = GRAD_CLIP_NORM) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def init_avatar(model: hm.BlendshapeModel, source_camera: Camera,
                config: FitConfig) -> Avatar:
    seed = config.seed
    return Avatar(
        lifting_grids=init_grids(config.grid_res, config.plane_extent, seed),
        source_camera=source_camera,
        feature_bank=ex.init_bank(seed + 1, model.num_vertices),
        expression_head=ex.init_head(seed + 2),
        decoder=init_decoder(32, config.decoder_mode, seed + 3),
        model_hash=model.content_hash(),
        plane_extent=config.plane_extent,
    )


def make_ground_truth_avatar(model: hm.BlendshapeModel, source_camera: Camera,
                             grid_res: int = 64, extent: float = 1.0,
                             seed: int = 0, noise: float = 0.02) -> Avatar:
    """A hand-constructed avatar whose lifted sheets trace the toy mesh.

    Front/back grid distances sample the mesh surface depth seen along the
    source plane normal, so targets rendered from this avatar are exactly
    realizable by the model family. Pixels off the silhouette get opacity
    below the compositing skip threshold.
    """
    rng = np.random.default_rng(seed)
    plane, pts = plane_through_origin(source_camera, grid_res, extent)
    verts = model.template_vertices
    vu = verts @ plane.u_axis
    vv = verts @ plane.v_axis
    vd = verts @ plane.normal
    gu = pts @ plane.u_axis
    gv = pts @ plane.v_axis

    def side_depth(mask, signs):
        sel = np.flatnonzero(mask)
        tree = KDTree(np.stack([vu[sel], vv[sel], np.zeros(sel.size)], axis=1))
        idx, d2 = tree.query(np.stack([gu, gv, np.zeros(gu.size)], axis=1))
        return signs * vd[sel][idx], np.sqrt(d2)

    front_depth, front_gap = side_depth(vd >= 0, 1.0)
    back_depth, back_gap = side_depth(vd < 0, -1.0)
    cell = 2.0 * extent / grid_res
    inside = np.minimum(front_gap, back_gap) <= 4.0 * cell

    grids = init_grids(grid_res, extent, seed)
    config = [(grids.front, front_depth), (grids.back, back_depth)]
    for sheet, depth in config:
        flat = sheet.reshape(-1, 41)
        d = np.where(inside, np.maximum(depth, 0.02), 0.01)
        d = d + rng.normal(scale=noise * 0.2, size=d.shape)
        flat[:, 40] = softplus_inverse(np.maximum(d, 0.005))
        flat[:, 32] = np.where(inside, np.log(0.95 / 0.05), np.log(0.003 / 0.997))
        flat[:, 33:36] = np.log(2.2 * extent / grid_res)
        flat[:, 0] = 0.55 + 0.35 * np.sin(3.0 * gu) * np.cos(2.0 * gv)
        flat[:, 1] = 0.50 + 0.30 * np.sin(2.0 * gu + 1.0)
        flat[:, 2] = 0.45 + 0.30 * np.cos(3.0 * gv)
        flat[:, 3:32] = rng.normal(scale=0.05, size=(flat.shape[0], 29))
        flat[:, :3] += rng.normal(scale=noise, size=(flat.shape[0], 3))

    bank = ex.init_bank(seed + 5, model.num_vertices)
    head = ex.init_head(seed + 6)
    b = head.biases[-1]
    b[0:3] = (0.85, 0.45, 0.35)
    b[32] = np.log(0.8 / 0.2)
    b[33:36] = np.log(0.05 * model.bounding_box_diagonal() / 1.4)

    return Avatar(
        lifting_grids=grids,
        source_camera=source_camera,
        feature_bank=bank,
        expression_head=head,
        decoder=init_decoder(32, "affine"),
        model_hash=model.content_hash(),
        plane_extent=extent,
    )


class Reenactor:
    """Drives one avatar: assembles the lifting cloud and the expression
    attributes once, then renders frames with position-only updates."""

    def __init__(self, avatar: Avatar, model: hm.BlendshapeModel,
                 settings: RenderSettings | None = None):
        if avatar.model_hash != model.content_hash():
            raise ValueError("avatar was fitted against a different model")
        self.avatar = avatar
        self.model = model
        self.settings = settings or RenderSettings()
        self._plane, self._grid_points = plane_through_origin(
            avatar.source_camera, avatar.lifting_grids.res, avatar.plane_extent)
        self._lift_cloud = None
        self._attr = None
        self._merged = None

    def _prepare(self):
        if self._lift_cloud is None:
            self._lift_cloud = assemble_dual_lift(
                self.avatar.lifting_grids, self._plane, self._grid_points)
        if self._attr is None:
            raw = ex.head_forward(self.avatar.expression_head,
                                  ex.head_inputs(self.avatar.feature_bank))
            self._attr = attributes_from_raw(raw)
        if self._merged is None:
            # one combined cloud, expression rows at the tail; frames only
            # rewrite those positions
            lift = self._lift_cloud
            feats, opac, scales, rots = self._attr
            n = lift.num_points
            positions = np.concatenate([lift.positions, np.zeros((opac.size, 3))])
            self._merged = GaussianCloud(
                positions=positions,
                rotations=np.concatenate([lift.rotations, rots]),
                scales=np.concatenate([lift.scales, scales]),
                opacities=np.concatenate([lift.opacities, opac]),
                features=np.concatenate([lift.features, feats]),
            )
            self._expr_rows = slice(n, n + opac.size)

    def render_frame(self, params: hm.ExpressionParams, camera: Camera,
                     decoder=None) -> np.ndarray:
        """RGB image (3, H, W); first call pays the assembly cost."""
        self._prepare()
        self._merged.positions[self._expr_rows] = hm.evaluate(self.model, params)
        fb = render(self._merged, camera, self.settings)
        return decode(decoder or self.avatar.decoder, fb.channels)


def reenact(avatar: Avatar, model: hm.BlendshapeModel,
            params: hm.ExpressionParams, camera: Camera) -> np.ndarray:
    """Render the avatar under new expression params and camera.

    The per-avatar reenactor (and its caches) is created on first use and
    kept on the avatar, so repeat calls skip lifting and attribute work.
    """
    if avatar._reenactor is None or avatar._reenactor.model is not model:
        avatar._reenactor = Reenactor(avatar, model)
    return avatar._reenactor.render_frame(params, camera)


def synth_targets(model: hm.BlendshapeModel, gt_avatar: Avatar,
                  cameras: list, expressions: list, splits: list | None = None) -> TargetSet:
    """Render one target per (camera, expression) pair from a ground-truth
    avatar through the full pipeline."""
    reenactor = Reenactor(gt_avatar, model)
    items = []
    n = 0
    for cam in cameras:
        for params in expressions:
            img = reenactor.render_frame(params, cam)
            split = splits[n] if splits is not None else "train"
            items.append(TargetView(image=img, camera=cam, params=params, split=split))
            n += 1
    return TargetSet(items)


def ring_cameras(count: int, distance: float = 2.6, pitch: float = 8.0,
                 fov: float = 35.0, resolution: int = 128,
                 yaw_offset: float = 0.0) -> list:
    return [orbit_camera(yaw_offset + 360.0 * k / count, pitch, distance, fov,
                         resolution) for k in range(count)]


def standard_expressions(model: hm.BlendshapeModel) -> list:
    """Three fixed expression settings: neutral plus two mixed psi pokes."""
    out = [hm.ExpressionParams.zeros(model)]
    p1 = hm.ExpressionParams.zeros(model)
    p1.psi[0] = 1.5
    p1.psi[3 % p1.psi.size] = -1.0
    out.append(p1)
    p2 = hm.ExpressionParams.zeros(model)
    p2.psi[1 % p2.psi.size] = -1.5
    p2.psi[5 % p2.psi.size] = 1.0
    out.append(p2)
    return out


def make_synthetic_targets(model: hm.BlendshapeModel, seed: int = 0,
                           grid_res: int = 64, resolution: int = 128,
                           train_cameras: int = 8, holdout_cameras: int = 4,
                           extent: float = 1.0):
    """P-style fixture: ring of train views x 3 expressions, plus offset
    holdout views at neutral expression. Returns (targets, gt_avatar)."""
    source_camera = orbit_camera(0.0, 0.0, 2.6, 35.0, resolution)
    gt = make_ground_truth_avatar(model, source_camera, grid_res=grid_res,
                                  extent=extent, seed=seed)
    expressions = standard_expressions(model)
    cams = ring_cameras(train_cameras, resolution=resolution)
    targets = synth_targets(model, gt, cams, expressions)
    items = list(targets.items)
    if holdout_cameras > 0:
        hold_cams = ring_cameras(holdout_cameras, resolution=resolution,
                                 yaw_offset=360.0 / (2 * train_cameras))
        hold = synth_targets(model, gt, hold_cams, expressions[:1])
        for t in hold.items:
            t.split = "holdout"
        items += hold.items
    return TargetSet(items), gt


@dataclass
class FitResult:
    avatar: Avatar
    history: list  # dict rows: iteration, total, l1_coarse, l1_fine, pyramid, lifting


def history_to_csv(history: list, path) -> None:
    with open(path, "w") as f:
        f.write("iteration,total,l1_coarse,l1_fine,pyramid,lifting\n")
        for row in history:
            f.write("{iteration},{total:.10g},{l1_coarse:.10g},{l1_fine:.10g},"
                    "{pyramid:.10g},{lifting:.10g}\n".format(**row))


def _forward_backward(avatar: Avatar, model: hm.BlendshapeModel, plane: ImagePlane,
                      grid_points, target: TargetView, weights: LossWeights,
                      settings: RenderSettings):
    """One target's loss and full parameter-gradient dict."""
    lift_cloud = assemble_dual_lift(avatar.lifting_grids, plane, grid_points)
    inputs = ex.head_inputs(avatar.feature_bank)
    raw, mlp_cache = ex.head_forward(avatar.expression_head, inputs, return_cache=True)
    feats, opac, scales, rots = attributes_from_raw(raw)
    positions = hm.evaluate(model, target.params)
    expr_cloud = GaussianCloud(positions=positions, rotations=rots, scales=scales,
                               opacities=opac, features=feats)
    merged = merge_clouds(lift_cloud, expr_cloud)

    fb, cache = render(merged, target.camera, settings, return_cache=True)
    fine = decode(avatar.decoder, fb.channels)
    res = total_loss(fb.channels, fine, target.image, positions, lift_cloud, weights)
    if not np.isfinite(res.total):
        # Fail before backward: a non-finite loss would only smear NaN
        # through every gradient buffer.
        raise NumericError(
            f"loss is not finite: l1_coarse={res.l1_coarse:.4g} "
            f"l1_fine={res.l1_fine:.4g} pyramid={res.pyramid:.4g} "
            f"lifting={res.lifting:.4g}")

    dec_grads, grad_fb = decode_backward(avatar.decoder, fb.channels, res.grad_fine)
    grad_channels = res.grad_coarse + grad_fb
    cgrads = render_backward(merged, target.camera, settings, grad_channels,
                             cache=cache)

    n_lift = lift_cloud.num_points
    lift_grads = CloudGradients(
        positions=cgrads.positions[:n_lift] + res.grad_cloud_positions,
        rotations=cgrads.rotations[:n_lift],
        scales=cgrads.scales[:n_lift],
        opacities=cgrads.opacities[:n_lift],
        features=cgrads.features[:n_lift],
    )
    grid_grads = assemble_dual_lift_backward(avatar.lifting_grids, plane, lift_grads)

    grad_raw = attributes_backward(raw, cgrads.features[n_lift:],
                                   cgrads.opacities[n_lift:],
                                   cgrads.scales[n_lift:],
                                   cgrads.rotations[n_lift:])
    grad_in, grad_w, grad_b = ex.head_backward(avatar.expression_head, mlp_cache,
                                               grad_raw)

    grads = {
        "grids.front": grid_grads.front,
        "grids.back": grid_grads.back,
        "bank.per_vertex": grad_in[:, ex.GLOBAL_FEATURE_DIM:],
        "bank.global_feature": grad_in[:, :ex.GLOBAL_FEATURE_DIM].sum(axis=0),
    }
    for i in range(len(grad_w)):
        grads[f"head.w{i}"] = grad_w[i]
        grads[f"head.b{i}"] = grad_b[i]
    grads.update(dec_grads)
    return res, grads


def evaluate_l1(avatar: Avatar, model: hm.BlendshapeModel, targets: list,
                settings: RenderSettings | None = None) -> float:
    """Mean fine-image L1 over the given targets; no state is touched."""
    if not targets:
        raise ValueError("no targets to evaluate")
    reenactor = Reenactor(avatar, model, settings)
    vals = []
    for t in targets:
        img = reenactor.render_frame(t.params, t.camera)
        vals.append(float(np.abs(img - t.image).mean()))
    return float(np.mean(vals))


def fit_avatar(model: hm.BlendshapeModel, targets: TargetSet,
               config: FitConfig) -> FitResult:
    """Optimize grids, feature bank, expression head, and decoder against
    the train targets with Adam. Deterministic for a fixed seed."""
    train = targets.train()
    source_camera = config.source_camera or train[0].camera
    avatar = init_avatar(model, source_camera, config)
    plane, grid_points = plane_through_origin(source_camera, config.grid_res,
                                              config.plane_extent)
    settings = RenderSettings()
    params = avatar.params()
    state = AdamState(params, config.betas, config.eps)
    rng = np.random.default_rng(config.seed)
    history = []

    for it in range(config.iterations):
        picks = rng.integers(0, len(train), size=config.batch)
        acc = None
        row = {"total": 0.0, "l1_coarse": 0.0, "l1_fine": 0.0,
               "pyramid": 0.0, "lifting": 0.0}
        for pick in picks:
            res, grads = _forward_backward(avatar, model, plane, grid_points,
                                           train[pick], config.weights, settings)
            for key in row:
                row[key] += getattr(res, key) / config.batch
            if acc is None:
                acc = grads
                if config.batch > 1:
                    for g in acc.values():
                        g /= config.batch
            else:
                for name, g in grads.items():
                    acc[name] += g / config.batch
        if not np.isfinite(row["total"]):
            raise NumericError(
                f"loss diverged at iteration {it}: "
                f"l1_coarse={row['l1_coarse']:.4g} l1_fine={row['l1_fine']:.4g} "
                f"pyramid={row['pyramid']:.4g} lifting={row['lifting']:.4g}")
        norm = clip_global_norm(acc)
        if not np.isfinite(norm):
            raise NumericError(f"gradient norm diverged at iteration {it}")
        adam_step(state, params, acc, config.learning_rate)
        row["iteration"] = it
        history.append(row)

    return FitResult(avatar=avatar, history=history)


def time_reenact_frames(avatar: Avatar, model: hm.BlendshapeModel,
                        frames: list) -> list:
    """Wall-clock seconds per reenact frame on a fresh reenactor."""
    reenactor = Reenactor(avatar, model)
    out = []
    for params, camera in frames:
        t0 = time.perf_counter()
        reenactor.render_frame(params, camera)
        out.append(time.perf_counter() - t0)
    return out
