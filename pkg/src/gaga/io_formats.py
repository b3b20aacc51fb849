"""Avatar serialization, PNG image I/O, and point-cloud export.

Avatar files embed the head model arrays alongside the fitted state so a
single file is enough to render. All blobs are little-endian float32 on
disk. The first save quantizes fitted float64 state; after that the cycle
is closed: save(load(p)) reproduces p byte for byte. Model arrays are
float32-valued from creation, so they round trip exactly everywhere.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from . import expression as ex
from . import head_model as hm
from ._binfile import read_sections, write_sections
from .camera import Camera
from .decoder import Decoder
from .errors import FormatError
from .fitting import Avatar
from .lifting import GaussianCloud, LiftingGrids

AVATAR_MAGIC = b"GAGA"
AVATAR_VERSION = 1


def save_avatar(avatar: Avatar, model: hm.BlendshapeModel, path) -> None:
    cam = avatar.source_camera
    nb, nt, np_ = model.dims
    meta = {
        "kind": "avatar",
        "grid_res": avatar.lifting_grids.res,
        "plane_extent": avatar.plane_extent,
        "vertex_count": model.num_vertices,
        "n_beta": nb,
        "n_theta": nt,
        "n_psi": np_,
        "decoder_mode": avatar.decoder.mode,
        "model_hash": avatar.model_hash,
        "model_version": model.version,
        "head_layers": len(avatar.expression_head.weights),
        # Kept in the JSON header at full precision: the unit-quaternion
        # invariant does not survive float32 quantization.
        "source_camera": _camera_to_json(cam),
    }
    sections = [
        ("grids_front", avatar.lifting_grids.front),
        ("grids_back", avatar.lifting_grids.back),
        ("bank_per_vertex", avatar.feature_bank.per_vertex),
        ("bank_global_feature", avatar.feature_bank.global_feature),
    ]
    for i, (w, b) in enumerate(zip(avatar.expression_head.weights,
                                   avatar.expression_head.biases)):
        sections.append((f"head_w{i}", w))
        sections.append((f"head_b{i}", b))
    sections.append(("decoder_affine", avatar.decoder.affine))
    sections.append(("decoder_bias", avatar.decoder.bias))
    if avatar.decoder.mode == "conv":
        sections.append(("decoder_conv1_w", avatar.decoder.conv1_w))
        sections.append(("decoder_conv1_b", avatar.decoder.conv1_b))
        sections.append(("decoder_conv2_w", avatar.decoder.conv2_w))
        sections.append(("decoder_conv2_b", avatar.decoder.conv2_b))
    sections.append(("model_template_vertices", model.template_vertices))
    sections.append(("model_shape_basis", model.shape_basis))
    sections.append(("model_pose_corr_basis", model.pose_corr_basis))
    sections.append(("model_expr_basis", model.expr_basis))
    sections.append(("model_triangles", model.triangles))
    write_sections(path, AVATAR_MAGIC, AVATAR_VERSION, meta, sections)


def load_avatar(path):
    """Returns (Avatar, BlendshapeModel). Every contained invariant is
    re-validated; violations surface as FormatError naming the culprit."""
    meta, arrays = read_sections(path, AVATAR_MAGIC, AVATAR_VERSION)

    def need(name):
        if name not in arrays:
            raise FormatError(f"{path}: missing section '{name}'")
        return arrays[name]

    try:
        model = hm.BlendshapeModel(
            template_vertices=need("model_template_vertices"),
            shape_basis=need("model_shape_basis"),
            pose_corr_basis=need("model_pose_corr_basis"),
            expr_basis=need("model_expr_basis"),
            triangles=need("model_triangles"),
            version=str(meta.get("model_version", "unknown")),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: invalid embedded model ({exc})") from None

    try:
        grids = LiftingGrids(need("grids_front"), need("grids_back"))
    except ValueError as exc:
        raise FormatError(f"{path}: invalid lifting grids ({exc})") from None

    try:
        bank = ex.VertexFeatureBank(need("bank_per_vertex"),
                                    need("bank_global_feature"))
        layers = int(meta.get("head_layers", ex.HEAD_LAYERS))
        head = ex.ExpressionHead(
            weights=[need(f"head_w{i}") for i in range(layers)],
            biases=[need(f"head_b{i}") for i in range(layers)],
        )
    except ValueError as exc:
        raise FormatError(f"{path}: invalid expression branch ({exc})") from None

    mode = str(meta.get("decoder_mode", "affine"))
    try:
        if mode == "conv":
            decoder = Decoder(affine=need("decoder_affine"),
                              bias=need("decoder_bias"), mode=mode,
                              conv1_w=need("decoder_conv1_w"),
                              conv1_b=need("decoder_conv1_b"),
                              conv2_w=need("decoder_conv2_w"),
                              conv2_b=need("decoder_conv2_b"))
        else:
            decoder = Decoder(affine=need("decoder_affine"),
                              bias=need("decoder_bias"), mode=mode)
    except ValueError as exc:
        raise FormatError(f"{path}: invalid decoder ({exc})") from None

    if "source_camera" not in meta:
        raise FormatError(f"{path}: header is missing 'source_camera'")
    try:
        camera = _camera_from_json(meta["source_camera"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid source camera ({exc})") from None

    if bank.num_vertices != model.num_vertices:
        raise FormatError(
            f"{path}: bank_per_vertex has {bank.num_vertices} rows, "
            f"embedded model has {model.num_vertices} vertices")

    avatar = Avatar(
        lifting_grids=grids,
        source_camera=camera,
        feature_bank=bank,
        expression_head=head,
        decoder=decoder,
        model_hash=str(meta.get("model_hash", "")),
        plane_extent=float(meta.get("plane_extent", 1.0)),
    )
    if avatar.model_hash and avatar.model_hash != model.content_hash():
        raise FormatError(
            f"{path}: embedded model hash mismatch (header {avatar.model_hash}, "
            f"computed {model.content_hash()})")
    return avatar, model


PLY_PROPS = [("x", "f4"), ("y", "f4"), ("z", "f4"),
             ("red", "u1"), ("green", "u1"), ("blue", "u1"),
             ("opacity", "f4"),
             ("scale_0", "f4"), ("scale_1", "f4"), ("scale_2", "f4"),
             ("rot_0", "f4"), ("rot_1", "f4"), ("rot_2", "f4"), ("rot_3", "f4"),
             ("sheet", "u1")]


def export_ply(cloud: GaussianCloud, path, opacity_threshold: float = 0.5,
               sheet_ids: np.ndarray | None = None) -> int:
    """Binary little-endian PLY of points with opacity >= threshold.

    Colors are the first 3 feature channels mapped affinely onto [0,255]
    over the exported set. sheet tags front=0 / back=1; default splits the
    cloud evenly in order (the dual-lift layout). Returns the point count.
    """
    if not 0.0 <= opacity_threshold < 1.0:
        raise ValueError("opacity_threshold must lie in [0, 1)")
    n = cloud.num_points
    if sheet_ids is None:
        sheet_ids = (np.arange(n) >= n // 2).astype(np.uint8)
    sheet_ids = np.asarray(sheet_ids, dtype=np.uint8)
    if sheet_ids.shape != (n,):
        raise ValueError("sheet_ids must have one entry per point")

    keep = cloud.opacities >= opacity_threshold
    feats = cloud.features[keep, :3]
    lo = feats.min() if feats.size else 0.0
    hi = feats.max() if feats.size else 1.0
    span = hi - lo
    if span < 1e-12:
        bytes_rgb = np.zeros_like(feats, dtype=np.uint8)
    else:
        bytes_rgb = np.clip(np.rint(255.0 * (feats - lo) / span), 0, 255).astype(np.uint8)

    rec = np.zeros(int(keep.sum()), dtype=[(name, fmt) for name, fmt in PLY_PROPS])
    rec["x"], rec["y"], rec["z"] = cloud.positions[keep].T.astype(np.float32)
    rec["red"], rec["green"], rec["blue"] = bytes_rgb.T
    rec["opacity"] = cloud.opacities[keep].astype(np.float32)
    for i in range(3):
        rec[f"scale_{i}"] = cloud.scales[keep, i].astype(np.float32)
    for i in range(4):
        rec[f"rot_{i}"] = cloud.rotations[keep, i].astype(np.float32)
    rec["sheet"] = sheet_ids[keep]

    type_names = {"f4": "float", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {rec.shape[0]}"]
    header += [f"property {type_names[fmt]} {name}" for name, fmt in PLY_PROPS]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())
    return rec.shape[0]


def read_ply_header(path):
    """Parse a binary PLY header: (vertex_count, [(name, type)], data_offset)."""
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    lines = blob[:end].decode("ascii").splitlines()
    count = None
    props = []
    for line in lines:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            props.append((parts[2], parts[1]))
    if count is None:
        raise FormatError(f"{path}: PLY header missing vertex element")
    return count, props, end + len(b"end_header\n")


def encode_png(img: np.ndarray) -> bytes:
    """(3, H, W) float, clipped to [0,1] -> 8-bit RGB PNG bytes."""
    import io
    data = np.clip(np.asarray(img), 0.0, 1.0)
    data = np.rint(data * 255.0).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, img: np.ndarray) -> None:
    """(3, H, W) float in [0,1] (clipped) or (H, W) uint16 for debug depth."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] == 3:
        with open(path, "wb") as f:
            f.write(encode_png(arr))
    elif arr.ndim == 2 and arr.dtype == np.uint16:
        Image.fromarray(arr).save(path, format="PNG")
    else:
        raise ValueError("expected (3, H, W) float RGB or (H, W) uint16 image")


def read_png(path) -> np.ndarray:
    """8-bit RGB -> (3, H, W) float in [0,1]; 16-bit gray -> (H, W) uint16."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise FormatError(f"{path}: cannot read PNG ({exc})") from None
    if img.mode == "I;16":
        return np.asarray(img, dtype=np.uint16)
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def _camera_to_json(cam: Camera) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "rotation": list(map(float, cam.rotation)),
            "translation": list(map(float, cam.translation))}


def _camera_from_json(d: dict) -> Camera:
    return Camera(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                  width=d["width"], height=d["height"],
                  rotation=np.asarray(d["rotation"]),
                  translation=np.asarray(d["translation"]))


def save_targets(targets, dir_path) -> None:
    """Write a target set as PNGs plus a targets.json manifest."""
    import json
    import os
    os.makedirs(dir_path, exist_ok=True)
    manifest = []
    for i, t in enumerate(targets.items):
        name = f"target_{i:03d}.png"
        write_png(os.path.join(dir_path, name), t.image)
        manifest.append({
            "image": name,
            "split": t.split,
            "camera": _camera_to_json(t.camera),
            "params": {"beta": list(map(float, t.params.beta)),
                       "theta": list(map(float, t.params.theta)),
                       "psi": list(map(float, t.params.psi))},
        })
    with open(os.path.join(dir_path, "targets.json"), "w") as f:
        json.dump({"items": manifest}, f, indent=1)


def load_targets(dir_path):
    """Read a targets directory written by save_targets."""
    import json
    import os

    from .fitting import TargetSet, TargetView
    manifest_path = os.path.join(dir_path, "targets.json")
    if not os.path.exists(manifest_path):
        raise FormatError(f"{dir_path}: missing targets.json manifest")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: corrupt manifest ({exc})") from None
    items = []
    for entry in manifest.get("items", []):
        img = read_png(os.path.join(dir_path, entry["image"]))
        p = entry["params"]
        items.append(TargetView(
            image=img,
            camera=_camera_from_json(entry["camera"]),
            params=hm.ExpressionParams(np.asarray(p["beta"]),
                                       np.asarray(p["theta"]),
                                       np.asarray(p["psi"])),
            split=entry.get("split", "train"),
        ))
    return TargetSet(items)
