"""Linear blendshape head model: template plus shape / pose-corrective /
expression bases.

The model is purely linear: deformed = template + S@beta + P@theta + E@psi.
Skinning is deliberately absent; jaw/neck pose effects live in the
corrective basis. Models are immutable after construction and `evaluate`
is pure, so concurrent reads are safe.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ._binfile import read_sections, write_sections
from .errors import FormatError
from .validation import as_float_array, check_finite

MODEL_MAGIC = b"GAGM"
MODEL_VERSION = 1


@dataclass
class BlendshapeModel:
    template_vertices: np.ndarray  # (V, 3)
    shape_basis: np.ndarray        # (V, 3, n_beta)
    pose_corr_basis: np.ndarray    # (V, 3, n_theta)
    expr_basis: np.ndarray         # (V, 3, n_psi)
    triangles: np.ndarray          # (F, 3) int
    version: str = "toy-1"

    def __post_init__(self):
        self.template_vertices = check_finite(
            as_float_array(self.template_vertices, "template_vertices", (-1, 3)),
            "template_vertices",
        )
        v = self.template_vertices.shape[0]
        self.shape_basis = check_finite(
            as_float_array(self.shape_basis, "shape_basis", (v, 3, -1)), "shape_basis")
        self.pose_corr_basis = check_finite(
            as_float_array(self.pose_corr_basis, "pose_corr_basis", (v, 3, -1)),
            "pose_corr_basis")
        self.expr_basis = check_finite(
            as_float_array(self.expr_basis, "expr_basis", (v, 3, -1)), "expr_basis")
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (F, 3)")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= v):
            raise ValueError("triangle indices out of range")
        if self.bounding_box_diagonal() <= 0:
            raise ValueError("template bounding-box diagonal must be positive")

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.shape_basis.shape[2], self.pose_corr_basis.shape[2],
                self.expr_basis.shape[2])

    def bounding_box_diagonal(self) -> float:
        span = self.template_vertices.max(axis=0) - self.template_vertices.min(axis=0)
        return float(np.linalg.norm(span))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.template_vertices, self.shape_basis, self.pose_corr_basis,
                    self.expr_basis, self.triangles):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass
class ExpressionParams:
    beta: np.ndarray
    theta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        self.beta = check_finite(as_float_array(self.beta, "beta", (-1,)), "beta")
        self.theta = check_finite(as_float_array(self.theta, "theta", (-1,)), "theta")
        self.psi = check_finite(as_float_array(self.psi, "psi", (-1,)), "psi")

    @classmethod
    def zeros(cls, model: BlendshapeModel) -> "ExpressionParams":
        nb, nt, np_ = model.dims
        return cls(np.zeros(nb), np.zeros(nt), np.zeros(np_))


def _check_dims(model: BlendshapeModel, params: ExpressionParams) -> None:
    nb, nt, np_ = model.dims
    got = (params.beta.shape[0], params.theta.shape[0], params.psi.shape[0])
    if got != (nb, nt, np_):
        raise ValueError(f"parameter dims {got} do not match model dims {(nb, nt, np_)}")


def evaluate(model: BlendshapeModel, params: ExpressionParams) -> np.ndarray:
    """Deformed vertices: template + S@beta + P@theta + E@psi, shape (V, 3)."""
    _check_dims(model, params)
    out = model.template_vertices.copy()
    out += model.shape_basis @ params.beta
    out += model.pose_corr_basis @ params.theta
    out += model.expr_basis @ params.psi
    return out


def evaluate_backward(model: BlendshapeModel, grad_vertices: np.ndarray):
    """Gradients of sum(grad_vertices * evaluate(...)) wrt (beta, theta, psi)."""
    g = as_float_array(grad_vertices, "grad_vertices",
                       (model.num_vertices, 3))
    grad_beta = np.einsum("vci,vc->i", model.shape_basis, g)
    grad_theta = np.einsum("vci,vc->i", model.pose_corr_basis, g)
    grad_psi = np.einsum("vci,vc->i", model.expr_basis, g)
    return grad_beta, grad_theta, grad_psi


def _fibonacci_directions(n: int) -> np.ndarray:
    # Near-uniform directions on the sphere (golden-angle spiral).
    k = np.arange(n, dtype=np.float64)
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    z = 1.0 - 2.0 * (k + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    ang = 2.0 * np.pi * k / phi
    return np.stack([r * np.cos(ang), z, r * np.sin(ang)], axis=1)


def _bump_columns(rng, vertices: np.ndarray, n_cols: int, diagonal: float,
                  centers: np.ndarray | None = None) -> np.ndarray:
    """Smooth localized displacement columns with max vertex norm <= 0.1*diagonal."""
    v = vertices.shape[0]
    cols = np.zeros((v, 3, n_cols))
    for j in range(n_cols):
        if centers is not None and j < len(centers):
            center = centers[j]
        else:
            center = vertices[rng.integers(0, v)]
        width = diagonal * rng.uniform(0.15, 0.35)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        amp = 0.1 * diagonal * rng.uniform(0.4, 0.95)
        d2 = np.sum((vertices - center) ** 2, axis=1)
        weights = np.exp(-d2 / (2.0 * width * width))
        cols[:, :, j] = (amp * weights)[:, None] * direction
    # Guard the max-norm bound exactly, including float32 round-off headroom.
    norms = np.linalg.norm(cols, axis=1).max(axis=0)
    over = norms > 0.1 * diagonal
    if np.any(over):
        cols[:, :, over] *= (0.0999 * diagonal / norms[over])
    return cols


def generate_toy_model(seed: int, num_vertices: int = 1024, n_beta: int = 32,
                       n_psi: int = 32, n_theta: int = 12) -> BlendshapeModel:
    """Deterministic head-like ellipsoid model with smooth, bounded bases.

    The mesh is an ellipsoid (taller than wide, like a head) sampled with a
    golden-angle spiral and triangulated by its convex hull. Expression
    column 0 is always centered on the "mouth" (lower front) so expression
    sweeps visibly move that region. All arrays are quantized to float32 so
    a save/load round trip reproduces them exactly.
    """
    if num_vertices < 4:
        raise ValueError("num_vertices must be >= 4")
    from scipy.spatial import ConvexHull

    rng = np.random.default_rng(seed)
    semiaxes = np.array([0.55, 0.72, 0.60]) * rng.uniform(0.95, 1.05, size=3)
    dirs = _fibonacci_directions(num_vertices)
    # Gentle low-frequency radial modulation for asymmetry.
    freq = rng.normal(size=(3, 3))
    radial = 1.0 + 0.05 * np.tanh(dirs @ freq[0]) * np.tanh(dirs @ freq[1])
    vertices = dirs * semiaxes * radial[:, None]

    hull = ConvexHull(vertices.astype(np.float32).astype(np.float64))
    triangles = hull.simplices.astype(np.int64)

    span = vertices.max(axis=0) - vertices.min(axis=0)
    diagonal = float(np.linalg.norm(span))
    mouth = np.array([0.0, -0.35 * semiaxes[1], 0.9 * semiaxes[2]])
    expr_centers = np.concatenate([mouth[None, :], vertices[rng.integers(0, num_vertices, size=max(0, n_psi - 1))]])

    shape_basis = _bump_columns(rng, vertices, n_beta, diagonal)
    pose_basis = _bump_columns(rng, vertices, n_theta, diagonal)
    expr_basis = _bump_columns(rng, vertices, n_psi, diagonal, centers=expr_centers)

    f32 = lambda a: a.astype(np.float32).astype(np.float64)
    return BlendshapeModel(
        template_vertices=f32(vertices),
        shape_basis=f32(shape_basis),
        pose_corr_basis=f32(pose_basis),
        expr_basis=f32(expr_basis),
        triangles=triangles,
        version=f"toy-1/seed{seed}",
    )


def save_model(model: BlendshapeModel, path) -> None:
    nb, nt, np_ = model.dims
    meta = {
        "kind": "blendshape_model",
        "vertex_count": model.num_vertices,
        "n_beta": nb,
        "n_theta": nt,
        "n_psi": np_,
        "model_version": model.version,
    }
    write_sections(path, MODEL_MAGIC, MODEL_VERSION, meta, [
        ("template_vertices", model.template_vertices),
        ("shape_basis", model.shape_basis),
        ("pose_corr_basis", model.pose_corr_basis),
        ("expr_basis", model.expr_basis),
        ("triangles", model.triangles),
    ])


def load_model(path) -> BlendshapeModel:
    meta, arrays = read_sections(path, MODEL_MAGIC, MODEL_VERSION)
    required = ["template_vertices", "shape_basis", "pose_corr_basis",
                "expr_basis", "triangles"]
    for name in required:
        if name not in arrays:
            raise FormatError(f"{path}: missing section '{name}'")
    try:
        return BlendshapeModel(
            template_vertices=arrays["template_vertices"],
            shape_basis=arrays["shape_basis"],
            pose_corr_basis=arrays["pose_corr_basis"],
            expr_basis=arrays["expr_basis"],
            triangles=arrays["triangles"],
            version=str(meta.get("model_version", "unknown")),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: invalid model contents ({exc})") from None
