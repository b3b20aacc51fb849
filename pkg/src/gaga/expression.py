"""Expression branch: Gaussians anchored at deformed head-model vertices.

Per-vertex attributes come from a small fully connected head applied to
[global_feature, per_vertex_feature]. Positions come straight from the
blendshape model, so driving a new expression moves points without
re-running the head: attributes depend only on (bank, head) and are
cached by content hash.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np

from . import head_model as hm
from .lifting import ATTR_DIMS, GaussianCloud, attributes_from_raw
from .validation import as_float_array, check_finite

VERTEX_FEATURE_DIM = 256
GLOBAL_FEATURE_DIM = 768
HEAD_INPUT_DIM = GLOBAL_FEATURE_DIM + VERTEX_FEATURE_DIM  # 1024
HEAD_HIDDEN_DIM = 256
HEAD_LAYERS = 6
HEAD_OUTPUT_DIM = ATTR_DIMS  # 40 = 32 + 1 + 3 + 4, no lifting distance


@dataclass
class VertexFeatureBank:
    per_vertex: np.ndarray      # (V, 256)
    global_feature: np.ndarray  # (768,)

    def __post_init__(self):
        self.per_vertex = check_finite(
            as_float_array(self.per_vertex, "per_vertex", (-1, -1)), "per_vertex")
        self.global_feature = check_finite(
            as_float_array(self.global_feature, "global_feature", (-1,)),
            "global_feature")

    @property
    def num_vertices(self) -> int:
        return self.per_vertex.shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.per_vertex).tobytes())
        h.update(np.ascontiguousarray(self.global_feature).tobytes())
        return h.hexdigest()[:16]


@dataclass
class ExpressionHead:
    weights: list  # [(out_i, in_i)] matrices
    biases: list   # [(out_i,)] vectors

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up layer by layer")
        self.weights = [check_finite(as_float_array(w, f"weights[{i}]", (-1, -1)),
                                     f"weights[{i}]")
                        for i, w in enumerate(self.weights)]
        self.biases = [check_finite(as_float_array(b, f"biases[{i}]", (-1,)),
                                    f"biases[{i}]")
                       for i, b in enumerate(self.biases)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: bias dim {b.shape[0]} != rows {w.shape[0]}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input dim {w.shape[1]} does not chain")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()[:16]


def init_head(seed: int, dims: list | None = None) -> ExpressionHead:
    """He-style init; output biases start attributes at small translucent
    identity-rotation Gaussians (opacity 0.1, scale 0.05)."""
    if dims is None:
        dims = ([HEAD_INPUT_DIM] + [HEAD_HIDDEN_DIM] * (HEAD_LAYERS - 1)
                + [HEAD_OUTPUT_DIM])
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        scale = np.sqrt(1.0 / fan_in)
        weights.append(rng.normal(scale=scale, size=(dims[i + 1], dims[i])))
        biases.append(np.zeros(dims[i + 1]))
    if dims[-1] == HEAD_OUTPUT_DIM:
        weights[-1] *= 0.01
        b = biases[-1]
        b[32] = np.log(0.1 / 0.9)            # opacity logit
        b[33:36] = np.log(0.05)              # log-scale
        b[36:40] = (1.0, 0.0, 0.0, 0.0)      # rotation, away from the zero-norm point
    return ExpressionHead(weights, biases)


def head_forward(head: ExpressionHead, x: np.ndarray, return_cache: bool = False):
    """Affine layers with tanh between them; the last layer stays linear.

    x: (B, input_dim) or (input_dim,). The cache stores each layer's input,
    which is all the backward pass needs.
    """
    single = x.ndim == 1
    a = np.atleast_2d(as_float_array(x, "x", (-1,) if single else (-1, -1)))
    if a.shape[1] != head.input_dim:
        raise ValueError(f"input dim {a.shape[1]} != head input dim {head.input_dim}")
    inputs = []
    last = len(head.weights) - 1
    for i, (w, b) in enumerate(zip(head.weights, head.biases)):
        inputs.append(a)
        a = a @ w.T + b
        if i < last:
            a = np.tanh(a)
    out = a[0] if single else a
    if return_cache:
        return out, inputs
    return out


def head_backward(head: ExpressionHead, cache: list, grad_out: np.ndarray):
    """Returns (grad_input, grad_weights, grad_biases) for sum(grad_out * out)."""
    g = np.atleast_2d(grad_out)
    grad_w = [None] * len(head.weights)
    grad_b = [None] * len(head.weights)
    last = len(head.weights) - 1
    for i in range(last, -1, -1):
        a_in = cache[i]
        if i < last:
            # cache[i+1] = tanh(pre_i); tanh' = 1 - tanh²
            g = g * (1.0 - cache[i + 1] ** 2)
        grad_w[i] = g.T @ a_in
        grad_b[i] = g.sum(axis=0)
        g = g @ head.weights[i]
    grad_in = g[0] if np.ndim(grad_out) == 1 else g
    return grad_in, grad_w, grad_b


def head_inputs(bank: VertexFeatureBank) -> np.ndarray:
    """Per-vertex head inputs: [global_feature, vertex_feature] rows."""
    v = bank.num_vertices
    g = np.broadcast_to(bank.global_feature, (v, bank.global_feature.shape[0]))
    return np.concatenate([g, bank.per_vertex], axis=1)


class AttributeCache:
    """Single-entry cache of head outputs keyed by (bank, head) content.

    Driving a fitted avatar re-poses vertices every frame while attributes
    stay fixed; this makes the per-frame cost position-only.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._key = None
        self._value = None

    def raw_attributes(self, bank: VertexFeatureBank, head: ExpressionHead):
        key = (bank.content_hash(), head.content_hash())
        with self._lock:
            if key == self._key:
                return self._value
        raw = head_forward(head, head_inputs(bank))
        with self._lock:
            self._key, self._value = key, raw
        return raw


def expression_gaussians(model: hm.BlendshapeModel, params: hm.ExpressionParams,
                         bank: VertexFeatureBank, head: ExpressionHead,
                         cache: AttributeCache | None = None) -> GaussianCloud:
    """One Gaussian per model vertex: positions from the blendshape model,
    attributes from the head. N = V."""
    if bank.num_vertices != model.num_vertices:
        raise ValueError(
            f"bank has {bank.num_vertices} vertices, model has {model.num_vertices}")
    if head.input_dim != GLOBAL_FEATURE_DIM + bank.per_vertex.shape[1]:
        raise ValueError(
            f"head input dim {head.input_dim} != global+vertex feature dim "
            f"{GLOBAL_FEATURE_DIM + bank.per_vertex.shape[1]}")
    if head.output_dim != ATTR_DIMS:
        raise ValueError(f"head output dim {head.output_dim} != {ATTR_DIMS}")
    positions = hm.evaluate(model, params)
    if cache is not None:
        raw = cache.raw_attributes(bank, head)
    else:
        raw = head_forward(head, head_inputs(bank))
    features, opacities, scales, rotations = attributes_from_raw(raw)
    return GaussianCloud(positions=positions, rotations=rotations, scales=scales,
                         opacities=opacities, features=features)


@dataclass
class ExpressionBranchGrads:
    per_vertex: np.ndarray
    global_feature: np.ndarray
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)


def expression_backward(bank: VertexFeatureBank, head: ExpressionHead,
                        grad_raw: np.ndarray) -> ExpressionBranchGrads:
    """Gradients wrt bank and head for upstream grad on the raw head output.

    Vertex positions carry no trainable upstream here (they come from the
    frozen blendshape model and given params), so only attribute gradients
    flow back.
    """
    x = head_inputs(bank)
    _, cache = head_forward(head, x, return_cache=True)
    grad_in, grad_w, grad_b = head_backward(head, cache, grad_raw)
    return ExpressionBranchGrads(
        per_vertex=grad_in[:, GLOBAL_FEATURE_DIM:],
        global_feature=grad_in[:, :GLOBAL_FEATURE_DIM].sum(axis=0),
        weights=grad_w,
        biases=grad_b,
    )


def init_bank(seed: int, num_vertices: int,
              vertex_dim: int = VERTEX_FEATURE_DIM,
              global_dim: int = GLOBAL_FEATURE_DIM) -> VertexFeatureBank:
    rng = np.random.default_rng(seed)
    return VertexFeatureBank(
        per_vertex=rng.normal(scale=0.1, size=(num_vertices, vertex_dim)),
        global_feature=rng.normal(scale=0.1, size=global_dim),
    )
