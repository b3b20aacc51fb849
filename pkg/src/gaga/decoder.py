"""Feature-buffer to RGB decode.

Affine mode is a per-pixel linear map initialized to pass the first 3
feature channels through. Conv mode adds a residual path of two 3x3
convolutions (32 -> 16 -> 3, replicate padding, tanh between) on top of
the affine output; the second conv starts at zero so both modes begin
as the raw-RGB view. Output resolution always equals input resolution.
The conv path sees all 32 channels, which lets it arbitrate pixels where
front/back sheets or plane and vertex Gaussians disagree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_array, check_finite

CONV_HIDDEN = 16


def conv2d_replicate(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 convolution with replicate padding. x: (C,H,W), w: (O,C,3,3)."""
    c, h, wid = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros((w.shape[0], h, wid))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum("oc,chw->ohw", w[:, :, dy, dx],
                             xp[:, dy:dy + h, dx:dx + wid])
    return out + b[:, None, None]


def conv2d_replicate_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    c, h, wid = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(w)
    for dy in range(3):
        for dx in range(3):
            grad_w[:, :, dy, dx] = np.einsum("ohw,chw->oc", grad_out,
                                             xp[:, dy:dy + h, dx:dx + wid])
            grad_xp[:, dy:dy + h, dx:dx + wid] += np.einsum(
                "oc,ohw->chw", w[:, :, dy, dx], grad_out)
    # Fold replicate padding back onto the border pixels.
    grad_x = grad_xp[:, 1:-1, 1:-1].copy()
    grad_x[:, 0, :] += grad_xp[:, 0, 1:-1]
    grad_x[:, -1, :] += grad_xp[:, -1, 1:-1]
    grad_x[:, :, 0] += grad_xp[:, 1:-1, 0]
    grad_x[:, :, -1] += grad_xp[:, 1:-1, -1]
    grad_x[:, 0, 0] += grad_xp[:, 0, 0]
    grad_x[:, 0, -1] += grad_xp[:, 0, -1]
    grad_x[:, -1, 0] += grad_xp[:, -1, 0]
    grad_x[:, -1, -1] += grad_xp[:, -1, -1]
    grad_b = grad_out.sum(axis=(1, 2))
    return grad_x, grad_w, grad_b


@dataclass
class Decoder:
    affine: np.ndarray            # (3, K)
    bias: np.ndarray              # (3,)
    mode: str = "affine"
    conv1_w: np.ndarray | None = None  # (16, K, 3, 3)
    conv1_b: np.ndarray | None = None
    conv2_w: np.ndarray | None = None  # (3, 16, 3, 3)
    conv2_b: np.ndarray | None = None

    def __post_init__(self):
        self.affine = check_finite(
            as_float_array(self.affine, "affine", (3, -1)), "affine")
        self.bias = check_finite(as_float_array(self.bias, "bias", (3,)), "bias")
        if self.mode not in ("affine", "conv"):
            raise ValueError(f"unknown decoder mode '{self.mode}'")
        if self.mode == "conv":
            k = self.affine.shape[1]
            self.conv1_w = check_finite(
                as_float_array(self.conv1_w, "conv1_w", (-1, k, 3, 3)), "conv1_w")
            hid = self.conv1_w.shape[0]
            self.conv1_b = check_finite(
                as_float_array(self.conv1_b, "conv1_b", (hid,)), "conv1_b")
            self.conv2_w = check_finite(
                as_float_array(self.conv2_w, "conv2_w", (3, hid, 3, 3)), "conv2_w")
            self.conv2_b = check_finite(
                as_float_array(self.conv2_b, "conv2_b", (3,)), "conv2_b")

    @property
    def num_channels(self) -> int:
        return self.affine.shape[1]

    def params(self) -> dict:
        out = {"decoder.affine": self.affine, "decoder.bias": self.bias}
        if self.mode == "conv":
            out.update({"decoder.conv1_w": self.conv1_w,
                        "decoder.conv1_b": self.conv1_b,
                        "decoder.conv2_w": self.conv2_w,
                        "decoder.conv2_b": self.conv2_b})
        return out


def init_decoder(num_channels: int = 32, mode: str = "affine",
                 seed: int = 0) -> Decoder:
    affine = np.zeros((3, num_channels))
    affine[:, :3] = np.eye(3)
    bias = np.zeros(3)
    if mode == "affine":
        return Decoder(affine=affine, bias=bias, mode=mode)
    rng = np.random.default_rng(seed)
    conv1_w = rng.normal(scale=np.sqrt(1.0 / (num_channels * 9)),
                         size=(CONV_HIDDEN, num_channels, 3, 3))
    return Decoder(affine=affine, bias=bias, mode=mode,
                   conv1_w=conv1_w, conv1_b=np.zeros(CONV_HIDDEN),
                   conv2_w=np.zeros((3, CONV_HIDDEN, 3, 3)), conv2_b=np.zeros(3))


def _check_fb(decoder: Decoder, fb_channels) -> np.ndarray:
    f = as_float_array(fb_channels, "fb_channels")
    if f.ndim != 3 or f.shape[0] != decoder.num_channels:
        raise ValueError(
            f"framebuffer has shape {f.shape}, decoder expects "
            f"({decoder.num_channels}, H, W)")
    return f


def decode(decoder: Decoder, fb_channels: np.ndarray) -> np.ndarray:
    """(K, H, W) feature buffer -> (3, H, W) RGB, resolution preserved."""
    f = _check_fb(decoder, fb_channels)
    out = np.einsum("ck,khw->chw", decoder.affine, f) + decoder.bias[:, None, None]
    if decoder.mode == "conv":
        hidden = np.tanh(conv2d_replicate(f, decoder.conv1_w, decoder.conv1_b))
        out = out + conv2d_replicate(hidden, decoder.conv2_w, decoder.conv2_b)
    return out


def decode_backward(decoder: Decoder, fb_channels: np.ndarray, grad_rgb: np.ndarray):
    """Returns (param gradients dict keyed like params(), grad wrt fb)."""
    f = _check_fb(decoder, fb_channels)
    g = as_float_array(grad_rgb, "grad_rgb", (3,) + f.shape[1:])
    grads = {
        "decoder.affine": np.einsum("chw,khw->ck", g, f),
        "decoder.bias": g.sum(axis=(1, 2)),
    }
    grad_f = np.einsum("ck,chw->khw", decoder.affine, g)
    if decoder.mode == "conv":
        pre = conv2d_replicate(f, decoder.conv1_w, decoder.conv1_b)
        act = np.tanh(pre)
        grad_act, grads["decoder.conv2_w"], grads["decoder.conv2_b"] = \
            conv2d_replicate_backward(act, decoder.conv2_w, g)
        grad_pre = grad_act * (1.0 - act ** 2)
        grad_f1, grads["decoder.conv1_w"], grads["decoder.conv1_b"] = \
            conv2d_replicate_backward(f, decoder.conv1_w, grad_pre)
        grad_f = grad_f + grad_f1
    return grads, grad_f
