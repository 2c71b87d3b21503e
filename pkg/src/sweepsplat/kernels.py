"""Dense float32 array kernels: convolutions, sampling, activations, small MLPs.

Everything here is a pure function over numpy arrays. Data is float32;
reductions run in float64 with a fixed loop order (offset-major, then an
einsum contraction with ``optimize=False``, which never dispatches to BLAS)
and round to float32 at the end. Results are therefore bit-identical across
runs and worker counts.

Sampling coordinates are in array lattice units: integer coordinates land
exactly on stored values. Upsampling follows the align-corners-false
convention with edge clamping, so constant fields stay constant.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

_F32 = np.float32
_F64 = np.float64

OUTPUT_ACTIVATIONS = ("none", "sigmoid", "softplus", "l2norm", "scaled_sigmoid2")


def _check_spatial(name: str, x: np.ndarray, ndim: int) -> None:
    if x.ndim != ndim + 1:
        raise ShapeError(f"{name}: expected input rank {ndim + 1} (channels + {ndim} spatial axes), got rank {x.ndim}")


def _resolve_padding(name: str, kernel: tuple[int, ...], padding) -> tuple[int, ...]:
    if padding == "same":
        for ax, k in enumerate(kernel):
            if k % 2 == 0:
                raise ShapeError(f"{name}: same padding needs an odd kernel, axis {ax} has extent {k}")
        return tuple(k // 2 for k in kernel)
    if isinstance(padding, int):
        return (padding,) * len(kernel)
    return tuple(padding)


def _convnd(name: str, x: np.ndarray, weights: np.ndarray, bias, stride: int, padding, ndim: int) -> np.ndarray:
    _check_spatial(name, x, ndim)
    if weights.ndim != ndim + 2:
        raise ShapeError(f"{name}: expected weights rank {ndim + 2}, got rank {weights.ndim}")
    c_in = x.shape[0]
    if weights.shape[1] != c_in:
        raise ShapeError(f"{name}: input channel axis 0 has {c_in} channels, weights channel axis 1 has {weights.shape[1]}")
    c_out = weights.shape[0]
    kernel = weights.shape[2:]
    pad = _resolve_padding(name, kernel, padding)

    for ax in range(ndim):
        if x.shape[1 + ax] + 2 * pad[ax] < kernel[ax]:
            raise ShapeError(f"{name}: spatial axis {ax} extent {x.shape[1 + ax]} smaller than kernel {kernel[ax]}")

    xp = np.pad(x.astype(_F64), [(0, 0)] + [(p, p) for p in pad])
    out_shape = tuple((x.shape[1 + ax] + 2 * pad[ax] - kernel[ax]) // stride + 1 for ax in range(ndim))
    w64 = weights.astype(_F64)
    out = np.zeros((c_out,) + out_shape, dtype=_F64)

    # Offset-major accumulation: one shifted slice per kernel tap, contracted
    # over input channels. The loop nest is fixed, so summation order is too.
    for offset in np.ndindex(*kernel):
        slicer = (slice(None),) + tuple(
            slice(offset[ax], offset[ax] + stride * (out_shape[ax] - 1) + 1, stride) for ax in range(ndim)
        )
        tap = w64[(slice(None), slice(None)) + offset]
        out += np.einsum("c...,oc->o...", xp[slicer], tap, optimize=False)

    if bias is not None:
        bias = np.asarray(bias, dtype=_F64)
        if bias.shape != (c_out,):
            raise ShapeError(f"{name}: bias axis 0 has {bias.shape[0] if bias.ndim else 'scalar'} entries, expected {c_out}")
        out += bias.reshape((c_out,) + (1,) * ndim)
    return out.astype(_F32)


def conv1d(x: np.ndarray, weights: np.ndarray, bias=None, stride: int = 1, padding="same") -> np.ndarray:
    """Convolve ``x`` of shape (C, L) with weights (C', C, k) -> (C', L')."""
    return _convnd("conv1d", x, weights, bias, stride, padding, 1)


def conv2d(x: np.ndarray, weights: np.ndarray, bias=None, stride: int = 1, padding="same") -> np.ndarray:
    """Convolve ``x`` of shape (C, H, W) with weights (C', C, k, k) -> (C', H', W')."""
    return _convnd("conv2d", x, weights, bias, stride, padding, 2)


def conv3d(x: np.ndarray, weights: np.ndarray, bias=None, stride: int = 1, padding="same") -> np.ndarray:
    """Convolve ``x`` of shape (C, D, H, W) with weights (C', C, k, k, k)."""
    return _convnd("conv3d", x, weights, bias, stride, padding, 3)


def bilinear_sample(feature: np.ndarray, coords: np.ndarray, return_mask: bool = False):
    """Sample (C, H, W) features at continuous lattice coordinates.

    ``coords`` has shape (2, ...): coords[0] is x (column), coords[1] is y
    (row); integer coordinates return stored values exactly. Samples outside
    [0, W-1] x [0, H-1] are zero and marked invalid in the mask.
    """
    _check_spatial("bilinear_sample", feature, 2)
    if coords.shape[0] != 2:
        raise ShapeError(f"bilinear_sample: coords axis 0 has extent {coords.shape[0]}, expected 2 (x, y)")
    c, h, w = feature.shape
    x = coords[0].astype(_F64)
    y = coords[1].astype(_F64)
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)

    x0f = np.floor(x)
    y0f = np.floor(y)
    fx = x - x0f
    fy = y - y0f
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)

    f = feature.astype(_F64)
    out = (
        f[:, y0, x0] * ((1.0 - fx) * (1.0 - fy))
        + f[:, y0, x1] * (fx * (1.0 - fy))
        + f[:, y1, x0] * ((1.0 - fx) * fy)
        + f[:, y1, x1] * (fx * fy)
    )
    out = np.where(valid, out, 0.0).astype(_F32)
    if return_mask:
        return out, valid
    return out


def _upsample_axis_coords(n_out: int, n_in: int):
    src = (np.arange(n_out, dtype=_F64) + 0.5) / 2.0 - 0.5
    i0f = np.floor(src)
    frac = src - i0f
    i0 = np.clip(i0f.astype(np.int64), 0, n_in - 1)
    i1 = np.clip(i0f.astype(np.int64) + 1, 0, n_in - 1)
    return i0, i1, frac


def bilinear_upsample_x2(x: np.ndarray) -> np.ndarray:
    """Upsample (C, H, W) to (C, 2H, 2W), align-corners-false, edges clamped."""
    _check_spatial("bilinear_upsample_x2", x, 2)
    c, h, w = x.shape
    y0, y1, fy = _upsample_axis_coords(2 * h, h)
    x0, x1, fx = _upsample_axis_coords(2 * w, w)
    f = x.astype(_F64)
    rows = f[:, y0, :] * (1.0 - fy)[None, :, None] + f[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1.0 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    return out.astype(_F32)


def trilinear_upsample_x2(x: np.ndarray) -> np.ndarray:
    """Upsample (C, D, H, W) to (C, 2D, 2H, 2W), same convention as 2D."""
    _check_spatial("trilinear_upsample_x2", x, 3)
    c, d, h, w = x.shape
    d0, d1, fd = _upsample_axis_coords(2 * d, d)
    y0, y1, fy = _upsample_axis_coords(2 * h, h)
    x0, x1, fx = _upsample_axis_coords(2 * w, w)
    f = x.astype(_F64)
    a = f[:, d0, :, :] * (1.0 - fd)[None, :, None, None] + f[:, d1, :, :] * fd[None, :, None, None]
    b = a[:, :, y0, :] * (1.0 - fy)[None, None, :, None] + a[:, :, y1, :] * fy[None, None, :, None]
    out = b[:, :, :, x0] * (1.0 - fx)[None, None, None, :] + b[:, :, :, x1] * fx[None, None, None, :]
    return out.astype(_F32)


def softmax_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Shift-invariant softmax along ``axis``; slices sum to 1."""
    x64 = np.asarray(x, dtype=_F64)
    shifted = x64 - np.max(x64, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / np.sum(e, axis=axis, keepdims=True)).astype(_F32)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.asarray(0.0, dtype=x.dtype))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x64 = np.asarray(x, dtype=_F64)
    out = np.empty_like(x64)
    pos = x64 >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x64[pos]))
    ex = np.exp(x64[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(_F32)


def softplus(x: np.ndarray) -> np.ndarray:
    x64 = np.asarray(x, dtype=_F64)
    return (np.maximum(x64, 0.0) + np.log1p(np.exp(-np.abs(x64)))).astype(_F32)


def scaled_sigmoid_2(x: np.ndarray) -> np.ndarray:
    """2 * sigmoid(x): range (0, 2), value 1 at x = 0."""
    return (2.0 * sigmoid(x).astype(_F64)).astype(_F32)


def l2_normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Scale vectors along ``axis`` to unit Euclidean norm; rejects zero vectors."""
    v64 = np.asarray(v, dtype=_F64)
    norm = np.sqrt(np.sum(v64 * v64, axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        raise ValueError("l2_normalize: zero vector has no direction")
    return (v64 / norm).astype(_F32)


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first) plus the output activation tag.

    Hidden activations are relu. ``widths`` must describe at least one layer.
    """

    widths: tuple[int, ...]
    output_activation: str = "none"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ShapeError(f"MlpSpec: need at least one layer, got widths {self.widths}")
        if any(w <= 0 for w in self.widths):
            raise ShapeError(f"MlpSpec: widths must be positive, got {self.widths}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"MlpSpec: unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def _apply_output_activation(tag: str, x: np.ndarray) -> np.ndarray:
    if tag == "none":
        return x.astype(_F32)
    if tag == "sigmoid":
        return sigmoid(x)
    if tag == "softplus":
        return softplus(x)
    if tag == "l2norm":
        return l2_normalize(x, axis=-1)
    if tag == "scaled_sigmoid2":
        return scaled_sigmoid_2(x)
    raise ValueError(f"unknown output activation {tag!r}")


def mlp_forward(spec: MlpSpec, layers: Sequence[tuple[np.ndarray, np.ndarray]], x: np.ndarray) -> np.ndarray:
    """Run a small MLP over the last axis of ``x`` (any leading shape).

    ``layers`` holds (weight, bias) pairs with weight shape (d_out, d_in).
    """
    if len(layers) != spec.n_layers:
        raise ShapeError(f"mlp_forward: spec describes {spec.n_layers} layers, got {len(layers)}")
    if x.shape[-1] != spec.widths[0]:
        raise ShapeError(f"mlp_forward: input last axis {x.shape[-1]} != spec input width {spec.widths[0]}")
    h = np.asarray(x, dtype=_F64)
    for i, (w, b) in enumerate(layers):
        d_out, d_in = spec.widths[i + 1], spec.widths[i]
        if w.shape != (d_out, d_in):
            raise ShapeError(f"mlp_forward: layer {i} weight shape {w.shape} != ({d_out}, {d_in})")
        if b.shape != (d_out,):
            raise ShapeError(f"mlp_forward: layer {i} bias shape {b.shape} != ({d_out},)")
        h = np.einsum("...i,oi->...o", h, w.astype(_F64), optimize=False) + b.astype(_F64)
        if i + 1 < spec.n_layers:
            h = np.maximum(h, 0.0)
    return _apply_output_activation(spec.output_activation, h)


def finite_difference_probe(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element."""
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=_F64)
    flat = grad.reshape(-1)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        step = float(xp.flat[i]) - float(xm.flat[i])
        flat[i] = (float(f(xp)) - float(f(xm))) / step
    return grad.astype(_F32)


class SeededRng:
    """Named, reproducible random streams derived from one 64-bit seed.

    The stream for a given name is a hash of (seed, name), so initialization
    is bit-identical across runs and independent of how many other streams
    were drawn first or on which worker thread.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, name: str) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}:{name}".encode("utf-8")).digest()
        return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))

    def uniform_init(self, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        """Weight tensor drawn uniformly from +-sqrt(1/fan_in)."""
        bound = float(np.sqrt(1.0 / max(1, fan_in)))
        return self.stream(name).uniform(-bound, bound, size=shape).astype(_F32)
