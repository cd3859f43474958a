"""Dense forward/backward kernels for the student network.

Tensors are plain numpy arrays shaped (batch, channels, height, width)
with batch fixed at 1; production code runs float32, but the kernels
preserve whatever float dtype they are given so float64 shadow runs work
for numerical checks. Convolution is cross-correlation (no kernel flip).
Every backward function is the exact adjoint of its forward map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

Tensor4 = np.ndarray  # (1, channels, height, width)


def as_tensor4(arr: np.ndarray) -> Tensor4:
    """Validate the (1, c, h, w) single-stream tensor convention."""
    arr = np.asarray(arr)
    if arr.ndim != 4 or arr.shape[0] != 1:
        raise ValueError(f"expected shape (1, c, h, w), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvLayer:
    """Square-kernel convolution parameters.

    Kernel size must be odd and padding k // 2, so stride-1 layers keep
    the spatial size ("same" padding) and stride-2 layers halve it.
    """

    weights: np.ndarray  # (out_ch, in_ch, k, k)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    padding: int | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"weights must be (out, in, k, k), got {w.shape}")
        k = w.shape[2]
        if k % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {k}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        pad = self.padding if self.padding is not None else k // 2
        if pad != k // 2:
            raise ValueError(f"padding must be k // 2 = {k // 2}, got {pad}")
        object.__setattr__(self, "padding", pad)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


def _pad_input(x: Tensor4, p: int) -> Tensor4:
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x


def _out_spatial(x: Tensor4, layer: ConvLayer) -> tuple[int, int]:
    p, s, k = layer.padding, layer.stride, layer.kernel_size
    oh = (x.shape[2] + 2 * p - k) // s + 1
    ow = (x.shape[3] + 2 * p - k) // s + 1
    return oh, ow


def conv2d_forward(x: Tensor4, layer: ConvLayer) -> Tensor4:
    """Cross-correlation with zero padding; spatial out = (in + 2p - k)//s + 1.

    Computed as one GEMM per kernel tap over contiguous channel-major
    views; tap order is fixed, so the reduction is deterministic.
    """
    x = as_tensor4(x)
    if x.shape[1] != layer.in_channels:
        raise ValueError(f"input has {x.shape[1]} channels, layer expects {layer.in_channels}")
    p, s, k = layer.padding, layer.stride, layer.kernel_size
    cin, cout = layer.in_channels, layer.out_channels
    xp = _pad_input(x, p)
    hp, wp = xp.shape[2], xp.shape[3]
    oh, ow = _out_spatial(x, layer)
    w = layer.weights.astype(x.dtype, copy=False)
    taps = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # (k, k, cout, cin), BLAS-friendly
    acc = np.zeros((cout, oh, ow), dtype=x.dtype)
    if s == 1:
        # one GEMM per kernel tap into a reused scratch, then shifted adds
        xflat = xp.reshape(cin, hp * wp)
        scratch = np.empty((cout, hp * wp), dtype=x.dtype)
        for ky in range(k):
            for kx in range(k):
                np.matmul(taps[ky, kx], xflat, out=scratch)
                acc += scratch.reshape(cout, hp, wp)[:, ky : ky + oh, kx : kx + ow]
    else:
        scratch = np.empty((cin, oh * ow), dtype=x.dtype)
        for ky in range(k):
            for kx in range(k):
                window = xp[0, :, ky : ky + s * oh : s, kx : kx + s * ow : s]
                np.copyto(scratch.reshape(cin, oh, ow), window)
                acc += (taps[ky, kx] @ scratch).reshape(cout, oh, ow)
    acc += layer.bias.astype(x.dtype, copy=False)[:, None, None]
    return acc[None]


def conv2d_backward(
    x: Tensor4, layer: ConvLayer, grad_out: Tensor4
) -> tuple[Tensor4, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    x = as_tensor4(x)
    grad_out = as_tensor4(grad_out)
    p, s, k = layer.padding, layer.stride, layer.kernel_size
    cin, cout = layer.in_channels, layer.out_channels
    if grad_out.shape[1] != cout:
        raise ValueError(f"grad_out has {grad_out.shape[1]} channels, layer produces {cout}")
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    h, w_in = x.shape[2], x.shape[3]

    grad_bias = grad_out.sum(axis=(0, 2, 3))

    wgt = layer.weights.astype(x.dtype, copy=False)
    g2d = np.ascontiguousarray(grad_out[0]).reshape(cout, oh * ow)
    xp = _pad_input(x, p)

    # per-tap GEMMs: scatter w^T @ g into the input windows, and correlate
    # g with each window for the weight gradient
    taps_t = np.ascontiguousarray(wgt.transpose(2, 3, 1, 0))  # (k, k, cin, cout)
    grad_xp = np.zeros((1, cin) + xp.shape[2:], dtype=x.dtype)
    grad_weights = np.empty((cout, cin, k, k), dtype=x.dtype)
    gi_scratch = np.empty((cin, oh * ow), dtype=x.dtype)
    win_scratch = np.empty((cin, oh, ow), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            np.matmul(taps_t[ky, kx], g2d, out=gi_scratch)
            grad_xp[0, :, ky : ky + s * oh : s, kx : kx + s * ow : s] += gi_scratch.reshape(
                cin, oh, ow
            )
            np.copyto(win_scratch, xp[0, :, ky : ky + s * oh : s, kx : kx + s * ow : s])
            grad_weights[:, :, ky, kx] = g2d @ win_scratch.reshape(cin, oh * ow).T
    grad_x = grad_xp[:, :, p : p + h, p : p + w_in] if p else grad_xp
    return np.ascontiguousarray(grad_x), grad_weights, grad_bias


def relu_forward(x: Tensor4) -> Tensor4:
    return np.maximum(x, 0)


def relu_backward(x: Tensor4, grad_out: Tensor4) -> Tensor4:
    return grad_out * (x > 0)


def sigmoid_forward(x: Tensor4) -> Tensor4:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: Tensor4, grad_out: Tensor4) -> Tensor4:
    """Derivative from the forward *output* y = sigmoid(x)."""
    return grad_out * y * (1.0 - y)


def _upsample_last_axis(x: np.ndarray) -> np.ndarray:
    """2x bilinear upsample along the last axis: half-pixel centers, edge clamped.

    Every output pair (2i, 2i+1) mixes x[i] with its left/right neighbor
    at fixed weights 0.75/0.25; the clamped border folds the missing
    neighbor onto the border element.
    """
    n = x.shape[-1]
    out = np.empty(x.shape[:-1] + (2 * n,), dtype=x.dtype)
    even = out[..., 0::2]
    odd = out[..., 1::2]
    np.multiply(x, 0.75, out=even)
    even[..., 1:] += 0.25 * x[..., :-1]
    even[..., 0] += 0.25 * x[..., 0]
    np.multiply(x, 0.75, out=odd)
    odd[..., :-1] += 0.25 * x[..., 1:]
    odd[..., -1] += 0.25 * x[..., -1]
    return out


def upsample2x_bilinear_forward(x: Tensor4) -> Tensor4:
    """Double both spatial dimensions with bilinear interpolation."""
    x = as_tensor4(x)
    wide = _upsample_last_axis(x)
    return _upsample_last_axis(wide.swapaxes(2, 3)).swapaxes(2, 3)


def _upsample_adjoint_last_axis(g: np.ndarray) -> np.ndarray:
    """Adjoint of the 2x gather along the last axis.

    The half-pixel mapping gives every interior source index the fixed
    stencil 0.25*g[2i-1] + 0.75*g[2i] + 0.75*g[2i+1] + 0.25*g[2i+2];
    edge-clamped samples fold their out-of-range quarter back onto the
    border element.
    """
    even = g[..., 0::2]
    odd = g[..., 1::2]
    gx = 0.75 * (even + odd)
    gx[..., :-1] += 0.25 * even[..., 1:]
    gx[..., 1:] += 0.25 * odd[..., :-1]
    gx[..., 0] += 0.25 * even[..., 0]
    gx[..., -1] += 0.25 * odd[..., -1]
    return gx


def upsample2x_bilinear_backward(grad_out: Tensor4) -> Tensor4:
    """Exact adjoint of the 2x bilinear upsample."""
    grad_out = as_tensor4(grad_out)
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    if oh % 2 or ow % 2:
        raise ValueError(f"grad_out spatial dims must be even, got {oh}x{ow}")
    mid = _upsample_adjoint_last_axis(grad_out)
    return _upsample_adjoint_last_axis(mid.swapaxes(2, 3)).swapaxes(2, 3)


def bce_loss(
    pred_logits: Tensor4, target: Tensor4, background_weight: float = 1.0
) -> tuple[float, Tensor4]:
    """Mean binary cross-entropy on logits, with its gradient.

    Numerically stable for any logit magnitude. background_weight scales
    the contribution of pixels whose target is < 0.5; 1.0 disables the
    reweighting, which is the production default.
    """
    z = as_tensor4(pred_logits)
    t = as_tensor4(target)
    if z.shape != t.shape:
        raise ValueError(f"logits shape {z.shape} != target shape {t.shape}")
    if t.size and (float(t.min()) < 0.0 or float(t.max()) > 1.0):
        raise ValueError("target values must lie in [0, 1]")
    per_elem = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    residual = sigmoid_forward(z) - t
    if background_weight == 1.0:
        n = z.size
        return float(per_elem.mean()), (residual / n).astype(z.dtype, copy=False)
    wmap = np.where(t < 0.5, background_weight, 1.0).astype(z.dtype)
    wsum = float(wmap.sum())
    loss = float((per_elem * wmap).sum() / wsum)
    return loss, (residual * wmap / wsum).astype(z.dtype, copy=False)


def sgd_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float
) -> list[np.ndarray]:
    """Plain gradient descent: p - lr * g, no momentum or decay."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params vs {len(grads)} grads")
    out = []
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} != grad shape {g.shape}")
        out.append((p - lr * g).astype(p.dtype, copy=False))
    return out


@dataclass
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    config: AdamConfig = AdamConfig(),
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and advanced state."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params, grads, and state must have matching lengths")
    t = state.step_count + 1
    b1, b2 = config.beta1, config.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} != grad shape {g.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append((p - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)).astype(p.dtype, copy=False))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, step_count=t)
