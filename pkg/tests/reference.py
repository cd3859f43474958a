"""Independent reference implementations used as test oracles.

Everything here is deliberately naive and shares no code with the package
under test: per-pixel python loops for the metrics, a quadruple-loop
float64 convolution, central finite differences for gradients, brute-force
morphology, and a straight-line transliteration of the distillation
schedule.
"""

from __future__ import annotations

import numpy as np


# --- metrics (pure python, per pixel) ----------------------------------------

def iou_reference(pred_bits, gt_bits) -> float:
    inter = union = 0
    for p, g in zip(pred_bits, gt_bits):
        if p and g:
            inter += 1
        if p or g:
            union += 1
    if union == 0:
        return 1.0
    return inter / union


def pixel_accuracy_reference(pred_bits, gt_bits) -> float:
    match = total = 0
    for p, g in zip(pred_bits, gt_bits):
        total += 1
        if bool(p) == bool(g):
            match += 1
    return match / total


def iou_acc_reference(pred_bits, gt_bits, area_threshold: float = 0.05):
    total = gt_area = 0
    for g in gt_bits:
        total += 1
        if g:
            gt_area += 1
    use_accuracy = (gt_area / total) < area_threshold
    if use_accuracy:
        value = pixel_accuracy_reference(pred_bits, gt_bits)
    else:
        value = iou_reference(pred_bits, gt_bits)
    return value, use_accuracy, gt_area / total


# --- convolution (naive quadruple loop, float64) ------------------------------

def conv2d_reference(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int, padding: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    _, cin, h, w = x.shape
    cout, _, k, _ = weights.shape
    xp = np.zeros((1, cin, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + w] = x
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = np.zeros((1, cout, oh, ow))
    for oc in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                acc = bias[oc]
                for ic in range(cin):
                    for ky in range(k):
                        for kx in range(k):
                            acc += weights[oc, ic, ky, kx] * xp[0, ic, oy * stride + ky, ox * stride + kx]
                out[0, oc, oy, ox] = acc
    return out


def upsample2x_reference(x: np.ndarray) -> np.ndarray:
    """Direct per-pixel 2x bilinear upsample, half-pixel centers, edge clamped."""
    x = np.asarray(x, dtype=np.float64)
    _, c, h, w = x.shape
    out = np.zeros((1, c, 2 * h, 2 * w))
    for ch in range(c):
        for oy in range(2 * h):
            sy = min(max((oy + 0.5) / 2.0 - 0.5, 0.0), h - 1)
            y0 = int(np.floor(sy))
            y1 = min(y0 + 1, h - 1)
            wy = sy - y0
            for ox in range(2 * w):
                sx = min(max((ox + 0.5) / 2.0 - 0.5, 0.0), w - 1)
                x0 = int(np.floor(sx))
                x1 = min(x0 + 1, w - 1)
                wx = sx - x0
                top = x[0, ch, y0, x0] * (1 - wx) + x[0, ch, y0, x1] * wx
                bot = x[0, ch, y1, x0] * (1 - wx) + x[0, ch, y1, x1] * wx
                out[0, ch, oy, ox] = top * (1 - wy) + bot * wy
    return out


def bce_reference(logits: np.ndarray, target: np.ndarray) -> float:
    z = np.asarray(logits, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    total = 0.0
    for zi, ti in zip(z, t):
        total += max(zi, 0.0) - zi * ti + np.log1p(np.exp(-abs(zi)))
    return total / len(z)


def finite_difference(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar f w.r.t. every element of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


# --- morphology (brute force) -------------------------------------------------

def dilate4_reference(bits: np.ndarray, radius: int) -> np.ndarray:
    out = np.asarray(bits, dtype=bool).copy()
    h, w = out.shape
    for _ in range(radius):
        src = out.copy()
        for y in range(h):
            for x in range(w):
                if src[y, x]:
                    continue
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and src[ny, nx]:
                        out[y, x] = True
                        break
    return out


def erode4_reference(bits: np.ndarray, radius: int) -> np.ndarray:
    out = np.asarray(bits, dtype=bool).copy()
    h, w = out.shape
    for _ in range(radius):
        src = out.copy()
        for y in range(h):
            for x in range(w):
                if not src[y, x]:
                    continue
                keep = True
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w) or not src[ny, nx]:
                        keep = False
                        break
                out[y, x] = keep
    return out


# --- distillation schedule (straight-line transliteration) ---------------------

def schedule_reference(scores, n_frames: int, u_max: int, delta_min: int, delta_max: int, a_thresh: float):
    """Replays the adaptive schedule over a stream of would-be accuracy values.

    scores is an iterator consumed once per accuracy evaluation (teacher
    frames and post-train rescores). Returns one (action, delta, u,
    a_curr) tuple per frame, with post-frame state.
    """
    scores = iter(scores)
    delta = delta_min
    a_curr = 0.0
    u = 0
    trace = []
    for t in range(n_frames):
        update = a_curr < a_thresh
        if t % delta == 0:
            u = u_max
            a_curr = next(scores)
            action = "teacher_infer"
        elif update and u > 0:
            a_curr = next(scores)
            u -= 1
            action = "train_step"
        elif update and u == 0:
            delta = max(delta_min, delta // 2)
            action = "halve_delta"
        elif (not update) and u > 0:
            delta = min(delta_max, 2 * delta)
            u = 0
            action = "double_delta"
        else:
            action = "idle"
        trace.append((action, delta, u, a_curr))
    return trace


# --- misc helpers ----------------------------------------------------------------

def point_in_ellipse(px: float, py: float, cx: float, cy: float, rx: float, ry: float) -> bool:
    return ((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2 <= 1.0


def point_in_rounded_rect(
    px: float, py: float, cx: float, cy: float, rx: float, ry: float, cr: float
) -> bool:
    ex = max(abs(px - cx) - (rx - cr), 0.0)
    ey = max(abs(py - cy) - (ry - cr), 0.0)
    return ex * ex + ey * ey <= cr * cr
