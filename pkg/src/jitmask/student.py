"""Encoder-decoder matting network: build, predict, train, pretrain, publish.

The network mirrors a compact segmentation encoder-decoder: stride-2 3x3
conv + ReLU encoder blocks, a 3x3 bottleneck conv + ReLU, decoder blocks
of 2x bilinear upsample + 3x3 conv + ReLU with additive skip connections
from the matching-resolution encoder outputs, and a final 1x1 conv whose
sigmoid output is the alpha matte. It predicts at a reduced working
resolution; callers downsample frames before inference and upsample the
matte afterwards.

Parameter snapshots are immutable; the training context owns a private
parameter set and hands copies to the inference context by publishing
them through a SnapshotStore, which bumps the version by exactly one per
publish and swaps the reference atomically.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .imaging import AlphaMatte, Frame
from .nn import (
    AdamConfig,
    AdamState,
    ConvLayer,
    Tensor4,
    adam_step,
    bce_loss,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    sigmoid_forward,
    upsample2x_bilinear_backward,
    upsample2x_bilinear_forward,
)


@dataclass(frozen=True)
class StudentConfig:
    """Architecture and working-resolution settings.

    encoder_channels and decoder_channels must have equal length (one
    decoder block per encoder block); each decoder output except the last
    must match the channel count of the encoder output it adds as a skip.
    Input dimensions must be divisible by 2**depth.
    """

    input_width: int
    input_height: int
    encoder_channels: tuple[int, ...] = (8, 16, 32)
    decoder_channels: tuple[int, ...] = (16, 8, 8)
    kernel_size: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))
        depth = len(self.encoder_channels)
        if depth == 0 or len(self.decoder_channels) != depth:
            raise ValueError("encoder and decoder must have equal, nonzero depth")
        scale = 1 << depth
        if self.input_width % scale or self.input_height % scale:
            raise ValueError(
                f"input {self.input_width}x{self.input_height} must be divisible by {scale}"
            )
        if self.input_width < scale or self.input_height < scale:
            raise ValueError("input dimensions too small for the network depth")
        for j in range(depth - 1):
            if self.decoder_channels[j] != self.encoder_channels[depth - 2 - j]:
                raise ValueError(
                    "decoder channels must mirror encoder channels for additive skips: "
                    f"decoder[{j}]={self.decoder_channels[j]} vs "
                    f"encoder[{depth - 2 - j}]={self.encoder_channels[depth - 2 - j]}"
                )
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)


@dataclass(frozen=True)
class StudentParams:
    """Full parameter set: encoder convs, bottleneck, decoder convs, head."""

    config: StudentConfig
    layers: tuple[ConvLayer, ...]
    version: int = 0

    def flat(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def with_flat(self, arrays: list[np.ndarray]) -> "StudentParams":
        if len(arrays) != 2 * len(self.layers):
            raise ValueError("flat array count does not match layer count")
        rebuilt = tuple(
            replace(layer, weights=arrays[2 * i], bias=arrays[2 * i + 1])
            for i, layer in enumerate(self.layers)
        )
        return replace(self, layers=rebuilt)


@dataclass(frozen=True)
class Prediction:
    """Student output at working resolution plus the snapshot that made it."""

    matte: AlphaMatte
    params_version: int


def _he_conv(rng: np.random.Generator, out_ch: int, in_ch: int, k: int, stride: int) -> ConvLayer:
    std = np.sqrt(2.0 / (in_ch * k * k))
    w = rng.normal(0.0, std, size=(out_ch, in_ch, k, k)).astype(np.float32)
    b = np.zeros(out_ch, dtype=np.float32)
    return ConvLayer(weights=w, bias=b, stride=stride)


def build_student(config: StudentConfig) -> StudentParams:
    """He-initialized network, deterministic for a fixed config seed."""
    rng = np.random.default_rng(config.seed)
    k = config.kernel_size
    layers: list[ConvLayer] = []
    in_ch = 3
    for ch in config.encoder_channels:
        layers.append(_he_conv(rng, ch, in_ch, k, stride=2))
        in_ch = ch
    layers.append(_he_conv(rng, in_ch, in_ch, k, stride=1))  # bottleneck
    for ch in config.decoder_channels:
        layers.append(_he_conv(rng, ch, in_ch, k, stride=1))
        in_ch = ch
    layers.append(_he_conv(rng, 1, in_ch, 1, stride=1))  # 1-channel head
    return StudentParams(config=config, layers=tuple(layers), version=0)


def frame_to_tensor(pixels: np.ndarray | Frame) -> Tensor4:
    """uint8 (h, w, 3) image to a (1, 3, h, w) float32 tensor in [0, 1]."""
    if isinstance(pixels, Frame):
        pixels = pixels.pixels
    arr = np.asarray(pixels, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))[None, ...]


def matte_to_target(matte: AlphaMatte | np.ndarray) -> Tensor4:
    """(h, w) matte to a (1, 1, h, w) target tensor."""
    vals = matte.values if isinstance(matte, AlphaMatte) else np.asarray(matte, dtype=np.float32)
    return vals[None, None, :, :]


def _check_resolution(params: StudentParams, x: Tensor4) -> None:
    cfg = params.config
    if x.shape[2] != cfg.input_height or x.shape[3] != cfg.input_width:
        raise ValueError(
            f"input {x.shape[3]}x{x.shape[2]} does not match working resolution "
            f"{cfg.input_width}x{cfg.input_height}"
        )


def forward_logits(params: StudentParams, x: Tensor4, keep_cache: bool = False):
    """Pre-sigmoid forward pass; optionally returns intermediates for backward."""
    _check_resolution(params, x)
    depth = params.config.depth
    enc = params.layers[:depth]
    bottleneck = params.layers[depth]
    dec = params.layers[depth + 1 : 2 * depth + 1]
    head = params.layers[-1]

    enc_inputs: list[Tensor4] = []
    enc_pre: list[Tensor4] = []
    enc_out: list[Tensor4] = []
    h = x
    for conv in enc:
        enc_inputs.append(h)
        pre = conv2d_forward(h, conv)
        h = relu_forward(pre)
        enc_pre.append(pre)
        enc_out.append(h)

    bot_pre = conv2d_forward(h, bottleneck)
    h = relu_forward(bot_pre)

    dec_up_in: list[Tensor4] = []
    dec_up_out: list[Tensor4] = []
    dec_pre: list[Tensor4] = []
    for j, conv in enumerate(dec):
        dec_up_in.append(h)
        up = upsample2x_bilinear_forward(h)
        pre = conv2d_forward(up, conv)
        r = relu_forward(pre)
        skip = depth - 2 - j
        h = r + enc_out[skip] if skip >= 0 else r
        dec_up_out.append(up)
        dec_pre.append(pre)

    logits = conv2d_forward(h, head)
    if not keep_cache:
        return logits, None
    cache = {
        "enc_inputs": enc_inputs,
        "enc_pre": enc_pre,
        "enc_out": enc_out,
        "bot_pre": bot_pre,
        "dec_up_in": dec_up_in,
        "dec_up_out": dec_up_out,
        "dec_pre": dec_pre,
        "head_in": h,
    }
    return logits, cache


def backward_from_logits(params: StudentParams, cache: dict, grad_logits: Tensor4) -> list[np.ndarray]:
    """Parameter gradients matching params.flat() ordering."""
    depth = params.config.depth
    enc = params.layers[:depth]
    bottleneck = params.layers[depth]
    dec = params.layers[depth + 1 : 2 * depth + 1]
    head = params.layers[-1]

    grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    g, gw, gb = conv2d_backward(cache["head_in"], head, grad_logits)
    grads[len(params.layers) - 1] = (gw, gb)

    enc_skip_grad: list[Tensor4 | None] = [None] * depth
    for j in reversed(range(depth)):
        skip = depth - 2 - j
        if skip >= 0:
            enc_skip_grad[skip] = g if enc_skip_grad[skip] is None else enc_skip_grad[skip] + g
        g_pre = relu_backward(cache["dec_pre"][j], g)
        g_up, gw, gb = conv2d_backward(cache["dec_up_out"][j], dec[j], g_pre)
        grads[depth + 1 + j] = (gw, gb)
        g = upsample2x_bilinear_backward(g_up)

    g_bot_pre = relu_backward(cache["bot_pre"], g)
    g, gw, gb = conv2d_backward(cache["enc_out"][-1], bottleneck, g_bot_pre)
    grads[depth] = (gw, gb)

    for i in reversed(range(depth)):
        if enc_skip_grad[i] is not None:
            g = g + enc_skip_grad[i]
        g_pre = relu_backward(cache["enc_pre"][i], g)
        g, gw, gb = conv2d_backward(cache["enc_inputs"][i], enc[i], g_pre)
        grads[i] = (gw, gb)

    flat: list[np.ndarray] = []
    for idx in range(len(params.layers)):
        gw, gb = grads[idx]
        flat.append(gw)
        flat.append(gb)
    return flat


def predict(params: StudentParams, x: Tensor4) -> Prediction:
    """Full forward pass with the final sigmoid applied."""
    logits, _ = forward_logits(params, x)
    vals = sigmoid_forward(logits)[0, 0]
    matte = AlphaMatte(params.config.input_width, params.config.input_height, vals)
    return Prediction(matte=matte, params_version=params.version)


def train_step(
    params: StudentParams,
    x: Tensor4,
    label: AlphaMatte | np.ndarray,
    lr: float = 0.2,
    background_weight: float = 1.0,
) -> tuple[StudentParams, float]:
    """One supervised update: forward, BCE on logits, backward, SGD.

    Returns fresh unpublished parameters; the inputs are not mutated.
    """
    logits, cache = forward_logits(params, x, keep_cache=True)
    target = matte_to_target(label)
    if target.shape != logits.shape:
        raise ValueError(f"label shape {target.shape[2:]} != output shape {logits.shape[2:]}")
    loss, grad_logits = bce_loss(logits, target, background_weight=background_weight)
    grads = backward_from_logits(params, cache, grad_logits)
    new_flat = sgd_step(params.flat(), grads, lr)
    return params.with_flat(new_flat), loss


def pretrain(
    params: StudentParams,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    epochs: int,
    adam: AdamConfig = AdamConfig(),
    seed: int = 0,
    background_weight: float = 1.0,
    epoch_losses: list[float] | None = None,
) -> StudentParams:
    """Adam optimization over shuffled epochs of (uint8 image, float mask) pairs."""
    if not dataset:
        raise ValueError("pretrain needs a nonempty dataset")
    rng = np.random.default_rng(seed)
    flat = params.flat()
    state = AdamState.zeros_like(flat)
    work = params
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for idx in order:
            image, mask = dataset[idx]
            x = frame_to_tensor(image)
            logits, cache = forward_logits(work, x, keep_cache=True)
            loss, grad_logits = bce_loss(
                logits, matte_to_target(mask), background_weight=background_weight
            )
            grads = backward_from_logits(work, cache, grad_logits)
            flat, state = adam_step(flat, grads, state, adam)
            work = work.with_flat(flat)
            total += loss
        if epoch_losses is not None:
            epoch_losses.append(total / len(dataset))
    return work


def publish_snapshot(params: StudentParams) -> StudentParams:
    """Immutable copy with the snapshot version advanced by one."""
    frozen = []
    for layer in params.layers:
        w = np.ascontiguousarray(layer.weights)
        b = np.ascontiguousarray(layer.bias)
        w.flags.writeable = False
        b.flags.writeable = False
        frozen.append(replace(layer, weights=w, bias=b))
    return replace(params, layers=tuple(frozen), version=params.version + 1)


class SnapshotStore:
    """Atomic published-snapshot slot shared between threads.

    Readers always see one complete version; publish swaps a single
    reference, so a concurrent predict never observes a torn parameter
    set.
    """

    def __init__(self, initial: StudentParams):
        self._lock = threading.Lock()
        self._current = initial

    def latest(self) -> StudentParams:
        return self._current

    def publish(self, params: StudentParams) -> StudentParams:
        with self._lock:
            published = replace(publish_snapshot(params), version=self._current.version + 1)
            self._current = published
            return published


# --- weight serialization ----------------------------------------------------

def save_weights(params: StudentParams, path: str | Path) -> None:
    """Write parameters as flat little-endian float32 plus a JSON sidecar."""
    path = Path(path)
    blobs = [np.ascontiguousarray(a, dtype="<f4") for a in params.flat()]
    path.write_bytes(b"".join(a.tobytes() for a in blobs))
    cfg = params.config
    sidecar = {
        "dtype": "float32",
        "byte_order": "little",
        "version": params.version,
        "config": {
            "input_width": cfg.input_width,
            "input_height": cfg.input_height,
            "encoder_channels": list(cfg.encoder_channels),
            "decoder_channels": list(cfg.decoder_channels),
            "kernel_size": cfg.kernel_size,
            "seed": cfg.seed,
        },
        "layers": [
            {
                "weights_shape": list(layer.weights.shape),
                "bias_shape": list(layer.bias.shape),
                "stride": layer.stride,
                "padding": layer.padding,
            }
            for layer in params.layers
        ],
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))


def load_weights(path: str | Path) -> StudentParams:
    """Inverse of save_weights; validates payload length against the sidecar."""
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    cfg = StudentConfig(
        input_width=sidecar["config"]["input_width"],
        input_height=sidecar["config"]["input_height"],
        encoder_channels=tuple(sidecar["config"]["encoder_channels"]),
        decoder_channels=tuple(sidecar["config"]["decoder_channels"]),
        kernel_size=sidecar["config"]["kernel_size"],
        seed=sidecar["config"]["seed"],
    )
    raw = path.read_bytes()
    layers: list[ConvLayer] = []
    offset = 0
    for spec in sidecar["layers"]:
        w_shape = tuple(spec["weights_shape"])
        b_shape = tuple(spec["bias_shape"])
        w_count = int(np.prod(w_shape))
        b_count = int(np.prod(b_shape))
        need = 4 * (w_count + b_count)
        if offset + need > len(raw):
            raise ValueError(f"{path}: weight payload shorter than sidecar declares")
        w = np.frombuffer(raw, dtype="<f4", count=w_count, offset=offset).reshape(w_shape)
        offset += 4 * w_count
        b = np.frombuffer(raw, dtype="<f4", count=b_count, offset=offset).reshape(b_shape)
        offset += 4 * b_count
        layers.append(
            ConvLayer(
                weights=w.astype(np.float32),
                bias=b.astype(np.float32),
                stride=spec["stride"],
            )
        )
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after declared layers")
    return StudentParams(config=cfg, layers=tuple(layers), version=sidecar.get("version", 0))


def working_height_for(source_width: int, source_height: int, working_width: int, depth: int = 3) -> int:
    """Match the source aspect at the working width, snapped to 2**depth rows."""
    scale = 1 << depth
    exact = working_width * source_height / source_width
    snapped = int(np.floor(exact / scale + 0.5)) * scale
    return max(scale, snapped)
