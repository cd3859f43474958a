"""Core image types, netpbm IO, bilinear resizing, and background compositing.

All types are immutable value objects: constructors take ownership of the
backing numpy buffer and mark it read-only, so instances can be handed
between threads freely. Alpha values are the *foreground* weight: a
composited pixel is ``alpha * frame + (1 - alpha) * background``. (Under
the transposed reading, alpha would weight the background instead; this
codebase treats alpha as foreground probability throughout.)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class PnmError(ValueError):
    """Base class for PPM/PGM parse failures."""


class PnmHeaderError(PnmError):
    """Bad magic or malformed header fields."""


class PnmMaxvalError(PnmError):
    """Header maxval is not 255."""


class PnmTruncatedError(PnmError):
    """Pixel payload shorter than the header promises."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Frame:
    """One RGB video frame.

    pixels is a read-only (height, width, 3) uint8 array in row-major
    order. seq must increase strictly along a stream; capture_time is a
    monotonic-clock reading in seconds.
    """

    width: int
    height: int
    pixels: np.ndarray
    seq: int = 0
    capture_time: float = 0.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"frame dimensions must be >= 1, got {self.width}x{self.height}")
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ValueError(f"pixel buffer shape {px.shape} does not match {self.height}x{self.width}x3")
        object.__setattr__(self, "pixels", _freeze(px))

    def with_identity(self, seq: int, capture_time: float) -> "Frame":
        return replace(self, seq=seq, capture_time=capture_time)


@dataclass(frozen=True)
class AlphaMatte:
    """Single-channel soft foreground mask aligned to a Frame.

    values is a read-only (height, width) float32 array in [0, 1].
    """

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.shape != (self.height, self.width):
            raise ValueError(f"matte shape {vals.shape} does not match {self.height}x{self.width}")
        if vals.size and (float(vals.min()) < 0.0 or float(vals.max()) > 1.0):
            raise ValueError("matte values must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(vals))


@dataclass(frozen=True)
class BinaryMask:
    """Thresholded matte: read-only (height, width) boolean array."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise ValueError(f"mask shape {bits.shape} does not match {self.height}x{self.width}")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def area_fraction(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0


@dataclass(frozen=True)
class Background:
    """Replacement background sized to the pipeline output resolution."""

    image: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        img = np.asarray(self.image, dtype=np.uint8)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"background must be (h, w, 3) uint8, got shape {img.shape}")
        object.__setattr__(self, "image", _freeze(img))

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @classmethod
    def solid(cls, width: int, height: int, rgb: tuple[int, int, int]) -> "Background":
        img = np.empty((height, width, 3), dtype=np.uint8)
        img[:] = rgb
        return cls(img)

    @classmethod
    def from_frame(cls, frame: Frame) -> "Background":
        return cls(frame.pixels)


# --- netpbm IO -------------------------------------------------------------

def _parse_pnm(data: bytes, magic: bytes, path: Path) -> tuple[int, int, bytes]:
    """Parse a binary netpbm header, returning (width, height, payload)."""
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":  # comment runs to end of line
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PnmHeaderError(f"{path}: unexpected end of header")
        return data[start:pos]

    got_magic = next_token()
    if got_magic != magic:
        raise PnmHeaderError(f"{path}: expected magic {magic.decode()}, got {got_magic[:8]!r}")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise PnmHeaderError(f"{path}: non-numeric header field") from exc
    if width < 1 or height < 1:
        raise PnmHeaderError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise PnmMaxvalError(f"{path}: unsupported maxval {maxval}, only 255 is handled")
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PnmHeaderError(f"{path}: missing separator before payload")
    pos += 1
    return width, height, data[pos:]


def read_ppm(path: str | Path, seq: int = 0, capture_time: float = 0.0) -> Frame:
    """Read a binary PPM (magic P6, maxval 255) into a Frame."""
    path = Path(path)
    data = path.read_bytes()
    width, height, payload = _parse_pnm(data, b"P6", path)
    need = width * height * 3
    if len(payload) < need:
        raise PnmTruncatedError(f"{path}: payload has {len(payload)} bytes, needs {need}")
    px = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, 3)
    return Frame(width, height, px, seq=seq, capture_time=capture_time)


def write_ppm(frame: Frame, path: str | Path) -> None:
    """Write a Frame as binary PPM (P6, maxval 255)."""
    path = Path(path)
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    path.write_bytes(header + frame.pixels.tobytes())


def ppm_bytes(frame: Frame) -> bytes:
    """Serialize a Frame as one binary PPM document (for concatenated streams)."""
    return f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii") + frame.pixels.tobytes()


def read_pgm(path: str | Path) -> AlphaMatte:
    """Read a binary PGM (P5, maxval 255) into an AlphaMatte (bytes / 255)."""
    path = Path(path)
    data = path.read_bytes()
    width, height, payload = _parse_pnm(data, b"P5", path)
    need = width * height
    if len(payload) < need:
        raise PnmTruncatedError(f"{path}: payload has {len(payload)} bytes, needs {need}")
    raw = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width)
    return AlphaMatte(width, height, raw.astype(np.float32) / 255.0)


def write_pgm(matte: AlphaMatte, path: str | Path) -> None:
    """Write an AlphaMatte as binary PGM, quantizing with round-half-up."""
    path = Path(path)
    header = f"P5\n{matte.width} {matte.height}\n255\n".encode("ascii")
    raw = quantize_alpha(matte.values)
    path.write_bytes(header + raw.tobytes())


def quantize_alpha(values: np.ndarray) -> np.ndarray:
    """Map [0,1] floats to uint8 with value*255 rounded half up."""
    return np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


# --- resizing and compositing ----------------------------------------------

def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample positions for one axis: half-pixel-center mapping, edge clamped."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    return i0, i1, w


def _resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of an (h, w[, c]) float64 array."""
    in_h, in_w = img.shape[:2]
    if (out_w, out_h) == (in_w, in_h):
        return img.copy()
    y0, y1, wy = _bilinear_axis(in_h, out_h)
    x0, x1, wx = _bilinear_axis(in_w, out_w)
    if img.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
    rows = img[y0] * (1.0 - wy) + img[y1] * wy
    return rows[:, x0] * (1.0 - wx) + rows[:, x1] * wx


def resize_bilinear_rgb(frame: Frame, out_w: int, out_h: int) -> Frame:
    """Resize a frame with bilinear interpolation (edge-clamped sampling)."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    if (out_w, out_h) == (frame.width, frame.height):
        return frame
    out = _resize_bilinear(frame.pixels.astype(np.float64), out_w, out_h)
    px = np.floor(out + 0.5).clip(0, 255).astype(np.uint8)
    return Frame(out_w, out_h, px, seq=frame.seq, capture_time=frame.capture_time)


def resize_bilinear_alpha(matte: AlphaMatte, out_w: int, out_h: int) -> AlphaMatte:
    """Resize a matte with bilinear interpolation, clamped back to [0, 1]."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    if (out_w, out_h) == (matte.width, matte.height):
        return matte
    out = _resize_bilinear(matte.values.astype(np.float64), out_w, out_h)
    return AlphaMatte(out_w, out_h, np.clip(out, 0.0, 1.0).astype(np.float32))


def composite(frame: Frame, matte: AlphaMatte, bg: Background) -> Frame:
    """Blend frame over background: alpha weights the frame (foreground)."""
    if (matte.width, matte.height) != (frame.width, frame.height) or (
        bg.width,
        bg.height,
    ) != (frame.width, frame.height):
        raise ValueError(
            f"dimension mismatch: frame {frame.width}x{frame.height}, "
            f"matte {matte.width}x{matte.height}, background {bg.width}x{bg.height}"
        )
    a = matte.values.astype(np.float64)[:, :, None]
    mixed = a * frame.pixels + (1.0 - a) * bg.image
    px = np.floor(mixed + 0.5).clip(0, 255).astype(np.uint8)
    return Frame(frame.width, frame.height, px, seq=frame.seq, capture_time=frame.capture_time)


def threshold(matte: AlphaMatte, level: float = 0.5) -> BinaryMask:
    """Binarize a matte: bit = value >= level."""
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"threshold level must be in [0, 1], got {level}")
    return BinaryMask(matte.width, matte.height, matte.values >= level)
