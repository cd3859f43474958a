"""Pluggable teachers: a ground-truth oracle and a remote TCP client.

Wire format (JITM v1, all integers big-endian):

  request:  "JITM" | version 0x01 | width u16 | height u16 | seq u32 | w*h*3 RGB bytes
  response: "JITM" | version 0x01 | seq u32   | w*h alpha bytes (0..255)

The client supports both one-request-per-connection servers and
persistent connections carrying sequential request/response pairs; a
server advertises persistence implicitly by keeping the socket open.
Teacher failures raise TeacherError subclasses; the distillation
scheduler treats any of them as "skip this sample".
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .imaging import AlphaMatte, Frame, resize_bilinear_alpha

MAGIC = b"JITM"
VERSION = 1
_REQ_HEADER = struct.Struct(">4sBHHI")
_RESP_HEADER = struct.Struct(">4sBI")


class TeacherError(Exception):
    """Base class for anything that makes a teacher sample unusable."""


class TeacherConnectError(TeacherError):
    pass


class TeacherTimeoutError(TeacherError):
    pass


class WireFormatError(TeacherError):
    """Base for malformed protocol traffic."""


class WireMagicError(WireFormatError):
    pass


class WireVersionError(WireFormatError):
    pass


class WireSeqMismatchError(WireFormatError):
    pass


class WireShortReadError(WireFormatError):
    pass


class MissingGroundTruthError(TeacherError, KeyError):
    pass


@dataclass(frozen=True)
class TeacherLabel:
    """A teacher-produced matte for the frame identified by source_seq."""

    matte: AlphaMatte
    source_seq: int
    produced_at: float


# --- wire encode/decode ------------------------------------------------------

def encode_request(frame: Frame) -> bytes:
    header = _REQ_HEADER.pack(MAGIC, VERSION, frame.width, frame.height, frame.seq)
    return header + frame.pixels.tobytes()


def decode_request(buf: bytes) -> tuple[int, int, int, np.ndarray]:
    """Server side: returns (width, height, seq, uint8 (h, w, 3) pixels)."""
    if len(buf) < _REQ_HEADER.size:
        raise WireShortReadError(f"request header needs {_REQ_HEADER.size} bytes, got {len(buf)}")
    magic, version, width, height, seq = _REQ_HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise WireMagicError(f"bad request magic {magic!r}")
    if version != VERSION:
        raise WireVersionError(f"unsupported protocol version {version}")
    need = width * height * 3
    payload = buf[_REQ_HEADER.size :]
    if len(payload) < need:
        raise WireShortReadError(f"request payload needs {need} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width, 3)
    return width, height, seq, pixels


def encode_response(seq: int, matte: AlphaMatte) -> bytes:
    header = _RESP_HEADER.pack(MAGIC, VERSION, seq)
    raw = np.floor(matte.values.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    return header + raw.tobytes()


def decode_response(buf: bytes, expected_seq: int, width: int, height: int) -> AlphaMatte:
    """Client side: validates every header field and the payload length."""
    if len(buf) < _RESP_HEADER.size:
        raise WireShortReadError(f"response header needs {_RESP_HEADER.size} bytes, got {len(buf)}")
    magic, version, seq = _RESP_HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise WireMagicError(f"bad response magic {magic!r}")
    if version != VERSION:
        raise WireVersionError(f"unsupported protocol version {version}")
    if seq != expected_seq:
        raise WireSeqMismatchError(f"response seq {seq} does not match request seq {expected_seq}")
    need = width * height
    payload = buf[_RESP_HEADER.size :]
    if len(payload) < need:
        raise WireShortReadError(f"response payload needs {need} bytes, got {len(payload)}")
    values = np.frombuffer(payload[:need], dtype=np.uint8).reshape(height, width)
    return AlphaMatte(width, height, values.astype(np.float32) / 255.0)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks: list[bytes] = []
    got = 0
    while got < n:
        try:
            chunk = sock.recv(n - got)
        except socket.timeout as exc:
            raise TeacherTimeoutError(f"timed out waiting for {n - got} more bytes") from exc
        if not chunk:
            raise WireShortReadError(f"connection closed with {n - got} bytes outstanding")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


# --- label-noise morphology (4-connected) ------------------------------------

def dilate4(bits: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a plus-shaped structuring element, radius steps."""
    out = np.asarray(bits, dtype=bool).copy()
    for _ in range(radius):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def erode4(bits: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion, 4-connected; pixels outside the frame count as empty."""
    out = np.asarray(bits, dtype=bool).copy()
    for _ in range(radius):
        kept = out.copy()
        kept[1:, :] &= out[:-1, :]
        kept[:-1, :] &= out[1:, :]
        kept[:, 1:] &= out[:, :-1]
        kept[:, :-1] &= out[:, 1:]
        kept[0, :] = False
        kept[-1, :] = False
        kept[:, 0] = False
        kept[:, -1] = False
        out = kept
    return out


@dataclass(frozen=True)
class LabelNoise:
    """Morphological corruption applied to oracle labels."""

    mode: str  # "dilate" or "erode"
    radius: int

    def apply(self, matte: AlphaMatte) -> AlphaMatte:
        bits = matte.values >= 0.5
        if self.mode == "dilate":
            bits = dilate4(bits, self.radius)
        elif self.mode == "erode":
            bits = erode4(bits, self.radius)
        else:
            raise ValueError(f"unknown noise mode {self.mode!r}")
        return AlphaMatte(matte.width, matte.height, bits.astype(np.float32))


# --- teachers ----------------------------------------------------------------

class OracleTeacher:
    """Ground-truth lookup with simulated latency and optional label noise.

    The store maps frame seq to an AlphaMatte. out_size, when given as
    (width, height), resizes labels to the student's working resolution;
    otherwise labels are returned exactly as stored.
    """

    DEFAULT_LATENCY_MS = 91.0

    def __init__(
        self,
        store: Mapping[int, AlphaMatte],
        latency_ms: float = DEFAULT_LATENCY_MS,
        noise: LabelNoise | None = None,
        out_size: tuple[int, int] | None = None,
    ):
        self.store = store
        self.latency_ms = latency_ms
        self.noise = noise
        self.out_size = out_size

    def __call__(self, frame: Frame) -> TeacherLabel:
        try:
            matte = self.store[frame.seq]
        except KeyError as exc:
            raise MissingGroundTruthError(f"no ground truth for seq {frame.seq}") from exc
        if self.latency_ms > 0:
            time.sleep(self.latency_ms / 1000.0)
        if self.noise is not None:
            matte = self.noise.apply(matte)
        if self.out_size is not None and (matte.width, matte.height) != self.out_size:
            matte = resize_bilinear_alpha(matte, *self.out_size)
        return TeacherLabel(matte=matte, source_seq=frame.seq, produced_at=time.monotonic())


def oracle_teacher(
    frame: Frame,
    ground_truth_store: Mapping[int, AlphaMatte],
    latency_ms: float = OracleTeacher.DEFAULT_LATENCY_MS,
    noise: LabelNoise | None = None,
) -> TeacherLabel:
    """One-shot functional form of OracleTeacher."""
    return OracleTeacher(ground_truth_store, latency_ms=latency_ms, noise=noise)(frame)


class RemoteTeacher:
    """TCP client for the JITM v1 protocol.

    Reuses one connection when the server keeps it open; when the server
    closes after a response (one-shot mode), the next request reconnects.
    A retry happens only if the connection died before any response bytes
    arrived, so a request is never answered twice.
    """

    def __init__(
        self,
        host: str,
        port: int,
        timeout: float = 5.0,
        out_size: tuple[int, int] | None = None,
    ):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.out_size = out_size
        self._sock: socket.socket | None = None

    def _connect(self) -> socket.socket:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise TeacherConnectError(f"cannot reach {self.host}:{self.port}: {exc}") from exc
        sock.settimeout(self.timeout)
        return sock

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def close(self) -> None:
        self._drop()

    def _round_trip(self, request: bytes, frame: Frame) -> AlphaMatte:
        assert self._sock is not None
        sock = self._sock
        sock.sendall(request)
        raw = _recv_exact(sock, _RESP_HEADER.size + frame.width * frame.height)
        return decode_response(raw, frame.seq, frame.width, frame.height)

    def __call__(self, frame: Frame) -> TeacherLabel:
        request = encode_request(frame)
        fresh = self._sock is None
        if fresh:
            self._sock = self._connect()
        try:
            matte = self._round_trip(request, frame)
        except (BrokenPipeError, ConnectionError, WireShortReadError):
            # stale persistent connection; safe to retry once on a new socket
            self._drop()
            if fresh:
                raise
            self._sock = self._connect()
            try:
                matte = self._round_trip(request, frame)
            except (ConnectionError, OSError) as exc:
                self._drop()
                raise TeacherConnectError(f"retry failed: {exc}") from exc
        except socket.timeout as exc:
            self._drop()
            raise TeacherTimeoutError(str(exc)) from exc
        except OSError as exc:
            self._drop()
            raise TeacherConnectError(str(exc)) from exc
        if self.out_size is not None and (matte.width, matte.height) != self.out_size:
            matte = resize_bilinear_alpha(matte, *self.out_size)
        return TeacherLabel(matte=matte, source_seq=frame.seq, produced_at=time.monotonic())


def remote_teacher_request(
    frame: Frame, endpoint: str, timeout: float = 5.0
) -> TeacherLabel:
    """One-shot request against "host:port"."""
    host, _, port = endpoint.rpartition(":")
    client = RemoteTeacher(host, int(port), timeout=timeout)
    try:
        return client(frame)
    finally:
        client.close()


# --- reference echo server ----------------------------------------------------

def green_mask(pixels: np.ndarray) -> AlphaMatte:
    """Reference segmentation: strictly green-dominant pixels are foreground."""
    px = np.asarray(pixels, dtype=np.int16)
    fg = (px[:, :, 1] > px[:, :, 0]) & (px[:, :, 1] > px[:, :, 2])
    return AlphaMatte(px.shape[1], px.shape[0], fg.astype(np.float32))


class EchoTeacherServer:
    """Reference JITM v1 server for protocol tests and `serve-echo`.

    Answers each request with segmenter(pixels); close_after_one makes it
    drop the connection after a single response, exercising the client's
    one-shot mode. Malformed requests close the connection.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        segmenter: Callable[[np.ndarray], AlphaMatte] = green_mask,
        close_after_one: bool = False,
    ):
        self.segmenter = segmenter
        self.close_after_one = close_after_one
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(8)
        self.host, self.port = self._listener.getsockname()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._accept_thread: threading.Thread | None = None

    def start(self) -> "EchoTeacherServer":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, conn: socket.socket) -> None:
        conn.settimeout(10.0)
        try:
            while not self._stop.is_set():
                try:
                    header = _recv_exact(conn, _REQ_HEADER.size)
                except (WireShortReadError, TeacherTimeoutError):
                    return
                magic, version, width, height, seq = _REQ_HEADER.unpack_from(header)
                if magic != MAGIC or version != VERSION or width == 0 or height == 0:
                    return  # malformed: close the connection
                payload = _recv_exact(conn, width * height * 3)
                pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
                matte = self.segmenter(pixels)
                conn.sendall(encode_response(seq, matte))
                if self.close_after_one:
                    return
        except (WireShortReadError, TeacherTimeoutError, OSError):
            return
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)

    def __enter__(self) -> "EchoTeacherServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_echo(host: str, port: int) -> None:
    """Run the reference echo server until interrupted (CLI entry point)."""
    server = EchoTeacherServer(host, port).start()
    print(f"echo teacher listening on {server.host}:{server.port}", flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
