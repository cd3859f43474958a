"""Server-side JITM v1 wire handling.

Request:  "JITM" | 0x01 | width u16 BE | height u16 BE | seq u32 BE | w*h*3 RGB
Response: "JITM" | 0x01 | seq u32 BE | w*h alpha bytes

Every well-formed request gets exactly one same-seq response; anything
malformed closes the connection.
"""

from __future__ import annotations

import socket
import struct

import numpy as np

MAGIC = b"JITM"
VERSION = 1
REQUEST_HEADER = struct.Struct(">4sBHHI")
RESPONSE_HEADER = struct.Struct(">4sBI")


class ProtocolViolation(Exception):
    """Request bytes that do not follow JITM v1; the connection must close."""


class ConnectionClosed(Exception):
    """Peer went away cleanly between requests."""


def recv_exact(conn: socket.socket, n: int, *, at_message_start: bool = False) -> bytes:
    chunks: list[bytes] = []
    got = 0
    while got < n:
        data = conn.recv(n - got)
        if not data:
            if got == 0 and at_message_start:
                raise ConnectionClosed()
            raise ProtocolViolation(f"stream ended with {n - got} bytes missing")
        chunks.append(data)
        got += len(data)
    return b"".join(chunks)


def read_request(conn: socket.socket) -> tuple[int, np.ndarray]:
    """Blocks for one request; returns (seq, uint8 (h, w, 3) image)."""
    header = recv_exact(conn, REQUEST_HEADER.size, at_message_start=True)
    magic, version, width, height, seq = REQUEST_HEADER.unpack(header)
    if magic != MAGIC:
        raise ProtocolViolation(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolViolation(f"unsupported version {version}")
    if width == 0 or height == 0:
        raise ProtocolViolation(f"degenerate dimensions {width}x{height}")
    payload = recv_exact(conn, width * height * 3)
    image = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return seq, image


def write_response(conn: socket.socket, seq: int, alpha: np.ndarray) -> None:
    """Sends one response; alpha must be uint8 (h, w)."""
    if alpha.dtype != np.uint8 or alpha.ndim != 2:
        raise ValueError(f"alpha must be uint8 (h, w), got {alpha.dtype} {alpha.shape}")
    conn.sendall(RESPONSE_HEADER.pack(MAGIC, VERSION, seq) + alpha.tobytes())
