import socket
import struct
import threading

import numpy as np
import pytest

from teacher_service.config import ServiceConfig
from teacher_service.server import TeacherService

REQ = struct.Struct(">4sBHHI")
RESP = struct.Struct(">4sBI")


@pytest.fixture()
def service():
    svc = TeacherService(ServiceConfig(port=0)).start()
    yield svc
    svc.stop()


def recv_exact(sock, n):
    out = b""
    while len(out) < n:
        chunk = sock.recv(n - len(out))
        if not chunk:
            return out
        out += chunk
    return out


def subject_image(w=48, h=36):
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = (30, 45, 70)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = ((xx - w / 2) / (0.2 * h)) ** 2 + ((yy - h / 2) / (0.3 * h)) ** 2 <= 1.0
    img[mask] = (225, 70, 50)
    return img


def request_bytes(img, seq):
    h, w, _ = img.shape
    return REQ.pack(b"JITM", 1, w, h, seq) + img.tobytes()


class TestService:
    def test_seq_echo_and_payload_length(self, service):
        img = subject_image()
        with socket.create_connection((service.host, service.port), timeout=5) as sock:
            sock.sendall(request_bytes(img, 42))
            raw = recv_exact(sock, RESP.size + img.shape[0] * img.shape[1])
        magic, version, seq = RESP.unpack_from(raw)
        assert magic == b"JITM" and version == 1 and seq == 42
        assert len(raw) - RESP.size == img.shape[0] * img.shape[1]

    def test_blank_image_near_empty_mask(self, service):
        img = np.full((36, 48, 3), (40, 60, 90), dtype=np.uint8)
        with socket.create_connection((service.host, service.port), timeout=5) as sock:
            sock.sendall(request_bytes(img, 7))
            raw = recv_exact(sock, RESP.size + 36 * 48)
        alpha = np.frombuffer(raw[RESP.size :], dtype=np.uint8)
        assert (alpha >= 128).mean() < 0.05

    def test_subject_makes_nonempty_mask(self, service):
        img = subject_image()
        with socket.create_connection((service.host, service.port), timeout=5) as sock:
            sock.sendall(request_bytes(img, 9))
            raw = recv_exact(sock, RESP.size + img.shape[0] * img.shape[1])
        alpha = np.frombuffer(raw[RESP.size :], dtype=np.uint8)
        assert (alpha >= 128).mean() > 0.05

    def test_persistent_connection_sequential_requests(self, service):
        img = subject_image(24, 20)
        with socket.create_connection((service.host, service.port), timeout=5) as sock:
            for seq in (1, 2, 3, 4):
                sock.sendall(request_bytes(img, seq))
                raw = recv_exact(sock, RESP.size + 24 * 20)
                assert RESP.unpack_from(raw)[2] == seq

    @staticmethod
    def assert_closed_without_reply(sock):
        # a close may surface as EOF or, with unread bytes pending, as a reset
        try:
            assert recv_exact(sock, 16) == b""
        except ConnectionResetError:
            pass

    def test_bad_magic_closes_connection(self, service):
        with socket.create_connection((service.host, service.port), timeout=5) as sock:
            sock.sendall(b"BAD!" + bytes(REQ.size - 4) + bytes(12))
            self.assert_closed_without_reply(sock)

    def test_bad_version_closes_connection(self, service):
        img = subject_image(4, 4)
        buf = bytearray(request_bytes(img, 1))
        buf[4] = 0x7F
        with socket.create_connection((service.host, service.port), timeout=5) as sock:
            sock.sendall(bytes(buf))
            self.assert_closed_without_reply(sock)

    def test_concurrent_connections(self, service):
        img = subject_image(32, 24)
        results = []
        lock = threading.Lock()

        def one(seq):
            with socket.create_connection((service.host, service.port), timeout=5) as sock:
                sock.sendall(request_bytes(img, seq))
                raw = recv_exact(sock, RESP.size + 32 * 24)
                with lock:
                    results.append(RESP.unpack_from(raw)[2])

        threads = [threading.Thread(target=one, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(results) == list(range(6))
