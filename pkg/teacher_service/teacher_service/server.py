"""Threaded TCP server answering JITM v1 segmentation requests.

Connections are handled independently, one request in flight per
connection; a semaphore caps concurrency. Well-formed requests always
get a same-seq response; malformed traffic closes the connection.
"""

from __future__ import annotations

import socket
import threading

from .config import ServiceConfig
from .models import build_model
from .protocol import ConnectionClosed, ProtocolViolation, read_request, write_response


class TeacherService:
    def __init__(self, config: ServiceConfig, model=None):
        self.config = config
        self.model = model if model is not None else build_model(config.model)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((config.host, config.port))
        self._listener.listen(config.max_connections)
        self.host, self.port = self._listener.getsockname()
        self._slots = threading.Semaphore(config.max_connections)
        self._stop = threading.Event()
        self._accept_thread: threading.Thread | None = None

    def start(self) -> "TeacherService":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.wait(timeout=0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            self._slots.acquire()
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        conn.settimeout(30.0)
        try:
            while not self._stop.is_set():
                try:
                    seq, image = read_request(conn)
                except (ConnectionClosed, ProtocolViolation, socket.timeout, OSError):
                    return
                alpha = self.model(image)
                if alpha.shape != image.shape[:2]:
                    return  # model contract violation: fail closed
                try:
                    write_response(conn, seq, alpha)
                except OSError:
                    return
        finally:
            try:
                conn.close()
            except OSError:
                pass
            self._slots.release()

    def __enter__(self) -> "TeacherService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(config: ServiceConfig) -> None:
    """Run until interrupted; raises on startup errors (e.g. model load)."""
    TeacherService(config).serve_forever()
