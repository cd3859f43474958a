"""CLI: python -m teacher_service --host 0.0.0.0 --port 7461 --model saliency"""

from __future__ import annotations

import argparse
import sys

from .config import ServiceConfig
from .models import ModelUnavailableError
from .server import TeacherService


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="teacher-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=7461)
    parser.add_argument("--model", default="saliency", help="saliency | torchvision:maskrcnn")
    parser.add_argument("--max-connections", type=int, default=8)
    args = parser.parse_args(argv)
    config = ServiceConfig(
        host=args.host, port=args.port, model=args.model, max_connections=args.max_connections
    )
    try:
        service = TeacherService(config)
    except (ModelUnavailableError, OSError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    print(f"teacher service ({config.model}) listening on {service.host}:{service.port}", flush=True)
    service.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
