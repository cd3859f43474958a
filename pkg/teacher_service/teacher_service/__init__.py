"""Remote teacher endpoint: JITM v1 over TCP wrapping a segmentation model."""

from .config import ServiceConfig
from .server import TeacherService, serve

__all__ = ["ServiceConfig", "TeacherService", "serve"]
