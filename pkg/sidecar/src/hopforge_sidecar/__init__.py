"""Reference inference service for the hopforge model-gateway wire protocol."""

from .app import create_app
from .config import ServiceConfig
from .selfcheck import HttpTransport, run_selfcheck

__version__ = "0.1.0"

__all__ = ["ServiceConfig", "create_app", "run_selfcheck", "HttpTransport"]
