"""Embedding sidecar service."""

from .app import create_app
from .encoders import HashedEncoder, build_encoder

__all__ = ["create_app", "build_encoder", "HashedEncoder"]
