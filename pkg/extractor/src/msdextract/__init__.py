"""Offline embedding extraction into MSDE containers."""
from .container import (
    MODALITY_IMAGE,
    MODALITY_TEXT,
    ContainerWriteError,
    write_container,
)
from .encoders import ClipEncoder, HashedEncoder, build_encoder, tokenize
from .extract import ExtractJob, emit_manifest, extract_image, extract_text

__version__ = "0.1.0"

__all__ = [
    "MODALITY_IMAGE",
    "MODALITY_TEXT",
    "ContainerWriteError",
    "write_container",
    "ClipEncoder",
    "HashedEncoder",
    "build_encoder",
    "tokenize",
    "ExtractJob",
    "emit_manifest",
    "extract_image",
    "extract_text",
]
