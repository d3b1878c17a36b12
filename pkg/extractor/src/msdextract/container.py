"""Standalone MSDE container writer.

The binary layout is the sole contract shared with the scoring engine;
this module reimplements it from the documented format rather than
importing the engine (all little-endian):

  bytes 0-3   magic "MSDE"
  bytes 4-7   uint32 version (=1)
  bytes 8-11  uint32 dim
  bytes 12-15 uint32 count
  byte  16    uint8 modality (0=image, 1=text)
  bytes 17-18 uint16 grid_rows
  bytes 19-20 uint16 grid_cols
  payload     count*dim float32, row-major
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MSDE"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBHH")

MODALITY_IMAGE = 0
MODALITY_TEXT = 1

UNIT_NORM_TOL = 1e-4


class ContainerWriteError(ValueError):
    """Rows violate the container contract (shape or unit norm)."""


def write_container(
    rows: np.ndarray,
    modality: int,
    path,
    grid: tuple[int, int] | None = None,
) -> None:
    """Validate rows and write them as an MSDE container.

    Rows must be unit-norm within 1e-4 before float32 quantization.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 2:
        raise ContainerWriteError(f"need a (count>=1, dim>=2) matrix, got {rows.shape}")
    norms = np.linalg.norm(rows, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
    if bad.size:
        raise ContainerWriteError(
            f"row {bad[0]} has norm {norms[bad[0]]:.6f}, outside 1 +/- {UNIT_NORM_TOL}"
        )
    if modality not in (MODALITY_IMAGE, MODALITY_TEXT):
        raise ContainerWriteError(f"unknown modality {modality}")
    rows_g, cols_g = grid if grid is not None else (0, 0)
    if grid is not None and rows_g * cols_g != rows.shape[0]:
        raise ContainerWriteError(
            f"grid {rows_g}x{cols_g} does not tile {rows.shape[0]} rows"
        )
    header = _HEADER.pack(
        MAGIC, VERSION, rows.shape[1], rows.shape[0], modality, rows_g, cols_g
    )
    _atomic_write_bytes(path, header + rows.astype("<f4").tobytes())


def _atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
