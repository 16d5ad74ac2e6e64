"""Plain-text dense matrix files.

Format::

    n m real|complex
    a11 a12 ... (row-major, whitespace separated)

Complex entries are written as two tokens ``re im``.  Floats use ``%.17g``
so that write-then-read is the identity.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import MatrixFormatError
from .model import OperatorModel, build_from_matrix

__all__ = ["read_matrix", "write_matrix", "matrix_roundtrip", "format_float"]


def format_float(x) -> str:
    return "%.17g" % float(x)


def write_matrix(path, matrix) -> None:
    a = np.asarray(matrix)
    if a.ndim != 2:
        raise MatrixFormatError(f"expected a 2-D array, got shape {a.shape}")
    kind = "complex" if np.iscomplexobj(a) else "real"
    lines = [f"{a.shape[0]} {a.shape[1]} {kind}"]
    for row in a:
        if kind == "complex":
            toks = [f"{format_float(z.real)} {format_float(z.imag)}" for z in row]
        else:
            toks = [format_float(z) for z in row]
        lines.append(" ".join(toks))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise MatrixFormatError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 3 or header[2] not in ("real", "complex"):
        raise MatrixFormatError(f"{path}: malformed header {lines[0]!r}, expected 'n m real|complex'")
    try:
        n, m = int(header[0]), int(header[1])
    except ValueError:
        raise MatrixFormatError(f"{path}: malformed header {lines[0]!r}, sizes must be integers") from None
    if n <= 0 or m <= 0:
        raise MatrixFormatError(f"{path}: sizes must be positive")
    tokens = " ".join(lines[1:]).split()
    per = 2 if header[2] == "complex" else 1
    expected = n * m * per
    if len(tokens) != expected:
        raise MatrixFormatError(f"{path}: expected {expected} numeric tokens, found {len(tokens)}")
    try:
        vals = np.array([float(t) for t in tokens])
    except ValueError as exc:
        raise MatrixFormatError(f"{path}: non-numeric token ({exc})") from None
    if per == 2:
        vals = vals[0::2] + 1j * vals[1::2]
    return vals.reshape(n, m)


def matrix_roundtrip(path, weights=None, mask=None, label=None) -> OperatorModel:
    """Read a generator file into a validated model."""
    return build_from_matrix(read_matrix(path), weights=weights, mask=mask, label=label or Path(path).name)
