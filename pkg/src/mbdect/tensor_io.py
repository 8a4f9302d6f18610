"""Binary float64 array files and small numeric CSV tables.

File layout (all little-endian)::

    b"DECT" | u32 version | u32 ndim | ndim * u32 dims | float64 payload (row-major)
"""
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DECT"
FORMAT_VERSION = 1
MAX_ELEMENTS = 2**28


class ArrayFormatError(ValueError):
    """Raised for malformed array files. ``code`` is one of
    ``bad_magic``, ``version``, ``bad_header``, ``too_large``, ``truncated``."""

    def __init__(self, code, path, detail=""):
        self.code = code
        self.path = str(path)
        super().__init__(f"{self.path}: {code}" + (f" ({detail})" if detail else ""))


class CsvParseError(ValueError):
    def __init__(self, path, line, detail):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {detail}")


def write_array(path, a):
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim == 0:
        a = a.reshape(1)
    header = MAGIC + struct.pack(f"<II{a.ndim}I", FORMAT_VERSION, a.ndim, *a.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(a.tobytes(order="C"))
    except OSError as exc:
        raise OSError(f"cannot write array to {path}: {exc}") from exc


def read_array(path, max_elements=MAX_ELEMENTS):
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise ArrayFormatError("bad_magic", path)
    if len(raw) < 12:
        raise ArrayFormatError("truncated", path, "header")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ArrayFormatError("version", path, f"got {version}, expected {FORMAT_VERSION}")
    if ndim == 0 or ndim > 32:
        raise ArrayFormatError("bad_header", path, f"ndim={ndim}")
    off = 12 + 4 * ndim
    if len(raw) < off:
        raise ArrayFormatError("truncated", path, "dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    if any(d == 0 for d in dims):
        raise ArrayFormatError("bad_header", path, f"zero extent in {dims}")
    count = 1
    for d in dims:
        count *= d  # python ints: no overflow
    if count > max_elements:
        raise ArrayFormatError("too_large", path, f"{count} elements > cap {max_elements}")
    if len(raw) - off != 8 * count:
        raise ArrayFormatError("truncated", path, f"payload {len(raw) - off} bytes, expected {8 * count}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
    return data.astype(np.float64).reshape(dims)


def read_csv_table(path, expected_columns):
    """Parse comma-separated numbers into a (rows, expected_columns) array.

    Blank lines and lines starting with ``#`` are skipped.
    """
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = line.split(",")
        if len(cells) != expected_columns:
            raise CsvParseError(path, lineno, f"expected {expected_columns} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise CsvParseError(path, lineno, f"non-numeric cell in {line!r}") from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), expected_columns)
