"""Row-block storage for tall p x n matrices.

On-disk layout (all little-endian)::

    offset  size  field
    0       4     magic  b"BPCA"
    4       4     version (u32) = 1
    8       8     p (u64)
    16      8     n (u64)
    24      8     block_rows (u64)
    32      1     element_type (u8), 0 = float64
    33      1     layout (u8), 0 = row-major within block
    34      6     zero padding
    40      ...   payload: blocks in row order, p * n float64 values

Because blocks are row-major and stored contiguously in row order, the
payload is simply the row-major p x n matrix; ``block_rows`` only records
the preferred streaming granularity.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

MAGIC = b"BPCA"
VERSION = 1
HEADER = struct.Struct("<4sIQQQBB6x")
HEADER_SIZE = HEADER.size
BLOCK_BYTES = 2**28
_F8 = np.dtype("<f8")


class MatrixFormatError(ValueError):
    """Raised for malformed matrix files or inputs."""


def default_block_rows(p: int, n: int) -> int:
    """Rows per block so that a block stays under 256 MiB."""
    return max(1, min(p, BLOCK_BYTES // (8 * max(n, 1))))


@dataclass(frozen=True)
class MatrixHeader:
    p: int
    n: int
    block_rows: int
    magic: bytes = MAGIC
    version: int = VERSION
    element_type: int = 0
    layout: int = 0

    def pack(self) -> bytes:
        return HEADER.pack(self.magic, self.version, self.p, self.n,
                           self.block_rows, self.element_type, self.layout)

    @classmethod
    def unpack(cls, raw: bytes) -> "MatrixHeader":
        if len(raw) < HEADER_SIZE:
            raise MatrixFormatError("truncated header")
        magic, version, p, n, block_rows, etype, layout = HEADER.unpack(raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise MatrixFormatError("bad magic")
        if version != VERSION:
            raise MatrixFormatError(f"unsupported version {version}")
        if etype != 0 or layout != 0:
            raise MatrixFormatError("unsupported element type or layout")
        if p < 1 or n < 1 or not 1 <= block_rows <= p:
            raise MatrixFormatError(f"invalid dimensions p={p} n={n} block_rows={block_rows}")
        return cls(p=p, n=n, block_rows=block_rows)

    @property
    def payload_bytes(self) -> int:
        return self.p * self.n * 8


def _check_finite(arr: np.ndarray, where: str = "") -> None:
    if not np.all(np.isfinite(arr)):
        raise MatrixFormatError(f"non-finite element{where}")


class TallMatrix:
    """A p x n float64 matrix accessed as a sequence of row blocks.

    The backing store is either an in-memory array or a memory-mapped file;
    in both cases :meth:`blocks` yields ``(start_row, block)`` pairs in
    ascending row order. ``block_reads`` counts blocks handed out, which
    lets callers check how often a large operand is actually streamed.
    """

    def __init__(self, data: np.ndarray, block_rows: int | None = None, *,
                 path: str | os.PathLike | None = None, checked: bool = True):
        if data.ndim != 2:
            raise MatrixFormatError("matrix must be two-dimensional")
        p, n = data.shape
        if p < 1 or n < 1:
            raise MatrixFormatError("matrix must have at least one row and column")
        if block_rows is None:
            block_rows = default_block_rows(p, n)
        if not 1 <= block_rows <= p:
            raise MatrixFormatError(f"block_rows must be in [1, {p}], got {block_rows}")
        self._data = data
        self.block_rows = int(block_rows)
        self.path = path
        self._checked = checked
        self.block_reads = 0
        if checked and not isinstance(data, np.memmap):
            _check_finite(data)

    @classmethod
    def from_array(cls, arr, block_rows: int | None = None) -> "TallMatrix":
        arr = np.array(arr, dtype=np.float64, copy=True, ndmin=2)
        return cls(arr, block_rows)

    @property
    def p(self) -> int:
        return self._data.shape[0]

    @property
    def n(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    @property
    def num_blocks(self) -> int:
        return -(-self.p // self.block_rows)

    def block_bounds(self, block_rows: int | None = None) -> list[tuple[int, int]]:
        step = block_rows or self.block_rows
        return [(s, min(s + step, self.p)) for s in range(0, self.p, step)]

    def read_block(self, start: int, stop: int) -> np.ndarray:
        block = np.asarray(self._data[start:stop], dtype=np.float64)
        if not self._checked:
            _check_finite(block, f" in rows {start}..{stop - 1}")
        self.block_reads += 1
        return block

    def blocks(self, block_rows: int | None = None) -> Iterator[tuple[int, np.ndarray]]:
        for start, stop in self.block_bounds(block_rows):
            yield start, self.read_block(start, stop)

    def to_array(self) -> np.ndarray:
        out = np.empty(self.shape)
        for start, block in self.blocks():
            out[start:start + block.shape[0]] = block
        return out

    def with_block_rows(self, block_rows: int) -> "TallMatrix":
        return TallMatrix(self._data, block_rows, path=self.path, checked=self._checked)

    def __repr__(self) -> str:
        where = f", path={str(self.path)!r}" if self.path else ""
        return f"TallMatrix(p={self.p}, n={self.n}, block_rows={self.block_rows}{where})"


class MatrixWriter:
    """Streams row blocks of a p x n matrix into a file.

    >>> with MatrixWriter(path, p, n, block_rows) as w:   # doctest: +SKIP
    ...     for block in blocks:
    ...         w.write(block)
    """

    def __init__(self, path, p: int, n: int, block_rows: int | None = None):
        self.path = path
        self.header = MatrixHeader(p=p, n=n, block_rows=block_rows or default_block_rows(p, n))
        MatrixHeader.unpack(self.header.pack())
        self.rows_written = 0
        self._fh = None

    def __enter__(self) -> "MatrixWriter":
        self._fh = open(self.path, "wb")
        self._fh.write(self.header.pack())
        return self

    def write(self, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=np.float64)
        if block.ndim != 2 or block.shape[1] != self.header.n:
            raise MatrixFormatError(f"block shape {block.shape} does not match n={self.header.n}")
        if self.rows_written + block.shape[0] > self.header.p:
            raise MatrixFormatError("more rows written than declared")
        _check_finite(block)
        self._fh.write(np.ascontiguousarray(block, dtype=_F8).tobytes())
        self.rows_written += block.shape[0]

    def __exit__(self, exc_type, exc, tb) -> None:
        self._fh.close()
        if exc_type is None and self.rows_written != self.header.p:
            raise MatrixFormatError(
                f"wrote {self.rows_written} rows, header declares {self.header.p}")


def write_matrix(m: TallMatrix | np.ndarray, path) -> None:
    """Write ``m`` in the binary block format."""
    if not isinstance(m, TallMatrix):
        m = TallMatrix.from_array(m)
    with MatrixWriter(path, m.p, m.n, m.block_rows) as w:
        for _, block in m.blocks():
            w.write(block)


def read_header(path) -> MatrixHeader:
    with open(path, "rb") as fh:
        return MatrixHeader.unpack(fh.read(HEADER_SIZE))


def read_matrix(path, lazy: bool = False) -> TallMatrix:
    """Open a matrix file.

    With ``lazy=True`` the payload is memory-mapped and validated block by
    block as it is read; otherwise it is loaded and validated up front.
    """
    header = read_header(path)
    size = os.path.getsize(path)
    if size - HEADER_SIZE < header.payload_bytes:
        raise MatrixFormatError(
            f"truncated payload: expected {header.payload_bytes} bytes, "
            f"found {size - HEADER_SIZE}")
    if lazy:
        data = np.memmap(path, dtype=_F8, mode="r", offset=HEADER_SIZE,
                         shape=(header.p, header.n))
        return TallMatrix(data, header.block_rows, path=path, checked=False)
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        data = np.frombuffer(fh.read(header.payload_bytes), dtype=_F8)
    data = data.astype(np.float64).reshape(header.p, header.n)
    return TallMatrix(data, header.block_rows, path=path)


def import_csv(path, orientation: str = "subjects-as-columns",
               block_rows: int | None = None, skip_header: bool = False) -> TallMatrix:
    """Parse a rectangular numeric CSV into a TallMatrix.

    ``orientation="subjects-as-rows"`` transposes so that subjects always
    end up as columns.
    """
    if orientation not in ("subjects-as-columns", "subjects-as-rows"):
        raise ValueError(f"unknown orientation {orientation!r}")
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if skip_header and lineno == 1:
                continue
            if not record or all(not c.strip() for c in record):
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise MatrixFormatError(
                    f"ragged row on line {lineno}: {len(record)} fields, expected {width}")
            try:
                values = [float(c) for c in record]
            except ValueError as err:
                raise MatrixFormatError(f"unparseable cell on line {lineno}: {err}") from None
            rows.append(values)
    if not rows:
        raise MatrixFormatError("empty file")
    arr = np.array(rows, dtype=np.float64)
    _check_finite(arr)
    if orientation == "subjects-as-rows":
        arr = arr.T.copy()
    return TallMatrix(arr, block_rows)


def export_csv(m: TallMatrix | np.ndarray, path) -> None:
    """Write a matrix as CSV with 17 significant digits (round-trip exact)."""
    if not isinstance(m, TallMatrix):
        m = TallMatrix.from_array(m)
    with open(path, "w") as fh:
        for _, block in m.blocks():
            np.savetxt(fh, block, delimiter=",", fmt="%.17g")


def write_vector(vec, path) -> None:
    vec = np.ascontiguousarray(vec, dtype=_F8).ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", vec.size))
        fh.write(vec.tobytes())


def read_vector(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise MatrixFormatError("truncated vector file")
    (length,) = struct.unpack("<Q", raw[:8])
    if len(raw) - 8 < 8 * length:
        raise MatrixFormatError("truncated vector payload")
    return np.frombuffer(raw[8:8 + 8 * length], dtype=_F8).astype(np.float64)


def pack_matrix(arr: np.ndarray) -> bytes:
    """Serialise a small in-memory matrix (header + payload) to bytes."""
    arr = np.ascontiguousarray(arr, dtype=_F8)
    _check_finite(arr)
    header = MatrixHeader(p=arr.shape[0], n=arr.shape[1], block_rows=arr.shape[0])
    return header.pack() + arr.tobytes()


def unpack_matrix(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Inverse of :func:`pack_matrix`; returns the matrix and the next offset."""
    header = MatrixHeader.unpack(buf[offset:offset + HEADER_SIZE])
    start = offset + HEADER_SIZE
    stop = start + header.payload_bytes
    if stop > len(buf):
        raise MatrixFormatError("truncated payload")
    arr = np.frombuffer(buf[start:stop], dtype=_F8).astype(np.float64)
    return arr.reshape(header.p, header.n), stop
