"""On-disk formats.

- ``.dtb``: dense binary, magic ``DTB1``, little-endian u32 order N, N u64
  mode sizes, then the flat float64 values first-index-fastest.
- ``.ttb``: TT container, magic ``TTB1``, u32 N, N+1 u64 ranks
  (R_0..R_N), N u64 mode sizes, then each core's float64 values in the same
  flat order.
- ``.tns``: sparse coordinate text (FROSTT style): per line, N 1-based
  coordinates and one value, whitespace separated; ``#`` starts a comment.
  Mode sizes come from an explicit argument, a ``# dims: I1 ... IN`` comment
  header, or default to the per-mode coordinate maxima.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensors import DenseTensor, SparseTensor, check_dims
from .ttcore import TTTensor

_DTB_MAGIC = b"DTB1"
_TTB_MAGIC = b"TTB1"


class FormatError(ValueError):
    """Malformed input file."""


def write_dtb(x: DenseTensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_DTB_MAGIC)
        fh.write(struct.pack("<I", x.ndim))
        fh.write(np.asarray(x.dims, dtype="<u8").tobytes())
        fh.write(x.flat.astype("<f8").tobytes())


def read_dtb(path) -> DenseTensor:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DTB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_DTB_MAGIC!r}")
        (order,) = struct.unpack("<I", fh.read(4))
        dims = np.frombuffer(fh.read(8 * order), dtype="<u8").astype(np.int64)
        dims = check_dims(dims)
        total = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(fh.read(8 * total), dtype="<f8")
        if values.size != total:
            raise FormatError(f"{path}: truncated value section")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after value section")
        return DenseTensor.from_flat(values, dims)


def write_ttb(tt: TTTensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_TTB_MAGIC)
        fh.write(struct.pack("<I", tt.order))
        fh.write(np.asarray(tt.ranks, dtype="<u8").tobytes())
        fh.write(np.asarray(tt.dims, dtype="<u8").tobytes())
        for core in tt.cores:
            fh.write(core.ravel(order="F").astype("<f8").tobytes())


def read_ttb(path) -> TTTensor:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _TTB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_TTB_MAGIC!r}")
        (order,) = struct.unpack("<I", fh.read(4))
        ranks = np.frombuffer(fh.read(8 * (order + 1)), dtype="<u8").astype(np.int64)
        dims = np.frombuffer(fh.read(8 * order), dtype="<u8").astype(np.int64)
        cores = []
        for k in range(order):
            count = int(ranks[k] * dims[k] * ranks[k + 1])
            flat = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if flat.size != count:
                raise FormatError(f"{path}: truncated core {k}")
            cores.append(flat.reshape(ranks[k], dims[k], ranks[k + 1], order="F"))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after cores")
        return TTTensor(cores)


def write_frostt(x: SparseTensor, path) -> None:
    """Write 1-based coordinate lines, with a dims comment header so the file
    round-trips even when trailing slices are empty."""
    with open(path, "w") as fh:
        fh.write("# dims: " + " ".join(str(d) for d in x.dims) + "\n")
        for row, value in zip(x.indices, x.values):
            coords = " ".join(str(int(c) + 1) for c in row)
            fh.write(f"{coords} {float(value)!r}\n")


def parse_frostt(path, dims=None) -> SparseTensor:
    """Parse a FROSTT-style coordinate text file into a SparseTensor.

    1-based coordinates are shifted down on ingest.  Errors report the
    offending line number; duplicate coordinates are rejected.
    """
    header_dims = None
    rows = []
    values = []
    ncols = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped[1:].strip()
                if body.lower().startswith("dims:"):
                    try:
                        header_dims = tuple(int(t) for t in body[5:].split())
                    except ValueError:
                        raise FormatError(
                            f"{path}:{lineno}: malformed dims header {stripped!r}"
                        ) from None
                continue
            tokens = stripped.split()
            if ncols is None:
                if len(tokens) < 2:
                    raise FormatError(
                        f"{path}:{lineno}: expected coordinates and a value"
                    )
                ncols = len(tokens)
            elif len(tokens) != ncols:
                raise FormatError(
                    f"{path}:{lineno}: expected {ncols} fields, got {len(tokens)}"
                )
            try:
                coords = [int(t) for t in tokens[:-1]]
                value = float(tokens[-1])
            except ValueError:
                raise FormatError(
                    f"{path}:{lineno}: non-numeric token in {stripped!r}"
                ) from None
            if any(c < 1 for c in coords):
                raise FormatError(
                    f"{path}:{lineno}: coordinates are 1-based, got {coords}"
                )
            rows.append(coords)
            values.append(value)
    if not rows:
        raise FormatError(f"{path}: empty tensor (no coordinate lines)")
    indices = np.asarray(rows, dtype=np.int64) - 1
    if dims is None:
        dims = header_dims
    if dims is None:
        dims = tuple(int(m) + 1 for m in indices.max(axis=0))
    dims = check_dims(dims)
    if len(dims) != indices.shape[1]:
        raise FormatError(
            f"{path}: {indices.shape[1]} coordinate columns but {len(dims)} dims"
        )
    try:
        return SparseTensor(dims, indices, values)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
