"""Dense and sparse N-way tensors: multi-index arithmetic, unfoldings,
matricizations, row gathering and the fit metric.

Conventions used throughout the package:

- Modes and indices are 0-based.
- Linearization is first-index-fastest: a multi-index ``(i_0, ..., i_{N-1})``
  maps to ``sum_k i_k * prod_{m<k} I_m``.  Unfolding columns, matricization
  rows and on-disk storage all follow the same ordering.
"""

from __future__ import annotations

import numpy as np

# Materialization guard for operations that expand to a dense array.
DEFAULT_DENSE_CAP = 1 << 26


def check_dims(dims) -> tuple[int, ...]:
    """Validate a shape tuple: N >= 1, every extent >= 1, product < 2**63."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 1:
        raise ValueError("tensor order must be at least 1")
    if any(d < 1 for d in dims):
        raise ValueError(f"mode sizes must be positive, got {dims}")
    total = 1
    for d in dims:
        total *= d
    if total >= 1 << 63:
        raise ValueError("product of mode sizes exceeds the index range")
    return dims


def dim_strides(dims) -> np.ndarray:
    """First-index-fastest strides: stride_k = prod_{m<k} I_m."""
    return np.concatenate(([1], np.cumprod(dims[:-1]))).astype(np.int64)


def linearize(idx, dims) -> int:
    """Map a multi-index to its flat position, first index fastest.

    The exact inverse of :func:`delinearize`.
    """
    dims = check_dims(dims)
    idx = tuple(int(i) for i in idx)
    if len(idx) != len(dims):
        raise IndexError(f"index length {len(idx)} != order {len(dims)}")
    for i, d in zip(idx, dims):
        if not 0 <= i < d:
            raise IndexError(f"index {idx} out of range for shape {dims}")
    return int(np.ravel_multi_index(idx, dims, order="F"))


def delinearize(flat: int, dims) -> tuple[int, ...]:
    """Inverse of :func:`linearize`."""
    dims = check_dims(dims)
    total = int(np.prod(dims, dtype=np.int64))
    if not 0 <= flat < total:
        raise IndexError(f"flat index {flat} out of range for shape {dims}")
    return tuple(int(i) for i in np.unravel_index(flat, dims, order="F"))


def linearize_many(idx: np.ndarray, dims) -> np.ndarray:
    """Vectorized linearize for an (n, N) index array."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != len(dims):
        raise IndexError(f"expected an (n, {len(dims)}) index array")
    if idx.size and (idx.min() < 0 or (idx >= np.asarray(dims)).any()):
        raise IndexError(f"index out of range for shape {tuple(dims)}")
    return idx @ dim_strides(dims)


class DenseTensor:
    """Dense N-way tensor of float64 values.

    Wraps an ndarray kept Fortran-contiguous so the flat (first-index-fastest)
    view never copies.
    """

    def __init__(self, data):
        data = np.asfortranarray(data, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1)
        self.data = data
        check_dims(data.shape)
        if not np.isfinite(data).all():
            raise ValueError("dense tensor entries must be finite")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def flat(self) -> np.ndarray:
        """Flat value vector in first-index-fastest order (no copy)."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, values, dims) -> "DenseTensor":
        dims = check_dims(dims)
        values = np.asarray(values, dtype=np.float64)
        if values.size != int(np.prod(dims, dtype=np.int64)):
            raise ValueError(
                f"got {values.size} values for shape {dims} "
                f"({int(np.prod(dims, dtype=np.int64))} expected)"
            )
        return cls(values.reshape(dims, order="F"))

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))

    def reshape(self, new_dims) -> "DenseTensor":
        """Reinterpret the same flat storage under a new shape."""
        new_dims = check_dims(new_dims)
        if int(np.prod(new_dims, dtype=np.int64)) != self.size:
            raise ValueError(f"cannot reshape size {self.size} to {new_dims}")
        return DenseTensor(self.flat.reshape(new_dims, order="F"))

    def __getitem__(self, idx):
        return self.data[idx]

    def __repr__(self):
        return f"DenseTensor(dims={self.dims})"


class SparseTensor:
    """Sparse N-way tensor in coordinate (COO) form, 0-based indices.

    Duplicate coordinates are rejected rather than summed: the supported
    ingest paths are duplicate-free, and silent accumulation hides data
    errors.
    """

    def __init__(self, dims, indices, values):
        self.dims = check_dims(dims)
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if indices.ndim != 2 or indices.shape[1] != len(self.dims):
            raise ValueError(
                f"indices must be (nnz, {len(self.dims)}), got {indices.shape}"
            )
        if values.shape != (indices.shape[0],):
            raise ValueError("values length must match the number of index rows")
        if indices.size:
            if indices.min() < 0 or (indices >= np.asarray(self.dims)).any():
                raise IndexError(f"coordinate out of range for shape {self.dims}")
        if not np.isfinite(values).all():
            raise ValueError("sparse tensor values must be finite")
        if indices.shape[0] > 1:
            order = np.lexsort(indices.T)
            srt = indices[order]
            if np.any((srt[1:] == srt[:-1]).all(axis=1)):
                raise ValueError("duplicate coordinates are not allowed")
        self.indices = indices
        self.values = values

    @property
    def nnz(self) -> int:
        return self.indices.shape[0]

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def to_dense(self, max_entries: int = DEFAULT_DENSE_CAP) -> DenseTensor:
        total = int(np.prod(self.dims, dtype=np.int64))
        if total > max_entries:
            raise ValueError(
                f"refusing to densify {total} entries (cap {max_entries})"
            )
        flat = np.zeros(total)
        flat[linearize_many(self.indices, self.dims)] = self.values
        return DenseTensor.from_flat(flat, self.dims)

    def __repr__(self):
        return f"SparseTensor(dims={self.dims}, nnz={self.nnz})"


def mode_unfolding(x: DenseTensor, axis: int) -> np.ndarray:
    """Mode unfolding: an I_axis x prod(rest) matrix.

    Column c is the linearization (first index fastest) of the remaining
    indices in their original mode order.
    """
    n = x.ndim
    if not 0 <= axis < n:
        raise IndexError(f"axis {axis} out of range for order {n}")
    moved = np.moveaxis(x.data, axis, 0)
    return moved.reshape(x.dims[axis], -1, order="F")


def left_matricization(core: np.ndarray) -> np.ndarray:
    """Reshape an (R_prev, I, R_next) core to (R_prev * I, R_next).

    Row index is ``r_prev + R_prev * i``: the rows of one lateral slice are
    contiguous, which the chain sampler's integer division relies on.
    """
    r0, i, r1 = core.shape
    return core.reshape(r0 * i, r1, order="F")


def right_matricization(core: np.ndarray) -> np.ndarray:
    """Reshape an (R_prev, I, R_next) core to (R_prev, I * R_next); column
    index is ``i + I * r_next``."""
    r0, i, r1 = core.shape
    return core.reshape(r0, i * r1, order="F")


def fold_left(mat: np.ndarray, r_prev: int, i: int, r_next: int) -> np.ndarray:
    """Inverse of :func:`left_matricization`."""
    if mat.shape != (r_prev * i, r_next):
        raise ValueError(f"expected shape {(r_prev * i, r_next)}, got {mat.shape}")
    return mat.reshape(r_prev, i, r_next, order="F")


class ModeGatherIndex:
    """Sorted lookup from off-mode multi-indices to the nonzeros sharing them.

    Supports gathering rows of the mode unfolding's transpose for a sparse
    tensor in O(log nnz) per requested row.
    """

    def __init__(self, x: SparseTensor, axis: int):
        if not 0 <= axis < x.ndim:
            raise IndexError(f"axis {axis} out of range for order {x.ndim}")
        self.axis = axis
        self.dims = x.dims
        self.off_dims = tuple(d for k, d in enumerate(x.dims) if k != axis)
        off_idx = np.delete(x.indices, axis, axis=1)
        keys_all = linearize_many(off_idx, self.off_dims) if x.nnz else np.empty(0, np.int64)
        order = np.argsort(keys_all, kind="stable")
        sorted_keys = keys_all[order]
        self.keys, starts = np.unique(sorted_keys, return_index=True)
        self.offsets = np.concatenate((starts, [x.nnz])).astype(np.int64)
        self.mode_coords = x.indices[order, axis]
        self.values = x.values[order]

    def lookup(self, key: int) -> tuple[int, int]:
        """Range [start, end) of stored entries for one off-mode key; empty
        range if absent."""
        pos = int(np.searchsorted(self.keys, key))
        if pos == len(self.keys) or self.keys[pos] != key:
            return 0, 0
        return int(self.offsets[pos]), int(self.offsets[pos + 1])


def build_mode_gather_index(x: SparseTensor, axis: int) -> ModeGatherIndex:
    return ModeGatherIndex(x, axis)


def _check_off_mode_rows(rows, dims, axis):
    rows = np.atleast_2d(np.asarray(rows, dtype=np.int64))
    off_dims = tuple(d for k, d in enumerate(dims) if k != axis)
    if rows.shape[1] != len(off_dims):
        raise IndexError(
            f"off-mode rows must have {len(off_dims)} columns, got {rows.shape[1]}"
        )
    if rows.size and (rows.min() < 0 or (rows >= np.asarray(off_dims)).any()):
        raise IndexError(f"off-mode index out of range for shape {off_dims}")
    return rows, off_dims


def gather_rows(source, axis: int, rows) -> np.ndarray:
    """Gather mode-``axis`` fibers at the requested off-mode multi-indices.

    ``source`` is a DenseTensor or a ModeGatherIndex built for the same axis.
    Output row d is the fiber of the tensor along ``axis`` with the other
    indices fixed to ``rows[d]`` (kept in original mode order).  Requested
    rows may repeat; sparse rows absent from the support come back as zeros.
    """
    if isinstance(source, DenseTensor):
        if not 0 <= axis < source.ndim:
            raise IndexError(f"axis {axis} out of range for order {source.ndim}")
        rows, _ = _check_off_mode_rows(rows, source.dims, axis)
        strides = dim_strides(source.dims)
        off_strides = np.delete(strides, axis)
        base = rows @ off_strides
        fiber = strides[axis] * np.arange(source.dims[axis], dtype=np.int64)
        return source.flat[base[:, None] + fiber[None, :]]
    if isinstance(source, ModeGatherIndex):
        if axis != source.axis:
            raise IndexError(f"gather index was built for axis {source.axis}")
        rows, off_dims = _check_off_mode_rows(rows, source.dims, axis)
        keys = rows @ dim_strides(off_dims)
        out = np.zeros((rows.shape[0], source.dims[axis]))
        if len(source.keys) == 0:
            return out
        pos = np.searchsorted(source.keys, keys)
        pos = np.minimum(pos, len(source.keys) - 1)
        hit = source.keys[pos] == keys
        if not hit.any():
            return out
        row_ids = np.flatnonzero(hit)
        starts = source.offsets[pos[hit]]
        lengths = source.offsets[pos[hit] + 1] - starts
        keep = lengths > 0
        row_ids, starts, lengths = row_ids[keep], starts[keep], lengths[keep]
        if len(row_ids) == 0:
            return out
        # CSR-style expansion of all [start, start+length) ranges at once.
        ends = np.cumsum(lengths)
        entry = np.arange(ends[-1]) - np.repeat(ends - lengths, lengths) + np.repeat(starts, lengths)
        out[np.repeat(row_ids, lengths), source.mode_coords[entry]] = source.values[entry]
        return out
    raise TypeError(f"cannot gather from {type(source).__name__}")


def _dense_like(x, max_entries):
    if isinstance(x, DenseTensor):
        return x
    if isinstance(x, SparseTensor):
        return x.to_dense(max_entries)
    raise TypeError(f"expected a tensor, got {type(x).__name__}")


def fit(approx, target, max_entries: int = DEFAULT_DENSE_CAP) -> float:
    """Relative-error fit: ``1 - ||approx - target||_F / ||target||_F``.

    ``approx`` may be a DenseTensor, SparseTensor or TTTensor; ``target`` a
    DenseTensor or SparseTensor with nonzero norm.  A TT approximation of a
    sparse target is scored without densifying: the cross term is evaluated
    at the stored nonzeros and the TT norm comes from its canonical form.
    """
    from . import ttcore

    target_norm = target.norm()
    if target_norm == 0.0:
        raise ValueError("fit is undefined for a zero-norm target")
    if isinstance(approx, ttcore.TTTensor):
        if approx.dims != tuple(target.dims):
            raise ValueError(f"shape mismatch: {approx.dims} vs {tuple(target.dims)}")
        if isinstance(target, SparseTensor):
            cross = float(
                ttcore.tt_entries(approx.cores, target.indices) @ target.values
            )
            tt_sq = ttcore.tt_norm(approx) ** 2
            err_sq = max(target_norm**2 - 2.0 * cross + tt_sq, 0.0)
            return 1.0 - np.sqrt(err_sq) / target_norm
        approx = ttcore.tt_to_dense(approx, max_entries=max_entries)
    a = _dense_like(approx, max_entries)
    t = _dense_like(target, max_entries)
    if a.dims != t.dims:
        raise ValueError(f"shape mismatch: {a.dims} vs {t.dims}")
    return 1.0 - float(np.linalg.norm(a.flat - t.flat)) / target_norm
