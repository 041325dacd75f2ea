"""Tensor-train representation: construction, evaluation, chain contraction,
canonical-form orthogonalization and center shifting.

A TT tensor is a list of 3-way cores, core k of shape (R_{k-1}, I_k, R_k)
with boundary ranks R_0 = R_N = 1.  When ``ortho_center = j`` every core left
of j is left-orthonormal and every core right of j is right-orthonormal; ALS
relies on that form to make each local design matrix orthonormal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensors import (
    DEFAULT_DENSE_CAP,
    DenseTensor,
    check_dims,
    fold_left,
    left_matricization,
    right_matricization,
)

# Frobenius tolerance on Gram residuals defining "orthonormal".
ORTHO_TOL = 1e-8


class StateError(RuntimeError):
    """An operation was called on an object in the wrong state."""


@dataclass
class TTTensor:
    """Tensor-train tensor: cores plus an optional orthogonality center.

    Value semantics: operations return new instances (unchanged cores are
    shared, never mutated), so instances are safe to read concurrently.
    """

    cores: list = field(default_factory=list)
    ortho_center: int | None = None

    def __post_init__(self):
        if not self.cores:
            raise ValueError("a TT tensor needs at least one core")
        self.cores = [np.asarray(c, dtype=np.float64) for c in self.cores]
        for k, core in enumerate(self.cores):
            if core.ndim != 3:
                raise ValueError(f"core {k} must be 3-way, got shape {core.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise ValueError(
                    f"rank mismatch between cores {k} and {k + 1}: "
                    f"{self.cores[k].shape[2]} vs {self.cores[k + 1].shape[0]}"
                )
        check_dims(self.dims)
        if self.ortho_center is not None and not 0 <= self.ortho_center < self.order:
            raise ValueError(f"ortho_center {self.ortho_center} out of range")

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Full rank vector (R_0, R_1, ..., R_N) read off the cores."""
        return (1,) + tuple(c.shape[2] for c in self.cores)

    def replace_core(self, k: int, core: np.ndarray) -> "TTTensor":
        """New TT with core k swapped out; the orthogonality center is kept
        (callers replace the center core, which has no orthogonality claim)."""
        core = np.asarray(core, dtype=np.float64)
        if core.shape != self.cores[k].shape:
            raise ValueError(
                f"replacement core shape {core.shape} != {self.cores[k].shape}"
            )
        cores = list(self.cores)
        cores[k] = core
        return TTTensor(cores, self.ortho_center)

    def __repr__(self):
        return (
            f"TTTensor(dims={self.dims}, ranks={self.ranks[1:-1]}, "
            f"ortho_center={self.ortho_center})"
        )


def clip_ranks(dims, ranks) -> list[int]:
    """Clip interior ranks to the largest feasible values.

    R_k can never usefully exceed min(prod of dims up to k, prod beyond k);
    larger values are unreachable and break the QR shapes used by the
    orthogonalization sweeps.  A warning is issued when clipping happens.
    """
    dims = check_dims(dims)
    n = len(dims)
    if isinstance(ranks, (int, np.integer)):
        ranks = [int(ranks)] * (n - 1)
    ranks = [int(r) for r in ranks]
    if len(ranks) != n - 1:
        raise ValueError(f"expected {n - 1} interior ranks, got {len(ranks)}")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks must be positive")
    left = np.cumprod(dims)[:-1]
    right = np.cumprod(dims[::-1])[:-1][::-1]
    clipped = [int(min(r, l, rr)) for r, l, rr in zip(ranks, left, right)]
    if clipped != ranks:
        warnings.warn(
            f"TT ranks {ranks} clipped to {clipped} for shape {dims}",
            RuntimeWarning,
            stacklevel=2,
        )
    return clipped


def tt_random(dims, ranks, seed=None) -> TTTensor:
    """Random TT with i.i.d. standard normal core entries.

    ``seed`` may be anything accepted by ``np.random.default_rng``.
    """
    dims = check_dims(dims)
    ranks = clip_ranks(dims, ranks)
    rng = np.random.default_rng(seed)
    full = [1] + ranks + [1]
    cores = [
        rng.standard_normal((full[k], dims[k], full[k + 1]))
        for k in range(len(dims))
    ]
    return TTTensor(cores)


def chain_rows(cores, indices) -> np.ndarray:
    """Rows of the chain matrix of ``cores`` at the given multi-indices.

    ``indices`` is (n, len(cores)); returns (n, R_last), where row d is the
    product of the selected lateral slices.  With an empty core list this is
    the 1-column matrix of ones.
    """
    indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    n = indices.shape[0]
    if indices.shape[1] != len(cores):
        raise IndexError(f"expected {len(cores)} index columns, got {indices.shape[1]}")
    out = np.ones((n, 1))
    for k, core in enumerate(cores):
        if indices[:, k].size and (
            indices[:, k].min() < 0 or indices[:, k].max() >= core.shape[1]
        ):
            raise IndexError(f"index out of range for core {k}")
        out = np.einsum("nr,rns->ns", out, core[:, indices[:, k], :], optimize=True)
    return out


def chain_cols(cores, indices) -> np.ndarray:
    """Columns of the chain matrix of ``cores`` at the given multi-indices,
    returned as rows: (n, R_first)."""
    indices = np.atleast_2d(np.asarray(indices, dtype=np.int64))
    n = indices.shape[0]
    if indices.shape[1] != len(cores):
        raise IndexError(f"expected {len(cores)} index columns, got {indices.shape[1]}")
    out = np.ones((n, 1))
    for k in range(len(cores) - 1, -1, -1):
        core = cores[k]
        col = indices[:, k]
        if col.size and (col.min() < 0 or col.max() >= core.shape[1]):
            raise IndexError(f"index out of range for core {k}")
        out = np.einsum("rns,ns->nr", core[:, col, :], out, optimize=True)
    return out


def tt_entry(tt: TTTensor, idx) -> float:
    """Evaluate one entry: the scalar chain product of lateral slices."""
    idx = tuple(int(i) for i in idx)
    if len(idx) != tt.order:
        raise IndexError(f"index length {len(idx)} != order {tt.order}")
    for i, d in zip(idx, tt.dims):
        if not 0 <= i < d:
            raise IndexError(f"index {idx} out of range for shape {tt.dims}")
    return float(chain_rows(tt.cores, np.asarray(idx)[None, :])[0, 0])


def tt_entries(cores, indices) -> np.ndarray:
    """Batch evaluation at an (n, N) index array."""
    return chain_rows(cores, indices)[:, 0]


def chain_matrix(cores) -> np.ndarray:
    """Unfold the contraction of a core chain to a (prod I_k, R_last) matrix.

    Row order is the first-index-fastest linearization of (i_0, ..., i_last).
    """
    out = np.ones((1, 1))
    for core in cores:
        tmp = np.einsum("lr,ris->lis", out, core, optimize=True)
        out = tmp.reshape(out.shape[0] * core.shape[1], core.shape[2], order="F")
    return out


def left_chain(tt: TTTensor, axis: int) -> np.ndarray:
    """Matrix of the contraction of all cores before ``axis``:
    (prod_{k<axis} I_k) x R_axis-edge.  For axis = 0 this is [[1]]."""
    if not 0 <= axis < tt.order:
        raise IndexError(f"axis {axis} out of range for order {tt.order}")
    return chain_matrix(tt.cores[:axis])


def right_chain(tt: TTTensor, axis: int) -> np.ndarray:
    """Matrix of the contraction of all cores after ``axis``:
    R_edge x (prod_{k>axis} I_k).  For axis = N-1 this is [[1]]."""
    if not 0 <= axis < tt.order:
        raise IndexError(f"axis {axis} out of range for order {tt.order}")
    out = np.ones((1, 1))
    for k in range(tt.order - 1, axis, -1):
        core = tt.cores[k]
        tmp = np.einsum("ris,st->rit", core, out, optimize=True)
        out = tmp.reshape(core.shape[0], core.shape[1] * out.shape[1], order="F")
    return out


def tt_to_dense(tt: TTTensor, max_entries: int = DEFAULT_DENSE_CAP) -> DenseTensor:
    """Materialize by sequential contraction (cost O(prod I * R^2))."""
    total = int(np.prod(tt.dims, dtype=np.int64))
    if total > max_entries:
        raise ValueError(f"refusing to materialize {total} entries (cap {max_entries})")
    flat = chain_matrix(tt.cores)[:, 0]
    return DenseTensor.from_flat(flat, tt.dims)


def qr_nonneg(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with the triangular factor's diagonal forced nonnegative,
    so repeated factorizations are deterministic across runs."""
    q, r = np.linalg.qr(a)
    signs = np.sign(np.diagonal(r)).copy()
    signs[signs == 0] = 1.0
    return q * signs, r * signs[:, None]


def _push_right(cores: list, j: int) -> None:
    """QR core j's left matricization; absorb the triangular factor into
    core j+1.  The bond may shrink if the matricization is wide."""
    r0, i, r1 = cores[j].shape
    q, rmat = qr_nonneg(left_matricization(cores[j]))
    cores[j] = fold_left(q, r0, i, q.shape[1])
    cores[j + 1] = np.einsum("rs,sit->rit", rmat, cores[j + 1], optimize=True)


def _push_left(cores: list, j: int) -> None:
    """QR the transpose of core j's right matricization; absorb the factor
    into core j-1."""
    r0, i, r1 = cores[j].shape
    q, rmat = qr_nonneg(right_matricization(cores[j]).T)
    cores[j] = q.reshape(i, r1, q.shape[1], order="F").transpose(2, 0, 1)
    cores[j - 1] = np.einsum("air,qr->aiq", cores[j - 1], rmat, optimize=True)


def orthogonalize_to(tt: TTTensor, center: int) -> TTTensor:
    """Bring the TT into canonical form with the given orthogonality center.

    Right-orthogonalizes from the last core down to center+1, then
    left-orthogonalizes from the first core up to center-1; the represented
    tensor is unchanged up to floating-point error.
    """
    if not 0 <= center < tt.order:
        raise IndexError(f"center {center} out of range for order {tt.order}")
    cores = list(tt.cores)
    for j in range(tt.order - 1, center, -1):
        _push_left(cores, j)
    for j in range(center):
        _push_right(cores, j)
    return TTTensor(cores, ortho_center=center)


def shift_center(tt: TTTensor, direction: str) -> TTTensor:
    """Move the orthogonality center one step left or right via a single QR."""
    if tt.ortho_center is None:
        raise StateError("shift_center requires an orthogonality center")
    j = tt.ortho_center
    cores = list(tt.cores)
    if direction == "right":
        if j >= tt.order - 1:
            raise StateError("cannot shift right: center already at the last core")
        _push_right(cores, j)
        return TTTensor(cores, ortho_center=j + 1)
    if direction == "left":
        if j <= 0:
            raise StateError("cannot shift left: center already at the first core")
        _push_left(cores, j)
        return TTTensor(cores, ortho_center=j - 1)
    raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")


def canonical_residuals(tt: TTTensor) -> list[float]:
    """Gram residuals of the canonical-form invariant, one per non-center core.

    For k < center: ||A_k^L.T A_k^L - I||_F; for k > center the mirrored
    right-matricization residual.  Empty when no center is set.
    """
    if tt.ortho_center is None:
        return []
    out = []
    for k, core in enumerate(tt.cores):
        if k < tt.ortho_center:
            a = left_matricization(core)
            out.append(float(np.linalg.norm(a.T @ a - np.eye(a.shape[1]))))
        elif k > tt.ortho_center:
            a = right_matricization(core)
            out.append(float(np.linalg.norm(a @ a.T - np.eye(a.shape[0]))))
    return out


def is_canonical(tt: TTTensor, tol: float = ORTHO_TOL) -> bool:
    if tt.ortho_center is None:
        return False
    return all(r <= tol for r in canonical_residuals(tt))


def tt_norm(tt: TTTensor) -> float:
    """Frobenius norm of the represented tensor.

    In canonical form the norm is the norm of the center core; otherwise the
    tensor is orthogonalized first (the input is not modified).
    """
    if tt.ortho_center is None:
        tt = orthogonalize_to(tt, 0)
    return float(np.linalg.norm(tt.cores[tt.ortho_center]))


def random_left_orthonormal_chain(dims, chain_ranks, seed=None) -> list[np.ndarray]:
    """Random core chain with every left matricization orthonormal.

    ``chain_ranks`` lists (R_1, ..., R_N) for N cores; R_0 is fixed to 1 and
    the final rank need not be 1, so the result is a general chain rather
    than a complete TT.  Each rank must satisfy R_k <= I_k * R_{k-1}.
    """
    dims = check_dims(dims)
    chain_ranks = [int(r) for r in chain_ranks]
    if len(chain_ranks) != len(dims):
        raise ValueError(f"expected {len(dims)} chain ranks, got {len(chain_ranks)}")
    rng = np.random.default_rng(seed)
    cores = []
    r_prev = 1
    for i, r in zip(dims, chain_ranks):
        if r > i * r_prev:
            raise ValueError(
                f"rank {r} unreachable: at most {i * r_prev} at this position"
            )
        q, _ = qr_nonneg(rng.standard_normal((i * r_prev, r)))
        cores.append(fold_left(q, r_prev, i, r))
        r_prev = r
    return cores
