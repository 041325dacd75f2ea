"""SVD-based TT baselines: sequential truncated SVD of the unfoldings, and
a randomized variant using a Gaussian range finder."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensors import DEFAULT_DENSE_CAP, DenseTensor, SparseTensor
from .ttcore import TTTensor, clip_ranks, qr_nonneg


@dataclass
class SvdConfig:
    """Parameters for the randomized baseline: oversampling and power
    iterations follow standard range-finder practice."""

    oversampling: int = 10
    power_iterations: int = 1
    seed: int | None = 0

    def __post_init__(self):
        if self.oversampling < 0:
            raise ValueError("oversampling must be nonnegative")
        if self.power_iterations < 0:
            raise ValueError("power_iterations must be nonnegative")


def _as_dense(x, max_entries: int):
    if isinstance(x, DenseTensor):
        return x
    if isinstance(x, SparseTensor):
        return x.to_dense(max_entries)
    raise TypeError(f"expected a tensor, got {type(x).__name__}")


def _sweep(x: DenseTensor, ranks, factorize) -> TTTensor:
    """Shared left-to-right sweep: at step k, factor the (R_{k-1} I_k) x rest
    matrix into an orthonormal basis (the new core) times a residual.

    ``factorize(mat, rank)`` returns (basis, residual) with basis orthonormal
    of at most ``rank`` columns.  The output is left-orthonormal everywhere
    except the last core, i.e. canonical with center N-1.
    """
    dims = x.dims
    n = len(dims)
    ranks = clip_ranks(dims, ranks)
    cores = []
    mat = x.flat.reshape(dims[0], -1, order="F")
    r_prev = 1
    for k in range(n - 1):
        basis, residual = factorize(mat, ranks[k])
        r_k = basis.shape[1]
        cores.append(basis.reshape(r_prev, dims[k], r_k, order="F"))
        mat = residual.reshape(r_k * dims[k + 1], -1, order="F")
        r_prev = r_k
    cores.append(mat.reshape(r_prev, dims[-1], 1, order="F"))
    return TTTensor(cores, ortho_center=n - 1)


def tt_svd(x, ranks, max_entries: int = DEFAULT_DENSE_CAP) -> TTTensor:
    """Deterministic TT-SVD.

    Sequentially truncates the residual unfolding with an exact SVD; with
    unclipped full ranks the reconstruction is exact to round-off.  Sparse
    input is densified when it fits under ``max_entries``.
    """
    x = _as_dense(x, max_entries)

    def factorize(mat, rank):
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = min(rank, u.shape[1])
        return u[:, :r], s[:r, None] * vt[:r]

    return _sweep(x, ranks, factorize)


def rtt_svd(
    x, ranks, cfg: SvdConfig | None = None, max_entries: int = DEFAULT_DENSE_CAP
) -> TTTensor:
    """Randomized TT-SVD: each truncated SVD is replaced by a Gaussian range
    finder (rank + oversampling test vectors, optional power iterations)
    followed by a small exact SVD of the projected matrix."""
    x = _as_dense(x, max_entries)
    cfg = cfg if cfg is not None else SvdConfig()
    rng = np.random.default_rng(cfg.seed)

    def factorize(mat, rank):
        draw = min(rank + cfg.oversampling, *mat.shape)
        if draw < rank:
            warnings.warn(
                f"rank {rank} reduced to {draw} by the matrix shape",
                RuntimeWarning,
                stacklevel=2,
            )
        probe = rng.standard_normal((mat.shape[1], draw))
        q, _ = qr_nonneg(mat @ probe)
        for _ in range(cfg.power_iterations):
            q, _ = qr_nonneg(mat.T @ q)
            q, _ = qr_nonneg(mat @ q)
        proj = q.T @ mat
        u, s, vt = np.linalg.svd(proj, full_matrices=False)
        r = min(rank, u.shape[1])
        return q @ u[:, :r], s[:r, None] * vt[:r]

    return _sweep(x, ranks, factorize)
