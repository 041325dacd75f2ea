"""Synthetic test tensors: dense and sparse samples of a random TT ground
truth plus Gaussian noise."""

from __future__ import annotations

import numpy as np

from .tensors import DEFAULT_DENSE_CAP, DenseTensor, SparseTensor, check_dims
from .ttcore import tt_entries, tt_random, tt_to_dense


def synth_dense(
    dims,
    true_ranks,
    noise_sigma: float = 0.0,
    seed=0,
    max_entries: int = DEFAULT_DENSE_CAP,
) -> DenseTensor:
    """Dense tensor with exact TT rank ``true_ranks`` plus i.i.d. Gaussian
    noise of the given standard deviation on every entry."""
    dims = check_dims(dims)
    core_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    truth = tt_random(dims, true_ranks, core_seed)
    dense = tt_to_dense(truth, max_entries=max_entries)
    if noise_sigma > 0.0:
        noise = np.random.default_rng(noise_seed).standard_normal(dense.dims)
        dense = DenseTensor(dense.data + noise_sigma * noise)
    return dense


def synth_sparse(
    dims, true_ranks, nnz: int, noise_sigma: float = 0.0, seed=0
) -> SparseTensor:
    """Sparse tensor: ``nnz`` distinct random coordinates of a random TT
    ground truth, with per-entry Gaussian noise."""
    dims = check_dims(dims)
    total = int(np.prod(dims, dtype=np.int64))
    if nnz > total:
        raise ValueError(f"cannot place {nnz} distinct nonzeros in {total} cells")
    core_seed, coord_seed, noise_seed = np.random.SeedSequence(seed).spawn(3)
    truth = tt_random(dims, true_ranks, core_seed)
    rng = np.random.default_rng(coord_seed)
    if total <= 1 << 24:
        flat = rng.choice(total, size=nnz, replace=False)
    else:
        # Rejection-style top-up keeps memory independent of the tensor size.
        flat = np.unique(rng.integers(0, total, size=2 * nnz))
        while flat.size < nnz:
            extra = rng.integers(0, total, size=nnz)
            flat = np.unique(np.concatenate([flat, extra]))
        flat = rng.permutation(flat)[:nnz]
    indices = np.stack(np.unravel_index(flat, dims, order="F"), axis=1)
    values = tt_entries(truth.cores, indices)
    if noise_sigma > 0.0:
        values = values + noise_sigma * np.random.default_rng(
            noise_seed
        ).standard_normal(nnz)
    return SparseTensor(dims, indices, values)
