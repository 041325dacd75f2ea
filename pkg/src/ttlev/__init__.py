"""Tensor-train decomposition toolkit: deterministic and randomized TT-ALS
(with exact leverage-score sampling), TT-SVD baselines, dense and sparse
tensors, and file formats for both."""

import os as _os

# Honor TT_THREADS before any BLAS-backed import happens.
_threads = _os.environ.get("TT_THREADS")
if _threads and _threads.isdigit():
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)
del _os, _threads

from .als import (
    AlsConfig,
    SketchedProblem,
    SweepTrace,
    TraceRecord,
    exact_core_update,
    leverage_score_sketch,
    leverage_scores,
    offmode_design,
    rtt_als,
    sketched_core_update,
    solve_least_squares,
    tt_als,
)
from .io import (
    FormatError,
    parse_frostt,
    read_dtb,
    read_ttb,
    write_dtb,
    write_frostt,
    write_ttb,
)
from .sampler import (
    ChainDraw,
    ChainDraws,
    ChainSampler,
    RowSampler,
    ZeroMassError,
    build_chain_sampler,
    build_row_sampler,
    chain_sample_left,
    chain_sample_right,
    empirical_histogram,
    joint_probability,
    refresh_core,
    row_sample,
)
from .synth import synth_dense, synth_sparse
from .tensors import (
    DEFAULT_DENSE_CAP,
    DenseTensor,
    ModeGatherIndex,
    SparseTensor,
    build_mode_gather_index,
    delinearize,
    fit,
    gather_rows,
    left_matricization,
    linearize,
    mode_unfolding,
    right_matricization,
)
from .ttcore import (
    StateError,
    TTTensor,
    canonical_residuals,
    is_canonical,
    left_chain,
    orthogonalize_to,
    random_left_orthonormal_chain,
    right_chain,
    shift_center,
    tt_entries,
    tt_entry,
    tt_norm,
    tt_random,
    tt_to_dense,
)
from .ttsvd import SvdConfig, rtt_svd, tt_svd

__version__ = "0.1.0"
