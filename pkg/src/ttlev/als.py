"""Alternating least squares drivers for TT decomposition.

``tt_als`` performs exact single-site updates; ``rtt_als`` replaces each
update with a sketched least-squares problem whose rows are drawn from the
exact leverage-score distribution of the orthonormal off-pivot chain.  Both
drivers keep the TT in canonical form throughout, sweeping left-to-right and
back with one QR per step.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .sampler import (
    ChainSampler,
    ZeroMassError,
    build_chain_sampler,
    chain_sample_left,
    chain_sample_right,
)
from .tensors import (
    DEFAULT_DENSE_CAP,
    DenseTensor,
    SparseTensor,
    build_mode_gather_index,
    fit,
    gather_rows,
    mode_unfolding,
)
from .ttcore import (
    StateError,
    TTTensor,
    chain_cols,
    chain_rows,
    left_chain,
    orthogonalize_to,
    right_chain,
    shift_center,
)

# Design matrices whose QR-estimated condition exceeds this fall back to a
# minimum-norm SVD solve.
CONDITION_LIMIT = 1e12


@dataclass
class AlsConfig:
    """Knobs for the ALS drivers.

    ``samples`` is the sketch size J used by the randomized driver (ignored
    by the exact one).  ``fit_eval_cadence`` is in sweeps; traces always get
    an initial record and one for the final sweep.  ``convergence_delta``
    enables early stopping when the fit improves by less than the given
    amount between evaluations.  ``exhaustive_sketch`` is a test hook that
    replaces sampling by full row enumeration with unit weights, making the
    randomized driver reproduce the exact one.
    """

    sweeps: int = 10
    samples: int = 1024
    seed: int | None = 0
    fit_eval_cadence: int = 1
    convergence_delta: float | None = None
    exhaustive_sketch: bool = False

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be at least 1")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.fit_eval_cadence < 1:
            raise ValueError("fit_eval_cadence must be at least 1")


@dataclass
class TraceRecord:
    sweep: int
    time_s: float
    fit: float


class SweepTrace:
    """Fit-versus-work-time trace, one record per fit evaluation.

    Times accumulate the wall-clock spent in core updates and center shifts
    only; fit evaluation itself is excluded, matching how per-iteration ALS
    speed is usually reported.
    """

    header = "sweep,time_s,fit"

    def __init__(self):
        self.records: list[TraceRecord] = []

    def append(self, record: TraceRecord):
        if self.records and record.time_s < self.records[-1].time_s:
            raise ValueError("trace times must be nondecreasing")
        self.records.append(record)

    @property
    def fits(self) -> np.ndarray:
        return np.array([r.fit for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time_s for r in self.records])

    @property
    def final_fit(self) -> float:
        return self.records[-1].fit

    def __len__(self):
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.header + "\n")
            for r in self.records:
                fh.write(f"{r.sweep},{r.time_s:.9f},{r.fit:.17g}\n")


@dataclass
class SketchedProblem:
    """A sketched local least-squares problem.

    ``design`` row d is the Kronecker product of the left and right chain
    rows at the d-th sampled off-pivot multi-index, rescaled by
    1/sqrt(J p_d); ``rhs`` holds the gathered fibers under the same
    rescaling; ``sample_ids`` the sampled multi-indices (off-pivot modes in
    original order).
    """

    design: np.ndarray
    rhs: np.ndarray
    sample_ids: np.ndarray


def leverage_scores(a: np.ndarray) -> np.ndarray:
    """Exact leverage scores a_i (A^T A)^+ a_i^T via a rank-revealing SVD.

    Test and oracle utility; the samplers never form these explicitly.
    """
    a = np.asarray(a, dtype=np.float64)
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(a.shape[0])
    keep = s > s[0] * max(a.shape) * np.finfo(np.float64).eps
    return np.einsum("ir,ir->i", u[:, keep], u[:, keep])


def leverage_score_sketch(
    a: np.ndarray, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``count`` row indices of ``a`` i.i.d. from its leverage-score
    distribution; returns the indices and the 1/sqrt(J p_i) sketch weights."""
    scores = leverage_scores(a)
    total = scores.sum()
    if total <= 0:
        raise ZeroMassError("matrix has rank zero")
    p = scores / total
    ids = rng.choice(a.shape[0], size=count, p=p)
    return ids, 1.0 / np.sqrt(count * p[ids])


def offmode_design(left_mat: np.ndarray, right_rows: np.ndarray) -> np.ndarray:
    """Materialize the full off-pivot design matrix (oracle scale only).

    ``left_mat`` is the left chain (L x R_l); ``right_rows`` the transposed
    right chain (T x R_r).  Row order matches the off-pivot linearization
    (left block fastest), column order matches ``np.kron(v_left, v_right)``.
    """
    l_dim, t_dim = left_mat.shape[0], right_rows.shape[0]
    full = np.einsum("lr,ts->tlrs", left_mat, right_rows)
    return full.reshape(l_dim * t_dim, left_mat.shape[1] * right_rows.shape[1])


def solve_least_squares(design: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Least squares via QR, with a minimum-norm SVD fallback when the design
    is numerically rank-deficient."""
    rows, cols = design.shape
    if rows >= cols:
        q, r = np.linalg.qr(design)
        diag = np.abs(np.diagonal(r))
        if diag.min() > 0 and diag.max() / diag.min() <= CONDITION_LIMIT:
            return np.linalg.solve(r, q.T @ rhs)
    sol, *_ = np.linalg.lstsq(design, rhs, rcond=CONDITION_LIMIT**-1)
    return sol


def _all_offmode_rows(dims, axis) -> np.ndarray:
    off = tuple(d for k, d in enumerate(dims) if k != axis)
    total = int(np.prod(off, dtype=np.int64))
    if total > DEFAULT_DENSE_CAP:
        raise ValueError("exhaustive enumeration is limited to oracle scale")
    return np.stack(np.unravel_index(np.arange(total), off, order="F"), axis=1)


def _solution_to_core(sol: np.ndarray, r_left: int, r_right: int, i_dim: int):
    # Solution rows follow the Kronecker layout (right factor fastest).
    return sol.reshape(r_left, r_right, i_dim).transpose(0, 2, 1)


def exact_core_update(tt: TTTensor, x, axis: int) -> np.ndarray:
    """Exact minimizer of the local least-squares problem at ``axis``.

    Requires the TT to be in canonical form centered at ``axis``, which makes
    the off-pivot design orthonormal: the minimizer is its adjoint applied to
    the unfolded data, computed by contracting the tensor against the left
    and right chains without ever forming the Kronecker design.
    """
    if tt.ortho_center != axis:
        raise StateError(f"TT must be centered at {axis} (center={tt.ortho_center})")
    i_dim = tt.dims[axis]
    if isinstance(x, DenseTensor):
        if x.dims != tt.dims:
            raise ValueError(f"shape mismatch: {x.dims} vs {tt.dims}")
        pre = int(np.prod(tt.dims[:axis], dtype=np.int64))
        post = int(np.prod(tt.dims[axis + 1 :], dtype=np.int64))
        x3 = x.flat.reshape(pre, i_dim, post, order="F")
        lmat = left_chain(tt, axis)
        rmat = right_chain(tt, axis)
        tmp = np.tensordot(lmat, x3, axes=(0, 0))  # (R_l, I, post)
        return np.tensordot(tmp, rmat, axes=(2, 1))  # (R_l, I, R_r)
    if isinstance(x, SparseTensor):
        if tuple(x.dims) != tt.dims:
            raise ValueError(f"shape mismatch: {x.dims} vs {tt.dims}")
        left = chain_rows(tt.cores[:axis], x.indices[:, :axis])
        right = chain_cols(tt.cores[axis + 1 :], x.indices[:, axis + 1 :])
        contrib = x.values[:, None, None] * left[:, :, None] * right[:, None, :]
        acc = np.zeros((i_dim, left.shape[1], right.shape[1]))
        np.add.at(acc, x.indices[:, axis], contrib)
        return acc.transpose(1, 0, 2)
    raise TypeError(f"expected a tensor, got {type(x).__name__}")


def build_sketched_problem(
    tt: TTTensor,
    x,
    axis: int,
    cs: ChainSampler,
    count: int,
    rng: np.random.Generator,
    gather_source=None,
) -> SketchedProblem:
    """Draw J row samples, pair them, and assemble the sketched problem.

    Left and right draws are paired index-wise: the Kronecker factorization
    of the leverage scores makes the joint distribution exactly the product,
    so a pair of independent per-side draws is one i.i.d. joint row sample.
    """
    left_rng, right_rng = rng.spawn(2)
    left = chain_sample_left(cs, axis, count, left_rng)
    right = chain_sample_right(cs, axis, count, right_rng)
    probs = left.probabilities * right.probabilities
    if np.any(probs <= 0):
        raise ZeroMassError("drew a zero-probability row; chain is defective")
    weights = 1.0 / np.sqrt(count * probs)
    design = np.einsum("jl,jr->jlr", left.rows, right.rows).reshape(count, -1)
    design *= weights[:, None]
    sample_ids = np.hstack([left.indices, right.indices])
    rhs = gather_rows(gather_source if gather_source is not None else x, axis, sample_ids)
    rhs = rhs * weights[:, None]
    return SketchedProblem(design, rhs, sample_ids)


def sketched_core_update(
    tt: TTTensor,
    x,
    axis: int,
    cs: ChainSampler | None,
    count: int,
    rng: np.random.Generator,
    gather_source=None,
    exhaustive: bool = False,
) -> np.ndarray:
    """Solve the sketched local problem at ``axis`` and reshape to a core.

    With ``exhaustive=True`` (test hook) every off-pivot row enters once with
    unit weight, so the solve reproduces :func:`exact_core_update` up to
    least-squares round-off; ``cs``/``count``/``rng`` are then unused.
    """
    if tt.ortho_center != axis:
        raise StateError(f"TT must be centered at {axis} (center={tt.ortho_center})")
    if cs is None and not exhaustive:
        raise ValueError("a ChainSampler is required unless exhaustive=True")
    r_left = tt.cores[axis].shape[0]
    r_right = tt.cores[axis].shape[2]
    i_dim = tt.dims[axis]
    if exhaustive:
        design = offmode_design(left_chain(tt, axis), right_chain(tt, axis).T)
        if isinstance(x, DenseTensor):
            rhs = mode_unfolding(x, axis).T
        else:
            source = gather_source
            if source is None:
                source = build_mode_gather_index(x, axis)
            rhs = gather_rows(source, axis, _all_offmode_rows(tt.dims, axis))
        sol = solve_least_squares(design, rhs)
        return _solution_to_core(sol, r_left, r_right, i_dim)
    if count < r_left * r_right:
        warnings.warn(
            f"sketch size {count} < {r_left * r_right} unknowns: the local "
            "problem is underdetermined and solved in the minimum-norm sense",
            RuntimeWarning,
            stacklevel=2,
        )
    problem = build_sketched_problem(tt, x, axis, cs, count, rng, gather_source)
    sol = solve_least_squares(problem.design, problem.rhs)
    return _solution_to_core(sol, r_left, r_right, i_dim)


def _sweep_plan(order: int) -> list[tuple[int, str | None]]:
    """Update/shift schedule of one full sweep (forward then backward)."""
    if order == 1:
        return [(0, None)]
    plan = [(j, "right") for j in range(order - 1)]
    plan += [(j, "left") for j in range(order - 1, 0, -1)]
    return plan


def _run_sweeps(x, tt0: TTTensor, cfg: AlsConfig, make_stepper, on_record):
    """Shared sweep engine: canonicalize, sweep, trace fits.

    ``make_stepper(tt)`` returns an ``(update, sync)`` pair: ``update(tt,
    axis)`` produces the new core for ``axis``, and ``sync(tt)`` (may be
    None) is called after every core replacement or shift so samplers can
    follow the current cores.
    """
    tt = orthogonalize_to(tt0, 0)
    plan = _sweep_plan(tt.order)
    update, sync = make_stepper(tt)
    trace = SweepTrace()

    def record(sweep, work, value):
        rec = TraceRecord(sweep, work, value)
        trace.append(rec)
        if on_record is not None:
            on_record(rec)

    work = 0.0
    record(0, 0.0, fit(tt, x))
    last_fit = trace.records[-1].fit
    for sweep in range(1, cfg.sweeps + 1):
        start = time.perf_counter()
        for axis, direction in plan:
            tt = tt.replace_core(axis, update(tt, axis))
            if sync is not None:
                sync(tt)
            if direction is not None:
                tt = shift_center(tt, direction)
                if sync is not None:
                    sync(tt)
        work += time.perf_counter() - start
        if sweep % cfg.fit_eval_cadence == 0 or sweep == cfg.sweeps:
            current = fit(tt, x)
            record(sweep, work, current)
            if (
                cfg.convergence_delta is not None
                and current - last_fit < cfg.convergence_delta
            ):
                break
            last_fit = current
    return tt, trace


def tt_als(x, tt0: TTTensor, cfg: AlsConfig, on_record=None):
    """Deterministic TT-ALS.

    Starts from ``tt0`` canonicalized at the first core, then repeats full
    sweeps: update the center core exactly and shift the center by one QR,
    left-to-right and back.  Returns the final TT and the fit trace.
    """
    if tuple(x.dims) != tt0.dims:
        raise ValueError(f"shape mismatch: {tuple(x.dims)} vs {tt0.dims}")

    def make_stepper(tt):
        return (lambda cur, axis: exact_core_update(cur, x, axis)), None

    return _run_sweeps(x, tt0, cfg, make_stepper, on_record)


def rtt_als(x, tt0: TTTensor, cfg: AlsConfig, on_record=None):
    """Randomized TT-ALS with exact leverage-score sketching.

    Identical sweep schedule to :func:`tt_als` with sketched core updates;
    fresh samples are drawn for every core update from per-batch RNG streams
    spawned off ``cfg.seed``.  After every center shift the samplers of the
    cores touched by the QR absorption are rebuilt.
    """
    if tuple(x.dims) != tt0.dims:
        raise ValueError(f"shape mismatch: {tuple(x.dims)} vs {tt0.dims}")
    master = np.random.default_rng(cfg.seed)
    sources = {}
    if isinstance(x, SparseTensor):
        for axis in range(tt0.order):
            sources[axis] = build_mode_gather_index(x, axis)

    def make_stepper(tt):
        if cfg.exhaustive_sketch:
            def update(cur, axis):
                return sketched_core_update(
                    cur, x, axis, None, cfg.samples, master,
                    gather_source=sources.get(axis), exhaustive=True,
                )

            return update, None

        cs = build_chain_sampler(tt)

        def update(cur, axis):
            return sketched_core_update(
                cur, x, axis, cs, cfg.samples, master.spawn(1)[0],
                gather_source=sources.get(axis),
            )

        def sync(cur):
            for k in cs.rebind(cur):
                cs.refresh_core(k)

        return update, sync

    return _run_sweeps(x, tt0, cfg, make_stepper, on_record)
