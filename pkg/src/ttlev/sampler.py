"""Exact squared-row-norm sampling for orthonormal core chains.

A :class:`RowSampler` stores a truncated binary tree of Gram matrices over
row segments of a matrix A, so that for any vector h a row index can be drawn
with probability (A[s,:] . h)^2 / ||A h||^2 in O(R^2 log(M/R)) time.  A
:class:`ChainSampler` keeps one such structure per TT core and walks them
from the pivot core outward, drawing a multi-index whose distribution is the
squared-row-norm (= exact leverage score) distribution of the orthonormal
chain matrix.  Draw batches are vectorized: all walks advance one tree level
at a time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensors import left_matricization, linearize_many
from .ttcore import StateError, TTTensor, chain_rows

# Branch masses at or below this are treated as exactly zero.
MASS_EPS = 1e-300


class ZeroMassError(ValueError):
    """The sampling distribution has zero total mass (defective chain or
    deflated history vector)."""


class RowSampler:
    """Gram-tree sampler over the rows of a fixed M x R matrix.

    The tree has ceil(M/F) leaves (leaf size F defaults to R, giving the
    stated O(R^2 log(M/R)) draw cost with O(MR) space); each node stores the
    Gram matrix of its row segment, and a draw walks the tree comparing
    quadratic forms h^T G h, then resolves the final row inside one leaf by
    a cumulative scan of (A_leaf h)^2.
    """

    def __init__(self, a: np.ndarray, leaf_size: int | None = None):
        a = np.ascontiguousarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"expected a nonempty 2-D matrix, got shape {a.shape}")
        m, r = a.shape
        f = int(leaf_size) if leaf_size is not None else r
        if f < 1:
            raise ValueError("leaf size must be positive")
        self.matrix = a
        self.leaf_size = f
        self.num_leaves = -(-m // f)
        # Zero-padded leaf blocks: (L, F, R); padding rows carry zero weight.
        padded = np.zeros((self.num_leaves * f, r))
        padded[:m] = a
        self._leaf_rows = padded.reshape(self.num_leaves, f, r)
        # Heap-ordered complete binary tree, 2L-1 nodes, leaves at L-1..2L-2.
        tree = np.zeros((2 * self.num_leaves - 1, r, r))
        tree[self.num_leaves - 1 :] = np.einsum(
            "lfr,lfs->lrs", self._leaf_rows, self._leaf_rows, optimize=True
        )
        # Internal sums level by level; children of heap nodes [a, b) sit
        # interleaved in [2a+1, 2b+1).
        level = 0
        while (2 << level) - 1 <= self.num_leaves - 2:
            level += 1
        for lvl in range(level, -1, -1):
            a = (1 << lvl) - 1
            b = min((2 << lvl) - 1, self.num_leaves - 1)
            if a >= b:
                continue
            tree[a:b] = tree[2 * a + 1 : 2 * b : 2] + tree[2 * a + 2 : 2 * b + 1 : 2]
        self.tree = tree

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def node_count(self) -> int:
        return self.tree.shape[0]

    @property
    def root_gram(self) -> np.ndarray:
        """Gram matrix of the full row set, A^T A."""
        return self.tree[0]

    def _descend(self, node, mass, level_mass, rng):
        """Shared tree walk given a callable producing left-child masses.

        All nodes above the deepest level are internal, so only the final
        level needs an is-leaf mask.
        """
        first_leaf = self.num_leaves - 1
        if first_leaf == 0:
            return node
        # Depth of the shallowest leaf: walk that far unmasked.
        safe_levels = 0
        while (2 << safe_levels) - 2 < first_leaf:
            safe_levels += 1
        for _ in range(safe_levels):
            left = level_mass(2 * node + 1)
            left = np.clip(left, 0.0, mass)
            go_left = rng.random(node.shape[0]) * mass < left
            node = 2 * node + 1 + (~go_left)
            mass = np.where(go_left, left, mass - left)
        walking = np.flatnonzero(node < first_leaf)
        if walking.size:
            at = node[walking]
            left = level_mass(2 * at + 1, walking)
            left = np.clip(left, 0.0, mass[walking])
            go_left = rng.random(walking.size) * mass[walking] < left
            node[walking] = 2 * at + 1 + (~go_left)
        return node

    def _resolve_leaf(self, seg, weights, rng):
        cum = np.cumsum(weights, axis=1)
        target = rng.random(seg.shape[0]) * cum[:, -1]
        local = np.argmax(cum > target[:, None], axis=1)
        return np.minimum(seg * self.leaf_size + local, self.num_rows - 1)

    def sample_batch(self, h: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one row index per row of ``h`` (shape (J, R)), each with
        probability proportional to (A[s,:] . h_d)^2."""
        h = np.atleast_2d(np.asarray(h, dtype=np.float64))
        if h.shape[1] != self.num_cols:
            raise ValueError(f"history vectors must have length {self.num_cols}")
        count = h.shape[0]
        # Quadratic forms h^T G h as flat dot products against h h^T.
        pair = (h[:, :, None] * h[:, None, :]).reshape(count, -1)
        tree_flat = self.tree.reshape(self.tree.shape[0], -1)
        mass = tree_flat[0] @ pair.T if count == 1 else pair @ tree_flat[0]
        mass = np.atleast_1d(np.asarray(mass, dtype=np.float64).reshape(-1))
        if np.any(mass <= MASS_EPS):
            raise ZeroMassError("no sampling mass under the given history vector")

        def level_mass(children, subset=None):
            rows = pair if subset is None else pair[subset]
            return np.einsum("jk,jk->j", tree_flat[children], rows)

        node = self._descend(np.zeros(count, dtype=np.int64), mass, level_mass, rng)
        seg = node - (self.num_leaves - 1)
        weights = np.einsum("jfr,jr->jf", self._leaf_rows[seg], h) ** 2
        return self._resolve_leaf(seg, weights, rng)

    def sample_batch_onehot(self, cols: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Fast path for one-hot history vectors: draw with weights
        A[:, cols]^2, using diagonal Gram gathers instead of quadratic forms."""
        cols = np.asarray(cols, dtype=np.int64)
        count = cols.shape[0]
        mass = self.tree[0, cols, cols]
        if np.any(mass <= MASS_EPS):
            raise ZeroMassError("no sampling mass in the selected columns")

        def level_mass(children, subset=None):
            c = cols if subset is None else cols[subset]
            return self.tree[children, c, c]

        node = self._descend(np.zeros(count, dtype=np.int64), mass, level_mass, rng)
        seg = node - (self.num_leaves - 1)
        weights = self._leaf_rows[seg, :, cols] ** 2
        return self._resolve_leaf(seg, weights, rng)

    def sample(self, h: np.ndarray, rng: np.random.Generator) -> int:
        return int(self.sample_batch(np.asarray(h)[None, :], rng)[0])


def build_row_sampler(a: np.ndarray, leaf_size: int | None = None) -> RowSampler:
    return RowSampler(a, leaf_size)


def row_sample(sampler: RowSampler, h: np.ndarray, rng: np.random.Generator) -> int:
    """Draw a single row index with probability (A[s,:] . h)^2 / ||A h||^2."""
    return sampler.sample(h, rng)


@dataclass
class ChainDraw:
    """One sampled chain row: its multi-index, the chain-matrix row at that
    multi-index, and the exact draw probability ||row||^2 / R."""

    multi_index: tuple
    row: np.ndarray
    probability: float


class ChainDraws:
    """A batch of chain draws, stored as arrays; indexes like a sequence of
    :class:`ChainDraw`."""

    def __init__(self, indices: np.ndarray, rows: np.ndarray, probabilities: np.ndarray):
        self.indices = indices
        self.rows = rows
        self.probabilities = probabilities

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __getitem__(self, d: int) -> ChainDraw:
        return ChainDraw(
            tuple(int(i) for i in self.indices[d]),
            self.rows[d],
            float(self.probabilities[d]),
        )

    def __iter__(self):
        return (self[d] for d in range(len(self)))


def _mirror(core: np.ndarray) -> np.ndarray:
    """Transpose each lateral slice, so right-orthonormality of the original
    becomes left-orthonormality of the mirror."""
    return np.ascontiguousarray(core.transpose(2, 1, 0))


class ChainSampler:
    """Per-core row samplers plus dirty flags for a TT core chain.

    Left-facing samplers are built over each core's left matricization
    (Algorithm-1 style); right-facing samplers over the mirrored cores are
    created lazily the first time a right draw needs them.  Both caches for a
    core are invalidated when it is marked dirty and rebuilt by
    :meth:`refresh_core`.
    """

    def __init__(self, tt):
        if isinstance(tt, TTTensor):
            self.cores = list(tt.cores)
        else:
            self.cores = [np.asarray(c, dtype=np.float64) for c in tt]
            for k in range(len(self.cores) - 1):
                if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                    raise ValueError(f"rank mismatch between cores {k} and {k + 1}")
        self.dirty = [False] * len(self.cores)
        self._left = [RowSampler(left_matricization(c)) for c in self.cores]
        self._right: list[RowSampler | None] = [None] * len(self.cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    def rebind(self, tt) -> list[int]:
        """Point at the cores of ``tt``; cores that are not the same array
        object as before are marked dirty.  Returns the dirty positions."""
        cores = tt.cores if isinstance(tt, TTTensor) else list(tt)
        if len(cores) != self.order:
            raise ValueError("cannot rebind to a chain of different length")
        changed = [k for k in range(self.order) if cores[k] is not self.cores[k]]
        for k in changed:
            self.cores[k] = cores[k]
            self.dirty[k] = True
        return changed

    def refresh_core(self, k: int) -> None:
        """Rebuild core k's samplers from its current values."""
        self._left[k] = RowSampler(left_matricization(self.cores[k]))
        self._right[k] = None
        self.dirty[k] = False

    def left_sampler(self, k: int) -> RowSampler:
        if self.dirty[k]:
            raise StateError(f"sampler for core {k} is stale; call refresh_core")
        return self._left[k]

    def right_sampler(self, k: int) -> RowSampler:
        if self.dirty[k]:
            raise StateError(f"sampler for core {k} is stale; call refresh_core")
        if self._right[k] is None:
            self._right[k] = RowSampler(left_matricization(_mirror(self.cores[k])))
        return self._right[k]


def build_chain_sampler(tt) -> ChainSampler:
    return ChainSampler(tt)


def refresh_core(cs: ChainSampler, k: int) -> None:
    cs.refresh_core(k)


def _check_orthonormal(sampler: RowSampler, k: int, side: str) -> None:
    g = sampler.root_gram
    if np.linalg.norm(g - np.eye(g.shape[0])) > 1e-6:
        raise StateError(
            f"core {k} is not {side}-orthonormal; bring the chain into "
            "canonical form before sampling"
        )


def _walk(cores, samplers, count, rng):
    """Shared walk: draw ``count`` multi-indices from a left-orthonormal core
    list, pivot-to-front, per Eqs. (4)-(6) of the sampling scheme."""
    r_out = cores[-1].shape[2]
    r_hat = rng.integers(0, r_out, size=count)
    h = np.zeros((count, r_out))
    h[np.arange(count), r_hat] = 1.0
    indices = np.empty((count, len(cores)), dtype=np.int64)
    for k in range(len(cores) - 1, -1, -1):
        r_prev = cores[k].shape[0]
        u = samplers[k].sample_batch(h, rng)
        t = u // r_prev
        indices[:, k] = t
        h = np.einsum("rjs,js->jr", cores[k][:, t, :], h, optimize=True)
    rows = chain_rows(cores, indices)
    return ChainDraws(indices, rows, (rows**2).sum(axis=1) / r_out)


def chain_sample_left(
    cs: ChainSampler, j: int, count: int, rng: np.random.Generator
) -> ChainDraws:
    """Draw ``count`` rows of the chain matrix over cores[0:j].

    Requires those cores to be left-orthonormal (a TT in canonical form with
    center >= j qualifies).  Each draw carries the multi-index
    (t_0, ..., t_{j-1}), the corresponding 1 x R_j chain row, and its exact
    probability ||row||^2 / R_j.  For j = 0 the draws are the empty
    multi-index with probability 1.
    """
    if not 0 <= j <= cs.order:
        raise IndexError(f"j must be in [0, {cs.order}], got {j}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    if j == 0:
        return ChainDraws(
            np.empty((count, 0), dtype=np.int64),
            np.ones((count, 1)),
            np.ones(count),
        )
    samplers = [cs.left_sampler(k) for k in range(j)]
    for k, s in enumerate(samplers):
        _check_orthonormal(s, k, "left")
    return _walk(cs.cores[:j], samplers, count, rng)


def chain_sample_right(
    cs: ChainSampler, j: int, count: int, rng: np.random.Generator
) -> ChainDraws:
    """Draw ``count`` rows of the transposed chain matrix over cores[j+1:].

    Requires those cores to be right-orthonormal (canonical center <= j).
    Implemented by mirroring: reverse the core order, transpose every
    lateral slice, and run the left procedure.  Multi-indices come back in
    original mode order (t_{j+1}, ..., t_{N-1}); probability is
    ||row||^2 / R_j.
    """
    if not -1 <= j < cs.order:
        raise IndexError(f"j must be in [-1, {cs.order - 1}], got {j}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    if j == cs.order - 1:
        return ChainDraws(
            np.empty((count, 0), dtype=np.int64),
            np.ones((count, 1)),
            np.ones(count),
        )
    ks = list(range(cs.order - 1, j, -1))
    samplers = [cs.right_sampler(k) for k in ks]
    for k, s in zip(ks, samplers):
        _check_orthonormal(s, k, "right")
    mirrored = [_mirror(cs.cores[k]) for k in ks]
    draws = _walk(mirrored, samplers, count, rng)
    return ChainDraws(draws.indices[:, ::-1], draws.rows, draws.probabilities)


def joint_probability(left: ChainDraw, right: ChainDraw) -> float:
    """Exact leverage-score probability of the combined off-pivot row: the
    Kronecker factorization makes the joint probability the product of the
    per-side probabilities."""
    return left.probability * right.probability


def empirical_histogram(draws: ChainDraws, dims) -> np.ndarray:
    """Empirical probability vector over linearized multi-indices.

    ``dims`` are the mode sizes of the sampled chain, in draw order; the
    flat layout is first-index-fastest, matching :func:`ttlev.tensors.linearize`.
    """
    total = int(np.prod(dims, dtype=np.int64))
    counts = np.bincount(linearize_many(draws.indices, dims), minlength=total)
    return counts / max(len(draws), 1)
