import numpy as np
import pytest

from ttlev import (
    StateError,
    ZeroMassError,
    build_chain_sampler,
    build_row_sampler,
    chain_sample_left,
    chain_sample_right,
    empirical_histogram,
    joint_probability,
    leverage_scores,
    linearize,
    orthogonalize_to,
    random_left_orthonormal_chain,
    row_sample,
    tt_random,
)
from ttlev.als import offmode_design
from ttlev.sampler import RowSampler
from ttlev.ttcore import chain_matrix, left_chain, right_chain


def squared_norm_distribution(cores):
    """Brute-force oracle: squared row norms of the materialized chain."""
    mat = chain_matrix(cores)
    return (mat**2).sum(axis=1) / mat.shape[1]


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


class TestRowSampler:
    def test_single_row(self):
        a = np.array([[1.0, 2.0]])
        s = build_row_sampler(a)
        assert s.num_leaves == 1
        assert np.allclose(s.root_gram, np.outer(a[0], a[0]))

    def test_identity_root_gram(self):
        s = build_row_sampler(np.eye(2))
        assert np.allclose(s.root_gram, np.eye(2))

    def test_random_root_gram(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((64, 4))
        s = build_row_sampler(a)
        assert np.abs(s.root_gram - a.T @ a).max() <= 1e-12

    def test_parent_equals_child_sum_everywhere(self):
        rng = np.random.default_rng(1)
        for m in (1, 2, 5, 13, 16, 37, 100):
            a = rng.standard_normal((m, 3))
            s = build_row_sampler(a)
            scale = np.abs(s.root_gram).max()
            for v in range(s.num_leaves - 1):
                gap = np.abs(s.tree[v] - s.tree[2 * v + 1] - s.tree[2 * v + 2]).max()
                assert gap <= 1e-10 * max(scale, 1.0)

    def test_node_count(self):
        rng = np.random.default_rng(2)
        for m in (1, 3, 4, 9, 64, 65):
            for r in (1, 2, 5):
                s = build_row_sampler(rng.standard_normal((m, r)))
                assert s.node_count == 2 * ((m + r - 1) // r) - 1

    def test_deterministic_mass(self):
        s = build_row_sampler(np.eye(2))
        rng = np.random.default_rng(3)
        draws = [row_sample(s, np.array([1.0, 0.0]), rng) for _ in range(50)]
        assert set(draws) == {0}

    def test_hand_computed_masses(self):
        # Rows [1,0] and [0,2] against h=[1,1]: weights 1 and 4.
        s = build_row_sampler(np.array([[1.0, 0.0], [0.0, 2.0]]))
        rng = np.random.default_rng(4)
        hits = s.sample_batch(np.tile([1.0, 1.0], (100_000, 1)), rng)
        assert (hits == 1).mean() == pytest.approx(0.8, abs=0.01)

    def test_distribution_oracle(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((32, 3))
        h = rng.standard_normal(3)
        weights = (a @ h) ** 2
        s = build_row_sampler(a)
        draws = s.sample_batch(np.tile(h, (200_000, 1)), np.random.default_rng(6))
        emp = np.bincount(draws, minlength=32) / 200_000
        assert tv_distance(emp, weights / weights.sum()) <= 0.01

    def test_zero_mass_raises(self):
        s = build_row_sampler(np.array([[1.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(ZeroMassError):
            row_sample(s, np.array([0.0, 1.0]), np.random.default_rng(7))


class TestChainSampler:
    def test_single_core(self):
        cores = random_left_orthonormal_chain((6,), (2,), seed=8)
        cs = build_chain_sampler(cores)
        assert cs.order == 1
        draws = chain_sample_left(cs, 1, 50_000, np.random.default_rng(9))
        # Base case: slice i drawn with frequency ||core[:, i, :]||^2 / R.
        expected = (cores[0] ** 2).sum(axis=(0, 2)) / cores[0].shape[2]
        emp = empirical_histogram(draws, (6,))
        assert tv_distance(emp, expected) <= 0.01

    def test_node_count_formula(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            dims = tuple(rng.integers(2, 7, size=3))
            ranks = (
                int(rng.integers(1, dims[0] + 1)),
                int(rng.integers(1, 4)),
                int(rng.integers(1, 4)),
            )
            try:
                cores = random_left_orthonormal_chain(dims, ranks, seed=int(rng.integers(1e6)))
            except ValueError:
                continue
            cs = build_chain_sampler(cores)
            for k, core in enumerate(cores):
                m = core.shape[0] * core.shape[1]
                f = core.shape[2]
                assert cs.left_sampler(k).node_count == 2 * ((m + f - 1) // f) - 1

    def test_refresh_rebuilds_only_target(self):
        cores = random_left_orthonormal_chain((4, 3, 5), (2, 3, 2), seed=11)
        cs = build_chain_sampler(cores)
        trees = [cs.left_sampler(k).tree.copy() for k in range(3)]
        sampler_ids = [id(cs._left[k]) for k in range(3)]
        cs.refresh_core(1)
        assert id(cs._left[0]) == sampler_ids[0]
        assert id(cs._left[2]) == sampler_ids[2]
        assert np.array_equal(cs.left_sampler(0).tree, trees[0])
        assert np.array_equal(cs.left_sampler(2).tree, trees[2])
        # No-op rewrite: identical Grams.
        assert np.array_equal(cs.left_sampler(1).tree, trees[1])

    def test_zeroed_core_draw_errors(self):
        cores = random_left_orthonormal_chain((4, 3), (2, 2), seed=12)
        cs = build_chain_sampler(cores)
        cs.cores[1] = np.zeros_like(cs.cores[1])
        cs.dirty[1] = True
        cs.refresh_core(1)
        assert np.abs(cs.left_sampler(1).root_gram).max() == 0.0
        with pytest.raises((ZeroMassError, StateError)):
            chain_sample_left(cs, 2, 10, np.random.default_rng(13))

    def test_dirty_sampler_raises(self):
        cores = random_left_orthonormal_chain((4, 3), (2, 2), seed=14)
        cs = build_chain_sampler(cores)
        cs.dirty[0] = True
        with pytest.raises(StateError):
            chain_sample_left(cs, 2, 10, np.random.default_rng(15))

    def test_non_orthonormal_raises(self):
        tt = tt_random((4, 3, 5), (2, 3), seed=16)
        cs = build_chain_sampler(tt)
        with pytest.raises(StateError, match="orthonormal"):
            chain_sample_left(cs, 2, 10, np.random.default_rng(17))


class TestChainSampleLeft:
    def test_three_core_distribution(self):
        cores = random_left_orthonormal_chain((4, 3, 5), (2, 3, 2), seed=18)
        cs = build_chain_sampler(cores)
        draws = chain_sample_left(cs, 3, 200_000, np.random.default_rng(19))
        emp = empirical_histogram(draws, (4, 3, 5))
        assert tv_distance(emp, squared_norm_distribution(cores)) <= 0.01

    def test_draw_fields(self):
        cores = random_left_orthonormal_chain((4, 3), (2, 2), seed=20)
        cs = build_chain_sampler(cores)
        draws = chain_sample_left(cs, 2, 100, np.random.default_rng(21))
        exact = squared_norm_distribution(cores)
        for d in list(draws)[:10]:
            row = chain_matrix([c[:, [i], :] for c, i in zip(cores, d.multi_index)])
            assert np.allclose(d.row, row[0], atol=1e-12)
            lin = linearize(d.multi_index, (4, 3))
            assert d.probability == pytest.approx(exact[lin], abs=1e-12)
            assert 0.0 < d.probability <= 1.0

    def test_conditional_matches_trace_oracle(self):
        # Fix the last index by rejection; the conditional law of the middle
        # index must follow the trace formula with the history matrix.
        cores = random_left_orthonormal_chain((4, 3, 5), (2, 3, 2), seed=22)
        cs = build_chain_sampler(cores)
        draws = chain_sample_left(cs, 3, 200_000, np.random.default_rng(23))
        t3_counts = np.bincount(draws.indices[:, 2], minlength=5)
        t3_star = int(np.argmax(t3_counts))
        keep = draws.indices[:, 2] == t3_star
        cond_emp = np.bincount(draws.indices[keep, 1], minlength=3) / keep.sum()
        history = cores[2][:, t3_star, :]
        cond_oracle = np.array(
            [
                np.trace(
                    history.T
                    @ cores[1][:, t2, :].T
                    @ cores[1][:, t2, :]
                    @ history
                )
                for t2 in range(3)
            ]
        )
        cond_oracle /= cond_oracle.sum()
        assert tv_distance(cond_emp, cond_oracle) <= 0.02

    def test_empty_prefix(self):
        cores = random_left_orthonormal_chain((4,), (2,), seed=24)
        cs = build_chain_sampler(cores)
        draws = chain_sample_left(cs, 0, 5, np.random.default_rng(25))
        assert len(draws) == 5
        assert draws[0].multi_index == ()
        assert draws[0].probability == 1.0


class TestChainSampleRight:
    def _canonical_tt(self, seed):
        return orthogonalize_to(tt_random((4, 3, 5), (2, 3), seed=seed), 0)

    def test_last_core_base_case(self):
        tt = self._canonical_tt(26)
        cs = build_chain_sampler(tt)
        draws = chain_sample_right(cs, 1, 100_000, np.random.default_rng(27))
        core = tt.cores[2]
        expected = (core**2).sum(axis=(0, 2)) / core.shape[0]
        emp = empirical_histogram(draws, (5,))
        assert tv_distance(emp, expected) <= 0.01

    def test_suffix_distribution(self):
        tt = self._canonical_tt(28)
        cs = build_chain_sampler(tt)
        draws = chain_sample_right(cs, 0, 200_000, np.random.default_rng(29))
        rc = right_chain(tt, 0)
        exact = (rc**2).sum(axis=0) / rc.shape[0]
        emp = empirical_histogram(draws, (3, 5))
        assert tv_distance(emp, exact) <= 0.01

    def test_mirroring_identity(self):
        # Right sampling on the chain equals left sampling on the mirrored
        # chain: the oracle probabilities agree exactly.
        tt = self._canonical_tt(30)
        rc = right_chain(tt, 0)
        exact_right = (rc**2).sum(axis=0) / rc.shape[0]
        mirrored = [
            np.ascontiguousarray(c.transpose(2, 1, 0)) for c in tt.cores[:0:-1]
        ]
        mirror_dist = squared_norm_distribution(mirrored)
        # Reindex: mirrored order is (t3, t2); original is (t2, t3).
        m_dims = (5, 3)
        remap = np.empty_like(mirror_dist)
        for t3 in range(5):
            for t2 in range(3):
                remap[linearize((t2, t3), (3, 5))] = mirror_dist[
                    linearize((t3, t2), m_dims)
                ]
        assert np.abs(remap - exact_right).max() <= 1e-12

    def test_empty_suffix(self):
        tt = self._canonical_tt(31)
        cs = build_chain_sampler(tt)
        draws = chain_sample_right(cs, 2, 4, np.random.default_rng(32))
        assert draws[0].multi_index == ()
        assert draws[0].probability == 1.0


class TestJointProbability:
    def test_no_left_part(self):
        tt = orthogonalize_to(tt_random((4, 3, 5), (2, 3), seed=33), 0)
        cs = build_chain_sampler(tt)
        rng = np.random.default_rng(34)
        left = chain_sample_left(cs, 0, 3, rng)
        right = chain_sample_right(cs, 0, 3, rng)
        assert joint_probability(left[0], right[0]) == pytest.approx(
            right[0].probability
        )

    def test_rank_one_deterministic(self):
        cores = [np.ones((1, 1, 1)), np.ones((1, 1, 1))]
        cs = build_chain_sampler(cores)
        rng = np.random.default_rng(35)
        left = chain_sample_left(cs, 2, 2, rng)
        assert left[0].probability == pytest.approx(1.0)
        tt = orthogonalize_to(tt_random((1, 1), (1,), seed=36), 0)
        cs2 = build_chain_sampler(tt)
        right = chain_sample_right(cs2, 0, 2, rng)
        assert joint_probability(left[0], right[0]) == pytest.approx(1.0)

    def test_matches_pseudo_inverse_oracle(self):
        # Leverage scores of the materialized Kronecker design, computed with
        # the pseudo-inverse definition, divided by R_{j-1} R_j.
        tt = orthogonalize_to(tt_random((3, 4, 2, 3), (2, 3, 2), seed=37), 2)
        cs = build_chain_sampler(tt)
        rng = np.random.default_rng(38)
        left = chain_sample_left(cs, 2, 50, rng)
        right = chain_sample_right(cs, 2, 50, rng)
        design = offmode_design(left_chain(tt, 2), right_chain(tt, 2).T)
        scores = leverage_scores(design)
        r_total = tt.cores[2].shape[0] * tt.cores[2].shape[2]
        pre_dims = (3, 4)
        post_dims = (3,)
        pre = int(np.prod(pre_dims))
        for d in range(50):
            l_lin = linearize(left[d].multi_index, pre_dims)
            r_lin = linearize(right[d].multi_index, post_dims)
            row = l_lin + pre * r_lin
            expected = scores[row] / r_total
            assert joint_probability(left[d], right[d]) == pytest.approx(
                expected, abs=1e-12
            )


class TestDistributionIdentities:
    def test_mixture_identity_exact(self):
        # 1/R sum_r (A[:, r])^2 equals the squared-row-norm distribution.
        cores = random_left_orthonormal_chain((3, 4, 2), (2, 2, 3), seed=39)
        mat = chain_matrix(cores)
        mixture = (mat**2 / mat.shape[1]).sum(axis=1)
        assert np.abs(mixture - squared_norm_distribution(cores)).max() <= 1e-12

    def test_normalization(self):
        cores = random_left_orthonormal_chain((5, 2, 4), (3, 2, 2), seed=40)
        assert squared_norm_distribution(cores).sum() == pytest.approx(
            1.0, abs=1e-10
        )

    def test_marginalization_over_start_column(self):
        # Pooled draws (the sampler marginalizes the uniform column choice
        # internally) match the row-norm law.
        cores = random_left_orthonormal_chain((3, 4), (2, 3), seed=41)
        cs = build_chain_sampler(cores)
        draws = chain_sample_left(cs, 2, 200_000, np.random.default_rng(42))
        emp = empirical_histogram(draws, (3, 4))
        assert tv_distance(emp, squared_norm_distribution(cores)) <= 0.01


class TestBatchSemantics:
    def test_streams_are_independent_of_batch_split(self):
        # Drawing 2x500 with spawned child streams equals nothing in
        # particular, but each batch must be reproducible from its seed.
        cores = random_left_orthonormal_chain((4, 3), (2, 2), seed=43)
        cs = build_chain_sampler(cores)
        a = chain_sample_left(cs, 2, 500, np.random.default_rng(44))
        b = chain_sample_left(cs, 2, 500, np.random.default_rng(44))
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.rows, b.rows)

    def test_row_sampler_on_tall_tree(self):
        # Aggregate the 4096 rows into 64 coarse bins so the multinomial
        # noise floor sits well under the tolerance.
        rng = np.random.default_rng(45)
        a = rng.standard_normal((1 << 12, 4))
        s = RowSampler(a)
        h = rng.standard_normal(4)
        draws = s.sample_batch(np.tile(h, (100_000, 1)), np.random.default_rng(46))
        w = (a @ h) ** 2
        emp = np.bincount(draws, minlength=a.shape[0]) / 100_000
        coarse_emp = emp.reshape(64, -1).sum(axis=1)
        coarse_p = (w / w.sum()).reshape(64, -1).sum(axis=1)
        assert tv_distance(coarse_emp, coarse_p) <= 0.02
