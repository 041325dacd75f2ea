import numpy as np
import pytest

from ttlev import (
    DenseTensor,
    SvdConfig,
    fit,
    is_canonical,
    rtt_svd,
    synth_sparse,
    tt_random,
    tt_svd,
    tt_to_dense,
)


def stepwise_svd_tail_energy(x, ranks):
    """Oracle: rerun the sequential truncation, summing the discarded
    squared singular values of every step."""
    dims = x.dims
    mat = x.flat.reshape(dims[0], -1, order="F")
    r_prev = 1
    tail = 0.0
    for k in range(len(dims) - 1):
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = min(ranks[k], len(s))
        tail += float((s[r:] ** 2).sum())
        mat = (s[:r, None] * vt[:r]).reshape(r * dims[k + 1], -1, order="F")
        r_prev = r
    return tail


class TestTTSVD:
    def test_full_rank_exact(self):
        rng = np.random.default_rng(0)
        x = DenseTensor(rng.standard_normal((8, 8, 8)))
        with pytest.warns(RuntimeWarning, match="clipped"):
            tt = tt_svd(x, (64, 64))
        assert 1.0 - fit(tt, x) <= 1e-10

    def test_exact_rank_recovery(self):
        truth = tt_random((7, 6, 5), (2, 2), seed=1)
        x = tt_to_dense(truth)
        tt = tt_svd(x, (2, 2))
        assert fit(tt, x) >= 1.0 - 1e-10

    def test_truncation_error_bounded_by_tail_energy(self):
        rng = np.random.default_rng(2)
        for trial in range(5):
            x = DenseTensor(rng.standard_normal((6, 6, 6)))
            tt = tt_svd(x, (3, 3))
            err_sq = (1.0 - fit(tt, x)) ** 2 * x.norm() ** 2
            bound = stepwise_svd_tail_energy(x, [3, 3])
            assert err_sq <= bound * (1.0 + 1e-8) + 1e-12

    def test_canonical_at_last_core(self):
        rng = np.random.default_rng(3)
        x = DenseTensor(rng.standard_normal((5, 4, 6)))
        tt = tt_svd(x, (3, 3))
        assert tt.ortho_center == 2
        assert is_canonical(tt)

    def test_rank_chain_valid(self):
        rng = np.random.default_rng(4)
        x = DenseTensor(rng.standard_normal((2, 5, 2)))
        with pytest.warns(RuntimeWarning, match="clipped"):
            tt = tt_svd(x, (9, 9))
        assert tt.ranks == (1, 2, 2, 1)
        for k in range(tt.order - 1):
            assert tt.cores[k].shape[2] == tt.cores[k + 1].shape[0]

    def test_sparse_densified_under_cap(self):
        sp = synth_sparse((6, 6, 6), (2, 2), nnz=50, noise_sigma=0.1, seed=5)
        tt = tt_svd(sp, (2, 2))
        assert fit(tt, sp.to_dense()) == pytest.approx(
            fit(tt_svd(sp.to_dense(), (2, 2)), sp.to_dense())
        )

    def test_sparse_rejected_over_cap(self):
        sp = synth_sparse((50, 50, 50), (2, 2), nnz=100, noise_sigma=0.0, seed=6)
        with pytest.raises(ValueError, match="densify"):
            tt_svd(sp, (2, 2), max_entries=1000)


class TestRandomizedTTSVD:
    def test_exact_rank_with_oversampling(self):
        truth = tt_random((10, 9, 8), (3, 3), seed=7)
        x = tt_to_dense(truth)
        tt = rtt_svd(x, (3, 3), SvdConfig(oversampling=10, seed=8))
        assert fit(tt, x) >= 0.999

    def test_same_seed_identical(self):
        rng = np.random.default_rng(9)
        x = DenseTensor(rng.standard_normal((6, 6, 6)))
        a = rtt_svd(x, (2, 2), SvdConfig(seed=10))
        b = rtt_svd(x, (2, 2), SvdConfig(seed=10))
        assert all(np.array_equal(u, v) for u, v in zip(a.cores, b.cores))

    def test_never_beats_deterministic(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            x = DenseTensor(rng.standard_normal((5, 5, 5)))
            det = fit(tt_svd(x, (2, 2)), x)
            ran = fit(rtt_svd(x, (2, 2), SvdConfig(seed=trial)), x)
            assert ran <= det + 1e-10

    def test_canonical_output(self):
        rng = np.random.default_rng(12)
        x = DenseTensor(rng.standard_normal((5, 6, 4)))
        tt = rtt_svd(x, (2, 3), SvdConfig(seed=13))
        assert is_canonical(tt)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SvdConfig(oversampling=-1)
        with pytest.raises(ValueError):
            SvdConfig(power_iterations=-1)
