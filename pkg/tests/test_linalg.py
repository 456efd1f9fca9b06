import math

import numpy as np
import pytest

from leda.errors import DataError
from leda.linalg import (
    CsrMatrix,
    gaussian_entropy,
    normalize_adjacency,
    truncated_svd,
)

from oracles import best_rank_k_error


def adjacency_from_edges(n, edges):
    return CsrMatrix.from_edges(n, edges, symmetric=True)


class TestNormalizeAdjacency:
    def test_single_node(self):
        a = adjacency_from_edges(1, [])
        s = normalize_adjacency(a)
        assert np.allclose(s.to_dense(), [[1.0]])

    def test_two_node_edge(self):
        # degrees with self-loops are (2, 2), so every entry is 1/2
        s = normalize_adjacency(adjacency_from_edges(2, [(0, 1)]))
        assert np.allclose(s.to_dense(), [[0.5, 0.5], [0.5, 0.5]])

    def test_three_node_path(self):
        s = normalize_adjacency(adjacency_from_edges(3, [(0, 1), (1, 2)])).to_dense()
        assert s[0][0] == pytest.approx(0.5)
        assert s[0][1] == pytest.approx(1.0 / math.sqrt(6.0))
        assert s[1][1] == pytest.approx(1.0 / 3.0)

    def test_rejects_non_square(self):
        bad = CsrMatrix.from_dense(np.zeros((2, 3)))
        with pytest.raises(DataError):
            normalize_adjacency(bad)

    def test_rejects_asymmetric(self):
        bad = CsrMatrix.from_dense([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(DataError, match="symmetric"):
            normalize_adjacency(bad)

    def test_rejects_nonbinary(self):
        bad = CsrMatrix.from_dense([[0.0, 2.0], [2.0, 0.0]])
        with pytest.raises(DataError, match="binary"):
            normalize_adjacency(bad)

    def test_rejects_explicit_self_loop(self):
        bad = CsrMatrix.from_dense([[1.0, 1.0], [1.0, 0.0]])
        with pytest.raises(DataError, match="self-loop"):
            normalize_adjacency(bad)

    def test_output_symmetric_and_pattern_matches_self_looped_input(self):
        rng = np.random.default_rng(7)
        n = 12
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
        a = adjacency_from_edges(n, edges)
        s = normalize_adjacency(a)
        dense = s.to_dense()
        assert np.allclose(dense, dense.T)
        expected_pattern = a.pattern() | {(i, i) for i in range(n)}
        assert s.pattern() == expected_pattern

    def test_row_sums_bounded_by_node_count(self):
        s = normalize_adjacency(adjacency_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4)]))
        assert np.all(s.to_dense().sum(axis=1) <= 5.0)


class TestCsrInvariants:
    def test_rejects_bad_offsets(self):
        with pytest.raises(DataError):
            CsrMatrix(rows=2, cols=2, row_offsets=[0, 2], col_indices=[0, 1], values=[1.0, 1.0])

    def test_rejects_unsorted_columns(self):
        with pytest.raises(DataError, match="strictly increasing"):
            CsrMatrix(
                rows=1, cols=3, row_offsets=[0, 2], col_indices=[2, 0], values=[1.0, 1.0]
            )

    def test_rejects_column_out_of_range(self):
        with pytest.raises(DataError, match="out of range"):
            CsrMatrix(rows=1, cols=2, row_offsets=[0, 1], col_indices=[5], values=[1.0])


class TestTruncatedSvd:
    def test_diagonal_rank_one(self):
        res = truncated_svd(np.diag([3.0, 2.0]), k=1, seed=0)
        assert res.singular_values[0] == pytest.approx(3.0)
        assert np.abs(res.V[:, 0]) == pytest.approx([1.0, 0.0], abs=1e-12)
        # sign convention: leading entry nonnegative
        assert res.V[0, 0] > 0

    def test_identity_all_ones(self):
        res = truncated_svd(np.eye(4), k=4, seed=1)
        assert np.allclose(res.singular_values, 1.0)

    def test_matches_oracle_on_random_matrix(self):
        rng = np.random.default_rng(42)
        x = rng.standard_normal((20, 10))
        res = truncated_svd(x, k=5, seed=3)
        err = np.linalg.norm(x - res.reconstruction())
        assert err == pytest.approx(best_rank_k_error(x, 5), rel=1e-6)

    def test_monotone_error_in_rank(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((15, 12))
        errs = []
        for k in (2, 4, 6, 8):
            res = truncated_svd(x, k=k, seed=11)
            errs.append(np.linalg.norm(x - res.reconstruction()))
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))

    def test_v_columns_orthonormal(self):
        rng = np.random.default_rng(5)
        for trial in range(5):
            x = rng.standard_normal((18, 9))
            res = truncated_svd(x, k=4, seed=trial)
            gram = res.V.T @ res.V
            assert np.max(np.abs(gram - np.eye(4))) < 1e-8

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((10, 8))
        a = truncated_svd(x, k=3, seed=77)
        b = truncated_svd(x, k=3, seed=77)
        assert np.array_equal(a.V, b.V)
        assert np.array_equal(a.U, b.U)
        assert np.array_equal(a.singular_values, b.singular_values)

    def test_rank_out_of_range(self):
        with pytest.raises(DataError):
            truncated_svd(np.eye(3), k=4, seed=0)
        with pytest.raises(DataError):
            truncated_svd(np.eye(3), k=0, seed=0)


class TestGaussianEntropy:
    def test_one_dim_unit_variance(self):
        # rows (1, 0, -1) have sample variance exactly 1 (ddof=1)
        res = gaussian_entropy(np.array([[1.0], [0.0], [-1.0]]))
        assert not res.degenerate
        assert res.value == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-6)

    def test_identity_covariance(self):
        # scaled +-1 design: sample covariance is exactly diag(1, 1)
        a = math.sqrt(0.75)
        rows = np.array([[a, a], [-a, a], [a, -a], [-a, -a]])
        res = gaussian_entropy(rows)
        assert not res.degenerate
        assert res.value == pytest.approx(math.log(2 * math.pi * math.e), abs=1e-6)

    def test_identical_rows_degenerate(self):
        res = gaussian_entropy(np.ones((6, 2)))
        assert res.degenerate
        assert res.value == -math.inf

    def test_too_few_rows_degenerate(self):
        res = gaussian_entropy(np.random.default_rng(0).standard_normal((3, 3)))
        assert res.degenerate

    def test_scaling_raises_entropy_by_m_log_c(self):
        rng = np.random.default_rng(4)
        vhat = rng.standard_normal((40, 5))
        base = gaussian_entropy(vhat)
        for c in (2.0, 3.5):
            scaled = gaussian_entropy(c * vhat)
            assert scaled.value - base.value == pytest.approx(5 * math.log(c), abs=1e-6)
