"""Dense/sparse matrix primitives: symmetric adjacency normalization,
seeded truncated SVD, and a Gaussian-entropy diagnostic.

All numerics are float64. Every operation here is a pure function and all
returned containers are frozen, so values can be shared freely across tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import DataError, NumericError

SVD_OVERSAMPLE = 8
# 4 power iterations leave a worst-case relative gap near 5e-6 against the
# exact rank-k optimum on small dense matrices; 8 brings it below 1e-8.
SVD_POWER_ITERS = 8

ENTROPY_DIAG_REG = 1e-9
ORTHONORMAL_TOL = 1e-8


def as_dense(values, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D float64 array (row-major)."""
    x = np.ascontiguousarray(values, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"{name} must be 2-D, got ndim={x.ndim}")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} contains non-finite entries")
    return x


@dataclass(frozen=True)
class CsrMatrix:
    """Immutable CSR sparse matrix with float64 values.

    row_offsets has length rows+1 and is nondecreasing; within each row the
    column indices are strictly increasing.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        indices = np.asarray(self.col_indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if offsets.shape != (self.rows + 1,):
            raise DataError("row_offsets must have length rows+1")
        if offsets[0] != 0 or offsets[-1] != len(indices):
            raise DataError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(offsets) < 0):
            raise DataError("row_offsets must be nondecreasing")
        if len(indices) != len(values):
            raise DataError("col_indices and values must have equal length")
        if len(indices) and (indices.min() < 0 or indices.max() >= self.cols):
            raise DataError("column index out of range")
        for r in range(self.rows):
            row = indices[offsets[r]:offsets[r + 1]]
            if np.any(np.diff(row) <= 0):
                raise DataError(f"column indices not strictly increasing in row {r}")
        if not np.all(np.isfinite(values)):
            raise NumericError("sparse values contain non-finite entries")
        for name, arr in (("row_offsets", offsets), ("col_indices", indices), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @cached_property
    def _scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=(self.rows, self.cols)
        )

    @staticmethod
    def from_scipy(mat) -> CsrMatrix:
        m = sp.csr_matrix(mat)
        m.sum_duplicates()
        m.sort_indices()
        return CsrMatrix(
            rows=m.shape[0],
            cols=m.shape[1],
            row_offsets=m.indptr.astype(np.int64),
            col_indices=m.indices.astype(np.int64),
            values=m.data.astype(np.float64),
        )

    @staticmethod
    def from_dense(dense) -> CsrMatrix:
        return CsrMatrix.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))

    @staticmethod
    def from_edges(n: int, edges, symmetric: bool = True) -> CsrMatrix:
        """Binary adjacency from an iterable of (i, j) pairs (deduplicated)."""
        pairs = set()
        for i, j in edges:
            pairs.add((int(i), int(j)))
            if symmetric:
                pairs.add((int(j), int(i)))
        if pairs:
            rows, cols = zip(*sorted(pairs))
            data = np.ones(len(pairs))
        else:
            rows, cols, data = [], [], []
        return CsrMatrix.from_scipy(sp.csr_matrix((data, (rows, cols)), shape=(n, n)))

    def matmul_dense(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.cols:
            raise DataError(f"sparse ({self.rows}x{self.cols}) @ dense {x.shape}: inner dims differ")
        return np.asarray(self._scipy @ x)

    def t_matmul_dense(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.rows:
            raise DataError(f"sparse.T ({self.cols}x{self.rows}) @ dense {x.shape}: inner dims differ")
        return np.asarray(self._scipy.T @ x)

    def to_dense(self) -> np.ndarray:
        return np.asarray(self._scipy.todense(), dtype=np.float64)

    def pattern(self) -> set[tuple[int, int]]:
        out = set()
        for r in range(self.rows):
            for c in self.col_indices[self.row_offsets[r]:self.row_offsets[r + 1]]:
                out.add((r, int(c)))
        return out

    def is_symmetric(self) -> bool:
        m = self._scipy
        return (m != m.T).nnz == 0

    def diagonal(self) -> np.ndarray:
        return np.asarray(self._scipy.diagonal())


def normalize_adjacency(adj: CsrMatrix) -> CsrMatrix:
    """Symmetric normalization of a binary adjacency with self-loops added.

    Returns S with S[i, j] = (A + I)[i, j] / sqrt(deg_i * deg_j), where the
    degrees count the self-loop. Input must be square, symmetric, binary,
    with an empty diagonal; asymmetric input is rejected rather than fixed.
    """
    if adj.rows != adj.cols:
        raise DataError(f"adjacency must be square, got {adj.rows}x{adj.cols}")
    if not adj.is_symmetric():
        raise DataError("adjacency must be symmetric; refusing to symmetrize implicitly")
    if adj.nnz and not np.all(adj.values == 1.0):
        raise DataError("adjacency entries must be binary (all stored values 1)")
    if np.any(adj.diagonal() != 0.0):
        raise DataError("adjacency must not carry explicit self-loops")
    a_tilde = (adj._scipy + sp.identity(adj.rows, format="csr")).tocsr()
    degrees = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degrees)
    scale = sp.diags(inv_sqrt)
    s = (scale @ a_tilde @ scale).tocsr()
    s.sort_indices()
    return CsrMatrix.from_scipy(s)


@dataclass(frozen=True)
class SvdResult:
    """Rank-k factorization X ~ U diag(s) V^T with orthonormal V columns."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=np.float64)
        if np.any(np.diff(s) > 0):
            raise NumericError("singular values must be nonincreasing")
        if np.any(s < 0):
            raise NumericError("singular values must be nonnegative")
        gram = self.V.T @ self.V
        if np.max(np.abs(gram - np.eye(gram.shape[0]))) > ORTHONORMAL_TOL:
            raise NumericError("V columns are not orthonormal")

    def reconstruction(self) -> np.ndarray:
        return (self.U * self.singular_values) @ self.V.T


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Deterministic sign convention: the largest-magnitude entry of each V
    # column is made nonnegative (ties resolved by lowest row index).
    for j in range(v.shape[1]):
        col = v[:, j]
        lead = int(np.argmax(np.abs(col)))
        if col[lead] < 0:
            v[:, j] = -col
            u[:, j] = -u[:, j]
    return u, v


def truncated_svd(x: np.ndarray, k: int, seed: int) -> SvdResult:
    """Best rank-k factorization via a seeded randomized range finder.

    A Gaussian sketch with SVD_OVERSAMPLE extra columns is refined by
    SVD_POWER_ITERS QR-stabilized power iterations, then the small projected
    matrix is factored exactly. Deterministic for a fixed seed.
    """
    x = as_dense(x, "svd input")
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise DataError(f"svd rank k={k} out of range for {n}x{d} input")
    ell = min(k + SVD_OVERSAMPLE, min(n, d))
    rng = np.random.default_rng(seed)
    sketch = rng.standard_normal((d, ell))
    q, _ = np.linalg.qr(x @ sketch)
    for _ in range(SVD_POWER_ITERS):
        z, _ = np.linalg.qr(x.T @ q)
        q, _ = np.linalg.qr(x @ z)
    projected = q.T @ x
    u_small, s, vt = np.linalg.svd(projected, full_matrices=False)
    u = q @ u_small[:, :k]
    v = vt[:k].T.copy()
    u, v = _fix_signs(u, v)
    return SvdResult(U=u, singular_values=s[:k].copy(), V=v)


class EntropyResult(NamedTuple):
    """Differential-entropy estimate in nats; degenerate when the row
    covariance is singular (entropy then reported as -inf)."""

    value: float
    degenerate: bool


def gaussian_entropy(vhat: np.ndarray) -> EntropyResult:
    """Entropy of a Gaussian fitted to the rows of a d x m matrix.

    Uses the sample covariance of the rows (ddof=1), regularized by
    ENTROPY_DIAG_REG on the diagonal before taking the determinant:
    0.5 * log((2*pi*e)^m * det(Sigma)). Diagnostic only, never trained on.
    """
    vhat = as_dense(vhat, "entropy input")
    d, m = vhat.shape
    if d <= m:
        return EntropyResult(value=-math.inf, degenerate=True)
    cov = np.cov(vhat, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    eigs = np.linalg.eigvalsh(cov)
    if eigs[0] < 1e-12 * max(1.0, eigs[-1]):
        return EntropyResult(value=-math.inf, degenerate=True)
    cov_reg = cov + ENTROPY_DIAG_REG * np.eye(m)
    sign, logdet = np.linalg.slogdet(cov_reg)
    if sign <= 0:
        return EntropyResult(value=-math.inf, degenerate=True)
    value = 0.5 * (m * math.log(2.0 * math.pi * math.e) + logdet)
    return EntropyResult(value=float(value), degenerate=False)
