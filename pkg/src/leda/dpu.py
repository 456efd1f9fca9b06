"""Domain projection unit: per-domain SVD bases refined by one shared MLP.

Each domain keeps a frozen orthonormal basis V (d_i x k, from truncated SVD
of its features); a single two-layer MLP shared by every domain maps V to a
refined basis Vhat (d_i x m), rows transformed independently:

    Vhat = relu(V @ W1 + b1) @ W2 + b2

Features are aligned into the common m-dimensional space as Xhat = X @ Vhat.
The alignment objective combines a self-reconstruction term
||X - X Vhat Vhat^T||_F^2 with an orthogonality penalty
||Vhat^T Vhat - I||_F^2 weighted by lambda.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamSet
from .errors import ConfigError
from .linalg import truncated_svd

RANK_DEFICIENCY_RTOL = 1e-10


@dataclass(frozen=True)
class DomainBasis:
    """Frozen projection basis for one domain; padded marks columns filled by
    orthonormal completion because the features had rank below k."""

    domain_id: str
    V: np.ndarray
    padded: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.V, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "V", v)


@dataclass(frozen=True)
class DpuConfig:
    k: int = 64
    h: int = 128
    m: int = 64
    lam: float = 1.0

    def __post_init__(self):
        if min(self.k, self.h, self.m) < 1:
            raise ConfigError("projection dims k, h, m must be positive")
        if self.lam < 0:
            raise ConfigError("orthogonality weight lambda must be >= 0")


@dataclass
class DpuParams:
    """Shared MLP parameters; one instance serves every domain."""

    W1: Node
    b1: Node
    W2: Node
    b2: Node

    PARAM_NAMES = ("dpu.W1", "dpu.b1", "dpu.W2", "dpu.b2")

    @staticmethod
    def register(params: ParamSet, config: DpuConfig, rng: np.random.Generator) -> "DpuParams":
        w1 = params.add("dpu.W1", ad.glorot_uniform(rng, config.k, config.h))
        b1 = params.add("dpu.b1", np.zeros((1, config.h)))
        w2 = params.add("dpu.W2", ad.glorot_uniform(rng, config.h, config.m))
        b2 = params.add("dpu.b2", np.zeros((1, config.m)))
        return DpuParams(W1=w1, b1=b1, W2=w2, b2=b2)

    @staticmethod
    def from_paramset(params: ParamSet) -> "DpuParams":
        w1, b1, w2, b2 = (params[name] for name in DpuParams.PARAM_NAMES)
        return DpuParams(W1=w1, b1=b1, W2=w2, b2=b2)


def init_basis(x: np.ndarray, k: int, seed: int, domain_id: str = "") -> DomainBasis:
    """Right singular vectors of x as a d x k orthonormal basis.

    When x has rank below k the trailing columns are replaced by a seeded
    orthonormal completion and the padded flag is set.
    """
    result = truncated_svd(x, k, seed)
    s = result.singular_values
    v = np.array(result.V)
    threshold = RANK_DEFICIENCY_RTOL * max(s[0], 1e-300)
    good = int(np.sum(s > threshold))
    padded = good < k
    if padded:
        warnings.warn(
            f"domain '{domain_id}': feature rank {good} below requested k={k}; "
            "padding basis with orthonormal completion"
        )
        d = v.shape[0]
        rng = np.random.default_rng([seed, 1])
        base = v[:, :good]
        candidates = rng.standard_normal((d, k - good))
        if good:
            candidates -= base @ (base.T @ candidates)
        q, _ = np.linalg.qr(candidates)
        v = np.concatenate([base, q[:, : k - good]], axis=1)
        for j in range(v.shape[1]):
            lead = int(np.argmax(np.abs(v[:, j])))
            if v[lead, j] < 0:
                v[:, j] = -v[:, j]
    return DomainBasis(domain_id=domain_id, V=v, padded=padded)


def trans(v: Node | np.ndarray, params: DpuParams) -> Node:
    """Refine a basis through the shared MLP; rows map independently."""
    if not isinstance(v, Node):
        v = ad.constant(v, "basis")
    hidden = ad.relu(ad.add_row_bias(ad.matmul(v, params.W1), params.b1))
    return ad.add_row_bias(ad.matmul(hidden, params.W2), params.b2)


def align(x: Node | np.ndarray, vhat: Node) -> Node:
    """Project features into the common space: Xhat = X @ Vhat."""
    if not isinstance(x, Node):
        x = ad.constant(x, "features")
    return ad.matmul(x, vhat)


def alignment_penalties(x: Node | np.ndarray, vhat: Node) -> tuple[Node, Node]:
    """Reconstruction and orthogonality penalties for one domain."""
    if not isinstance(x, Node):
        x = ad.constant(x, "features")
    projected = ad.matmul(ad.matmul(x, vhat), vhat, transpose_b=True)
    recon = ad.frobenius_sq(ad.sub(x, projected))
    gram = ad.matmul(vhat, vhat, transpose_a=True)
    eye = ad.constant(np.eye(vhat.shape[1]), "identity")
    ortho = ad.frobenius_sq(ad.sub(gram, eye))
    return recon, ortho


def loss_align(
    domains: list[tuple[np.ndarray, np.ndarray]],
    params: DpuParams,
    lam: float,
) -> tuple[Node, Node, Node]:
    """Summed alignment loss over (features, basis) pairs, in list order.

    Returns (total, recon, ortho) with total = recon + lam * ortho.
    """
    if not domains:
        raise ConfigError("loss_align needs at least one domain")
    recon_total: Node | None = None
    ortho_total: Node | None = None
    for x, v in domains:
        vhat = trans(v, params)
        recon, ortho = alignment_penalties(x, vhat)
        recon_total = recon if recon_total is None else ad.add(recon_total, recon)
        ortho_total = ortho if ortho_total is None else ad.add(ortho_total, ortho)
    total = ad.add(recon_total, ad.scale(ortho_total, lam))
    return total, recon_total, ortho_total
