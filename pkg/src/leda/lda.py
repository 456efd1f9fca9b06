"""Latent distribution alignment: a shared variational GCN over aligned
features of every domain.

A single-layer GCN produces a semantic base, two linear GCN heads read off
the posterior mean and log-variance, a sample is drawn by reparameterization,
and a linear GCN decoder reconstructs the aligned features. The per-domain
objective is squared reconstruction error plus a KL pull of the posterior
toward the shared standard-normal prior; both are averaged over nodes so the
loss scale does not grow with graph size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamSet
from .errors import ConfigError
from .linalg import CsrMatrix

LOG_SIGMA_CLAMP = 10.0


@dataclass(frozen=True)
class LdaConfig:
    h_e: int = 256
    z: int = 128
    beta_kl: float = 1.0

    def __post_init__(self):
        if self.h_e < 1 or self.z < 1:
            raise ConfigError("encoder width h_e and latent dim z must be positive")
        if self.beta_kl < 0:
            raise ConfigError("beta_kl must be >= 0")


@dataclass
class LdaParams:
    """Encoder base/mean/log-variance weights and decoder weight, shared by
    every domain (no biases)."""

    W_base: Node
    W_mu: Node
    W_sigma: Node
    W_dec: Node

    PARAM_NAMES = ("lda.W_base", "lda.W_mu", "lda.W_sigma", "lda.W_dec")

    @staticmethod
    def register(
        params: ParamSet, m: int, config: LdaConfig, rng: np.random.Generator
    ) -> "LdaParams":
        w_base = params.add("lda.W_base", ad.glorot_uniform(rng, m, config.h_e))
        w_mu = params.add("lda.W_mu", ad.glorot_uniform(rng, config.h_e, config.z))
        w_sigma = params.add("lda.W_sigma", ad.glorot_uniform(rng, config.h_e, config.z))
        w_dec = params.add("lda.W_dec", ad.glorot_uniform(rng, config.z, m))
        return LdaParams(W_base=w_base, W_mu=w_mu, W_sigma=w_sigma, W_dec=w_dec)

    @staticmethod
    def from_paramset(params: ParamSet) -> "LdaParams":
        w_base, w_mu, w_sigma, w_dec = (params[name] for name in LdaParams.PARAM_NAMES)
        return LdaParams(W_base=w_base, W_mu=w_mu, W_sigma=w_sigma, W_dec=w_dec)


@dataclass
class LatentState:
    """Per-domain encoder outputs; z_sample/eps filled by reparameterization
    and satisfy z_sample = mu + exp(log_sigma) * eps elementwise."""

    z_base: Node
    mu: Node
    log_sigma: Node
    z_sample: Node | None = None
    eps: np.ndarray | None = None


def encode(xhat: Node | np.ndarray, s: CsrMatrix, params: LdaParams) -> LatentState:
    """Posterior parameters: base GCN with ReLU, then linear mean and
    log-variance heads over one more propagation."""
    if not isinstance(xhat, Node):
        xhat = ad.constant(xhat, "aligned_features")
    z_base = ad.relu(ad.sparse_matmul(s, ad.matmul(xhat, params.W_base)))
    propagated = ad.sparse_matmul(s, z_base)
    mu = ad.matmul(propagated, params.W_mu)
    log_sigma = ad.matmul(propagated, params.W_sigma)
    return LatentState(z_base=z_base, mu=mu, log_sigma=log_sigma)


def draw_noise(shape: tuple[int, int], seed) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def reparameterize_with_noise(mu: Node, log_sigma: Node, eps: np.ndarray) -> Node:
    if eps.shape != mu.shape:
        raise ConfigError(f"noise shape {eps.shape} must match mu shape {mu.shape}")
    return ad.add(mu, ad.mul(ad.exp(log_sigma), ad.constant(eps, "eps")))


def reparameterize(mu: Node, log_sigma: Node, seed) -> Node:
    """Sample z = mu + exp(log_sigma) * eps with eps ~ N(0, I) from the seed;
    gradients flow through mu and log_sigma, eps is a constant."""
    return reparameterize_with_noise(mu, log_sigma, draw_noise(mu.shape, seed))


def decode(z: Node, s: CsrMatrix, params: LdaParams) -> Node:
    """Linear GCN decoder back to the aligned feature space."""
    return ad.matmul(ad.sparse_matmul(s, z), params.W_dec)


def kl_to_prior(mu: Node, log_sigma: Node) -> Node:
    """KL(N(mu, exp(log_sigma)^2) || N(0, I)), summed over latent dims and
    averaged over nodes. log_sigma is clamped to +-10 before exponentiation."""
    if mu.shape != log_sigma.shape:
        raise ConfigError(f"mu {mu.shape} and log_sigma {log_sigma.shape} must match")
    ls = ad.clip(log_sigma, -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    two_ls = ad.scale(ls, 2.0)
    ones = ad.constant(np.ones(mu.shape), "ones")
    per_entry = ad.sub(ad.sub(ad.add(ad.square(mu), ad.exp(two_ls)), ones), two_ls)
    total = ad.scale(ad.reduce_sum(per_entry), 0.5)
    return ad.scale(total, 1.0 / mu.shape[0])


def loss_total_domain(
    xhat: Node | np.ndarray,
    s: CsrMatrix,
    params: LdaParams,
    seed,
    beta_kl: float,
    eps: np.ndarray | None = None,
) -> tuple[Node, Node, Node]:
    """Negated per-domain evidence bound: squared reconstruction of the
    aligned features plus beta_kl times the KL alignment term.

    Returns (loss, recon, kl). Pass eps to freeze the sampling noise
    (gradient checks); otherwise it is drawn from the seed.
    """
    if not isinstance(xhat, Node):
        xhat = ad.constant(xhat, "aligned_features")
    state = encode(xhat, s, params)
    if eps is None:
        eps = draw_noise(state.mu.shape, seed)
    z = reparameterize_with_noise(state.mu, state.log_sigma, eps)
    state.z_sample = z
    state.eps = eps
    reconstructed = decode(z, s, params)
    diff = ad.sub(xhat, reconstructed)
    recon = ad.scale(ad.frobenius_sq(diff), 1.0 / xhat.shape[0])
    kl = kl_to_prior(state.mu, state.log_sigma)
    loss = ad.add(recon, ad.scale(kl, beta_kl))
    return loss, recon, kl


def propagate_extra(z: np.ndarray, s: CsrMatrix, t: int) -> np.ndarray:
    """Apply t parameter-free propagation steps z <- S z (inference only)."""
    if t < 0:
        raise ConfigError(f"propagation steps must be >= 0, got {t}")
    out = z
    for _ in range(t):
        out = s.matmul_dense(out)
    return out
