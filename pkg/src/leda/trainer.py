"""Joint optimization of the projection unit and the variational aligner
across domains, with the ablation variants and checkpoint persistence.

Training is full-batch: every epoch accumulates gradients over all domains
(in ascending domain_id order, so manifest order never matters) and applies
one AdamW step. All randomness is derived from the run seed plus stable
per-domain keys, which makes checkpoints bit-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamSet
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: F401
from .datasets import GraphCollection
from .dpu import DomainBasis, DpuConfig, DpuParams, align, alignment_penalties, init_basis, trans
from .errors import ConfigError, DataError, NumericError
from .lda import LdaConfig, LdaParams, loss_total_domain
from .linalg import CsrMatrix, normalize_adjacency
from .optim import AdamWState, adamw_step

VARIANTS = ("full", "no-dpu", "no-lda", "dpu-cl")

DROPOUT_RATE = 0.2
COSINE_EPS = 1e-12

_INIT_STREAM = 101
_EPS_STREAM = 0
_DROPOUT_STREAM = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    seed: int = 66666
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-5
    k: int = 64
    h: int = 128
    m: int = 64
    lam: float = 1.0
    h_e: int = 256
    z: int = 128
    beta_kl: float = 1.0
    mu_align: float = 1.0
    variant: str = "full"
    tau: float = 0.5
    two_phase: bool = False
    two_phase_epochs: int = 100
    threads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got '{self.variant}'")
        if self.epochs < 0 or self.two_phase_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        for name in ("lam", "beta_kl", "mu_align", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.variant == "dpu-cl" and self.tau <= 0:
            raise ConfigError("InfoNCE temperature tau must be > 0")
        if self.variant == "no-dpu" and self.m != self.k:
            raise ConfigError(
                "variant no-dpu feeds the raw k-column basis to the encoder; set m == k"
            )
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        DpuConfig(k=self.k, h=self.h, m=self.m, lam=self.lam)
        LdaConfig(h_e=self.h_e, z=self.z, beta_kl=self.beta_kl)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return TrainConfig(**doc)


@dataclass(frozen=True)
class PreparedGraph:
    index: int
    x: np.ndarray
    s: CsrMatrix


@dataclass(frozen=True)
class PreparedDomain:
    domain_id: str
    key: int
    basis: DomainBasis
    members: tuple[PreparedGraph, ...]


def _domain_key(domain_id: str) -> int:
    digest = hashlib.blake2s(domain_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _stream_rng(config_seed: int, epoch: int, key: int, member: int, stream: int):
    return np.random.default_rng([config_seed, epoch, key, member, stream])


def prepare_domains(collection: GraphCollection, config: TrainConfig) -> list[PreparedDomain]:
    """Group graphs by domain, build frozen bases, normalize adjacencies.

    Domains come back sorted by domain_id; graph-level members keep their
    collection order within a domain. The basis of a multi-graph domain is
    computed from the vertically stacked member features.
    """
    grouped: dict[str, list[PreparedGraph]] = {}
    for graph in collection.graphs:
        members = grouped.setdefault(graph.domain_id, [])
        # index = position within the domain, so noise streams are invariant
        # to how domains are ordered in the manifest
        members.append(
            PreparedGraph(
                index=len(members), x=graph.features, s=normalize_adjacency(graph.adjacency)
            )
        )
    prepared = []
    for domain_id in sorted(grouped):
        members = grouped[domain_id]
        stacked = (
            members[0].x if len(members) == 1 else np.concatenate([m.x for m in members], axis=0)
        )
        widths = {m.x.shape[1] for m in members}
        if len(widths) != 1:
            raise DataError(f"domain '{domain_id}': members disagree on feature dim {sorted(widths)}")
        if config.k > min(stacked.shape):
            raise ConfigError(
                f"k={config.k} exceeds min(n, d)={min(stacked.shape)} for domain '{domain_id}'"
            )
        basis = init_basis(stacked, config.k, seed=config.seed, domain_id=domain_id)
        prepared.append(
            PreparedDomain(
                domain_id=domain_id,
                key=_domain_key(domain_id),
                basis=basis,
                members=tuple(members),
            )
        )
    return prepared


def init_paramset(config: TrainConfig) -> ParamSet:
    """All trainable tensors, created in fixed name order from the run seed."""
    rng = np.random.default_rng([config.seed, _INIT_STREAM])
    params = ParamSet()
    DpuParams.register(params, DpuConfig(k=config.k, h=config.h, m=config.m, lam=config.lam), rng)
    LdaParams.register(params, config.m, LdaConfig(h_e=config.h_e, z=config.z, beta_kl=config.beta_kl), rng)
    return params


def trainable_names(variant: str) -> tuple[str, ...]:
    if variant == "full":
        return DpuParams.PARAM_NAMES + LdaParams.PARAM_NAMES
    if variant == "no-dpu":
        return LdaParams.PARAM_NAMES
    if variant == "no-lda":
        return DpuParams.PARAM_NAMES
    if variant == "dpu-cl":
        return DpuParams.PARAM_NAMES + ("lda.W_base",)
    raise ConfigError(f"unknown variant '{variant}'")


def _rowwise_cosine(a: Node, b: Node) -> Node:
    """Cosine similarity of each row of a against the matching row of b
    (or against a single 1 x d row, broadcast)."""
    eps = ad.constant([[COSINE_EPS]], "cos_eps")
    num = ad.reduce_sum(ad.mul(a, b), axis=1)
    norm_a = ad.sqrt(ad.add(ad.reduce_sum(ad.square(a), axis=1), eps))
    norm_b = ad.sqrt(ad.add(ad.reduce_sum(ad.square(b), axis=1), eps))
    return ad.div(num, ad.mul(norm_a, norm_b))


def infonce_from_scores(s_pos: Node, s_neg: Node, tau: float) -> Node:
    """Per-anchor contrastive loss column: log(exp(s+/tau) + exp(s-/tau)) - s+/tau,
    computed with a constant max shift for stability."""
    if tau <= 0:
        raise ConfigError(f"InfoNCE temperature must be > 0, got {tau}")
    a = ad.scale(s_pos, 1.0 / tau)
    b = ad.scale(s_neg, 1.0 / tau)
    shift = ad.constant(np.maximum(a.value, b.value), "lse_shift")
    summed = ad.add(ad.exp(ad.sub(a, shift)), ad.exp(ad.sub(b, shift)))
    return ad.sub(ad.add(shift, ad.log(summed)), a)


def infonce_loss(views: list[tuple[Node, Node]], tau: float) -> Node:
    """Contrastive objective over per-domain (anchor, positive) embedding
    pairs; the single negative is the mean embedding over all anchors of all
    domains. Returns the mean per-anchor loss."""
    if tau <= 0:
        raise ConfigError(f"InfoNCE temperature must be > 0, got {tau}")
    if not views:
        raise ConfigError("infonce_loss needs at least one domain")
    total_nodes = sum(anchor.shape[0] for anchor, _ in views)
    mean_sum: Node | None = None
    for anchor, _ in views:
        colsum = ad.reduce_sum(anchor, axis=0)
        mean_sum = colsum if mean_sum is None else ad.add(mean_sum, colsum)
    mean_embedding = ad.scale(mean_sum, 1.0 / total_nodes)

    loss_sum: Node | None = None
    for anchor, positive in views:
        s_pos = _rowwise_cosine(anchor, positive)
        s_neg = _rowwise_cosine(anchor, mean_embedding)
        per_anchor = infonce_from_scores(s_pos, s_neg, tau)
        domain_sum = ad.reduce_sum(per_anchor)
        loss_sum = domain_sum if loss_sum is None else ad.add(loss_sum, domain_sum)
    return ad.scale(loss_sum, 1.0 / total_nodes)


def _scalar(node: Node) -> float:
    return float(node.value[0, 0])


def _mean_nodes(nodes: list[Node]) -> Node:
    total = nodes[0]
    for node in nodes[1:]:
        total = ad.add(total, node)
    return total if len(nodes) == 1 else ad.scale(total, 1.0 / len(nodes))


def build_epoch_loss(
    prepared: list[PreparedDomain],
    params: ParamSet,
    config: TrainConfig,
    epoch: int,
    frozen_noise: dict[tuple[str, int], np.ndarray] | None = None,
    align_only: bool = False,
) -> tuple[Node, dict[str, float]]:
    """One full-batch loss over all domains for the configured variant.

    frozen_noise maps (domain_id, member_index) to a fixed reparameterization
    draw (used by gradient checks); align_only restricts the objective to the
    projection-alignment terms (the first phase of two-phase training).
    """
    variant = config.variant
    dpu_params = DpuParams.from_paramset(params) if variant != "no-dpu" else None
    lda_params = LdaParams.from_paramset(params)

    total: Node | None = None
    components: dict[str, float] = {}
    views: list[tuple[Node, Node]] = []

    def accumulate(key: str, node: Node) -> None:
        components[key] = components.get(key, 0.0) + _scalar(node)

    for domain in prepared:
        vhat = trans(domain.basis.V, dpu_params) if dpu_params is not None else ad.constant(
            domain.basis.V, f"basis:{domain.domain_id}"
        )
        domain_terms: list[Node] = []

        if variant in ("full", "no-lda", "dpu-cl") or align_only:
            recons = []
            orthos = []
            for member in domain.members:
                recon, ortho = alignment_penalties(member.x, vhat)
                recons.append(recon)
                orthos.append(ortho)
            recon_d = _mean_nodes(recons)
            ortho_d = _mean_nodes(orthos)
            align_d = ad.add(recon_d, ad.scale(ortho_d, config.lam))
            accumulate("dpu_recon", recon_d)
            accumulate("dpu_ortho", ortho_d)
            weight = 1.0 if variant != "full" or align_only else config.mu_align
            domain_terms.append(ad.scale(align_d, weight) if weight != 1.0 else align_d)

        if variant in ("full", "no-dpu") and not align_only:
            member_losses = []
            member_recons = []
            member_kls = []
            for member in domain.members:
                xhat = align(member.x, vhat)
                if frozen_noise is not None:
                    eps = frozen_noise[(domain.domain_id, member.index)]
                else:
                    rng = _stream_rng(config.seed, epoch, domain.key, member.index, _EPS_STREAM)
                    eps = rng.standard_normal((member.x.shape[0], config.z))
                loss, recon, kl = loss_total_domain(
                    xhat, member.s, lda_params, seed=None, beta_kl=config.beta_kl, eps=eps
                )
                member_losses.append(loss)
                member_recons.append(recon)
                member_kls.append(kl)
            domain_terms.append(_mean_nodes(member_losses))
            accumulate("lda_recon", _mean_nodes(member_recons))
            accumulate("kl", _mean_nodes(member_kls))

        if variant == "dpu-cl" and not align_only:
            for member in domain.members:
                xhat = align(member.x, vhat)
                rng = _stream_rng(config.seed, epoch, domain.key, member.index, _DROPOUT_STREAM)
                mask = (rng.random(xhat.shape) >= DROPOUT_RATE).astype(np.float64)
                xhat_view = ad.mul(xhat, ad.constant(mask, "dropout_mask"))
                anchor = ad.relu(ad.sparse_matmul(member.s, ad.matmul(xhat, lda_params.W_base)))
                positive = ad.relu(
                    ad.sparse_matmul(member.s, ad.matmul(xhat_view, lda_params.W_base))
                )
                views.append((anchor, positive))

        for term in domain_terms:
            value = _scalar(term)
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, domain '{domain.domain_id}'"
                )
            total = term if total is None else ad.add(total, term)

    if variant == "dpu-cl" and not align_only:
        nce = infonce_loss(views, config.tau)
        accumulate("infonce", nce)
        total = nce if total is None else ad.add(total, nce)

    if total is None:
        raise ConfigError("loss has no terms; nothing to train")
    total_value = _scalar(total)
    if not np.isfinite(total_value):
        raise NumericError(f"non-finite total loss at epoch {epoch}")
    components["total"] = total_value
    return total, components


def _run_phase(
    prepared: list[PreparedDomain],
    params: ParamSet,
    config: TrainConfig,
    trainable: ParamSet,
    epochs: int,
    align_only: bool,
    trace: list[dict[str, float]],
) -> None:
    state = AdamWState.for_params(
        trainable,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    for epoch in range(epochs):
        params.zero_grad()
        loss, components = build_epoch_loss(
            prepared, params, config, epoch, align_only=align_only
        )
        ad.backward(loss)
        adamw_step(trainable, state)
        trace.append(components)


def pretrain(collection: GraphCollection, config: TrainConfig) -> Checkpoint:
    """Train the configured variant on every domain of the collection."""
    prepared = prepare_domains(collection, config)
    if not prepared:
        raise DataError("collection has no domains")
    params = init_paramset(config)
    trainable = params.subset(trainable_names(config.variant))

    trace: list[dict[str, float]] = []
    if config.two_phase and config.variant != "no-dpu":
        dpu_only = params.subset(DpuParams.PARAM_NAMES)
        _run_phase(prepared, params, config, dpu_only, config.two_phase_epochs, True, trace)
    _run_phase(prepared, params, config, trainable, config.epochs, False, trace)

    return Checkpoint(
        config=config,
        params=params.state_arrays(),
        bases=[domain.basis for domain in prepared],
        epoch=len(trace),
        final_loss=dict(trace[-1]) if trace else {},
        loss_trace=trace,
    )
