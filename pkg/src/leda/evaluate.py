"""Downstream evaluation: linear probe, few-shot prototypes, graph-level
prototypes, and the cross-domain mutual-information diagnostic.

Embeddings are deterministic (posterior means, no sampling). Every protocol
repeats with derived seeds (base seed + repeat index) and reports accuracy
as mean +- population standard deviation in percent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .checkpoint import Checkpoint
from .datasets import DomainGraph, GraphCollection
from .dpu import DpuParams, align, init_basis, trans
from .errors import ConfigError, DataError
from .lda import LdaParams, encode, propagate_extra
from .linalg import EntropyResult, gaussian_entropy, normalize_adjacency
from .optim import AdamWState, adamw_step

PROBE_STEPS = 300
PROBE_LR = 0.01
PROBE_L2 = 1e-4
COSINE_EPS = 1e-12
MI_MAX_PAIRS = 1_000_000

MI_NOTE = "bias term (expected marginal correction) is not estimable from data; omitted"


@dataclass(frozen=True)
class EmbeddingSet:
    domain_id: str
    E: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        e = np.ascontiguousarray(self.E, dtype=np.float64)
        if not np.all(np.isfinite(e)):
            raise DataError(f"domain '{self.domain_id}': non-finite embeddings")
        object.__setattr__(self, "E", e)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if len(labels) != e.shape[0]:
                raise DataError("labels length must match embedding rows")
            object.__setattr__(self, "labels", labels)


@dataclass
class EvalReport:
    task: str
    mean_accuracy: float
    std: float
    repeats: int
    seed: int
    config: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.mean_accuracy <= 100.0) or self.std < 0:
            raise DataError("accuracy must be in [0, 100] and std >= 0")

    def to_dict(self) -> dict:
        doc = {
            "task": self.task,
            "mean_accuracy": self.mean_accuracy,
            "std": self.std,
            "repeats": self.repeats,
            "seed": self.seed,
            "config": self.config,
            "flags": sorted(self.flags),
        }
        doc.update(self.extras)
        return doc


def _dpu_params_from(ckpt: Checkpoint) -> DpuParams:
    p = ckpt.params
    return DpuParams(
        W1=ad.constant(p["dpu.W1"], "dpu.W1"),
        b1=ad.constant(p["dpu.b1"], "dpu.b1"),
        W2=ad.constant(p["dpu.W2"], "dpu.W2"),
        b2=ad.constant(p["dpu.b2"], "dpu.b2"),
    )


def _lda_params_from(ckpt: Checkpoint) -> LdaParams:
    p = ckpt.params
    return LdaParams(
        W_base=ad.constant(p["lda.W_base"], "lda.W_base"),
        W_mu=ad.constant(p["lda.W_mu"], "lda.W_mu"),
        W_sigma=ad.constant(p["lda.W_sigma"], "lda.W_sigma"),
        W_dec=ad.constant(p["lda.W_dec"], "lda.W_dec"),
    )


def _aligned_features(domain: DomainGraph, ckpt: Checkpoint) -> Node:
    config = ckpt.config
    basis = ckpt.basis_for(domain.domain_id)
    if basis is None:
        if config.k > min(domain.features.shape):
            raise DataError(
                f"domain '{domain.domain_id}': cannot derive a rank-{config.k} basis "
                f"from a {domain.features.shape[0]}x{domain.feature_dim} feature matrix"
            )
        basis = init_basis(domain.features, config.k, seed=config.seed, domain_id=domain.domain_id)
    if basis.V.shape[0] != domain.feature_dim:
        raise DataError(
            f"domain '{domain.domain_id}': checkpoint basis expects feature dim "
            f"{basis.V.shape[0]}, graph has {domain.feature_dim}"
        )
    if ckpt.config.variant == "no-dpu":
        vhat = ad.constant(basis.V, "basis")
    else:
        vhat = trans(basis.V, _dpu_params_from(ckpt))
    return align(domain.features, vhat)


def embed(domain: DomainGraph, ckpt: Checkpoint, t: int = 0) -> EmbeddingSet:
    """Node embeddings for one domain under the checkpoint's variant.

    full / no-dpu: posterior mean; no-lda: one parameter-free propagation of
    the aligned features; dpu-cl: the trained base-encoder output. Followed
    by t extra propagation steps. Deterministic (no sampling).
    """
    s = normalize_adjacency(domain.adjacency)
    xhat = _aligned_features(domain, ckpt)
    variant = ckpt.config.variant
    if variant in ("full", "no-dpu"):
        state = encode(xhat, s, _lda_params_from(ckpt))
        base = state.mu.value
    elif variant == "no-lda":
        base = s.matmul_dense(xhat.value)
    elif variant == "dpu-cl":
        lda_params = _lda_params_from(ckpt)
        base = ad.relu(ad.sparse_matmul(s, ad.matmul(xhat, lda_params.W_base))).value
    else:
        raise ConfigError(f"unknown variant '{variant}'")
    out = propagate_extra(base, s, t)
    return EmbeddingSet(domain_id=domain.domain_id, E=out, labels=domain.labels)


def write_embeddings_tsv(embeddings: EmbeddingSet, path: str | Path) -> None:
    lines = [
        str(i) + "\t" + "\t".join(repr(float(v)) for v in row)
        for i, row in enumerate(embeddings.E)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# linear probe


def _softmax_cross_entropy(logits: Node, onehot: np.ndarray) -> Node:
    shift = ad.constant(logits.value.max(axis=1, keepdims=True), "row_max")
    lse = ad.add(shift, ad.log(ad.reduce_sum(ad.exp(ad.sub(logits, shift)), axis=1)))
    picked = ad.reduce_sum(ad.mul(logits, ad.constant(onehot, "onehot")), axis=1)
    return ad.reduce_mean(ad.sub(lse, picked))


def _fit_logistic(train_x: np.ndarray, train_y: np.ndarray, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    params = ad.ParamSet()
    w = params.add("probe.W", np.zeros((train_x.shape[1], num_classes)))
    b = params.add("probe.b", np.zeros((1, num_classes)))
    onehot = np.eye(num_classes)[train_y]
    x_const = ad.constant(train_x, "probe_features")
    state = AdamWState.for_params(params, lr=PROBE_LR, weight_decay=0.0)
    for _ in range(PROBE_STEPS):
        params.zero_grad()
        logits = ad.add_row_bias(ad.matmul(x_const, w), b)
        loss = ad.add(
            _softmax_cross_entropy(logits, onehot),
            ad.scale(ad.frobenius_sq(w), PROBE_L2),
        )
        ad.backward(loss)
        adamw_step(params, state)
    return w.value.copy(), b.value.copy()


def _stratified_split(labels: np.ndarray, train_frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    train_idx: list[int] = []
    test_idx: list[int] = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        shuffled = rng.permutation(members)
        take = max(1, int(round(train_frac * len(members))))
        train_idx.extend(shuffled[:take].tolist())
        test_idx.extend(shuffled[take:].tolist())
    if not test_idx:
        raise DataError("split left no test nodes; lower train_frac")
    return np.array(sorted(train_idx)), np.array(sorted(test_idx))


def linear_probe(
    embeddings: EmbeddingSet,
    train_frac: float = 0.1,
    runs: int = 20,
    seed: int = 66666,
) -> EvalReport:
    """Multinomial logistic regression on a stratified train_frac split,
    accuracy on the rest; mean +- std over the runs."""
    if embeddings.labels is None:
        raise DataError("linear probe needs labels")
    labels = embeddings.labels
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("linear probe needs at least two classes")
    num_classes = int(labels.max()) + 1
    accuracies = []
    for run in range(runs):
        rng = np.random.default_rng(seed + run)
        train_idx, test_idx = _stratified_split(labels, train_frac, rng)
        w, b = _fit_logistic(embeddings.E[train_idx], labels[train_idx], num_classes)
        pred = np.argmax(embeddings.E[test_idx] @ w + b, axis=1)
        accuracies.append(100.0 * float(np.mean(pred == labels[test_idx])))
    acc = np.array(accuracies)
    return EvalReport(
        task="linear-probe",
        mean_accuracy=float(acc.mean()),
        std=float(acc.std()),
        repeats=runs,
        seed=seed,
        config={"train_frac": train_frac, "runs": runs},
    )


# ---------------------------------------------------------------------------
# prototype protocols


def _cosine_to_prototypes(queries: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    qn = queries / np.maximum(np.linalg.norm(queries, axis=1, keepdims=True), COSINE_EPS)
    pn = prototypes / np.maximum(np.linalg.norm(prototypes, axis=1, keepdims=True), COSINE_EPS)
    return qn @ pn.T


def fewshot_eval(
    embeddings: EmbeddingSet,
    k: int = 1,
    repeats: int = 500,
    seed: int = 66666,
) -> EvalReport:
    """k-shot prototype classification: class prototypes are means of k
    sampled nodes; every remaining node is assigned by cosine similarity."""
    if embeddings.labels is None:
        raise DataError("few-shot evaluation needs labels")
    labels = embeddings.labels
    classes = np.unique(labels)
    counts = {int(c): int(np.sum(labels == c)) for c in classes}
    short = [c for c, n in counts.items() if n < k]
    if short:
        raise DataError(f"classes {short} have fewer than k={k} samples")
    if all(n == k for n in counts.values()):
        raise DataError("support would cover every node; no queries left")
    accuracies = []
    for repeat in range(repeats):
        rng = np.random.default_rng(seed + repeat)
        support: list[int] = []
        prototypes = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            chosen = rng.choice(members, size=k, replace=False)
            support.extend(chosen.tolist())
            prototypes.append(embeddings.E[chosen].mean(axis=0))
        query = np.setdiff1d(np.arange(len(labels)), np.array(support))
        sims = _cosine_to_prototypes(embeddings.E[query], np.stack(prototypes))
        pred = classes[np.argmax(sims, axis=1)]
        accuracies.append(100.0 * float(np.mean(pred == labels[query])))
    acc = np.array(accuracies)
    return EvalReport(
        task="fewshot",
        mean_accuracy=float(acc.mean()),
        std=float(acc.std()),
        repeats=repeats,
        seed=seed,
        config={"k": k, "repeats": repeats},
    )


def macro_f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Unweighted mean of per-class F1 over the classes present in y_true."""
    scores = []
    for c in np.unique(y_true):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    return float(np.mean(scores))


def pooled_graph_embeddings(collection: GraphCollection, ckpt: Checkpoint, t: int = 0) -> np.ndarray:
    """Mean-pooled node embeddings, one row per graph of the collection."""
    return np.stack([embed(graph, ckpt, t).E.mean(axis=0) for graph in collection.graphs])


def graph_eval(
    collection: GraphCollection,
    ckpt: Checkpoint,
    support_per_class: int = 1,
    repeats: int = 500,
    seed: int = 66666,
    t: int = 0,
) -> EvalReport:
    """Prototype classification of whole graphs from a disjoint labeled
    support split (prototype-from-support protocol)."""
    if collection.task_kind != "graph-level":
        raise DataError("graph_eval needs a graph-level collection")
    labels = np.asarray(collection.graph_labels, dtype=np.int64)
    classes = np.unique(labels)
    counts = {int(c): int(np.sum(labels == c)) for c in classes}
    short = [c for c, n in counts.items() if n < support_per_class]
    if short:
        raise DataError(f"classes {short} have fewer than {support_per_class} graphs")
    if all(n == support_per_class for n in counts.values()):
        raise DataError("support would cover every graph; query set is empty")

    pooled = pooled_graph_embeddings(collection, ckpt, t)
    accuracies = []
    f1s = []
    for repeat in range(repeats):
        rng = np.random.default_rng(seed + repeat)
        support: list[int] = []
        prototypes = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            chosen = rng.choice(members, size=support_per_class, replace=False)
            support.extend(chosen.tolist())
            prototypes.append(pooled[chosen].mean(axis=0))
        query = np.setdiff1d(np.arange(len(labels)), np.array(support))
        sims = _cosine_to_prototypes(pooled[query], np.stack(prototypes))
        pred = classes[np.argmax(sims, axis=1)]
        accuracies.append(100.0 * float(np.mean(pred == labels[query])))
        f1s.append(100.0 * macro_f1(labels[query], pred))
    acc = np.array(accuracies)
    f1 = np.array(f1s)
    flags = ["prototype-from-support"]
    if any(g.degree_featurized for g in collection.graphs):
        flags.append("degree-featurized")
    return EvalReport(
        task="graph-fewshot",
        mean_accuracy=float(acc.mean()),
        std=float(acc.std()),
        repeats=repeats,
        seed=seed,
        config={"support_per_class": support_per_class, "repeats": repeats},
        flags=flags,
        extras={"mean_macro_f1": float(f1.mean()), "std_macro_f1": float(f1.std())},
    )


# ---------------------------------------------------------------------------
# diagnostics


def mi_from_scores(scores: np.ndarray) -> dict:
    """Mutual-information proxy from temperature-scaled similarity scores:
    mean(s) - log-sum-exp(s). Invariant to a uniform additive shift."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise DataError("no similarity scores")
    shift = scores.max()
    log_z = shift + np.log(np.sum(np.exp(scores - shift)))
    expected = float(scores.mean())
    return {
        "expected_s": expected,
        "log_Z": float(log_z),
        "mi_proxy": float(expected - log_z),
        "pair_count": int(scores.size),
        "note": MI_NOTE,
    }


def mi_diagnostic(
    e_i: EmbeddingSet,
    e_j: EmbeddingSet,
    tau: float,
    seed: int = 0,
    max_pairs: int = MI_MAX_PAIRS,
) -> dict:
    """Cross-domain similarity diagnostic over all (or sampled) pairs."""
    if tau <= 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    if e_i.E.shape[0] == 0 or e_j.E.shape[0] == 0:
        raise DataError("embedding sets must be non-empty")
    a = e_i.E / np.maximum(np.linalg.norm(e_i.E, axis=1, keepdims=True), COSINE_EPS)
    b = e_j.E / np.maximum(np.linalg.norm(e_j.E, axis=1, keepdims=True), COSINE_EPS)
    n_pairs = a.shape[0] * b.shape[0]
    if n_pairs <= max_pairs:
        scores = (a @ b.T) / tau
    else:
        rng = np.random.default_rng(seed)
        rows = rng.integers(0, a.shape[0], size=max_pairs)
        cols = rng.integers(0, b.shape[0], size=max_pairs)
        scores = np.sum(a[rows] * b[cols], axis=1) / tau
    record = mi_from_scores(scores)
    record["domains"] = [e_i.domain_id, e_j.domain_id]
    record["tau"] = tau
    return record


def diagnostics_entropy(ckpt: Checkpoint, domain_id: str) -> EntropyResult:
    """Gaussian entropy of the refined basis for one training domain."""
    basis = ckpt.basis_for(domain_id)
    if basis is None:
        raise DataError(f"checkpoint has no basis for domain '{domain_id}'")
    if ckpt.config.variant == "no-dpu":
        vhat = basis.V
    else:
        vhat = trans(basis.V, _dpu_params_from(ckpt)).value
    return gaussian_entropy(vhat)
