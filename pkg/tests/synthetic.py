"""Small seeded collections shared across test modules."""

from __future__ import annotations

from leda.datasets import GraphCollection, generate_sbm
from leda.trainer import TrainConfig


def node_collection(seed: int = 0, dims=(9, 12), blocks: int = 3, nodes_per_block: int = 6,
                    cluster_sep: float = 4.0) -> GraphCollection:
    graphs = tuple(
        generate_sbm(
            blocks,
            nodes_per_block,
            p_in=0.6,
            p_out=0.1,
            d=d,
            cluster_sep=cluster_sep,
            seed=seed * 100 + i,
            domain_id=f"dom{chr(ord('a') + i)}",
        )
        for i, d in enumerate(dims)
    )
    return GraphCollection(graphs=graphs, task_kind="node-level")


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        epochs=40,
        seed=66666,
        lr=5e-3,
        k=4,
        h=8,
        m=4,
        lam=1.0,
        h_e=8,
        z=4,
        beta_kl=1.0,
        mu_align=1.0,
    )
    base.update(overrides)
    return TrainConfig(**base)
