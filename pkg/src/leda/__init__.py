"""Multi-domain graph pre-training with a learnable projection unit and
variational latent-distribution alignment."""

__version__ = "0.1.0"
