"""Multi-view time-contrastive embeddings on synthetic sequences, with
embedding-distance rewards for trajectory optimization and pose imitation."""

__version__ = "0.1.0"
