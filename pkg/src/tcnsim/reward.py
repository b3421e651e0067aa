"""Embedding-distance imitation reward and its trajectory-cost form.

The scalar reward between a demonstration frame embedding v and a live frame
embedding w is

    R(v, w) = -alpha * ||w - v||^2 - beta * sqrt(gamma + ||w - v||^2)

The squared term dominates while the embeddings are far apart (strong early
gradients), the Huber-style term while they are close (precise tracking), and
gamma > 0 keeps the square root smooth at zero distance. Trajectory optimizers
consume the negated reward as a cost, plus a small quadratic action penalty
that keeps the local quadratic expansion well posed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import Mlp, forward

DEFAULT_ALPHA = 0.5
DEFAULT_BETA = 1.0
DEFAULT_GAMMA = 1e-4
DEFAULT_ACTION_PENALTY = 1e-3


@dataclass(frozen=True)
class RewardParams:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be strictly positive")


@dataclass
class DemoEmbedding:
    """Per-frame embeddings of the single demonstration video."""

    embeddings: np.ndarray  # (T, d)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise ValueError("demo embeddings must be (T, d)")
        self.embeddings.setflags(write=False)

    @property
    def horizon(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def embed_demonstration(net: Mlp, demo_frames: np.ndarray) -> DemoEmbedding:
    """Frame-wise forward pass over a single-view demo; length preserved."""
    frames = np.asarray(demo_frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValueError("demo frames must be (T, obs_dim)")
    return DemoEmbedding(forward(net, frames))


def tcn_reward(v: np.ndarray, w: np.ndarray, params: RewardParams) -> float:
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape:
        raise ValueError(f"embedding shapes differ: {v.shape} vs {w.shape}")
    sq = float(np.sum((w - v) ** 2))
    return -params.alpha * sq - params.beta * np.sqrt(params.gamma + sq)


def tcn_reward_grad(v: np.ndarray, w: np.ndarray, params: RewardParams) -> np.ndarray:
    """Gradient of the reward with respect to w; smooth everywhere."""
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    diff = w - v
    sq = float(diff @ diff)
    return -2.0 * params.alpha * diff - params.beta * diff / np.sqrt(params.gamma + sq)


def trajectory_cost(
    demo: DemoEmbedding,
    rollout_observations: np.ndarray,
    net: Mlp,
    params: RewardParams,
    actions: np.ndarray | None = None,
    action_penalty: float = DEFAULT_ACTION_PENALTY,
) -> np.ndarray:
    """Per-step cost c_t = -R(v_t, w_t) + penalty * ||u_t||^2, frame-to-frame.

    No resampling: a rollout whose length differs from the demo horizon is an
    error, not something to warp silently.
    """
    obs = np.asarray(rollout_observations, dtype=np.float64)
    if obs.ndim != 2:
        raise ValueError("rollout observations must be (T, obs_dim)")
    if obs.shape[0] != demo.horizon:
        raise ValueError(
            f"rollout length {obs.shape[0]} != demo horizon {demo.horizon}; "
            "horizons must match frame-to-frame"
        )
    live = forward(net, obs)
    costs = np.empty(demo.horizon)
    for t in range(demo.horizon):
        costs[t] = -tcn_reward(demo.embeddings[t], live[t], params)
    if actions is not None:
        acts = np.asarray(actions, dtype=np.float64)
        if acts.shape[0] != demo.horizon:
            raise ValueError(f"got {acts.shape[0]} actions for horizon {demo.horizon}")
        costs += action_penalty * np.sum(acts * acts, axis=1)
    return costs


class EmbeddingStateCost:
    """Cost over (state, action) for controllers whose state vector carries the
    live embedding as a trailing block: c(x, u, t) = -R(v_t, x_emb) + pen*|u|^2.

    This is the closed form the trajectory optimizer quadratizes; the embedding
    coordinates are treated as ordinary state dimensions.
    """

    def __init__(
        self,
        demo: DemoEmbedding,
        embed_slice: slice,
        params: RewardParams,
        action_penalty: float = DEFAULT_ACTION_PENALTY,
    ):
        self.demo = demo
        self.embed_slice = embed_slice
        self.params = params
        self.action_penalty = action_penalty

    def cost(self, t: int, x: np.ndarray, u: np.ndarray) -> float:
        w = x[self.embed_slice]
        v = self.demo.embeddings[t]
        penalty = self.action_penalty * float(u @ u)
        return -tcn_reward(v, w, self.params) + penalty

    def trajectory(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        horizon = actions.shape[0]
        return np.array([self.cost(t, states[t], actions[t]) for t in range(horizon)])
