"""Pose imitation through a joints decoder on top of the embedding.

The decoder regresses 8 joint values from an embedding with plain L2. It can
be supervised by the agent's own observation/joint pairs (self-regression), by
noisy human-labeled pairs, or both; the time-contrastive signal enters through
how the underlying embedding was trained. Configurations without the
time-contrastive signal train the whole stack end-to-end as an ordinary
regression, which is also what makes them embodiment-brittle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envsim import POSE_JOINT_RANGES
from .net import (
    AdamState,
    Mlp,
    backward,
    forward,
    new_mlp,
    new_optimizer,
    train_step,
)
from .numerics import SeededRng

DECODER_HIDDEN = 128
N_JOINTS = POSE_JOINT_RANGES.shape[0]
DEFAULT_EXCLUDED_JOINT = 0  # shoulder-pan-like by convention


@dataclass
class JointsDecoder:
    """Two fully-connected layers over the embedding: d -> 128 -> 8."""

    mlp: Mlp

    def __post_init__(self):
        if self.mlp.output_dim != N_JOINTS:
            raise ValueError(f"decoder must output {N_JOINTS} joints")


def new_joints_decoder(rng: SeededRng, embed_dim: int, hidden: int = DECODER_HIDDEN) -> JointsDecoder:
    return JointsDecoder(new_mlp(rng, embed_dim, (hidden,), N_JOINTS))


@dataclass
class SupervisionConfig:
    """Which training signals are enabled: time-contrastive embedding, robot
    self-regression, noisy human labels."""

    tc: bool = False
    self_signal: bool = False
    human: bool = False

    def __post_init__(self):
        if not (self.tc or self.self_signal or self.human):
            raise ValueError("at least one supervision signal must be enabled")
        if not (self.self_signal or self.human):
            raise ValueError("the decoder needs at least one regression signal (self or human)")

    def label(self) -> str:
        parts = []
        if self.tc:
            parts.append("tc")
        if self.human:
            parts.append("human")
        if self.self_signal:
            parts.append("self")
        return "+".join(parts)


@dataclass
class NoisyHumanLabels:
    """Human-like observations paired with intended robot joints, perturbed by
    label noise (the human channel is noisy by definition)."""

    observations: np.ndarray
    joints: np.ndarray
    noise_level: float

    def __post_init__(self):
        if self.noise_level <= 0:
            raise ValueError("human labels carry noise; noise_level must be > 0")
        if self.observations.shape[0] != self.joints.shape[0]:
            raise ValueError("observations and joints must align")


def make_noisy_human_labels(
    observations: np.ndarray,
    clean_joints: np.ndarray,
    noise_level: float,
    rng: SeededRng,
    joint_ranges: np.ndarray = POSE_JOINT_RANGES,
) -> NoisyHumanLabels:
    widths = joint_ranges[:, 1] - joint_ranges[:, 0]
    noisy = clean_joints + noise_level * widths * rng.normal(clean_joints.shape)
    noisy = np.clip(noisy, joint_ranges[:, 0], joint_ranges[:, 1])
    return NoisyHumanLabels(np.asarray(observations), noisy, noise_level)


def regression_loss_and_grads(
    net: Mlp,
    decoder: JointsDecoder,
    observations: np.ndarray,
    targets: np.ndarray,
    want_net_grads: bool = False,
):
    """Mean squared joint error and analytic gradients.

    Returns (loss, decoder_grads, net_grads or None).
    """
    obs = np.asarray(observations, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    emb, net_cache = forward(net, obs, want_cache=True)
    pred, dec_cache = forward(decoder.mlp, emb, want_cache=True)
    if pred.shape != tgt.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {tgt.shape}")
    diff = pred - tgt
    loss = float(np.mean(diff * diff))
    upstream = 2.0 * diff / diff.size
    dec_grads, d_emb = backward(decoder.mlp, dec_cache, upstream)
    net_grads = None
    if want_net_grads:
        net_grads, _ = backward(net, net_cache, d_emb)
    return loss, dec_grads, net_grads


@dataclass
class DecoderTrainResult:
    losses: list[float]
    per_signal_losses: dict[str, list[float]]


def train_decoder(
    net: Mlp,
    decoder: JointsDecoder,
    config: SupervisionConfig,
    self_data: tuple[np.ndarray, np.ndarray] | None,
    human_data: NoisyHumanLabels | None,
    rng: SeededRng,
    steps: int = 400,
    batch_size: int = 64,
    learning_rate: float = 1e-3,
    fine_tune_embedding: bool = False,
) -> DecoderTrainResult:
    """L2-regress the decoder on every enabled signal, unit loss weights.

    Without the time-contrastive flag the embedding net is trained end-to-end
    by the same regression; with it the embedding stays frozen unless
    ``fine_tune_embedding`` is set.
    """
    if config.self_signal and (self_data is None or self_data[0].shape[0] == 0):
        raise ValueError("self signal enabled but the self-regression dataset is empty")
    if config.human and (human_data is None or human_data.observations.shape[0] == 0):
        raise ValueError("human signal enabled but the human-labeled dataset is empty")

    update_net = fine_tune_embedding or not config.tc
    dec_opt = new_optimizer(decoder.mlp, learning_rate)
    net_opt = new_optimizer(net, learning_rate) if update_net else None

    losses: list[float] = []
    per_signal: dict[str, list[float]] = {"self": [], "human": []}
    for _ in range(steps):
        total = 0.0
        dec_grads_sum = [np.zeros_like(p) for p in decoder.mlp.parameters()]
        net_grads_sum = [np.zeros_like(p) for p in net.parameters()] if update_net else None

        batches = []
        if config.self_signal:
            obs, joints = self_data
            idx = rng.child("self-batch").integers(0, obs.shape[0], size=min(batch_size, obs.shape[0]))
            batches.append(("self", obs[idx], joints[idx]))
        if config.human:
            n = human_data.observations.shape[0]
            idx = rng.child("human-batch").integers(0, n, size=min(batch_size, n))
            batches.append(("human", human_data.observations[idx], human_data.joints[idx]))

        for name, obs_b, tgt_b in batches:
            loss, dec_grads, net_grads = regression_loss_and_grads(
                net, decoder, obs_b, tgt_b, want_net_grads=update_net
            )
            total += loss
            per_signal[name].append(loss)
            for acc, g in zip(dec_grads_sum, dec_grads):
                acc += g
            if update_net:
                for acc, g in zip(net_grads_sum, net_grads):
                    acc += g

        train_step(decoder.mlp, dec_opt, dec_grads_sum)
        if update_net:
            train_step(net, net_opt, net_grads_sum)
        losses.append(total)
    return DecoderTrainResult(losses, per_signal)


def imitate(net: Mlp, decoder: JointsDecoder, observation: np.ndarray) -> np.ndarray:
    """Predict the 8 joint values for an observation, clamped to the declared
    joint ranges."""
    emb = forward(net, observation)
    pred = forward(decoder.mlp, emb)
    return np.clip(pred, POSE_JOINT_RANGES[:, 0], POSE_JOINT_RANGES[:, 1])


@dataclass
class JointErrorReport:
    per_joint: np.ndarray  # percentage of each joint's range
    aggregate: float
    aggregate_excluding: float
    excluded_joint: int


def joint_error(
    predictions: np.ndarray,
    targets: np.ndarray,
    joint_ranges: np.ndarray = POSE_JOINT_RANGES,
    excluded_joint: int = DEFAULT_EXCLUDED_JOINT,
) -> JointErrorReport:
    """Mean absolute error per joint, normalized by each joint's full range and
    reported as a percentage; the aggregate averages over joints, once with and
    once without the designated shoulder-pan-like joint."""
    pred = np.asarray(predictions, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    if pred.shape != tgt.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {tgt.shape}")
    ranges = np.asarray(joint_ranges, dtype=np.float64)
    widths = ranges[:, 1] - ranges[:, 0]
    if np.any(widths <= 0):
        raise ValueError("every joint range must have positive width")
    per_joint = 100.0 * np.mean(np.abs(pred - tgt), axis=0) / widths
    keep = np.arange(per_joint.size) != excluded_joint
    return JointErrorReport(
        per_joint=per_joint,
        aggregate=float(per_joint.mean()),
        aggregate_excluding=float(per_joint[keep].mean()),
        excluded_joint=excluded_joint,
    )
