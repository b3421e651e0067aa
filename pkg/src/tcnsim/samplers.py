"""Training-tuple samplers: cross-view triplets, within-view triplets, npairs
batches, and frame-order tuples. Pure functions of (sequence, rng)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MultiViewSequence
from .numerics import SeededRng

DEFAULT_POSITIVE_RANGE_S = 0.2
DEFAULT_NEGATIVE_MULTIPLIER = 2.0
DEFAULT_MULTIVIEW_NEGATIVE_MARGIN_S = 0.2
DEFAULT_ORDER_TMAX = 60
DEFAULT_ORDER_TMIN = 15
DEFAULT_ORDER_NEGATIVE_RATIO = 0.75


class UnsupportedSamplerError(ValueError):
    """Sequence shape cannot support the requested sampler."""


class SequenceTooShortError(ValueError):
    """Sequence too short for the requested window geometry."""


@dataclass(frozen=True)
class FrameRef:
    view: int
    frame: int


@dataclass(frozen=True)
class Triplet:
    sequence_id: str
    anchor: FrameRef
    positive: FrameRef
    negative: FrameRef


@dataclass(frozen=True)
class OrderTuple:
    """Frame indices in presented order plus the temporal-order label."""

    sequence_id: str
    view: int
    frames: tuple[int, int, int]
    label: int


def _window_frames(seconds: float, rate: float) -> int:
    # tolerance guards float artifacts like 2 * 0.2 * 10 -> 3.9999...
    return int(np.floor(seconds * rate + 1e-9))


def sample_multiview_triplet(
    seq: MultiViewSequence,
    rng: SeededRng,
    negative_margin_s: float = DEFAULT_MULTIVIEW_NEGATIVE_MARGIN_S,
    negative_from_anchor_view: bool = True,
) -> Triplet:
    """Anchor and positive share a frame index across two views; the negative
    comes from another time in the anchor's view.

    Negatives are drawn uniformly outside a temporal margin around the anchor
    so that they are never de-facto positives; if the sequence is too short to
    leave any frame outside the margin, any other frame is admissible.
    """
    if seq.n_views < 2:
        raise UnsupportedSamplerError("cross-view sampler needs at least 2 views")
    if seq.n_frames < 3:
        raise UnsupportedSamplerError("cross-view sampler needs at least 3 frames")

    views = seq.n_views
    anchor_view = int(rng.integers(0, views))
    positive_view = int(rng.integers(0, views - 1))
    if positive_view >= anchor_view:
        positive_view += 1
    anchor_frame = int(rng.integers(0, seq.n_frames))

    margin = _window_frames(negative_margin_s, seq.frame_rate)
    idx = np.arange(seq.n_frames)
    admissible = idx[np.abs(idx - anchor_frame) > margin]
    if admissible.size == 0:
        admissible = idx[idx != anchor_frame]
    negative_frame = int(rng.choice(admissible))
    negative_view = anchor_view if negative_from_anchor_view else int(rng.integers(0, views))

    return Triplet(
        seq.sequence_id,
        anchor=FrameRef(anchor_view, anchor_frame),
        positive=FrameRef(positive_view, anchor_frame),
        negative=FrameRef(negative_view, negative_frame),
    )


def sample_singleview_triplet(
    seq: MultiViewSequence,
    rng: SeededRng,
    positive_range_s: float = DEFAULT_POSITIVE_RANGE_S,
    negative_multiplier: float = DEFAULT_NEGATIVE_MULTIPLIER,
    view: int | None = None,
) -> Triplet:
    """All three references in one view: the positive within the anchor window,
    the negative strictly beyond the margin (multiplier x positive range)."""
    if positive_range_s < 0 or negative_multiplier <= 0:
        raise ValueError("positive range must be >= 0 and multiplier > 0")
    margin = _window_frames(negative_multiplier * positive_range_s, seq.frame_rate)
    if seq.duration <= 2 * negative_multiplier * positive_range_s or seq.n_frames < 2 * margin + 2:
        raise SequenceTooShortError(
            f"{seq.n_frames} frames cannot honor a {margin}-frame negative margin"
        )
    the_view = int(rng.integers(0, seq.n_views)) if view is None else view
    anchor_frame = int(rng.integers(0, seq.n_frames))

    window = _window_frames(positive_range_s, seq.frame_rate)
    idx = np.arange(seq.n_frames)
    positive_frame = int(rng.choice(idx[np.abs(idx - anchor_frame) <= window]))
    admissible = idx[np.abs(idx - anchor_frame) > margin]
    negative_frame = int(rng.choice(admissible))

    return Triplet(
        seq.sequence_id,
        anchor=FrameRef(the_view, anchor_frame),
        positive=FrameRef(the_view, positive_frame),
        negative=FrameRef(the_view, negative_frame),
    )


def sample_npairs_batch(
    seq: MultiViewSequence, rng: SeededRng, batch_size: int
) -> list[tuple[FrameRef, FrameRef]]:
    """Simultaneous cross-view pairs at distinct frame indices, so every other
    pair's positive doubles as a negative."""
    if seq.n_views < 2:
        raise UnsupportedSamplerError("npairs sampler needs at least 2 views")
    if batch_size < 2:
        raise ValueError("npairs batch needs at least 2 pairs")
    if batch_size > seq.n_frames:
        raise ValueError(f"batch size {batch_size} exceeds frame count {seq.n_frames}")
    frames = rng.choice(seq.n_frames, size=batch_size, replace=False)
    pairs = []
    for frame in np.sort(frames):
        anchor_view = int(rng.integers(0, seq.n_views))
        positive_view = int(rng.integers(0, seq.n_views - 1))
        if positive_view >= anchor_view:
            positive_view += 1
        pairs.append((FrameRef(anchor_view, int(frame)), FrameRef(positive_view, int(frame))))
    return pairs


def sample_shuffle_learn_tuple(
    seq: MultiViewSequence,
    rng: SeededRng,
    tmax: int = DEFAULT_ORDER_TMAX,
    tmin: int = DEFAULT_ORDER_TMIN,
    negative_ratio: float = DEFAULT_ORDER_NEGATIVE_RATIO,
    view: int | None = None,
) -> OrderTuple:
    """Frame triple plus order label for the order-classification objective.

    Positives (label 1) present (a, b, c) in temporal order with
    tmin <= c - a <= tmax and b strictly inside; negatives (label 0) swap the
    middle frame for one outside (a, c), within tmax of the span.
    """
    if not (2 <= tmin <= tmax):
        raise ValueError("need 2 <= tmin <= tmax")
    if not 0.0 <= negative_ratio <= 1.0:
        raise ValueError("negative ratio must lie in [0, 1]")
    if seq.n_frames <= 2 * tmax:
        raise SequenceTooShortError(f"need more than {2 * tmax} frames, have {seq.n_frames}")
    the_view = int(rng.integers(0, seq.n_views)) if view is None else view

    span = int(rng.integers(tmin, tmax + 1))
    first = int(rng.integers(0, seq.n_frames - span))
    last = first + span
    label = 0 if float(rng.uniform()) < negative_ratio else 1
    if label == 1:
        middle = int(rng.integers(first + 1, last))
    else:
        lo = np.arange(max(0, first - tmax), first)
        hi = np.arange(last + 1, min(seq.n_frames, last + tmax + 1))
        middle = int(rng.choice(np.concatenate([lo, hi])))
    return OrderTuple(seq.sequence_id, the_view, (first, middle, last), label)


def gather_triplet_embeddings(seq_lookup, triplets, embed_fn):
    """Stack anchor/positive/negative observations for a triplet batch and
    embed them in one pass. ``seq_lookup`` maps sequence-id to sequence."""
    obs = []
    for t in triplets:
        seq = seq_lookup[t.sequence_id]
        obs.append(seq.frames[t.anchor.view, t.anchor.frame])
        obs.append(seq.frames[t.positive.view, t.positive.frame])
        obs.append(seq.frames[t.negative.view, t.negative.frame])
    stacked = embed_fn(np.asarray(obs))
    return stacked[0::3], stacked[1::3], stacked[2::3]
