"""Measurement suite: nearest-neighbor video alignment against a
keyframe-induced correspondence, class-balanced attribute classification by
1-NN label transfer, and the two checkpoint-selection protocols."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .net import Mlp, forward


@dataclass(frozen=True)
class KeyframeAlignment:
    """Indices of the four scripted events: first contact, first flow, last
    flow, last contact. Strictly increasing and inside the sequence."""

    first_contact: int
    first_flow: int
    last_flow: int
    last_contact: int

    def __post_init__(self):
        idx = self.as_array()
        if not np.all(np.diff(idx) > 0):
            raise ValueError(f"keyframes must be strictly increasing, got {idx}")
        if idx[0] < 0:
            raise ValueError("keyframes must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.first_contact, self.first_flow, self.last_flow, self.last_contact], dtype=np.int64
        )

    @classmethod
    def from_array(cls, values) -> "KeyframeAlignment":
        v = np.asarray(values, dtype=np.int64)
        if v.shape != (4,):
            raise ValueError("expected exactly four keyframe indices")
        return cls(*[int(x) for x in v])


def keyframe_correspondence(
    query_index: np.ndarray, k1: KeyframeAlignment, k2: KeyframeAlignment, len1: int, len2: int
) -> np.ndarray:
    """Piecewise-linear map from frame positions in video 1 to video 2 through
    the four keyframes, anchored at the sequence boundaries."""
    a1 = k1.as_array()
    a2 = k2.as_array()
    if a1[-1] >= len1 or a2[-1] >= len2:
        raise ValueError("keyframes exceed sequence bounds")
    xs = [0.0, *a1.astype(float), float(len1 - 1)]
    ys = [0.0, *a2.astype(float), float(len2 - 1)]
    # boundary anchors may coincide with the outer keyframes; keep strict order
    pairs = []
    for x, y in zip(xs, ys):
        if pairs and x <= pairs[-1][0]:
            continue
        pairs.append((x, y))
    px = np.array([p[0] for p in pairs])
    py = np.array([p[1] for p in pairs])
    return np.interp(np.asarray(query_index, dtype=np.float64), px, py)


def _segment_lengths(k2: KeyframeAlignment, len2: int) -> tuple[np.ndarray, np.ndarray]:
    edges = np.unique(np.concatenate([[0], k2.as_array(), [len2 - 1]]))
    lengths = np.maximum(np.diff(edges), 1)
    return edges, lengths


def alignment_error_from_embeddings(
    emb1: np.ndarray,
    emb2: np.ndarray,
    k1: KeyframeAlignment,
    k2: KeyframeAlignment,
) -> float:
    """Mean normalized frame distance between each query frame's nearest
    neighbor and its keyframe-implied position in the target video.

    The distance is divided by the length of the keyframe-bounded segment
    containing the target position and clamped to 1, so the mean lies in
    [0, 1].
    """
    e1 = np.asarray(emb1, dtype=np.float64)
    e2 = np.asarray(emb2, dtype=np.float64)
    if e1.ndim != 2 or e2.ndim != 2 or e1.shape[0] == 0 or e2.shape[0] == 0:
        raise ValueError("embeddings must be non-empty (frames, dim) arrays")
    len1, len2 = e1.shape[0], e2.shape[0]
    nn = _kernels.nearest_neighbor_indices(np.ascontiguousarray(e1), np.ascontiguousarray(e2))
    targets = keyframe_correspondence(np.arange(len1), k1, k2, len1, len2)
    edges, seg_lengths = _segment_lengths(k2, len2)
    seg_of_target = np.clip(np.searchsorted(edges, targets, side="right") - 1, 0, len(seg_lengths) - 1)
    errors = np.abs(nn - targets) / seg_lengths[seg_of_target]
    return float(np.mean(np.minimum(errors, 1.0)))


def alignment_error(
    net: Mlp,
    video1: np.ndarray,
    video2: np.ndarray,
    k1: KeyframeAlignment,
    k2: KeyframeAlignment,
) -> float:
    return alignment_error_from_embeddings(forward(net, video1), forward(net, video2), k1, k2)


# ---------------------------------------------------------------------------
# class-balanced 1-NN attribute classification
# ---------------------------------------------------------------------------

@dataclass
class ClassificationReport:
    per_attribute: dict[str, float]
    aggregate: float
    excluded: list[tuple[str, object]] = field(default_factory=list)


def classification_error_knn(
    reference_embeddings: np.ndarray,
    reference_labels: dict[str, np.ndarray],
    query_embeddings: np.ndarray,
    query_labels: dict[str, np.ndarray],
    exclude: np.ndarray | None = None,
) -> ClassificationReport:
    """1-nearest-neighbor label transfer, error balanced over classes.

    Per attribute the error is the mean over classes of the within-class
    error rate; the aggregate is the unweighted mean over attributes. Classes
    missing from the query set are skipped and recorded. ``exclude[i]`` masks
    one reference index for query i (for self-retrieval runs).
    """
    ref = np.ascontiguousarray(reference_embeddings, dtype=np.float64)
    qry = np.ascontiguousarray(query_embeddings, dtype=np.float64)
    if set(reference_labels) != set(query_labels):
        raise ValueError("reference and query label dictionaries must cover the same attributes")
    nn = _kernels.nearest_neighbor_indices(qry, ref, exclude)

    per_attribute: dict[str, float] = {}
    excluded: list[tuple[str, object]] = []
    for attr in sorted(reference_labels):
        ref_vals = np.asarray(reference_labels[attr])
        qry_vals = np.asarray(query_labels[attr])
        transferred = ref_vals[nn]
        class_errors = []
        for cls in np.unique(np.concatenate([ref_vals, qry_vals])):
            mask = qry_vals == cls
            if not mask.any():
                excluded.append((attr, cls.item() if hasattr(cls, "item") else cls))
                continue
            class_errors.append(float(np.mean(transferred[mask] != cls)))
        per_attribute[attr] = float(np.mean(class_errors))
    aggregate = float(np.mean(list(per_attribute.values())))
    return ClassificationReport(per_attribute, aggregate, excluded)


# ---------------------------------------------------------------------------
# checkpoint selection
# ---------------------------------------------------------------------------

def _argmin_earliest(scores: list[float]) -> int:
    best = 0
    for i, s in enumerate(scores):
        if s < scores[best]:
            best = i
    return best


def select_model_by_val_loss(checkpoints: list, loss_fn):
    """Pick the checkpoint with the lowest validation loss (earliest wins
    ties). ``loss_fn(checkpoint) -> float`` supplies the unsupervised score.

    Returns (selected checkpoint, index, scores).
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    scores = [float(loss_fn(c)) for c in checkpoints]
    idx = _argmin_earliest(scores)
    return checkpoints[idx], idx, scores


def select_model_by_val_classification(checkpoints: list, error_fn):
    """Pick the checkpoint with the lowest class-balanced classification error
    on a small labeled validation set (earliest wins ties).

    Returns (selected checkpoint, index, scores).
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    scores = [float(error_fn(c)) for c in checkpoints]
    idx = _argmin_earliest(scores)
    return checkpoints[idx], idx, scores
