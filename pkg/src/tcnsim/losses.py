"""Training objectives over embedding batches.

Every loss returns ``(value, gradients)`` where the gradients are exact
analytic derivatives with respect to the embedding inputs (and head
parameters where applicable); the test suite checks each against the
central-difference oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import Mlp, backward, forward, new_mlp
from .numerics import SeededRng

DEFAULT_TRIPLET_MARGIN = 0.2
DEFAULT_LIFTED_MARGIN = 1.0
_DIST_FLOOR = 1e-12


@dataclass
class TripletMargin:
    """Required gap between positive and negative squared distances."""

    alpha: float = DEFAULT_TRIPLET_MARGIN

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("margin must be non-negative")


def _as_batch(name: str, x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (batch, dim) array, got shape {arr.shape}")
    return arr


def triplet_loss(
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: TripletMargin | float = DEFAULT_TRIPLET_MARGIN,
):
    """Mean hinge max(0, ||a-p||^2 - ||a-n||^2 + alpha) over the batch.

    Inactive triplets contribute exactly zero gradient.
    """
    alpha = margin.alpha if isinstance(margin, TripletMargin) else float(margin)
    a = _as_batch("anchors", anchors)
    p = _as_batch("positives", positives)
    n = _as_batch("negatives", negatives)
    if not (a.shape == p.shape == n.shape):
        raise ValueError(f"batch shapes differ: {a.shape}, {p.shape}, {n.shape}")

    ap = a - p
    an = a - n
    gap = np.sum(ap * ap, axis=1) - np.sum(an * an, axis=1) + alpha
    active = gap > 0.0
    loss = float(np.mean(np.where(active, gap, 0.0)))

    scale = active.astype(np.float64)[:, None] * (2.0 / a.shape[0])
    grad_a = scale * (n - p)
    grad_p = scale * (p - a)
    grad_n = scale * (a - n)
    return loss, (grad_a, grad_p, grad_n)


def npairs_loss(anchors: np.ndarray, positives: np.ndarray):
    """Each anchor classifies its own positive among all positives.

    Softmax cross-entropy over inner-product logits; every other pair's
    positive acts as a negative.
    """
    a = _as_batch("anchors", anchors)
    p = _as_batch("positives", positives)
    if a.shape != p.shape:
        raise ValueError(f"batch shapes differ: {a.shape} vs {p.shape}")
    b = a.shape[0]
    if b < 2:
        raise ValueError("npairs needs at least 2 pairs (batch of 1 has no negatives)")

    logits = a @ p.T
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    softmax = expl / expl.sum(axis=1, keepdims=True)
    loss = float(-np.mean(np.log(np.maximum(softmax.diagonal(), 1e-300))))

    dlogits = (softmax - np.eye(b)) / b
    grad_a = dlogits @ p
    grad_p = dlogits.T @ a
    return loss, (grad_a, grad_p)


def lifted_structured_loss(
    anchors: np.ndarray, positives: np.ndarray, margin: float = DEFAULT_LIFTED_MARGIN
):
    """Squared hinged log-sum-exp over each positive pair's negatives.

    For pair i the negatives are the cross terms (a_i, p_j) and (p_i, a_j),
    j != i, with Euclidean (not squared) distances:

        J_i = log( sum_neg exp(margin - D_neg) ) + D(a_i, p_i)
        loss = mean_i max(0, J_i)^2 / 2
    """
    a = _as_batch("anchors", anchors)
    p = _as_batch("positives", positives)
    if a.shape != p.shape:
        raise ValueError(f"batch shapes differ: {a.shape} vs {p.shape}")
    b = a.shape[0]
    if b < 2:
        raise ValueError("lifted structured loss needs at least 2 pairs")

    diff_ap = a[:, None, :] - p[None, :, :]  # (i, j): a_i - p_j
    dist_ap = np.sqrt(np.maximum(np.sum(diff_ap * diff_ap, axis=2), 0.0))
    diff_pa = p[:, None, :] - a[None, :, :]  # (i, j): p_i - a_j
    dist_pa = np.sqrt(np.maximum(np.sum(diff_pa * diff_pa, axis=2), 0.0))

    off = ~np.eye(b, dtype=bool)
    exp_ap = np.where(off, np.exp(margin - dist_ap), 0.0)
    exp_pa = np.where(off, np.exp(margin - dist_pa), 0.0)
    z = exp_ap.sum(axis=1) + exp_pa.sum(axis=1)
    j_val = np.log(z) + dist_ap.diagonal()
    active = j_val > 0.0
    loss = float(np.mean(np.where(active, j_val, 0.0) ** 2) / 2.0)

    grad_a = np.zeros_like(a)
    grad_p = np.zeros_like(p)
    # d loss / d J_i = J_i / b on the active set
    coef = np.where(active, j_val, 0.0) / b
    safe_ap = np.maximum(dist_ap, _DIST_FLOOR)
    safe_pa = np.maximum(dist_pa, _DIST_FLOOR)
    unit_ap = diff_ap / safe_ap[:, :, None]
    unit_pa = diff_pa / safe_pa[:, :, None]

    # positive-pair distance term
    pos_unit = unit_ap[np.arange(b), np.arange(b)]
    grad_a += coef[:, None] * pos_unit
    grad_p -= coef[:, None] * pos_unit
    # negative terms: dJ_i/dD = -exp(margin - D) / z_i
    w_ap = -(exp_ap / z[:, None]) * coef[:, None]  # weight on D(a_i, p_j)
    w_pa = -(exp_pa / z[:, None]) * coef[:, None]  # weight on D(p_i, a_j)
    grad_a += np.einsum("ij,ijk->ik", w_ap, unit_ap)
    grad_p -= np.einsum("ij,ijk->jk", w_ap, unit_ap)
    grad_p += np.einsum("ij,ijk->ik", w_pa, unit_pa)
    grad_a -= np.einsum("ij,ijk->jk", w_pa, unit_pa)
    return loss, (grad_a, grad_p)


@dataclass
class OrderHead:
    """Classifier from three concatenated embeddings to a temporal-order logit."""

    mlp: Mlp

    @property
    def embed_dim(self) -> int:
        return self.mlp.input_dim // 3


def new_order_head(rng: SeededRng, embed_dim: int, hidden: int = 64) -> OrderHead:
    return OrderHead(new_mlp(rng, 3 * embed_dim, (hidden,), 1))


def shuffle_learn_loss(
    head: OrderHead,
    first: np.ndarray,
    middle: np.ndarray,
    last: np.ndarray,
    labels: np.ndarray,
):
    """Binary cross-entropy of the order head on frame triples.

    Returns (loss, head parameter grads, grads for the three embedding blocks).
    """
    e1 = _as_batch("first", first)
    e2 = _as_batch("middle", middle)
    e3 = _as_batch("last", last)
    if not (e1.shape == e2.shape == e3.shape):
        raise ValueError("triple batches must share a shape")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != e1.shape[0]:
        raise ValueError("labels length must match batch size")

    x = np.concatenate([e1, e2, e3], axis=1)
    logits, cache = forward(head.mlp, x, want_cache=True)
    z = logits[:, 0]
    # stable binary cross-entropy with logits
    loss = float(np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))))

    sig = 1.0 / (1.0 + np.exp(-z))
    dz = ((sig - y) / y.shape[0])[:, None]
    head_grads, dx = backward(head.mlp, cache, dz)
    d = e1.shape[1]
    return loss, head_grads, (dx[:, :d], dx[:, d : 2 * d], dx[:, 2 * d :])
