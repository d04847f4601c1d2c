"""Masked supervised contrastive loss with a graded label-similarity mask.

For anchor ``i`` with row weights ``M[i, j]`` over the other samples ``j``::

    loss_i = -(1 / sum_j |M[i, j]|) * sum_j M[i, j] * log softmax_{a != i}(z_i . z_a / tau)[j]

and the batch loss is the sum over anchors. Anchors whose mask row sums to
zero contribute nothing. Embeddings are treated as free parameters in the
gradient; training projects back onto the unit sphere after each step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .labels import CompositeLabel, DatasetRecord

DEFAULT_TEMPERATURE = 0.1
DEFAULT_MASK_WEIGHTS = (1.0, 0.5, 0.25)


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"loss became non-finite ({value!r}) at epoch {epoch}")
        self.epoch = epoch


def build_soft_mask(labels: Sequence[CompositeLabel], weights: tuple[float, float, float] = DEFAULT_MASK_WEIGHTS) -> np.ndarray:
    """Pairwise weights: exact label > same correctness and type > same type > 0.

    ``weights`` is ``(w_exact, w_type, w_correct)`` where ``w_type`` applies to
    pairs sharing correctness and reasoning type and ``w_correct`` to pairs
    sharing the reasoning type only.
    """
    w_exact, w_type, w_correct = (float(w) for w in weights)
    if not (1.0 >= w_exact >= w_type >= w_correct >= 0.0):
        raise ValueError(f"mask weights must satisfy 1 >= w_exact >= w_type >= w_correct >= 0, got {weights}")
    n = len(labels)
    if n < 2:
        raise ValueError("a soft mask needs at least 2 labels")
    mask = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = labels[i], labels[j]
            if a == b:
                w = w_exact
            elif a.category == b.category:
                w = w_type
            elif a.reasoning_type == b.reasoning_type:
                w = w_correct
            else:
                w = 0.0
            mask[i, j] = mask[j, i] = w
    return mask


def _check(z: np.ndarray, mask: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError("need an (N, d) embedding matrix with N >= 2")
    if mask.shape != (z.shape[0], z.shape[0]):
        raise ValueError(f"mask shape {mask.shape} does not match batch size {z.shape[0]}")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    return z, mask


def _log_softmax_offdiag(z: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise log-softmax of ``z z^T / tau`` with the diagonal excluded."""
    logits = (z @ z.T) / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    np.fill_diagonal(out, 0.0)
    return out


def _row_weights(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    offdiag = mask.copy()
    np.fill_diagonal(offdiag, 0.0)
    support = np.abs(offdiag).sum(axis=1)
    active = support > 0
    inv = np.zeros_like(support)
    inv[active] = 1.0 / support[active]
    return offdiag, inv


def mask_supcon_loss(z: np.ndarray, mask: np.ndarray, tau: float = DEFAULT_TEMPERATURE) -> float:
    z, mask = _check(z, mask, tau)
    logp = _log_softmax_offdiag(z, tau)
    offdiag, inv = _row_weights(mask)
    loss = float(-(inv * (offdiag * logp).sum(axis=1)).sum())
    if not math.isfinite(loss):
        raise FloatingPointError("masked supcon loss is non-finite")
    return loss


def mask_supcon_gradient(z: np.ndarray, mask: np.ndarray, tau: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Gradient of :func:`mask_supcon_loss` with respect to the raw embeddings."""
    z, mask = _check(z, mask, tau)
    logp = _log_softmax_offdiag(z, tau)
    p = np.exp(logp)
    np.fill_diagonal(p, 0.0)
    offdiag, inv = _row_weights(mask)
    row_sum = offdiag.sum(axis=1)
    # d loss / d s_ij, with s_ij = z_i . z_j read from anchor i's row
    g = (inv[:, None] * (row_sum[:, None] * p - offdiag)) / tau
    grad = (g + g.T) @ z
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("masked supcon gradient is non-finite")
    return grad


@dataclass
class TrainResult:
    embeddings: np.ndarray
    losses: list[float] = field(default_factory=list)

    def write_loss_curve(self, fh: IO[str]) -> None:
        for epoch, loss in enumerate(self.losses):
            fh.write(json.dumps({"epoch": epoch, "loss": loss}) + "\n")


def _unit_rows(z: np.ndarray) -> np.ndarray:
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def toy_train(
    records: Sequence[DatasetRecord],
    *,
    epochs: int = 200,
    step_size: float = 0.05,
    tau: float = DEFAULT_TEMPERATURE,
    weights: tuple[float, float, float] = DEFAULT_MASK_WEIGHTS,
    dim: int = 8,
    seed: int = 0,
    init: np.ndarray | None = None,
) -> TrainResult:
    """Projected gradient descent on free unit-norm embeddings, one per record.

    ``losses[e]`` is the loss at the start of epoch ``e``; a final entry holds
    the loss after the last step, so the curve has ``epochs + 1`` points.
    """
    if len(records) < 2:
        raise ValueError("toy_train needs at least 2 records")
    if step_size < 0:
        raise ValueError("step_size must be non-negative")
    mask = build_soft_mask([r.label for r in records], weights)
    if init is None:
        rng = np.random.default_rng(seed)
        init = rng.standard_normal((len(records), dim))
    z = _unit_rows(np.asarray(init, dtype=np.float64))
    result = TrainResult(embeddings=z)
    for epoch in range(epochs):
        loss = mask_supcon_loss(z, mask, tau) if np.all(np.isfinite(z)) else math.nan
        if not math.isfinite(loss):
            raise DivergenceError(epoch, loss)
        result.losses.append(loss)
        if step_size:
            z = _unit_rows(z - step_size * mask_supcon_gradient(z, mask, tau))
    final = mask_supcon_loss(z, mask, tau) if np.all(np.isfinite(z)) else math.nan
    if not math.isfinite(final):
        raise DivergenceError(epochs, final)
    result.losses.append(final)
    result.embeddings = z
    return result
