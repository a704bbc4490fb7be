"""Contrastive fine-tuning of the encoder from a handful of labeled clips.

The loss is a triplet hinge over GAF Euclidean distances (queries as anchors,
annotated clips as positives/negatives) plus an MSE regularizer that anchors
the selected clips' GAFs to their values under the pre-trained weights, so the
embedding adapts without drifting globally. Gradients are propagated manually
through the encoder and applied with Adam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .encoder import (
    EncoderParams,
    VideoFeatures,
    forward_gaf,
    gaf_backward,
)
from .errors import (
    ConfigError,
    DegenerateTripletError,
    NumericalError,
    ShapeError,
    ValidationError,
)
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

LABELS = ("positive", "negative")


@dataclass(frozen=True)
class Annotation:
    """One binary judgment on a selected clip."""

    video_id: str
    label: str
    annotator: str | None = None
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")


def merge_annotations(annotations: Iterable[Annotation]) -> dict[str, str]:
    """Effective label per video: latest per annotator, then majority vote.

    A tied vote resolves to negative (conservative toward precision).
    """
    per_video: dict[str, dict[str | None, Annotation]] = {}
    for ann in annotations:
        picks = per_video.setdefault(ann.video_id, {})
        prev = picks.get(ann.annotator)
        if prev is None or ann.timestamp >= prev.timestamp:
            picks[ann.annotator] = ann
    merged = {}
    for vid, picks in per_video.items():
        votes = [a.label for a in picks.values()]
        positives = votes.count("positive")
        merged[vid] = "positive" if positives > len(votes) - positives else "negative"
    return merged


@dataclass
class FinetuneConfig:
    margin: float = 10.0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    use_reg: bool = True
    reg_weight: float = 1.0
    early_stop_patience: int = 3

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


@dataclass
class EpochLoss:
    epoch: int
    total: float
    contrastive: float
    regularization: float


@dataclass
class LossReport:
    epochs: list[EpochLoss] = field(default_factory=list)
    stop_reason: str = "no-epochs"

    def to_csv(self) -> str:
        lines = ["epoch,total,contrastive,regularization"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.total!r},{e.contrastive!r},{e.regularization!r}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def triplet_loss(
    query_gafs: Sequence[np.ndarray],
    positive_gafs: Sequence[np.ndarray],
    negative_gafs: Sequence[np.ndarray],
    margin: float,
) -> float:
    """Mean over queries of the mean hinge over all (positive, negative) pairs.

    hinge = max(0, d(q, pos) - d(q, neg) + margin), d Euclidean. With one
    positive and one negative this is the plain triplet loss.
    """
    loss, _, _, _ = triplet_loss_and_grads(query_gafs, positive_gafs, negative_gafs, margin)
    return loss


def triplet_loss_and_grads(
    query_gafs: Sequence[np.ndarray],
    positive_gafs: Sequence[np.ndarray],
    negative_gafs: Sequence[np.ndarray],
    margin: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (loss, d_queries, d_positives, d_negatives)."""
    if len(query_gafs) == 0:
        raise DegenerateTripletError("triplet loss needs at least one query")
    if len(positive_gafs) == 0 or len(negative_gafs) == 0:
        raise DegenerateTripletError(
            "triplet loss needs at least one positive and one negative"
        )
    q = np.asarray(query_gafs, dtype=np.float64)
    pos = np.asarray(positive_gafs, dtype=np.float64)
    neg = np.asarray(negative_gafs, dtype=np.float64)
    if q.shape[1] != pos.shape[1] or q.shape[1] != neg.shape[1]:
        raise ShapeError("query, positive and negative GAFs must share a dimension")

    diff_pos = q[:, None, :] - pos[None, :, :]          # (Q, P, D)
    diff_neg = q[:, None, :] - neg[None, :, :]          # (Q, M, D)
    d_pos = np.linalg.norm(diff_pos, axis=2)            # (Q, P)
    d_neg = np.linalg.norm(diff_neg, axis=2)            # (Q, M)
    hinge = d_pos[:, :, None] - d_neg[:, None, :] + margin  # (Q, P, M)
    active = hinge > 0.0
    n_q, n_p, n_m = hinge.shape
    loss = float(np.sum(np.where(active, hinge, 0.0)) / (n_q * n_p * n_m))

    w = active.astype(np.float64) / (n_q * n_p * n_m)
    # Unit direction vectors; zero distance contributes a zero subgradient.
    with np.errstate(invalid="ignore", divide="ignore"):
        u_pos = np.where(d_pos[:, :, None] > 0.0, diff_pos / d_pos[:, :, None], 0.0)
        u_neg = np.where(d_neg[:, :, None] > 0.0, diff_neg / d_neg[:, :, None], 0.0)
    w_pos = w.sum(axis=2)  # (Q, P): weight on d_pos terms
    w_neg = w.sum(axis=1)  # (Q, M): weight on d_neg terms
    d_q = np.einsum("qp,qpd->qd", w_pos, u_pos) - np.einsum("qm,qmd->qd", w_neg, u_neg)
    d_positives = -np.einsum("qp,qpd->pd", w_pos, u_pos)
    d_negatives = np.einsum("qm,qmd->md", w_neg, u_neg)
    return loss, d_q, d_positives, d_negatives


def reg_loss(
    current_gafs: Sequence[np.ndarray],
    pretrained_gafs: Sequence[np.ndarray],
) -> float:
    """Mean over clips of the MSE between current and pre-trained GAFs."""
    loss, _ = reg_loss_and_grads(current_gafs, pretrained_gafs)
    return loss


def reg_loss_and_grads(
    current_gafs: Sequence[np.ndarray],
    pretrained_gafs: Sequence[np.ndarray],
) -> tuple[float, np.ndarray]:
    cur = np.asarray(current_gafs, dtype=np.float64)
    pre = np.asarray(pretrained_gafs, dtype=np.float64)
    if cur.shape != pre.shape:
        raise ShapeError(
            f"current and pre-trained GAF sets must match, got {cur.shape} vs {pre.shape}"
        )
    if cur.size == 0:
        raise ValidationError("regularizer needs at least one clip")
    err = cur - pre
    loss = float(np.mean(err * err))
    return loss, (2.0 / err.size) * err


# ---------------------------------------------------------------------------
# Fine-tuning loop
# ---------------------------------------------------------------------------


def finetune(
    queries: Sequence[VideoFeatures],
    selected: Sequence[VideoFeatures],
    annotations: Sequence[Annotation],
    params: EncoderParams,
    cfg: FinetuneConfig,
) -> tuple[EncoderParams, LossReport]:
    """Fine-tune from the pre-trained snapshot using the annotated selection.

    Every epoch re-encodes all involved clips (no person masking), evaluates
    L = L_ctr + reg_weight * L_reg, backpropagates and applies one Adam step.
    Stops early once L_ctr has been exactly zero for `early_stop_patience`
    consecutive epochs.

    Degenerate annotation sets: with no positives the other query clips stand
    in as positives for each anchor (with a single query, the contrastive term
    is skipped); with no negatives the contrastive term is skipped. A session
    with neither positives nor negatives is refused.
    """
    if len(queries) == 0:
        raise ValidationError("fine-tuning needs at least one query clip")
    labels = merge_annotations(annotations)
    missing = [v.id for v in selected if v.id not in labels]
    if missing:
        raise ValidationError(f"annotations missing for selected clips: {missing}")

    positives = [v for v in selected if labels[v.id] == "positive"]
    negatives = [v for v in selected if labels[v.id] == "negative"]
    if not positives and not negatives:
        raise DegenerateTripletError(
            "no annotated clips at all: label at least one selected clip positive "
            "or negative before fine-tuning"
        )

    query_fallback = False
    contrastive_on = True
    if not negatives:
        logger.warning("no negative clips; contrastive term skipped, regularizer only")
        contrastive_on = False
    elif not positives:
        if len(queries) >= 2:
            logger.warning("no positive clips; using the other query clips as positives")
            query_fallback = True
        else:
            logger.warning(
                "no positive clips and a single query; contrastive term skipped"
            )
            contrastive_on = False

    report = LossReport()
    if cfg.epochs == 0:
        return params, report

    snapshot = [forward_gaf(v, params).gaf for v in selected]
    state = AdamState.init(params.as_dict())
    zero_streak = 0
    report.stop_reason = "max-epochs"

    for epoch in range(cfg.epochs):
        query_caches = [forward_gaf(v, params) for v in queries]
        selected_caches = [forward_gaf(v, params) for v in selected]
        pos_idx = [i for i, v in enumerate(selected) if labels[v.id] == "positive"]
        neg_idx = [i for i, v in enumerate(selected) if labels[v.id] == "negative"]

        d_query = [np.zeros_like(c.gaf) for c in query_caches]
        d_selected = [np.zeros_like(c.gaf) for c in selected_caches]

        l_ctr = 0.0
        if contrastive_on:
            neg_gafs = [selected_caches[i].gaf for i in neg_idx]
            if query_fallback:
                # Per anchor, the other queries act as positives.
                for k in range(len(queries)):
                    others = [j for j in range(len(queries)) if j != k]
                    loss_k, dq, dp, dn = triplet_loss_and_grads(
                        [query_caches[k].gaf],
                        [query_caches[j].gaf for j in others],
                        neg_gafs,
                        cfg.margin,
                    )
                    l_ctr += loss_k / len(queries)
                    d_query[k] += dq[0] / len(queries)
                    for j, g in zip(others, dp):
                        d_query[j] += g / len(queries)
                    for i, g in zip(neg_idx, dn):
                        d_selected[i] += g / len(queries)
            else:
                loss_c, dq, dp, dn = triplet_loss_and_grads(
                    [c.gaf for c in query_caches],
                    [selected_caches[i].gaf for i in pos_idx],
                    neg_gafs,
                    cfg.margin,
                )
                l_ctr = loss_c
                for k, g in enumerate(dq):
                    d_query[k] += g
                for i, g in zip(pos_idx, dp):
                    d_selected[i] += g
                for i, g in zip(neg_idx, dn):
                    d_selected[i] += g

        l_reg = 0.0
        if cfg.use_reg:
            l_reg, d_reg = reg_loss_and_grads([c.gaf for c in selected_caches], snapshot)
            for i in range(len(selected)):
                d_selected[i] += cfg.reg_weight * d_reg[i]

        total = l_ctr + (cfg.reg_weight * l_reg if cfg.use_reg else 0.0)
        if not math.isfinite(total):
            raise NumericalError(f"non-finite fine-tuning loss at epoch {epoch}")

        grads = {name: np.zeros_like(a) for name, a in params.as_dict().items()}
        for cache, d_gaf in zip(query_caches, d_query):
            for name, g in gaf_backward(cache, params, d_gaf).items():
                grads[name] += g
        for cache, d_gaf in zip(selected_caches, d_selected):
            for name, g in gaf_backward(cache, params, d_gaf).items():
                grads[name] += g

        arrays, state = adam_step(
            params.as_dict(), grads, state,
            lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
        )
        params = params.with_arrays(arrays)
        report.epochs.append(EpochLoss(epoch, total, l_ctr, l_reg))

        zero_streak = zero_streak + 1 if l_ctr == 0.0 else 0
        if zero_streak >= cfg.early_stop_patience:
            report.stop_reason = "contrastive-zero"
            break

    return params, report
