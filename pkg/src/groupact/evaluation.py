"""Retrieval metrics and the repeated-trial evaluation protocol.

A trial targets one activity class: sample query clips from the test split,
select clips from the train pool with the configured variant, annotate them
with the oracle, fine-tune from the pristine pre-trained snapshot, re-embed
the pool and measure Precision@K / Hit@K — both for the original queries and
for every other test clip of the class (generalization). Trials repeat per
class with derived seeds; all selection variants share the same query draws
so their numbers are comparable.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset, oracle_annotate
from .encoder import EncoderParams, VideoFeatures, encode_gaf
from .errors import ConfigError, PoolExhaustedError, ValidationError
from .finetune import FinetuneConfig, LossReport, finetune
from .selection import (
    SelectionConfig,
    coreset_select,
    query_aware_select,
)

logger = logging.getLogger(__name__)

VARIANTS = ("pretrained", "ours", "ours-wo-s", "ours-wo-v", "random", "coreset", "kmeans")


@dataclass
class EvalConfig:
    k_list: list[int] = field(default_factory=lambda: [5, 10])
    trials_per_class: int = 10
    n_query: int = 3
    n_select: int = 5
    evaluate_others: bool = True
    seed: int = 0
    # selection knobs
    n_extra: int = 4
    n_masked: int = 2
    patterns: int = 10
    lambda_weight: float = 1.0
    coreset_metric: str = "cosine-distance"
    ranking: str = "desc"
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)

    def __post_init__(self) -> None:
        if self.trials_per_class < 1:
            raise ConfigError("trials_per_class must be >= 1")
        if self.n_query < 1 or self.n_select < 1:
            raise ConfigError("n_query and n_select must be >= 1")
        if not self.k_list:
            raise ConfigError("k_list must be non-empty")
        for k in self.k_list:
            if k < 1:
                raise ConfigError("every K must be >= 1")
            if k <= self.n_select:
                logger.warning(
                    "K=%d is not large compared with n_select=%d; retrieval scores "
                    "will be dominated by the fine-tuning clips", k, self.n_select,
                )

    def selection_config(self, variant: str) -> SelectionConfig:
        return SelectionConfig(
            n_select=self.n_select,
            n_extra=self.n_extra,
            n_masked=self.n_masked,
            patterns=self.patterns,
            lambda_weight=self.lambda_weight,
            coreset_metric=self.coreset_metric,
            ranking=self.ranking,
            use_similarity_term=variant != "ours-wo-s",
            use_dissimilarity_term=variant != "ours-wo-v",
            seed=self.seed,
        )


# ---------------------------------------------------------------------------
# Retrieval and metrics
# ---------------------------------------------------------------------------


def embed_videos(videos: Sequence[VideoFeatures],
                 params: EncoderParams) -> tuple[list[str], np.ndarray]:
    """Unmasked GAFs of a clip collection as (ids, matrix) rows."""
    ids = [v.id for v in videos]
    matrix = np.stack([encode_gaf(v, params) for v in videos]) if videos else np.zeros((0, 0))
    return ids, matrix


def retrieve_topk_scored(
    query_gaf: np.ndarray,
    pool_ids: Sequence[str],
    pool_gafs: np.ndarray,
    k: int,
) -> list[tuple[str, float]]:
    """Top-K pool clips by cosine similarity to the query.

    Ties break by ascending id so rankings are deterministic.
    """
    if k < 0:
        raise ConfigError("K must be >= 0")
    if k > len(pool_ids):
        raise PoolExhaustedError(f"K={k} exceeds pool size {len(pool_ids)}")
    if k == 0:
        return []
    query = np.asarray(query_gaf, dtype=np.float64)
    qn = np.linalg.norm(query)
    norms = np.linalg.norm(pool_gafs, axis=1)
    if qn == 0.0 or (norms == 0.0).any():
        raise ValidationError("zero-norm GAF in retrieval")
    sims = np.clip((pool_gafs @ query) / (norms * qn), -1.0, 1.0)
    order = np.lexsort((np.asarray(pool_ids), -sims))[:k]
    return [(pool_ids[i], float(sims[i])) for i in order]


def retrieve_topk(query_gaf: np.ndarray, pool_ids: Sequence[str],
                  pool_gafs: np.ndarray, k: int) -> list[str]:
    return [vid for vid, _ in retrieve_topk_scored(query_gaf, pool_ids, pool_gafs, k)]


def precision_at_k(retrieved_ids: Sequence[str], target_class: str,
                   labels: dict[str, str | None]) -> float:
    """Fraction of retrieved clips whose class matches the target."""
    if not retrieved_ids:
        return 0.0
    hits = 0
    for vid in retrieved_ids:
        if vid not in labels:
            raise ValidationError(f"no class label known for retrieved id {vid!r}")
        hits += labels[vid] == target_class
    return hits / len(retrieved_ids)


def hit_at_k(retrieved_ids: Sequence[str], target_class: str,
             labels: dict[str, str | None]) -> int:
    """1 iff at least one retrieved clip matches the target class."""
    for vid in retrieved_ids:
        if vid not in labels:
            raise ValidationError(f"no class label known for retrieved id {vid!r}")
        if labels[vid] == target_class:
            return 1
    return 0


def kmeans_select(pool_ids: Sequence[str], pool_gafs: np.ndarray, k: int,
                  rng: np.random.Generator, iters: int = 50) -> list[str]:
    """Baseline: k-means over GAFs, then the clip nearest to each centroid."""
    m = len(pool_ids)
    if k > m:
        raise PoolExhaustedError(f"cannot place {k} centroids over {m} clips")
    centroids = pool_gafs[rng.choice(m, size=k, replace=False)].copy()
    assign = np.zeros(m, dtype=np.intp)
    for _ in range(iters):
        dists = np.linalg.norm(pool_gafs[:, None, :] - centroids[None, :, :], axis=2)
        new_assign = dists.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = pool_gafs[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    chosen: list[str] = []
    taken = np.zeros(m, dtype=bool)
    for j in range(k):
        dist_j = np.linalg.norm(pool_gafs - centroids[j], axis=1)
        dist_j[taken] = np.inf
        u = int(np.argmin(dist_j))
        taken[u] = True
        chosen.append(pool_ids[u])
    return chosen


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------


@dataclass
class TrialResult:
    variant: str
    target_class: str
    seed: int
    query_ids: list[str] = field(default_factory=list)
    selected_ids: list[str] = field(default_factory=list)
    annotations: dict[str, str] = field(default_factory=dict)
    precision_original: dict[int, float] = field(default_factory=dict)
    hit_original: dict[int, float] = field(default_factory=dict)
    precision_others: dict[int, float] = field(default_factory=dict)
    hit_others: dict[int, float] = field(default_factory=dict)
    loss_report: LossReport | None = None
    skipped: bool = False
    skip_reason: str = ""

    def to_record(self) -> dict:
        rec: dict = {
            "variant": self.variant,
            "class": self.target_class,
            "seed": self.seed,
            "skipped": self.skipped,
        }
        if self.skipped:
            rec["skip_reason"] = self.skip_reason
            return rec
        rec.update(
            {
                "query_ids": self.query_ids,
                "selected_ids": self.selected_ids,
                "annotations": dict(sorted(self.annotations.items())),
                "precision_original": {str(k): v for k, v in self.precision_original.items()},
                "hit_original": {str(k): v for k, v in self.hit_original.items()},
                "precision_others": {str(k): v for k, v in self.precision_others.items()},
                "hit_others": {str(k): v for k, v in self.hit_others.items()},
            }
        )
        if self.loss_report is not None and self.loss_report.epochs:
            last = self.loss_report.epochs[-1]
            rec["finetune"] = {
                "epochs_run": len(self.loss_report.epochs),
                "stop_reason": self.loss_report.stop_reason,
                "final_total": last.total,
                "final_contrastive": last.contrastive,
                "final_regularization": last.regularization,
            }
        return rec


def derive_trial_seed(protocol_seed: int, class_index: int, trial_index: int) -> int:
    """Stable per-trial seed, shared by all variants of the same trial."""
    ss = np.random.SeedSequence([protocol_seed, class_index, trial_index])
    return int(ss.generate_state(1)[0])


def _select_for_variant(
    variant: str,
    queries: list[VideoFeatures],
    pool_ids: list[str],
    pool_gafs: np.ndarray,
    params: EncoderParams,
    cfg: EvalConfig,
    rng: np.random.Generator,
) -> list[str]:
    if variant in ("ours", "ours-wo-s", "ours-wo-v"):
        sel_cfg = cfg.selection_config(variant)
        extended = query_aware_select(queries, pool_ids, pool_gafs, params, sel_cfg, rng)
        index = {vid: i for i, vid in enumerate(pool_ids)}
        ext_gafs = np.stack([pool_gafs[index[vid]] for vid in extended.ids])
        return coreset_select(extended.ids, ext_gafs, cfg.n_select,
                              metric=cfg.coreset_metric, rng=rng)
    if variant == "random":
        picks = rng.choice(len(pool_ids), size=cfg.n_select, replace=False)
        return [pool_ids[i] for i in picks]
    if variant == "coreset":
        return coreset_select(pool_ids, pool_gafs, cfg.n_select,
                              metric=cfg.coreset_metric, rng=rng)
    if variant == "kmeans":
        return kmeans_select(pool_ids, pool_gafs, cfg.n_select, rng)
    raise ConfigError(f"unknown selection variant {variant!r}; expected one of {VARIANTS}")


def run_trial(
    dataset: Dataset,
    target_class: str,
    variant: str,
    params: EncoderParams,
    cfg: EvalConfig,
    seed: int,
    pool: tuple[list[str], np.ndarray] | None = None,
) -> TrialResult:
    """One human-in-the-loop episode against the oracle annotator.

    `pool` may carry the train ids and pre-trained GAF matrix to avoid
    re-embedding per trial; it must have been computed with `params`.
    """
    query_rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    selection_rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))

    class_test = [v for v in dataset.test_videos() if v.class_label == target_class]
    if len(class_test) < cfg.n_query:
        return TrialResult(
            variant=variant, target_class=target_class, seed=seed, skipped=True,
            skip_reason=f"test split has {len(class_test)} clips of {target_class!r}, "
                        f"need {cfg.n_query}",
        )

    picks = query_rng.choice(len(class_test), size=cfg.n_query, replace=False)
    queries = [class_test[i] for i in picks]

    if pool is None:
        pool = embed_videos(dataset.train_videos(), params)
    pool_ids, pool_gafs = pool

    if variant == "pretrained":
        selected_ids: list[str] = []
        annotations = []
        fine_params = params
        loss_report = None
    else:
        try:
            selected_ids = _select_for_variant(
                variant, queries, list(pool_ids), pool_gafs, params, cfg, selection_rng
            )
        except PoolExhaustedError as exc:
            return TrialResult(
                variant=variant, target_class=target_class, seed=seed,
                skipped=True, skip_reason=str(exc),
            )
        annotations = oracle_annotate(selected_ids, target_class, dataset)
        index = dataset.index
        selected_videos = [index[vid] for vid in selected_ids]
        fine_params, loss_report = finetune(
            queries, selected_videos, annotations, params, cfg.finetune
        )

    if variant == "pretrained":
        fine_pool_gafs = pool_gafs
    else:
        index = dataset.index
        _, fine_pool_gafs = embed_videos([index[v] for v in pool_ids], fine_params)

    labels = dataset.labels()
    result = TrialResult(
        variant=variant,
        target_class=target_class,
        seed=seed,
        query_ids=[q.id for q in queries],
        selected_ids=list(selected_ids),
        annotations={a.video_id: a.label for a in annotations},
        loss_report=loss_report,
    )

    def metric_rows(query_videos: list[VideoFeatures]) -> tuple[dict, dict]:
        precs: dict[int, float] = {}
        hits: dict[int, float] = {}
        gafs = [encode_gaf(v, fine_params) for v in query_videos]
        max_k = max(cfg.k_list)
        ranked_full = [
            retrieve_topk(g, pool_ids, fine_pool_gafs, min(max_k, len(pool_ids)))
            for g in gafs
        ]
        for k in cfg.k_list:
            p_vals = [precision_at_k(r[:k], target_class, labels) for r in ranked_full]
            h_vals = [hit_at_k(r[:k], target_class, labels) for r in ranked_full]
            precs[k] = float(np.mean(p_vals))
            hits[k] = float(np.mean(h_vals))
        return precs, hits

    result.precision_original, result.hit_original = metric_rows(queries)
    if cfg.evaluate_others:
        query_set = set(result.query_ids)
        others = [v for v in class_test if v.id not in query_set]
        if others:
            result.precision_others, result.hit_others = metric_rows(others)
    return result


# ---------------------------------------------------------------------------
# Protocol aggregation
# ---------------------------------------------------------------------------

METRIC_KEYS = ("precision_original", "hit_original", "precision_others", "hit_others")


@dataclass
class ProtocolReport:
    variants: list[str]
    classes: list[str]
    k_list: list[int]
    records: list[dict]
    per_class: dict[str, dict[str, dict[str, float]]]   # variant -> class -> metric@K
    weighted: dict[str, dict[str, float]]               # variant -> metric@K

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def table(self) -> str:
        labels = dict(zip(METRIC_KEYS, ("P_orig", "H_orig", "P_others", "H_others")))
        header = ["variant"] + [f"{labels[m]}@{k}" for m in METRIC_KEYS for k in self.k_list]
        rows = [header]
        for variant in self.variants:
            row = [variant]
            for metric in METRIC_KEYS:
                for k in self.k_list:
                    val = self.weighted.get(variant, {}).get(f"{metric}@{k}")
                    row.append("-" if val is None else f"{val:.3f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines) + "\n"


def aggregate_records(records: Sequence[dict], classes: Sequence[str],
                      class_weights: dict[str, int], k_list: Sequence[int],
                      variants: Sequence[str]) -> tuple[dict, dict]:
    """Per-class means and class-size-weighted overall means per variant."""
    per_class: dict[str, dict[str, dict[str, float]]] = {}
    weighted: dict[str, dict[str, float]] = {}
    for variant in variants:
        per_class[variant] = {}
        for cls in classes:
            rows = [
                r for r in records
                if r["variant"] == variant and r["class"] == cls and not r["skipped"]
            ]
            if not rows:
                continue
            cell: dict[str, float] = {}
            for metric in METRIC_KEYS:
                for k in k_list:
                    vals = [r[metric][str(k)] for r in rows if str(k) in r.get(metric, {})]
                    if vals:
                        cell[f"{metric}@{k}"] = float(np.mean(vals))
            per_class[variant][cls] = cell
        agg: dict[str, float] = {}
        for metric in METRIC_KEYS:
            for k in k_list:
                key = f"{metric}@{k}"
                num = 0.0
                den = 0.0
                for cls in classes:
                    cell = per_class[variant].get(cls, {})
                    if key in cell:
                        w = class_weights.get(cls, 1)
                        num += w * cell[key]
                        den += w
                if den > 0:
                    agg[key] = num / den
        weighted[variant] = agg
    return per_class, weighted


def run_protocol(
    dataset: Dataset,
    variants: Sequence[str],
    cfg: EvalConfig,
    params: EncoderParams,
    max_workers: int = 1,
) -> ProtocolReport:
    """trials_per_class trials per class per variant, plus aggregation.

    The pre-trained baseline row is always included. Trial seeds depend only
    on (cfg.seed, class, trial), so every variant sees the same query draws.
    """
    if not dataset.train_videos() or not dataset.test_videos():
        raise ValidationError("protocol runs need non-empty train and test splits")
    variants = list(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    if "pretrained" not in variants:
        variants = ["pretrained"] + variants

    classes = dataset.class_names()
    if not classes:
        raise ValidationError("dataset has no class catalog")
    pool = embed_videos(dataset.train_videos(), params)

    jobs = [
        (variant, cls_idx, cls, trial)
        for variant in variants
        for cls_idx, cls in enumerate(classes)
        for trial in range(cfg.trials_per_class)
    ]

    def one(job: tuple) -> TrialResult:
        variant, cls_idx, cls, trial = job
        seed = derive_trial_seed(cfg.seed, cls_idx, trial)
        return run_trial(dataset, cls, variant, params, cfg, seed, pool=pool)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool_exec:
            results = list(pool_exec.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    records = [r.to_record() for r in results]
    class_weights = dict(dataset.class_catalog)
    per_class, weighted = aggregate_records(records, classes, class_weights,
                                            cfg.k_list, variants)
    return ProtocolReport(
        variants=variants,
        classes=classes,
        k_list=list(cfg.k_list),
        records=records,
        per_class=per_class,
        weighted=weighted,
    )


# ---------------------------------------------------------------------------
# Hyperparameter sweep harness
# ---------------------------------------------------------------------------


@dataclass
class SweepReport:
    rows: list[dict]

    def table(self) -> str:
        lines = ["parameter  value  metric  score"]
        for row in self.rows:
            for key, val in sorted(row["metrics"].items()):
                lines.append(f"{row['parameter']}  {row['value']}  {key}  {val:.3f}")
        return "\n".join(lines) + "\n"

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)


def run_sweep(
    dataset: Dataset,
    params: EncoderParams,
    cfg: EvalConfig,
    n_masked_values: Sequence[int] = (1, 2, 3, 4, 5, 6),
    n_extra_values: Sequence[int] = (2, 3, 4, 5),
    max_workers: int = 1,
) -> SweepReport:
    """Sweep the masked-person count and the extra-selection multiplier for the
    query-aware variant, one protocol run per value."""
    from dataclasses import replace as dc_replace

    rows: list[dict] = []
    for parameter, values in (("n_masked", n_masked_values), ("n_extra", n_extra_values)):
        for value in values:
            sweep_cfg = dc_replace(cfg, **{parameter: int(value)})
            report = run_protocol(dataset, ["ours"], sweep_cfg, params,
                                  max_workers=max_workers)
            rows.append(
                {
                    "parameter": parameter,
                    "value": int(value),
                    "metrics": report.weighted.get("ours", {}),
                    "baseline": report.weighted.get("pretrained", {}),
                }
            )
    return SweepReport(rows=rows)
