"""Query-aware and diversity-aware video selection over group-activity features.

Query-aware selection scores every pool video against each query video with
an informative score I = S + lambda * V, where S is plain cosine similarity of
GAFs and V is the query local dissimilarity: the variance of cosine
similarities obtained when the query is re-encoded P times with a few persons
randomly hidden. High V flags videos that look globally similar to the query
but differ in some persons — the most instructive ones to annotate.

Diversity-aware selection then narrows the extended set down with k-center
greedy (core-set): repeatedly pick the candidate farthest from everything
selected so far.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import EncoderParams, MaskPattern, VideoFeatures, encode_gaf
from .errors import (
    ConfigError,
    DegenerateInputError,
    MaskError,
    PoolExhaustedError,
    ShapeError,
)

CORESET_METRICS = ("cosine-distance", "cosine-similarity")


@dataclass
class SelectionConfig:
    """Knobs of the two-stage selection.

    n_masked (persons hidden per pattern) and patterns (number of random
    patterns P) drive the local-dissimilarity term; lambda_weight balances it
    against plain similarity. n_extra multiplies the per-query budget before
    the diversity stage narrows the union down to n_select.

    coreset_metric "cosine-distance" is standard k-center greedy (maximize the
    minimum 1 - cos distance to the selected set); "cosine-similarity"
    maximizes the minimum cosine similarity instead, which crowds the picks
    together and is kept only for fidelity experiments. ranking "desc" selects
    the highest informative scores; "asc" the lowest.
    """

    n_select: int = 5
    n_extra: int = 4
    n_masked: int = 2
    patterns: int = 10
    lambda_weight: float = 1.0
    coreset_metric: str = "cosine-distance"
    ranking: str = "desc"
    use_similarity_term: bool = True
    use_dissimilarity_term: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_select < 1:
            raise ConfigError("n_select must be >= 1")
        if self.n_extra < 1:
            raise ConfigError("n_extra must be >= 1")
        if self.n_masked < 0:
            raise ConfigError("n_masked must be >= 0")
        if self.patterns < 1:
            raise ConfigError("patterns must be >= 1")
        if self.lambda_weight < 0:
            raise ConfigError("lambda_weight must be >= 0")
        if self.coreset_metric not in CORESET_METRICS:
            raise ConfigError(f"coreset_metric must be one of {CORESET_METRICS}")
        if self.ranking not in ("desc", "asc"):
            raise ConfigError("ranking must be 'desc' or 'asc'")


@dataclass
class SelectionScores:
    """Score matrices of one query-aware pass, one row per query video."""

    query_ids: list[str]
    pool_ids: list[str]
    similarity: np.ndarray       # S, (Q, M)
    dissimilarity: np.ndarray    # V, (Q, M)
    informative: np.ndarray      # I = S + lambda * V
    mean_masked_similarity: np.ndarray  # S-bar, (Q, M)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, clipped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"vectors must share one dimension, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _unit_rows(matrix: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"{what} {zero[0]} has zero norm")
    return matrix / norms[:, None]


def query_similarity(query_gafs: Sequence[np.ndarray],
                     pool_gafs: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarity matrix, queries by pool."""
    if len(query_gafs) == 0 or len(pool_gafs) == 0:
        raise DegenerateInputError("query and pool GAF lists must be non-empty")
    q = _unit_rows(np.asarray(query_gafs, dtype=np.float64), "query vector")
    p = _unit_rows(np.asarray(pool_gafs, dtype=np.float64), "pool vector")
    return np.clip(q @ p.T, -1.0, 1.0)


def draw_mask_patterns(n_persons: int, n_masked: int, count: int,
                       rng: np.random.Generator) -> list[MaskPattern]:
    """Draw `count` random patterns of `n_masked` distinct persons each.

    Masks within a pattern are drawn without replacement; patterns are
    independent, so duplicates across patterns may occur. The draw order
    (one rng.choice per pattern, in sequence) is part of the contract so that
    identical seeds reproduce identical patterns.
    """
    if n_masked >= n_persons:
        raise MaskError(
            f"cannot mask {n_masked} of {n_persons} persons; at least one must remain"
        )
    patterns = []
    for _ in range(count):
        chosen = rng.choice(n_persons, size=n_masked, replace=False) if n_masked else []
        patterns.append(MaskPattern(chosen))
    return patterns


def local_dissimilarity(
    query_video: VideoFeatures,
    pool_gafs: Sequence[np.ndarray],
    params: EncoderParams,
    cfg: SelectionConfig,
    rng: np.random.Generator,
    mask_patterns: Sequence[MaskPattern] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Variance (and mean) over P masked re-encodings of the query's similarity
    to each pool video.

    Population variance: V = (1/P) * sum_p (S_p - S_bar)^2. Returns (V, S_bar).
    """
    if mask_patterns is None:
        mask_patterns = draw_mask_patterns(
            query_video.persons, cfg.n_masked, cfg.patterns, rng
        )
    elif len(mask_patterns) == 0:
        raise ConfigError("mask_patterns must be non-empty when given")

    masked_gafs = [encode_gaf(query_video, params, m) for m in mask_patterns]
    sims = query_similarity(masked_gafs, pool_gafs)  # (P, M)
    s_bar = sims.mean(axis=0)
    v = np.mean((sims - s_bar) ** 2, axis=0)
    return v, s_bar


def informative_score(similarity: np.ndarray, dissimilarity: np.ndarray,
                      lambda_weight: float) -> np.ndarray:
    """I = S + lambda * V, elementwise."""
    similarity = np.asarray(similarity, dtype=np.float64)
    dissimilarity = np.asarray(dissimilarity, dtype=np.float64)
    if similarity.shape != dissimilarity.shape:
        raise ShapeError(
            f"S and V must share a shape, got {similarity.shape} and {dissimilarity.shape}"
        )
    return similarity + lambda_weight * dissimilarity


@dataclass
class QueryAwareSelection:
    """Extended candidate list plus the score matrices that produced it."""

    ids: list[str]
    scores: SelectionScores
    per_query_ids: list[list[str]] = field(default_factory=list)


def query_aware_select(
    queries: Sequence[VideoFeatures],
    pool_ids: Sequence[str],
    pool_gafs: Sequence[np.ndarray],
    params: EncoderParams,
    cfg: SelectionConfig,
    rng: np.random.Generator,
) -> QueryAwareSelection:
    """Pick n_select * n_extra pool videos per query by informative score.

    Queries are processed in order; each query's picks are removed from the
    working pool so later queries cannot reselect them. Scores are computed
    over the full pool (so the report is rectangular) but ranking only
    considers videos still available. Ties keep pool order. For each query the
    P mask patterns are drawn from `rng` first, before any scoring.
    """
    if len(pool_ids) != len(pool_gafs):
        raise ShapeError(f"{len(pool_ids)} pool ids but {len(pool_gafs)} GAFs")
    need_per_query = cfg.n_select * cfg.n_extra
    if need_per_query * len(queries) > len(pool_ids):
        raise PoolExhaustedError(
            f"selection budget {need_per_query} x {len(queries)} queries exceeds "
            f"pool size {len(pool_ids)}"
        )

    pool_matrix = np.asarray(pool_gafs, dtype=np.float64)
    available = np.ones(len(pool_ids), dtype=bool)
    s_rows, v_rows, i_rows, sbar_rows = [], [], [], []
    extended: list[str] = []
    per_query: list[list[str]] = []

    for query in queries:
        patterns = draw_mask_patterns(query.persons, cfg.n_masked, cfg.patterns, rng)
        if cfg.use_dissimilarity_term:
            v_row, sbar_row = local_dissimilarity(
                query, pool_matrix, params, cfg, rng, mask_patterns=patterns
            )
        else:
            v_row = np.zeros(len(pool_ids))
            sbar_row = np.zeros(len(pool_ids))
        if cfg.use_similarity_term:
            s_row = query_similarity([encode_gaf(query, params)], pool_matrix)[0]
        else:
            s_row = np.zeros(len(pool_ids))
        i_row = informative_score(s_row, v_row, cfg.lambda_weight)

        keys = -i_row if cfg.ranking == "desc" else i_row
        order = np.argsort(keys, kind="stable")
        picked = [int(j) for j in order if available[j]][:need_per_query]
        for j in picked:
            available[j] = False
        chosen_ids = [pool_ids[j] for j in picked]
        extended.extend(chosen_ids)
        per_query.append(chosen_ids)
        s_rows.append(s_row)
        v_rows.append(v_row)
        i_rows.append(i_row)
        sbar_rows.append(sbar_row)

    scores = SelectionScores(
        query_ids=[q.id for q in queries],
        pool_ids=list(pool_ids),
        similarity=np.asarray(s_rows),
        dissimilarity=np.asarray(v_rows),
        informative=np.asarray(i_rows),
        mean_masked_similarity=np.asarray(sbar_rows),
    )
    return QueryAwareSelection(ids=extended, scores=scores, per_query_ids=per_query)


def coreset_select(
    candidate_ids: Sequence[str],
    candidate_gafs: Sequence[np.ndarray],
    n_select: int,
    metric: str = "cosine-distance",
    rng: np.random.Generator | None = None,
) -> list[str]:
    """Greedy diverse subset: seed uniformly at random, then repeatedly take the
    candidate maximizing the minimum metric value to everything selected.

    With "cosine-distance" (1 - cos) this is standard k-center greedy; with
    "cosine-similarity" the raw cosine is maximized instead. Ties go to the
    lowest candidate index. Deterministic given the rng.
    """
    if metric not in CORESET_METRICS:
        raise ConfigError(f"metric must be one of {CORESET_METRICS}")
    if rng is None:
        rng = np.random.default_rng(0)
    m = len(candidate_ids)
    if len(candidate_gafs) != m:
        raise ShapeError(f"{m} candidate ids but {len(candidate_gafs)} GAFs")
    if not 1 <= n_select <= m:
        raise PoolExhaustedError(f"cannot select {n_select} of {m} candidates")

    unit = _unit_rows(np.asarray(candidate_gafs, dtype=np.float64), "candidate vector")

    def metric_to(center: int) -> np.ndarray:
        cos = np.clip(unit @ unit[center], -1.0, 1.0)
        return 1.0 - cos if metric == "cosine-distance" else cos

    first = int(rng.integers(m))
    selected = [first]
    chosen = np.zeros(m, dtype=bool)
    chosen[first] = True
    best = metric_to(first)

    for _ in range(n_select - 1):
        scores = np.where(chosen, -np.inf, best)
        u = int(np.argmax(scores))
        selected.append(u)
        chosen[u] = True
        best = np.minimum(best, metric_to(u))
    return [candidate_ids[i] for i in selected]


def selection_report_rows(
    selection: QueryAwareSelection,
    chosen_ids: Sequence[str],
) -> list[dict]:
    """Flatten a selection into one row per (query, extended candidate)."""
    chosen = set(chosen_ids)
    index = {vid: j for j, vid in enumerate(selection.scores.pool_ids)}
    rows = []
    for k, (query_id, ids) in enumerate(
        zip(selection.scores.query_ids, selection.per_query_ids)
    ):
        for rank, vid in enumerate(ids, start=1):
            j = index[vid]
            rows.append(
                {
                    "query_id": query_id,
                    "query_index": k,
                    "video_id": vid,
                    "similarity": float(selection.scores.similarity[k, j]),
                    "dissimilarity": float(selection.scores.dissimilarity[k, j]),
                    "informative": float(selection.scores.informative[k, j]),
                    "rank": rank,
                    "chosen": vid in chosen,
                }
            )
    return rows


def format_selection_report(rows: Sequence[dict]) -> str:
    """CSV text of a selection report."""
    out = io.StringIO()
    fields = [
        "query_id", "query_index", "video_id",
        "similarity", "dissimilarity", "informative", "rank", "chosen",
    ]
    writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in fields})
    return out.getvalue()
