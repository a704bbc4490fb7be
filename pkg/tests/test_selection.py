import numpy as np
import pytest

from groupact import (
    MaskPattern,
    SelectionConfig,
    coreset_select,
    cosine_similarity,
    encode_gaf,
    informative_score,
    init_params,
    local_dissimilarity,
    query_aware_select,
    query_similarity,
)
from groupact.errors import (
    DegenerateInputError,
    MaskError,
    PoolExhaustedError,
    ShapeError,
)
from groupact.selection import format_selection_report, selection_report_rows

from helpers import make_video
from oracles import (
    coreset_oracle,
    cosine_oracle,
    covering_radius,
    query_aware_oracle,
    variance_oracle,
)


class TestCosineSimilarity:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            v = rng.normal(size=6)
            assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_scale_invariance(self):
        assert cosine_similarity(np.array([1.0, 2.0]), np.array([2.0, 4.0])) == pytest.approx(
            1.0, abs=1e-12
        )

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            cosine_similarity(np.ones(3), np.ones(4))


class TestQuerySimilarity:
    def test_exact_copy_scores_one(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=8)
        pool = [rng.normal(size=8), q.copy(), rng.normal(size=8)]
        s = query_similarity([q], pool)
        assert s[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_single_pair_equals_cosine(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=8), rng.normal(size=8)
        s = query_similarity([a], [b])
        assert s.shape == (1, 1)
        assert s[0, 0] == pytest.approx(cosine_similarity(a, b), abs=1e-12)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(3)
        queries = [rng.normal(size=8) for _ in range(3)]
        pool = [rng.normal(size=8) for _ in range(50)]
        s = query_similarity(queries, pool)
        for k in range(3):
            for j in range(50):
                assert s[k, j] == pytest.approx(cosine_oracle(queries[k], pool[j]), abs=1e-12)

    def test_entries_within_unit_interval(self):
        rng = np.random.default_rng(4)
        s = query_similarity(
            [rng.normal(size=4) for _ in range(5)], [rng.normal(size=4) for _ in range(20)]
        )
        assert (s >= -1.0).all() and (s <= 1.0).all()


@pytest.fixture()
def small_params():
    return init_params(8, seed=0)


class TestLocalDissimilarity:
    def test_single_pattern_gives_zero_variance(self, small_params):
        rng = np.random.default_rng(5)
        query = make_video(rng, frames=2, persons=4, dim=8)
        pool = [encode_gaf(make_video(rng, dim=8, vid=f"p{i}"), small_params) for i in range(6)]
        cfg = SelectionConfig(patterns=1, n_masked=1)
        v, _ = local_dissimilarity(query, pool, small_params, cfg, rng)
        assert np.array_equal(v, np.zeros(6))

    def test_unmasked_patterns_give_zero_variance(self, small_params):
        rng = np.random.default_rng(6)
        query = make_video(rng, frames=2, persons=4, dim=8)
        pool = [encode_gaf(make_video(rng, dim=8, vid=f"p{i}"), small_params) for i in range(5)]
        cfg = SelectionConfig(patterns=4, n_masked=0)
        v, _ = local_dissimilarity(query, pool, small_params, cfg, rng)
        assert np.allclose(v, 0.0, atol=1e-24)

    def test_enumerated_masks_match_variance_oracle(self, small_params):
        rng = np.random.default_rng(7)
        query = make_video(rng, frames=2, persons=3, dim=8)
        pool = [encode_gaf(make_video(rng, dim=8, vid=f"p{i}"), small_params) for i in range(7)]
        patterns = [MaskPattern({0}), MaskPattern({1}), MaskPattern({2})]
        cfg = SelectionConfig(patterns=3, n_masked=1)
        v, s_bar = local_dissimilarity(
            query, pool, small_params, cfg, rng, mask_patterns=patterns
        )
        masked_gafs = [encode_gaf(query, small_params, m) for m in patterns]
        for j in range(7):
            sims = [cosine_oracle(g, pool[j]) for g in masked_gafs]
            want_var, want_mean = variance_oracle(sims)
            assert v[j] == pytest.approx(want_var, abs=1e-12)
            assert s_bar[j] == pytest.approx(want_mean, abs=1e-12)

    def test_variance_nonnegative(self, small_params):
        rng = np.random.default_rng(8)
        for _ in range(10):
            query = make_video(rng, frames=2, persons=5, dim=8)
            pool = [
                encode_gaf(make_video(rng, dim=8, vid=f"p{i}"), small_params) for i in range(8)
            ]
            cfg = SelectionConfig(patterns=5, n_masked=2)
            v, _ = local_dissimilarity(query, pool, small_params, cfg, rng)
            assert (v >= 0.0).all()

    def test_masking_all_persons_rejected(self, small_params):
        rng = np.random.default_rng(9)
        query = make_video(rng, persons=3, dim=8)
        pool = [encode_gaf(query, small_params)]
        cfg = SelectionConfig(patterns=2, n_masked=3)
        with pytest.raises(MaskError):
            local_dissimilarity(query, pool, small_params, cfg, rng)


class TestInformativeScore:
    def test_zero_lambda_returns_similarity(self):
        rng = np.random.default_rng(10)
        s = rng.normal(size=(3, 5))
        v = rng.uniform(0, 1, size=(3, 5))
        assert np.array_equal(informative_score(s, v, 0.0), s)

    def test_simple_arithmetic(self):
        got = informative_score(np.array([[0.5]]), np.array([[0.02]]), 1.0)
        assert got[0, 0] == pytest.approx(0.52, abs=1e-15)

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(11)
        s = rng.normal(size=(4, 6))
        v = rng.uniform(0, 1, size=(4, 6))
        got = informative_score(s, v, 0.5)
        for k in range(4):
            for j in range(6):
                assert got[k, j] == s[k, j] + 0.5 * v[k, j]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            informative_score(np.zeros((2, 3)), np.zeros((3, 2)), 1.0)


def _pool_from_videos(videos, params):
    ids = [v.id for v in videos]
    gafs = np.stack([encode_gaf(v, params) for v in videos])
    return ids, gafs


class TestQueryAwareSelect:
    def test_exact_duplicates_selected_first(self, small_params):
        rng = np.random.default_rng(12)
        queries = [make_video(rng, dim=8, vid=f"q{i}") for i in range(2)]
        q_gafs = [encode_gaf(q, small_params) for q in queries]
        # Pool: the two query GAFs verbatim plus vectors orthogonal to both.
        noise = []
        for i in range(6):
            v = rng.normal(size=16)
            for g in q_gafs:
                v -= (v @ g) / (g @ g) * g
            noise.append(v)
        pool_ids = ["dup0", "dup1"] + [f"n{i}" for i in range(6)]
        pool_gafs = np.stack(q_gafs + noise)
        cfg = SelectionConfig(n_select=1, n_extra=1, lambda_weight=0.0, patterns=2, n_masked=1)
        result = query_aware_select(
            queries, pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(0)
        )
        assert result.ids == ["dup0", "dup1"]

    def test_identical_queries_get_disjoint_selections(self, small_params):
        rng = np.random.default_rng(13)
        query = make_video(rng, dim=8, vid="q", persons=4)
        pool_videos = [make_video(rng, dim=8, vid=f"p{i}", persons=4) for i in range(12)]
        pool_ids, pool_gafs = _pool_from_videos(pool_videos, small_params)
        cfg = SelectionConfig(n_select=2, n_extra=2, patterns=3, n_masked=1)
        result = query_aware_select(
            [query, query], pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(1)
        )
        assert len(result.ids) == 8
        assert len(set(result.ids)) == 8

    def test_matches_algorithm_oracle(self, small_params):
        rng = np.random.default_rng(14)
        queries = [make_video(rng, dim=8, vid=f"q{i}", persons=4) for i in range(3)]
        pool_videos = [make_video(rng, dim=8, vid=f"p{i}", persons=4) for i in range(40)]
        pool_ids, pool_gafs = _pool_from_videos(pool_videos, small_params)
        cfg = SelectionConfig(n_select=2, n_extra=3, patterns=4, n_masked=2)

        got = query_aware_select(
            queries, pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(77)
        )
        want = query_aware_oracle(
            [encode_gaf(q, small_params) for q in queries],
            queries,
            pool_ids,
            [pool_gafs[i] for i in range(len(pool_ids))],
            lambda video, pat: encode_gaf(video, small_params, MaskPattern(pat)),
            cfg,
            np.random.default_rng(77),
        )
        assert got.ids == want

    def test_budget_exactness_and_scores_consistency(self, small_params):
        rng = np.random.default_rng(15)
        queries = [make_video(rng, dim=8, vid=f"q{i}", persons=4) for i in range(2)]
        pool_videos = [make_video(rng, dim=8, vid=f"p{i}", persons=4) for i in range(20)]
        pool_ids, pool_gafs = _pool_from_videos(pool_videos, small_params)
        cfg = SelectionConfig(n_select=2, n_extra=2, patterns=3, n_masked=1, lambda_weight=0.7)
        result = query_aware_select(
            queries, pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(5)
        )
        assert len(result.ids) == cfg.n_select * cfg.n_extra * len(queries)
        scores = result.scores
        recomposed = scores.similarity + cfg.lambda_weight * scores.dissimilarity
        assert np.max(np.abs(scores.informative - recomposed)) == 0.0
        assert (scores.dissimilarity >= 0.0).all()

    def test_pool_exhaustion_rejected(self, small_params):
        rng = np.random.default_rng(16)
        queries = [make_video(rng, dim=8, vid="q", persons=4)]
        pool_videos = [make_video(rng, dim=8, vid=f"p{i}", persons=4) for i in range(3)]
        pool_ids, pool_gafs = _pool_from_videos(pool_videos, small_params)
        cfg = SelectionConfig(n_select=2, n_extra=2)
        with pytest.raises(PoolExhaustedError):
            query_aware_select(
                queries, pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(0)
            )

    def test_seed_determinism(self, small_params):
        rng = np.random.default_rng(17)
        queries = [make_video(rng, dim=8, vid=f"q{i}", persons=5) for i in range(2)]
        pool_videos = [make_video(rng, dim=8, vid=f"p{i}", persons=5) for i in range(15)]
        pool_ids, pool_gafs = _pool_from_videos(pool_videos, small_params)
        cfg = SelectionConfig(n_select=2, n_extra=2, patterns=4, n_masked=2)
        a = query_aware_select(
            queries, pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(9)
        )
        b = query_aware_select(
            queries, pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(9)
        )
        assert a.ids == b.ids

    def test_report_rows_cover_extended_set(self, small_params):
        rng = np.random.default_rng(18)
        queries = [make_video(rng, dim=8, vid=f"q{i}", persons=4) for i in range(2)]
        pool_videos = [make_video(rng, dim=8, vid=f"p{i}", persons=4) for i in range(10)]
        pool_ids, pool_gafs = _pool_from_videos(pool_videos, small_params)
        cfg = SelectionConfig(n_select=1, n_extra=2, patterns=2, n_masked=1)
        result = query_aware_select(
            queries, pool_ids, pool_gafs, small_params, cfg, np.random.default_rng(2)
        )
        chosen = result.ids[:2]
        rows = selection_report_rows(result, chosen)
        assert {r["video_id"] for r in rows} == set(result.ids)
        text = format_selection_report(rows)
        assert text.splitlines()[0].startswith("query_id,")
        assert len(text.splitlines()) == len(rows) + 1


class TestCoresetSelect:
    def test_selecting_all_returns_all(self):
        rng = np.random.default_rng(19)
        gafs = [rng.normal(size=6) for _ in range(5)]
        ids = [f"c{i}" for i in range(5)]
        got = coreset_select(ids, gafs, 5, rng=np.random.default_rng(3))
        assert sorted(got) == sorted(ids)

    def test_single_pick_is_uniform_seeded(self):
        rng = np.random.default_rng(20)
        gafs = [rng.normal(size=6) for _ in range(7)]
        ids = [f"c{i}" for i in range(7)]
        got = coreset_select(ids, gafs, 1, rng=np.random.default_rng(4))
        expected_first = int(np.random.default_rng(4).integers(7))
        assert got == [ids[expected_first]]

    def test_matches_exhaustive_greedy_oracle(self):
        rng = np.random.default_rng(21)
        gafs = [rng.normal(size=6) for _ in range(6)]
        ids = [f"c{i}" for i in range(6)]
        got = coreset_select(ids, gafs, 3, metric="cosine-distance",
                             rng=np.random.default_rng(5))
        want = coreset_oracle(ids, gafs, 3, "cosine-distance", np.random.default_rng(5))
        assert got == want

    def test_similarity_metric_matches_oracle(self):
        rng = np.random.default_rng(22)
        gafs = [rng.normal(size=6) for _ in range(6)]
        ids = [f"c{i}" for i in range(6)]
        got = coreset_select(ids, gafs, 4, metric="cosine-similarity",
                             rng=np.random.default_rng(6))
        want = coreset_oracle(ids, gafs, 4, "cosine-similarity", np.random.default_rng(6))
        assert got == want

    def test_covering_radius_matches_oracle(self):
        rng = np.random.default_rng(23)
        for trial in range(10):
            m = int(rng.integers(4, 11))
            gafs = [rng.normal(size=5) for _ in range(m)]
            ids = [f"c{i}" for i in range(m)]
            n_sel = int(rng.integers(2, m + 1))
            got = coreset_select(ids, gafs, n_sel, rng=np.random.default_rng(trial))
            want = coreset_oracle(ids, gafs, n_sel, "cosine-distance",
                                  np.random.default_rng(trial))
            got_r = covering_radius(gafs, [ids.index(i) for i in got])
            want_r = covering_radius(gafs, [ids.index(i) for i in want])
            assert got_r == pytest.approx(want_r, abs=1e-12)

    def test_overdraw_rejected(self):
        rng = np.random.default_rng(24)
        gafs = [rng.normal(size=4) for _ in range(3)]
        with pytest.raises(PoolExhaustedError):
            coreset_select(["a", "b", "c"], gafs, 4, rng=np.random.default_rng(0))
