import random

import numpy as np
import pytest

from mlego.batch import (
    BatchQuery,
    Fragment,
    benefit,
    execute_batch,
    model_benefit,
    optimize_batch,
    overlay,
    shared_regions,
    layer_cutoff,
)
from mlego.grid import materialize_grid
from mlego.lda import LdaConfig
from mlego.planner import CostModel, PlanContext
from mlego.regions import Interval, Region
from mlego.store import ModelCatalog


def r1d(lo, hi):
    return Region.of({"id": Interval(float(lo), float(hi))})


class UniformCounter:
    """Doc counts proportional to interval length: one document per unit."""

    def count_docs(self, region):
        iv = region.interval("id")
        return max(int(round(iv.hi - iv.lo)), 0)

    def __call__(self, region):
        return self.count_docs(region)


COUNT = UniformCounter()


def ctx_for(n_query, kappa=1e-6):
    return PlanContext(n_query=n_query, k=10, v=100, max_iters=10,
                       cost=CostModel(kappa_train=kappa))


class TestSharedRegions:
    def test_disjoint_queries_share_nothing(self):
        got = shared_regions([(0, [r1d(0, 10)]), (1, [r1d(20, 30)])])
        assert got == []

    def test_identical_queries_share_everything(self):
        got = shared_regions([(0, [r1d(0, 10)]), (1, [r1d(0, 10)])])
        assert len(got) == 1
        assert got[0].region == r1d(0, 10)
        assert got[0].multiplicity == 2

    def test_three_overlapping_queries_match_grid_count_oracle(self):
        uncovered = [
            (0, [r1d(0, 50)]),
            (1, [r1d(20, 80)]),
            (2, [r1d(40, 100)]),
        ]
        frags = shared_regions(uncovered)
        # integer-point oracle over [0, 100)
        for p in range(100):
            x = p + 0.5
            expected = sum(
                1 for _, regions in uncovered
                for r in regions if r.interval("id").contains_value(x)
            )
            hits = [f for f in frags if f.region.interval("id").contains_value(x)]
            if expected >= 2:
                assert len(hits) == 1
                assert hits[0].multiplicity == expected
            else:
                assert hits == []

    def test_fragments_are_disjoint(self):
        frags = shared_regions([
            (0, [r1d(0, 60)]), (1, [r1d(30, 90)]), (2, [r1d(50, 70)]),
        ])
        for i, a in enumerate(frags):
            for b in frags[i + 1:]:
                assert not a.region.overlaps(b.region)


class TestBenefit:
    def test_no_sharing_no_benefit(self):
        assert benefit([], COUNT, ctx_for(100)) == 0.0

    def test_single_fragment_formula(self):
        ctx = ctx_for(100)
        frag = Fragment(r1d(0, 10), frozenset({0, 1, 2}))
        c = ctx.cost_train(10)
        assert benefit([frag], COUNT, ctx) == pytest.approx(2 * c)


class TestModelBenefit:
    def test_disjoint_model_costs_its_own_training(self):
        ctx = ctx_for(100)
        got = model_benefit(r1d(0, 10), 10, [(1, r1d(50, 60))], COUNT, ctx)
        assert got == pytest.approx(-ctx.cost_train(10))
        assert got < 0

    def test_model_inside_two_other_uncovered_areas(self):
        ctx = ctx_for(100)
        region = r1d(10, 20)
        others = [(1, r1d(0, 40)), (2, r1d(5, 30))]
        got = model_benefit(region, 10, others, COUNT, ctx)
        c = ctx.cost_train(10)
        assert got == pytest.approx(2 * c - c)
        assert got > 0

    def test_reference_positivity_condition(self):
        """Dropping pays exactly when twice the shared training cost exceeds
        the model's own training cost."""
        ctx = ctx_for(1000)
        # model covers [0, 30); other queries both need [0, 20) trained
        region = r1d(0, 30)
        others = [(1, r1d(0, 20)), (2, r1d(0, 20))]
        got = model_benefit(region, 30, others, COUNT, ctx)
        expected = 2 * ctx.cost_train(20) - ctx.cost_train(30)
        assert got == pytest.approx(expected)
        assert (got > 0) == (2 * ctx.cost_train(20) > ctx.cost_train(30))


class StubDataset:
    """Uniform-density dataset stand-in for pure planning tests."""

    def __init__(self, n=1000):
        self.n = n
        self.vocab_hash = "vh"

    class _Vocab:
        size = 100

    vocabulary = _Vocab()

    def count_docs(self, region):
        iv = region.interval("id")
        lo = max(iv.lo, 0.0)
        hi = min(iv.hi, float(self.n))
        return max(int(round(hi - lo)), 0)


def stub_catalog(regions_and_docs, cfg, vocab_hash="vh"):
    from mlego.merge import CgsPayload

    cat = ModelCatalog("stub")
    rng = np.random.default_rng(0)
    for region, n in regions_and_docs:
        counts = rng.random((cfg.K, 100))
        cat.materialize(
            region,
            CgsPayload(counts, n, int(counts.sum()), vocab_hash),
            "cgs", cfg, n,
        )
    return cat


CFG = LdaConfig(K=3, max_iters=2, seed=0)


class TestOptimizeBatch:
    def test_empty_batch(self):
        plan = optimize_batch(StubDataset(), ModelCatalog("s"), [], CFG)
        assert plan.choices == []

    def test_mixed_alpha_falls_back(self):
        plan = optimize_batch(
            StubDataset(), ModelCatalog("s"),
            [BatchQuery(r1d(0, 10), alpha=0.5)], CFG,
        )
        assert plan.mixed_alpha_fallback
        assert plan.warnings

    def test_batch_of_one_matches_single_query_coverage(self):
        ds = StubDataset(1000)
        cat = stub_catalog([(r1d(0, 400), 400), (r1d(400, 800), 400)], CFG)
        plan = optimize_batch(ds, cat, [BatchQuery(r1d(0, 1000))], CFG)
        assert plan.choices[0].plan_ids == ("m000001", "m000002")
        assert plan.shared == []

    def test_identical_queries_share_uncovered_training(self):
        ds = StubDataset(1000)
        cat = stub_catalog([(r1d(0, 400), 400)], CFG)
        queries = [BatchQuery(r1d(0, 1000)), BatchQuery(r1d(0, 1000))]
        plan = optimize_batch(ds, cat, queries, CFG)
        assert len(plan.shared) == 1
        assert plan.shared[0].region == r1d(400, 1000)
        assert plan.shared[0].multiplicity == 2
        ctx = PlanContext(n_query=1000, k=CFG.K, v=100, max_iters=CFG.max_iters,
                          cost=CostModel())
        assert plan.total_benefit == pytest.approx(ctx.cost_train(600))
        assert plan.predicted_time_s < plan.independent_time_s

    def test_drop_heuristic_removes_model_shared_by_others(self):
        # q0's model spans the whole of q0; four later queries start at 250,
        # cannot reuse the model, and all must train [250, 500) anyway.
        # Dropping it pays: 4 * c(250 docs) > c(300 docs) + c(300 docs).
        ds = StubDataset(1000)
        cat = stub_catalog([(r1d(200, 500), 300)], CFG)
        queries = [BatchQuery(r1d(200, 500))] + [
            BatchQuery(r1d(250, 800 + 50 * j)) for j in range(4)
        ]
        plan = optimize_batch(ds, cat, queries, CFG)
        choice0 = plan.choices[0]
        assert choice0.removed == ("m000001",)
        assert choice0.plan_ids == ()
        assert all(v > 0 for v in choice0.removed_benefits.values())
        shared = {
            (f.region.interval("id").lo, f.region.interval("id").hi):
            f.multiplicity
            for f in plan.shared
        }
        assert shared[(250.0, 500.0)] == 5

    def test_keeps_model_when_dropping_does_not_pay(self):
        # only two consumers: the conservative training-delta charge wins
        ds = StubDataset(1000)
        cat = stub_catalog([(r1d(200, 500), 300)], CFG)
        queries = [
            BatchQuery(r1d(0, 500)),
            BatchQuery(r1d(250, 800)),
            BatchQuery(r1d(250, 900)),
        ]
        plan = optimize_batch(ds, cat, queries, CFG)
        assert plan.choices[0].plan_ids == ("m000001",)
        assert plan.choices[0].removed == ()

    @pytest.mark.parametrize("seed", range(12))
    def test_chosen_beats_top1_baseline(self, seed):
        rng = random.Random(seed)
        ds = StubDataset(1000)
        regions = []
        pos = 0
        while pos < 900:
            width = rng.randint(50, 250)
            regions.append((r1d(pos, min(pos + width, 1000)),
                            min(width, 1000 - pos)))
            pos += width + rng.randint(0, 100)
        cat = stub_catalog(regions, CFG)
        queries = []
        for _ in range(3):
            lo = rng.randint(0, 500)
            hi = rng.randint(lo + 100, 1000)
            queries.append(BatchQuery(r1d(lo, hi)))
        chosen = optimize_batch(ds, cat, queries, CFG)

        # top-1 baseline: same pipeline with no drops or switches
        from mlego.batch import _plan_uncovered, _top1
        from mlego.planner import gather_candidates, maximal_plans

        uncovered = []
        for qi, q in enumerate(queries):
            cands, _ = gather_candidates(cat, q.region, CFG, "cgs", "vh")
            by_id = {c.model_id: c for c in cands}
            roots = maximal_plans(cands) or [()]
            top1 = _top1(roots, by_id)
            uncovered.append((qi, _plan_uncovered(q.region, top1, by_id)))
        base_frags = shared_regions(uncovered)
        ctx = PlanContext(n_query=1000, k=CFG.K, v=100,
                          max_iters=CFG.max_iters, cost=CostModel())
        base_benefit = benefit(base_frags, ds.count_docs, ctx)
        assert chosen.total_benefit >= base_benefit - 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_nested_batches_monotone_benefit(self, seed):
        """Adding an enclosing query never shrinks the shared-training win."""
        rng = random.Random(seed + 50)
        ds = StubDataset(1000)
        cat = stub_catalog([(r1d(100, 300), 200)], CFG)
        queries = [
            BatchQuery(r1d(rng.randint(0, 200), rng.randint(400, 700)))
            for _ in range(2)
        ]
        small = optimize_batch(ds, cat, queries, CFG)
        bigger = queries + [BatchQuery(r1d(0, 1000))]  # contains both
        large = optimize_batch(ds, cat, bigger, CFG)
        assert large.total_benefit >= small.total_benefit - 1e-12

    def test_benefit_consistency_recomputed(self):
        ds = StubDataset(1000)
        cat = stub_catalog([(r1d(0, 250), 250), (r1d(500, 750), 250)], CFG)
        queries = [BatchQuery(r1d(0, 800)), BatchQuery(r1d(200, 1000))]
        plan = optimize_batch(ds, cat, queries, CFG)
        ctx = PlanContext(n_query=1000, k=CFG.K, v=100,
                          max_iters=CFG.max_iters, cost=CostModel())
        recomputed = benefit(plan.shared, ds.count_docs, ctx)
        assert plan.total_benefit == pytest.approx(recomputed, abs=1e-9)


class TestLayerCutoff:
    def test_last_layer_plain_comparison(self):
        assert layer_cutoff(10.0, [9.9], layer_index=5, max_models=5)
        assert not layer_cutoff(10.0, [10.0], layer_index=5, max_models=5)

    def test_factor_arithmetic(self):
        # best 100, five models, layer 3: the bound is 100 / 3
        assert layer_cutoff(100.0, [33.0], layer_index=3, max_models=5)
        assert not layer_cutoff(100.0, [34.0], layer_index=3, max_models=5)

    @pytest.mark.parametrize("seed", range(8))
    def test_layered_selection_sound_on_exhaustive_check(self, seed):
        """After the cutoff fires, no deeper plan beats the incumbent."""
        rng = random.Random(seed)
        ds = StubDataset(1000)
        regions = []
        pos = rng.randint(0, 60)
        while pos < 800 and len(regions) < 8:
            width = rng.randint(60, 200)
            regions.append((r1d(pos, min(pos + width, 1000)),
                            min(width, 1000 - pos)))
            pos += width + rng.randint(0, 50)
        cat = stub_catalog(regions, CFG)
        queries = [BatchQuery(r1d(0, 1000)), BatchQuery(r1d(0, 600))]
        layered = optimize_batch(ds, cat, queries, CFG, layered=True)
        exhaustive = optimize_batch(ds, cat, queries, CFG, layered=False)

        # exhaustive oracle per query: every subset of every maximal plan
        from mlego.batch import _plan_uncovered
        from mlego.planner import (PlanContext, enumerate_valid_plans,
                                   gather_candidates)

        for choice in layered.choices:
            q = queries[choice.query_index]
            cands, _ = gather_candidates(cat, q.region, CFG, "cgs", "vh")
            by_id = {c.model_id: c for c in cands}
            others = [
                (c.query_index, r)
                for c in layered.choices if c.query_index != choice.query_index
                for r in c.uncovered
            ]
            ctx = PlanContext(n_query=ds.count_docs(q.region), k=CFG.K, v=100,
                              max_iters=CFG.max_iters, cost=CostModel())
            from mlego.batch import _top1
            from mlego.planner import maximal_plans as mp
            roots = mp(cands) or [()]
            top1 = _top1(roots, by_id)
            n_unc_top1 = ctx.n_query - sum(by_id[i].n_docs for i in top1)

            def score(ids):
                unc = _plan_uncovered(q.region, ids, by_id)
                frags = overlay([(choice.query_index, r) for r in unc] + others)
                b = benefit([f for f in frags if f.multiplicity >= 2],
                            ds.count_docs, ctx)
                n_unc = ctx.n_query - sum(by_id[i].n_docs for i in ids)
                return b - (ctx.cost_train(max(n_unc, 0))
                            - ctx.cost_train(max(n_unc_top1, 0)))

            best_exhaustive = max(
                score(ids) for ids in enumerate_valid_plans(cands)
            )
            assert score(choice.plan_ids) >= best_exhaustive - 1e-9


class TestExecuteBatch:
    def test_real_batch_end_to_end(self, small_dataset, fast_cfg, tmp_path):
        ds = small_dataset
        catalog = ModelCatalog(ds.name, tmp_path / "m")
        materialize_grid(ds, catalog, 4, cfg=fast_cfg, algo="cgs")
        lo, hi = ds.attribute_range("id")
        span = hi - lo
        queries = [
            BatchQuery(r1d(lo, lo + span * 0.6)),
            BatchQuery(r1d(lo + span * 0.3, hi)),
            BatchQuery(r1d(lo + span * 0.1, lo + span * 0.9)),
        ]
        plan = optimize_batch(ds, catalog, queries, fast_cfg, "cgs")
        result = execute_batch(ds, catalog, plan, fast_cfg, "cgs")
        assert len(result.models) == 3
        for m in result.models:
            np.testing.assert_allclose(m.phi.sum(axis=1), 1.0, atol=1e-9)
        trace = result.trace_json()
        assert "shared_fragments" in trace
        assert trace["actual_time_s"] > 0
