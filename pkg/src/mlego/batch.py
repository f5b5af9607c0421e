"""Batch-query optimization: train shared uncovered ranges once.

Queries in a batch often leave overlapping uncovered ranges.  The optimizer
accounts, per materialized model, the benefit of dropping it (its range then
rides along with other queries' uncovered training) against the cost of
training that range, adjusts each query's plan, and schedules every shared
fragment exactly once.  Batch scoring runs under pure time-cost semantics
(the per-query weight is zero); mixed weights fall back to independent
execution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import CorpusSlice, Dataset
from .lda import LdaConfig, train_cgs, train_vb
from .merge import CgsPayload, VbPayload, merge_cgs, merge_count, merge_vb, merged_vb_model
from .planner import (
    CostModel,
    PlanContext,
    gather_candidates,
    maximal_plans,
)
from .regions import Interval, Region, region_difference
from .store import ModelCatalog


class BatchError(ValueError):
    pass


# --------------------------------------------------------------------------
# Rectilinear overlay of uncovered regions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Fragment:
    region: Region
    owners: frozenset  # query indexes whose uncovered area contains it

    @property
    def multiplicity(self) -> int:
        return len(self.owners)


def _signature(region: Region) -> tuple:
    return tuple(sorted(
        (a, tuple(sorted(c.values)))
        for a, c in region.clauses if not isinstance(c, Interval)
    ))


def overlay(tagged: Sequence[tuple]) -> list:
    """Decompose tagged regions into grid cells annotated with their owners.

    ``tagged`` is a sequence of (owner, Region).  Regions with different
    categorical constraints describe disjoint document populations and are
    decomposed independently.  Within a group, cells are cut at every
    interval boundary; adjacent cells along the first axis with identical
    owner sets are coalesced.
    """
    groups: dict = {}
    for owner, region in tagged:
        groups.setdefault(_signature(region), []).append((owner, region))

    out: list = []
    for sig, members in sorted(groups.items()):
        axes = sorted({a for _, r in members for a in r.ordered_attrs})
        if len(axes) > 2:
            raise BatchError("overlay beyond two ordered dimensions is rejected")
        if not axes:
            owners = frozenset(o for o, _ in members)
            out.append(Fragment(members[0][1], owners))
            continue
        coords = {}
        for ax in axes:
            pts = set()
            for _, r in members:
                iv = r.interval(ax)
                pts.add(iv.lo)
                pts.add(iv.hi)
            coords[ax] = sorted(pts)

        def cell_owners(cell: Region) -> frozenset:
            return frozenset(o for o, r in members if r.contains(cell))

        base = members[0][1]
        template = Region.of({a: c for a, c in base.clauses
                              if not isinstance(c, Interval)})
        ax0 = axes[0]
        if len(axes) == 1:
            cells = []
            for lo, hi in zip(coords[ax0], coords[ax0][1:]):
                cell = template.with_interval(ax0, Interval(lo, hi))
                owners = cell_owners(cell)
                if owners:
                    cells.append((cell, owners))
            out.extend(_coalesce_run(cells, ax0))
        else:
            ax1 = axes[1]
            for b_lo, b_hi in zip(coords[ax1], coords[ax1][1:]):
                cells = []
                for lo, hi in zip(coords[ax0], coords[ax0][1:]):
                    cell = (template.with_interval(ax0, Interval(lo, hi))
                            .with_interval(ax1, Interval(b_lo, b_hi)))
                    owners = cell_owners(cell)
                    if owners:
                        cells.append((cell, owners))
                out.extend(_coalesce_run(cells, ax0))
    return out


def _coalesce_run(cells: list, axis: str) -> list:
    """Merge adjacent cells along one axis when their owner sets match."""
    merged: list = []
    for cell, owners in cells:
        if merged:
            prev, prev_owners = merged[-1]
            piv, civ = prev.interval(axis), cell.interval(axis)
            if prev_owners == owners and piv.hi == civ.lo:
                merged[-1] = (prev.with_interval(axis, Interval(piv.lo, civ.hi)),
                              owners)
                continue
        merged.append((cell, owners))
    return [Fragment(region, owners) for region, owners in merged]


def shared_regions(uncovered_by_query: Sequence[tuple]) -> list:
    """Fragments of the uncovered union lying in two or more queries' areas."""
    tagged = [
        (qi, region)
        for qi, regions in uncovered_by_query
        for region in regions
    ]
    return [f for f in overlay(tagged) if f.multiplicity >= 2]


# --------------------------------------------------------------------------
# Benefit accounting
# --------------------------------------------------------------------------

def benefit(fragments: Iterable[Fragment], counter: Callable[[Region], int],
            ctx: PlanContext) -> float:
    """Training time saved by running each shared fragment once."""
    return sum(
        (f.multiplicity - 1) * ctx.cost_train(counter(f.region))
        for f in fragments
    )


def model_benefit(
    model_region: Region,
    model_n_docs: int,
    others_uncovered: Sequence[tuple],
    counter: Callable[[Region], int],
    ctx: PlanContext,
) -> float:
    """Net gain of dropping one model from a plan.

    Treats the model's range as a pseudo-query with no models: every part of
    it that other queries must train anyway yields its training cost times
    the count of those consumers, against the price of training the model's
    whole range once.  Positive means dropping pays off.
    """
    tagged = [("self", model_region)] + list(others_uncovered)
    gain = 0.0
    for frag in overlay(tagged):
        if "self" not in frag.owners:
            continue
        others = len(frag.owners) - 1
        if others > 0:
            gain += others * ctx.cost_train(counter(frag.region))
    return gain - ctx.cost_train(model_n_docs)


# --------------------------------------------------------------------------
# Batch optimization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchQuery:
    region: Region
    alpha: float = 0.0


@dataclass
class QueryPlanChoice:
    query_index: int
    plan_ids: tuple
    base_ids: tuple          # the maximal plan the choice descends from
    removed: tuple           # models dropped for shared-range benefit
    removed_benefits: dict
    criterion: float
    n_covered: int
    uncovered: tuple

    def to_json(self) -> dict:
        return {
            "query_index": self.query_index,
            "plan_ids": list(self.plan_ids),
            "base_ids": list(self.base_ids),
            "removed": list(self.removed),
            "removed_benefits": {k: v for k, v in self.removed_benefits.items()},
            "criterion": self.criterion,
            "n_covered": self.n_covered,
            "uncovered": [r.to_json() for r in self.uncovered],
        }


@dataclass
class BatchPlan:
    choices: list
    fragments: list           # all uncovered fragments with owners
    shared: list              # multiplicity >= 2 subset
    total_benefit: float
    predicted_time_s: float
    independent_time_s: float
    mixed_alpha_fallback: bool = False
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "queries": [c.to_json() for c in self.choices],
            "shared_fragments": [
                {
                    "region": f.region.to_json(),
                    "multiplicity": f.multiplicity,
                    "queries": sorted(f.owners),
                }
                for f in self.shared
            ],
            "total_benefit_s": self.total_benefit,
            "predicted_time_s": self.predicted_time_s,
            "independent_time_s": self.independent_time_s,
            "mixed_alpha_fallback": self.mixed_alpha_fallback,
            "warnings": self.warnings,
        }


def _plan_uncovered(query: Region, plan_ids: Sequence[str], by_id: dict) -> list:
    return region_difference(query, [by_id[i].region for i in plan_ids])


def _top1(roots: Sequence[tuple], by_id: dict) -> tuple:
    """Maximal plan with the most coverage (least training), deterministic."""
    def key(ids):
        return (-sum(by_id[i].n_docs for i in ids), ids)
    return min(roots, key=key)


def optimize_batch(
    dataset,
    catalog: ModelCatalog,
    queries: Sequence[BatchQuery],
    cfg: LdaConfig,
    algo: str = "cgs",
    cost_model: CostModel | None = None,
    layered: bool = False,
) -> BatchPlan:
    """Choose one plan per query so shared uncovered ranges are trained once.

    Queries are processed in their given order against the running
    combination (unprocessed queries stand at their top-coverage plan).  For
    every maximal plan of the current query, models whose drop-benefit is
    positive are removed; the adjusted plans are ranked by total drop
    benefit minus the training-cost delta to the top plan, keeping the
    zero-removal option.  With ``layered=True`` the per-query selection
    walks removal layers and stops at the termination bound instead.
    """
    cost_model = cost_model or CostModel()
    if not queries:
        return BatchPlan([], [], [], 0.0, 0.0, 0.0)
    if any(q.alpha != 0.0 for q in queries):
        return BatchPlan(
            [], [], [], 0.0, 0.0, 0.0,
            mixed_alpha_fallback=True,
            warnings=["batch contains non-zero alpha; executing independently"],
        )

    counter = dataset.count_docs
    states = []
    for qi, q in enumerate(queries):
        candidates, _ = gather_candidates(catalog, q.region, cfg, algo,
                                          dataset.vocab_hash)
        by_id = {c.model_id: c for c in candidates}
        n_query = counter(q.region)
        ctx = PlanContext(
            n_query=n_query, k=cfg.K, v=dataset.vocabulary.size,
            max_iters=cfg.max_iters, cost=cost_model,
        )
        roots = maximal_plans(candidates) or [()]
        top1 = _top1(roots, by_id)
        states.append({
            "query": q.region,
            "by_id": by_id,
            "ctx": ctx,
            "roots": roots,
            "top1": top1,
            "chosen": top1,
            "removed": (),
            "removed_benefits": {},
            "criterion": 0.0,
            "base": top1,
        })

    def uncovered_of(state) -> list:
        return _plan_uncovered(state["query"], state["chosen"], state["by_id"])

    for qi, state in enumerate(states):
        others = [
            (qj, frag)
            for qj, other in enumerate(states) if qj != qi
            for frag in uncovered_of(other)
        ]
        if layered:
            choice = _select_layered(qi, state, others, counter)
        else:
            choice = _select_drop_heuristic(qi, state, others, counter)
        state["chosen"] = choice[0]
        state["base"] = choice[1]
        state["removed"] = choice[2]
        state["removed_benefits"] = choice[3]
        state["criterion"] = choice[4]

    choices = []
    uncovered_by_query = []
    for qi, state in enumerate(states):
        unc = uncovered_of(state)
        uncovered_by_query.append((qi, unc))
        choices.append(QueryPlanChoice(
            query_index=qi,
            plan_ids=state["chosen"],
            base_ids=state["base"],
            removed=state["removed"],
            removed_benefits=state["removed_benefits"],
            criterion=state["criterion"],
            n_covered=sum(state["by_id"][i].n_docs for i in state["chosen"]),
            uncovered=tuple(unc),
        ))

    fragments = overlay([
        (qi, r) for qi, regions in uncovered_by_query for r in regions
    ])
    shared = [f for f in fragments if f.multiplicity >= 2]
    ctx0 = states[0]["ctx"]
    total_benefit = benefit(shared, counter, ctx0)

    # Predicted wall time mirrors execution: each shared fragment trains
    # once, each query trains its private remainder as one model and pays
    # one merge per extra participant.  Independent execution trains every
    # query's whole uncovered area separately.
    t_m = ctx0.t_m
    shared_docs = [counter(f.region) for f in shared]
    predicted = sum(ctx0.cost_train(n) for n in shared_docs)
    independent = 0.0
    for qi, state in enumerate(states):
        n_unc = max(
            state["ctx"].n_query
            - sum(state["by_id"][i].n_docs for i in state["chosen"]),
            0,
        )
        x_indep = merge_count(len(state["chosen"]), n_unc > 0)
        independent += state["ctx"].cost_train(n_unc) + t_m * x_indep
        owned = [n for f, n in zip(shared, shared_docs) if qi in f.owners]
        private_docs = max(n_unc - sum(owned), 0)
        predicted += state["ctx"].cost_train(private_docs)
        participants = (
            len(state["chosen"]) + len(owned) + (1 if private_docs > 0 else 0)
        )
        predicted += t_m * max(participants - 1, 0)
    return BatchPlan(
        choices=choices,
        fragments=fragments,
        shared=shared,
        total_benefit=total_benefit,
        predicted_time_s=predicted,
        independent_time_s=independent,
    )


def _select_drop_heuristic(qi, state, others, counter):
    """Per-query plan choice: drop positive-benefit models from each root."""
    by_id, ctx = state["by_id"], state["ctx"]
    top1 = state["top1"]
    n_unc_top1 = ctx.n_query - sum(by_id[i].n_docs for i in top1)
    delta_b = {}
    model_pool = sorted({i for root in state["roots"] for i in root})
    for mid in model_pool:
        cand = by_id[mid]
        delta_b[mid] = model_benefit(cand.region, cand.n_docs, others, counter, ctx)

    options = []
    # zero-removal option: keep the top plan untouched
    options.append((0.0, True, top1, top1, (), {}))
    for root in state["roots"]:
        removed = tuple(sorted(i for i in root if delta_b[i] > 0))
        kept = tuple(sorted(i for i in root if i not in removed))
        gain = sum(delta_b[i] for i in removed)
        n_unc = ctx.n_query - sum(by_id[i].n_docs for i in kept)
        delta_t = ctx.cost_train(max(n_unc, 0)) - ctx.cost_train(max(n_unc_top1, 0))
        criterion = gain - delta_t
        options.append((criterion, False, kept, root, removed,
                        {i: delta_b[i] for i in removed}))
    options.sort(key=lambda o: (-o[0], not o[1], o[2]))
    best = options[0]
    return best[2], best[3], best[4], best[5], best[0]


def layer_cutoff(current_best: float, layer_scores: Sequence[float],
                    layer_index: int, max_models: int) -> bool:
    """Termination test for the layered per-query selection.

    True when every plan in layer ``layer_index`` scores strictly below
    current_best / (max_models + 1 - layer_index): no deeper layer can
    then beat the incumbent.
    """
    if layer_index > max_models:
        return True
    denom = max_models + 1 - layer_index
    bound = current_best / denom
    return all(s < bound for s in layer_scores)


def _select_layered(qi, state, others, counter):
    """Layered per-query selection scored by combination benefit.

    Layer 1 holds the maximal plans; each next layer removes one model.
    Generation stops once the termination bound proves no deeper layer can
    improve on the incumbent.
    """
    by_id, ctx = state["by_id"], state["ctx"]
    top1 = state["top1"]
    n_unc_top1 = max(ctx.n_query - sum(by_id[i].n_docs for i in top1), 0)
    max_models = max((len(r) for r in state["roots"]), default=0)

    def plan_score(ids: tuple) -> float:
        unc = _plan_uncovered(state["query"], ids, by_id)
        frags = overlay([(qi, r) for r in unc] + list(others))
        b = benefit([f for f in frags if f.multiplicity >= 2], counter, ctx)
        n_unc = max(ctx.n_query - sum(by_id[i].n_docs for i in ids), 0)
        delta_t = ctx.cost_train(n_unc) - ctx.cost_train(n_unc_top1)
        return b - delta_t

    best_ids, best_val = top1, None
    layer = [tuple(sorted(r)) for r in state["roots"]]
    seen = set(layer)
    layer_index = 1
    while layer:
        scores = []
        for ids in sorted(layer):
            val = plan_score(ids)
            scores.append(val)
            if best_val is None or val > best_val or (
                val == best_val and ids < best_ids
            ):
                best_ids, best_val = ids, val
        # The termination bound's layer-combination argument assumes a
        # positive incumbent; keep generating otherwise.
        if best_val is not None and best_val > 0 and layer_cutoff(
            best_val, scores, layer_index, max_models
        ):
            break
        nxt = set()
        for ids in layer:
            for drop in ids:
                child = tuple(sorted(set(ids) - {drop}))
                if child not in seen:
                    seen.add(child)
                    nxt.add(child)
        layer = sorted(nxt)
        layer_index += 1
    return best_ids, best_ids, (), {}, best_val if best_val is not None else 0.0


# --------------------------------------------------------------------------
# Batch execution
# --------------------------------------------------------------------------

@dataclass
class BatchResult:
    models: list
    plan: BatchPlan
    actual_time_s: float
    per_query_merge_counts: list

    def trace_json(self) -> dict:
        out = self.plan.to_json()
        out["actual_time_s"] = self.actual_time_s
        out["per_query_merge_counts"] = self.per_query_merge_counts
        return out


def execute_batch(
    dataset: Dataset,
    catalog: ModelCatalog,
    plan: BatchPlan,
    cfg: LdaConfig,
    algo: str = "cgs",
    decay: float = 1.0,
) -> BatchResult:
    """Run a batch plan: shared fragments train once, then per-query merges."""
    t0 = time.perf_counter()
    trainer = train_cgs if algo == "cgs" else train_vb

    def train_payload(mask: np.ndarray):
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            return None
        sl = CorpusSlice(dataset, idx)
        if algo == "cgs":
            st, _ = trainer(sl, cfg)
            return CgsPayload(st.n_kv.astype(np.float64), len(idx),
                              int(st.n_kv.sum()), dataset.vocab_hash)
        st, _ = trainer(sl, cfg)
        return VbPayload(st.lam, len(idx),
                         int(round(float((st.lam - cfg.eta).sum()))),
                         dataset.vocab_hash)

    shared_payloads = {}
    for i, frag in enumerate(plan.fragments):
        if frag.multiplicity < 2:
            continue
        payload = train_payload(dataset.mask(frag.region))
        if payload is not None:
            shared_payloads[i] = payload

    models = []
    merge_counts = []
    for choice in plan.choices:
        payloads = [catalog.payload(mid) for mid in choice.plan_ids]
        for i, frag in enumerate(plan.fragments):
            if frag.multiplicity >= 2 and choice.query_index in frag.owners:
                if i in shared_payloads:
                    payloads.append(shared_payloads[i])
        private = np.zeros(dataset.n_docs, dtype=bool)
        for region in choice.uncovered:
            private |= dataset.mask(region)
        for frag in plan.fragments:
            if frag.multiplicity >= 2 and choice.query_index in frag.owners:
                private &= ~dataset.mask(frag.region)
        private_payload = train_payload(private)
        if private_payload is not None:
            payloads.append(private_payload)
        if not payloads:
            raise BatchError(
                f"query {choice.query_index} matches no documents and no models"
            )
        x = max(len(payloads) - 1, 0)
        merge_counts.append(x)
        if algo == "cgs":
            _, model = merge_cgs(payloads, cfg.eta, decay)
        else:
            merged = merge_vb(payloads, cfg.eta)
            model = merged_vb_model(merged, x)
        models.append(model)
    return BatchResult(
        models=models,
        plan=plan,
        actual_time_s=time.perf_counter() - t0,
        per_query_merge_counts=merge_counts,
    )
