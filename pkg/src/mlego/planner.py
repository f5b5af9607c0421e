"""Single-query plan search and execution over materialized models.

A plan is a set of pairwise non-overlapping materialized models contained in
the query region; whatever they leave uncovered is trained as one fresh
model and merged in.  Plans are scored by a weighted sum of merge-quality
loss and normalized time cost, and the optimal plan is found by a threshold
(top-k style) search over lazily generated plan lists instead of exhaustive
enumeration.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import CorpusSlice, Dataset
from .lda import LdaConfig, TopicModel, train_cgs, train_vb
from .merge import (
    CgsPayload,
    VbPayload,
    merge_cgs,
    merge_count,
    merge_vb,
    merged_vb_model,
)
from .regions import Region, region_difference
from .store import ModelCatalog

EPSILON = 1e-9
MAX_CANDIDATES = 64


class PlannerError(ValueError):
    pass


# --------------------------------------------------------------------------
# Cost model
# --------------------------------------------------------------------------

@dataclass
class CostModel:
    """Unit costs for training and merging plus the merge-quality loss curve.

    Training cost is modeled as kappa_train * max_iters * n_docs^2 * K;
    one merge of a K x V payload costs kappa_merge * K * V seconds.  The
    loss curve P(x) = loss_gamma ** x is monotone non-increasing with
    P(0) = 1, so the quality penalty 1 - P(x) grows with the merge count.
    """

    kappa_train: float = 2.5e-10
    kappa_merge: float = 6.0e-9
    loss_gamma: float = 0.98

    def loss(self, x: int) -> float:
        if x < 0:
            raise PlannerError("merge count must be non-negative")
        return 1.0 - self.loss_gamma ** x

    def cost_train(self, n_docs: int, max_iters: int, k: int) -> float:
        if n_docs <= 0:
            return 0.0
        return self.kappa_train * max_iters * float(n_docs) ** 2 * k

    def single_merge_cost(self, k: int, v: int) -> float:
        return self.kappa_merge * k * v

    def cost_merge(self, x: int, k: int, v: int) -> float:
        if x < 0:
            raise PlannerError("merge count must be non-negative")
        return x * self.single_merge_cost(k, v)

    def to_json(self) -> dict:
        return {
            "kappa_train": self.kappa_train,
            "kappa_merge": self.kappa_merge,
            "loss_gamma": self.loss_gamma,
        }

    @staticmethod
    def from_json(obj) -> "CostModel":
        return CostModel(
            kappa_train=float(obj.get("kappa_train", 2.5e-10)),
            kappa_merge=float(obj.get("kappa_merge", 6.0e-9)),
            loss_gamma=float(obj.get("loss_gamma", 0.98)),
        )


def probe_training_time(dataset: Dataset, n_docs: int, cfg: LdaConfig,
                        algo: str, repeats: int = 3) -> float:
    """Best-of-k wall time of one training on the dataset's first n_docs."""
    trainer = train_cgs if algo == "cgs" else train_vb
    sl = CorpusSlice(dataset, np.arange(min(n_docs, dataset.n_docs)))
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        trainer(sl, cfg)
        best = min(best, time.perf_counter() - t0)
    return best


def calibrate_cost_model(
    dataset: Dataset,
    cfg: LdaConfig,
    algo: str = "cgs",
    probe_fractions: Sequence[float] = (0.5, 0.7, 1.0),
    base: CostModel | None = None,
) -> CostModel:
    """Fit unit costs from probe trainings and merges on this machine.

    Probes sit at close-by scales so the quadratic parametrization stays
    within a factor of two of measured wall time across them; timings are
    best-of-three after a warmup run so JIT and allocator noise stay out.
    """
    base = base or CostModel()
    trainer = train_cgs if algo == "cgs" else train_vb
    probe_cfg = cfg.with_overrides(max_iters=max(2, min(cfg.max_iters, 10)))
    trainer(CorpusSlice(dataset, np.arange(min(dataset.n_docs, 30))),
            probe_cfg.with_overrides(max_iters=1))
    ratios = []
    for frac in probe_fractions:
        n = min(max(int(dataset.n_docs * frac), 100), dataset.n_docs)
        elapsed = probe_training_time(dataset, n, probe_cfg, algo)
        units = probe_cfg.max_iters * float(n) ** 2 * probe_cfg.K
        ratios.append(elapsed / units)
    kappa_train = float(np.exp(np.mean(np.log(ratios))))

    k, v = cfg.K, dataset.vocabulary.size
    rng = np.random.default_rng(0)
    mats = [rng.random((k, v)) for _ in range(2)]
    payloads = [
        CgsPayload(m, n_docs=10 + i, word_count=int(m.sum()), vocab_hash=dataset.vocab_hash)
        for i, m in enumerate(mats)
    ]
    t0 = time.perf_counter()
    reps = 5
    for _ in range(reps):
        merge_cgs(payloads, cfg.eta, 1.0)
    per_merge = (time.perf_counter() - t0) / (reps * (len(payloads) - 1))
    kappa_merge = per_merge / (k * v)
    return CostModel(
        kappa_train=kappa_train,
        kappa_merge=kappa_merge,
        loss_gamma=base.loss_gamma,
    )


def fit_loss_gamma(xs: Sequence[int], dps: Sequence[float],
                   dp_cap: float | None = None) -> float:
    """Re-fit the loss ratio to a measured quality-gap-vs-merges curve."""
    xs = np.asarray(xs, dtype=float)
    dps = np.asarray(dps, dtype=float)
    cap = dp_cap if dp_cap is not None else max(float(dps.max()) * 1.05, 1e-9)
    target = np.clip(dps / cap, 0.0, 1.0 - 1e-9)
    grid = np.linspace(0.5, 0.9999, 2000)
    errs = [(np.square(1.0 - g ** xs - target)).sum() for g in grid]
    return float(grid[int(np.argmin(errs))])


@dataclass(frozen=True)
class PlanContext:
    """Binds the cost model to one query's scale for scoring."""

    n_query: int
    k: int
    v: int
    max_iters: int
    cost: CostModel

    @property
    def t_m(self) -> float:
        return self.cost.single_merge_cost(self.k, self.v)

    def cost_train(self, n_docs: int) -> float:
        return self.cost.cost_train(n_docs, self.max_iters, self.k)

    @property
    def denom(self) -> float:
        return self.cost_train(self.n_query)


# --------------------------------------------------------------------------
# Plans and scoring
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    """Planner-facing view of a materialized model."""

    model_id: str
    n_docs: int
    region: Region


@dataclass(frozen=True)
class ScoredPlan:
    model_ids: tuple
    n_covered: int
    n_uncovered: int
    x: int
    l_p: float
    c_t_train: float
    c_t_merge: float
    c_t_norm: float
    sc: float
    uncovered: tuple = ()

    def to_json(self) -> dict:
        return {
            "model_ids": list(self.model_ids),
            "n_covered": self.n_covered,
            "n_uncovered": self.n_uncovered,
            "merge_count": self.x,
            "l_p": self.l_p,
            "c_t_train": self.c_t_train,
            "c_t_merge": self.c_t_merge,
            "c_t_norm": self.c_t_norm,
            "sc": self.sc,
            "uncovered": [r.to_json() for r in self.uncovered],
        }


def score_plan(ids: Iterable[str], by_id: dict, alpha: float,
               ctx: PlanContext) -> ScoredPlan:
    """Score one plan: sc = alpha * l_p + (1 - alpha) * c_t_norm + epsilon."""
    ids = tuple(sorted(ids))
    n_cov = sum(by_id[i].n_docs for i in ids)
    n_unc = max(ctx.n_query - n_cov, 0)
    x = merge_count(len(ids), n_unc > 0)
    l_p = ctx.cost.loss(x)
    c_train = ctx.cost_train(n_unc)
    c_merge = ctx.cost.cost_merge(x, ctx.k, ctx.v)
    denom = ctx.denom
    c_norm = min(max((c_train + c_merge) / denom, 0.0), 1.0) if denom > 0 else 0.0
    sc = alpha * l_p + (1.0 - alpha) * c_norm + EPSILON
    return ScoredPlan(
        model_ids=ids,
        n_covered=n_cov,
        n_uncovered=n_unc,
        x=x,
        l_p=l_p,
        c_t_train=c_train,
        c_t_merge=c_merge,
        c_t_norm=c_norm,
        sc=sc,
    )


# --------------------------------------------------------------------------
# Conflict graph and maximal plans
# --------------------------------------------------------------------------

def conflict_masks(candidates: Sequence[Candidate]) -> list:
    """Bitmask adjacency of the region-overlap conflict graph."""
    n = len(candidates)
    masks = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if candidates[i].region.overlaps(candidates[j].region):
                masks[i] |= 1 << j
                masks[j] |= 1 << i
    return masks


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def maximal_plans(candidates: Sequence[Candidate]) -> list:
    """All maximal sets of pairwise non-overlapping candidates.

    These are the roots of the plan tree: every valid plan is a subset of
    one of them.  Enumerated as maximal cliques of the complement of the
    conflict graph (Bron-Kerbosch with pivoting).
    """
    n = len(candidates)
    if n == 0:
        return []
    if n > MAX_CANDIDATES:
        raise PlannerError(
            f"{n} candidate models exceed the {MAX_CANDIDATES} cap; "
            "materialize coarser models for this range"
        )
    conflicts = conflict_masks(candidates)
    full = (1 << n) - 1
    compat = [full & ~conflicts[i] & ~(1 << i) for i in range(n)]
    out = []

    def bk(r: int, p: int, x: int):
        if p == 0 and x == 0:
            out.append(r)
            return
        pivot_pool = p | x
        best_u, best_n = -1, -1
        for u in _bits(pivot_pool):
            cnt = bin(p & compat[u]).count("1")
            if cnt > best_n:
                best_u, best_n = u, cnt
        ext = p & ~compat[best_u]
        for v in _bits(ext):
            bit = 1 << v
            bk(r | bit, p & compat[v], x & compat[v])
            p &= ~bit
            x |= bit

    bk(0, full, 0)
    plans = []
    for mask in out:
        ids = tuple(sorted(candidates[i].model_id for i in _bits(mask)))
        plans.append(ids)
    return sorted(plans)


def enumerate_valid_plans(candidates: Sequence[Candidate]):
    """Every set of pairwise non-overlapping candidates, the empty set included."""
    n = len(candidates)
    conflicts = conflict_masks(candidates)

    def rec(chosen: list, start: int, blocked: int):
        yield tuple(sorted(candidates[i].model_id for i in chosen))
        for i in range(start, n):
            if blocked & (1 << i):
                continue
            chosen.append(i)
            yield from rec(chosen, i + 1, blocked | conflicts[i])
            chosen.pop()

    yield from rec([], 0, 0)


def search_exhaustive(candidates: Sequence[Candidate], alpha: float,
                      ctx: PlanContext) -> ScoredPlan:
    """Generate-and-rank baseline: score every valid plan, return the minimum."""
    by_id = {c.model_id: c for c in candidates}
    best = None
    for ids in enumerate_valid_plans(candidates):
        sp = score_plan(ids, by_id, alpha, ctx)
        key = (sp.sc, sp.model_ids)
        if best is None or key < (best.sc, best.model_ids):
            best = sp
    return best


# --------------------------------------------------------------------------
# Push-down and the layered train-cost list
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanNode:
    ids: frozenset
    n_covered: int
    min_member: int  # doc count of the smallest member; 0 for the empty plan


def make_node(ids: Iterable[str], by_id: dict) -> PlanNode:
    ids = frozenset(ids)
    counts = [by_id[i].n_docs for i in ids]
    return PlanNode(
        ids=ids,
        n_covered=sum(counts),
        min_member=min(counts) if counts else 0,
    )


def push_down(layer: Sequence[PlanNode]) -> tuple:
    """Split a layer into (kept, demoted) per the coverage-gap rule.

    A plan is demoted whenever some kept plan p1 satisfies
    n_covered(p1) - min_member(p1) >= n_covered(p), because p1's cheapest
    child already trains less data than p; demoting keeps train costs
    non-decreasing layer by layer.  Kept plans come back sorted by
    ascending train cost (descending coverage).
    """
    ordered = sorted(layer, key=lambda p: (-p.n_covered, tuple(sorted(p.ids))))
    kept, demoted = [], []
    reach = None  # max over kept of (n_covered - min_member)
    for node in ordered:
        if reach is not None and reach >= node.n_covered:
            demoted.append(node)
        else:
            kept.append(node)
            gap = node.n_covered - node.min_member
            reach = gap if reach is None else max(reach, gap)
    return kept, demoted


class _TrainList:
    """Plan layers ordered by ascending coverage loss (train cost)."""

    def __init__(self, roots: Sequence[PlanNode], by_id: dict):
        self._by_id = by_id
        self._seen: set = set()
        self._pending = list(roots)
        self.exhausted = False
        self.max_cost_docs = -1  # max uncovered docs seen so far
        self.layers_emitted = 0

    def next_layer(self) -> list:
        while True:
            fresh = [p for p in self._pending if p.ids not in self._seen]
            uniq = {}
            for p in fresh:
                uniq.setdefault(p.ids, p)
            layer_pool = list(uniq.values())
            if not layer_pool:
                self.exhausted = True
                return []
            kept, demoted = push_down(layer_pool)
            children = []
            for node in kept:
                self._seen.add(node.ids)
                for mid in node.ids:
                    children.append(make_node(node.ids - {mid}, self._by_id))
            self._pending = children + demoted
            if kept:
                self.layers_emitted += 1
                return kept


class _CountList:
    """Plan layers by model count (breadth-first, one more model per layer)."""

    def __init__(self, candidates: Sequence[Candidate]):
        self._cands = list(candidates)
        self._conflicts = conflict_masks(candidates)
        self._layer_masks = [0]  # layer 0: the empty plan
        self.count = 0           # model count of the last emitted layer
        self.exhausted = False
        self._emitted_first = False
        self.layers_emitted = 0

    def next_layer(self) -> list:
        if not self._emitted_first:
            self._emitted_first = True
            self.layers_emitted = 1
            return [frozenset()]
        nxt = []
        seen_masks = set()
        for mask in self._layer_masks:
            blocked = 0
            top = -1
            for i in _bits(mask):
                blocked |= self._conflicts[i]
                top = max(top, i)
            for i in range(top + 1, len(self._cands)):
                bit = 1 << i
                if mask & bit or blocked & bit:
                    continue
                new = mask | bit
                if new not in seen_masks:
                    seen_masks.add(new)
                    nxt.append(new)
        if not nxt:
            self.exhausted = True
            return []
        self._layer_masks = nxt
        self.count += 1
        self.layers_emitted += 1
        return [
            frozenset(self._cands[i].model_id for i in _bits(mask))
            for mask in nxt
        ]


# --------------------------------------------------------------------------
# Merge-cost thresholds (when merging time is negligible)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MergeCostThreshold:
    x_star_per_plan: float   # loosest per-plan allowance
    x_star_global: float     # tight bound from the globally smallest model
    max_plan_size: int
    merge_cost_ignorable: bool

    def to_json(self) -> dict:
        return {
            "x_star_per_plan": self.x_star_per_plan,
            "x_star_global": self.x_star_global,
            "max_plan_size": self.max_plan_size,
            "merge_cost_ignorable": self.merge_cost_ignorable,
        }


def merge_cost_threshold(
    plans: Sequence[tuple], by_id: dict, ctx: PlanContext
) -> MergeCostThreshold:
    """Critical merge counts under which merge time cannot reorder plans.

    Returns the per-plan allowance (train cost of each plan's smallest
    member over the single-merge cost) and the tighter global bound from
    the smallest candidate anywhere; the flag fires on the tight bound.
    """
    if not plans:
        return MergeCostThreshold(float("inf"), float("inf"), 0, True)
    t_m = ctx.t_m
    max_size = max(len(p) for p in plans)
    if t_m <= 0:
        return MergeCostThreshold(float("inf"), float("inf"), max_size, True)
    per_plan = max(
        ctx.cost_train(min(by_id[i].n_docs for i in p)) / t_m
        for p in plans if p
    )
    global_min = min(c.n_docs for c in by_id.values())
    tight = ctx.cost_train(global_min) / t_m
    return MergeCostThreshold(
        x_star_per_plan=per_plan,
        x_star_global=tight,
        max_plan_size=max_size,
        merge_cost_ignorable=max_size <= tight,
    )


# --------------------------------------------------------------------------
# Threshold search
# --------------------------------------------------------------------------

@dataclass
class SearchTrace:
    method: str = "threshold"
    alpha: float = 0.0
    plans_scored: int = 0
    th_trajectory: list = field(default_factory=list)
    layers: dict = field(default_factory=dict)
    merge_threshold: dict = field(default_factory=dict)
    elapsed_s: float = 0.0

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "plans_scored": self.plans_scored,
            "th_trajectory": self.th_trajectory,
            "layers_visited": self.layers,
            "merge_threshold": self.merge_threshold,
            "elapsed_s": self.elapsed_s,
        }


def search(
    candidates: Sequence[Candidate],
    alpha: float,
    ctx: PlanContext,
    fuse_merge_list: bool | None = None,
) -> tuple:
    """Threshold search for the minimum-score plan; returns (plan, trace).

    Three lazily generated lists drive the bound: quality loss and merge
    cost grow with model count (breadth-first layers), train cost shrinks
    with coverage (maximal plans first, push-down keeps layers ordered).
    The search stops as soon as the best seen score is at most the bound
    assembled from the not-yet-seen frontier of every active list, which
    guarantees score-equality with exhaustive enumeration.  When merging
    time is provably negligible and alpha = 0, the merge list is fused
    into the train list and skipped.
    """
    if not 0.0 <= alpha <= 1.0:
        raise PlannerError("alpha must lie in [0, 1]")
    t0 = time.perf_counter()
    trace = SearchTrace(alpha=alpha)
    by_id = {c.model_id: c for c in candidates}

    if not candidates:
        empty = score_plan((), by_id, alpha, ctx)
        trace.method = "empty-catalog"
        trace.plans_scored = 1
        trace.elapsed_s = time.perf_counter() - t0
        return empty, trace

    roots = maximal_plans(candidates)
    root_nodes = [make_node(ids, by_id) for ids in roots]
    threshold_info = merge_cost_threshold(roots, by_id, ctx)
    trace.merge_threshold = threshold_info.to_json()
    if fuse_merge_list is None:
        fuse_merge_list = threshold_info.merge_cost_ignorable and alpha == 0.0
    trace.method = "threshold-fused" if fuse_merge_list else "threshold"

    use_count_list = (alpha > 0.0) or (alpha < 1.0 and not fuse_merge_list)
    use_train_list = alpha < 1.0

    count_list = _CountList(candidates) if use_count_list else None
    train_list = _TrainList(root_nodes, by_id) if use_train_list else None

    scored: dict = {}
    best: ScoredPlan | None = None

    def score_ids(ids: frozenset):
        nonlocal best
        key = tuple(sorted(ids))
        if key in scored:
            return
        sp = score_plan(key, by_id, alpha, ctx)
        scored[key] = sp
        if best is None or (sp.sc, sp.model_ids) < (best.sc, best.model_ids):
            best = sp

    denom = ctx.denom

    def current_th() -> float:
        """Lower bound on the score of any plan not yet seen in any list.

        Every active list eventually enumerates every valid plan, so an
        exhausted list means nothing is unseen and the bound is infinite.
        """
        if (count_list is not None and count_list.exhausted) or (
            train_list is not None and train_list.exhausted
        ):
            return float("inf")
        lp_part = ctx.cost.loss(count_list.count) if alpha > 0.0 else 0.0
        if alpha < 1.0:
            train_f = ctx.cost_train(max(train_list.max_cost_docs, 0))
            merge_f = (
                ctx.t_m * count_list.count
                if (count_list is not None and not fuse_merge_list)
                else 0.0
            )
            cost_part = (
                min(max((train_f + merge_f) / denom, 0.0), 1.0)
                if denom > 0 else 0.0
            )
        else:
            cost_part = 0.0
        return alpha * min(lp_part, 1.0) + (1.0 - alpha) * cost_part + EPSILON

    while True:
        advanced = False
        if count_list is not None and not count_list.exhausted:
            for ids in count_list.next_layer():
                score_ids(ids)
            advanced = True
        if train_list is not None and not train_list.exhausted:
            for node in train_list.next_layer():
                score_ids(node.ids)
                unc = max(ctx.n_query - node.n_covered, 0)
                train_list.max_cost_docs = max(train_list.max_cost_docs, unc)
            advanced = True

        th = current_th()
        trace.th_trajectory.append(th if th != float("inf") else None)
        if best is not None and best.sc <= th:
            break
        if not advanced:
            break

    if best is None:
        score_ids(frozenset())

    trace.plans_scored = len(scored)
    trace.layers = {
        "count_list": count_list.layers_emitted if count_list else 0,
        "train_list": train_list.layers_emitted if train_list else 0,
    }
    trace.elapsed_s = time.perf_counter() - t0
    return best, trace


# --------------------------------------------------------------------------
# Query execution
# --------------------------------------------------------------------------

@dataclass
class PlanTrace:
    """Everything the search and execution decided, serializable as JSON."""

    query: dict
    alpha: float
    algo: str
    n_query: int
    chosen: dict
    search: dict
    candidates: list
    excluded_partial: list
    uncovered: list
    timings: dict
    materialized_as: str | None = None
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "query": self.query,
            "alpha": self.alpha,
            "algo": self.algo,
            "n_query": self.n_query,
            "chosen": self.chosen,
            "search": self.search,
            "candidates": self.candidates,
            "excluded_partial": self.excluded_partial,
            "uncovered": self.uncovered,
            "timings": self.timings,
            "materialized_as": self.materialized_as,
            "warnings": self.warnings,
        }


@dataclass
class QueryResult:
    model: TopicModel
    plan: ScoredPlan
    trace: PlanTrace
    payload: VbPayload | CgsPayload


def gather_candidates(
    catalog: ModelCatalog,
    query: Region,
    cfg: LdaConfig,
    algo: str,
    vocab_hash: str,
) -> tuple:
    """Contained, merge-compatible, deduplicated candidate models.

    Models must match the query's algorithm, topic count and vocabulary, and
    must carry the query's categorical constraints unchanged so the leftover
    region stays rectilinear.  Duplicate regions keep the lowest model id.
    """
    contained = catalog.overlapping_models(query)
    partial = catalog.partial_overlaps(query)
    out = []
    seen_regions = {}
    for m in contained:
        if m.algo != algo or m.cfg.K != cfg.K or m.vocab_hash != vocab_hash:
            continue
        if not m.region.same_categories(query):
            continue
        if m.region in seen_regions:
            continue
        seen_regions[m.region] = m.model_id
        out.append(Candidate(m.model_id, m.n_docs, m.region))
    if len(out) > MAX_CANDIDATES:
        raise PlannerError(
            f"{len(out)} candidate models exceed the {MAX_CANDIDATES} cap; "
            "materialize coarser models for this range"
        )
    return out, [m.model_id for m in partial]


def execute_query(
    dataset: Dataset,
    catalog: ModelCatalog,
    query: Region,
    alpha: float,
    cfg: LdaConfig,
    algo: str = "cgs",
    cost_model: CostModel | None = None,
    decay: float = 1.0,
    materialize_result: bool = False,
) -> QueryResult:
    """Search for the optimal plan, train what it leaves uncovered, merge.

    Returns the answer model together with a full trace of the search, the
    chosen plan's score breakdown and wall-time of each phase.
    """
    if algo not in ("vb", "cgs"):
        raise PlannerError(f"unknown algorithm {algo!r}")
    cost_model = cost_model or CostModel()
    t_start = time.perf_counter()

    n_query = dataset.count_docs(query)
    ctx = PlanContext(
        n_query=n_query,
        k=cfg.K,
        v=dataset.vocabulary.size,
        max_iters=cfg.max_iters,
        cost=cost_model,
    )
    candidates, partial_ids = gather_candidates(
        catalog, query, cfg, algo, dataset.vocab_hash
    )
    by_id = {c.model_id: c for c in candidates}

    t0 = time.perf_counter()
    plan, search_trace = search(candidates, alpha, ctx)
    t_search = time.perf_counter() - t0

    covered_regions = [by_id[i].region for i in plan.model_ids]
    uncovered = region_difference(query, covered_regions)
    plan = dataclasses.replace(plan, uncovered=tuple(uncovered))

    payloads = [catalog.payload(i) for i in plan.model_ids]

    t0 = time.perf_counter()
    trained_payload = None
    if plan.n_uncovered > 0:
        mask = dataset.mask(query)
        for r in covered_regions:
            mask &= ~dataset.mask(r)
        idx = np.nonzero(mask)[0]
        sl = CorpusSlice(dataset, idx)
        if algo == "cgs":
            state, _ = train_cgs(sl, cfg)
            trained_payload = CgsPayload(
                state.n_kv.astype(np.float64), len(idx),
                int(state.n_kv.sum()), dataset.vocab_hash,
            )
        else:
            state, _ = train_vb(sl, cfg)
            trained_payload = VbPayload(
                state.lam, len(idx),
                int(round(float((state.lam - cfg.eta).sum()))),
                dataset.vocab_hash,
            )
        payloads.append(trained_payload)
    t_train = time.perf_counter() - t0

    if not payloads:
        raise PlannerError("query matches no documents and no models cover it")

    t0 = time.perf_counter()
    x = plan.x
    if algo == "cgs":
        merged_counts, model = merge_cgs(payloads, cfg.eta, decay)
        merged_payload = CgsPayload(
            merged_counts,
            n_docs=sum(p.n_docs for p in payloads),
            word_count=int(round(float(merged_counts.sum()))),
            vocab_hash=dataset.vocab_hash,
        )
        model = TopicModel(
            phi=model.phi, vocab_hash=model.vocab_hash,
            provenance="merged" if x else "trained", merges=x,
        )
    else:
        merged_payload = merge_vb(payloads, cfg.eta)
        model = merged_vb_model(merged_payload, x)
    t_merge = time.perf_counter() - t0

    trace = PlanTrace(
        query=query.to_json(),
        alpha=alpha,
        algo=algo,
        n_query=n_query,
        chosen=plan.to_json(),
        search=search_trace.to_json(),
        candidates=[c.model_id for c in candidates],
        excluded_partial=partial_ids,
        uncovered=[r.to_json() for r in uncovered],
        timings={
            "search_s": t_search,
            "train_s": t_train,
            "merge_s": t_merge,
            "total_s": time.perf_counter() - t_start,
        },
    )
    if materialize_result:
        trace.materialized_as = catalog.materialize(
            region=query,
            payload=merged_payload,
            algo=algo,
            cfg=cfg,
            n_docs=n_query,
            provenance="merged" if x else "trained",
            merges=x,
        )
    return QueryResult(model=model, plan=plan, trace=trace, payload=merged_payload)
