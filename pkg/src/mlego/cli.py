"""Command-line driver and benchmark harness."""

from __future__ import annotations

import json
import time
from pathlib import Path

import click
import numpy as np

from . import report
from .batch import BatchQuery, execute_batch, optimize_batch
from .config import AppConfig, load_config
from .corpus import CorpusSlice, Dataset, Schema, TokenizerConfig, ingest
from .grid import materialize_grid, train_region_payload
from .lda import LdaConfig, lpp, train_cgs, train_vb
from .merge import merge_cgs, merge_vb, merged_vb_model
from .planner import (
    Candidate,
    CostModel,
    PlanContext,
    execute_query,
    search,
    search_exhaustive,
)
from .regions import Interval, Region
from .store import ModelCatalog
from .synth import SynthConfig, synthetic_csv


class Workspace:
    """Datasets and catalogs under one data directory."""

    def __init__(self, config: AppConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)

    def dataset(self, name: str) -> Dataset:
        path = self.data_dir / "datasets" / name
        if not (path / "manifest.json").exists():
            raise click.ClickException(f"unknown dataset {name!r} under {self.data_dir}")
        return Dataset.load(path)

    def catalog(self, name: str) -> ModelCatalog:
        return ModelCatalog(name, self.data_dir / "models" / name)

    def save_dataset(self, ds: Dataset):
        ds.save(self.data_dir / "datasets" / ds.name)


pass_workspace = click.make_pass_decorator(Workspace)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML/JSON config file (MLEGO_CONFIG overrides).")
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--data-dir", type=click.Path(), default=None,
              help="Override the data directory.")
@click.pass_context
def main(ctx, config_path, seed, data_dir):
    """Topic-model analytics with materialized-model reuse."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
        cfg.lda = cfg.lda.with_overrides(seed=seed)
    if data_dir is not None:
        cfg.data_dir = Path(data_dir)
    ctx.obj = Workspace(cfg)


def _parse_region(text: str) -> Region:
    return Region.from_json(json.loads(text))


def _lda_cfg(ws: Workspace, k, iters, alpha_dir, eta) -> LdaConfig:
    cfg = ws.config.lda
    updates = {}
    if k is not None:
        updates["K"] = k
    if iters is not None:
        updates["max_iters"] = iters
    if alpha_dir is not None:
        updates["alpha_dir"] = alpha_dir
    if eta is not None:
        updates["eta"] = eta
    return cfg.with_overrides(**updates) if updates else cfg


lda_options = [
    click.option("--k", type=int, default=None, help="Topic count."),
    click.option("--iters", type=int, default=None, help="Max training iterations."),
    click.option("--alpha-dir", type=float, default=None, help="Document-topic prior."),
    click.option("--eta", type=float, default=None, help="Topic-word prior."),
    click.option("--algo", type=click.Choice(["cgs", "vb"]), default="cgs"),
]


def with_lda_options(fn):
    for opt in reversed(lda_options):
        fn = opt(fn)
    return fn


@main.command("make-sample")
@click.option("--docs", type=int, default=1000)
@click.option("--vocab", type=int, default=600)
@click.option("--topics", type=int, default=10)
@click.option("--out", type=click.Path(), default="sample.csv")
@pass_workspace
def cmd_make_sample(ws, docs, vocab, topics, out):
    """Write a synthetic reviews-like CSV plus its schema file."""
    text = synthetic_csv(SynthConfig(
        n_docs=docs, vocab_size=vocab, n_topics=topics, seed=ws.config.seed,
    ))
    out = Path(out)
    out.write_text(text)
    schema = {
        "text_column": "text",
        "attributes": {"id": "int", "time": "int", "lon": "float",
                       "lat": "float", "category": "category"},
    }
    schema_path = out.with_suffix(".schema.json")
    schema_path.write_text(json.dumps(schema, indent=2))
    click.echo(f"wrote {out} and {schema_path}")


@main.command("ingest")
@click.argument("source", type=click.Path(exists=True))
@click.option("--name", required=True, help="Dataset name.")
@click.option("--schema", "schema_path", type=click.Path(exists=True), required=True,
              help="JSON schema file: text column and attribute kinds.")
@click.option("--fmt", type=click.Choice(["csv", "jsonl"]), default="csv")
@click.option("--min-df", type=int, default=1)
@click.option("--no-stopwords", is_flag=True, default=False)
@pass_workspace
def cmd_ingest(ws, source, name, schema_path, fmt, min_df, no_stopwords):
    """Ingest a delimited text file into an immutable dataset."""
    spec = json.loads(Path(schema_path).read_text())
    schema = Schema.of(spec["text_column"], spec["attributes"])
    tok = TokenizerConfig(min_df=min_df, stopwords=() if no_stopwords else None)
    ds, rep = ingest(source, schema, tok, name=name, fmt=fmt)
    ws.save_dataset(ds)
    click.echo(
        f"ingested {rep.n_docs} docs ({rep.n_skipped} skipped), "
        f"V={ds.vocabulary.size}, vocab_hash={ds.vocab_hash[:12]}"
    )


@main.command("train")
@click.option("--dataset", required=True)
@click.option("--predicate", required=True, help="Region JSON, e.g. '{\"id\": [0, 100]}'.")
@with_lda_options
@click.option("--no-materialize", is_flag=True, default=False)
@pass_workspace
def cmd_train(ws, dataset, predicate, k, iters, alpha_dir, eta, algo, no_materialize):
    """Train one model over a predicate range and store it."""
    ds = ws.dataset(dataset)
    region = _parse_region(predicate)
    cfg = _lda_cfg(ws, k, iters, alpha_dir, eta)
    t0 = time.perf_counter()
    payload, model = train_region_payload(ds, region, cfg, algo)
    elapsed = time.perf_counter() - t0
    msg = f"trained {algo} model on {payload.n_docs} docs in {elapsed:.2f}s"
    if not no_materialize:
        catalog = ws.catalog(dataset)
        mid = catalog.materialize(region, payload, algo, cfg, payload.n_docs)
        msg += f", stored as {mid}"
    click.echo(msg)


@main.command("materialize-grid")
@click.option("--dataset", required=True)
@click.option("--partitions", "-n", type=int, required=True)
@click.option("--attr", default="id")
@with_lda_options
@pass_workspace
def cmd_materialize_grid(ws, dataset, partitions, attr, k, iters, alpha_dir, eta, algo):
    """Slice an attribute range into n parts and train a model per slice."""
    if partitions < 1:
        raise click.ClickException("partitions must be >= 1")
    ds = ws.dataset(dataset)
    cfg = _lda_cfg(ws, k, iters, alpha_dir, eta)
    catalog = ws.catalog(dataset)
    ids = materialize_grid(ds, catalog, partitions, attr=attr, cfg=cfg, algo=algo)
    click.echo(f"materialized {len(ids)} models: {', '.join(ids)}")


@main.command("query")
@click.option("--dataset", required=True)
@click.option("--predicate", required=True)
@click.option("--alpha", type=float, default=0.0)
@with_lda_options
@click.option("--materialize", is_flag=True, default=False)
@click.option("--trace-out", type=click.Path(), default=None)
@click.option("--top-words", type=int, default=10)
@pass_workspace
def cmd_query(ws, dataset, predicate, alpha, k, iters, alpha_dir, eta, algo,
              materialize, trace_out, top_words):
    """Answer an analytic query via plan search, training and merging."""
    ds = ws.dataset(dataset)
    region = _parse_region(predicate)
    cfg = _lda_cfg(ws, k, iters, alpha_dir, eta)
    catalog = ws.catalog(dataset)
    result = execute_query(
        ds, catalog, region, alpha, cfg, algo=algo,
        cost_model=ws.config.cost, decay=ws.config.decay,
        materialize_result=materialize,
    )
    plan = result.plan
    click.echo(
        f"plan: models={list(plan.model_ids)} uncovered_docs={plan.n_uncovered} "
        f"merges={plan.x} sc={plan.sc:.6f}"
    )
    timings = result.trace.timings
    click.echo(
        f"timings: search={timings['search_s']:.3f}s train={timings['train_s']:.3f}s "
        f"merge={timings['merge_s']:.3f}s"
    )
    for entry in result.model.top_words(ds.vocabulary.terms, top_words):
        words = " ".join(w["term"] for w in entry)
        click.echo(f"  topic: {words}")
    if trace_out:
        Path(trace_out).write_text(json.dumps(result.trace.to_json(), indent=2))
        click.echo(f"trace written to {trace_out}")


@main.command("batch")
@click.option("--dataset", required=True)
@click.option("--queries-file", type=click.Path(exists=True), required=True,
              help="JSON list of predicate objects.")
@with_lda_options
@click.option("--trace-out", type=click.Path(), default=None)
@pass_workspace
def cmd_batch(ws, dataset, queries_file, k, iters, alpha_dir, eta, algo, trace_out):
    """Optimize and execute a batch of queries with shared-range reuse."""
    ds = ws.dataset(dataset)
    specs = json.loads(Path(queries_file).read_text())
    queries = [BatchQuery(region=Region.from_json(q)) for q in specs]
    cfg = _lda_cfg(ws, k, iters, alpha_dir, eta)
    catalog = ws.catalog(dataset)
    plan = optimize_batch(ds, catalog, queries, cfg, algo=algo,
                          cost_model=ws.config.cost)
    result = execute_batch(ds, catalog, plan, cfg, algo=algo, decay=ws.config.decay)
    click.echo(
        f"batch of {len(queries)}: shared fragments={len(plan.shared)} "
        f"benefit={plan.total_benefit:.4f}s predicted={plan.predicted_time_s:.4f}s "
        f"actual={result.actual_time_s:.2f}s"
    )
    if trace_out:
        Path(trace_out).write_text(json.dumps(result.trace_json(), indent=2))
        click.echo(f"trace written to {trace_out}")


@main.command("serve")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@pass_workspace
def cmd_serve(ws, host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    app = create_app(ws.config)
    uvicorn.run(app, host=host or ws.config.host, port=port or ws.config.port)


# --------------------------------------------------------------------------
# Benchmarks
# --------------------------------------------------------------------------

def _heldout_split(ds: Dataset, frac: float, seed: int):
    rng = np.random.default_rng(seed)
    idx = rng.permutation(ds.n_docs)
    n_held = max(int(ds.n_docs * frac), 1)
    held = np.sort(idx[:n_held])
    train = np.sort(idx[n_held:])
    return train, held


def _warm_kernels(ds: Dataset, cfg: LdaConfig, algo: str):
    """Run one tiny training so JIT compilation never lands in a timed path."""
    trainer = train_cgs if algo == "cgs" else train_vb
    n = min(ds.n_docs, 20)
    trainer(CorpusSlice(ds, np.arange(n)), cfg.with_overrides(max_iters=1))


def run_bench_merge(
    ds: Dataset,
    cfg: LdaConfig,
    n_max: int,
    algos=("cgs", "vb"),
    heldout_frac: float = 0.1,
    seed: int = 0,
) -> list:
    """Train x-way partitions, merge, and measure DP and SR per x."""
    train_idx, held_idx = _heldout_split(ds, heldout_frac, seed)
    held = CorpusSlice(ds, held_idx)
    rows = []
    for algo in algos:
        trainer = train_cgs if algo == "cgs" else train_vb
        _warm_kernels(ds, cfg, algo)
        t0 = time.perf_counter()
        state, orig_model = trainer(CorpusSlice(ds, train_idx), cfg)
        t_orig = time.perf_counter() - t0
        lpp_orig = lpp(orig_model, held, cfg).value
        rng = np.random.default_rng(seed)
        for x in range(1, n_max + 1):
            if x == 1:
                parts = [train_idx]
            else:
                perm = rng.permutation(train_idx)
                parts = [np.sort(p) for p in np.array_split(perm, x)]
            payloads = []
            for j, part in enumerate(parts):
                pcfg = cfg if x == 1 else cfg.with_overrides(seed=cfg.seed + j)
                payload, _ = _slice_payload(ds, part, pcfg, algo)
                payloads.append(payload)
            t0 = time.perf_counter()
            if algo == "cgs":
                _, merged = merge_cgs(payloads, cfg.eta, 1.0)
            else:
                merged = merged_vb_model(merge_vb(payloads, cfg.eta), x - 1)
            t_merge = time.perf_counter() - t0
            lpp_merged = lpp(merged, held, cfg).value
            dp = abs(lpp_orig - lpp_merged)
            if x == 1 and dp != 0.0:
                raise AssertionError("identity merge must reproduce the original model")
            rows.append({
                "algo": algo,
                "x": x,
                "lpp_merged": lpp_merged,
                "lpp_orig": lpp_orig,
                "dp": dp,
                "sr": t_orig / max(t_merge, 1e-9),
                "t_orig_s": t_orig,
                "t_merge_s": t_merge,
            })
    return rows


def _slice_payload(ds: Dataset, indices: np.ndarray, cfg: LdaConfig, algo: str):
    from .merge import CgsPayload, VbPayload

    sl = CorpusSlice(ds, indices)
    if algo == "cgs":
        state, model = train_cgs(sl, cfg)
        return CgsPayload(state.n_kv.astype(np.float64), len(sl),
                          int(state.n_kv.sum()), ds.vocab_hash), model
    state, model = train_vb(sl, cfg)
    return VbPayload(state.lam, len(sl),
                     int(round(float((state.lam - cfg.eta).sum()))),
                     ds.vocab_hash), model


@main.command("bench-merge")
@click.option("--dataset", required=True)
@click.option("--n-max", type=int, default=10)
@click.option("--heldout-frac", type=float, default=0.1)
@with_lda_options
@click.option("--both-algos/--one-algo", default=True)
@click.option("--out", type=click.Path(), default="reports/merge")
@pass_workspace
def cmd_bench_merge(ws, dataset, n_max, heldout_frac, k, iters, alpha_dir, eta,
                    algo, both_algos, out):
    """Measure merge quality loss (DP) and speedup (SR) against partitions."""
    ds = ws.dataset(dataset)
    cfg = _lda_cfg(ws, k, iters, alpha_dir, eta)
    algos = ("cgs", "vb") if both_algos else (algo,)
    rows = run_bench_merge(ds, cfg, n_max, algos=algos,
                           heldout_frac=heldout_frac, seed=ws.config.seed)
    outdir = Path(out)
    report.write_table(outdir, "bench_merge", rows)
    report.figure_merge(outdir, rows)
    # refit the planner's loss ratio to the measured quality-gap curve
    from .planner import fit_loss_gamma
    summary = {}
    for a in algos:
        sub = [r for r in rows if r["algo"] == a and r["x"] >= 1]
        if len(sub) >= 3 and max(r["dp"] for r in sub) > 0:
            summary[f"suggested_loss_gamma_{a}"] = fit_loss_gamma(
                [r["x"] for r in sub], [r["dp"] for r in sub],
            )
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
    report.write_index(outdir, "Merge bench",
                       ["bench_merge.csv", "bench_merge.json", "bench_merge.png",
                        "summary.json"])
    click.echo(f"wrote {outdir}/bench_merge.csv (+json, +png, summary, index.html)")


def synthetic_catalog(m: int, n_query: int, conflicts: int = 2,
                      seed: int = 0) -> list:
    """Grid of disjoint candidates plus a few overlapping conflict models."""
    import random as _random

    rng = _random.Random(seed)
    cands = []
    width = n_query / m
    for i in range(m):
        lo, hi = i * width, (i + 1) * width
        cands.append(Candidate(
            f"m{i:03d}", max(int(width * rng.uniform(0.6, 0.95)), 1),
            Region.of({"id": Interval(lo, hi)}),
        ))
    for j in range(conflicts):
        lo = rng.uniform(0, n_query * 0.8)
        hi = min(lo + 1.5 * width, n_query)
        cands.append(Candidate(
            f"x{j:03d}", max(int((hi - lo) * 0.5), 1),
            Region.of({"id": Interval(lo, hi)}),
        ))
    return cands


def run_bench_plansearch(model_counts, trials: int, alpha: float,
                         seed: int = 0, include_nai: bool = True) -> list:
    """Time the exhaustive, threshold and fused searches on synthetic catalogs."""
    rows = []
    n_query = 100_000
    for m in model_counts:
        times = {"NAI": [], "PSOA": [], "PSOA++": []}
        for t in range(trials):
            cands = synthetic_catalog(m, n_query, seed=seed + t)
            ctx = PlanContext(n_query=n_query, k=20, v=1000, max_iters=50,
                              cost=CostModel())
            t0 = time.perf_counter()
            best_p, _ = search(cands, alpha, ctx, fuse_merge_list=False)
            times["PSOA"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            best_pp, _ = search(cands, alpha, ctx)
            times["PSOA++"].append(time.perf_counter() - t0)
            if abs(best_p.sc - best_pp.sc) > 1e-9:
                raise AssertionError("fused search disagrees with threshold search")
            if include_nai:
                t0 = time.perf_counter()
                best_n = search_exhaustive(cands, alpha, ctx)
                times["NAI"].append(time.perf_counter() - t0)
                if abs(best_n.sc - best_p.sc) > 1e-9:
                    raise AssertionError("threshold search disagrees with enumeration")
        for method, ts in times.items():
            if ts:
                rows.append({
                    "method": method,
                    "m": m + 2,  # grid models plus conflict models
                    "trials": len(ts),
                    "mean_time_s": float(np.mean(ts)),
                    "alpha": alpha,
                })
    return rows


@main.command("bench-plansearch")
@click.option("--models", "-m", multiple=True, type=int, default=(6, 10, 14, 18))
@click.option("--trials", type=int, default=3)
@click.option("--alpha", type=float, default=0.0)
@click.option("--skip-nai-above", type=int, default=24,
              help="Skip the exhaustive baseline above this many models.")
@click.option("--out", type=click.Path(), default="reports/plansearch")
@pass_workspace
def cmd_bench_plansearch(ws, models, trials, alpha, skip_nai_above, out):
    """Compare plan-search strategies; cross-checks every result against NAI."""
    rows = []
    for m in models:
        rows.extend(run_bench_plansearch(
            [m], trials, alpha, seed=ws.config.seed,
            include_nai=m <= skip_nai_above,
        ))
    outdir = Path(out)
    report.write_table(outdir, "bench_plansearch", rows)
    report.figure_plansearch(outdir, rows)
    report.write_index(outdir, "Plan-search bench",
                       ["bench_plansearch.csv", "bench_plansearch.json",
                        "bench_plansearch.png"])
    click.echo(f"wrote {outdir}/bench_plansearch.csv (+json, +png, index.html)")


def run_bench_coverage(ds: Dataset, cfg: LdaConfig, ratios, algo: str = "cgs",
                       grid_parts: int = 4, seed: int = 0,
                       cost_model: CostModel | None = None) -> list:
    """Measure end-to-end query speedup as model coverage grows."""
    cost_model = cost_model or CostModel()
    lo, hi = ds.attribute_range("id")
    query = Region.of({"id": Interval(lo, hi)})
    held_frac = 0.1
    train_idx, held_idx = _heldout_split(ds, held_frac, seed)
    held = CorpusSlice(ds, held_idx)

    trainer = train_cgs if algo == "cgs" else train_vb
    _warm_kernels(ds, cfg, algo)
    t0 = time.perf_counter()
    _, orig_model = trainer(ds.select(query), cfg)
    t_orig = time.perf_counter() - t0
    lpp_orig = lpp(orig_model, held, cfg).value

    rows = []
    for ratio in ratios:
        catalog = ModelCatalog(ds.name)  # fresh in-memory catalog per ratio
        n_models = 0
        if ratio > 0:
            cut = lo + (hi - lo) * ratio / 100.0
            covered = Region.of({"id": Interval(lo, cut)})
            sub = np.sort(np.nonzero(ds.mask(covered))[0])
            edges = np.linspace(lo, cut, grid_parts + 1)
            for i, (a, b) in enumerate(zip(edges, edges[1:])):
                region = Region.of({"id": Interval(float(a), float(b))})
                sl = ds.select(region)
                if len(sl) == 0:
                    continue
                pcfg = cfg.with_overrides(seed=cfg.seed + i)
                payload, _ = _slice_payload(
                    ds, np.sort(np.nonzero(ds.mask(region))[0]), pcfg, algo,
                )
                catalog.materialize(region, payload, algo, pcfg, len(sl))
                n_models += 1
        t0 = time.perf_counter()
        result = execute_query(ds, catalog, query, 0.0, cfg, algo=algo,
                               cost_model=cost_model)
        t_reuse = time.perf_counter() - t0
        lpp_reuse = lpp(result.model, held, cfg).value
        rows.append({
            "algo": algo,
            "ratio": ratio,
            "n_models": n_models,
            "t_orig_s": t_orig,
            "t_reuse_s": t_reuse,
            "sr": t_orig / max(t_reuse, 1e-9),
            "lpp_orig": lpp_orig,
            "lpp_reuse": lpp_reuse,
            "dp": abs(lpp_orig - lpp_reuse),
        })
    return rows


@main.command("bench-coverage")
@click.option("--dataset", required=True)
@click.option("--ratios", default="0,25,50,75,100")
@with_lda_options
@click.option("--out", type=click.Path(), default="reports/coverage")
@pass_workspace
def cmd_bench_coverage(ws, dataset, ratios, k, iters, alpha_dir, eta, algo, out):
    """Measure the speedup ratio across materialized-model coverage levels."""
    ds = ws.dataset(dataset)
    cfg = _lda_cfg(ws, k, iters, alpha_dir, eta)
    ratio_list = [float(r) for r in ratios.split(",")]
    rows = run_bench_coverage(ds, cfg, ratio_list, algo=algo,
                              seed=ws.config.seed, cost_model=ws.config.cost)
    outdir = Path(out)
    report.write_table(outdir, "bench_coverage", rows)
    report.figure_coverage(outdir, rows)
    report.write_index(outdir, "Coverage bench",
                       ["bench_coverage.csv", "bench_coverage.json",
                        "bench_coverage.png"])
    click.echo(f"wrote {outdir}/bench_coverage.csv (+json, +png, index.html)")


if __name__ == "__main__":
    main()
