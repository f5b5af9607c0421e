"""HTTP service: datasets, models, analytic queries and batches as jobs.

Long-running work (ingest, training) runs on a bounded worker pool; clients
submit and poll.  Job results are immutable once done.  The query-request
JSON schema is published for clients to validate against.
"""

from __future__ import annotations

import importlib.resources
import io
import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .batch import BatchQuery, execute_batch, optimize_batch
from .config import AppConfig
from .corpus import Dataset, Schema, TokenizerConfig, ingest
from .lda import LdaConfig
from .planner import execute_query
from .regions import Region, RegionError, validate_predicate
from .store import ModelCatalog

logger = logging.getLogger(__name__)


def query_request_schema() -> dict:
    ref = importlib.resources.files("mlego") / "schemas" / "query_request.schema.json"
    return json.loads(ref.read_text())


def plan_trace_schema() -> dict:
    ref = importlib.resources.files("mlego") / "schemas" / "plan_trace.schema.json"
    return json.loads(ref.read_text())


# --------------------------------------------------------------------------
# Job management
# --------------------------------------------------------------------------

@dataclass
class Job:
    job_id: str
    kind: str                  # query | batch | ingest | materialize
    state: str = "queued"      # queued -> running -> done | failed
    submitted_at: float = field(default_factory=time.time)
    started_at: float | None = None
    finished_at: float | None = None
    result: dict | None = None
    trace: dict | None = None
    error: str | None = None

    def summary(self) -> dict:
        out = {
            "job_id": self.job_id,
            "kind": self.kind,
            "state": self.state,
            "submitted_at": self.submitted_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }
        if self.state == "done":
            out["result"] = self.result
        if self.state == "failed":
            out["error"] = self.error
        return out


class JobManager:
    def __init__(self, max_parallel: int):
        self._jobs: dict = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max_parallel)

    def submit(self, kind: str, fn) -> str:
        job = Job(job_id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[job.job_id] = job

        def run():
            job.state = "running"
            job.started_at = time.time()
            try:
                result, trace = fn()
                job.result = result
                job.trace = trace
                job.state = "done"
            except Exception as exc:  # jobs surface failures, never crash the pool
                logger.exception("job %s failed", job.job_id)
                job.error = f"{type(exc).__name__}: {exc}"
                job.state = "failed"
            finally:
                job.finished_at = time.time()

        self._pool.submit(run)
        return job.job_id

    def get(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return job


# --------------------------------------------------------------------------
# Request models
# --------------------------------------------------------------------------

class LdaOverrides(BaseModel):
    K: Optional[int] = Field(default=None, ge=1)
    alpha_dir: Optional[float] = Field(default=None, gt=0)
    eta: Optional[float] = Field(default=None, gt=0)
    max_iters: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = None


class QueryRequest(BaseModel):
    dataset: str
    predicate: dict
    alpha: float = Field(default=0.0, ge=0.0, le=1.0)
    algo: str = Field(default="cgs", pattern="^(cgs|vb)$")
    lda: LdaOverrides = Field(default_factory=LdaOverrides)
    materialize_result: bool = False
    decay: float = Field(default=1.0, gt=0.0, le=1.0)


class BatchRequest(BaseModel):
    queries: list[QueryRequest] = Field(min_length=1)


class IngestRequest(BaseModel):
    name: str = Field(min_length=1)
    text_column: str
    attributes: dict
    csv_text: Optional[str] = None
    csv_path: Optional[str] = None
    fmt: str = Field(default="csv", pattern="^(csv|jsonl)$")
    min_df: int = Field(default=1, ge=1)
    use_stopwords: bool = True


class CountRequest(BaseModel):
    predicate: dict


class MaterializeGridRequest(BaseModel):
    dataset: str
    partitions: int = Field(ge=1)
    attr: str = "id"
    algo: str = Field(default="cgs", pattern="^(cgs|vb)$")
    lda: LdaOverrides = Field(default_factory=LdaOverrides)


# --------------------------------------------------------------------------
# Application state
# --------------------------------------------------------------------------

class AppState:
    def __init__(self, config: AppConfig):
        self.config = config
        self.datasets: dict = {}
        self.catalogs: dict = {}
        self.jobs = JobManager(config.max_parallel_jobs)
        self._lock = threading.Lock()
        self.data_dir = Path(config.data_dir)
        self._load_existing()

    def _load_existing(self):
        ds_root = self.data_dir / "datasets"
        if ds_root.is_dir():
            for d in sorted(ds_root.iterdir()):
                if (d / "manifest.json").exists():
                    ds = Dataset.load(d)
                    self.datasets[ds.name] = ds
                    self.catalogs[ds.name] = ModelCatalog(
                        ds.name, self.data_dir / "models" / ds.name
                    )

    def add_dataset(self, ds: Dataset):
        with self._lock:
            ds.save(self.data_dir / "datasets" / ds.name)
            self.datasets[ds.name] = ds
            self.catalogs[ds.name] = ModelCatalog(
                ds.name, self.data_dir / "models" / ds.name
            )

    def dataset(self, name: str) -> Dataset:
        ds = self.datasets.get(name)
        if ds is None:
            raise HTTPException(status_code=404, detail=f"unknown dataset {name!r}")
        return ds

    def catalog(self, name: str) -> ModelCatalog:
        self.dataset(name)
        return self.catalogs[name]

    def effective_cfg(self, overrides: LdaOverrides) -> LdaConfig:
        cfg = self.config.lda
        updates = {k: v for k, v in overrides.model_dump().items() if v is not None}
        return cfg.with_overrides(**updates) if updates else cfg


def _parse_predicate(ds: Dataset, obj: dict) -> Region:
    try:
        region = Region.from_json(obj)
        validate_predicate(region, ds.schema.attribute_names)
    except RegionError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return region


def _topic_summary(model, ds: Dataset, top_n: int = 10) -> list:
    return [
        {"topic": k, "words": words}
        for k, words in enumerate(model.top_words(ds.vocabulary.terms, top_n))
    ]


def create_app(config: AppConfig | None = None) -> FastAPI:
    state = AppState(config or AppConfig())
    app = FastAPI(title="mlego", version="0.1.0")
    app.state.mlego = state

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/schemas/query_request")
    def get_query_schema():
        return query_request_schema()

    @app.get("/schemas/plan_trace")
    def get_trace_schema():
        return plan_trace_schema()

    @app.get("/datasets")
    def list_datasets():
        return [
            {
                "name": ds.name,
                "n_docs": ds.n_docs,
                "vocab_size": ds.vocabulary.size,
                "vocab_hash": ds.vocab_hash,
                "word_count": ds.word_count,
                "attributes": dict(ds.schema.attributes),
            }
            for ds in state.datasets.values()
        ]

    @app.post("/datasets", status_code=202)
    def submit_ingest(req: IngestRequest):
        if req.csv_text is None and req.csv_path is None:
            raise HTTPException(status_code=400,
                                detail="one of csv_text or csv_path is required")

        def run():
            schema = Schema.of(req.text_column, req.attributes)
            tok = TokenizerConfig(
                min_df=req.min_df,
                stopwords=None if req.use_stopwords else (),
            )
            source = (
                io.StringIO(req.csv_text) if req.csv_text is not None
                else Path(req.csv_path)
            )
            ds, report = ingest(source, schema, tok, name=req.name, fmt=req.fmt)
            state.add_dataset(ds)
            return {
                "dataset": ds.name,
                "n_docs": ds.n_docs,
                "vocab_size": ds.vocabulary.size,
                "n_skipped": report.n_skipped,
            }, None

        return {"job_id": state.jobs.submit("ingest", run)}

    @app.post("/datasets/{name}/count")
    def count_docs(name: str, req: CountRequest):
        ds = state.dataset(name)
        region = _parse_predicate(ds, req.predicate)
        return {"count": ds.count_docs(region)}

    @app.get("/models")
    def list_models(dataset: Optional[str] = None):
        names = [dataset] if dataset else sorted(state.catalogs)
        out = []
        for n in names:
            catalog = state.catalog(n)
            out.extend(m.manifest() for m in catalog.all_models())
        return out

    @app.post("/models/grid", status_code=202)
    def submit_grid(req: MaterializeGridRequest):
        ds = state.dataset(req.dataset)
        cfg = state.effective_cfg(req.lda)

        def run():
            from .grid import materialize_grid
            ids = materialize_grid(
                ds, state.catalog(req.dataset), req.partitions,
                attr=req.attr, cfg=cfg, algo=req.algo,
            )
            return {"model_ids": ids}, None

        return {"job_id": state.jobs.submit("materialize", run)}

    @app.post("/queries", status_code=202)
    def submit_query(req: QueryRequest):
        ds = state.dataset(req.dataset)
        region = _parse_predicate(ds, req.predicate)
        cfg = state.effective_cfg(req.lda)
        catalog = state.catalog(req.dataset)

        def run():
            result = execute_query(
                ds, catalog, region, req.alpha, cfg,
                algo=req.algo, cost_model=state.config.cost,
                decay=req.decay, materialize_result=req.materialize_result,
            )
            payload = {
                "topics": _topic_summary(result.model, ds),
                "merges": result.model.merges,
                "plan": result.plan.to_json(),
            }
            return payload, result.trace.to_json()

        return {"job_id": state.jobs.submit("query", run)}

    @app.post("/batches", status_code=202)
    def submit_batch(req: BatchRequest):
        first = req.queries[0]
        ds = state.dataset(first.dataset)
        regions = []
        for q in req.queries:
            if q.dataset != first.dataset:
                raise HTTPException(
                    status_code=400,
                    detail="all queries in a batch must target one dataset",
                )
            regions.append(_parse_predicate(ds, q.predicate))
        cfg = state.effective_cfg(first.lda)
        catalog = state.catalog(first.dataset)
        uniform = all(
            q.alpha == 0.0 and q.algo == first.algo and q.lda == first.lda
            for q in req.queries
        )

        def run():
            if not uniform:
                answers = []
                traces = []
                for q, region in zip(req.queries, regions):
                    qcfg = state.effective_cfg(q.lda)
                    result = execute_query(
                        ds, catalog, region, q.alpha, qcfg,
                        algo=q.algo, cost_model=state.config.cost,
                        decay=q.decay,
                    )
                    answers.append({
                        "topics": _topic_summary(result.model, ds),
                        "plan": result.plan.to_json(),
                    })
                    traces.append(result.trace.to_json())
                return (
                    {"queries": answers,
                     "warnings": ["mixed alpha or configuration; executed independently"]},
                    {"independent": True, "traces": traces},
                )
            batch_queries = [BatchQuery(region=r, alpha=q.alpha)
                             for q, r in zip(req.queries, regions)]
            plan = optimize_batch(
                ds, catalog, batch_queries, cfg, algo=first.algo,
                cost_model=state.config.cost,
            )
            result = execute_batch(ds, catalog, plan, cfg, algo=first.algo,
                                   decay=first.decay)
            answers = [
                {"topics": _topic_summary(m, ds), "merges": x}
                for m, x in zip(result.models, result.per_query_merge_counts)
            ]
            return {"queries": answers}, result.trace_json()

        return {"job_id": state.jobs.submit("batch", run)}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return state.jobs.get(job_id).summary()

    @app.get("/jobs/{job_id}/trace")
    def get_trace(job_id: str):
        job = state.jobs.get(job_id)
        if job.trace is None:
            raise HTTPException(status_code=404,
                                detail=f"no trace for job {job_id!r}")
        return job.trace

    return app
