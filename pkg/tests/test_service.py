import asyncio

import httpx
import jsonschema
import pytest

from mlego.config import AppConfig
from mlego.lda import LdaConfig
from mlego.service import create_app, plan_trace_schema, query_request_schema
from mlego.synth import SynthConfig, synthetic_csv

ATTRS = {"id": "int", "time": "int", "lon": "float", "lat": "float",
         "category": "category"}


@pytest.fixture(scope="module")
def client_env(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("svc")
    app = create_app(AppConfig(
        data_dir=data_dir,
        lda=LdaConfig(K=4, max_iters=5, seed=1),
    ))
    return app


async def poll(client, job_id, timeout_s=60.0):
    for _ in range(int(timeout_s / 0.02)):
        r = await client.get(f"/jobs/{job_id}")
        body = r.json()
        if body["state"] in ("done", "failed"):
            return body
        await asyncio.sleep(0.02)
    raise TimeoutError(job_id)


def run(coro):
    return asyncio.get_event_loop_policy().new_event_loop().run_until_complete(coro)


@pytest.fixture(scope="module")
def ready(client_env):
    """Service with one ingested dataset and a 3-model grid."""
    async def setup():
        transport = httpx.ASGITransport(app=client_env)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://t") as c:
            csv_text = synthetic_csv(SynthConfig(
                n_docs=150, vocab_size=120, n_topics=4, doc_len_mean=15, seed=2,
            ))
            r = await c.post("/datasets", json={
                "name": "demo", "text_column": "text", "attributes": ATTRS,
                "csv_text": csv_text, "min_df": 1, "use_stopwords": False,
            })
            assert r.status_code == 202
            job = await poll(c, r.json()["job_id"])
            assert job["state"] == "done", job
            r = await c.post("/models/grid",
                             json={"dataset": "demo", "partitions": 3})
            job = await poll(c, r.json()["job_id"])
            assert job["state"] == "done", job
        return client_env

    return run(setup())


def test_dataset_listing(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            r = await c.get("/datasets")
            assert r.status_code == 200
            body = r.json()
            assert body[0]["name"] == "demo"
            assert body[0]["n_docs"] == 150
    run(go())


def test_models_listed_after_grid(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            r = await c.get("/models", params={"dataset": "demo"})
            assert len(r.json()) == 3
    run(go())


def test_count_endpoint_matches_predicate(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            r = await c.post("/datasets/demo/count",
                             json={"predicate": {"id": [0, 75]}})
            assert r.json()["count"] == 75
    run(go())


def test_query_job_lifecycle_and_trace_schema(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            req = {"dataset": "demo", "predicate": {"id": [0, 100]},
                   "alpha": 0.25}
            jsonschema.validate(req, query_request_schema())
            r = await c.post("/queries", json=req)
            assert r.status_code == 202
            job_id = r.json()["job_id"]
            job = await poll(c, job_id)
            assert job["state"] == "done", job
            result = job["result"]
            assert len(result["topics"]) == 4
            assert len(result["topics"][0]["words"]) == 10
            assert all(w["weight"] >= 0 for w in result["topics"][0]["words"])
            r = await c.get(f"/jobs/{job_id}/trace")
            trace = r.json()
            jsonschema.validate(trace, plan_trace_schema())
            # results are immutable once done
            again = (await c.get(f"/jobs/{job_id}")).json()
            assert again == job
    run(go())


def test_invalid_alpha_is_400(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            r = await c.post("/queries", json={
                "dataset": "demo", "predicate": {"id": [0, 10]}, "alpha": 1.5,
            })
            assert r.status_code == 400
    run(go())


def test_unknown_dataset_is_404(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            r = await c.post("/queries", json={
                "dataset": "nope", "predicate": {"id": [0, 10]},
            })
            assert r.status_code == 404
            r = await c.get("/jobs/doesnotexist")
            assert r.status_code == 404
    run(go())


def test_invalid_predicate_is_400(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            r = await c.post("/queries", json={
                "dataset": "demo", "predicate": {"nope": [0, 10]},
            })
            assert r.status_code == 400
    run(go())


def test_batch_of_one_matches_single_query(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            query = {"dataset": "demo", "predicate": {"id": [0, 100]},
                     "alpha": 0.0}
            r1 = await c.post("/queries", json=query)
            single = await poll(c, r1.json()["job_id"])
            r2 = await c.post("/batches", json={"queries": [query]})
            batch = await poll(c, r2.json()["job_id"])
            assert batch["state"] == "done", batch
            single_topics = single["result"]["topics"]
            batch_topics = batch["result"]["queries"][0]["topics"]
            assert batch_topics == single_topics
    run(go())


def test_mixed_alpha_batch_warns_and_runs_independently(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            r = await c.post("/batches", json={"queries": [
                {"dataset": "demo", "predicate": {"id": [0, 100]}, "alpha": 0.0},
                {"dataset": "demo", "predicate": {"id": [20, 120]}, "alpha": 0.5},
            ]})
            body = await poll(c, r.json()["job_id"])
            assert body["state"] == "done", body
            assert body["result"]["warnings"]
            assert len(body["result"]["queries"]) == 2
    run(go())


def test_concurrent_identical_queries_agree(ready):
    async def go():
        transport = httpx.ASGITransport(app=ready)
        async with httpx.AsyncClient(transport=transport, base_url="http://t") as c:
            query = {"dataset": "demo", "predicate": {"id": [10, 140]},
                     "alpha": 0.0}
            r1 = await c.post("/queries", json=query)
            r2 = await c.post("/queries", json=query)
            j1 = await poll(c, r1.json()["job_id"])
            j2 = await poll(c, r2.json()["job_id"])
            assert j1["result"]["topics"] == j2["result"]["topics"]
            assert j1["job_id"] != j2["job_id"]
    run(go())
