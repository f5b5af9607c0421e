import json
import random

import numpy as np
import pytest

from mlego.lda import LdaConfig
from mlego.merge import CgsPayload, VbPayload
from mlego.regions import CategorySet, Interval, Region
from mlego.store import (
    ModelCatalog,
    StoreError,
    read_payload_bytes,
    write_payload_bytes,
)

CFG = LdaConfig(K=3, max_iters=2, seed=0)


def payload(k=3, v=6, seed=0, algo="cgs"):
    rng = np.random.default_rng(seed)
    mat = rng.random((k, v))
    if algo == "cgs":
        return CgsPayload(mat, n_docs=10, word_count=int(mat.sum()), vocab_hash="vh")
    return VbPayload(mat, n_docs=10, word_count=int(mat.sum()), vocab_hash="vh")


def r1d(lo, hi, attr="id"):
    return Region.of({attr: Interval(float(lo), float(hi))})


class TestPayloadFormat:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(1)
        mat = rng.random((4, 7))
        blob = write_payload_bytes(mat)
        assert blob[:8] == b"MLEGOPAY"
        back = read_payload_bytes(blob)
        assert np.array_equal(back, mat)
        assert back.dtype == np.float64

    def test_header_dims(self):
        blob = write_payload_bytes(np.zeros((2, 3)))
        with pytest.raises(StoreError):
            read_payload_bytes(blob[:-8])  # truncated
        with pytest.raises(StoreError):
            read_payload_bytes(b"BADMAGIC" + blob[8:])


class TestCatalog:
    def test_store_then_fetch_round_trips(self, tmp_path):
        cat = ModelCatalog("ds", tmp_path)
        p = payload(seed=5)
        mid = cat.materialize(r1d(0, 10), p, "cgs", CFG, n_docs=10)
        got = cat.payload(mid)
        assert np.array_equal(got.delta_n_kv, p.delta_n_kv)
        # and from a cold catalog reading disk
        cold = ModelCatalog("ds", tmp_path)
        got2 = cold.payload(mid)
        assert np.array_equal(got2.delta_n_kv, p.delta_n_kv)
        assert cold.get(mid).region == r1d(0, 10)

    def test_many_models_counted(self):
        cat = ModelCatalog("ds")
        for i in range(500):
            cat.materialize(r1d(i, i + 1), payload(seed=i), "cgs", CFG, n_docs=1)
        assert len(cat) == 500

    def test_duplicates_allowed_with_new_ids(self):
        cat = ModelCatalog("ds")
        a = cat.materialize(r1d(0, 10), payload(), "cgs", CFG, n_docs=10)
        b = cat.materialize(r1d(0, 10), payload(), "cgs", CFG, n_docs=10)
        assert a != b
        assert len(cat) == 2

    def test_reference_layout_from_the_worked_example(self):
        """Two disjoint models inside the query plus one straddling both are
        returned; a model extending beyond the query is excluded."""
        cat = ModelCatalog("ds")
        m1 = cat.materialize(r1d(0, 10), payload(), "cgs", CFG, 10)
        m2 = cat.materialize(r1d(20, 30), payload(), "cgs", CFG, 10)
        m3 = cat.materialize(r1d(5, 25), payload(), "cgs", CFG, 20)
        enclosing = cat.materialize(r1d(-50, 100), payload(), "cgs", CFG, 150)
        hits = cat.overlapping_models(r1d(0, 40))
        assert [m.model_id for m in hits] == [m1, m2, m3]
        partial = cat.partial_overlaps(r1d(0, 40))
        assert [m.model_id for m in partial] == [enclosing]

    def test_no_models_no_hits(self):
        cat = ModelCatalog("ds")
        assert cat.overlapping_models(r1d(0, 100)) == []

    def test_unknown_model_raises(self):
        cat = ModelCatalog("ds")
        with pytest.raises(StoreError):
            cat.get("m999999")

    def test_index_matches_linear_scan_1d(self):
        rng = random.Random(7)
        cat = ModelCatalog("ds")
        metas = []
        for i in range(1000):
            lo = rng.uniform(0, 990)
            hi = lo + rng.uniform(1, 200)
            mid = cat.materialize(r1d(lo, hi), payload(seed=i), "cgs", CFG, 5)
            metas.append((mid, lo, hi))
        for _ in range(1000):
            qlo = rng.uniform(0, 990)
            qhi = qlo + rng.uniform(1, 300)
            got = {m.model_id for m in cat.overlapping_models(r1d(qlo, qhi))}
            want = {mid for mid, lo, hi in metas if qlo <= lo and hi <= qhi}
            assert got == want

    def test_index_matches_linear_scan_2d_with_categories(self):
        rng = random.Random(3)
        cat = ModelCatalog("ds")
        entries = []
        cats = ["a", "b", "c"]
        for i in range(300):
            x0 = rng.uniform(0, 90)
            y0 = rng.uniform(0, 90)
            region = Region.of({
                "x": Interval(x0, x0 + rng.uniform(1, 20)),
                "y": Interval(y0, y0 + rng.uniform(1, 20)),
                "cat": CategorySet(frozenset(rng.sample(cats, rng.randint(1, 2)))),
            })
            mid = cat.materialize(region, payload(seed=i), "cgs", CFG, 5)
            entries.append((mid, region))
        for _ in range(300):
            qx = rng.uniform(0, 80)
            qy = rng.uniform(0, 80)
            query = Region.of({
                "x": Interval(qx, qx + rng.uniform(5, 40)),
                "y": Interval(qy, qy + rng.uniform(5, 40)),
                "cat": CategorySet(frozenset(rng.sample(cats, rng.randint(1, 3)))),
            })
            got = {m.model_id for m in cat.overlapping_models(query)}
            want = {mid for mid, region in entries if query.contains(region)}
            assert got == want

    def test_manifest_round_trip(self, tmp_path):
        cat = ModelCatalog("ds", tmp_path)
        mid = cat.materialize(
            Region.of({"id": Interval(0.0, 5.0),
                       "cat": CategorySet(frozenset({"x"}))}),
            payload(algo="vb"), "vb", CFG, n_docs=10,
        )
        manifest = json.loads((tmp_path / mid / "model.json").read_text())
        assert manifest["algo"] == "vb"
        assert manifest["n_docs"] == 10
        cold = ModelCatalog("ds", tmp_path)
        assert cold.get(mid).algo == "vb"
        assert cold.get(mid).cfg.K == CFG.K


class TestIdAllocation:
    def test_ids_never_collide_after_reload_with_gaps(self, tmp_path):
        import shutil

        cat = ModelCatalog("ds", tmp_path)
        ids = [cat.materialize(r1d(i, i + 1), payload(seed=i), "cgs", CFG, 1)
               for i in range(3)]
        shutil.rmtree(tmp_path / ids[0])  # leave a gap at the low end
        cold = ModelCatalog("ds", tmp_path)
        new_id = cold.materialize(r1d(9, 10), payload(seed=9), "cgs", CFG, 1)
        assert new_id not in ids
        assert len({new_id, *ids[1:]}) == 3
