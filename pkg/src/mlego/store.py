"""Registry and persistence for materialized models.

Each model is stored as its own directory: a JSON manifest plus a binary
payload (magic, u32 K, u32 V, then row-major float64, all little-endian) so
round-trips are bit-exact and readable from any language.  Lookups go
through an interval tree per ordered attribute intersected with hash buckets
per categorical attribute, and are verified against linear scans in tests.
"""

from __future__ import annotations

import json
import struct
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from .lda import LdaConfig
from .merge import CgsPayload, VbPayload
from .regions import Interval, Region

PAYLOAD_MAGIC = b"MLEGOPAY"


class StoreError(ValueError):
    pass


@dataclass(frozen=True)
class MaterializedModel:
    """A stored, reusable model keyed to the predicate range it was trained on."""

    model_id: str
    region: Region
    n_docs: int
    word_count: int
    algo: str                   # "vb" | "cgs"
    cfg: LdaConfig
    vocab_hash: str
    created_at: float
    dataset: str
    provenance: str = "trained"
    merges: int = 0

    def manifest(self) -> dict:
        return {
            "model_id": self.model_id,
            "region": self.region.to_json(),
            "n_docs": self.n_docs,
            "word_count": self.word_count,
            "algo": self.algo,
            "cfg": self.cfg.to_json(),
            "vocab_hash": self.vocab_hash,
            "created_at": self.created_at,
            "dataset": self.dataset,
            "provenance": self.provenance,
            "merges": self.merges,
            "K": self.cfg.K,
        }

    @staticmethod
    def from_manifest(obj: dict) -> "MaterializedModel":
        return MaterializedModel(
            model_id=obj["model_id"],
            region=Region.from_json(obj["region"]),
            n_docs=int(obj["n_docs"]),
            word_count=int(obj["word_count"]),
            algo=obj["algo"],
            cfg=LdaConfig.from_json(obj["cfg"]),
            vocab_hash=obj["vocab_hash"],
            created_at=float(obj["created_at"]),
            dataset=obj["dataset"],
            provenance=obj.get("provenance", "trained"),
            merges=int(obj.get("merges", 0)),
        )


def write_payload_bytes(matrix: np.ndarray) -> bytes:
    mat = np.ascontiguousarray(matrix, dtype="<f8")
    k, v = mat.shape
    return PAYLOAD_MAGIC + struct.pack("<II", k, v) + mat.tobytes()


def read_payload_bytes(blob: bytes) -> np.ndarray:
    if blob[:8] != PAYLOAD_MAGIC:
        raise StoreError("bad payload magic")
    k, v = struct.unpack("<II", blob[8:16])
    mat = np.frombuffer(blob[16:], dtype="<f8")
    if mat.size != k * v:
        raise StoreError("payload size does not match header dims")
    return mat.reshape(k, v).copy()


# --------------------------------------------------------------------------
# Interval tree (static, centered) for ordered-attribute lookups
# --------------------------------------------------------------------------

class _IntervalNode:
    __slots__ = ("center", "by_lo", "by_hi", "left", "right")

    def __init__(self, items):
        # items: list of (Interval, model_id)
        centers = sorted(x[0].lo for x in items)
        self.center = centers[len(centers) // 2]
        here, left, right = [], [], []
        for iv, mid in items:
            if iv.hi <= self.center:
                left.append((iv, mid))
            elif iv.lo > self.center:
                right.append((iv, mid))
            else:
                here.append((iv, mid))
        self.by_lo = sorted(here, key=lambda x: x[0].lo)
        self.by_hi = sorted(here, key=lambda x: -x[0].hi)
        self.left = _IntervalNode(left) if left else None
        self.right = _IntervalNode(right) if right else None

    def query(self, iv: Interval, out: set):
        # Items at this node all span the center.
        if iv.contains_value(self.center):
            for _, mid in self.by_lo:
                out.add(mid)
        elif iv.hi <= self.center:
            for item, mid in self.by_lo:
                if item.lo >= iv.hi:
                    break
                out.add(mid)
        else:
            for item, mid in self.by_hi:
                if item.hi <= iv.lo:
                    break
                out.add(mid)
        if self.left is not None and iv.lo < self.center:
            self.left.query(iv, out)
        if self.right is not None and iv.hi > self.center:
            self.right.query(iv, out)


class IntervalIndex:
    """Interval tree over one ordered attribute, plus the unconstrained set."""

    def __init__(self):
        self._items: list = []
        self._tree: _IntervalNode | None = None
        self._dirty = False

    def add(self, iv: Interval, model_id: str):
        self._items.append((iv, model_id))
        self._dirty = True

    def query(self, iv: Interval) -> set:
        if self._dirty:
            self._tree = _IntervalNode(self._items) if self._items else None
            self._dirty = False
        out: set = set()
        if self._tree is not None:
            self._tree.query(iv, out)
        return out


class ModelCatalog:
    """All materialized models of one dataset plus spatial lookup indexes."""

    def __init__(self, dataset: str, root: Path | None = None):
        self.dataset = dataset
        self.root = Path(root) if root is not None else None
        self._models: dict = {}
        self._payload_cache: dict = {}
        self._interval_idx: dict = {}
        self._category_idx: dict = {}
        self._constrained_by: dict = {}
        self._write_lock = threading.Lock()
        self._seq = 0
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._load_existing()

    # -- internals -----------------------------------------------------------

    def _load_existing(self):
        for manifest_path in sorted(self.root.glob("*/model.json")):
            meta = MaterializedModel.from_manifest(
                json.loads(manifest_path.read_text())
            )
            self._register(meta)

    def _register(self, meta: MaterializedModel):
        self._models[meta.model_id] = meta
        if meta.model_id.startswith("m") and meta.model_id[1:].isdigit():
            self._seq = max(self._seq, int(meta.model_id[1:]))
        for attr, constraint in meta.region.clauses:
            if isinstance(constraint, Interval):
                self._interval_idx.setdefault(attr, IntervalIndex()).add(
                    constraint, meta.model_id
                )
            else:
                buckets = self._category_idx.setdefault(attr, {})
                for v in constraint.values:
                    buckets.setdefault(v, set()).add(meta.model_id)
            self._constrained_by.setdefault(attr, set()).add(meta.model_id)

    def _next_id(self) -> str:
        self._seq += 1
        return f"m{self._seq:06d}"

    # -- public API ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._models)

    def get(self, model_id: str) -> MaterializedModel:
        try:
            return self._models[model_id]
        except KeyError:
            raise StoreError(f"unknown model {model_id!r}") from None

    def all_models(self) -> list:
        return [self._models[k] for k in sorted(self._models)]

    def materialize(
        self,
        region: Region,
        payload: VbPayload | CgsPayload,
        algo: str,
        cfg: LdaConfig,
        n_docs: int,
        provenance: str = "trained",
        merges: int = 0,
    ) -> str:
        """Durably record a model; visible to lookups once the call returns."""
        if algo not in ("vb", "cgs"):
            raise StoreError(f"unknown algorithm {algo!r}")
        matrix = payload.lam if algo == "vb" else payload.delta_n_kv
        if matrix.shape != (cfg.K, matrix.shape[1]):
            raise StoreError("payload dims inconsistent with configuration")
        with self._write_lock:
            model_id = self._next_id()
            meta = MaterializedModel(
                model_id=model_id,
                region=region,
                n_docs=n_docs,
                word_count=payload.word_count,
                algo=algo,
                cfg=cfg,
                vocab_hash=payload.vocab_hash,
                created_at=time.time(),
                dataset=self.dataset,
                provenance=provenance,
                merges=merges,
            )
            if self.root is not None:
                final_dir = self.root / model_id
                tmp_dir = self.root / f".tmp-{uuid.uuid4().hex}"
                tmp_dir.mkdir(parents=True)
                (tmp_dir / "payload.bin").write_bytes(write_payload_bytes(matrix))
                (tmp_dir / "model.json").write_text(
                    json.dumps(meta.manifest(), indent=2)
                )
                tmp_dir.rename(final_dir)
            self._payload_cache[model_id] = payload
            self._register(meta)
        return model_id

    def payload(self, model_id: str) -> VbPayload | CgsPayload:
        if model_id in self._payload_cache:
            return self._payload_cache[model_id]
        meta = self.get(model_id)
        if self.root is None:
            raise StoreError(f"payload for {model_id!r} not cached and no store root")
        blob = (self.root / model_id / "payload.bin").read_bytes()
        matrix = read_payload_bytes(blob)
        if meta.algo == "vb":
            payload = VbPayload(matrix, meta.n_docs, meta.word_count, meta.vocab_hash)
        else:
            payload = CgsPayload(matrix, meta.n_docs, meta.word_count, meta.vocab_hash)
        self._payload_cache[model_id] = payload
        return payload

    def overlapping_models(self, query: Region) -> list:
        """Models fully contained in the query region.

        Partially overlapping models cannot contribute to a merge (there is
        no way to subtract the out-of-range data), so they are excluded here
        and surfaced separately via `partial_overlaps`.
        """
        ids = self._index_candidates(query)
        out = [
            self._models[m] for m in ids
            if query.contains(self._models[m].region)
        ]
        return sorted(out, key=lambda m: m.model_id)

    def partial_overlaps(self, query: Region) -> list:
        """Models intersecting but not contained; excluded from plans."""
        ids = self._index_candidates(query)
        out = [
            self._models[m] for m in ids
            if query.overlaps(self._models[m].region)
            and not query.contains(self._models[m].region)
        ]
        return sorted(out, key=lambda m: m.model_id)

    def _index_candidates(self, query: Region) -> set:
        ids: set | None = None
        for attr, constraint in query.clauses:
            if isinstance(constraint, Interval):
                hit = self._interval_idx[attr].query(constraint) if attr in self._interval_idx else set()
            else:
                buckets = self._category_idx.get(attr, {})
                hit = set()
                for v in constraint.values:
                    hit |= buckets.get(v, set())
            # Models that leave this attribute unconstrained always intersect.
            hit = hit | (set(self._models) - self._constrained_by.get(attr, set()))
            ids = hit if ids is None else (ids & hit)
        if ids is None:
            ids = set(self._models)
        return ids
