"""Synthetic corpora and catalogs for benchmarks and tests.

Documents are drawn from a planted topic mixture so trained models have real
structure to lose when merged.  Attributes cover the supported predicate
kinds: an integer id, a timestamp-like integer, a geo pair and a category.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, dataset_from_tokens


@dataclass(frozen=True)
class SynthConfig:
    n_docs: int = 1000
    vocab_size: int = 800
    n_topics: int = 10
    doc_len_mean: float = 40.0
    topic_concentration: float = 0.2
    word_concentration: float = 0.05
    n_categories: int = 4
    seed: int = 0


def synthetic_dataset(cfg: SynthConfig, name: str = "synthetic") -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    topics = rng.dirichlet(
        np.full(cfg.vocab_size, cfg.word_concentration), size=cfg.n_topics
    )
    token_lists = []
    for _ in range(cfg.n_docs):
        theta = rng.dirichlet(np.full(cfg.n_topics, cfg.topic_concentration))
        length = max(int(rng.poisson(cfg.doc_len_mean)), 2)
        ks = rng.choice(cfg.n_topics, size=length, p=theta)
        words = np.array(
            [rng.choice(cfg.vocab_size, p=topics[k]) for k in ks], dtype=np.int32
        )
        token_lists.append(words)

    n = cfg.n_docs
    attributes = {
        "id": np.arange(n, dtype=np.int64),
        "time": rng.integers(0, 10_000, size=n),
        "lon": rng.uniform(-180.0, 180.0, size=n),
        "lat": rng.uniform(-90.0, 90.0, size=n),
        "category": np.array([f"cat{int(c)}" for c in rng.integers(0, cfg.n_categories, size=n)]),
    }
    kinds = {"id": "int", "time": "int", "lon": "float", "lat": "float",
             "category": "category"}
    vocab = [f"w{i:04d}" for i in range(cfg.vocab_size)]
    return dataset_from_tokens(name, token_lists, vocab, attributes, kinds)


def synthetic_csv(cfg: SynthConfig) -> str:
    """The same corpus rendered as CSV text, for exercising the ingest path."""
    ds = synthetic_dataset(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["text", "id", "time", "lon", "lat", "category"])
    terms = ds.vocabulary.terms
    for i in range(ds.n_docs):
        doc = ds.document(i)
        text = " ".join(terms[t] for t in doc.tokens)
        writer.writerow([
            text, doc.attributes["id"], doc.attributes["time"],
            doc.attributes["lon"], doc.attributes["lat"], doc.attributes["category"],
        ])
    return buf.getvalue()
