"""Materialize a grid of models by slicing an ordered attribute's range."""

from __future__ import annotations

import numpy as np

from .corpus import Dataset
from .lda import LdaConfig, train_cgs, train_vb
from .merge import CgsPayload, VbPayload
from .regions import Interval, Region
from .store import ModelCatalog


def grid_edges(dataset: Dataset, attr: str, partitions: int) -> list:
    """Equal-count cut points over an ordered attribute, as interval edges."""
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    vals = np.sort(dataset.attribute_values(attr).astype(np.float64))
    n = len(vals)
    edges = [float(vals[0])]
    for i in range(1, partitions):
        edges.append(float(vals[int(round(i * n / partitions))]))
    edges.append(float(vals[-1]) + 1.0)
    return edges


def grid_regions(dataset: Dataset, attr: str, partitions: int) -> list:
    edges = grid_edges(dataset, attr, partitions)
    out = []
    for lo, hi in zip(edges, edges[1:]):
        if lo < hi:
            out.append(Region.of({attr: Interval(lo, hi)}))
    return out


def train_region_payload(dataset: Dataset, region: Region, cfg: LdaConfig,
                         algo: str):
    """Train one model over a region and wrap it as a merge-ready payload."""
    sl = dataset.select(region)
    if algo == "cgs":
        state, model = train_cgs(sl, cfg)
        payload = CgsPayload(
            state.n_kv.astype(np.float64), len(sl),
            int(state.n_kv.sum()), dataset.vocab_hash,
        )
    else:
        state, model = train_vb(sl, cfg)
        payload = VbPayload(
            state.lam, len(sl),
            int(round(float((state.lam - cfg.eta).sum()))),
            dataset.vocab_hash,
        )
    return payload, model


def materialize_grid(
    dataset: Dataset,
    catalog: ModelCatalog,
    partitions: int,
    attr: str = "id",
    cfg: LdaConfig | None = None,
    algo: str = "cgs",
) -> list:
    """Train and store one model per slice; returns the new model ids."""
    cfg = cfg or LdaConfig()
    ids = []
    for i, region in enumerate(grid_regions(dataset, attr, partitions)):
        part_cfg = cfg.with_overrides(seed=cfg.seed + i)
        payload, _ = train_region_payload(dataset, region, part_cfg, algo)
        n = dataset.count_docs(region)
        ids.append(catalog.materialize(region, payload, algo, part_cfg, n))
    return ids
