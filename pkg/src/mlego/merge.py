"""Merging of materialized LDA models into one approximate model.

VB models merge by adding their natural-parameter deltas to the prior, with
document-count weights normalized so the largest input keeps weight one.
Sampler models merge by summing topic-word count deltas under an optional
decay factor; inputs are canonically ordered by document count so larger
models receive less decay.  Both operations are pure functions of the input
set: payloads are sorted canonically before any floating-point accumulation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lda import TopicModel, phi_from_counts


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class VbPayload:
    lam: np.ndarray          # K x V variational topic parameter
    n_docs: int
    word_count: int
    vocab_hash: str

    @property
    def K(self) -> int:
        return self.lam.shape[0]

    @property
    def V(self) -> int:
        return self.lam.shape[1]


@dataclass(frozen=True)
class CgsPayload:
    delta_n_kv: np.ndarray   # K x V non-negative topic-word count deltas
    n_docs: int
    word_count: int
    vocab_hash: str

    @property
    def K(self) -> int:
        return self.delta_n_kv.shape[0]

    @property
    def V(self) -> int:
        return self.delta_n_kv.shape[1]


def _digest(mat: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(mat).tobytes()).hexdigest()


def _check_aligned(payloads: Sequence) -> None:
    if not payloads:
        raise MergeError("cannot merge an empty model set")
    first = payloads[0]
    for p in payloads[1:]:
        if (p.K, p.V, p.vocab_hash) != (first.K, first.V, first.vocab_hash):
            raise MergeError(
                "models must share topic count, vocabulary size and vocabulary hash"
            )


def merge_vb(payloads: Sequence[VbPayload], eta: float) -> VbPayload:
    """Weighted Bayesian-update merge of VB topic parameters.

    lam_post = eta + sum_i w_i * (lam_i - eta) with w_i = N_i / max(N_j).
    The result is independent of input order.
    """
    _check_aligned(payloads)
    if len(payloads) == 1:
        return payloads[0]
    ordered = sorted(
        payloads,
        key=lambda p: (p.n_docs, p.word_count, _digest(p.lam)),
    )
    n_max = max(p.n_docs for p in ordered)
    if n_max <= 0:
        raise MergeError("merge requires at least one model with documents")
    lam_post = np.full_like(ordered[0].lam, eta, dtype=np.float64)
    for p in ordered:
        w = p.n_docs / n_max
        lam_post += w * (p.lam - eta)
    return VbPayload(
        lam=lam_post,
        n_docs=sum(p.n_docs for p in ordered),
        word_count=sum(p.word_count for p in ordered),
        vocab_hash=ordered[0].vocab_hash,
    )


def merge_cgs(payloads: Sequence[CgsPayload], beta0: float, decay: float = 1.0):
    """Decayed sum of topic-word count deltas, then the smoothed topic matrix.

    Inputs are ordered by descending document count; the model at position i
    contributes decay**i, so the largest model is never decayed.  With
    decay=1 the merge is an exact order-independent sum.  Returns
    (merged counts, TopicModel).
    """
    _check_aligned(payloads)
    if not (0.0 < decay <= 1.0):
        raise MergeError(f"decay factor must be in (0, 1], got {decay}")
    ordered = sorted(
        payloads,
        key=lambda p: (-p.n_docs, -p.word_count, _digest(p.delta_n_kv)),
    )
    n_kv = np.zeros_like(ordered[0].delta_n_kv, dtype=np.float64)
    for i, p in enumerate(ordered):
        if (p.delta_n_kv < 0).any():
            raise MergeError("count deltas must be non-negative")
        n_kv += (decay ** i) * p.delta_n_kv
    model = TopicModel(
        phi=phi_from_counts(n_kv, beta0),
        vocab_hash=ordered[0].vocab_hash,
        provenance="merged",
        merges=max(len(ordered) - 1, 0),
    )
    return n_kv, model


def merged_vb_model(payload: VbPayload, merges: int) -> TopicModel:
    return TopicModel(
        phi=payload.lam / payload.lam.sum(axis=1, keepdims=True),
        vocab_hash=payload.vocab_hash,
        provenance="merged" if merges else "trained",
        merges=merges,
    )


def merge_count(n_models: int, has_uncovered: bool) -> int:
    """Number of pairwise merges a plan implies.

    Counts participants minus one, where the trained model over uncovered
    data (if any) is one participant; a single fully-covering model needs no
    merge at all.
    """
    participants = n_models + (1 if has_uncovered else 0)
    return max(participants - 1, 0)
