"""LDA training by collapsed Gibbs sampling and batch variational Bayes.

Both trainers emit, besides the row-stochastic topic-word matrix used to
answer queries, a merge-ready payload: raw topic-word count deltas for the
sampler, and the variational topic parameter for VB.  Held-out quality is
measured by log predictive probability under a document-completion protocol
(fold in the first half of each document, score the second half).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import numpy as np
from numba import njit
from scipy.special import psi

from .corpus import CorpusSlice

PROB_FLOOR = 1e-12
FOLD_IN_SWEEPS = 20
GAMMA_CONVERGENCE = 1e-4


class LdaError(ValueError):
    pass


@dataclass(frozen=True)
class LdaConfig:
    K: int = 100
    alpha_dir: float = 0.1
    eta: float = 0.01
    max_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise LdaError("K must be >= 1")
        if self.alpha_dir <= 0 or self.eta <= 0:
            raise LdaError("Dirichlet priors must be positive")
        if self.max_iters < 1:
            raise LdaError("max_iters must be >= 1")

    def to_json(self) -> dict:
        return {
            "K": self.K,
            "alpha_dir": self.alpha_dir,
            "eta": self.eta,
            "max_iters": self.max_iters,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj) -> "LdaConfig":
        return LdaConfig(
            K=int(obj.get("K", 100)),
            alpha_dir=float(obj.get("alpha_dir", 0.1)),
            eta=float(obj.get("eta", 0.01)),
            max_iters=int(obj.get("max_iters", 100)),
            seed=int(obj.get("seed", 0)),
        )

    def with_overrides(self, **kwargs) -> "LdaConfig":
        return replace(self, **kwargs)


@dataclass
class CgsState:
    n_kd: np.ndarray  # K x D topic-document counts
    n_kv: np.ndarray  # K x V topic-word counts
    n_k: np.ndarray   # K topic totals
    z: np.ndarray     # per-token assignments

    def check_conservation(self):
        if not np.array_equal(self.n_kv.sum(axis=1), self.n_k):
            raise LdaError("topic-word counts do not match topic totals")
        if int(self.n_kd.sum()) != len(self.z):
            raise LdaError("topic-document counts do not match token count")


@dataclass
class VbState:
    lam: np.ndarray    # K x V variational topic parameter
    gamma: np.ndarray  # D x K variational document parameter
    iterations: int


@dataclass(frozen=True)
class TopicModel:
    phi: np.ndarray  # K x V, rows sum to 1
    vocab_hash: str
    provenance: str = "trained"
    merges: int = 0

    def __post_init__(self):
        rows = self.phi.sum(axis=1)
        if not np.allclose(rows, 1.0, atol=1e-9):
            raise LdaError("topic rows must sum to 1")
        if (self.phi < 0).any():
            raise LdaError("topic probabilities must be non-negative")

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    @property
    def V(self) -> int:
        return self.phi.shape[1]

    def top_words(self, vocab_terms, n: int = 10) -> list:
        out = []
        for k in range(self.K):
            idx = np.argsort(self.phi[k])[::-1][:n]
            out.append([
                {"term": vocab_terms[int(v)], "weight": float(self.phi[k, int(v)])}
                for v in idx
            ])
        return out


@dataclass
class LppResult:
    value: float
    n_tokens: int
    n_floored: int
    n_skipped_docs: int = 0


def phi_from_counts(n_kv: np.ndarray, eta: float) -> np.ndarray:
    """Row-stochastic topic-word matrix from (possibly decayed) counts."""
    n_k = n_kv.sum(axis=1, keepdims=True)
    return (n_kv + eta) / (n_k + n_kv.shape[1] * eta)


# --------------------------------------------------------------------------
# Collapsed Gibbs sampling kernels
# --------------------------------------------------------------------------

@njit(cache=True)
def _cgs_run(tokens, doc_starts, K, V, alpha, eta, sweeps, seed):
    np.random.seed(seed)
    D = doc_starts.shape[0] - 1
    n_tokens = tokens.shape[0]
    z = np.empty(n_tokens, dtype=np.int32)
    n_kd = np.zeros((K, D), dtype=np.int64)
    n_kv = np.zeros((K, V), dtype=np.int64)
    n_k = np.zeros(K, dtype=np.int64)

    for d in range(D):
        for i in range(doc_starts[d], doc_starts[d + 1]):
            k = np.random.randint(0, K)
            z[i] = k
            n_kd[k, d] += 1
            n_kv[k, tokens[i]] += 1
            n_k[k] += 1

    cum = np.empty(K, dtype=np.float64)
    veta = V * eta
    for _ in range(sweeps):
        for d in range(D):
            for i in range(doc_starts[d], doc_starts[d + 1]):
                w = tokens[i]
                k = z[i]
                n_kd[k, d] -= 1
                n_kv[k, w] -= 1
                n_k[k] -= 1
                total = 0.0
                for kk in range(K):
                    total += (n_kd[kk, d] + alpha) * (n_kv[kk, w] + eta) / (n_k[kk] + veta)
                    cum[kk] = total
                u = np.random.random() * total
                k = 0
                while cum[k] < u and k < K - 1:
                    k += 1
                z[i] = k
                n_kd[k, d] += 1
                n_kv[k, w] += 1
                n_k[k] += 1
    return z, n_kd, n_kv, n_k


@njit(cache=True)
def _fold_in_counts(tokens, phi, K, alpha, sweeps, seed):
    np.random.seed(seed)
    n = tokens.shape[0]
    z = np.empty(n, dtype=np.int32)
    n_k = np.zeros(K, dtype=np.float64)
    for i in range(n):
        k = np.random.randint(0, K)
        z[i] = k
        n_k[k] += 1.0
    cum = np.empty(K, dtype=np.float64)
    for _ in range(sweeps):
        for i in range(n):
            w = tokens[i]
            k = z[i]
            n_k[k] -= 1.0
            total = 0.0
            for kk in range(K):
                total += (n_k[kk] + alpha) * phi[kk, w]
                cum[kk] = total
            if total <= 0.0:
                k = np.random.randint(0, K)
            else:
                u = np.random.random() * total
                k = 0
                while cum[k] < u and k < K - 1:
                    k += 1
            z[i] = k
            n_k[k] += 1.0
    return n_k


def train_cgs(corpus_slice: CorpusSlice, cfg: LdaConfig):
    """Collapsed Gibbs sampling for cfg.max_iters full sweeps.

    Deterministic given (document order, cfg.seed).  Returns the final count
    state and the smoothed topic-word model.
    """
    if len(corpus_slice) == 0:
        raise LdaError("cannot train on an empty corpus slice")
    tokens, starts = corpus_slice.token_arrays()
    V = corpus_slice.vocab_size
    if len(tokens) == 0:
        raise LdaError("corpus slice has no tokens")
    if int(tokens.max()) >= V:
        raise LdaError("token index out of vocabulary range")
    z, n_kd, n_kv, n_k = _cgs_run(
        tokens, starts, cfg.K, V,
        float(cfg.alpha_dir), float(cfg.eta), int(cfg.max_iters), int(cfg.seed),
    )
    state = CgsState(n_kd=n_kd, n_kv=n_kv, n_k=n_k, z=z)
    model = TopicModel(
        phi=phi_from_counts(n_kv.astype(np.float64), cfg.eta),
        vocab_hash=corpus_slice.vocab_hash,
    )
    return state, model


# --------------------------------------------------------------------------
# Batch variational Bayes
# --------------------------------------------------------------------------

def _dirichlet_expectation(mat: np.ndarray) -> np.ndarray:
    if mat.ndim == 1:
        return psi(mat) - psi(mat.sum())
    return psi(mat) - psi(mat.sum(axis=1))[:, np.newaxis]

_E_STEP_MAX_ITERS = 100
_E_STEP_MEAN_CHANGE = 1e-3


def _doc_term_counts(corpus_slice: CorpusSlice):
    """Per-document unique-term ids and counts."""
    tokens, starts = corpus_slice.token_arrays()
    docs = []
    for d in range(len(starts) - 1):
        seg = tokens[starts[d]:starts[d + 1]]
        ids, cts = np.unique(seg, return_counts=True)
        docs.append((ids, cts.astype(np.float64)))
    return docs


def _e_step(docs, gamma_init, expElogbeta, alpha):
    """Converge each document's gamma against fixed topics.

    Returns (gamma, sstats); sstats[k, v] accumulates token responsibilities
    and sums to the slice's token count.
    """
    gamma = gamma_init
    sstats = np.zeros_like(expElogbeta)
    for j, (ids, cts) in enumerate(docs):
        if len(ids) == 0:
            continue
        gamma_d = gamma[j]
        beta_d = expElogbeta[:, ids]  # K x U
        expElogtheta_d = np.exp(_dirichlet_expectation(gamma_d))
        phinorm = expElogtheta_d @ beta_d + 1e-100
        for _ in range(_E_STEP_MAX_ITERS):
            last = gamma_d
            gamma_d = alpha + expElogtheta_d * ((cts / phinorm) @ beta_d.T)
            expElogtheta_d = np.exp(_dirichlet_expectation(gamma_d))
            phinorm = expElogtheta_d @ beta_d + 1e-100
            if np.abs(gamma_d - last).mean() < _E_STEP_MEAN_CHANGE:
                break
        gamma[j] = gamma_d
        sstats[:, ids] += np.outer(expElogtheta_d, cts / phinorm) * beta_d
    return gamma, sstats


def train_vb(corpus_slice: CorpusSlice, cfg: LdaConfig):
    """Mean-field coordinate ascent until max_iters or the gamma matrix settles.

    The topic parameter starts at the prior and is seeded by one pass of
    random hard token-topic assignments (the same symmetry breaking the
    sampler uses); document parameters restart from a seeded Gamma draw each
    sweep, which keeps the deterministic ascent out of the degenerate
    document-clustering optimum.  After every update the topic parameter
    equals the prior plus accumulated responsibilities, so payloads stay
    additive for merging.
    """
    if len(corpus_slice) == 0:
        raise LdaError("cannot train on an empty corpus slice")
    docs = _doc_term_counts(corpus_slice)
    D, K, V = len(docs), cfg.K, corpus_slice.vocab_size
    tokens, _ = corpus_slice.token_arrays()
    if len(tokens) == 0:
        raise LdaError("corpus slice has no tokens")
    if int(tokens.max()) >= V:
        raise LdaError("token index out of vocabulary range")

    rng = np.random.default_rng(cfg.seed)
    sstats0 = np.zeros((K, V))
    for ids, cts in docs:
        if len(ids) == 0:
            continue
        ks = rng.integers(0, K, size=len(ids))
        np.add.at(sstats0, (ks, ids), cts)
    lam = cfg.eta + sstats0

    gamma = np.full((D, K), cfg.alpha_dir, dtype=np.float64)
    iterations = 0
    for it in range(cfg.max_iters):
        iterations = it + 1
        expElogbeta = np.exp(_dirichlet_expectation(lam))
        prev_gamma = gamma.copy()
        gamma, sstats = _e_step(
            docs, rng.gamma(100.0, 1.0 / 100.0, (D, K)), expElogbeta,
            cfg.alpha_dir,
        )
        lam = cfg.eta + sstats
        if np.abs(gamma - prev_gamma).mean() < GAMMA_CONVERGENCE:
            break

    state = VbState(lam=lam, gamma=gamma, iterations=iterations)
    model = TopicModel(
        phi=lam / lam.sum(axis=1, keepdims=True),
        vocab_hash=corpus_slice.vocab_hash,
    )
    return state, model


# --------------------------------------------------------------------------
# Held-out evaluation
# --------------------------------------------------------------------------

def fold_in(model: TopicModel, tokens: np.ndarray, cfg: LdaConfig,
            seed: int | None = None) -> np.ndarray:
    """Estimate a document-topic mixture with topics held fixed.

    Runs a fixed number of Gibbs sweeps over the supplied tokens.  An empty
    token sequence yields the uniform mixture.
    """
    K = model.K
    tokens = np.asarray(tokens, dtype=np.int32)
    if len(tokens) == 0:
        return np.full(K, 1.0 / K)
    if int(tokens.max()) >= model.V:
        raise LdaError("token index out of vocabulary range")
    n_k = _fold_in_counts(
        tokens, model.phi, K, float(cfg.alpha_dir), FOLD_IN_SWEEPS,
        int(cfg.seed if seed is None else seed),
    )
    theta = (n_k + cfg.alpha_dir) / (len(tokens) + K * cfg.alpha_dir)
    return theta


def _split_doc(tokens: np.ndarray):
    half = len(tokens) // 2
    return tokens[:half], tokens[half:]


def lpp(model: TopicModel, heldout: CorpusSlice, cfg: LdaConfig) -> LppResult:
    """Mean log predictive probability of held-out second-half tokens.

    Zero-support words are floored at PROB_FLOOR and counted in the result.
    """
    if len(heldout) == 0:
        raise LdaError("held-out slice is empty")
    total = 0.0
    n_tokens = 0
    n_floored = 0
    n_skipped = 0
    docs = list(heldout.documents())
    for pos, doc in enumerate(docs):
        fit, score = _split_doc(doc.tokens)
        if len(score) == 0:
            n_skipped += 1
            continue
        theta = fold_in(model, fit, cfg, seed=cfg.seed * 1000003 + pos)
        probs = theta @ model.phi[:, score]
        floored = probs < PROB_FLOOR
        n_floored += int(floored.sum())
        probs = np.maximum(probs, PROB_FLOOR)
        total += float(np.log(probs).sum())
        n_tokens += len(score)
    if n_tokens == 0:
        raise LdaError("no scoreable held-out tokens")
    return LppResult(
        value=total / n_tokens,
        n_tokens=n_tokens,
        n_floored=n_floored,
        n_skipped_docs=n_skipped,
    )
