import numpy as np
import pytest

from mlego.corpus import CorpusSlice, dataset_from_tokens
from mlego.lda import LdaConfig
from mlego.synth import SynthConfig, synthetic_dataset


@pytest.fixture(scope="session")
def tiny_dataset():
    """Five short documents over a ten-word vocabulary."""
    tokens = [
        [0, 1, 2, 0],
        [3, 4, 3],
        [5, 6, 7, 5, 6],
        [8, 9],
        [0, 5, 9, 2],
    ]
    return dataset_from_tokens("tiny", tokens, [f"w{i}" for i in range(10)])


@pytest.fixture(scope="session")
def small_dataset():
    """Planted-topic corpus large enough for meaningful training."""
    return synthetic_dataset(SynthConfig(
        n_docs=400, vocab_size=300, n_topics=6, doc_len_mean=25, seed=11,
    ))


@pytest.fixture(scope="session")
def fast_cfg():
    return LdaConfig(K=4, max_iters=5, seed=3)


@pytest.fixture()
def full_slice(small_dataset):
    return CorpusSlice(small_dataset, np.arange(small_dataset.n_docs))
