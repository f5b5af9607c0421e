import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlego.corpus import (
    CorpusError,
    Dataset,
    Schema,
    TokenizerConfig,
    dataset_from_tokens,
    ingest,
    tokenize,
)
from mlego.regions import CategorySet, Interval, Region, RegionError, region_difference
from mlego.synth import SynthConfig, synthetic_dataset

NO_STOPWORDS = TokenizerConfig(stopwords=())


def csv_source(rows, header="text,id"):
    return io.StringIO("\n".join([header] + rows))


SCHEMA = Schema.of("text", {"id": "int"})


class TestTokenizer:
    def test_lowercase_and_split(self):
        assert tokenize("Hello, World!", NO_STOPWORDS) == ["hello", "world"]

    def test_ascii_fold(self):
        assert tokenize("café crème", NO_STOPWORDS) == ["cafe", "creme"]

    def test_stopwords_applied_by_default(self):
        assert tokenize("the cat and the hat", TokenizerConfig()) == ["cat", "hat"]

    def test_deterministic(self):
        cfg = TokenizerConfig()
        text = "Some Text; with PUNCTUATION and accents: naïve"
        assert tokenize(text, cfg) == tokenize(text, cfg)


class TestIngest:
    def test_three_rows_min_df_1(self):
        ds, rep = ingest(csv_source(['"a b",0', '"b c",1', '"c",2']), SCHEMA,
                         NO_STOPWORDS)
        assert ds.vocabulary.size == 3
        assert ds.n_docs == 3
        assert rep.n_skipped == 0

    def test_min_df_2_filters_vocabulary(self):
        # document frequencies by hand: a:1, b:2, c:2
        cfg = TokenizerConfig(min_df=2, stopwords=())
        ds, _ = ingest(csv_source(['"a b",0', '"b c",1', '"c",2']), SCHEMA, cfg)
        assert ds.vocabulary.terms == ("b", "c")

    def test_malformed_rows_skipped_with_count(self):
        ds, rep = ingest(
            csv_source(['"a b",0', '"c d",notanint', '"e f",2']), SCHEMA,
            NO_STOPWORDS,
        )
        assert ds.n_docs == 2
        assert rep.n_skipped == 1
        assert rep.skip_reasons == {"ValueError": 1}

    def test_empty_vocabulary_is_hard_error(self):
        with pytest.raises(CorpusError):
            ingest(csv_source(['"the and of",0']), SCHEMA, TokenizerConfig())

    def test_tokenization_deterministic_across_runs(self):
        rows = ['"alpha beta Gamma!",0', '"beta gamma",1']
        ds1, _ = ingest(csv_source(rows), SCHEMA, NO_STOPWORDS)
        ds2, _ = ingest(csv_source(rows), SCHEMA, NO_STOPWORDS)
        assert ds1.vocab_hash == ds2.vocab_hash
        for i in range(ds1.n_docs):
            assert np.array_equal(ds1.document(i).tokens, ds2.document(i).tokens)

    def test_jsonl_source(self):
        src = io.StringIO('{"text": "a b", "id": 0}\n{"text": "b", "id": 1}\n')
        ds, _ = ingest(src, SCHEMA, NO_STOPWORDS, fmt="jsonl")
        assert ds.n_docs == 2

    def test_token_indices_in_range(self):
        ds, _ = ingest(csv_source(['"x y z",0', '"x",1']), SCHEMA, NO_STOPWORDS)
        for i in range(ds.n_docs):
            assert ds.document(i).tokens.max(initial=0) < ds.vocabulary.size


class TestCounting:
    def test_full_range_counts_everything(self, small_dataset):
        lo, hi = small_dataset.attribute_range("id")
        n = small_dataset.count_docs(Region.of({"id": Interval(lo, hi)}))
        assert n == small_dataset.n_docs

    def test_empty_region_counts_zero(self, small_dataset):
        assert small_dataset.count_docs(
            Region.of({"id": Interval(1e9, 2e9)})
        ) == 0

    def test_uniform_id_range(self):
        ds = dataset_from_tokens(
            "u", [[0]] * 1000, ["w0"],
        )
        n = ds.count_docs(Region.of({"id": Interval(100, 200)}))
        # linear-scan oracle
        ids = ds.attribute_values("id")
        assert n == int(((ids >= 100) & (ids < 200)).sum()) == 100

    def test_category_clause(self, small_dataset):
        cats = small_dataset.category_values("category")
        region = Region.of({"category": CategorySet(frozenset({cats[0]}))})
        col = small_dataset.attribute_values("category")
        assert small_dataset.count_docs(region) == int((col == 0).sum())

    def test_unknown_attribute_raises(self, small_dataset):
        with pytest.raises(RegionError):
            small_dataset.count_docs(Region.of({"nope": Interval(0, 1)}))

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_partition_property_with_counts(self, data):
        ds = synthetic_dataset(SynthConfig(n_docs=200, vocab_size=50,
                                           n_topics=3, seed=5))
        lo = data.draw(st.integers(0, 150))
        hi = data.draw(st.integers(lo + 10, 200))
        query = Region.of({"id": Interval(float(lo), float(hi))})
        covered = []
        for _ in range(data.draw(st.integers(0, 3))):
            a = data.draw(st.integers(lo, hi - 1))
            b = data.draw(st.integers(a + 1, hi))
            cand = Region.of({"id": Interval(float(a), float(b))})
            if all(not cand.overlaps(c) for c in covered):
                covered.append(cand)
        frags = region_difference(query, covered)
        total = sum(ds.count_docs(f) for f in frags)
        total += sum(ds.count_docs(c) for c in covered)
        assert total == ds.count_docs(query)


class TestPersistence:
    def test_save_load_round_trip(self, small_dataset, tmp_path):
        small_dataset.save(tmp_path / "ds")
        loaded = Dataset.load(tmp_path / "ds")
        assert loaded.vocab_hash == small_dataset.vocab_hash
        assert loaded.n_docs == small_dataset.n_docs
        assert np.array_equal(loaded._tokens, small_dataset._tokens)
        for attr in ("id", "time", "lon", "lat", "category"):
            assert np.array_equal(
                loaded.attribute_values(attr),
                small_dataset.attribute_values(attr),
            )

    def test_vocab_file_one_term_per_line(self, tiny_dataset, tmp_path):
        tiny_dataset.save(tmp_path / "t")
        lines = (tmp_path / "t" / "vocab.txt").read_text().splitlines()
        assert tuple(lines) == tiny_dataset.vocabulary.terms
