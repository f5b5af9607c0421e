"""Document ingestion, vocabulary construction and attribute-range selection.

Datasets are immutable once ingested: the vocabulary is frozen (merging
models requires a shared index space), documents carry attribute values used
by query predicates, and all counting is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .regions import Interval, Region, RegionError, validate_predicate

logger = logging.getLogger(__name__)

# Classic English stopword list (Snowball-derived subset).
ENGLISH_STOPWORDS = frozenset(
    """a about above after again against all am an and any are as at be because
    been before being below between both but by can did do does doing down
    during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more
    most my myself no nor not now of off on once only or other our ours
    ourselves out over own s same she should so some such t than that the
    their theirs them themselves then there these they this those through to
    too under until up very was we were what when where which while who whom
    why will with you your yours yourself yourselves""".split()
)

ORDERED_KINDS = ("int", "float")
ATTRIBUTE_KINDS = ORDERED_KINDS + ("category",)

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class TokenizerConfig:
    """Tokenization knobs; stopwords=None selects the built-in English list."""

    min_df: int = 1
    stopwords: tuple | None = None
    ascii_fold: bool = True
    lowercase: bool = True

    def stopword_set(self) -> frozenset:
        if self.stopwords is None:
            return ENGLISH_STOPWORDS
        return frozenset(self.stopwords)

    def to_json(self) -> dict:
        return {
            "min_df": self.min_df,
            "stopwords": None if self.stopwords is None else sorted(self.stopwords),
            "ascii_fold": self.ascii_fold,
            "lowercase": self.lowercase,
        }

    @staticmethod
    def from_json(obj: Mapping) -> "TokenizerConfig":
        sw = obj.get("stopwords")
        return TokenizerConfig(
            min_df=int(obj.get("min_df", 1)),
            stopwords=None if sw is None else tuple(sw),
            ascii_fold=bool(obj.get("ascii_fold", True)),
            lowercase=bool(obj.get("lowercase", True)),
        )


def tokenize(text: str, cfg: TokenizerConfig) -> list:
    if cfg.ascii_fold:
        text = unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode()
    if cfg.lowercase:
        text = text.lower()
    stop = cfg.stopword_set()
    return [t for t in _TOKEN_SPLIT.split(text) if t and t not in stop]


@dataclass(frozen=True)
class Schema:
    """Declares the text column and attribute columns of a tabular source."""

    text_column: str
    attributes: tuple  # tuple of (name, kind)

    def __post_init__(self):
        for name, kind in self.attributes:
            if kind not in ATTRIBUTE_KINDS:
                raise CorpusError(f"unknown attribute kind {kind!r} for {name!r}")

    @staticmethod
    def of(text_column: str, attributes: Mapping[str, str]) -> "Schema":
        return Schema(text_column, tuple(sorted(attributes.items())))

    @property
    def attribute_names(self) -> tuple:
        return tuple(n for n, _ in self.attributes)

    def kind(self, name: str) -> str:
        for n, k in self.attributes:
            if n == name:
                return k
        raise CorpusError(f"unknown attribute {name!r}")

    def to_json(self) -> dict:
        return {"text_column": self.text_column, "attributes": dict(self.attributes)}

    @staticmethod
    def from_json(obj: Mapping) -> "Schema":
        return Schema.of(obj["text_column"], obj["attributes"])


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise CorpusError("vocabulary terms must be unique")

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def vocab_hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.terms).encode("utf-8"))
        return digest.hexdigest()

    def index(self) -> dict:
        return {t: i for i, t in enumerate(self.terms)}


@dataclass(frozen=True)
class Document:
    doc_id: int
    tokens: np.ndarray  # int32 vocabulary indices
    attributes: dict


@dataclass
class IngestReport:
    n_rows: int = 0
    n_docs: int = 0
    n_skipped: int = 0
    skip_reasons: dict = field(default_factory=dict)

    def skip(self, reason: str):
        self.n_skipped += 1
        self.skip_reasons[reason] = self.skip_reasons.get(reason, 0) + 1


@dataclass(frozen=True)
class CorpusSlice:
    """View over a subset of a dataset's documents, sharing its vocabulary."""

    dataset: "Dataset"
    doc_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.doc_indices)

    @property
    def vocab_size(self) -> int:
        return self.dataset.vocabulary.size

    @property
    def vocab_hash(self) -> str:
        return self.dataset.vocab_hash

    def token_arrays(self):
        """Concatenated tokens plus per-document start offsets (numba-friendly)."""
        tokens = self.dataset._tokens
        offsets = self.dataset._offsets
        parts = [tokens[offsets[i]:offsets[i + 1]] for i in self.doc_indices]
        lengths = np.array([len(p) for p in parts], dtype=np.int64)
        starts = np.zeros(len(parts) + 1, dtype=np.int64)
        np.cumsum(lengths, out=starts[1:])
        flat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int32)
        return flat.astype(np.int32, copy=False), starts

    def documents(self) -> Iterator[Document]:
        for i in self.doc_indices:
            yield self.dataset.document(int(i))

    @property
    def word_count(self) -> int:
        tokens, _ = self.token_arrays()
        return int(len(tokens))


class Dataset:
    """Immutable ingested corpus: tokens, vocabulary and attribute columns."""

    def __init__(
        self,
        name: str,
        schema: Schema,
        vocabulary: Vocabulary,
        tokens: np.ndarray,
        offsets: np.ndarray,
        doc_ids: np.ndarray,
        attr_columns: dict,
        tokenizer_cfg: TokenizerConfig,
        category_codes: dict | None = None,
    ):
        self.name = name
        self.schema = schema
        self.vocabulary = vocabulary
        self._tokens = tokens.astype(np.int32, copy=False)
        self._offsets = offsets.astype(np.int64, copy=False)
        self._doc_ids = doc_ids.astype(np.int64, copy=False)
        self._attrs = attr_columns
        self.tokenizer_cfg = tokenizer_cfg
        self._category_codes = category_codes or {}
        self._sorted_cache: dict = {}
        if len(set(doc_ids.tolist())) != len(doc_ids):
            raise CorpusError("doc_ids must be unique")
        if len(tokens) and int(tokens.max()) >= vocabulary.size:
            raise CorpusError("token index out of vocabulary range")

    @property
    def n_docs(self) -> int:
        return len(self._doc_ids)

    @property
    def vocab_hash(self) -> str:
        return self.vocabulary.vocab_hash

    @property
    def word_count(self) -> int:
        return int(len(self._tokens))

    def document(self, idx: int) -> Document:
        toks = self._tokens[self._offsets[idx]:self._offsets[idx + 1]]
        attrs = {name: col[idx] for name, col in self._attrs.items()}
        for name in self.schema.attribute_names:
            if self.schema.kind(name) == "category":
                attrs[name] = self._category_codes[name][int(attrs[name])]
        return Document(int(self._doc_ids[idx]), toks, attrs)

    # -- predicate evaluation ------------------------------------------------

    def _clause_mask(self, attr: str, constraint) -> np.ndarray:
        kind = self.schema.kind(attr)
        col = self._attrs[attr]
        if isinstance(constraint, Interval):
            if kind == "category":
                raise RegionError(f"interval constraint on categorical {attr!r}")
            return (col >= constraint.lo) & (col < constraint.hi)
        if kind != "category":
            raise RegionError(f"category constraint on ordered {attr!r}")
        codes = self._category_codes[attr]
        wanted = {i for i, v in enumerate(codes) if v in constraint.values}
        return np.isin(col, np.array(sorted(wanted), dtype=col.dtype))

    def mask(self, region: Region) -> np.ndarray:
        validate_predicate(region, self.schema.attribute_names)
        out = np.ones(self.n_docs, dtype=bool)
        for attr, constraint in region.clauses:
            out &= self._clause_mask(attr, constraint)
        return out

    def count_docs(self, region: Region) -> int:
        return int(self.mask(region).sum())

    def select(self, region: Region) -> CorpusSlice:
        idx = np.nonzero(self.mask(region))[0]
        return CorpusSlice(self, idx)

    def slice_all(self) -> CorpusSlice:
        return CorpusSlice(self, np.arange(self.n_docs))

    def attribute_range(self, attr: str) -> tuple:
        """(min, max + 1) over an ordered attribute; the full-range interval."""
        if self.schema.kind(attr) == "category":
            raise CorpusError(f"{attr!r} is categorical")
        col = self._attrs[attr]
        return float(col.min()), float(col.max()) + 1.0

    def attribute_values(self, attr: str) -> np.ndarray:
        return self._attrs[attr]

    def category_values(self, attr: str) -> tuple:
        return tuple(self._category_codes[attr])

    # -- persistence ----------------------------------------------------------

    def save(self, directory: Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "name": self.name,
            "n_docs": self.n_docs,
            "vocab_size": self.vocabulary.size,
            "vocab_hash": self.vocab_hash,
            "word_count": self.word_count,
            "schema": self.schema.to_json(),
            "tokenizer": self.tokenizer_cfg.to_json(),
            "category_codes": {k: list(v) for k, v in self._category_codes.items()},
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        (directory / "vocab.txt").write_text(
            "\n".join(self.vocabulary.terms) + ("\n" if self.vocabulary.terms else "")
        )
        np.savez_compressed(
            directory / "tokens.npz",
            tokens=self._tokens,
            offsets=self._offsets,
            doc_ids=self._doc_ids,
        )
        np.savez_compressed(
            directory / "attrs.npz",
            **{name: col for name, col in self._attrs.items()},
        )

    @staticmethod
    def load(directory: Path) -> "Dataset":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        terms = tuple((directory / "vocab.txt").read_text().splitlines())
        tok = np.load(directory / "tokens.npz")
        attrs_npz = np.load(directory / "attrs.npz")
        schema = Schema.from_json(manifest["schema"])
        ds = Dataset(
            name=manifest["name"],
            schema=schema,
            vocabulary=Vocabulary(terms),
            tokens=tok["tokens"],
            offsets=tok["offsets"],
            doc_ids=tok["doc_ids"],
            attr_columns={k: attrs_npz[k] for k in attrs_npz.files},
            tokenizer_cfg=TokenizerConfig.from_json(manifest["tokenizer"]),
            category_codes={
                k: tuple(v) for k, v in manifest["category_codes"].items()
            },
        )
        if ds.vocab_hash != manifest["vocab_hash"]:
            raise CorpusError("vocabulary hash mismatch on load")
        return ds


def _parse_attr(value: str, kind: str):
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return str(value)


def _iter_rows(source: io.TextIOBase, fmt: str) -> Iterator[dict]:
    if fmt == "csv":
        yield from csv.DictReader(source)
    elif fmt == "jsonl":
        for line in source:
            line = line.strip()
            if line:
                yield json.loads(line)
    else:
        raise CorpusError(f"unknown source format {fmt!r}")


def ingest(
    source: io.TextIOBase | str | Path,
    schema: Schema,
    tokenizer_cfg: TokenizerConfig = TokenizerConfig(),
    name: str = "dataset",
    fmt: str = "csv",
) -> tuple:
    """Build an immutable Dataset from a delimited text stream.

    Returns (Dataset, IngestReport).  Malformed rows are skipped and counted;
    an empty vocabulary after min_df filtering is a hard error.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if fmt == "csv" and path.suffix in (".jsonl", ".ndjson"):
            fmt = "jsonl"
        with path.open("r", encoding="utf-8", newline="") as fh:
            return ingest(fh, schema, tokenizer_cfg, name=name, fmt=fmt)

    report = IngestReport()
    raw_tokens: list = []
    raw_attrs: list = []
    for row in _iter_rows(source, fmt):
        report.n_rows += 1
        try:
            text = row[schema.text_column]
            if text is None:
                raise KeyError(schema.text_column)
            attrs = {
                n: _parse_attr(row[n], k)
                for n, k in schema.attributes
            }
        except (KeyError, TypeError, ValueError) as exc:
            report.skip(type(exc).__name__)
            continue
        raw_tokens.append(tokenize(text, tokenizer_cfg))
        raw_attrs.append(attrs)
        report.n_docs += 1

    if report.n_skipped:
        logger.warning(
            "ingest skipped %d/%d rows: %s",
            report.n_skipped, report.n_rows, report.skip_reasons,
        )

    # Document frequencies decide the vocabulary; order is lexicographic so
    # the index assignment is reproducible regardless of input order.
    df: dict = {}
    for toks in raw_tokens:
        for t in set(toks):
            df[t] = df.get(t, 0) + 1
    terms = tuple(sorted(t for t, c in df.items() if c >= tokenizer_cfg.min_df))
    if not terms:
        raise CorpusError("empty vocabulary after tokenization and min_df filtering")
    vocab = Vocabulary(terms)
    index = vocab.index()

    flat: list = []
    offsets = np.zeros(len(raw_tokens) + 1, dtype=np.int64)
    for i, toks in enumerate(raw_tokens):
        ids = [index[t] for t in toks if t in index]
        flat.extend(ids)
        offsets[i + 1] = len(flat)

    attr_columns: dict = {}
    category_codes: dict = {}
    for attr_name, kind in schema.attributes:
        values = [a[attr_name] for a in raw_attrs]
        if kind == "category":
            codes = tuple(sorted(set(values)))
            lookup = {v: i for i, v in enumerate(codes)}
            attr_columns[attr_name] = np.array([lookup[v] for v in values], dtype=np.int64)
            category_codes[attr_name] = codes
        elif kind == "int":
            attr_columns[attr_name] = np.array(values, dtype=np.int64)
        else:
            attr_columns[attr_name] = np.array(values, dtype=np.float64)

    dataset = Dataset(
        name=name,
        schema=schema,
        vocabulary=vocab,
        tokens=np.array(flat, dtype=np.int32),
        offsets=offsets,
        doc_ids=np.arange(len(raw_tokens), dtype=np.int64),
        attr_columns=attr_columns,
        tokenizer_cfg=tokenizer_cfg,
        category_codes=category_codes,
    )
    return dataset, report


def dataset_from_tokens(
    name: str,
    token_lists: Sequence[Sequence[int]],
    vocab_terms: Sequence[str],
    attributes: Mapping[str, np.ndarray] | None = None,
    kinds: Mapping[str, str] | None = None,
) -> Dataset:
    """Assemble a Dataset directly from pre-tokenized integer sequences.

    Used by synthetic generators and tests; attribute 'id' defaults to the
    document position.
    """
    attributes = dict(attributes or {})
    kinds = dict(kinds or {})
    if "id" not in attributes:
        attributes["id"] = np.arange(len(token_lists), dtype=np.int64)
        kinds.setdefault("id", "int")
    schema = Schema.of("text", {k: kinds.get(k, "int") for k in attributes})
    flat: list = []
    offsets = np.zeros(len(token_lists) + 1, dtype=np.int64)
    for i, toks in enumerate(token_lists):
        flat.extend(int(t) for t in toks)
        offsets[i + 1] = len(flat)
    category_codes = {}
    attr_columns = {}
    for attr, col in attributes.items():
        kind = kinds.get(attr, "int")
        if kind == "category":
            values = list(col)
            codes = tuple(sorted(set(values)))
            lookup = {v: i for i, v in enumerate(codes)}
            attr_columns[attr] = np.array([lookup[v] for v in values], dtype=np.int64)
            category_codes[attr] = codes
        else:
            dtype = np.int64 if kind == "int" else np.float64
            attr_columns[attr] = np.asarray(col, dtype=dtype)
    return Dataset(
        name=name,
        schema=schema,
        vocabulary=Vocabulary(tuple(vocab_terms)),
        tokens=np.array(flat, dtype=np.int32),
        offsets=offsets,
        doc_ids=np.arange(len(token_lists), dtype=np.int64),
        attr_columns=attr_columns,
        tokenizer_cfg=TokenizerConfig(),
        category_codes=category_codes,
    )
