"""Vocabulary, sparse count matrix and imphash indicator columns.

Matrices are ``scipy.sparse.csr_matrix`` in canonical form (sorted column
indices, no explicit zeros). On disk a matrix directory holds::

    vocab.json    {"tokens": [{"text": ..., "kind": ...}, ...], ...}
    rows.jsonl    one ``[sample_id, [[col, val], ...]]`` array per line
    labels.json   {"sample_id": [...], "class": [...], "family": [...], "imphash": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, EmptyCorpus, EmptyMatrix, EmuTriageError, LengthMismatch
from .pe_static import imphash_file
from .unify import IMPHASH_PREFIX, FeatureToken, featurize_report


class FeatureVocabulary:
    """Ordered token list with its inverse index; order is first-seen order."""

    def __init__(self, tokens=()):
        self.tokens: list[FeatureToken] = []
        self.index: dict[FeatureToken, int] = {}
        for t in tokens:
            self.add(t)

    def add(self, token: FeatureToken) -> int:
        col = self.index.get(token)
        if col is None:
            col = self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return col

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, FeatureVocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"FeatureVocabulary({len(self)} tokens)"

    def subset(self, columns) -> "FeatureVocabulary":
        return FeatureVocabulary(self.tokens[c] for c in columns)

    def to_json(self) -> list[dict]:
        return [{"text": t.text, "kind": t.kind} for t in self.tokens]

    @classmethod
    def from_json(cls, items) -> "FeatureVocabulary":
        return cls(FeatureToken(d["text"], d["kind"]) for d in items)


@dataclass
class LabelVector:
    ids: np.ndarray
    classes: list[str]

    def __len__(self):
        return len(self.ids)

    def names(self) -> list[str]:
        return [self.classes[i] for i in self.ids]


def encode_labels(names, classes=None) -> LabelVector:
    """Map names to dense ids; the class table defaults to sorted unique names."""
    names = list(names)
    classes = sorted(set(names)) if classes is None else list(classes)
    lookup = {c: i for i, c in enumerate(classes)}
    return LabelVector(np.array([lookup[n] for n in names], dtype=np.int64), classes)


def build_vocabulary(token_maps) -> FeatureVocabulary:
    token_maps = list(token_maps)
    if not token_maps:
        raise EmptyCorpus("cannot build a vocabulary from zero reports")
    vocab = FeatureVocabulary()
    for tm in token_maps:
        for tok in tm:
            vocab.add(tok)
    return vocab


def _as_csr(indices, values, n_cols) -> sp.csr_matrix:
    order = np.argsort(indices, kind="stable")
    idx = np.asarray(indices, dtype=np.int64)[order]
    val = np.asarray(values, dtype=np.float64)[order]
    keep = val != 0
    idx, val = idx[keep], val[keep]
    return sp.csr_matrix((val, idx, np.array([0, len(idx)])), shape=(1, n_cols))


def vectorize(token_map, vocab: FeatureVocabulary) -> tuple[sp.csr_matrix, int]:
    """One sparse row plus the number of tokens absent from ``vocab``."""
    cols, vals = [], []
    skipped = 0
    for tok, n in token_map.items():
        col = vocab.index.get(tok)
        if col is None:
            skipped += 1
            continue
        cols.append(col)
        vals.append(n)
    return _as_csr(cols, vals, len(vocab)), skipped


def vectorize_many(token_maps, vocab: FeatureVocabulary) -> tuple[sp.csr_matrix, int]:
    rows = []
    skipped = 0
    for tm in token_maps:
        row, s = vectorize(tm, vocab)
        rows.append(row)
        skipped += s
    if not rows:
        return sp.csr_matrix((0, len(vocab)), dtype=np.float64), 0
    return canonical(sp.vstack(rows, format="csr")), skipped


def canonical(matrix) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
    m.eliminate_zeros()
    m.sort_indices()
    return m


def append_imphash_column(matrix, vocab: FeatureVocabulary, per_row_imphash):
    """Append one 0/1 indicator column per distinct digest.

    Rows whose digest is ``None`` (no parsable PE) get no indicator.
    Returns ``(matrix', vocab')``; the inputs are left untouched.
    """
    per_row_imphash = list(per_row_imphash)
    n_rows = matrix.shape[0]
    if len(per_row_imphash) != n_rows:
        raise LengthMismatch(f"{len(per_row_imphash)} digests for {n_rows} rows")
    new_vocab = FeatureVocabulary(vocab.tokens)
    rows, cols = [], []
    for r, digest in enumerate(per_row_imphash):
        if digest is None:
            continue
        rows.append(r)
        cols.append(new_vocab.add(FeatureToken(IMPHASH_PREFIX + digest, "imphash")) - len(vocab))
    n_new = len(new_vocab) - len(vocab)
    block = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_rows, n_new))
    return canonical(sp.hstack([sp.csr_matrix(matrix), block], format="csr")), new_vocab


def sparsity(matrix) -> float:
    n_rows, n_cols = matrix.shape
    if n_rows * n_cols == 0:
        raise EmptyMatrix("sparsity of an empty matrix is undefined")
    nnz = np.count_nonzero(matrix.data) if sp.issparse(matrix) else np.count_nonzero(matrix)
    return 1.0 - nnz / (n_rows * n_cols)


@dataclass
class Dataset:
    """A featurized corpus: matrix, vocabulary and per-row metadata."""

    matrix: sp.csr_matrix
    vocab: FeatureVocabulary
    sample_ids: list[str]
    classes: list[str]
    families: list[str]
    imphashes: list[str | None] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.matrix.shape[0]
        if not self.imphashes:
            self.imphashes = [None] * n
        for name in ("sample_ids", "classes", "families", "imphashes"):
            if len(getattr(self, name)) != n:
                raise LengthMismatch(f"{name} has {len(getattr(self, name))} entries for {n} rows")
        if self.matrix.shape[1] != len(self.vocab):
            raise LengthMismatch(f"{self.matrix.shape[1]} columns for {len(self.vocab)} tokens")

    def take(self, rows) -> "Dataset":
        rows = list(rows)
        return Dataset(self.matrix[rows], self.vocab, [self.sample_ids[r] for r in rows],
                       [self.classes[r] for r in rows], [self.families[r] for r in rows],
                       [self.imphashes[r] for r in rows], dict(self.meta))

    def with_imphash_columns(self) -> "Dataset":
        m, v = append_imphash_column(self.matrix, self.vocab, self.imphashes)
        return Dataset(m, v, self.sample_ids, self.classes, self.families, self.imphashes, dict(self.meta))


def featurize_corpus(corpus, aliases=None, vocab: FeatureVocabulary | None = None):
    """Featurize loaded corpus entries; returns ``(Dataset, skipped_token_count)``.

    With ``vocab=None`` the vocabulary is built from the corpus itself.
    """
    entries = list(corpus)
    token_maps = [featurize_report(e.report, aliases) for e in entries]
    if vocab is None:
        vocab = build_vocabulary(token_maps)
    matrix, skipped = vectorize_many(token_maps, vocab)
    digests = []
    for e in entries:
        digest = None
        if e.binary_path is not None:
            try:
                digest = imphash_file(e.binary_path)
            except (OSError, EmuTriageError):
                pass  # unreadable or malformed binaries carry no digest
        digests.append(digest)
    ds = Dataset(matrix, vocab, [e.sample_id for e in entries], [e.label for e in entries],
                 [e.family for e in entries], digests)
    return ds, skipped


def save_dataset(ds: Dataset, out_dir, provenance: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab_doc = {"tokens": ds.vocab.to_json(), "n_rows": ds.matrix.shape[0], **(ds.meta or {})}
    if provenance:
        vocab_doc["provenance"] = provenance
    (out / "vocab.json").write_text(json.dumps(vocab_doc, indent=1) + "\n")
    m = canonical(ds.matrix)
    with open(out / "rows.jsonl", "w") as fh:
        for r, sid in enumerate(ds.sample_ids):
            lo, hi = m.indptr[r], m.indptr[r + 1]
            pairs = [[int(c), _num(v)] for c, v in zip(m.indices[lo:hi], m.data[lo:hi])]
            fh.write(json.dumps([sid, pairs]) + "\n")
    labels = {"sample_id": ds.sample_ids, "class": ds.classes, "family": ds.families,
              "imphash": ds.imphashes}
    (out / "labels.json").write_text(json.dumps(labels, indent=1) + "\n")


def _num(v):
    return int(v) if float(v).is_integer() else float(v)


def load_dataset(in_dir) -> Dataset:
    d = Path(in_dir)
    missing = [n for n in ("vocab.json", "rows.jsonl") if not (d / n).is_file()]
    if missing:
        raise ConfigError(f"not a dataset directory: {d} (missing {', '.join(missing)})")
    vocab_doc = json.loads((d / "vocab.json").read_text())
    vocab = FeatureVocabulary.from_json(vocab_doc["tokens"])
    ids, indptr, indices, data = [], [0], [], []
    with open(d / "rows.jsonl") as fh:
        for line in fh:
            if not line.strip():
                continue
            sid, pairs = json.loads(line)
            ids.append(sid)
            for c, v in pairs:
                indices.append(c)
                data.append(v)
            indptr.append(len(indices))
    matrix = sp.csr_matrix((np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64),
                            np.asarray(indptr)), shape=(len(ids), len(vocab)))
    labels = json.loads((d / "labels.json").read_text())
    if labels["sample_id"] != ids:
        raise LengthMismatch("labels.json and rows.jsonl disagree on sample order")
    meta = {k: v for k, v in vocab_doc.items() if k not in ("tokens", "n_rows", "provenance")}
    return Dataset(matrix, vocab, ids, labels["class"], labels["family"],
                   labels.get("imphash") or [None] * len(ids), meta)
