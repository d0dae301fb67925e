"""Sparse document-feature matrices: construction, preprocessing, and file I/O."""

from __future__ import annotations

import csv
import logging
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.io
import scipy.sparse as sp

log = logging.getLogger(__name__)

TRIPLET_HEADER = ("doc_id", "feature_id", "count")
FORMATS = ("triplet", "mtx")


class DfmError(ValueError):
    """Invalid document-feature matrix."""


class DegenerateCorpusError(DfmError):
    """Fewer than two documents or features survive a preprocessing stage."""

    def __init__(self, stage: str, n_docs: int, n_features: int):
        self.stage = stage
        self.n_docs = n_docs
        self.n_features = n_features
        super().__init__(
            f"degenerate corpus after stage '{stage}': "
            f"{n_docs} documents, {n_features} features (need at least 2 of each)"
        )


class CountParseError(DfmError):
    """A count file could not be parsed."""

    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True, eq=False)
class DocumentFeatureMatrix:
    """Nonnegative integer counts of feature j in document i.

    ``counts`` is stored as an ``I x J`` CSR matrix of int64 with no explicit
    zeros. Construction validates every invariant; use :meth:`from_arrays`
    with ``drop_empty=True`` to silently remove empty rows/columns first.
    """

    doc_ids: tuple[str, ...]
    feature_ids: tuple[str, ...]
    counts: sp.csr_matrix

    def __post_init__(self):
        object.__setattr__(self, "doc_ids", tuple(str(d) for d in self.doc_ids))
        object.__setattr__(self, "feature_ids", tuple(str(f) for f in self.feature_ids))
        counts = sp.csr_matrix(self.counts)
        counts.sum_duplicates()
        counts.eliminate_zeros()
        object.__setattr__(self, "counts", counts)
        self._validate()

    def _validate(self):
        n_docs, n_feat = len(self.doc_ids), len(self.feature_ids)
        if self.counts.shape != (n_docs, n_feat):
            raise DfmError(
                f"counts shape {self.counts.shape} does not match labels ({n_docs}, {n_feat})"
            )
        if n_docs < 2 or n_feat < 2:
            raise DfmError(f"need at least 2 documents and 2 features, got {n_docs}x{n_feat}")
        for name, ids in (("doc_id", self.doc_ids), ("feature_id", self.feature_ids)):
            if len(set(ids)) != len(ids):
                dup = next(x for x, c in Counter(ids).items() if c > 1)
                raise DfmError(f"duplicate {name}: {dup!r}")
        data = self.counts.data
        if data.size and (np.any(data < 0) or np.any(data != np.round(data))):
            raise DfmError("counts must be nonnegative integers")
        if self.counts.dtype != np.int64:
            object.__setattr__(self, "counts", self.counts.astype(np.int64))
        empty_rows = np.flatnonzero(self.counts.getnnz(axis=1) == 0)
        if empty_rows.size:
            raise DfmError(f"document {self.doc_ids[empty_rows[0]]!r} has no counts")
        empty_cols = np.flatnonzero(self.counts.getnnz(axis=0) == 0)
        if empty_cols.size:
            raise DfmError(f"feature {self.feature_ids[empty_cols[0]]!r} has no counts")

    @classmethod
    def from_arrays(cls, counts, doc_ids=None, feature_ids=None, drop_empty=False):
        """Build from a dense array or sparse matrix; optionally drop empty rows/columns."""
        mat = sp.csr_matrix(counts)
        n_docs, n_feat = mat.shape
        doc_ids = list(doc_ids) if doc_ids is not None else [f"d{i}" for i in range(n_docs)]
        feature_ids = (
            list(feature_ids) if feature_ids is not None else [f"f{j}" for j in range(n_feat)]
        )
        if drop_empty:
            mat.eliminate_zeros()
            rows = np.flatnonzero(mat.getnnz(axis=1) > 0)
            cols = np.flatnonzero(mat.getnnz(axis=0) > 0)
            mat = mat[rows][:, cols]
            doc_ids = [doc_ids[i] for i in rows]
            feature_ids = [feature_ids[j] for j in cols]
        return cls(tuple(doc_ids), tuple(feature_ids), mat)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_ids)

    def dense(self) -> np.ndarray:
        return self.counts.toarray()

    def as_dict(self) -> dict[str, dict[str, int]]:
        """Nested ``{doc_id: {feature_id: count}}`` of the nonzero cells."""
        coo = self.counts.tocoo()
        out: dict[str, dict[str, int]] = {d: {} for d in self.doc_ids}
        for i, j, v in zip(coo.row, coo.col, coo.data):
            out[self.doc_ids[i]][self.feature_ids[j]] = int(v)
        return out

    def equals(self, other: "DocumentFeatureMatrix") -> bool:
        """Equality modulo row and column order."""
        if set(self.doc_ids) != set(other.doc_ids):
            return False
        if set(self.feature_ids) != set(other.feature_ids):
            return False
        return self.as_dict() == other.as_dict()

    def select(self, doc_index=None, feature_index=None) -> "DocumentFeatureMatrix":
        rows = np.arange(self.n_docs) if doc_index is None else np.asarray(doc_index)
        cols = np.arange(self.n_features) if feature_index is None else np.asarray(feature_index)
        return DocumentFeatureMatrix(
            tuple(self.doc_ids[i] for i in rows),
            tuple(self.feature_ids[j] for j in cols),
            self.counts[rows][:, cols],
        )

    def trim(self, min_doc_count: int = 0, min_total_count: int = 0) -> "DocumentFeatureMatrix":
        """Drop features below the document-frequency or total-count thresholds."""
        mat, _ = _trim_sparse(self.counts, min_doc_count, min_total_count)
        keep_cols = np.flatnonzero(mat.getnnz(axis=0) > 0)
        keep_rows = np.flatnonzero(mat.getnnz(axis=1) > 0)
        return self.select(keep_rows, keep_cols)


def _trim_sparse(mat: sp.csr_matrix, min_doc_count: int, min_total_count: int):
    doc_freq = mat.getnnz(axis=0)
    totals = np.asarray(mat.sum(axis=0)).ravel()
    keep = (doc_freq >= min_doc_count) & (totals >= min_total_count)
    mask = sp.diags(keep.astype(np.int64))
    out = sp.csr_matrix(mat @ mask)
    out.eliminate_zeros()
    return out, keep


@dataclass(frozen=True)
class PreprocessSpec:
    lowercase: bool = True
    strip_punctuation: bool = True
    strip_numbers: bool = True
    stopword_list: frozenset[str] | None = None
    min_doc_count: int = 0
    min_total_count: int = 0

    def __post_init__(self):
        if self.min_doc_count < 0 or self.min_total_count < 0:
            raise ValueError("frequency thresholds must be nonnegative")
        if self.stopword_list is not None and not isinstance(self.stopword_list, frozenset):
            object.__setattr__(self, "stopword_list", frozenset(self.stopword_list))


@dataclass
class PreprocessReport:
    """What each preprocessing stage removed."""

    dropped_docs: dict[str, list[str]] = field(default_factory=dict)
    dropped_features: list[str] = field(default_factory=list)
    n_docs: int = 0
    n_features: int = 0

    def to_dict(self) -> dict:
        return {
            "dropped_docs": self.dropped_docs,
            "dropped_features": self.dropped_features,
            "n_docs": self.n_docs,
            "n_features": self.n_features,
        }


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


_NUMBER_TOKEN = re.compile(r"^\d+$")


def tokenize(text: str, spec: PreprocessSpec) -> list[str]:
    """Unigram tokens of one document after the character- and token-level stages."""
    if spec.lowercase:
        text = text.lower()
    if spec.strip_punctuation:
        text = "".join(" " if _is_punct(ch) else ch for ch in text)
    tokens = text.split()
    if spec.strip_numbers:
        tokens = [t for t in tokens if not _NUMBER_TOKEN.match(t)]
    if spec.stopword_list:
        tokens = [t for t in tokens if t not in spec.stopword_list]
    return tokens


def tokenize_corpus(
    documents: Iterable[tuple[str, str]],
    spec: PreprocessSpec | None = None,
    report: PreprocessReport | None = None,
) -> DocumentFeatureMatrix:
    """Count unigrams per document.

    Stages run in the order lowercase, punctuation, numbers, stopwords,
    frequency trimming. Documents left empty by any stage are dropped with a
    warning and recorded in ``report``. Raises :class:`DegenerateCorpusError`
    naming the stage after which fewer than two documents or features remain.
    """
    spec = spec or PreprocessSpec()
    report = report if report is not None else PreprocessReport()
    documents = list(documents)
    ids = [d for d, _ in documents]
    if len(set(ids)) != len(ids):
        dup = next(x for x, c in Counter(ids).items() if c > 1)
        raise DfmError(f"duplicate doc_id: {dup!r}")

    bags: dict[str, Counter] = {}
    empty = []
    for doc_id, text in documents:
        bag = Counter(tokenize(text, spec))
        if bag:
            bags[doc_id] = bag
        else:
            empty.append(doc_id)
    if empty:
        log.warning("dropping %d documents empty after tokenization: %s", len(empty), empty)
        report.dropped_docs["tokenize"] = empty
    vocab = sorted({t for bag in bags.values() for t in bag})
    if len(bags) < 2 or len(vocab) < 2:
        raise DegenerateCorpusError("tokenize", len(bags), len(vocab))

    doc_ids = list(bags)
    index = {t: j for j, t in enumerate(vocab)}
    rows, cols, vals = [], [], []
    for i, doc_id in enumerate(doc_ids):
        for tok, c in bags[doc_id].items():
            rows.append(i)
            cols.append(index[tok])
            vals.append(c)
    mat = sp.csr_matrix(
        (np.array(vals, dtype=np.int64), (rows, cols)), shape=(len(doc_ids), len(vocab))
    )

    trimmed, keep = _trim_sparse(mat, spec.min_doc_count, spec.min_total_count)
    report.dropped_features = [vocab[j] for j in np.flatnonzero(~keep)]
    row_ok = trimmed.getnnz(axis=1) > 0
    dropped = [doc_ids[i] for i in np.flatnonzero(~row_ok)]
    if dropped:
        log.warning("dropping %d documents empty after trimming: %s", len(dropped), dropped)
        report.dropped_docs["trim"] = dropped
    rows_kept = np.flatnonzero(row_ok)
    cols_kept = np.flatnonzero(keep)
    if rows_kept.size < 2 or cols_kept.size < 2:
        raise DegenerateCorpusError("trim", int(rows_kept.size), int(cols_kept.size))
    out = DocumentFeatureMatrix(
        tuple(doc_ids[i] for i in rows_kept),
        tuple(vocab[j] for j in cols_kept),
        trimmed[rows_kept][:, cols_kept],
    )
    report.n_docs, report.n_features = out.shape
    return out


def read_text_corpus(directory) -> list[tuple[str, str]]:
    """Read ``*.txt`` files from a directory; doc_id is the file stem."""
    directory = Path(directory)
    files = sorted(directory.glob("*.txt"))
    if not files:
        raise FileNotFoundError(f"no .txt files in {directory}")
    return [(f.stem, f.read_text(encoding="utf-8")) for f in files]


def read_stopwords(path) -> frozenset[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"stopword file not found: {path}")
    words = path.read_text(encoding="utf-8").split()
    return frozenset(words)


# -- file formats -----------------------------------------------------------


def sidecar_paths(path) -> tuple[Path, Path]:
    """Label files accompanying a MatrixMarket file: ``<stem>.docs.txt``, ``<stem>.features.txt``."""
    path = Path(path)
    stem = path.with_suffix("")
    return Path(f"{stem}.docs.txt"), Path(f"{stem}.features.txt")


def _parse_count(raw: str, path, line: int) -> int:
    raw = raw.strip()
    try:
        value = int(raw)
    except ValueError:
        raise CountParseError(path, line, f"count {raw!r} is not an integer") from None
    if value < 0:
        raise CountParseError(path, line, f"negative count {value}")
    return value


def _load_triplet(path: Path) -> DocumentFeatureMatrix:
    doc_index: dict[str, int] = {}
    feat_index: dict[str, int] = {}
    rows, cols, vals = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRIPLET_HEADER:
            raise CountParseError(path, 1, f"expected header {','.join(TRIPLET_HEADER)}")
        for record in reader:
            line = reader.line_num
            if not record or all(not x.strip() for x in record):
                continue
            if len(record) != 3:
                raise CountParseError(path, line, f"expected 3 fields, got {len(record)}")
            doc, feat, raw = record
            value = _parse_count(raw, path, line)
            if value == 0:
                continue
            rows.append(doc_index.setdefault(doc, len(doc_index)))
            cols.append(feat_index.setdefault(feat, len(feat_index)))
            vals.append(value)
    mat = sp.coo_matrix(
        (np.array(vals, dtype=np.int64), (rows, cols)), shape=(len(doc_index), len(feat_index))
    )
    return DocumentFeatureMatrix(tuple(doc_index), tuple(feat_index), mat.tocsr())


def _read_labels(path: Path) -> list[str]:
    if not path.is_file():
        raise FileNotFoundError(f"label sidecar not found: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def _load_mtx(path: Path) -> DocumentFeatureMatrix:
    docs_path, feats_path = sidecar_paths(path)
    doc_ids = _read_labels(docs_path)
    feature_ids = _read_labels(feats_path)
    try:
        mat = scipy.io.mmread(path)
    except ValueError as exc:
        raise CountParseError(path, None, str(exc)) from exc
    mat = sp.coo_matrix(mat)
    bad = np.flatnonzero((mat.data < 0) | (mat.data != np.round(mat.data)))
    if bad.size:
        # entries follow the header, comments and size line; report the entry index
        raise CountParseError(path, None, f"entry {bad[0] + 1} has invalid count {mat.data[bad[0]]}")
    return DocumentFeatureMatrix(tuple(doc_ids), tuple(feature_ids), mat.astype(np.int64).tocsr())


def load_counts(path, format: str = "triplet") -> DocumentFeatureMatrix:
    """Load a count matrix from a triplet CSV or MatrixMarket file (plus label sidecars)."""
    path = Path(path)
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not path.is_file():
        raise FileNotFoundError(f"count file not found: {path}")
    if format == "triplet":
        return _load_triplet(path)
    return _load_mtx(path)


def save_counts(matrix: DocumentFeatureMatrix, path, format: str = "triplet") -> None:
    """Write ``matrix``; ``load_counts`` on the result reproduces it."""
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    if not isinstance(matrix, DocumentFeatureMatrix):
        raise TypeError("save_counts expects a DocumentFeatureMatrix")
    matrix._validate()
    path = Path(path)
    try:
        if format == "triplet":
            coo = matrix.counts.tocoo()
            # documents in matrix order, features by label: re-saving a loaded file is byte-identical
            labels = np.asarray(matrix.feature_ids, dtype=object)[coo.col]
            order = sorted(range(coo.nnz), key=lambda n: (coo.row[n], labels[n]))
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(TRIPLET_HEADER)
                for n in order:
                    writer.writerow(
                        (matrix.doc_ids[coo.row[n]], matrix.feature_ids[coo.col[n]], int(coo.data[n]))
                    )
        else:
            for label in (*matrix.doc_ids, *matrix.feature_ids):
                if "\n" in label or "\r" in label:
                    raise DfmError(f"label {label!r} contains a newline; not representable in sidecars")
            with path.open("wb") as fh:
                scipy.io.mmwrite(fh, matrix.counts.tocoo(), field="integer")
            docs_path, feats_path = sidecar_paths(path)
            docs_path.write_text("\n".join(matrix.doc_ids) + "\n", encoding="utf-8")
            feats_path.write_text("\n".join(matrix.feature_ids) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"could not write counts to {path}: {exc}") from exc

