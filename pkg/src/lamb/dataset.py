"""Binary dataset ingestion, validation, and degenerate-column filtering.

Three interchange formats are supported:

* transactions -- one transaction per line, item tokens split on commas
  and/or runs of whitespace; blank lines skipped.
* dense CSV   -- comma-separated 0/1 cells with optional header row and
  label column (auto-detected, overridable).
* triplets    -- lines ``row_label,col_label`` meaning X = 1.

Datasets are immutable once built; all downstream modules share them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataFormatError(ValueError):
    """Raised when an input file does not conform to its declared format."""


@dataclass(frozen=True)
class BinaryDataset:
    """Immutable n x d binary matrix stored as a sparse set of 1-cells."""

    n: int
    d: int
    cells: frozenset[tuple[int, int]]
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.row_labels) != self.n or len(self.col_labels) != self.d:
            raise ValueError("label count does not match matrix shape")
        for i, j in self.cells:
            if not (0 <= i < self.n and 0 <= j < self.d):
                raise ValueError(f"cell ({i},{j}) outside {self.n}x{self.d} matrix")

    @cached_property
    def dense(self) -> np.ndarray:
        """0/1 matrix as float64 (cached; do not mutate)."""
        x = np.zeros((self.n, self.d))
        if self.cells:
            idx = np.fromiter((i * self.d + j for i, j in self.cells), dtype=np.int64)
            x.flat[idx] = 1.0
        x.setflags(write=False)
        return x

    @cached_property
    def column_sums(self) -> np.ndarray:
        s = self.dense.sum(axis=0)
        s.setflags(write=False)
        return s

    def col_index(self, label: str) -> int:
        try:
            return self.col_labels.index(label)
        except ValueError:
            raise KeyError(f"unknown column label: {label!r}") from None


@dataclass(frozen=True)
class ColumnStats:
    """Column means of a filtered dataset; every entry lies in (0, 1)."""

    xbar: np.ndarray


def from_dense(
    x: np.ndarray,
    row_labels: Sequence[str] | None = None,
    col_labels: Sequence[str] | None = None,
) -> BinaryDataset:
    """Build a dataset from a dense 0/1 array, generating labels if absent."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, d = x.shape
    if not np.isin(x, (0, 1)).all():
        raise ValueError("matrix entries must be 0 or 1")
    rows = tuple(row_labels) if row_labels is not None else tuple(str(i + 1) for i in range(n))
    cols = tuple(col_labels) if col_labels is not None else tuple(f"v{j + 1}" for j in range(d))
    cells = frozenset((int(i), int(j)) for i, j in zip(*np.nonzero(x)))
    return BinaryDataset(n=n, d=d, cells=cells, row_labels=rows, col_labels=cols)


def load_transactions(path: str | Path, max_tokens_per_line: int = 1_000_000) -> BinaryDataset:
    """Load market-basket style data, one transaction per line.

    Tokens are split on commas and/or runs of whitespace; duplicate
    tokens within a line collapse to a single cell.  Columns are ordered
    lexicographically by token so repeated runs are deterministic.
    """
    lines = _read_text(path).splitlines()
    baskets: list[set[str]] = []
    for lineno, line in enumerate(lines, start=1):
        tokens = [t for t in line.replace(",", " ").split() if t]
        if not tokens:
            continue
        if len(tokens) > max_tokens_per_line:
            raise DataFormatError(
                f"line {lineno} has {len(tokens)} tokens "
                f"(limit {max_tokens_per_line})"
            )
        baskets.append(set(tokens))
    if not baskets:
        raise DataFormatError(f"no transactions found in {path}")
    col_labels = tuple(sorted(set().union(*baskets)))
    col_of = {label: j for j, label in enumerate(col_labels)}
    cells = frozenset((i, col_of[t]) for i, basket in enumerate(baskets) for t in basket)
    return BinaryDataset(
        n=len(baskets),
        d=len(col_labels),
        cells=cells,
        row_labels=tuple(str(i + 1) for i in range(len(baskets))),
        col_labels=col_labels,
    )


def load_dense_csv(
    path: str | Path,
    has_header: bool | None = None,
    has_row_labels: bool | None = None,
) -> BinaryDataset:
    """Load a dense 0/1 CSV.

    ``has_header``/``has_row_labels`` default to auto-detection: a first
    row (resp. first column) containing any non-numeric token is treated
    as labels.  Pass True/False to override.
    """
    rows = [row for row in csv.reader(io.StringIO(_read_text(path)))]
    rows = [row for row in rows if any(cell.strip() for cell in row)]
    if not rows:
        raise DataFormatError(f"no rows found in {path}")

    if has_header is None:
        has_header = not all(_is_numeric_token(c) for c in rows[0])
    header = [c.strip() for c in rows[0]] if has_header else None
    data_rows = rows[1:] if has_header else rows
    if not data_rows:
        raise DataFormatError(f"{path} contains a header but no data rows")

    if has_row_labels is None:
        if header is not None and header[0] == "":
            has_row_labels = True  # empty corner cell marks a label column
        else:
            has_row_labels = not all(_is_numeric_token(r[0]) for r in data_rows if r)

    width = len(data_rows[0])
    cells = set()
    row_labels: list[str] = []
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise DataFormatError(f"ragged row {i}: expected {width} cells, got {len(row)}")
        body = row[1:] if has_row_labels else row
        row_labels.append(row[0].strip() if has_row_labels else str(i + 1))
        for j, tok in enumerate(body):
            tok = tok.strip()
            if tok == "1":
                cells.add((i, j))
            elif tok != "0":
                raise DataFormatError(f"non-binary value {tok!r} at cell ({i},{j})")

    d = width - (1 if has_row_labels else 0)
    if header is not None:
        body_header = header[1:] if has_row_labels else header
        if len(body_header) != d:
            raise DataFormatError("header width does not match data rows")
        col_labels = tuple(body_header)
    else:
        col_labels = tuple(f"v{j + 1}" for j in range(d))
    return BinaryDataset(
        n=len(data_rows),
        d=d,
        cells=frozenset(cells),
        row_labels=tuple(row_labels),
        col_labels=col_labels,
    )


def load_triplets(path: str | Path) -> BinaryDataset:
    """Load sparse ``row_label,col_label`` lines (each meaning X = 1).

    Rows keep first-appearance order; columns are sorted lexicographically
    as in :func:`load_transactions`.
    """
    pairs: list[tuple[str, str]] = []
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not all(parts):
            raise DataFormatError(f"line {lineno}: expected 'row_label,col_label'")
        pairs.append((parts[0], parts[1]))
    if not pairs:
        raise DataFormatError(f"no triplets found in {path}")
    row_labels = tuple(dict.fromkeys(r for r, _ in pairs))
    col_labels = tuple(sorted({c for _, c in pairs}))
    row_of = {r: i for i, r in enumerate(row_labels)}
    col_of = {c: j for j, c in enumerate(col_labels)}
    cells = frozenset((row_of[r], col_of[c]) for r, c in pairs)
    return BinaryDataset(
        n=len(row_labels),
        d=len(col_labels),
        cells=cells,
        row_labels=row_labels,
        col_labels=col_labels,
    )


def write_dense_csv(ds: BinaryDataset, path: str | Path) -> None:
    """Write header + label column CSV; inverse of ``load_dense_csv`` with
    explicit ``has_header=True, has_row_labels=True``.  Labels containing
    commas or quotes are csv-quoted."""
    x = ds.dense
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([""] + list(ds.col_labels))
        for i, label in enumerate(ds.row_labels):
            writer.writerow([label] + [str(int(v)) for v in x[i]])


def write_transactions(ds: BinaryDataset, path: str | Path) -> None:
    """Write one space-joined transaction per line.

    The format cannot express empty rows (blank lines are skipped on
    load), so datasets containing an all-zero row are rejected.
    """
    for label in ds.col_labels:
        if not label or any(ch in label for ch in ", \t"):
            raise ValueError(f"token {label!r} not representable in transactions format")
    rows: list[list[str]] = [[] for _ in range(ds.n)]
    for i, j in sorted(ds.cells):
        rows[i].append(ds.col_labels[j])
    if any(not row for row in rows):
        raise ValueError("transactions format cannot represent all-zero rows")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(" ".join(sorted(row)) + "\n")


def write_triplets(ds: BinaryDataset, path: str | Path) -> None:
    _check_labels(ds.row_labels)
    _check_labels(ds.col_labels)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j in sorted(ds.cells):
            fh.write(f"{ds.row_labels[i]},{ds.col_labels[j]}\n")


def filter_degenerate(ds: BinaryDataset) -> tuple[BinaryDataset, list[str]]:
    """Drop columns that are all-zero or all-one; report removed labels.

    Column order is preserved.  Idempotent.  An empty result (d = 0) is
    permitted and flagged by downstream consumers.
    """
    sums = ds.column_sums
    keep = [j for j in range(ds.d) if 0 < sums[j] < ds.n]
    removed = [ds.col_labels[j] for j in range(ds.d) if j not in set(keep)]
    if len(keep) == ds.d:
        return ds, []
    remap = {j: jj for jj, j in enumerate(keep)}
    cells = frozenset((i, remap[j]) for i, j in ds.cells if j in remap)
    filtered = BinaryDataset(
        n=ds.n,
        d=len(keep),
        cells=cells,
        row_labels=ds.row_labels,
        col_labels=tuple(ds.col_labels[j] for j in keep),
    )
    return filtered, removed


def column_means(ds: BinaryDataset) -> ColumnStats:
    """Column means X̄_j, each strictly inside (0, 1).

    Raises if any degenerate column survives (call ``filter_degenerate``
    first).
    """
    sums = ds.column_sums
    bad = [ds.col_labels[j] for j in range(ds.d) if sums[j] in (0, ds.n)]
    if bad:
        raise ValueError(f"degenerate columns present (filter first): {bad}")
    xbar = sums / ds.n
    xbar.setflags(write=False)
    return ColumnStats(xbar=xbar)


def _read_text(path: str | Path) -> str:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if not text.strip():
        raise DataFormatError(f"{path} is empty")
    return text


def _is_numeric_token(tok: str) -> bool:
    try:
        float(tok.strip())
    except ValueError:
        return False
    return True


def _check_labels(labels: Iterable[str]) -> None:
    for label in labels:
        if "," in label or "\n" in label or "\r" in label:
            raise ValueError(f"label {label!r} contains a comma or newline")
