"""Dataset container, CSV ingestion, and deterministic fold/validation splitting."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(Exception):
    """An input file or dataset violates the expected format."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Labeled feature matrix with contiguous 0-based class indices.

    Parameters
    ----------
    features : (n, m) float array
    labels : (n,) int array with values in {0..class_count-1}
    class_count : number of classes (>= 2); fixed even for subsets that
        happen to miss a class
    feature_names : m column names
    label_names : original label tokens when the source file used
        non-integer labels, in index order; None otherwise
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    feature_names: tuple[str, ...]
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = _readonly(np.asarray(self.features, dtype=np.float64))
        labs = _readonly(np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        if feats.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, m = feats.shape
        if n < 1 or m < 1:
            raise DataError("dataset needs at least one row and one feature")
        if labs.shape != (n,):
            raise DataError("labels must have one entry per row")
        if self.class_count < 2:
            raise DataError("need at least two classes")
        if labs.min() < 0 or labs.max() >= self.class_count:
            raise DataError("label outside {0..class_count-1}")
        if len(self.feature_names) != m:
            raise DataError("feature_names must have one entry per column")
        if not np.all(np.isfinite(feats)):
            raise DataError("non-finite feature value")

    @property
    def row_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, rows) -> "Dataset":
        """New Dataset restricted to ``rows``; class_count is preserved."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            class_count=self.class_count,
            feature_names=self.feature_names,
            label_names=self.label_names,
        )


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic fold assignment for cross-validation.

    ``stratified`` is False when some class had fewer members than
    ``fold_count`` and the split fell back to an unstratified shuffle.
    """

    fold_count: int
    assignments: np.ndarray
    seed: int
    stratified: bool

    def __post_init__(self):
        object.__setattr__(self, "assignments", _readonly(np.asarray(self.assignments, dtype=np.int64)))

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignments == fold)[0]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignments != fold)[0]


@dataclass(frozen=True)
class SplitPair:
    """Disjoint train/holdout partition of a source index list."""

    train: np.ndarray
    holdout: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "train", _readonly(np.asarray(self.train, dtype=np.int64)))
        object.__setattr__(self, "holdout", _readonly(np.asarray(self.holdout, dtype=np.int64)))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

_SCHEMA_KEYS = {"label_column", "header", "categorical"}


def load_schema(path) -> dict:
    """Parse a flat key=value schema file (``#`` starts a comment)."""
    out = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"schema line {ln}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA_KEYS:
            raise DataError(f"schema line {ln}: unknown key {key!r}")
        out[key] = value
    return out


def _is_int_token(tok: str) -> bool:
    try:
        int(tok)
        return True
    except ValueError:
        return False


def _is_float_token(tok: str) -> bool:
    try:
        float(tok)
        return np.isfinite(float(tok))
    except ValueError:
        return False


def load_csv(path, schema=None) -> Dataset:
    """Load a comma-separated dataset.

    Format: UTF-8, optional header row, one column per feature, label in the
    last column unless the schema overrides it.  Integer labels must already
    be contiguous 0-based class indices; any other label tokens are remapped
    to indices in first-seen order and the mapping is kept in
    ``label_names``.  Categorical features must be pre-encoded as integers;
    columns listed under the schema key ``categorical`` are validated as
    such.

    Schema keys: ``label_column`` (name or 0-based index), ``header``
    (``auto``/``true``/``false``), ``categorical`` (comma list of column
    names or indices).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if schema is not None and not isinstance(schema, dict):
        schema = load_schema(schema)
    schema = schema or {}

    rows = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        if raw.strip():
            rows.append([cell.strip() for cell in raw.split(",")])
    if not rows:
        raise DataError(f"empty file: {path}")

    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"row {i + 1}: expected {width} columns, found {len(row)}")

    header_mode = schema.get("header", "auto").lower()
    if header_mode == "true":
        has_header = True
    elif header_mode == "false":
        has_header = False
    elif header_mode == "auto":
        # A header row is assumed when any cell of the first row is
        # non-numeric while the same cell parses on the second row.
        has_header = any(not _is_float_token(tok) and not tok == "" for tok in rows[0][:-1]) or (
            len(rows) > 1
            and not _is_float_token(rows[0][-1])
            and _is_float_token(rows[1][-1])
        )
    else:
        raise DataError(f"schema header must be auto/true/false, got {header_mode!r}")

    if has_header:
        names = rows[0]
        data_rows = rows[1:]
    else:
        names = [f"col{j}" for j in range(width)]
        data_rows = rows
    if not data_rows:
        raise DataError(f"empty file (header only): {path}")

    def column_index(key: str, what: str) -> int:
        if _is_int_token(key):
            j = int(key)
            if not 0 <= j < width:
                raise DataError(f"{what} index {j} out of range")
            return j
        if key in names:
            return names.index(key)
        raise DataError(f"unknown {what} column {key!r}")

    label_col = column_index(schema.get("label_column", str(width - 1)), "label")
    categorical = set()
    if schema.get("categorical"):
        for key in schema["categorical"].split(","):
            categorical.add(column_index(key.strip(), "categorical"))

    feature_cols = [j for j in range(width) if j != label_col]
    n = len(data_rows)
    features = np.empty((n, len(feature_cols)), dtype=np.float64)
    for i, row in enumerate(data_rows):
        for k, j in enumerate(feature_cols):
            tok = row[j]
            if not _is_float_token(tok):
                raise DataError(f"non-numeric value {tok!r} at row {i + 1}, column {names[j]!r}")
            if j in categorical and not _is_int_token(tok):
                raise DataError(
                    f"categorical column {names[j]!r} must hold integer codes, got {tok!r} at row {i + 1}"
                )
            features[i, k] = float(tok)

    label_tokens = [row[label_col] for row in data_rows]
    label_names = None
    if all(_is_int_token(tok) for tok in label_tokens):
        labels = np.array([int(tok) for tok in label_tokens], dtype=np.int64)
        present = set(labels.tolist())
        expected = set(range(int(labels.max()) + 1)) if labels.min() >= 0 else None
        if expected is None or present != expected:
            raise DataError(
                "non-contiguous labels: integer labels must cover 0..max "
                f"(found {sorted(present)})"
            )
        class_count = int(labels.max()) + 1
    else:
        seen: dict[str, int] = {}
        labels = np.empty(n, dtype=np.int64)
        for i, tok in enumerate(label_tokens):
            if tok not in seen:
                seen[tok] = len(seen)
            labels[i] = seen[tok]
        label_names = tuple(seen)
        class_count = len(seen)
    if class_count < 2:
        raise DataError("dataset has a single class")

    return Dataset(
        features=features,
        labels=labels,
        class_count=class_count,
        feature_names=tuple(names[j] for j in feature_cols),
        label_names=label_names,
    )


def write_csv(ds: Dataset, path) -> None:
    """Write a Dataset in the format `load_csv` reads back bit-identically."""
    path = Path(path)
    lines = [",".join((*ds.feature_names, "label"))]
    for i in range(ds.row_count):
        cells = [repr(float(v)) for v in ds.features[i]]
        y = int(ds.labels[i])
        cells.append(ds.label_names[y] if ds.label_names else str(y))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def make_folds(ds: Dataset, fold_count: int, seed: int) -> FoldPlan:
    """Assign every row to one of ``fold_count`` folds, stratified by class.

    Each fold's class counts stay within one item of n_c / fold_count.  When
    some class has fewer members than ``fold_count``, stratification is
    impossible and the plan falls back to a plain shuffled deal, flagged by
    ``stratified=False``.
    """
    if fold_count < 2:
        raise ValueError("fold_count must be at least 2")
    n = ds.row_count
    if n < fold_count:
        raise DataError(f"cannot make {fold_count} folds from {n} rows")
    rng = np.random.default_rng(seed)
    assignments = np.empty(n, dtype=np.int64)
    hist = ds.class_histogram()
    stratified = bool((hist >= fold_count).all() and (hist > 0).all())
    if stratified:
        pos = 0
        for cls in range(ds.class_count):
            idx = np.nonzero(ds.labels == cls)[0]
            idx = rng.permutation(idx)
            for i in idx:
                assignments[i] = pos % fold_count
                pos += 1
    else:
        order = rng.permutation(n)
        for pos, i in enumerate(order):
            assignments[i] = pos % fold_count
    return FoldPlan(fold_count=fold_count, assignments=assignments, seed=seed, stratified=stratified)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_holdout_count(indices, labels, holdout_size: int, seed: int) -> SplitPair:
    """Stratified draw of exactly ``holdout_size`` indices out of ``indices``.

    Per-class quotas follow largest-remainder apportionment of the class
    proportions; no class is drained entirely from the train side.
    """
    indices = np.asarray(indices, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    size = len(indices)
    if not 0 < holdout_size < size:
        raise DataError(f"degenerate split: {holdout_size} of {size} rows held out")
    sub = labels[indices]
    classes, counts = np.unique(sub, return_counts=True)
    ideal = holdout_size * counts / size
    quota = np.floor(ideal).astype(np.int64)
    # best effort: keep at least one row of every class on the train side,
    # relaxing that cap only when the target size is otherwise unreachable
    quota = np.minimum(quota, counts - 1)
    remainder = ideal - quota
    while quota.sum() < holdout_size:
        order = np.lexsort((classes, -remainder))
        bumped = False
        for capped in (True, False):
            for j in order:
                if quota[j] < (counts[j] - 1 if capped else counts[j]):
                    quota[j] += 1
                    remainder[j] -= 1.0
                    bumped = True
                    break
            if bumped:
                break

    rng = np.random.default_rng(seed)
    holdout_parts = []
    for cls, q in zip(classes, quota):
        members = indices[sub == cls]
        members = rng.permutation(members)
        holdout_parts.append(members[:q])
    holdout = np.sort(np.concatenate(holdout_parts))
    train = np.setdiff1d(indices, holdout)
    return SplitPair(train=train, holdout=holdout)


def split_validation(indices, labels, fraction: float, seed: int) -> SplitPair:
    """Hold out round(fraction * len) indices, stratified by label."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    indices = np.asarray(indices, dtype=np.int64)
    holdout_size = _round_half_up(fraction * len(indices))
    return split_holdout_count(indices, labels, holdout_size, seed)
