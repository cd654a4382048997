"""CSV ingestion, feature/label encoding and the multi-class label vectors."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from rulegen.errors import DataParseError, DegenerateDataError, SchemaError


@dataclass(frozen=True)
class Schema:
    target_column: str
    categorical_columns: tuple[str, ...] = ()
    group_column: Optional[str] = None
    positive_class: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "categorical_columns", tuple(self.categorical_columns))
        if self.group_column is not None and self.group_column == self.target_column:
            raise SchemaError("group column must differ from the target column")

    @classmethod
    def from_json(cls, path: str | Path) -> "Schema":
        """Read a schema config with keys ``target``, ``categorical``, ``group``, ``positive_class``."""
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if "target" not in raw:
            raise SchemaError(f"{path}: schema config needs a 'target' key")
        return cls(
            target_column=raw["target"],
            categorical_columns=tuple(raw.get("categorical", ())),
            group_column=raw.get("group"),
            positive_class=raw.get("positive_class"),
        )

    def to_dict(self) -> dict:
        return {
            "target": self.target_column,
            "categorical": list(self.categorical_columns),
            "group": self.group_column,
            "positive_class": self.positive_class,
        }


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    source: str
    kind: str  # "numeric" or "onehot"
    category: Optional[str] = None

    def to_dict(self) -> dict:
        return {"name": self.name, "source": self.source, "kind": self.kind, "category": self.category}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMeta":
        return cls(d["name"], d["source"], d["kind"], d.get("category"))


@dataclass(frozen=True)
class Dataset:
    """Encoded samples. ``labels`` may be None for unlabeled prediction input."""

    features: np.ndarray
    labels: Optional[np.ndarray]
    class_count: int
    groups: Optional[np.ndarray] = None
    feature_meta: tuple[FeatureMeta, ...] = ()
    class_order: tuple[str, ...] = ()
    group_order: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DataParseError("feature matrix must be two-dimensional")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        if self.class_count < 2:
            raise DegenerateDataError("at least two classes are required")
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise DataParseError("label vector does not match the number of rows")
            if y.size and (y.min() < 0 or y.max() >= self.class_count):
                raise DataParseError("labels must lie in [0, K)")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)
        if self.groups is not None:
            g = np.asarray(self.groups, dtype=np.int64)
            if g.shape != (X.shape[0],):
                raise DataParseError("group vector does not match the number of rows")
            g.setflags(write=False)
            object.__setattr__(self, "groups", g)
        if not self.feature_meta:
            meta = tuple(FeatureMeta(f"x{j}", f"x{j}", "numeric") for j in range(X.shape[1]))
            object.__setattr__(self, "feature_meta", meta)
        if not self.class_order:
            object.__setattr__(self, "class_order", tuple(str(k) for k in range(self.class_count)))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def group_count(self) -> int:
        if self.groups is None:
            return 0
        return max(len(self.group_order), int(self.groups.max()) + 1 if self.groups.size else 0)

    @property
    def feature_names(self) -> list[str]:
        return [m.name for m in self.feature_meta]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            features=self.features[index],
            labels=None if self.labels is None else self.labels[index],
            class_count=self.class_count,
            groups=None if self.groups is None else self.groups[index],
            feature_meta=self.feature_meta,
            class_order=self.class_order,
            group_order=self.group_order,
        )

    def decode_labels(self, encoded) -> list[str]:
        return [self.class_order[int(k)] for k in encoded]


def class_vector(k: int, K: int) -> np.ndarray:
    """Label vector with 1 at position ``k`` and -1/(K-1) elsewhere."""
    if K < 2:
        raise ValueError("K must be at least 2")
    if not 0 <= k < K:
        raise IndexError(f"class index {k} out of range for K={K}")
    vec = np.full(K, -1.0 / (K - 1))
    vec[k] = 1.0
    return vec


def kappa(K: int) -> float:
    return (K - 1) / K


def split_candidates(column) -> np.ndarray:
    """Midpoints between consecutive distinct sorted values."""
    values = np.unique(np.asarray(column, dtype=float))
    if values.size < 2:
        return np.empty(0)
    return (values[:-1] + values[1:]) / 2.0


def _first_appearance(values: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(values))


def load_csv(
    path: str | Path,
    schema: Schema,
    reference: Optional[Dataset] = None,
    require_target: bool = True,
) -> Dataset:
    """Load and encode a CSV file.

    With ``reference`` given, the feature layout, class order and group order
    are taken from it so that new data lines up with a fitted model. Unknown
    categories then encode as all-zero one-hot blocks.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise DataParseError(f"{path}: empty file, header row required") from None
            rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    except OSError as exc:
        raise DataParseError(f"{path}: {exc.strerror or exc}") from exc

    if not rows:
        raise DataParseError(f"{path}: no data rows")
    col_index = {name: j for j, name in enumerate(header)}
    if len(col_index) != len(header):
        raise SchemaError(f"{path}: duplicate column names in header")

    has_target = schema.target_column in col_index
    if not has_target and require_target:
        raise SchemaError(f"{path}: target column '{schema.target_column}' not in header")
    for name in schema.categorical_columns:
        if name not in col_index:
            raise SchemaError(f"{path}: categorical column '{name}' not in header")
    if schema.group_column is not None and schema.group_column not in col_index:
        raise SchemaError(f"{path}: group column '{schema.group_column}' not in header")

    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataParseError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for cell in row:
            if cell.strip() == "":
                raise DataParseError(f"{path}: row {r} has a missing value")

    def column(name: str) -> list[str]:
        j = col_index[name]
        return [row[j].strip() for row in rows]

    reserved = {schema.target_column, schema.group_column}
    if reference is not None:
        meta = list(reference.feature_meta)
    else:
        meta = []
        for name in header:
            if name in reserved:
                continue
            if name in schema.categorical_columns:
                for cat in _first_appearance(column(name)):
                    meta.append(FeatureMeta(f"{name}={cat}", name, "onehot", cat))
            else:
                meta.append(FeatureMeta(name, name, "numeric"))

    X = np.zeros((len(rows), len(meta)))
    cache: dict[str, list[str]] = {}
    for j, m in enumerate(meta):
        if m.source not in col_index:
            raise SchemaError(f"{path}: column '{m.source}' required by the model is missing")
        values = cache.setdefault(m.source, column(m.source))
        if m.kind == "onehot":
            X[:, j] = [1.0 if v == m.category else 0.0 for v in values]
        else:
            for i, v in enumerate(values):
                try:
                    x = float(v)
                except ValueError:
                    raise DataParseError(
                        f"{path}: row {i + 2}, column '{m.source}': non-numeric value {v!r}"
                    ) from None
                if not math.isfinite(x):
                    raise DataParseError(f"{path}: row {i + 2}, column '{m.source}': non-finite value")
                X[i, j] = x

    labels = None
    if reference is not None:
        class_order = list(reference.class_order)
    else:
        class_order = _first_appearance(column(schema.target_column))
    if has_target:
        lookup = {c: k for k, c in enumerate(class_order)}
        raw = column(schema.target_column)
        try:
            labels = np.array([lookup[v] for v in raw], dtype=np.int64)
        except KeyError as exc:
            raise DataParseError(f"{path}: label {exc.args[0]!r} unknown to the model") from None
    if len(class_order) < 2:
        raise DegenerateDataError(f"{path}: target '{schema.target_column}' has a single class")

    groups = None
    group_order: list[str] = []
    if schema.group_column is not None:
        raw = column(schema.group_column)
        group_order = list(reference.group_order) if reference is not None and reference.group_order else []
        for v in raw:
            if v not in group_order:
                group_order.append(v)
        lookup = {g: i for i, g in enumerate(group_order)}
        groups = np.array([lookup[v] for v in raw], dtype=np.int64)

    return Dataset(
        features=X,
        labels=labels,
        class_count=len(class_order),
        groups=groups,
        feature_meta=tuple(meta),
        class_order=tuple(class_order),
        group_order=tuple(group_order),
    )


@dataclass
class Encoding:
    """Serializable encoding metadata needed to re-encode CSVs for a fitted model."""

    feature_meta: list[FeatureMeta] = field(default_factory=list)
    class_order: list[str] = field(default_factory=list)
    group_order: list[str] = field(default_factory=list)

    @classmethod
    def of(cls, data: Dataset) -> "Encoding":
        return cls(list(data.feature_meta), list(data.class_order), list(data.group_order))

    def reference(self) -> Dataset:
        """Empty dataset carrying this encoding, usable as ``load_csv(reference=...)``."""
        return Dataset(
            features=np.zeros((0, len(self.feature_meta))),
            labels=None,
            class_count=len(self.class_order),
            feature_meta=tuple(self.feature_meta),
            class_order=tuple(self.class_order),
            group_order=tuple(self.group_order),
        )
