"""Dataset ingestion, [1, 2] scaling, one-hot targets and the 3:1 hold-out split."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MISSING_TOKENS = frozenset({"", "?", "na", "nan", "null"})

# Train sizes published for the benchmark datasets: name -> (n, train).
KNOWN_TRAIN_SIZES = {
    "balance": (625, 469),
    "cancer": (699, 525),
    "pima": (768, 576),
    "hypothyroid": (3772, 2829),
    "waveform": (5000, 3750),
}


class IngestionError(ValueError):
    pass


@dataclass
class Schema:
    """How to read one delimited file.

    ``target`` and entries of ``categorical``/``ignore`` are column names when
    the file has a header, otherwise zero-based column indices.
    """

    target: str | int
    classes: list[str]
    name: str = "dataset"
    categorical: list[str | int] = field(default_factory=list)
    ignore: list[str | int] = field(default_factory=list)
    header: bool = True
    delimiter: str | None = None

    @classmethod
    def from_file(cls, path) -> Schema:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise IngestionError(f"schema file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise IngestionError(f"schema file {path} is not valid JSON: {exc}") from exc
        try:
            return cls(**raw)
        except TypeError as exc:
            raise IngestionError(f"bad schema {path}: {exc}") from exc


@dataclass
class RawDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_names: list[str]
    name: str

    def __post_init__(self):
        if len(self.labels) == 0:
            raise IngestionError("dataset is empty")
        if self.features.shape[0] != len(self.labels):
            raise IngestionError("feature and label counts differ")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise IngestionError("label out of range")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def n_inputs(self) -> int:
        return self.features.shape[1]


def _sniff_delimiter(sample: str) -> str:
    first = next((line for line in sample.splitlines() if line.strip()), "")
    return ";" if first.count(";") > first.count(",") else ","


def _resolve(col, header: list[str] | None, width: int) -> int:
    if header is not None and isinstance(col, str):
        if col not in header:
            raise IngestionError(f"column {col!r} not in header")
        return header.index(col)
    idx = int(col)
    if idx < 0:
        idx += width
    if not 0 <= idx < width:
        raise IngestionError(f"column index {col} out of range")
    return idx


def load_csv(path, schema: Schema) -> RawDataset:
    """Read a delimited file into features and integer labels.

    Categorical columns are expanded one-of-k (levels in order of first
    appearance).  Any missing cell, unknown class or non-numeric value raises
    :class:`IngestionError` naming the zero-based data row.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise IngestionError(f"data file not found: {path}") from exc
    delim = schema.delimiter or _sniff_delimiter(text)
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delim) if any(c.strip() for c in r)]
    header = None
    if schema.header:
        if not rows:
            raise IngestionError(f"{path}: no header row")
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    width = len(header) if header else len(rows[0])
    target = _resolve(schema.target, header, width)
    skip = {_resolve(c, header, width) for c in schema.ignore}
    categorical = {_resolve(c, header, width) for c in schema.categorical}
    columns = [c for c in range(width) if c != target and c not in skip]
    names = header or [f"x{c}" for c in range(width)]
    class_index = {label: i for i, label in enumerate(schema.classes)}

    levels: dict[int, list[str]] = {c: [] for c in categorical}
    cells: list[list[str]] = []
    labels = []
    for r, row in enumerate(rows):
        row = [c.strip() for c in row]
        if len(row) != width:
            raise IngestionError(f"row {r}: expected {width} fields, got {len(row)}")
        for c in columns + [target]:
            if row[c].lower() in MISSING_TOKENS:
                raise IngestionError(f"row {r}: missing value in column {names[c]!r}")
        if row[target] not in class_index:
            raise IngestionError(f"row {r}: unknown class label {row[target]!r}")
        labels.append(class_index[row[target]])
        for c in categorical:
            if row[c] not in levels[c]:
                levels[c].append(row[c])
        cells.append(row)

    feature_names: list[str] = []
    for c in columns:
        if c in categorical:
            feature_names.extend(f"{names[c]}={lv}" for lv in levels[c])
        else:
            feature_names.append(names[c])
    features = np.empty((len(cells), len(feature_names)))
    for r, row in enumerate(cells):
        out = []
        for c in columns:
            if c in categorical:
                out.extend(1.0 if row[c] == lv else 0.0 for lv in levels[c])
            else:
                try:
                    value = float(row[c])
                except ValueError as exc:
                    raise IngestionError(f"row {r}: non-numeric value {row[c]!r} in column {names[c]!r}") from exc
                if not math.isfinite(value):
                    raise IngestionError(f"row {r}: non-finite value in column {names[c]!r}")
                out.append(value)
        features[r] = out
    return RawDataset(features, np.asarray(labels, dtype=int), len(schema.classes), feature_names, schema.name)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label out of range for one-hot encoding")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def train_size(n: int, name: str | None = None, ratio: float = 0.75) -> int:
    """Published train size for known datasets, else ``round(ratio * n)`` half-up."""
    known = KNOWN_TRAIN_SIZES.get((name or "").lower())
    if known and known[0] == n and ratio == 0.75:
        return known[1]
    return int(math.floor(ratio * n + 0.5))


def _allocate(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``counts``."""
    quota = counts * (total / counts.sum())
    alloc = np.floor(quota).astype(int)
    remainder = quota - alloc
    order = sorted(range(len(counts)), key=lambda c: (-remainder[c], c))
    for c in order[: total - alloc.sum()]:
        alloc[c] += 1
    return alloc


def holdout_split(raw: RawDataset, ratio: float = 0.75, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified shuffle split into sorted train and test index arrays."""
    if raw.n < raw.n_classes:
        raise ValueError("fewer patterns than classes")
    counts = np.bincount(raw.labels, minlength=raw.n_classes)
    alloc = _allocate(counts, train_size(raw.n, raw.name, ratio))
    empty = [c for c in range(raw.n_classes) if counts[c] > 0 and alloc[c] == 0]
    if empty:
        raise ValueError(f"classes {empty} get no training patterns")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(raw.n_classes):
        idx = rng.permutation(np.flatnonzero(raw.labels == c))
        train.append(idx[: alloc[c]])
        test.append(idx[alloc[c]:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def normalize(features, lo, hi) -> np.ndarray:
    """Map to [1, 2] with the given per-feature range, clamping outside values."""
    features = np.asarray(features, dtype=float)
    span = np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, 1.0 + (features - lo) / safe, 1.0)
    return np.clip(scaled, 1.0, 2.0)


def denormalize(scaled, lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    return lo + (np.asarray(scaled) - 1.0) * (np.asarray(hi, dtype=float) - lo)


@dataclass(eq=False)
class Partition:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    log_features: np.ndarray = field(init=False, repr=False)
    targets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.targets = one_hot(self.labels, self.n_classes)
        if self.features.size and not np.all(self.features > 0):
            raise ValueError("partition features must be positive")
        self.log_features = np.log(self.features)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(eq=False)
class SplitDataset:
    name: str
    train: Partition
    test: Partition
    feature_min: np.ndarray
    feature_max: np.ndarray
    train_indices: np.ndarray
    test_indices: np.ndarray

    @property
    def n_inputs(self) -> int:
        return self.train.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.train.n_classes

    def to_dict(self) -> dict:
        def part(p: Partition) -> dict:
            return {"features": p.features.tolist(), "labels": p.labels.tolist()}

        return {
            "format": "evopunn-split/1",
            "name": self.name,
            "n_classes": self.n_classes,
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "train_indices": self.train_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
            "train": part(self.train),
            "test": part(self.test),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SplitDataset:
        if d.get("format") != "evopunn-split/1":
            raise IngestionError(f"unknown split format {d.get('format')!r}")
        k = d["n_classes"]
        shape = (-1, len(d["feature_min"]))
        return cls(
            name=d["name"],
            train=Partition(np.asarray(d["train"]["features"], dtype=float).reshape(shape), d["train"]["labels"], k),
            test=Partition(np.asarray(d["test"]["features"], dtype=float).reshape(shape), d["test"]["labels"], k),
            feature_min=np.asarray(d["feature_min"], dtype=float),
            feature_max=np.asarray(d["feature_max"], dtype=float),
            train_indices=np.asarray(d["train_indices"], dtype=int),
            test_indices=np.asarray(d["test_indices"], dtype=int),
        )

    def dumps(self) -> str:
        # float repr round-trips exactly, so every worker sees identical values
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> SplitDataset:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise IngestionError(f"cannot read split {path}: {exc}") from exc


def make_split(raw: RawDataset, ratio: float = 0.75, seed: int = 0) -> SplitDataset:
    train_idx, test_idx = holdout_split(raw, ratio, seed)
    lo = raw.features[train_idx].min(axis=0)
    hi = raw.features[train_idx].max(axis=0)
    return SplitDataset(
        name=raw.name,
        train=Partition(normalize(raw.features[train_idx], lo, hi), raw.labels[train_idx], raw.n_classes),
        test=Partition(normalize(raw.features[test_idx], lo, hi), raw.labels[test_idx], raw.n_classes),
        feature_min=lo,
        feature_max=hi,
        train_indices=train_idx,
        test_indices=test_idx,
    )


def load_split(data_path, schema_path=None, seed: int = 0) -> SplitDataset:
    """Load a serialized split (``.json``) or a CSV plus schema, splitting it."""
    data_path = Path(data_path)
    if schema_path is None:
        if data_path.suffix == ".json":
            return SplitDataset.load(data_path)
        raise IngestionError(f"no schema given for {data_path}")
    return make_split(load_csv(data_path, Schema.from_file(schema_path)), seed=seed)
