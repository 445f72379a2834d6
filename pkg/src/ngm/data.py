"""Tabular ingestion, feature schemas, scaling and one-hot / bin encoding."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
ORDINAL = "ordinal"
NUMERIC_KINDS = (CONTINUOUS, ORDINAL)

DEFAULT_BINS = 20


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    """One feature of a :class:`FeatureSchema`.

    Numeric columns carry ``mean``/``std`` (identity for constant columns,
    which are flagged) and ``bin_edges`` in scaled units.  ``marginal`` is the
    empirical distribution over ``categories`` or over the bins.
    """

    name: str
    kind: str = CONTINUOUS
    categories: tuple | None = None
    bins: int = DEFAULT_BINS
    mean: float = 0.0
    std: float = 1.0
    constant: bool = False
    bin_edges: tuple | None = None
    marginal: tuple | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL, ORDINAL):
            raise DataError(f"column {self.name!r}: unknown type {self.kind!r}")
        if self.kind == CATEGORICAL:
            cats = tuple(str(c) for c in (self.categories or ()))
            if not cats:
                raise DataError(f"column {self.name!r}: category list is empty")
            if len(set(cats)) != len(cats):
                raise DataError(f"column {self.name!r}: duplicate categories")
            object.__setattr__(self, "categories", cats)
        if self.bin_edges is not None:
            edges = np.asarray(self.bin_edges, dtype=float)
            if np.any(np.diff(edges) <= 0):
                raise DataError(f"column {self.name!r}: bin edges must increase")
        if self.std <= 0:
            raise DataError(f"column {self.name!r}: std must be positive")
        if self.kind != CATEGORICAL and self.bins < 2:
            raise DataError(f"column {self.name!r}: need at least 2 bins")

    @property
    def is_numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS

    def width(self, binned: bool = False) -> int:
        if self.kind == CATEGORICAL:
            return len(self.categories)
        return self.bins if binned else 1

    def centers(self) -> np.ndarray:
        e = np.asarray(self.bin_edges)
        return 0.5 * (e[:-1] + e[1:])

    def constant_value(self) -> float:
        """The single value of a constant column (centre of its unit bin range)."""
        e = self.bin_edges
        return 0.5 * (e[0] + e[-1]) if e is not None else self.mean

    def scale(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def unscale(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def bin_index(self, z) -> np.ndarray:
        """Equal-width bin of scaled values, clamped at the outer edges."""
        e = np.asarray(self.bin_edges)
        idx = np.searchsorted(e, np.asarray(z, dtype=float), side="right") - 1
        return np.clip(idx, 0, len(e) - 2)

    def to_json(self) -> dict:
        d = {"name": self.name, "type": self.kind}
        if self.kind == CATEGORICAL:
            d["categories"] = list(self.categories)
        else:
            d["bins"] = self.bins
            d["mean"] = self.mean
            d["std"] = self.std
            d["constant"] = self.constant
        if self.bin_edges is not None:
            d["bin_edges"] = list(self.bin_edges)
        if self.marginal is not None:
            d["marginal"] = list(self.marginal)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Column":
        kind = d.get("type", CONTINUOUS)
        return cls(
            name=d["name"],
            kind=kind,
            categories=tuple(d["categories"]) if d.get("categories") is not None else None,
            bins=int(d.get("bins", DEFAULT_BINS)),
            mean=float(d.get("mean", 0.0)),
            std=float(d.get("std", 1.0)),
            constant=bool(d.get("constant", False)),
            bin_edges=tuple(d["bin_edges"]) if d.get("bin_edges") is not None else None,
            marginal=tuple(d["marginal"]) if d.get("marginal") is not None else None,
        )


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        cols = tuple(self.columns)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        object.__setattr__(self, "columns", cols)

    def __len__(self):
        return len(self.columns)

    def __iter__(self):
        return iter(self.columns)

    def __getitem__(self, key) -> Column:
        if isinstance(key, str):
            return self.columns[self.index(key)]
        return self.columns[key]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise DataError(f"unknown feature {name!r}")

    def input_widths(self, binned: bool = False) -> list[int]:
        return [c.width(binned) for c in self.columns]

    def output_widths(self) -> list[int]:
        return [c.width(False) for c in self.columns]

    def slices(self, binned: bool = False) -> list[slice]:
        out, start = [], 0
        for w in self.input_widths(binned):
            out.append(slice(start, start + w))
            start += w
        return out

    def unit_labels(self, binned: bool = False) -> list[tuple[str, int]]:
        return [(c.name, k) for c in self.columns for k in range(c.width(binned))]

    def to_json(self) -> dict:
        return {"columns": [c.to_json() for c in self.columns]}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureSchema":
        return cls(tuple(Column.from_json(c) for c in d["columns"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Dataset:
    """Column-typed table: float64 arrays for numeric, str arrays for categorical."""

    schema: FeatureSchema
    columns: tuple = field(repr=False)

    def __post_init__(self):
        cols = tuple(np.asarray(c) for c in self.columns)
        if len(cols) != len(self.schema):
            raise DataError("column count does not match schema")
        if not cols or len(cols[0]) < 1:
            raise DataError("dataset needs at least one row")
        m = len(cols[0])
        if any(len(c) != m for c in cols):
            raise DataError("columns have different lengths")
        for c in cols:
            c.flags.writeable = False
        object.__setattr__(self, "columns", cols)

    @property
    def n_rows(self) -> int:
        return len(self.columns[0])

    @property
    def names(self) -> list[str]:
        return self.schema.names

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.schema.index(name)]

    def take(self, rows) -> "Dataset":
        return Dataset(self.schema, tuple(c[rows] for c in self.columns))


# -- ingestion -------------------------------------------------------------

def _parse_float(s: str):
    try:
        v = float(s)
    except ValueError:
        return None
    return v


def load_csv(path, schema: FeatureSchema | None = None) -> Dataset:
    """Read a headed CSV into a typed :class:`Dataset`.

    Without ``schema`` each column is continuous if every cell parses as a
    float, otherwise categorical with lexicographically sorted categories.
    Empty cells are rejected; there is no imputation.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, "
                                f"got {len(row)}")
            for j, cell in enumerate(row):
                if not cell.strip():
                    raise DataError(f"{path}:{reader.line_num}: missing value in column "
                                    f"{header[j]!r}")
            rows.append((reader.line_num, [c.strip() for c in row]))
    if not rows:
        raise DataError(f"{path}: no data rows")

    if schema is None:
        cols = []
        for j, name in enumerate(header):
            cells = [r[j] for _, r in rows]
            if all(_parse_float(c) is not None for c in cells):
                cols.append(Column(name, CONTINUOUS))
            else:
                cols.append(Column(name, CATEGORICAL, tuple(sorted(set(cells)))))
        schema = FeatureSchema(tuple(cols))
    else:
        if schema.names != header:
            missing = set(schema.names) ^ set(header)
            if missing:
                raise DataError(f"{path}: header does not match schema ({sorted(missing)})")
            raise DataError(f"{path}: header order differs from schema order")

    out = []
    for j, col in enumerate(schema.columns):
        if col.kind == CATEGORICAL:
            allowed = set(col.categories)
            vals = []
            for lineno, r in rows:
                if r[j] not in allowed:
                    raise DataError(f"{path}:{lineno}: unknown category {r[j]!r} in column "
                                    f"{col.name!r}")
                vals.append(r[j])
            out.append(np.array(vals, dtype=object))
        else:
            vals = np.empty(len(rows))
            for i, (lineno, r) in enumerate(rows):
                v = _parse_float(r[j])
                if v is None or not np.isfinite(v):
                    raise DataError(f"{path}:{lineno}: cannot parse {r[j]!r} in column "
                                    f"{col.name!r} as a number")
                vals[i] = v
            out.append(vals)
    return Dataset(schema, tuple(out))


def from_array(x: np.ndarray, names: Sequence[str] | None = None) -> Dataset:
    """All-continuous dataset from a 2-D float array."""
    x = np.asarray(x, dtype=float)
    if names is None:
        names = [f"x{i}" for i in range(x.shape[1])]
    schema = FeatureSchema(tuple(Column(n) for n in names))
    return Dataset(schema, tuple(x[:, j].copy() for j in range(x.shape[1])))


def write_csv(ds: Dataset, path, float_format: str = "%.17g") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        fmt = [(lambda v: float_format % v) if c.is_numeric else str for c in ds.schema]
        for i in range(ds.n_rows):
            w.writerow([f(col[i]) for f, col in zip(fmt, ds.columns)])


# -- scaling ---------------------------------------------------------------

def standardize(ds: Dataset) -> tuple[Dataset, FeatureSchema]:
    """Zero-mean / unit-variance numeric columns; constant columns pass through."""
    cols, scaled = [], []
    for col, values in zip(ds.schema, ds.columns):
        if not col.is_numeric:
            cols.append(col)
            scaled.append(values)
            continue
        mean = float(np.mean(values))
        std = float(np.std(values))
        if std <= 1e-12 * max(1.0, abs(mean)):
            col = replace(col, mean=0.0, std=1.0, constant=True)
        else:
            col = replace(col, mean=mean, std=std, constant=False)
        cols.append(col)
        scaled.append(col.scale(values))
    schema = FeatureSchema(tuple(cols))
    return Dataset(schema, tuple(scaled)), schema


def unstandardize(ds: Dataset, schema: FeatureSchema) -> Dataset:
    cols = [c.unscale(v) if c.is_numeric else v for c, v in zip(schema, ds.columns)]
    return Dataset(schema, tuple(cols))


def _equal_width_edges(z: np.ndarray, m: int) -> np.ndarray:
    lo, hi = float(np.min(z)), float(np.max(z))
    if hi - lo < 1e-12:
        # degenerate range: unit-width bins centred on the single value
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, m + 1)


def fit_schema(ds: Dataset, bins: int = DEFAULT_BINS) -> tuple[Dataset, FeatureSchema]:
    """Standardize, then attach bin edges and empirical marginals.

    Returns the scaled dataset and the complete schema used everywhere else.
    """
    if bins < 2:
        raise DataError("need at least 2 bins per numeric feature")
    scaled, schema = standardize(ds)
    cols = []
    for col, z in zip(schema, scaled.columns):
        if col.is_numeric:
            # a per-column bin count from an explicit schema wins over the default
            m = col.bins if col.bins != DEFAULT_BINS else bins
            edges = _equal_width_edges(z, m)
            col = replace(col, bins=m, bin_edges=tuple(edges.tolist()))
            counts = np.bincount(col.bin_index(z), minlength=m)
        else:
            lookup = {c: k for k, c in enumerate(col.categories)}
            counts = np.bincount([lookup[v] for v in z], minlength=len(col.categories))
        col = replace(col, marginal=tuple((counts / counts.sum()).tolist()))
        cols.append(col)
    schema = FeatureSchema(tuple(cols))
    return Dataset(schema, scaled.columns), schema


# -- encoding --------------------------------------------------------------

def encode(ds: Dataset, schema: FeatureSchema | None = None, binned: bool = False) -> np.ndarray:
    """Expand an already-scaled dataset into model units.

    Categorical columns become one-hot blocks in category-list order;
    numeric columns stay a single unit, or a bin one-hot block when
    ``binned``.
    """
    schema = schema or ds.schema
    blocks = []
    for col, values in zip(schema, ds.columns):
        if col.kind == CATEGORICAL:
            lookup = {c: k for k, c in enumerate(col.categories)}
            try:
                idx = np.array([lookup[v] for v in values], dtype=int)
            except KeyError as exc:
                raise DataError(f"column {col.name!r}: unknown category {exc.args[0]!r}") from None
            blocks.append(np.eye(len(col.categories))[idx])
        elif binned:
            blocks.append(np.eye(col.bins)[col.bin_index(values)])
        else:
            blocks.append(np.asarray(values, dtype=float)[:, None])
    return np.hstack(blocks)


def decode(encoded: np.ndarray, schema: FeatureSchema) -> Dataset:
    """Inverse of :func:`encode` (unbinned layout); categories by argmax."""
    encoded = np.atleast_2d(encoded)
    cols = []
    for col, sl in zip(schema, schema.slices()):
        block = encoded[:, sl]
        if col.kind == CATEGORICAL:
            idx = np.argmax(block, axis=1)
            cols.append(np.array([col.categories[k] for k in idx], dtype=object))
        else:
            cols.append(block[:, 0].astype(float))
    return Dataset(schema, tuple(cols))


def encode_value(col: Column, value, binned: bool = False) -> np.ndarray:
    """Model units for one raw (unscaled) value."""
    if col.kind == CATEGORICAL:
        value = str(value)
        if value not in col.categories:
            raise DataError(f"column {col.name!r}: unknown category {value!r}")
        return np.eye(len(col.categories))[col.categories.index(value)]
    z = col.scale(float(value))
    if binned:
        return np.eye(col.bins)[int(col.bin_index(z))]
    return np.array([float(z)])


@dataclass(frozen=True)
class Histogram:
    support: tuple
    probs: np.ndarray
    edges: np.ndarray | None = None

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs.tolist()))


def empirical_marginal(ds: Dataset, feature: str, bins: int = DEFAULT_BINS) -> Histogram:
    """Relative frequencies for categorical features, an equal-width histogram otherwise."""
    col = ds.schema[feature]
    values = ds.column(feature)
    if col.kind == CATEGORICAL:
        labels, counts = np.unique(np.asarray(values, dtype=str), return_counts=True)
        order = [i for c in col.categories for i, lab in enumerate(labels) if lab == c]
        probs = counts[order] / counts.sum()
        return Histogram(tuple(labels[order].tolist()), probs)
    z = np.asarray(values, dtype=float)
    edges = _equal_width_edges(z, bins)
    idx = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Histogram(tuple(centers.tolist()), counts / counts.sum(), edges)
