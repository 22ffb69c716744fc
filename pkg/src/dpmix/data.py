"""Schema-typed ingestion and encoding of mixed-type tables.

A schema file lists one column per line as ``name:kind[:level|level|...]``.
Kinds and the likelihood each ends up with:

================  ==========================================  ===================
kind              encoding                                    likelihood block
================  ==========================================  ===================
real              standardized with training mean/std         joint mvnormal
positive-real     ``Φ⁻¹(Gamma-CDF(x))``, Gamma fit by moments joint mvnormal
unit-interval     ``Φ⁻¹(x)``                                  joint mvnormal
count             passed through                              poisson
binary            0/1                                         binomial(n=1)
categorical       one-hot plus an ``other`` bucket            multinomial(k+1)
================  ==========================================  ===================

Extra directives: ``label:<name>`` names the label column and ``id:<name>``
a row-identifier column; neither is modelled. Lines starting with ``#`` are
comments.
"""

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ParameterDomainError, ParseError, SchemaError, ShapeError
from .expfam import Binomial, ExpFamily, Multinomial, MultivariateNormal, Poisson
from .special import gamma_isf, gamma_quantile, gamma_cdf, gamma_sf, normal_cdf, normal_quantile

REAL = "real"
POSITIVE = "positive-real"
UNIT = "unit-interval"
COUNT = "count"
BINARY = "binary"
CATEGORICAL = "categorical"

KINDS = (REAL, POSITIVE, UNIT, COUNT, BINARY, CATEGORICAL)
_KIND_ALIASES = {"positive": POSITIVE, "unit": UNIT, "bool": BINARY, "boolean": BINARY}
CONTINUOUS_KINDS = (REAL, POSITIVE, UNIT)

OTHER_LEVEL = "__other__"
# Φ⁻¹ diverges at 0 and 1; CDF values are clamped to [EPS, 1 - EPS].
CDF_CLAMP = 1e-6

_TRUE = {"1", "true", "yes", "t", "y"}
_FALSE = {"0", "false", "no", "f", "n"}


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    levels: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class FeatureSchema:
    columns: Tuple[Column, ...]
    label: Optional[str] = None
    id_column: Optional[str] = None

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def layout(self, levels: Optional[Dict[str, Sequence[str]]] = None):
        """Likelihood blocks as ``(family, encoded column names, source columns)``.

        ``levels`` overrides or supplies categorical level lists (for levels
        inferred from training data).
        """
        levels = dict(levels or {})
        blocks = []
        continuous = [c.name for c in self.columns if c.kind in CONTINUOUS_KINDS]
        if continuous:
            blocks.append((MultivariateNormal(len(continuous)), tuple(continuous), tuple(continuous)))
        for c in self.columns:
            if c.kind == COUNT:
                blocks.append((Poisson(), (c.name,), (c.name,)))
            elif c.kind == BINARY:
                blocks.append((Binomial(1), (c.name,), (c.name,)))
            elif c.kind == CATEGORICAL:
                lv = levels.get(c.name, c.levels)
                if lv is None:
                    raise SchemaError(f"levels of categorical column {c.name!r} are not known yet")
                encoded = tuple(f"{c.name}={v}" for v in lv) + (f"{c.name}={OTHER_LEVEL}",)
                blocks.append((Multinomial(len(lv) + 1), encoded, (c.name,)))
        return tuple(blocks)

    def to_text(self) -> str:
        lines = []
        for c in self.columns:
            if c.kind == CATEGORICAL and c.levels is not None:
                lines.append(f"{c.name}:{c.kind}:{'|'.join(c.levels)}")
            else:
                lines.append(f"{c.name}:{c.kind}")
        if self.label is not None:
            lines.append(f"label:{self.label}")
        if self.id_column is not None:
            lines.append(f"id:{self.id_column}")
        return "\n".join(lines) + "\n"


def parse_schema(text: str) -> FeatureSchema:
    """Parse a schema document.

    Raises
    ------
    SchemaError
        On empty documents, duplicate column names, unknown kinds or
        malformed level lists; the message carries the line number.
    """
    columns: List[Column] = []
    seen = set()
    label = id_column = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(":", 2)]
        head = parts[0]
        if len(parts) == 2 and head in ("label", "id") and _norm_kind(parts[1]) is None:
            if not parts[1]:
                raise SchemaError(f"{head} directive needs a column name", lineno)
            if head == "label":
                if label is not None:
                    raise SchemaError("label declared twice", lineno)
                label = parts[1]
            else:
                if id_column is not None:
                    raise SchemaError("id declared twice", lineno)
                id_column = parts[1]
            continue
        if len(parts) < 2 or not head:
            raise SchemaError(f"expected 'name:kind', got {line!r}", lineno)
        kind = _norm_kind(parts[1])
        if kind is None:
            raise SchemaError(f"unknown kind {parts[1]!r}; expected one of {', '.join(KINDS)}", lineno)
        if head in seen:
            raise SchemaError(f"duplicate column {head!r}", lineno)
        levels = None
        if len(parts) == 3:
            if kind != CATEGORICAL:
                raise SchemaError(f"levels given for non-categorical column {head!r}", lineno)
            levels = tuple(dict.fromkeys(v.strip() for v in parts[2].split("|") if v.strip()))
            if not levels:
                raise SchemaError(f"categorical column {head!r} has an empty level list", lineno)
            if OTHER_LEVEL in levels:
                raise SchemaError(f"level name {OTHER_LEVEL!r} is reserved", lineno)
        seen.add(head)
        columns.append(Column(head, kind, levels))
    if not columns:
        raise SchemaError("schema declares no columns")
    for name in (label, id_column):
        if name is not None and name in seen:
            raise SchemaError(f"column {name!r} cannot be both a feature and a label/id")
    if label is not None and label == id_column:
        raise SchemaError("label and id must be different columns")
    return FeatureSchema(tuple(columns), label, id_column)


def _norm_kind(kind):
    kind = kind.strip().lower()
    kind = _KIND_ALIASES.get(kind, kind)
    return kind if kind in KINDS else None


def read_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(fh.read())


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------


@dataclass
class RawTable:
    """Parsed but unencoded rows, stored column-wise."""

    columns: Dict[str, list]
    ids: List[str]
    labels: Optional[np.ndarray] = None

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    def take(self, index) -> "RawTable":
        index = list(np.asarray(index, dtype=int))
        return RawTable(
            {k: [v[i] for i in index] for k, v in self.columns.items()},
            [self.ids[i] for i in index],
            None if self.labels is None else self.labels[index],
        )


def _parse_value(text, kind, row, name):
    text = text.strip()
    if text == "":
        raise ParseError("empty value (missing values are not supported)", row, name)
    if kind == CATEGORICAL:
        return text
    if kind == BINARY:
        low = text.lower()
        if low in _TRUE:
            return 1
        if low in _FALSE:
            return 0
        raise ParseError(f"{text!r} is not a binary value", row, name)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{text!r} is not a number", row, name) from None
    if not math.isfinite(value):
        raise ParseError(f"{text!r} is not finite", row, name)
    if kind == COUNT:
        if value < 0 or value != int(value):
            raise ParseError(f"{text!r} is not a non-negative integer count", row, name)
        return int(value)
    if kind == POSITIVE and value < 0:
        raise ParseError(f"{text!r} is negative", row, name)
    if kind == UNIT and not 0.0 <= value <= 1.0:
        raise ParseError(f"{text!r} is outside [0, 1]", row, name)
    return value


def load_csv(source, schema: FeatureSchema) -> RawTable:
    """Read a CSV file (path or text stream) whose header names the schema columns.

    The label and id columns are optional. Row numbers in errors count file
    lines after the header from 1; blank lines are skipped but counted.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _read_rows(csv.reader(fh), schema)
    return _read_rows(csv.reader(source), schema)


def read_csv_text(text: str, schema: FeatureSchema) -> RawTable:
    return _read_rows(csv.reader(io.StringIO(text)), schema)


def _read_rows(reader, schema):
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("file is empty; a header row is required") from None
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise ParseError("duplicate names in header")
    known = set(schema.names) | {schema.label, schema.id_column}
    unknown = [h for h in header if h not in known]
    if unknown:
        raise ParseError(f"header has columns not in the schema: {unknown}")
    missing = [n for n in schema.names if n not in header]
    if missing:
        raise ParseError(f"header lacks schema columns: {missing}")
    index = {h: i for i, h in enumerate(header)}
    columns = {c.name: [] for c in schema.columns}
    ids, labels = [], []
    has_label = schema.label is not None and schema.label in index
    has_id = schema.id_column is not None and schema.id_column in index
    for rowno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", rowno)
        for c in schema.columns:
            columns[c.name].append(_parse_value(row[index[c.name]], c.kind, rowno, c.name))
        if has_label:
            labels.append(_parse_value(row[index[schema.label]], BINARY, rowno, schema.label))
        ids.append(row[index[schema.id_column]].strip() if has_id else str(len(ids)))
    return RawTable(columns, ids, np.asarray(labels, dtype=int) if has_label else None)


# ---------------------------------------------------------------------------
# Domain mapping
# ---------------------------------------------------------------------------


def _clamp(u):
    return np.clip(u, CDF_CLAMP, 1.0 - CDF_CLAMP)


def map_domain(x, kind, params=None):
    """Map a bounded or positive value onto the real line.

    ``unit-interval`` uses ``Φ⁻¹(x)``; ``positive-real`` uses
    ``Φ⁻¹(GammaCDF(x; shape, scale))`` with ``params = (shape, scale)``.
    The upper half is computed from the survival function so that large
    values keep full precision.
    """
    x = np.asarray(x, dtype=float)
    if kind == REAL:
        return _out(x)
    if kind == UNIT:
        if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
            raise ParameterDomainError("unit-interval values must lie in [0, 1]")
        return _out(np.where(x <= 0.5, normal_quantile(_clamp(x)), -normal_quantile(_clamp(1.0 - x))))
    if kind == POSITIVE:
        if np.any(x < 0) or not np.all(np.isfinite(x)):
            raise ParameterDomainError("positive-real values must be >= 0 and finite")
        shape, scale = params
        cdf = np.asarray(gamma_cdf(x, shape, scale))
        sf = np.asarray(gamma_sf(x, shape, scale))
        lower = normal_quantile(_clamp(cdf))
        upper = -normal_quantile(_clamp(sf))
        return _out(np.where(cdf <= 0.5, lower, upper))
    raise ParameterDomainError(f"no domain mapping for kind {kind!r}")


def unmap_domain(y, kind, params=None):
    """Inverse of :func:`map_domain` (exact away from the clamped tails)."""
    y = np.asarray(y, dtype=float)
    if kind == REAL:
        return _out(y)
    lower = np.asarray(normal_cdf(y))
    upper = np.asarray(normal_cdf(-y))
    if kind == UNIT:
        return _out(np.where(y <= 0, lower, 1.0 - upper))
    if kind == POSITIVE:
        shape, scale = params
        return _out(np.where(y <= 0, gamma_quantile(lower, shape, scale), gamma_isf(upper, shape, scale)))
    raise ParameterDomainError(f"no domain mapping for kind {kind!r}")


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def fit_gamma_moments(values) -> Tuple[float, float]:
    """Method-of-moments Gamma ``(shape, scale)`` for a positive column."""
    values = np.asarray(values, dtype=float)
    mean = values.mean() if values.size else 0.0
    var = values.var() if values.size else 0.0
    if mean <= 0 or var <= 0:
        warnings.warn("degenerate positive-real column; using Gamma(1, max(mean, 1))", stacklevel=3)
        return 1.0, float(max(mean, 1.0))
    return float(mean * mean / var), float(var / mean)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncodingStats:
    """Training-set statistics used to encode any split."""

    means: Dict[str, float] = field(default_factory=dict)
    stds: Dict[str, float] = field(default_factory=dict)
    gamma: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    levels: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def to_dict(self):
        return {
            "means": dict(self.means),
            "stds": dict(self.stds),
            "gamma": {k: list(v) for k, v in self.gamma.items()},
            "levels": {k: list(v) for k, v in self.levels.items()},
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            {k: float(v) for k, v in data.get("means", {}).items()},
            {k: float(v) for k, v in data.get("stds", {}).items()},
            {k: (float(v[0]), float(v[1])) for k, v in data.get("gamma", {}).items()},
            {k: tuple(v) for k, v in data.get("levels", {}).items()},
        )


def fit_encoding(raw: RawTable, schema: FeatureSchema) -> EncodingStats:
    means, stds, gamma, levels = {}, {}, {}, {}
    for c in schema.columns:
        values = raw.columns[c.name]
        if c.kind == REAL:
            arr = np.asarray(values, dtype=float)
            means[c.name] = float(arr.mean()) if arr.size else 0.0
            std = float(arr.std()) if arr.size else 0.0
            if not std > 0:
                warnings.warn(f"column {c.name!r} has zero variance; std clamped to 1", stacklevel=2)
                std = 1.0
            stds[c.name] = std
        elif c.kind == POSITIVE:
            gamma[c.name] = fit_gamma_moments(values)
        elif c.kind == CATEGORICAL:
            if c.levels is not None:
                bad = sorted(set(values) - set(c.levels))
                if bad:
                    raise ParseError(f"training values {bad} are not declared levels", column=c.name)
                levels[c.name] = c.levels
            else:
                levels[c.name] = tuple(dict.fromkeys(values))
                if not levels[c.name]:
                    raise ParseError("cannot infer levels from an empty column", column=c.name)
    return EncodingStats(means, stds, gamma, levels)


@dataclass(frozen=True)
class Block:
    """One likelihood block: a family and the encoded columns it models."""

    family: ExpFamily
    columns: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.family.width:
            raise ShapeError(
                f"block {self.family.name} needs shape (N, {self.family.width}), got {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class DatasetView:
    """Encoded samples split into likelihood blocks."""

    blocks: Tuple[Block, ...]
    schema: Optional[FeatureSchema] = None
    stats: Optional[EncodingStats] = None
    labels: Optional[np.ndarray] = None
    ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if not self.blocks:
            raise ShapeError("a dataset needs at least one block")
        sizes = {b.values.shape[0] for b in self.blocks}
        if len(sizes) != 1:
            raise ShapeError(f"blocks disagree on the number of rows: {sorted(sizes)}")

    @classmethod
    def from_arrays(cls, pairs, labels=None):
        """Build a view from ``(family, values)`` pairs, bypassing any schema."""
        blocks = []
        for i, (family, values) in enumerate(pairs):
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                values = values.reshape(-1, family.width)
            cols = tuple(f"b{i}_{j}" for j in range(family.width))
            blocks.append(Block(family, cols, values))
        return cls(tuple(blocks), labels=None if labels is None else np.asarray(labels))

    @property
    def n_samples(self) -> int:
        return self.blocks[0].values.shape[0]

    @property
    def families(self):
        return tuple(b.family for b in self.blocks)

    @property
    def columns(self):
        return tuple(c for b in self.blocks for c in b.columns)

    @property
    def matrix(self) -> np.ndarray:
        return np.concatenate([b.values for b in self.blocks], axis=1)

    def take(self, index) -> "DatasetView":
        index = np.asarray(index, dtype=int)
        return DatasetView(
            tuple(Block(b.family, b.columns, b.values[index]) for b in self.blocks),
            self.schema,
            self.stats,
            None if self.labels is None else self.labels[index],
            None if self.ids is None else tuple(self.ids[i] for i in index),
        )


def encode(raw: RawTable, schema: FeatureSchema, stats: Optional[EncodingStats] = None) -> DatasetView:
    """Encode a raw table into likelihood blocks.

    Without ``stats`` the training statistics are fitted on ``raw`` first;
    pass the training statistics to encode a test split.
    """
    if stats is None:
        stats = fit_encoding(raw, schema)
    n = raw.n_rows
    blocks = []
    for family, encoded, sources in schema.layout(stats.levels):
        if isinstance(family, MultivariateNormal):
            cols = []
            for name in sources:
                c = schema.column(name)
                x = np.asarray(raw.columns[name], dtype=float)
                if c.kind == REAL:
                    cols.append((x - stats.means[name]) / stats.stds[name])
                elif c.kind == POSITIVE:
                    cols.append(map_domain(x, POSITIVE, stats.gamma[name]))
                else:
                    cols.append(map_domain(x, UNIT))
            values = np.column_stack(cols) if n else np.empty((0, len(cols)))
        elif isinstance(family, Multinomial):
            name = sources[0]
            lv = stats.levels[name]
            lookup = {v: i for i, v in enumerate(lv)}
            values = np.zeros((n, family.k))
            other = family.k - 1
            for i, v in enumerate(raw.columns[name]):
                values[i, lookup.get(v, other)] = 1.0
        else:
            values = np.asarray(raw.columns[sources[0]], dtype=float).reshape(n, 1)
        blocks.append(Block(family, encoded, values))
    return DatasetView(tuple(blocks), schema, stats, raw.labels, tuple(raw.ids))


def decode(view: DatasetView) -> RawTable:
    """Invert :func:`encode`; unseen categorical levels come back as ``__other__``."""
    schema, stats = view.schema, view.stats
    if schema is None or stats is None:
        raise ShapeError("decoding needs a view produced by encode()")
    columns = {}
    for block, (_, _, sources) in zip(view.blocks, schema.layout(stats.levels)):
        if isinstance(block.family, MultivariateNormal):
            for j, name in enumerate(sources):
                c = schema.column(name)
                y = block.values[:, j]
                if c.kind == REAL:
                    x = y * stats.stds[name] + stats.means[name]
                elif c.kind == POSITIVE:
                    x = unmap_domain(y, POSITIVE, stats.gamma[name])
                else:
                    x = unmap_domain(y, UNIT)
                columns[name] = [float(v) for v in np.atleast_1d(x)]
        elif isinstance(block.family, Multinomial):
            name = sources[0]
            lv = stats.levels[name] + (OTHER_LEVEL,)
            columns[name] = [lv[i] for i in block.values.argmax(axis=1)]
        else:
            columns[sources[0]] = [int(v) for v in block.values[:, 0]]
    ids = list(view.ids) if view.ids is not None else [str(i) for i in range(view.n_samples)]
    return RawTable(columns, ids, view.labels)
