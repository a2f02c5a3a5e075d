"""Columnar survey datasets: ingestion, derived columns and descriptive tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DomainViolation

KINDS = ("binary", "categorical", "continuous")


@dataclass(frozen=True)
class ColumnMeta:
    kind: str
    levels: int | None = None  # categorical only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown column kind {self.kind!r}; expected one of {KINDS}")

    @classmethod
    def parse(cls, role) -> "ColumnMeta":
        """Accept a ColumnMeta, a kind name, or ``"categorical:<k>"``."""
        if isinstance(role, ColumnMeta):
            return role
        role = str(role)
        if role.startswith("categorical:"):
            try:
                return cls("categorical", int(role.split(":", 1)[1]))
            except ValueError:
                raise DataError(f"bad level count in {role!r}") from None
        return cls(role)


def _validate_column(name: str, values: np.ndarray, meta: ColumnMeta) -> None:
    if np.isnan(values).any():
        raise DataError(f"column {name!r} contains NaN")
    if meta.kind == "binary":
        bad = ~np.isin(values, (0.0, 1.0))
        if bad.any():
            raise DomainViolation(
                f"domain violation: binary column {name!r} holds {values[bad][0]!r}"
            )
    elif meta.kind == "categorical":
        k = meta.levels
        bad = (values != np.round(values)) | (values < 0) | (values >= k)
        if bad.any():
            raise DomainViolation(
                f"domain violation: categorical column {name!r} holds {values[bad][0]!r}, "
                f"expected integer codes 0..{k - 1}"
            )


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable table of named float64 columns.

    Parameters
    ----------
    columns : mapping of name to 1-d array
        Column vectors, all of the same length.
    meta : mapping of name to ColumnMeta or kind string, optional
        Per-column domain flags. Columns without an entry are continuous.
        Categorical columns without an explicit level count get
        ``max(code) + 1`` levels.
    dropped : int
        Rows removed during ingestion (reported, not used).
    """

    __slots__ = ("_columns", "_meta", "n_rows", "dropped")

    def __init__(self, columns: Mapping[str, Iterable[float]], meta=None, dropped: int = 0):
        meta = dict(meta or {})
        cols: dict[str, np.ndarray] = {}
        metas: dict[str, ColumnMeta] = {}
        n = None
        for name, values in columns.items():
            arr = _readonly(values)
            if arr.ndim != 1:
                raise DataError(f"column {name!r} is not one-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DataError(f"column {name!r} has length {arr.shape[0]}, expected {n}")
            m = ColumnMeta.parse(meta.get(name, "continuous"))
            if m.kind == "categorical" and m.levels is None:
                top = np.nanmax(arr) if arr.size else 0
                m = ColumnMeta("categorical", int(top) + 1 if np.isfinite(top) else 1)
            _validate_column(name, arr, m)
            cols[name] = arr
            metas[name] = m
        unknown = set(meta) - set(cols)
        if unknown:
            raise DataError(f"metadata for unknown columns: {sorted(unknown)}")
        object.__setattr__(self, "_columns", cols)
        object.__setattr__(self, "_meta", metas)
        object.__setattr__(self, "n_rows", 0 if n is None else int(n))
        object.__setattr__(self, "dropped", int(dropped))

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._columns[name]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def __contains__(self, name) -> bool:
        return name in self._columns

    def __len__(self) -> int:
        return self.n_rows

    def __repr__(self) -> str:
        return f"Dataset(n_rows={self.n_rows}, columns={self.names})"

    @property
    def names(self) -> list[str]:
        return list(self._columns)

    @property
    def meta(self) -> dict[str, ColumnMeta]:
        return dict(self._meta)

    def require(self, names: Iterable[str]) -> None:
        missing = [c for c in names if c not in self._columns]
        if missing:
            raise DataError(f"unknown column(s): {', '.join(missing)}")

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into an ``(n_rows, len(names))`` array."""
        self.require(names)
        if not names:
            return np.empty((self.n_rows, 0))
        return np.column_stack([self._columns[c] for c in names])

    def with_columns(self, new: Mapping[str, Iterable[float]], meta=None) -> "Dataset":
        """Return a new dataset with columns added or replaced."""
        cols = dict(self._columns)
        metas = dict(self._meta)
        for name in new:
            metas.pop(name, None)
        cols.update(new)
        metas.update(meta or {})
        return Dataset(cols, metas, dropped=self.dropped)

    def subset(self, rows) -> "Dataset":
        """Rows selected by a boolean mask or index array."""
        rows = np.asarray(rows)
        cols = {k: v[rows] for k, v in self._columns.items()}
        return Dataset(cols, self._meta, dropped=self.dropped)

    def to_csv(self, path) -> None:
        """Write RFC 4180 CSV; floats use the shortest round-tripping repr."""
        Path(path).write_text(self.to_csv_string(), encoding="utf-8", newline="")

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.names)
        cols = [self._columns[c] for c in self.names]
        for i in range(self.n_rows):
            w.writerow([repr(float(c[i])) for c in cols])
        return buf.getvalue()


def _parse_schema(schema: Mapping[str, object]) -> dict[str, ColumnMeta]:
    return {name: ColumnMeta.parse(role) for name, role in schema.items()}


def load_csv(path, schema: Mapping[str, object]) -> Dataset:
    """Read the schema's columns from a CSV file.

    ``schema`` maps column names to ``"binary"``, ``"categorical"``,
    ``"categorical:<k>"`` or ``"continuous"``. Rows with an empty or
    unparseable cell in any declared column are dropped (listwise deletion);
    the count lands in ``Dataset.dropped``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    metas = _parse_schema(schema)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in metas if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in metas]
        rows: list[list[float]] = []
        dropped = 0
        for rec in reader:
            if not rec:
                continue
            try:
                vals = [float(rec[j]) for j in idx]
            except (ValueError, IndexError):
                dropped += 1
                continue
            if not all(math.isfinite(v) for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: zero rows after cleaning ({dropped} dropped)")
    arr = np.asarray(rows, dtype=np.float64)
    cols = {name: arr[:, j] for j, name in enumerate(metas)}
    return Dataset(cols, metas, dropped=dropped)


@dataclass(frozen=True)
class Transform:
    """A derived-column recipe: ``log1p`` or ``dummy`` applied to ``src``."""

    op: str
    src: str
    name: str | None = None

    @classmethod
    def parse(cls, item) -> "Transform":
        if isinstance(item, Transform):
            return item
        if isinstance(item, str):
            op, _, rest = item.partition("(")
            return cls(op.strip(), rest.rstrip(")").strip())
        return cls(item["op"], item["src"], item.get("name"))


def derive_columns(d: Dataset, spec: Sequence) -> Dataset:
    """Append derived columns; existing columns are left untouched.

    ``log1p(x)`` adds ``ln(1 + x)`` (default name ``ln_<src>``).
    ``dummy(c)`` on a k-level categorical adds k - 1 indicators
    ``<c>_1 .. <c>_{k-1}``; level 0 is the base.
    """
    new: dict[str, np.ndarray] = {}
    meta: dict[str, ColumnMeta] = {}
    for t in map(Transform.parse, spec):
        src = new[t.src] if t.src in new else d[t.src]
        if t.op == "log1p":
            if (src < 0).any():
                raise DataError(f"log1p of negative values in {t.src!r}")
            name = t.name or f"ln_{t.src}"
            new[name] = np.log1p(src)
            meta[name] = ColumnMeta("continuous")
        elif t.op == "dummy":
            m = d.meta.get(t.src)
            if m is None or m.kind not in ("categorical", "binary"):
                raise DataError(f"dummy() needs a categorical column, {t.src!r} is not")
            k = m.levels if m.kind == "categorical" else 2
            for lvl in range(1, k):
                name = f"{t.name or t.src}_{lvl}"
                new[name] = (src == lvl).astype(np.float64)
                meta[name] = ColumnMeta("binary")
        else:
            raise DataError(f"unknown transform {t.op!r}")
    clash = [c for c in new if c in d]
    if clash:
        raise DataError(f"derived column(s) would overwrite existing: {clash}")
    return d.with_columns(new, meta)


@dataclass(frozen=True)
class SummaryRow:
    group: str
    variable: str
    n: int
    mean: float
    sd: float
    min: float
    max: float


@dataclass(frozen=True)
class SummaryTable:
    rows: list[SummaryRow] = field(default_factory=list)

    def to_text(self) -> str:
        head = ("group", "variable", "N", "mean", "sd", "min", "max")
        body = [
            (r.group, r.variable, str(r.n), f"{r.mean:.6g}", f"{r.sd:.6g}",
             f"{r.min:.6g}", f"{r.max:.6g}")
            for r in self.rows
        ]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        lines = []
        for i, rec in enumerate([head, *body]):
            cells = [rec[0].ljust(widths[0]), rec[1].ljust(widths[1])]
            cells += [c.rjust(w) for c, w in zip(rec[2:], widths[2:])]
            lines.append("  ".join(cells).rstrip())
            if i == 0:
                lines.append("-" * len(lines[0]))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["group", "variable", "N", "mean", "sd", "min", "max"])
        for r in self.rows:
            w.writerow([r.group, r.variable, r.n, repr(r.mean), repr(r.sd),
                        repr(r.min), repr(r.max)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"rows": [r.__dict__.copy() for r in self.rows]}


def _describe(label: str, name: str, x: np.ndarray) -> SummaryRow:
    n = x.shape[0]
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    return SummaryRow(label, name, n, float(np.mean(x)), sd, float(x.min()), float(x.max()))


def group_describe(d: Dataset, group: str | None, vars: Sequence[str]) -> SummaryTable:
    """N / mean / sd / min / max of ``vars``, overall or per level of ``group``.

    The sd uses the n - 1 denominator.
    """
    d.require(vars)
    if group is None:
        if d.n_rows == 0:
            raise DataError("empty dataset")
        return SummaryTable([_describe("all", v, d[v]) for v in vars])
    d.require([group])
    m = d.meta[group]
    if m.kind not in ("binary", "categorical"):
        raise DataError(f"group column {group!r} must be binary or categorical")
    g = d[group]
    k = 2 if m.kind == "binary" else m.levels
    rows = []
    for lvl in range(k):
        mask = g == lvl
        if not mask.any():
            raise DataError(f"empty group {group}={lvl}")
        rows.extend(_describe(f"{group}={lvl}", v, d[v][mask]) for v in vars)
    return SummaryTable(rows)
