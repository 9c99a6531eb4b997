"""Reading, aligning and transforming return / factor panels.

Returns and factors are taken to be in percent per period and are never
rescaled. Date labels are opaque strings: two panels are aligned by exact
label match, and ordering is checked by string comparison of labels that
share one format.
"""

from __future__ import annotations

import csv
import enum
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from premia.errors import InputError

__all__ = [
    "ZeroBetaMode",
    "RawPanel",
    "AlignedDataset",
    "load_csv",
    "write_csv",
    "align",
    "reference_difference",
    "set_zero_beta_mode",
    "differencing_matrix",
]


class ZeroBetaMode(str, enum.Enum):
    """How the zero-beta return enters the model."""

    IMPOSED_ZERO = "imposed_zero"
    INTERCEPT_ESTIMATED = "intercept_estimated"
    REFERENCE_DIFFERENCED = "reference_differenced"

    @classmethod
    def parse(cls, value: "ZeroBetaMode | str") -> "ZeroBetaMode":
        if isinstance(value, cls):
            return value
        aliases = {
            "zero": cls.IMPOSED_ZERO,
            "intercept": cls.INTERCEPT_ESTIMATED,
            "diff": cls.REFERENCE_DIFFERENCED,
        }
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise InputError(f"unknown zero-beta mode {value!r}") from None


@dataclass(frozen=True)
class RawPanel:
    dates: tuple[str, ...]
    names: tuple[str, ...]
    values: np.ndarray
    source: str | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "names", tuple(self.names))
        if values.ndim != 2:
            raise InputError("panel values must be a T x M matrix")
        T, M = values.shape
        if M < 1:
            raise InputError("panel needs at least one data column")
        if T < 2:
            raise InputError("panel needs at least two periods")
        if len(self.dates) != T or len(self.names) != M:
            raise InputError("dates/names do not match the value matrix shape")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise InputError(f"non-finite value at date {self.dates[r]!r}, column {self.names[c]!r}")
        _check_increasing(self.dates, self.source)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def select(self, columns: Sequence[str]) -> "RawPanel":
        missing = [c for c in columns if c not in self.names]
        if missing:
            raise InputError(f"unknown column(s) {missing}")
        idx = [self.names.index(c) for c in columns]
        return RawPanel(self.dates, tuple(columns), self.values[:, idx], self.source)


@dataclass(frozen=True)
class AlignedDataset:
    """Time-aligned returns (T x N) and factors (T x K)."""

    dates: tuple[str, ...]
    returns: np.ndarray
    factors: np.ndarray
    return_names: tuple[str, ...]
    factor_names: tuple[str, ...]
    zero_beta_mode: ZeroBetaMode = ZeroBetaMode.INTERCEPT_ESTIMATED
    reference_asset: str | None = None
    units: str = field(default="percent per period")

    def __post_init__(self):
        for name in ("returns", "factors"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "zero_beta_mode", ZeroBetaMode.parse(self.zero_beta_mode))
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "return_names", tuple(self.return_names))
        object.__setattr__(self, "factor_names", tuple(self.factor_names))
        T, N = self.returns.shape
        if self.factors.shape[0] != T:
            raise InputError("returns and factors have different numbers of periods")
        if len(self.dates) != T:
            raise InputError("date labels do not match the number of periods")
        if len(self.return_names) != N or len(self.factor_names) != self.K:
            raise InputError("column names do not match the panel widths")
        if self.K >= N + 1:
            raise InputError(f"need K < N + 1 (got K={self.K}, N={N})")

    @property
    def T(self) -> int:
        return self.returns.shape[0]

    @property
    def N(self) -> int:
        return self.returns.shape[1]

    @property
    def K(self) -> int:
        return self.factors.shape[1]

    @classmethod
    def from_arrays(cls, returns, factors, zero_beta_mode="imposed_zero", dates=None,
                    return_names=None, factor_names=None) -> "AlignedDataset":
        """Convenience constructor for in-memory (e.g. simulated) data."""
        returns = np.asarray(returns, dtype=float)
        factors = np.asarray(factors, dtype=float)
        if factors.ndim == 1:
            factors = factors[:, None]
        T = returns.shape[0]
        if dates is None:
            width = len(str(T))
            dates = [f"t{i:0{width}d}" for i in range(1, T + 1)]
        if return_names is None:
            return_names = [f"R{i + 1}" for i in range(returns.shape[1])]
        if factor_names is None:
            factor_names = [f"F{i + 1}" for i in range(factors.shape[1])]
        return cls(tuple(dates), returns, factors, tuple(return_names), tuple(factor_names),
                   zero_beta_mode=zero_beta_mode)


def _date_signature(label: str) -> str:
    return re.sub(r"[A-Za-z]", "a", re.sub(r"\d", "d", label))


def _check_increasing(dates: Sequence[str], source: str | None = None) -> None:
    where = f" in {source}" if source else ""
    seen = set()
    for i, d in enumerate(dates):
        if d in seen:
            raise InputError(f"duplicate date {d!r}{where} (row {i + 2})")
        seen.add(d)
        if i and _date_signature(d) == _date_signature(dates[i - 1]) and d <= dates[i - 1]:
            raise InputError(f"dates not increasing at row {i + 2}{where}: "
                             f"{dates[i - 1]!r} then {d!r}")


def load_csv(path: str | Path, kind: str = "returns") -> RawPanel:
    """Read a comma-separated panel with a header row and date labels in column one.

    Every error message names the offending file row (1-based, header is row 1)
    and column.
    """
    if kind not in ("returns", "factors"):
        raise InputError(f"kind must be 'returns' or 'factors', got {kind!r}")
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{kind} file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise InputError(f"{path}: header needs a date column and at least one data column")
    names = header[1:]
    if len(set(names)) != len(names):
        raise InputError(f"{path}: duplicate column names in header")
    dates, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        dates.append(row[0].strip())
        parsed = []
        for col, cell in zip(names, row[1:]):
            text = cell.strip()
            if not text:
                raise InputError(f"{path}: blank cell at row {lineno}, column {col!r}")
            try:
                val = float(text)
            except ValueError:
                raise InputError(f"{path}: cannot parse {text!r} at row {lineno}, column {col!r}") from None
            if not math.isfinite(val):
                raise InputError(f"{path}: non-finite value at row {lineno}, column {col!r}")
            parsed.append(val)
        values.append(parsed)
    if len(values) < 2:
        raise InputError(f"{path}: need at least two data rows")
    return RawPanel(tuple(dates), tuple(names), np.array(values), source=str(path))


def write_csv(panel: RawPanel, path: str | Path) -> None:
    """Write a panel at full precision (``repr`` of each float round-trips)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.names])
        for d, row in zip(panel.dates, panel.values):
            w.writerow([d, *(repr(float(v)) for v in row)])


def align(returns: RawPanel, factors: RawPanel,
          zero_beta_mode: ZeroBetaMode | str = ZeroBetaMode.INTERCEPT_ESTIMATED) -> AlignedDataset:
    """Restrict both panels to their common dates, rows matched by label."""
    sig_r = {_date_signature(d) for d in returns.dates}
    sig_f = {_date_signature(d) for d in factors.dates}
    if sig_r.isdisjoint(sig_f):
        raise InputError("returns and factors use different date label formats "
                         f"(e.g. {returns.dates[0]!r} vs {factors.dates[0]!r}); "
                         "mismatched frequencies?")
    fpos = {d: i for i, d in enumerate(factors.dates)}
    common = [(i, fpos[d]) for i, d in enumerate(returns.dates) if d in fpos]
    if not common:
        raise InputError("returns and factors share no dates")
    ri = [i for i, _ in common]
    fi = [j for _, j in common]
    return AlignedDataset(
        dates=tuple(returns.dates[i] for i in ri),
        returns=returns.values[ri],
        factors=factors.values[fi],
        return_names=returns.names,
        factor_names=factors.names,
        zero_beta_mode=zero_beta_mode,
    )


def differencing_matrix(n_plus_one: int, reference: int = -1) -> np.ndarray:
    """The N x (N+1) map that subtracts asset ``reference`` from all others.

    With the reference last this is ``(I_N : -iota_N)``.
    """
    ref = reference % n_plus_one
    keep = [i for i in range(n_plus_one) if i != ref]
    J = np.eye(n_plus_one)[keep]
    J[:, ref] = -1.0
    return J


def reference_difference(ds: AlignedDataset, reference: str) -> AlignedDataset:
    """Subtract the ``reference`` column from every other return column."""
    if reference not in ds.return_names:
        raise InputError(f"unknown reference asset {reference!r}")
    ref = ds.return_names.index(reference)
    J = differencing_matrix(ds.N, ref)
    names = tuple(n for i, n in enumerate(ds.return_names) if i != ref)
    return replace(ds, returns=ds.returns @ J.T, return_names=names,
                   zero_beta_mode=ZeroBetaMode.REFERENCE_DIFFERENCED, reference_asset=reference)


def set_zero_beta_mode(ds: AlignedDataset, mode: ZeroBetaMode | str) -> AlignedDataset:
    mode = ZeroBetaMode.parse(mode)
    if mode is ZeroBetaMode.REFERENCE_DIFFERENCED:
        raise InputError("use reference_difference() to obtain differenced returns")
    return replace(ds, zero_beta_mode=mode)
