"""Signal/target panel ingestion, validation, and one-sided normalization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date, timedelta
from functools import cached_property
from pathlib import Path
from enum import Enum
from typing import IO, Iterable, Union

import numpy as np

logger = logging.getLogger(__name__)

# Euclidean norms below this mark a side-separated column as degenerate.
DEGENERATE_NORM = 1e-12

_MISSING_TOKENS = {"", "na", "n/a", "nan", "null", "none"}

PanelSource = Union[str, Path, IO[str]]


class Side(Enum):
    """Which side of the window mean survives side separation."""

    UPPER = "upper"
    LOWER = "lower"

    @classmethod
    def parse(cls, text: str) -> "Side":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown side {text!r}; expected 'upper' or 'lower'"
            ) from None


@dataclass(frozen=True)
class FillPolicy:
    """Missing-cell handling: reject outright, or forward-fill short gaps."""

    mode: str  # "strict" | "forward_fill"
    max_gap: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("strict", "forward_fill"):
            raise ValueError(f"unknown fill mode {self.mode!r}")
        if self.mode == "forward_fill" and self.max_gap < 1:
            raise ValueError("forward_fill requires max_gap >= 1")

    @classmethod
    def strict(cls) -> "FillPolicy":
        return cls("strict")

    @classmethod
    def forward_fill(cls, max_gap: int = 5) -> "FillPolicy":
        return cls("forward_fill", max_gap)

    @classmethod
    def parse(cls, text: str) -> "FillPolicy":
        """Parse 'strict' or 'ffill:N' / 'forward_fill:N'."""
        text = text.strip().lower()
        if text == "strict":
            return cls.strict()
        head, _, gap = text.partition(":")
        if head in ("ffill", "forward_fill"):
            return cls.forward_fill(int(gap) if gap else 5)
        raise ValueError(f"unknown fill policy {text!r}")


class PanelError(ValueError):
    """Ingestion/validation failure, located by 1-based row and column name."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class MalformedDateError(PanelError):
    pass


class DuplicateDateError(PanelError):
    pass


class NonNumericCellError(PanelError):
    pass


class MissingCellError(PanelError):
    pass


class FillGapError(PanelError):
    pass


class MissingTargetError(PanelError):
    pass


@dataclass(frozen=True)
class SignalPanel:
    """Date-indexed signal matrix plus one aligned target return series.

    Immutable after construction; all downstream operations are pure
    functions over it, so panels are safe to share across workers.
    """

    dates: tuple[date, ...]
    names: tuple[str, ...]
    signals: np.ndarray  # shape (rows, n_signals)
    target: np.ndarray  # shape (rows,)
    target_name: str = "ret"

    def __post_init__(self) -> None:
        signals = np.asarray(self.signals, dtype=float)
        target = np.asarray(self.target, dtype=float)
        if signals.ndim != 2:
            raise ValueError("signals must be a 2-D matrix")
        if target.ndim != 1:
            raise ValueError("target must be a 1-D series")
        rows = len(self.dates)
        if signals.shape[0] != rows or target.shape[0] != rows:
            raise ValueError("dates, signals and target must share the row count")
        if signals.shape[1] < 1:
            raise ValueError("panel needs at least one signal column")
        if any(not name for name in self.names) or len(set(self.names)) != len(self.names):
            raise ValueError("signal names must be unique and non-empty")
        if len(self.names) != signals.shape[1]:
            raise ValueError("one name per signal column required")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur <= prev:
                raise ValueError(f"dates not strictly increasing at {cur}")
        if not np.all(np.isfinite(signals)) or not np.all(np.isfinite(target)):
            raise ValueError("panel contains non-finite values after ingestion")
        signals = signals.copy()
        target = target.copy()
        signals.setflags(write=False)
        target.setflags(write=False)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "target", target)

    @property
    def n_rows(self) -> int:
        return len(self.dates)

    @property
    def n_signals(self) -> int:
        return self.signals.shape[1]

    @cached_property
    def _date_index(self) -> dict[date, int]:
        return {d: i for i, d in enumerate(self.dates)}

    def index_of(self, d: date) -> int:
        try:
            return self._date_index[d]
        except KeyError:
            raise KeyError(f"date {d.isoformat()} not in panel") from None

    def column(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"signal {name!r} not in panel") from None

    def window_slices(
        self, side: Side, start: int, end: int, *, mean_start: int | None = None
    ) -> list["NormalizedSlice"]:
        """One-sided-normalized slices of every signal over rows [start, end).

        ``mean_start`` optionally widens the demeaning window (rows
        [mean_start, end)) while keeping the slice itself on [start, end);
        the default demeans over the slice window.
        """
        if not 0 <= start < end <= self.n_rows:
            raise ValueError(f"bad window [{start}, {end}) for {self.n_rows} rows")
        window = self._window_dates(start, end)
        out = []
        for j, name in enumerate(self.names):
            series = self.signals[start:end, j]
            mean = None
            if mean_start is not None:
                mean = float(np.mean(self.signals[mean_start:end, j]))
            out.append(
                one_sided_normalize(series, side, window=window, name=name, mean=mean)
            )
        return out

    def _window_dates(self, start: int, end: int) -> tuple[date, date]:
        # Half-open [start, end); the exclusive bound is the next calendar day
        # past the last included row when the window reaches the panel edge.
        last = self.dates[end - 1]
        upper = self.dates[end] if end < self.n_rows else last + timedelta(days=1)
        return (self.dates[start], upper)

    def to_csv(self, dest: PanelSource) -> None:
        """Emit the panel in the ingestion CSV schema (target column last)."""
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as handle:
                self.to_csv(handle)
            return
        writer = csv.writer(dest, lineterminator="\n")
        writer.writerow(["date", *self.names, self.target_name])
        for i, d in enumerate(self.dates):
            row = [d.isoformat()]
            row.extend(repr(float(v)) for v in self.signals[i])
            row.append(repr(float(self.target[i])))
            writer.writerow(row)


@dataclass(frozen=True)
class NormalizedSlice:
    """A demeaned, side-separated, unit-norm signal window.

    ``norm`` keeps the Euclidean scale removed from the zeroed vector so the
    demeaned series can be reconstructed from the two per-side slices.
    """

    values: np.ndarray
    side: Side
    window: tuple[date, date] | None
    norm: float
    mean: float
    degenerate: bool
    name: str | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def side_separated(series: np.ndarray, side: Side, mean: float | None = None) -> np.ndarray:
    """Demean and zero out the opposite side, without rescaling."""
    series = np.asarray(series, dtype=float)
    mean_val = float(np.mean(series)) if mean is None else float(mean)
    centered = series - mean_val
    if side is Side.UPPER:
        return np.where(centered > 0, centered, 0.0)
    return np.where(centered < 0, centered, 0.0)


def one_sided_normalize(
    series: np.ndarray,
    side: Side,
    *,
    window: tuple[date, date] | None = None,
    name: str | None = None,
    mean: float | None = None,
) -> NormalizedSlice:
    """Demean, keep one side of the mean, and scale to unit Euclidean norm.

    Constant (or one-sided-empty) inputs come back flagged degenerate with
    zero values instead of raising, so callers can drop them from the graph.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise ValueError("expected a 1-D series")
    if series.shape[0] < 2:
        raise ValueError("window too short: need at least 2 observations")
    mean_val = float(np.mean(series)) if mean is None else float(mean)
    kept = side_separated(series, side, mean=mean_val)
    norm = float(np.linalg.norm(kept))
    degenerate = norm < DEGENERATE_NORM
    values = kept if degenerate else kept / norm
    return NormalizedSlice(
        values=values,
        side=side,
        window=window,
        norm=norm,
        mean=mean_val,
        degenerate=degenerate,
        name=name,
    )


def load_panel(
    source: PanelSource,
    target_column: str,
    fill_policy: FillPolicy = FillPolicy.forward_fill(5),
) -> SignalPanel:
    """Parse and validate the panel CSV (header ``date,<signals...>``).

    Cells that are empty or non-finite count as missing and are handled per
    ``fill_policy``; any other unparseable content is an error. All errors
    carry the offending 1-based row and column.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as handle:
            return load_panel(handle, target_column, fill_policy)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise PanelError("empty input: no header row") from None
    header = [h.strip() for h in header]
    if not header or header[0] != "date":
        raise PanelError("first header column must be 'date'")
    names = header[1:]
    if any(not n for n in names) or len(set(names)) != len(names):
        raise PanelError("signal names must be unique and non-empty")
    if target_column not in names:
        raise MissingTargetError(
            f"target column {target_column!r} not found in header"
        )

    dates: list[date] = []
    seen: dict[date, int] = {}
    raw = []  # one row of float-or-None per line
    for lineno, cells in enumerate(reader, start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise PanelError(
                f"expected {len(header)} cells, got {len(cells)}", row=lineno
            )
        try:
            d = date.fromisoformat(cells[0].strip())
        except ValueError:
            raise MalformedDateError(
                f"malformed date {cells[0]!r}", row=lineno
            ) from None
        if d in seen:
            raise DuplicateDateError(
                f"date {d.isoformat()} repeats row {seen[d]}", row=lineno
            )
        seen[d] = lineno
        parsed: list[float | None] = []
        for name, cell in zip(names, cells[1:]):
            text = cell.strip()
            if text.lower() in _MISSING_TOKENS:
                parsed.append(None)
                continue
            try:
                value = float(text)
            except ValueError:
                raise NonNumericCellError(
                    f"non-numeric cell {cell!r}", row=lineno, column=name
                ) from None
            parsed.append(value if np.isfinite(value) else None)
        dates.append(d)
        raw.append(parsed)

    if not raw:
        raise PanelError("no data rows")
    if any(dates[i + 1] <= dates[i] for i in range(len(dates) - 1)):
        raise PanelError("dates not strictly increasing")

    matrix = _fill_columns(raw, names, fill_policy)
    tcol = names.index(target_column)
    target = matrix[:, tcol]
    signals = np.delete(matrix, tcol, axis=1)
    kept_names = tuple(n for n in names if n != target_column)
    if signals.shape[1] == 0:
        raise PanelError("panel needs at least one signal column besides the target")
    return SignalPanel(
        dates=tuple(dates),
        names=kept_names,
        signals=signals,
        target=target,
        target_name=target_column,
    )


def _fill_columns(
    raw: list[list[float | None]], names: list[str], policy: FillPolicy
) -> np.ndarray:
    rows = len(raw)
    matrix = np.empty((rows, len(names)), dtype=float)
    for j, name in enumerate(names):
        last: float | None = None
        gap = 0
        for i in range(rows):
            value = raw[i][j]
            lineno = i + 2  # header is line 1
            if value is None:
                if policy.mode == "strict":
                    raise MissingCellError("missing cell", row=lineno, column=name)
                if last is None:
                    raise MissingCellError(
                        "missing cell with no prior value to fill from",
                        row=lineno,
                        column=name,
                    )
                gap += 1
                if gap > policy.max_gap:
                    raise FillGapError(
                        f"gap exceeds max_gap={policy.max_gap}",
                        row=lineno,
                        column=name,
                    )
                matrix[i, j] = last
                continue
            gap = 0
            last = value
            matrix[i, j] = value
    return matrix
