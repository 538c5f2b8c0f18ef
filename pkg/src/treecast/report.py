"""Plot-ready long-format tables and figures from backtest outputs."""

from __future__ import annotations

import csv
import json
import logging
from datetime import date
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.dates as mdates
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)


def load_day_records(path: str | Path) -> list[dict]:
    records = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _month_key(iso: str) -> tuple[int, int]:
    d = date.fromisoformat(iso)
    return (d.year, d.month)


def build_long_table(records: list[dict]) -> list[tuple[str, str, float]]:
    """(date, series, value) rows: per-level cumulative trajectories with a
    monthly reset, plus month-end compounded sums for the scatter views."""
    rows: list[tuple[str, str, float]] = []
    cum_pred: dict[int, float] = {}
    cum_real = 0.0
    month_pred: dict[int, float] = {}
    month_real = 0.0
    current: tuple[int, int] | None = None
    last_date_in_month: str | None = None

    def flush_month() -> None:
        nonlocal month_real
        if last_date_in_month is None:
            return
        for level, total in sorted(month_pred.items()):
            rows.append((last_date_in_month, f"pred_level{level}_monthly", total))
        rows.append((last_date_in_month, "realized_monthly", month_real))

    for rec in records:
        if rec.get("gap"):
            continue
        month = _month_key(rec["target_date"])
        if month != current:
            flush_month()
            current = month
            cum_pred.clear()
            cum_real = 0.0
            month_pred.clear()
            month_real = 0.0
        realized = rec.get("realized")
        day = rec["date"]
        if realized is not None:
            cum_real += float(realized)
            month_real += float(realized)
            rows.append((day, "realized_cum", cum_real))
        for entry in rec["per_level"]:
            level = int(entry["lambda"])
            cum_pred[level] = cum_pred.get(level, 0.0) + float(entry["mean"])
            month_pred[level] = month_pred.get(level, 0.0) + float(entry["mean"])
            rows.append((day, f"pred_level{level}_cum", cum_pred[level]))
        last_date_in_month = day
    flush_month()
    return rows


def write_long_csv(rows: list[tuple[str, str, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["date", "series", "value"])
        for day, series, value in rows:
            writer.writerow([day, series, repr(float(value))])


def _series(rows: list[tuple[str, str, float]], name: str) -> tuple[list[date], list[float]]:
    days = [date.fromisoformat(d) for d, s, _ in rows if s == name]
    values = [v for _, s, v in rows if s == name]
    return days, values


def _level_names(rows: list[tuple[str, str, float]], suffix: str) -> list[str]:
    names = {s for _, s, _ in rows if s.startswith("pred_level") and s.endswith(suffix)}
    return sorted(names, key=lambda s: int(s.removeprefix("pred_level").removesuffix(suffix)))


def render_trajectory(rows: list[tuple[str, str, float]], path: str | Path) -> None:
    """Cumulative monthly prediction trajectories per level against realized."""
    fig, ax = plt.subplots(figsize=(10, 5))
    days, values = _series(rows, "realized_cum")
    ax.plot(days, values, color="black", lw=1.2, label="realized")
    for name in _level_names(rows, "_cum"):
        days, values = _series(rows, name)
        level = name.removeprefix("pred_level").removesuffix("_cum")
        ax.plot(days, values, lw=0.9, alpha=0.85, label=f"level {level}")
    ax.set_xlabel("date")
    ax.set_ylabel("cumulative return within month")
    ax.set_title("Monthly-reset prediction trajectories by conditioning level")
    ax.legend(loc="best", fontsize=8)
    ax.xaxis.set_major_locator(mdates.AutoDateLocator())
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_scatter(
    rows: list[tuple[str, str, float]],
    path: str | Path,
    ic_by_level: dict[int, float] | None = None,
) -> None:
    """Monthly predicted-vs-realized scatter per level with IC annotation."""
    level_names = _level_names(rows, "_monthly")
    if not level_names:
        logger.warning("no monthly series to scatter; skipping %s", path)
        return
    _, realized = _series(rows, "realized_monthly")
    real_dates, _ = _series(rows, "realized_monthly")
    realized_by_date = dict(zip(real_dates, realized))
    ncols = min(2, len(level_names))
    nrows = (len(level_names) + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.5 * ncols, 4 * nrows), squeeze=False)
    for k, name in enumerate(level_names):
        ax = axes[k // ncols][k % ncols]
        level = int(name.removeprefix("pred_level").removesuffix("_monthly"))
        days, preds = _series(rows, name)
        reals = [realized_by_date.get(d) for d in days]
        pairs = [(p, r) for p, r in zip(preds, reals) if r is not None]
        if not pairs:
            continue
        p, r = zip(*pairs)
        ax.scatter(r, p, s=12, alpha=0.7)
        span = [min(min(r), min(p)), max(max(r), max(p))]
        ax.plot(span, span, color="grey", lw=0.8, ls="--")
        if ic_by_level and level in ic_by_level:
            ic = ic_by_level[level]
        else:
            ic = float(np.corrcoef(r, p)[0, 1]) if len(pairs) > 2 else float("nan")
        ax.set_title(f"level {level}   IC = {ic:.2f}", fontsize=10)
        ax.set_xlabel("realized monthly return")
        ax.set_ylabel("predicted monthly return")
    for k in range(len(level_names), nrows * ncols):
        axes[k // ncols][k % ncols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def load_ic_table(path: str | Path) -> dict[int, float]:
    out: dict[int, float] = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            try:
                out[int(row["level"])] = float(row["ic"])
            except (KeyError, ValueError):
                continue
    return out


def emit_report(in_dir: str | Path, out_dir: str | Path) -> list[str]:
    """Long CSV plus trajectory and scatter figures; returns written names."""
    in_dir = Path(in_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_day_records(in_dir / "predictions.jsonl")
    rows = build_long_table(records)
    write_long_csv(rows, out_dir / "report.csv")
    ic_table = None
    ic_path = in_dir / "monthly_ic.csv"
    if ic_path.exists():
        ic_table = load_ic_table(ic_path)
    render_trajectory(rows, out_dir / "trajectory.png")
    render_scatter(rows, out_dir / "scatter.png", ic_table)
    return ["report.csv", "trajectory.png", "scatter.png"]
