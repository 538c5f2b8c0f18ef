"""Walk-forward evaluation: expanding-window trees, cadenced attachment,
daily mixture estimates, and monthly information coefficients."""

from __future__ import annotations

import logging
from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .attach import (
    AllDegenerateError,
    AttachmentPath,
    attachment_scores,
    best_in_tree,
    path_to_root,
)
from .histogram import (
    MIXTURE_MODES,
    ConditionalDist,
    HistogramConfig,
    MixtureEstimate,
    confidence_interval,
    conditional_slice,
    conditioning_matrix,
    estimate_joint,
    marginal_prefix,
    mixture,
)
from .panel import Side, SignalPanel, side_separated
from .tree import WIDTH_METRICS, RootedTree, select_widest_tree, similarity_matrix

logger = logging.getLogger(__name__)

TREE_REFRESH_MODES = ("monthly", "daily", "once")
MEAN_SCOPES = ("window", "expanding")


class EmptyMonthError(ValueError):
    pass


def _next_weekday(d: date) -> date:
    from datetime import timedelta

    nxt = d + timedelta(days=1)
    while nxt.weekday() >= 5:
        nxt += timedelta(days=1)
    return nxt


class InsufficientMonthsError(ValueError):
    pass


@dataclass(frozen=True)
class BacktestConfig:
    """Evaluation protocol parameters.

    ``start_date``/``end_date`` snap inward to panel dates; ``None`` means
    the earliest feasible / last scoreable date.
    """

    start_date: date | None = None
    end_date: date | None = None
    attachment_window: int = 250
    attachment_cadence: int = 5
    levels: int = 4
    side: Side = Side.UPPER
    histogram: HistogramConfig = HistogramConfig()
    tree_refresh: str = "monthly"
    width_metric: str = "path_cost"
    mixture_mode: str = "renormalized"
    mean_scope: str = "window"

    def __post_init__(self) -> None:
        if self.attachment_window < self.histogram.bins_per_dim * 4:
            raise ValueError("attachment_window must be >= 4x bins_per_dim")
        if self.attachment_cadence < 1:
            raise ValueError("attachment_cadence must be >= 1")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.tree_refresh not in TREE_REFRESH_MODES:
            raise ValueError(f"tree_refresh must be one of {TREE_REFRESH_MODES}")
        if self.width_metric not in WIDTH_METRICS:
            raise ValueError(f"width_metric must be one of {WIDTH_METRICS}")
        if self.mixture_mode not in MIXTURE_MODES:
            raise ValueError(f"mixture_mode must be one of {MIXTURE_MODES}")
        if self.mean_scope not in MEAN_SCOPES:
            raise ValueError(f"mean_scope must be one of {MEAN_SCOPES}")

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "BacktestConfig":
        """Build from flat key/value text config entries."""
        from .histogram import RangePolicy

        kwargs: dict = {}
        hist: dict = {}
        for key, value in mapping.items():
            if key == "start_date":
                kwargs["start_date"] = date.fromisoformat(value)
            elif key == "end_date":
                kwargs["end_date"] = date.fromisoformat(value)
            elif key == "attachment_window":
                kwargs["attachment_window"] = int(value)
            elif key == "attachment_cadence":
                kwargs["attachment_cadence"] = int(value)
            elif key == "levels":
                kwargs["levels"] = int(value)
            elif key == "side":
                kwargs["side"] = Side.parse(value)
            elif key == "bins_per_dim":
                hist["bins_per_dim"] = int(value)
            elif key == "range_policy":
                hist["range_policy"] = RangePolicy.parse(value)
            elif key == "coverage":
                hist["coverage"] = float(value)
            elif key == "tree_refresh":
                kwargs["tree_refresh"] = value.strip().lower()
            elif key == "width_metric":
                kwargs["width_metric"] = value.strip().lower()
            elif key == "mixture":
                kwargs["mixture_mode"] = value.strip().lower()
            elif key == "mean_scope":
                kwargs["mean_scope"] = value.strip().lower()
            else:
                raise ValueError(f"unknown backtest config key {key!r}")
        if hist:
            kwargs["histogram"] = HistogramConfig(**hist)
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, str]:
        """Flat snapshot; feeding it back to from_mapping reproduces the config."""
        policy = self.histogram.range_policy
        policy_text = (
            "minmax" if policy.kind == "minmax" else f"quantile:{policy.lo}:{policy.hi}"
        )
        out = {}
        if self.start_date is not None:
            out["start_date"] = self.start_date.isoformat()
        if self.end_date is not None:
            out["end_date"] = self.end_date.isoformat()
        out.update(
            {
                "attachment_window": str(self.attachment_window),
                "attachment_cadence": str(self.attachment_cadence),
                "levels": str(self.levels),
                "side": self.side.value,
                "bins_per_dim": str(self.histogram.bins_per_dim),
                "range_policy": policy_text,
                "coverage": repr(self.histogram.coverage),
                "tree_refresh": self.tree_refresh,
                "width_metric": self.width_metric,
                "mixture": self.mixture_mode,
                "mean_scope": self.mean_scope,
            }
        )
        return out


@dataclass(frozen=True)
class LogRow:
    """One (evaluation date, level) entry of the prediction log."""

    date: date
    target_date: date
    level: int
    x_star: float
    realized: float
    interval: tuple[float, float]
    i_star: int
    path: tuple[int, ...]
    component_fallback: bool
    cum_x_star: float
    cum_realized: float
    gap: bool = False


@dataclass(frozen=True)
class DayPrediction:
    """All per-level predictive output for a single as-of date."""

    date: date
    target_date: date
    i_star: int
    path: tuple[int, ...]
    components: tuple[ConditionalDist, ...]
    intervals: tuple[tuple[float, float], ...]
    mixtures: tuple[MixtureEstimate, ...]
    union_interval: tuple[float, float]
    x_star: float
    fallback_levels: tuple[int, ...]
    gap: bool = False


@dataclass(frozen=True)
class PredictionLog:
    """Ordered per-day, per-level rows plus the months safe to score."""

    rows: tuple[LogRow, ...]
    complete_months: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def day_groups(self) -> list[list[LogRow]]:
        groups: list[list[LogRow]] = []
        for row in self.rows:
            if groups and groups[-1][0].date == row.date:
                groups[-1].append(row)
            else:
                groups.append([row])
        return groups


def build_window_tree(
    panel: SignalPanel, side: Side, end: int, width_metric: str = "path_cost"
) -> RootedTree | None:
    """Widest rooted MST over rows [0, end); None when fewer than two signals
    survive degeneracy exclusion."""
    slices = panel.window_slices(side, 0, end)
    alive = [(j, s) for j, s in enumerate(slices) if not s.degenerate]
    dropped = [s.name for s in slices if s.degenerate]
    if dropped:
        logger.info("degenerate signals excluded from tree: %s", dropped)
    if len(alive) < 2:
        return None
    sim = similarity_matrix([s for _, s in alive], ids=[j for j, _ in alive])
    return select_widest_tree(sim, width_metric)


def predict_day(
    panel: SignalPanel,
    path: AttachmentPath,
    it: int,
    cfg: BacktestConfig,
) -> DayPrediction:
    """Per-level joints, conditionals, intervals, and prefix mixtures at row ``it``.

    The estimation window is the expanding [0, it); the conditioning
    realization is today's side-separated signal vector under the same
    window means.
    """
    hist_cfg = cfg.histogram.with_window(0, it)
    levels_used = path.levels_used
    _, _, means = conditioning_matrix(
        panel, path, levels_used - 1, (0, it), cfg.side
    )
    realization = []
    for node, mean in zip(path.nodes, means):
        value = side_separated(
            np.array([panel.signals[it, node]]), cfg.side, mean=mean
        )[0]
        realization.append(float(value))

    # One top-level joint; lower levels are exact prefix marginalizations.
    top = estimate_joint(panel, path, levels_used - 1, hist_cfg, cfg.side)
    components: list[ConditionalDist] = []
    intervals: list[tuple[float, float]] = []
    mixtures: list[MixtureEstimate] = []
    for level in range(levels_used):
        cond = conditional_slice(
            marginal_prefix(top, level), realization[: level + 1]
        )
        components.append(cond)
        intervals.append(confidence_interval(cond, hist_cfg.coverage))
        mixtures.append(
            mixture(components, intervals, cfg.mixture_mode)
        )
    final = mixtures[-1]
    return DayPrediction(
        date=panel.dates[it],
        target_date=panel.dates[it + 1] if it + 1 < panel.n_rows else _next_weekday(panel.dates[it]),
        i_star=path.i_star,
        path=path.nodes,
        components=tuple(components),
        intervals=tuple(intervals),
        mixtures=tuple(mixtures),
        union_interval=final.union_interval,
        x_star=final.x_star,
        fallback_levels=tuple(
            level for level, c in enumerate(components) if c.fallback_used
        ),
    )


def _gap_day(panel: SignalPanel, it: int) -> DayPrediction:
    nan = float("nan")
    return DayPrediction(
        date=panel.dates[it],
        target_date=panel.dates[it + 1],
        i_star=-1,
        path=(),
        components=(),
        intervals=(),
        mixtures=(),
        union_interval=(nan, nan),
        x_star=nan,
        fallback_levels=(),
        gap=True,
    )


def _evaluation_range(panel: SignalPanel, cfg: BacktestConfig) -> tuple[int, int]:
    min_start = max(cfg.attachment_window, 2)
    last_scoreable = panel.n_rows - 2
    if cfg.start_date is None:
        it_first = min_start
    else:
        it_first = bisect_left(panel.dates, cfg.start_date)
    if cfg.end_date is None:
        it_last = last_scoreable
    else:
        it_last = bisect_right(panel.dates, cfg.end_date) - 1
    it_last = min(it_last, last_scoreable)
    if it_last >= it_first and it_first < min_start:
        raise ValueError(
            f"start date needs {min_start} rows of history, have {it_first}"
        )
    return it_first, it_last


def _complete_months(
    panel: SignalPanel, it_first: int, it_last: int
) -> frozenset[tuple[int, int]]:
    """Months whose every panel date falls inside the scored target range."""
    by_month: dict[tuple[int, int], list[date]] = {}
    for d in panel.dates:
        by_month.setdefault((d.year, d.month), []).append(d)
    lo = panel.dates[it_first + 1]
    hi = panel.dates[it_last + 1]
    return frozenset(
        m for m, ds in by_month.items() if ds[0] >= lo and ds[-1] <= hi
    )


def attachment_plan(
    panel: SignalPanel, cfg: BacktestConfig
) -> list[tuple[int, AttachmentPath | None]]:
    """Per evaluation date: the resolved attachment path, or None for a gap.

    Trees rebuild on the refresh cadence over the expanding window; raw
    attachment scores refresh every ``attachment_cadence`` evaluation days
    and resolve daily against the current tree (falling back down the score
    ranking when the top signal is not a tree node).
    """
    it_first, it_last = _evaluation_range(panel, cfg)
    mean_start = 0 if cfg.mean_scope == "expanding" else None
    plans: list[tuple[int, AttachmentPath | None]] = []
    tree: RootedTree | None = None
    tree_month: tuple[int, int] | None = None
    scores: np.ndarray | None = None
    for counter, it in enumerate(range(it_first, it_last + 1)):
        t = panel.dates[it]
        month = (t.year, t.month)
        refresh = (
            tree is None
            or cfg.tree_refresh == "daily"
            or (cfg.tree_refresh == "monthly" and month != tree_month)
        )
        if refresh:
            tree = build_window_tree(panel, cfg.side, it, cfg.width_metric)
            tree_month = month
        if counter % cfg.attachment_cadence == 0:
            scores = attachment_scores(
                panel, cfg.side, t, cfg.attachment_window, mean_start=mean_start
            )
        path: AttachmentPath | None = None
        if tree is not None and scores is not None:
            try:
                i_star = best_in_tree(scores, tree)
                path = path_to_root(tree, i_star, cfg.levels, as_of=t)
            except AllDegenerateError:
                path = None
        if path is None:
            logger.warning("gap day at %s: no usable tree/attachment", t.isoformat())
        plans.append((it, path))
    return plans


def final_tree(panel: SignalPanel, cfg: BacktestConfig) -> RootedTree | None:
    """The tree in force on the last evaluation date (last refresh epoch)."""
    it_first, it_last = _evaluation_range(panel, cfg)
    if it_last < it_first:
        return None
    if cfg.tree_refresh == "once":
        epoch = it_first
    elif cfg.tree_refresh == "daily":
        epoch = it_last
    else:
        last_month = (panel.dates[it_last].year, panel.dates[it_last].month)
        epoch = it_first
        for it in range(it_first, it_last + 1):
            d = panel.dates[it]
            if (d.year, d.month) == last_month:
                epoch = it
                break
    return build_window_tree(panel, cfg.side, epoch, cfg.width_metric)


def run_backtest(panel: SignalPanel, cfg: BacktestConfig, jobs: int = 1) -> PredictionLog:
    """Evaluate every feasible date and log one row per used level.

    The level-``k`` row mixes conditioning components 0..k; every quantity
    entering the prediction at date t uses panel rows dated <= t.
    """
    if panel.n_signals < 2:
        raise ValueError("backtest needs at least 2 signals")
    it_first, it_last = _evaluation_range(panel, cfg)
    if it_last < it_first:
        return PredictionLog(rows=())

    plans = attachment_plan(panel, cfg)

    # Independent per-day predictions, merged back in date order.
    def work(plan: tuple[int, AttachmentPath | None]) -> DayPrediction:
        it, path = plan
        if path is None:
            return _gap_day(panel, it)
        return predict_day(panel, path, it, cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            days = list(pool.map(work, plans))
    else:
        days = [work(plan) for plan in plans]

    # Monthly arithmetic compounding with reset at each month start.
    rows: list[LogRow] = []
    cum_pred: dict[int, float] = {}
    cum_real: dict[int, float] = {}
    current_month: tuple[int, int] | None = None
    for day in days:
        month = (day.target_date.year, day.target_date.month)
        if month != current_month:
            current_month = month
            cum_pred.clear()
            cum_real.clear()
        it = panel.index_of(day.date)
        realized = float(panel.target[it + 1])
        if day.gap:
            nan = float("nan")
            rows.append(
                LogRow(
                    date=day.date,
                    target_date=day.target_date,
                    level=-1,
                    x_star=nan,
                    realized=realized,
                    interval=(nan, nan),
                    i_star=-1,
                    path=(),
                    component_fallback=False,
                    cum_x_star=nan,
                    cum_realized=nan,
                    gap=True,
                )
            )
            continue
        for level in range(len(day.components)):
            estimate = day.mixtures[level].x_star
            cum_pred[level] = cum_pred.get(level, 0.0) + estimate
            cum_real[level] = cum_real.get(level, 0.0) + realized
            rows.append(
                LogRow(
                    date=day.date,
                    target_date=day.target_date,
                    level=level,
                    x_star=estimate,
                    realized=realized,
                    interval=day.intervals[level],
                    i_star=day.i_star,
                    path=day.path,
                    component_fallback=level in day.fallback_levels,
                    cum_x_star=cum_pred[level],
                    cum_realized=cum_real[level],
                )
            )
    return PredictionLog(
        rows=tuple(rows),
        complete_months=_complete_months(panel, it_first, it_last),
    )


def compound_monthly(daily_estimates: np.ndarray | list[float]) -> float:
    """Arithmetic within-month compounding: the plain sum of daily values."""
    values = np.asarray(daily_estimates, dtype=float)
    if values.size == 0:
        raise EmptyMonthError("no daily estimates in month")
    return float(np.sum(values))


def information_coefficient(log: PredictionLog, level: int) -> float:
    """Pearson correlation of monthly compounded predictions vs realizations.

    Only complete months count; a zero-variance series yields NaN with a
    diagnostic instead of raising.
    """
    monthly: dict[tuple[int, int], tuple[list[float], list[float]]] = {}
    for row in log.rows:
        if row.gap or row.level != level:
            continue
        month = (row.target_date.year, row.target_date.month)
        if month not in log.complete_months:
            continue
        preds, reals = monthly.setdefault(month, ([], []))
        preds.append(row.x_star)
        reals.append(row.realized)
    if len(monthly) < 3:
        raise InsufficientMonthsError(
            f"need >= 3 complete months at level {level}, have {len(monthly)}"
        )
    months = sorted(monthly)
    pred = np.array([compound_monthly(monthly[m][0]) for m in months])
    real = np.array([compound_monthly(monthly[m][1]) for m in months])
    if float(np.var(pred)) == 0.0 or float(np.var(real)) == 0.0:
        logger.warning(
            "zero-variance monthly series at level %d: IC undefined", level
        )
        return float("nan")
    return float(np.corrcoef(pred, real)[0, 1])
