"""Empirical joint histograms, conditional slices, and truncated mixtures.

The predictive machinery is deliberately histogram-only: joints are built by
binning and counting observation pairs, conditionals are axis-aligned slices,
and the final estimate is the mean of an equal-weight mixture of per-level
conditionals truncated to their own confidence intervals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .attach import AttachmentPath
from .panel import Side, SignalPanel, side_separated

logger = logging.getLogger(__name__)

MIXTURE_MODES = ("renormalized", "raw_truncated")


@dataclass(frozen=True)
class RangePolicy:
    """Axis range selection: observed min/max or quantile-clipped."""

    kind: str  # "minmax" | "quantile"
    lo: float = 0.01
    hi: float = 0.99

    def __post_init__(self) -> None:
        if self.kind not in ("minmax", "quantile"):
            raise ValueError(f"unknown range policy kind {self.kind!r}")
        if self.kind == "quantile" and not 0 <= self.lo < self.hi <= 1:
            raise ValueError("quantile policy needs 0 <= lo < hi <= 1")

    @classmethod
    def minmax(cls) -> "RangePolicy":
        return cls("minmax")

    @classmethod
    def quantile(cls, lo: float = 0.01, hi: float = 0.99) -> "RangePolicy":
        return cls("quantile", lo, hi)

    @classmethod
    def parse(cls, text: str) -> "RangePolicy":
        """Parse 'minmax' or 'quantile:LO:HI'."""
        text = text.strip().lower()
        if text == "minmax":
            return cls.minmax()
        parts = text.split(":")
        if parts[0] == "quantile":
            if len(parts) == 1:
                return cls.quantile()
            if len(parts) == 3:
                return cls.quantile(float(parts[1]), float(parts[2]))
        raise ValueError(f"unknown range policy {text!r}")

    def bounds(self, values: np.ndarray) -> tuple[float, float]:
        if self.kind == "minmax":
            return float(np.min(values)), float(np.max(values))
        lo, hi = np.quantile(values, (self.lo, self.hi))
        return float(lo), float(hi)


@dataclass(frozen=True)
class HistogramConfig:
    """Binning scheme plus the estimation window (panel row indices, half-open)."""

    bins_per_dim: int = 7
    range_policy: RangePolicy = RangePolicy.quantile(0.01, 0.99)
    estimation_window: tuple[int, int] | None = None
    coverage: float = 0.90

    def __post_init__(self) -> None:
        if self.bins_per_dim < 2:
            raise ValueError("bins_per_dim must be >= 2")
        if not 0 < self.coverage < 1:
            raise ValueError("coverage must lie strictly between 0 and 1")

    def with_window(self, start: int, end: int) -> "HistogramConfig":
        return replace(self, estimation_window=(start, end))


@dataclass(frozen=True)
class Axis:
    """Bin edges of one histogram dimension.

    A constant dimension collapses to a single flagged bin of unit width.
    """

    edges: np.ndarray
    constant: bool = False

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=float).copy()
        if edges.ndim != 1 or edges.shape[0] < 2:
            raise ValueError("axis needs at least 2 edges")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("axis edges must be strictly increasing")
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def n_bins(self) -> int:
        return self.edges.shape[0] - 1

    @property
    def midpoints(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2.0

    @classmethod
    def from_values(cls, values: np.ndarray, bins: int, policy: RangePolicy) -> "Axis":
        lo, hi = policy.bounds(values)
        if not hi > lo:
            return cls(edges=np.array([lo - 0.5, lo + 0.5]), constant=True)
        return cls(edges=np.linspace(lo, hi, bins + 1))

    def locate(self, values: np.ndarray | float) -> np.ndarray | int:
        """Bin index per value: edges[i] <= v < edges[i+1], clamped at both ends.

        The rightmost bin is closed (includes its upper edge).
        """
        scalar = np.isscalar(values)
        idx = np.searchsorted(self.edges, np.asarray(values, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, self.n_bins - 1)
        return int(idx) if scalar else idx


@dataclass(frozen=True)
class JointHistogram:
    """Dense (level+2)-dimensional counts of (X_next, S_0, ..., S_level) pairs."""

    level: int
    axes: tuple[Axis, ...]
    counts: np.ndarray
    total: int

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != self.level + 2:
            raise ValueError("counts dimensionality must be level + 2")
        if counts.shape != tuple(ax.n_bins for ax in self.axes):
            raise ValueError("counts shape disagrees with the axes")
        if int(counts.sum()) != self.total:
            raise ValueError("total must equal the sum of counts")
        counts = counts.copy()
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def x_axis(self) -> Axis:
        return self.axes[0]


@dataclass(frozen=True)
class ConditionalDist:
    """One-dimensional predictive distribution over next-period return bins."""

    level: int
    support: np.ndarray
    mass: np.ndarray
    conditioning_realization: tuple[float, ...]
    fallback_used: bool
    clamped: bool = False

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=float).copy()
        mass = np.asarray(self.mass, dtype=float).copy()
        if support.shape != mass.shape or support.ndim != 1:
            raise ValueError("support and mass must be matching 1-D arrays")
        if abs(float(mass.sum()) - 1.0) > 1e-9:
            raise ValueError("conditional mass must sum to 1")
        support.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mass", mass)

    def mean(self) -> float:
        return float(np.dot(self.support, self.mass))


@dataclass(frozen=True)
class MixtureEstimate:
    """Equal-weight mixture of truncated per-level conditionals."""

    components: tuple[ConditionalDist, ...]
    intervals: tuple[tuple[float, float], ...]
    union_interval: tuple[float, float]
    support: np.ndarray
    mixture_mass: np.ndarray
    x_star: float

    def __post_init__(self) -> None:
        support = np.asarray(self.support, dtype=float).copy()
        mass = np.asarray(self.mixture_mass, dtype=float).copy()
        if abs(float(mass.sum()) - 1.0) > 1e-9:
            raise ValueError("mixture mass must sum to 1")
        support.setflags(write=False)
        mass.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mixture_mass", mass)


def conditioning_matrix(
    panel: SignalPanel,
    path: AttachmentPath,
    level: int,
    window: tuple[int, int],
    side: Side,
    *,
    mean_start: int | None = None,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Observation pairs feeding the level-``level`` joint.

    Returns (x_next, signal matrix of side-separated values over the window,
    per-signal window means). Signals are demeaned and side-separated but not
    rescaled: unit scaling is irrelevant for binning and would complicate
    mapping the as-of realization onto the same axes.
    """
    start, end = window
    if not 0 <= start < end <= panel.n_rows - 1:
        raise ValueError(
            f"estimation window [{start}, {end}) needs a next-period return per row"
        )
    if path.levels_used < level + 1:
        raise ValueError(f"path has {path.levels_used} nodes, level {level} needs more")
    x_next = panel.target[start + 1 : end + 1]
    mlo = start if mean_start is None else mean_start
    cols = []
    means = []
    for node in path.nodes[: level + 1]:
        series = panel.signals[start:end, node]
        mean = float(np.mean(panel.signals[mlo:end, node]))
        cols.append(side_separated(series, side, mean=mean))
        means.append(mean)
    return x_next, np.column_stack(cols), means


def estimate_joint(
    panel: SignalPanel,
    path: AttachmentPath,
    level: int,
    cfg: HistogramConfig,
    side: Side,
) -> JointHistogram:
    """Bin and count (x_next, s_0..s_level) pairs over the estimation window."""
    if cfg.estimation_window is None:
        raise ValueError("config carries no estimation window")
    x_next, signals, _ = conditioning_matrix(
        panel, path, level, cfg.estimation_window, side
    )
    total = x_next.shape[0]
    if total == 0:
        raise ValueError("empty estimation window")
    if total < cfg.bins_per_dim * 10:
        logger.warning(
            "sparse joint at level %d: %d observations for %d bins/dim",
            level,
            total,
            cfg.bins_per_dim,
        )
    axes = [Axis.from_values(x_next, cfg.bins_per_dim, cfg.range_policy)]
    axes.extend(
        Axis.from_values(signals[:, k], cfg.bins_per_dim, cfg.range_policy)
        for k in range(level + 1)
    )
    digits = [axes[0].locate(x_next)]
    digits.extend(axes[k + 1].locate(signals[:, k]) for k in range(level + 1))
    shape = tuple(ax.n_bins for ax in axes)
    flat = np.ravel_multi_index(tuple(digits), shape)
    counts = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)
    return JointHistogram(level=level, axes=tuple(axes), counts=counts, total=total)


def marginal_prefix(joint: JointHistogram, level: int) -> JointHistogram:
    """Exact lower-level joint by summing out the trailing signal dimensions.

    Axes for shared dimensions are built from the same data under the same
    policy, so the digitization coincides and the marginalized counts equal
    a fresh estimate of the lower-level joint cell for cell.
    """
    if not 0 <= level <= joint.level:
        raise ValueError(f"level {level} outside the joint's 0..{joint.level}")
    if level == joint.level:
        return joint
    trailing = tuple(range(level + 2, joint.level + 2))
    return JointHistogram(
        level=level,
        axes=joint.axes[: level + 2],
        counts=joint.counts.sum(axis=trailing),
        total=joint.total,
    )


def conditional_slice(
    joint: JointHistogram, realization: Sequence[float]
) -> ConditionalDist:
    """Normalized X-slice of the joint through the conditioning cell.

    Realizations outside an axis clamp to its boundary bin (flagged); an
    empty conditioning cell falls back to the X marginal (flagged).
    """
    realization = tuple(float(v) for v in realization)
    if len(realization) != joint.level + 1:
        raise ValueError(
            f"realization has {len(realization)} values, joint needs {joint.level + 1}"
        )
    clamped = False
    cell = []
    for value, ax in zip(realization, joint.axes[1:]):
        if value < ax.edges[0] or value > ax.edges[-1]:
            clamped = True
        cell.append(ax.locate(value))
    raw = joint.counts[(slice(None), *cell)].astype(float)
    fallback = False
    if raw.sum() <= 0:
        fallback = True
        reduce_axes = tuple(range(1, joint.level + 2))
        raw = joint.counts.sum(axis=reduce_axes).astype(float)
    return ConditionalDist(
        level=joint.level,
        support=joint.x_axis.midpoints,
        mass=raw / raw.sum(),
        conditioning_realization=realization,
        fallback_used=fallback,
        clamped=clamped,
    )


def confidence_interval(
    cond: ConditionalDist, coverage: float
) -> tuple[float, float]:
    """Central interval walked off the discrete CDF.

    lo is the smallest support point whose CDF reaches (1-coverage)/2 and hi
    the smallest reaching 1-(1-coverage)/2; a tiny slack absorbs cumsum
    rounding when a designed CDF hits a threshold exactly.
    """
    if not 0 < coverage < 1:
        raise ValueError("coverage must lie strictly between 0 and 1")
    tail = (1.0 - coverage) / 2.0
    cdf = np.cumsum(cond.mass)
    lo_idx = int(np.searchsorted(cdf, tail - 1e-12, side="left"))
    hi_idx = int(np.searchsorted(cdf, 1.0 - tail - 1e-12, side="left"))
    hi_idx = min(hi_idx, cond.support.shape[0] - 1)
    return float(cond.support[lo_idx]), float(cond.support[hi_idx])


def mixture(
    conds: Sequence[ConditionalDist],
    intervals: Sequence[tuple[float, float]],
    mode: str = "renormalized",
) -> MixtureEstimate:
    """Equal-weight average of conditionals truncated to their intervals.

    A single component passes through untruncated: there is no disagreement
    across levels to reconcile, and the estimate must stay the plain
    conditional mean that serves as the level-0 benchmark.
    """
    if mode not in MIXTURE_MODES:
        raise ValueError(f"mixture mode must be one of {MIXTURE_MODES}")
    if not conds or len(conds) != len(intervals):
        raise ValueError("need one interval per component")
    support = conds[0].support
    for c in conds[1:]:
        if not np.array_equal(c.support, support):
            raise ValueError("components must share the X axis")

    intervals = tuple((float(lo), float(hi)) for lo, hi in intervals)
    union = (min(lo for lo, _ in intervals), max(hi for _, hi in intervals))

    if len(conds) == 1:
        comp = conds[0]
        return MixtureEstimate(
            components=(comp,),
            intervals=intervals,
            union_interval=union,
            support=support,
            mixture_mass=comp.mass,
            x_star=comp.mean(),
        )

    truncated = []
    masses = []
    for comp, (lo, hi) in zip(conds, intervals):
        keep = (support >= lo) & (support <= hi)
        raw = np.where(keep, comp.mass, 0.0)
        inside = float(raw.sum())
        if inside <= 0:
            raise ValueError("component has no mass inside its own interval")
        truncated.append(
            ConditionalDist(
                level=comp.level,
                support=support,
                mass=raw / inside,
                conditioning_realization=comp.conditioning_realization,
                fallback_used=comp.fallback_used,
                clamped=comp.clamped,
            )
        )
        masses.append(raw / inside if mode == "renormalized" else raw)
    mixed = np.mean(masses, axis=0)
    mixed = mixed / mixed.sum()  # unit mass; normalizes raw_truncated over the union
    x_star = float(np.dot(support, mixed))
    return MixtureEstimate(
        components=tuple(truncated),
        intervals=intervals,
        union_interval=union,
        support=support,
        mixture_mass=mixed,
        x_star=x_star,
    )


def effective_estimate(mix: MixtureEstimate) -> float:
    """Expected value of the truncated mixture."""
    return float(np.dot(mix.support, mix.mixture_mass))
