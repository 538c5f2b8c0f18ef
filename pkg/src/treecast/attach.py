"""Dominant-driver detection and attachment-to-root paths."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np

from .panel import Side, SignalPanel, one_sided_normalize, side_separated
from .tree import RootedTree


class InsufficientHistoryError(ValueError):
    pass


class AllDegenerateError(ValueError):
    pass


@dataclass(frozen=True)
class AttachmentPath:
    """Node sequence from the attachment signal up to the tree root."""

    as_of: date
    i_star: int
    nodes: tuple[int, ...]
    levels_used: int

    def __post_init__(self) -> None:
        if not self.nodes or self.nodes[0] != self.i_star:
            raise ValueError("path must start at the attachment node")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("path must not repeat nodes")
        if self.levels_used != len(self.nodes):
            raise ValueError("levels_used must equal the path length")


def covariance_score(signal_slice: np.ndarray, target_sep: np.ndarray) -> float:
    """Squared one-sided covariance between a normalized slice and the target."""
    signal_slice = np.asarray(signal_slice, dtype=float)
    target_sep = np.asarray(target_sep, dtype=float)
    if signal_slice.shape != target_sep.shape:
        raise ValueError("slice and target window lengths differ")
    return float(np.dot(signal_slice, target_sep)) ** 2


def attachment_scores(
    panel: SignalPanel,
    side: Side,
    t: date,
    window: int,
    *,
    demean_target: bool = True,
    mean_start: int | None = None,
) -> np.ndarray:
    """Score every signal as the candidate driver of next-period returns.

    Signals are one-side-normalized over the trailing ``window`` rows ending
    just before ``t``; the target is paired one step ahead and side-separated
    without rescaling. ``mean_start`` widens the demeaning window back to
    that row while the scored slices stay trailing. Degenerate signals score
    ``-inf``.
    """
    it = panel.index_of(t)
    if it < window:
        raise InsufficientHistoryError(
            f"need {window} rows before {t.isoformat()}, have {it}"
        )
    lo = it - window
    target_window = panel.target[lo + 1 : it + 1]
    if demean_target:
        target_mean = None
        if mean_start is not None:
            target_mean = float(np.mean(panel.target[mean_start + 1 : it + 1]))
        target_sep = side_separated(target_window, side, mean=target_mean)
    else:
        target_sep = side_separated(target_window, side, mean=0.0)
    scores = np.full(panel.n_signals, -np.inf)
    for j in range(panel.n_signals):
        mean = None
        if mean_start is not None:
            mean = float(np.mean(panel.signals[mean_start:it, j]))
        sl = one_sided_normalize(panel.signals[lo:it, j], side, mean=mean)
        if sl.degenerate:
            continue
        scores[j] = covariance_score(sl.values, target_sep)
    return scores


def attach_target(
    panel: SignalPanel,
    side: Side,
    t: date,
    window: int,
    *,
    demean_target: bool = True,
    mean_start: int | None = None,
) -> int:
    """Index of the signal with the largest squared one-sided covariance."""
    scores = attachment_scores(
        panel, side, t, window, demean_target=demean_target, mean_start=mean_start
    )
    if not np.any(np.isfinite(scores)):
        raise AllDegenerateError(f"all signals degenerate in window ending {t}")
    return int(np.argmax(scores))  # ties: lowest index


def best_in_tree(scores: np.ndarray, tree: RootedTree) -> int:
    """Best-scoring signal that is actually a node of ``tree``.

    Falls back down the score ranking when the top signal was excluded from
    the tree universe (degenerate over the long window).
    """
    order = np.argsort(-scores, kind="stable")
    members = set(tree.nodes)
    for j in order:
        j = int(j)
        if scores[j] == -np.inf:
            break
        if j in members:
            return j
    raise AllDegenerateError("no scored signal present in the tree")


def path_to_root(
    tree: RootedTree, i_star: int, level_cap: int, as_of: date | None = None
) -> AttachmentPath:
    """Follow parent links from ``i_star``, truncated to ``level_cap`` nodes."""
    if level_cap < 1:
        raise ValueError("level_cap must be >= 1")
    if i_star not in tree:
        raise ValueError(f"attachment node {i_star} not in tree")
    nodes = [i_star]
    while nodes[-1] != tree.root and len(nodes) < level_cap:
        nodes.append(tree.parent[nodes[-1]])
    if as_of is None:
        as_of = tree.window[1] if tree.window else date.min
    return AttachmentPath(
        as_of=as_of,
        i_star=i_star,
        nodes=tuple(nodes),
        levels_used=len(nodes),
    )
