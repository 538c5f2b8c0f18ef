"""Synthetic regime-switching panels and numerical verification of the
parent-node optimality properties of greedy similarity trees."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .panel import Side, SignalPanel, one_sided_normalize
from .tree import RootedTree, select_widest_tree, similarity_matrix

logger = logging.getLogger(__name__)

POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 10_000


class PowerIterationError(RuntimeError):
    """Leading-eigenvector iteration failed to settle (degenerate spectrum)."""


def business_days(start: date, count: int) -> tuple[date, ...]:
    """``count`` consecutive weekdays from ``start`` (no holiday table)."""
    out = []
    d = start
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return tuple(out)


@dataclass(frozen=True)
class RegimeModel:
    """Clustered signal universe with a sticky switching driver.

    Signals in a cluster are noisy copies of a shared latent factor; the
    first member of each cluster carries ``anchor_noise`` times the member
    noise, so a near-clean representative of every factor exists and the
    similarity tree recovers the cluster structure at low noise. The target
    follows the upside of whichever signal the Markov chain currently
    designates as the driver.
    """

    n_signals: int
    clusters: tuple[tuple[int, ...], ...]
    transition: np.ndarray
    dominance: float
    active: tuple[int, ...] = ()
    noise_scale: float = 0.25
    target_noise: float = 0.25
    anchor_noise: float = 0.0
    horizon: int = 1000
    seed: int = 0
    start: date = date(1995, 1, 2)

    def __post_init__(self) -> None:
        if self.n_signals < 1:
            raise ValueError("need at least one signal")
        members = [i for cluster in self.clusters for i in cluster]
        if sorted(members) != list(range(self.n_signals)):
            raise ValueError("clusters must partition the signal indices")
        active = self.active or tuple(range(self.n_signals))
        transition = np.asarray(self.transition, dtype=float).copy()
        m = len(active)
        if transition.shape != (m, m):
            raise ValueError("transition matrix must be square over active signals")
        if np.any(transition < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if not np.allclose(transition.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition rows must sum to 1")
        if not 0 <= self.dominance < 1:
            raise ValueError("dominance must lie in [0, 1)")
        if np.any(np.diag(transition) < self.dominance):
            raise ValueError("transition diagonal below the dominance floor")
        if self.noise_scale < 0 or self.target_noise < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        transition.setflags(write=False)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "active", active)
        object.__setattr__(
            self, "clusters", tuple(tuple(c) for c in self.clusters)
        )

    @classmethod
    def build(
        cls,
        n_signals: int = 15,
        n_clusters: int = 3,
        dominance: float = 0.9,
        within_cluster_share: float = 0.8,
        noise_scale: float = 0.25,
        target_noise: float = 0.25,
        anchor_noise: float = 0.0,
        horizon: int = 1000,
        seed: int = 0,
        start: date = date(1995, 1, 2),
    ) -> "RegimeModel":
        """Equal-size clusters and a switching matrix that prefers staying
        put, then moving within the current driver's cluster."""
        if n_signals % n_clusters != 0:
            raise ValueError("n_signals must divide evenly into n_clusters")
        size = n_signals // n_clusters
        clusters = tuple(
            tuple(range(c * size, (c + 1) * size)) for c in range(n_clusters)
        )
        cluster_of = {i: c for c, cluster in enumerate(clusters) for i in cluster}
        transition = np.zeros((n_signals, n_signals))
        for i in range(n_signals):
            weights = np.zeros(n_signals)
            for j in range(n_signals):
                if j == i:
                    continue
                same = cluster_of[j] == cluster_of[i]
                weights[j] = within_cluster_share if same else 1.0 - within_cluster_share
            total = weights.sum()
            if total > 0:
                transition[i] = (1.0 - dominance) * weights / total
            transition[i, i] = dominance + (0.0 if total > 0 else 1.0 - dominance)
        return cls(
            n_signals=n_signals,
            clusters=clusters,
            transition=transition,
            dominance=dominance,
            noise_scale=noise_scale,
            target_noise=target_noise,
            anchor_noise=anchor_noise,
            horizon=horizon,
            seed=seed,
            start=start,
        )

    @classmethod
    def from_mapping(cls, mapping: dict[str, str], seed: int) -> "RegimeModel":
        kwargs: dict = {"seed": seed}
        converters = {
            "n_signals": int,
            "n_clusters": int,
            "dominance": float,
            "within_cluster_share": float,
            "noise_scale": float,
            "target_noise": float,
            "anchor_noise": float,
            "horizon": int,
        }
        for key, value in mapping.items():
            if key in converters:
                kwargs[key] = converters[key](value)
            elif key == "start_date":
                kwargs["start"] = date.fromisoformat(value)
            else:
                raise ValueError(f"unknown simulation config key {key!r}")
        return cls.build(**kwargs)


def simulate_driver_path(
    transition: np.ndarray, horizon: int, rng: np.random.Generator
) -> np.ndarray:
    """Markov chain sample path over state indices."""
    m = transition.shape[0]
    cumulative = np.cumsum(transition, axis=1)
    states = np.empty(horizon, dtype=int)
    states[0] = int(rng.integers(m))
    draws = rng.random(horizon - 1)
    for t in range(1, horizon):
        states[t] = int(np.searchsorted(cumulative[states[t - 1]], draws[t - 1]))
    return states


def simulate_regime_panel(model: RegimeModel) -> tuple[SignalPanel, np.ndarray]:
    """Generate a panel plus the true driver path behind its target.

    The return landing at row t+1 is the positive part of the driving
    signal's value at row t plus Gaussian noise, so attachment scores can
    recover the driver from trailing one-sided covariances.
    """
    rng = np.random.default_rng(model.seed)
    h = model.horizon
    n_clusters = len(model.clusters)
    factors = rng.standard_normal((h, n_clusters))
    noise = rng.standard_normal((h, model.n_signals))
    signals = np.empty((h, model.n_signals))
    for c, cluster in enumerate(model.clusters):
        for k, i in enumerate(cluster):
            mult = model.anchor_noise if k == 0 else 1.0
            signals[:, i] = factors[:, c] + mult * model.noise_scale * noise[:, i]

    states = simulate_driver_path(model.transition, h, rng)
    drivers = np.array([model.active[s] for s in states])
    target_noise = rng.standard_normal(h) * model.target_noise
    target = np.empty(h)
    target[0] = target_noise[0]
    upside = np.maximum(signals[np.arange(h - 1), drivers[:-1]], 0.0)
    target[1:] = upside + target_noise[1:]

    ordered = [""] * model.n_signals
    for c, cluster in enumerate(model.clusters):
        for k, i in enumerate(cluster):
            ordered[i] = f"c{c}m{k}"
    panel = SignalPanel(
        dates=business_days(model.start, h),
        names=tuple(ordered),
        signals=signals,
        target=target,
        target_name="ret",
    )
    return panel, drivers


def principal_direction(child_matrix: np.ndarray) -> tuple[np.ndarray, float]:
    """Leading principal direction of a column stack of unit one-sided slices.

    Power iteration on the (nonnegative) Gram matrix with an all-ones start;
    the dominant eigenvector has nonnegative weights, so the returned
    direction stays in the nonnegative orthant alongside the slices.
    """
    child_matrix = np.asarray(child_matrix, dtype=float)
    if child_matrix.ndim != 2 or child_matrix.shape[1] < 1:
        raise ValueError("need an h x m matrix with m >= 1 columns")
    m = child_matrix.shape[1]
    gram = child_matrix.T @ child_matrix
    gram = (gram + gram.T) / 2.0
    nu = np.ones(m) / np.sqrt(m)
    for _ in range(POWER_ITER_MAX):
        nxt = gram @ nu
        norm = float(np.linalg.norm(nxt))
        if norm == 0.0:
            raise PowerIterationError("gram matrix annihilated the iterate")
        nxt = nxt / norm
        delta = float(np.linalg.norm(nxt - nu))
        nu = nxt
        if delta <= POWER_ITER_TOL:
            break
    else:
        raise PowerIterationError("no convergence: near-degenerate leading eigenvalue")
    sigma1 = float(nu @ gram @ nu)
    v1 = child_matrix @ nu
    v1_norm = float(np.linalg.norm(v1))
    if v1_norm == 0.0:
        raise PowerIterationError("principal direction collapsed to zero")
    return v1 / v1_norm, sigma1


def uncertainty_error(s: np.ndarray, targets: list[np.ndarray]) -> float:
    """Total squared residual of projecting each target onto the line of ``s``.

    Equals sum ||x_q||^2 - sum (s.x_q)^2 for unit ``s``: the score a single
    conditioning signal earns when any of the targets may be the live one.
    """
    s = np.asarray(s, dtype=float)
    if not targets:
        raise ValueError("need at least one target vector")
    if abs(float(np.linalg.norm(s)) - 1.0) > 1e-9:
        raise ValueError("s must be unit norm")
    total = 0.0
    for x in targets:
        x = np.asarray(x, dtype=float)
        total += float(np.dot(x, x)) - float(np.dot(s, x)) ** 2
    return total


@dataclass(frozen=True)
class PropositionReport:
    """Outcome of a property sweep over parent nodes of one tree."""

    instances_checked: int
    violations: tuple[tuple[int, float], ...]
    max_margin_violation: float
    skipped: int = 0
    full_set_checked: int = 0
    full_set_holds: int = 0

    def to_dict(self) -> dict:
        return {
            "instances_checked": self.instances_checked,
            "violations": [
                {"instance": inst, "margin": margin} for inst, margin in self.violations
            ],
            "max_margin_violation": self.max_margin_violation,
            "skipped": self.skipped,
            "full_set_checked": self.full_set_checked,
            "full_set_holds": self.full_set_holds,
        }


def _parent_instances(tree: RootedTree, min_children: int) -> list[tuple[int, list[int], list[int]]]:
    """(parent, children, tree-set at the first child's attachment epoch)."""
    position = {node: k for k, node in enumerate(tree.birth_order)}
    instances = []
    for parent, kids in tree.children().items():
        if len(kids) < min_children:
            continue
        first_epoch = min(position[q] for q in kids)
        tree_set = list(tree.birth_order[:first_epoch])
        instances.append((parent, kids, tree_set))
    return instances


def check_parent_centrality(
    tree: RootedTree,
    slices: dict[int, np.ndarray],
    tolerance: float = 1e-9,
) -> PropositionReport:
    """Is each multi-child parent the tree-set node closest to its children's
    principal direction?

    The comparison set is the greedy growth's tree-set at the epoch the first
    child attached: later nodes were not available as parents then. The
    full-node-set variant is tallied as a diagnostic, never asserted.
    """
    instances = _parent_instances(tree, min_children=2)
    violations = []
    margins = []
    skipped = 0
    full_checked = 0
    full_holds = 0
    for parent, kids, tree_set in instances:
        child_matrix = np.column_stack([slices[q] for q in kids])
        try:
            v1, _ = principal_direction(child_matrix)
        except PowerIterationError:
            skipped += 1
            logger.warning("skipping parent %s: eigenvector iteration stalled", parent)
            continue
        def dist(node: int) -> float:
            diff = slices[node] - v1
            return float(np.dot(diff, diff))

        d_parent = dist(parent)
        d_min = min(dist(node) for node in tree_set)
        margin = d_parent - d_min
        margins.append(margin)
        if margin > tolerance:
            violations.append((parent, margin))
        full_checked += 1
        if d_parent <= min(dist(node) for node in tree.birth_order) + tolerance:
            full_holds += 1
    return PropositionReport(
        instances_checked=len(instances) - skipped,
        violations=tuple(violations),
        max_margin_violation=max(margins) if margins else 0.0,
        skipped=skipped,
        full_set_checked=full_checked,
        full_set_holds=full_holds,
    )


def exact_child_targets(slices: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Per-signal counterfactual targets: each node drives the target exactly."""
    return {node: values.copy() for node, values in slices.items()}


def check_parent_estimator(
    tree: RootedTree,
    slices: dict[int, np.ndarray],
    targets: dict[int, np.ndarray],
    tolerance: float = 1e-9,
) -> PropositionReport:
    """Does conditioning on the parent minimize the switching-driver residual?

    For each parent, the per-child targets stand in for the unknown live
    driver; the parent must beat every node of the tree-set at the first
    child's attachment epoch. The full-set variant is diagnostic only.
    """
    instances = _parent_instances(tree, min_children=1)
    violations = []
    margins = []
    full_checked = 0
    full_holds = 0
    for parent, kids, tree_set in instances:
        child_targets = [targets[q] for q in kids]
        u_parent = uncertainty_error(slices[parent], child_targets)
        u_min = min(uncertainty_error(slices[s], child_targets) for s in tree_set)
        margin = u_parent - u_min
        margins.append(margin)
        if margin > tolerance:
            violations.append((parent, margin))
        full_checked += 1
        u_all = min(
            uncertainty_error(slices[s], child_targets) for s in tree.birth_order
        )
        if u_parent <= u_all + tolerance:
            full_holds += 1
    return PropositionReport(
        instances_checked=len(instances),
        violations=tuple(violations),
        max_margin_violation=max(margins) if margins else 0.0,
        full_set_checked=full_checked,
        full_set_holds=full_holds,
    )


def subtree_alignment(tree: RootedTree, slices: dict[int, np.ndarray]) -> dict[int, float]:
    """Diagnostic: squared cosine between each internal node and the principal
    direction of its entire subtree (the informal claim that ancestors
    summarize everything below them)."""
    kids = tree.children()
    out: dict[int, float] = {}

    def descendants(node: int) -> list[int]:
        stack = list(kids[node])
        seen = []
        while stack:
            cur = stack.pop()
            seen.append(cur)
            stack.extend(kids[cur])
        return seen

    for node in tree.birth_order:
        below = descendants(node)
        if not below:
            continue
        try:
            v1, _ = principal_direction(np.column_stack([slices[q] for q in below]))
        except PowerIterationError:
            continue
        out[node] = float(np.dot(slices[node], v1)) ** 2
    return out


def verify_propositions(
    panel: SignalPanel,
    side: Side = Side.UPPER,
    tolerance: float = 1e-9,
    width_metric: str = "path_cost",
) -> dict:
    """Build the full-window tree and run both parent-optimality sweeps."""
    raw_slices = panel.window_slices(side, 0, panel.n_rows)
    alive = {j: s for j, s in enumerate(raw_slices) if not s.degenerate}
    if len(alive) < 2:
        raise ValueError("fewer than two non-degenerate signals")
    sim = similarity_matrix(list(alive.values()), ids=list(alive.keys()))
    tree = select_widest_tree(sim, width_metric)
    vectors = {j: s.values for j, s in alive.items()}
    centrality = check_parent_centrality(tree, vectors, tolerance)
    estimator = check_parent_estimator(
        tree, vectors, exact_child_targets(vectors), tolerance
    )
    alignment = subtree_alignment(tree, vectors)
    return {
        "tree": tree.export_dict(),
        "tolerance": tolerance,
        "parent_centrality": centrality.to_dict(),
        "parent_estimator": estimator.to_dict(),
        "subtree_alignment_mean": (
            float(np.mean(list(alignment.values()))) if alignment else None
        ),
    }
