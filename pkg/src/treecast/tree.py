"""One-sided similarity matrices and rooted minimum spanning trees."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

import numpy as np

from .panel import NormalizedSlice, Side

WIDTH_METRICS = ("path_cost", "root_outdegree")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Entrywise-squared inner products of unit-norm one-sided slices.

    ``ids`` are the panel column indices behind each row/column, so trees
    built from a reduced (non-degenerate) universe keep their panel identity.
    """

    xi: np.ndarray
    side: Side
    window: tuple[date, date] | None
    names: tuple[str, ...]
    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        xi = np.asarray(self.xi, dtype=float).copy()
        if xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
            raise ValueError("similarity matrix must be square")
        n = xi.shape[0]
        if len(self.ids) != n or len(self.names) != n:
            raise ValueError("ids/names must match the matrix dimension")
        if np.any(xi < 0):
            raise ValueError("similarities must be nonnegative")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "ids", tuple(self.ids))

    @property
    def n(self) -> int:
        return self.xi.shape[0]


def similarity_matrix(
    slices: Sequence[NormalizedSlice], ids: Sequence[int] | None = None
) -> SimilarityMatrix:
    """Pairwise similarity of non-degenerate slices sharing one window/side."""
    if not slices:
        raise ValueError("no slices given")
    side = slices[0].side
    window = slices[0].window
    length = slices[0].values.shape[0]
    for s in slices:
        if s.side is not side or s.window != window:
            raise ValueError("slices disagree on side or window")
        if s.values.shape[0] != length:
            raise ValueError("slices disagree on window length")
        if s.degenerate:
            raise ValueError(f"degenerate slice {s.name!r} must be excluded")
    matrix = np.column_stack([s.values for s in slices])
    gram = matrix.T @ matrix
    gram = (gram + gram.T) / 2.0  # exact symmetry despite BLAS rounding
    xi = gram * gram
    ids = tuple(range(len(slices))) if ids is None else tuple(ids)
    names = tuple(
        s.name if s.name is not None else str(i) for s, i in zip(slices, ids)
    )
    return SimilarityMatrix(xi=xi, side=side, window=window, names=names, ids=ids)


@dataclass(frozen=True)
class RootedTree:
    """Directed MST: every non-root node keeps its parent and edge similarity.

    ``birth_order`` is the sequence in which the greedy growth added nodes;
    verification replays tree-set membership from it.
    """

    root: int
    parent: dict[int, int]
    edge_sim: dict[int, float]
    birth_order: tuple[int, ...]
    names: dict[int, str] = field(default_factory=dict)
    score: float | None = None
    side: Side | None = None
    window: tuple[date, date] | None = None

    @property
    def nodes(self) -> tuple[int, ...]:
        return self.birth_order

    def __contains__(self, node: int) -> bool:
        return node == self.root or node in self.parent

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {node: [] for node in self.birth_order}
        for child, parent in self.parent.items():
            out[parent].append(child)
        for kids in out.values():
            kids.sort()
        return out

    def leaves(self) -> list[int]:
        kids = self.children()
        return [node for node in self.birth_order if not kids[node]]

    def name_of(self, node: int) -> str:
        return self.names.get(node, str(node))

    def total_cost(self) -> float:
        """Sum of edge costs (-xi), accumulated in ascending sorted order.

        Sorting before summation makes the value independent of the order in
        which the greedy growth discovered the edges, so two trees with the
        same edge-weight multiset cost exactly the same float.
        """
        costs = np.sort(-np.fromiter(self.edge_sim.values(), dtype=float))
        return float(np.sum(costs))

    def export_dict(self) -> dict:
        edges = [
            {
                "child": self.name_of(child),
                "parent": self.name_of(parent),
                "xi": self.edge_sim[child],
            }
            for child, parent in sorted(self.parent.items())
        ]
        window = None
        if self.window is not None:
            window = {
                "start": self.window[0].isoformat(),
                "end": self.window[1].isoformat(),
            }
        return {
            "root": self.name_of(self.root),
            "edges": edges,
            "score": self.score,
            "window": window,
            "side": self.side.value if self.side is not None else None,
        }


def prim_rooted_mst(sim: SimilarityMatrix, root: int) -> RootedTree:
    """Greedy MST growth from ``root`` with edge cost -xi.

    At each step the outside vertex with the largest similarity to any tree
    vertex joins, attached to that vertex; ties break toward the lowest
    outside index, then the lowest tree index, keeping runs reproducible.
    """
    n = sim.n
    if n < 2:
        raise ValueError("need at least 2 signals to span a tree")
    try:
        rpos = sim.ids.index(root)
    except ValueError:
        raise ValueError(f"root {root} not among similarity ids") from None

    xi = sim.xi
    in_tree = np.zeros(n, dtype=bool)
    in_tree[rpos] = True
    best = xi[:, rpos].copy()
    anchor = np.full(n, rpos, dtype=int)
    order = [rpos]
    parent: dict[int, int] = {}
    edge_sim: dict[int, float] = {}

    for _ in range(n - 1):
        masked = np.where(in_tree, -np.inf, best)
        cand = int(np.argmax(masked))  # argmax takes the first max: lowest index
        a = int(anchor[cand])
        parent[sim.ids[cand]] = sim.ids[a]
        edge_sim[sim.ids[cand]] = float(xi[cand, a])
        order.append(cand)
        in_tree[cand] = True
        col = xi[:, cand]
        outside = ~in_tree
        better = outside & (col > best)
        same = outside & (col == best) & (cand < anchor)
        best = np.where(better, col, best)
        anchor = np.where(better | same, cand, anchor)

    return RootedTree(
        root=root,
        parent=parent,
        edge_sim=edge_sim,
        birth_order=tuple(sim.ids[p] for p in order),
        names=dict(zip(sim.ids, sim.names)),
        side=sim.side,
        window=sim.window,
    )


def tree_width_score(tree: RootedTree) -> float:
    """Sum over leaves of the (negative) cost along the leaf-to-root path.

    Flat trees have short paths and therefore larger (less negative) scores.
    """
    total = 0.0
    for leaf in tree.leaves():
        node = leaf
        while node != tree.root:
            total -= tree.edge_sim[node]
            node = tree.parent[node]
    return total


def select_widest_tree(
    sim: SimilarityMatrix, width_metric: str = "path_cost"
) -> RootedTree:
    """Grow one candidate per root and keep the widest.

    Root variation replaces random initialization: candidates are scored by
    ``width_metric`` and ties resolve to the lowest root id.
    """
    if width_metric not in WIDTH_METRICS:
        raise ValueError(f"width_metric must be one of {WIDTH_METRICS}")
    best_tree: RootedTree | None = None
    best_score = -np.inf
    for root in sim.ids:  # ascending ids: first winner is the lowest root
        tree = prim_rooted_mst(sim, root)
        if width_metric == "path_cost":
            score = tree_width_score(tree)
        else:
            score = float(len(tree.children()[tree.root]))
        if score > best_score:
            best_tree = tree
            best_score = score
    assert best_tree is not None
    return RootedTree(
        root=best_tree.root,
        parent=best_tree.parent,
        edge_sim=best_tree.edge_sim,
        birth_order=best_tree.birth_order,
        names=best_tree.names,
        score=best_score,
        side=best_tree.side,
        window=best_tree.window,
    )
