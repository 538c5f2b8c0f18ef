"""Independent brute-force references the fast paths are checked against."""

import itertools

import numpy as np


def min_spanning_cost(xi: np.ndarray) -> float:
    """Minimum total cost (-xi edge weights) over every spanning tree.

    Exhaustive enumeration of (n-1)-edge subsets with a union-find cycle
    check; costs are summed in ascending sorted order so the float matches
    RootedTree.total_cost bit for bit whenever the edge-weight multisets do.
    """
    n = xi.shape[0]
    all_edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    best = np.inf
    for combo in itertools.combinations(all_edges, n - 1):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        acyclic = True
        for a, b in combo:
            ra, rb = find(a), find(b)
            if ra == rb:
                acyclic = False
                break
            parent[ra] = rb
        if not acyclic:
            continue
        cost = float(np.sum(np.sort(np.array([-xi[a, b] for a, b in combo]))))
        if cost < best:
            best = cost
    return best


def enumerate_spanning_trees(xi: np.ndarray):
    """Yield every spanning tree as a frozenset of (i, j) edges."""
    n = xi.shape[0]
    all_edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for combo in itertools.combinations(all_edges, n - 1):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        acyclic = True
        for a, b in combo:
            ra, rb = find(a), find(b)
            if ra == rb:
                acyclic = False
                break
            parent[ra] = rb
        if acyclic:
            yield frozenset(combo)


def naive_side_separated(column: np.ndarray, upper: bool) -> np.ndarray:
    """Loop version of demean-and-zero-the-other-side."""
    mean = float(np.mean(column))
    out = np.empty(len(column))
    for i, v in enumerate(column):
        d = float(v) - mean
        if upper:
            out[i] = d if d > 0 else 0.0
        else:
            out[i] = d if d < 0 else 0.0
    return out


def naive_recount(x_vals, sig_matrix, axes_edges) -> np.ndarray:
    """Per-observation, per-dimension linear-scan histogram recount.

    Bin rule: edges[b] <= v < edges[b+1]; values clamp into the boundary
    bins and the rightmost bin includes its upper edge.
    """
    shape = tuple(len(edges) - 1 for edges in axes_edges)
    counts = np.zeros(shape, dtype=int)
    for i in range(len(x_vals)):
        coords = []
        for dim, edges in enumerate(axes_edges):
            v = float(x_vals[i]) if dim == 0 else float(sig_matrix[i, dim - 1])
            nb = len(edges) - 1
            if v < edges[0]:
                b = 0
            elif v >= edges[-1]:
                b = nb - 1
            else:
                b = 0
                while not (edges[b] <= v < edges[b + 1]):
                    b += 1
            coords.append(b)
        counts[tuple(coords)] += 1
    return counts
