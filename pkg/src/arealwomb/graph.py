"""Areal map and inter-disease graph structures.

Region indices are 0-based inside Python; the text formats on disk are
1-based (see :mod:`arealwomb.io`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

VARIANTS = ("unstructured", "directed", "undirected")


@dataclass(frozen=True)
class RegionGraph:
    """Areal map with a fixed topological order.

    Parameters
    ----------
    n : int
        Number of regions.
    edges : sequence of (i, j)
        Unordered geographic neighbour pairs, 0-based.
    order : array of int, optional
        ``order[i]`` is the position of region ``i`` in the topological
        order. Defaults to the identity (input index order).
    centroids : (n, 2) array, optional
        Planar coordinates used for correlogram distance bins.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    order: np.ndarray = None  # type: ignore[assignment]
    centroids: np.ndarray | None = None
    _pairs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ValueError("a region graph needs at least one region")
        seen = set()
        canon = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a + 1}, {b + 1}) references a region outside 1..{n}")
            if a == b:
                raise ValueError(f"self-loop on region {a + 1}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValueError(f"duplicate edge ({key[0] + 1}, {key[1] + 1})")
            seen.add(key)
            canon.append(key)
        canon.sort()
        order = np.arange(n) if self.order is None else np.asarray(self.order, dtype=np.int64)
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("order must be a permutation of the region indices")
        order = order.copy()
        order.setflags(write=False)
        cent = None
        if self.centroids is not None:
            cent = np.asarray(self.centroids, dtype=float)
            if cent.shape != (n, 2):
                raise ValueError(f"centroids must have shape ({n}, 2)")
            cent.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "centroids", cent)
        # (later, earlier) orientation of every edge under the topological order
        pairs = np.array(
            [(a, b) if order[a] > order[b] else (b, a) for a, b in canon], dtype=np.int64
        ).reshape(-1, 2)
        pairs.setflags(write=False)
        object.__setattr__(self, "_pairs", pairs)

    @property
    def m(self) -> int:
        """Number of geographic edges."""
        return len(self.edges)

    @property
    def edge_array(self) -> np.ndarray:
        """``(m, 2)`` array of edges with ``i < j``."""
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)

    @property
    def directed_pairs(self) -> np.ndarray:
        """``(m, 2)`` array aligned with :attr:`edges`; row ``k`` is
        ``(i, j)`` where ``j`` precedes ``i`` in the topological order."""
        return self._pairs

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 geographic adjacency matrix."""
        w = np.zeros((self.n, self.n))
        e = self.edge_array
        w[e[:, 0], e[:, 1]] = 1.0
        w[e[:, 1], e[:, 0]] = 1.0
        return w

    def preceding_neighbors(self, i: int) -> list[int]:
        """Geographic neighbours of ``i`` that precede it, sorted by order."""
        if not 0 <= i < self.n:
            raise IndexError(f"region index {i} out of range for n={self.n}")
        p = self._pairs
        js = p[p[:, 0] == i, 1]
        return sorted(js.tolist(), key=lambda j: self.order[j])

    def n_preceding(self) -> np.ndarray:
        return np.bincount(self._pairs[:, 0], minlength=self.n)

    def rth_order_neighbors(self, bins: Sequence[float]) -> list[np.ndarray]:
        """Group region pairs into distance classes ``(d_{r-1}, d_r]``.

        Returns one ``(k, 2)`` array of ``(i, j)`` pairs (``i < j``) per bin,
        with ``d_0 = 0``. Pairs farther than the last cut point are dropped.
        """
        if self.centroids is None:
            raise ValueError("rth_order_neighbors needs centroids")
        cuts = np.asarray(bins, dtype=float)
        if cuts.ndim != 1 or cuts.size == 0 or cuts[0] <= 0 or np.any(np.diff(cuts) <= 0):
            raise ValueError("bins must be strictly increasing and start above 0")
        iu, ju = np.triu_indices(self.n, k=1)
        dist = np.hypot(*(self.centroids[iu] - self.centroids[ju]).T)
        # right-closed intervals: distance == d_r belongs to order r
        r = np.searchsorted(cuts, dist, side="left")
        out = []
        for k in range(cuts.size):
            sel = (r == k) & (dist > 0)
            out.append(np.column_stack([iu[sel], ju[sel]]))
        return out


@dataclass(frozen=True)
class DiseaseGraphSpec:
    """Inter-disease graph.

    ``adjacency`` is the symmetric 0/1 matrix used by the undirected
    variant; ``parents[d]`` lists the parents of disease ``d`` for the
    directed variant (each parent index must be smaller than ``d``).
    """

    q: int
    variant: str = "unstructured"
    adjacency: np.ndarray | None = None
    parents: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown disease-graph variant {self.variant!r}")
        q = int(self.q)
        object.__setattr__(self, "q", q)
        if self.adjacency is not None:
            w = np.asarray(self.adjacency, dtype=float)
            if w.shape != (q, q) or not np.array_equal(w, w.T):
                raise ValueError("disease adjacency must be a symmetric q x q matrix")
            if np.any(np.diag(w) != 0) or not np.all((w == 0) | (w == 1)):
                raise ValueError("disease adjacency must be binary with zero diagonal")
            w.setflags(write=False)
            object.__setattr__(self, "adjacency", w)
        if self.parents is not None:
            if len(self.parents) != q:
                raise ValueError("parents must list one tuple per disease")
            ps = []
            for d, pa in enumerate(self.parents):
                pa = tuple(sorted(int(h) for h in pa))
                if any(h >= d or h < 0 for h in pa):
                    raise ValueError(
                        f"disease {d + 1} has a parent that does not precede it in the ordering"
                    )
                ps.append(pa)
            object.__setattr__(self, "parents", tuple(ps))
        if self.variant == "undirected" and self.adjacency is None:
            raise ValueError("undirected variant needs a disease adjacency matrix")
        if self.variant == "directed" and self.parents is None:
            raise ValueError("directed variant needs parent sets")

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def normalized_spectrum(self) -> np.ndarray:
        deg = self.degrees
        if np.any(deg == 0):
            isolated = int(np.flatnonzero(deg == 0)[0]) + 1
            raise ValueError(f"disease node {isolated} has no edges; D_dis is singular")
        s = 1.0 / np.sqrt(deg)
        return np.linalg.eigvalsh(s[:, None] * self.adjacency * s[None, :])

    @property
    def zeta_min(self) -> float:
        return float(self.normalized_spectrum()[0])

    @property
    def zeta_max(self) -> float:
        return float(self.normalized_spectrum()[-1])

    def rho_bounds(self) -> tuple[float, float]:
        return disease_rho_bounds(self)

    def parent_edges(self) -> list[tuple[int, int]]:
        """Directed edges ``(d, h)`` with ``h`` a parent of ``d``."""
        return [(d, h) for d, pa in enumerate(self.parents) for h in pa]


def disease_rho_bounds(spec: DiseaseGraphSpec) -> tuple[float, float]:
    """Open interval ``(1/zeta_min, zeta_max)`` on which ``D - rho W`` is
    positive definite."""
    if spec.adjacency is None:
        raise ValueError("rho bounds need a disease adjacency matrix")
    ev = spec.normalized_spectrum()
    return 1.0 / float(ev[0]), float(ev[-1])


def preceding_neighbors(g: RegionGraph, i: int) -> list[int]:
    return g.preceding_neighbors(i)


def rth_order_neighbors(g: RegionGraph, bins: Sequence[float]) -> list[np.ndarray]:
    return g.rth_order_neighbors(bins)


def cycle_graph(n: int) -> RegionGraph:
    return RegionGraph(n, tuple((i, (i + 1) % n) for i in range(n)))


def path_graph(n: int) -> RegionGraph:
    return RegionGraph(n, tuple((i, i + 1) for i in range(n - 1)))


def grid_graph(rows: int, cols: int) -> RegionGraph:
    """Rook-adjacency lattice with unit-spaced centroids."""
    idx = np.arange(rows * cols).reshape(rows, cols)
    edges = [(idx[r, c], idx[r, c + 1]) for r in range(rows) for c in range(cols - 1)]
    edges += [(idx[r, c], idx[r + 1, c]) for r in range(rows - 1) for c in range(cols)]
    cent = np.array([(c, r) for r in range(rows) for c in range(cols)], dtype=float)
    return RegionGraph(rows * cols, tuple(edges), centroids=cent)
