"""Synthetic data with known difference boundaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.spatial import Delaunay
from scipy.special import ndtr

from .boundary import Probe, true_boundary_flags
from .covariance import build_covariance
from .dagar import EdgeDissimilarity, adjacency_from_eta, build_precision_eta
from .data import ObservedData
from .graph import DiseaseGraphSpec, RegionGraph
from .stickbreaking import cumulative_weights, weights_from_sticks

# Reference inter-disease graphs for four diseases (0-based parents).
DIRECTED_PARENTS_4 = ((), (0,), (1,), (0, 2))
DIRECTED_ALPHA_4 = np.array([[0.3, 0.5], [0.4, 0.4], [0.5, 0.4], [0.8, 0.1]])  # 2<-1, 3<-2, 4<-1, 4<-3
CYCLE_4 = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]])


def default_disease_graph(variant: str, q: int) -> DiseaseGraphSpec:
    """Chain-shaped defaults for any ``q``; the four-disease reference
    graphs when ``q == 4``."""
    if variant == "unstructured":
        return DiseaseGraphSpec(q)
    if variant == "directed":
        parents = DIRECTED_PARENTS_4 if q == 4 else tuple(() if d == 0 else (d - 1,) for d in range(q))
        return DiseaseGraphSpec(q, "directed", parents=parents)
    if q == 4:
        adj = CYCLE_4
    else:
        adj = np.zeros((q, q), dtype=int)
        for d in range(q - 1):
            adj[d, d + 1] = adj[d + 1, d] = 1
    return DiseaseGraphSpec(q, "undirected", adjacency=adj)


# Reference map ---------------------------------------------------------------------


def synthetic_map(n: int = 58, m: int = 139, seed: int = 2024, relax: int = 20) -> RegionGraph:
    """Planar contiguity graph from a relaxed Delaunay triangulation.

    Points are spread by a few Lloyd-type relaxation passes, triangulated,
    and the longest edges are removed (never disconnecting the graph) until
    ``m`` remain. Regions are numbered from north to south.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, 2)) * np.array([1.0, 1.6])
    grid = np.stack(np.meshgrid(np.linspace(0, 1, 60), np.linspace(0, 1.6, 96)), -1).reshape(-1, 2)
    for _ in range(relax):
        owner = np.argmin(((grid[:, None, :] - pts[None]) ** 2).sum(-1), axis=1)
        for k in range(n):
            sel = grid[owner == k]
            if len(sel):
                pts[k] = sel.mean(axis=0)
    pts = pts[np.argsort(-pts[:, 1], kind="stable")]
    tri = Delaunay(pts)
    edges = set()
    for s in tri.simplices:
        for a, b in ((s[0], s[1]), (s[1], s[2]), (s[0], s[2])):
            edges.add((min(a, b), max(a, b)))
    edges = sorted(edges)
    if len(edges) < m:
        raise ValueError(f"triangulation has only {len(edges)} edges")
    length = {e: float(np.hypot(*(pts[e[0]] - pts[e[1]]))) for e in edges}
    kept = set(edges)
    for e in sorted(edges, key=lambda e: -length[e]):
        if len(kept) == m:
            break
        trial = kept - {e}
        if _connected(n, trial):
            kept = trial
    if len(kept) != m:
        raise ValueError("could not prune to the requested edge count")
    return RegionGraph(n, tuple(sorted(kept)), centroids=pts)


def _connected(n: int, edges) -> bool:
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n


def reference_map() -> RegionGraph:
    """The shipped 58-region, 139-edge map (1-based files)."""
    base = resources.files("arealwomb") / "maps"
    e = np.loadtxt(base / "synthetic58_edges.csv", delimiter=",", skiprows=1, dtype=int)
    c = np.loadtxt(base / "synthetic58_centroids.csv", delimiter=",", skiprows=1)
    n = c.shape[0]
    return RegionGraph(n, tuple((int(a) - 1, int(b) - 1) for a, b in e), centroids=c[:, 1:])


# Scenarios ---------------------------------------------------------------------------


@dataclass
class SimScenario:
    """Generating values. Defaults reproduce the four-disease reference design."""

    variant: str = "unstructured"
    K: int = 15
    alpha: float = 1.0
    tau_s: float = 0.25
    beta: tuple[float, ...] = (-2.0, 2.0, 1.0, -1.0)
    rho: tuple[float, ...] = (0.2, 0.8, 0.4, 0.6)
    eta: tuple[float, ...] = (0.5, 0.25, 0.33, 0.6)
    A: np.ndarray | None = None
    alpha_pairs: np.ndarray | None = None
    rho_dis: float = 0.25
    x_mean: float = 15.0
    x_sd: float = 5.0
    replicates: int = 1
    seed: int = 0
    disease_graph: DiseaseGraphSpec | None = None

    def __post_init__(self):
        q = len(self.beta)
        if len(self.rho) != q or len(self.eta) != q:
            raise ValueError("beta, rho and eta need one entry per disease")
        if not all(0 <= r < 1 for r in self.rho):
            raise ValueError("rho must lie in [0, 1)")
        if any(e < 0 for e in self.eta):
            raise ValueError("eta must be non-negative")
        if self.tau_s <= 0 or self.alpha <= 0 or self.K < 1 or self.replicates < 1 or self.x_sd <= 0:
            raise ValueError("invalid scenario constants")
        if self.disease_graph is None:
            self.disease_graph = default_disease_graph(self.variant, q)
        if self.disease_graph.variant != self.variant or self.disease_graph.q != q:
            raise ValueError("disease graph does not match the scenario")
        if self.A is None:
            self.A = np.tril(np.ones((q, q)))
        if self.alpha_pairs is None and self.variant == "directed":
            ne = len(self.disease_graph.parent_edges())
            if q == 4 and self.disease_graph.parents == DIRECTED_PARENTS_4:
                self.alpha_pairs = DIRECTED_ALPHA_4.copy()
            else:
                self.alpha_pairs = np.tile([0.4, 0.3], (ne, 1))
        if self.variant == "undirected":
            lo, hi = self.disease_graph.rho_bounds()
            if not lo < self.rho_dis < hi:
                raise ValueError("rho_dis outside its admissible interval")

    @property
    def q(self) -> int:
        return len(self.beta)


@dataclass
class SimOutput:
    graph: RegionGraph
    scenario: SimScenario
    x: np.ndarray  # (n,)
    z: EdgeDissimilarity
    z_sigma: float
    W: list[np.ndarray]
    gamma: np.ndarray  # (q*n,)
    sd: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    labels: np.ndarray  # (q*n,)
    y: np.ndarray  # (replicates, n, q)
    E: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.E is None:
            self.E = np.ones(self.y.shape[1:])

    @property
    def phi(self) -> np.ndarray:
        """``(n, q)``."""
        n, q = self.graph.n, self.scenario.q
        return self.theta[self.labels].reshape(q, n).T

    def truth(self, probe: Probe) -> np.ndarray:
        return true_boundary_flags(self.labels, self.graph, probe, self.scenario.q)

    def observed(self, replicate: int = 0) -> ObservedData:
        q = self.scenario.q
        return ObservedData(
            y=self.y[replicate],
            E=self.E,
            X=np.ones((self.graph.n, q, 1)),
            z=[self.z] * q,
        )


def covariate_dissimilarity(graph: RegionGraph, x: np.ndarray) -> tuple[EdgeDissimilarity, float]:
    """``|x_i - x_j| / sigma`` over edges, ``sigma`` the sd of those differences."""
    e = graph.edge_array
    diff = np.abs(x[e[:, 0]] - x[e[:, 1]])
    sigma = float(np.std(diff, ddof=1))
    return EdgeDissimilarity(diff / sigma), sigma


def generate(scenario: SimScenario, graph: RegionGraph | None = None) -> SimOutput:
    graph = reference_map() if graph is None else graph
    sc = scenario
    q = sc.q
    root = np.random.default_rng(sc.seed)
    s_field, s_counts = root.spawn(2)

    x = s_field.normal(sc.x_mean, sc.x_sd, size=graph.n)
    z, sigma = covariate_dissimilarity(graph, x)
    W = [adjacency_from_eta(graph, z, [sc.eta[d]]) for d in range(q)]
    dagars = [build_precision_eta(graph, z, [sc.eta[d]], sc.rho[d]) for d in range(q)]
    cov = build_covariance(
        sc.disease_graph, dagars, graph, A=sc.A, alpha=sc.alpha_pairs, rho_dis=sc.rho_dis
    )
    gamma = cov.sample(s_field)
    sd = cov.marginal_sd
    V = np.ones(sc.K)
    V[:-1] = s_field.beta(1.0, sc.alpha, size=sc.K - 1)
    theta = s_field.normal(0.0, 1.0 / np.sqrt(sc.tau_s), size=sc.K)
    cum = cumulative_weights(weights_from_sticks(V))
    labels = np.minimum(np.searchsorted(cum, ndtr(gamma / sd), side="left"), sc.K - 1)

    phi = theta[labels].reshape(q, graph.n).T
    rate = np.exp(np.asarray(sc.beta)[None, :] + phi)
    streams = s_counts.spawn(sc.replicates)
    y = np.stack([r.poisson(rate) for r in streams])
    return SimOutput(graph, sc, x, z, sigma, W, gamma, sd, V, theta, labels.astype(np.int64), y)


def true_boundaries(output: SimOutput, probe: Probe) -> np.ndarray:
    return output.truth(probe)
