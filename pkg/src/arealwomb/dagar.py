"""DAGAR precision matrices with covariate-thresholded adjacency.

The precision of one disease field is ``Q = (I - B)^T Lambda (I - B)``
with ``B`` supported on the preceding-neighbour pairs that survive the
threshold ``exp(-z_ij . eta) >= 0.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .graph import RegionGraph

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class EdgeDissimilarity:
    """Non-negative dissimilarity covariates, one row per geographic edge.

    Row ``k`` belongs to ``graph.edges[k]`` (equivalently to the ordered
    pair ``graph.directed_pairs[k]``).
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("dissimilarities must be an (m, R) array")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("dissimilarity covariates must be finite and non-negative")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def R(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_pairs(cls, graph: RegionGraph, table: dict) -> "EdgeDissimilarity":
        """Build from ``{(i, j): vector}`` keyed by either orientation."""
        rows = []
        for a, b in graph.edges:
            if (a, b) in table:
                rows.append(np.atleast_1d(table[(a, b)]))
            elif (b, a) in table:
                rows.append(np.atleast_1d(table[(b, a)]))
            else:
                i, j = (a, b) if graph.order[a] > graph.order[b] else (b, a)
                raise KeyError(f"missing dissimilarity for preceding-neighbour pair ({i + 1}, {j + 1})")
        return cls(np.array(rows, dtype=float).reshape(graph.m, -1))

    def standardized(self) -> tuple["EdgeDissimilarity", np.ndarray]:
        """Divide every column by its sample standard deviation."""
        scale = self.values.std(axis=0, ddof=1) if self.values.shape[0] > 1 else np.ones(self.R)
        scale = np.where(scale > 0, scale, 1.0)
        return EdgeDissimilarity(self.values / scale), scale


def eta_upper_bound(z: EdgeDissimilarity) -> np.ndarray:
    """Per-column upper limit ``M_r = log 2 / median(z_r)``."""
    med = np.median(z.values, axis=0)
    if np.any(med <= 0):
        raise ValueError("median dissimilarity is zero; the eta upper bound is undefined")
    return LOG2 / med


def edge_mask(z: EdgeDissimilarity, eta) -> np.ndarray:
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if eta.shape != (z.R,):
        raise ValueError(f"eta has {eta.size} components, dissimilarities have {z.R}")
    if np.any(eta < 0):
        raise ValueError("eta components must be non-negative")
    return np.exp(-(z.values @ eta)) >= 0.5


def adjacency_from_eta(graph: RegionGraph, z: EdgeDissimilarity, eta) -> np.ndarray:
    """Binary ``W`` with ``w_ij = 1`` iff ``j`` precedes ``i``, ``i ~ j`` and
    ``exp(-z_ij . eta) >= 0.5``."""
    if z.values.shape[0] != graph.m:
        raise ValueError("dissimilarities do not cover every geographic edge")
    keep = edge_mask(z, eta)
    w = np.zeros((graph.n, graph.n), dtype=np.int8)
    p = graph.directed_pairs[keep]
    w[p[:, 0], p[:, 1]] = 1
    return w


@dataclass(frozen=True, eq=False)
class DagarPrecision:
    """Factorised DAGAR precision for one disease."""

    rho: float
    n: int
    order: np.ndarray
    pairs: np.ndarray  # (k, 2) surviving (child, parent) pairs
    b: np.ndarray  # (k,) entries of B on those pairs
    lam: np.ndarray  # (n,) diagonal of Lambda

    @property
    def W(self) -> np.ndarray:
        w = np.zeros((self.n, self.n), dtype=np.int8)
        w[self.pairs[:, 0], self.pairs[:, 1]] = 1
        return w

    @cached_property
    def B(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.b, (self.pairs[:, 0], self.pairs[:, 1])), shape=(self.n, self.n))

    @cached_property
    def Q(self) -> sp.csr_matrix:
        imb = sp.identity(self.n, format="csr") - self.B
        return (imb.T @ sp.diags(self.lam) @ imb).tocsr()

    @cached_property
    def _imb_dense(self) -> np.ndarray:
        imb = np.eye(self.n)
        imb[self.pairs[:, 0], self.pairs[:, 1]] -= self.b
        return imb

    def dense(self) -> np.ndarray:
        # dense assembly avoids sparse-matrix overhead, which dominates at small n
        imb = self._imb_dense
        return imb.T @ (self.lam[:, None] * imb)

    def residual(self, x: np.ndarray) -> np.ndarray:
        """``(I - B) x`` for a vector ``x``."""
        bx = np.bincount(self.pairs[:, 0], weights=self.b * x[self.pairs[:, 1]], minlength=self.n)
        return x - bx

    def quadform(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return float(np.dot(self.lam * r, r))

    def logdet(self) -> float:
        return float(np.sum(np.log(self.lam)))

    @cached_property
    def inv_factor(self) -> np.ndarray:
        """Dense ``(I - B)^{-1}``; unit lower triangular in topological order."""
        perm = np.argsort(self.order)
        imb = self._imb_dense
        lp = sla.solve_triangular(
            imb[np.ix_(perm, perm)], np.eye(self.n), lower=True, unit_diagonal=True
        )
        out = np.empty_like(lp)
        out[np.ix_(perm, perm)] = lp
        return out

    @cached_property
    def cov_sqrt(self) -> np.ndarray:
        """``S`` with ``S S^T = Q^{-1}``."""
        return self.inv_factor / np.sqrt(self.lam)[None, :]

    @cached_property
    def cov_diag(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.cov_sqrt, self.cov_sqrt)

    @cached_property
    def upper_cholesky(self) -> np.ndarray:
        """Upper-triangular ``U`` with ``U^T U = Q`` (region index order)."""
        return sla.cholesky(self.dense(), lower=False)


def _from_mask(graph: RegionGraph, keep: np.ndarray, rho: float) -> DagarPrecision:
    rho = float(rho)
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    pairs = graph.directed_pairs[np.asarray(keep, dtype=bool)]
    npre = np.bincount(pairs[:, 0], minlength=graph.n).astype(float)
    r2 = rho * rho
    denom = 1.0 + (npre - 1.0) * r2
    lam = denom / (1.0 - r2)
    b = rho / denom[pairs[:, 0]]
    for arr in (pairs, b, lam):
        arr.setflags(write=False)
    return DagarPrecision(rho, graph.n, graph.order, pairs, b, lam)


def build_precision(graph: RegionGraph, W: np.ndarray, rho: float) -> DagarPrecision:
    """Modified DAGAR precision for adjacency ``W`` and correlation ``rho``."""
    W = np.asarray(W)
    if W.shape != (graph.n, graph.n):
        raise ValueError("W must be n x n")
    p = graph.directed_pairs
    keep = W[p[:, 0], p[:, 1]] != 0
    if int(np.count_nonzero(W)) != int(keep.sum()):
        raise ValueError("W has entries outside the preceding-neighbour pairs of the graph")
    return _from_mask(graph, keep, rho)


def build_precision_eta(graph: RegionGraph, z: EdgeDissimilarity, eta, rho: float) -> DagarPrecision:
    return _from_mask(graph, edge_mask(z, eta), rho)


def full_precision(graph: RegionGraph, rho: float) -> DagarPrecision:
    """Unmodified DAGAR (every preceding neighbour kept)."""
    return _from_mask(graph, np.ones(graph.m, dtype=bool), rho)


def log_det_precision(p: DagarPrecision) -> float:
    return p.logdet()
