"""Joint covariance of the latent field for the three disease-graph variants.

The latent vector is disease-major: entry ``d * n + i`` is region ``i`` of
disease ``d``. All quantities are computed from the per-disease DAGAR
factors; no ``N x N`` inverse is formed except in the ``*_dense`` helpers
(used by the single-site sweep and by tests).
"""

from __future__ import annotations

import math
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .dagar import DagarPrecision
from .graph import DiseaseGraphSpec, RegionGraph

LOG_2PI = math.log(2.0 * math.pi)


class GammaCovariance:
    """Common interface; subclasses fill in the factor algebra."""

    variant = ""

    def __init__(self, dagars: Sequence[DagarPrecision]):
        self.dagars = list(dagars)
        self.q = len(self.dagars)
        self.n = self.dagars[0].n
        self.N = self.n * self.q

    def _blocks(self, gamma: np.ndarray) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.N,):
            raise ValueError(f"gamma has shape {gamma.shape}, expected ({self.N},)")
        return gamma.reshape(self.q, self.n)

    def quadform(self, gamma: np.ndarray) -> float:
        raise NotImplementedError

    def logdet_precision(self) -> float:
        raise NotImplementedError

    def _marginal_var(self) -> np.ndarray:
        raise NotImplementedError

    @cached_property
    def marginal_sd(self) -> np.ndarray:
        return np.sqrt(self._marginal_var().ravel())

    def log_density(self, gamma: np.ndarray) -> float:
        return -0.5 * self.quadform(gamma) + 0.5 * self.logdet_precision() - 0.5 * self.N * LOG_2PI

    def precision_dense(self) -> np.ndarray:
        raise NotImplementedError

    def covariance_dense(self) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class UnstructuredCovariance(GammaCovariance):
    """``Sigma = (A kron I) [+) Q_d^{-1}] (A^T kron I)`` with ``A`` lower
    triangular."""

    variant = "unstructured"

    def __init__(self, A: np.ndarray, dagars: Sequence[DagarPrecision]):
        super().__init__(dagars)
        A = np.asarray(A, dtype=float)
        if A.shape != (self.q, self.q):
            raise ValueError("A must be q x q")
        if np.any(np.triu(A, 1) != 0):
            raise ValueError("A must be lower triangular")
        if np.any(np.diag(A) <= 0):
            raise ValueError("A must have a positive diagonal")
        self.A = A
        self.C = sla.solve_triangular(A, np.eye(self.q), lower=True)

    def quadform(self, gamma):
        f = self.C @ self._blocks(gamma)
        return sum(dg.quadform(f[d]) for d, dg in enumerate(self.dagars))

    def logdet_precision(self):
        return sum(dg.logdet() for dg in self.dagars) - 2.0 * self.n * float(
            np.sum(np.log(np.diag(self.A)))
        )

    def _marginal_var(self):
        cd = np.array([dg.cov_diag for dg in self.dagars])
        return (self.A**2) @ cd

    def precision_dense(self):
        qs = [dg.dense() for dg in self.dagars]
        out = np.zeros((self.N, self.N))
        n = self.n
        for d in range(self.q):
            for h in range(d, self.q):
                blk = sum(self.C[k, d] * self.C[k, h] * qs[k] for k in range(max(d, h), self.q))
                out[d * n : (d + 1) * n, h * n : (h + 1) * n] = blk
                out[h * n : (h + 1) * n, d * n : (d + 1) * n] = blk.T
        return out

    def covariance_dense(self):
        covs = [dg.cov_sqrt @ dg.cov_sqrt.T for dg in self.dagars]
        out = np.zeros((self.N, self.N))
        n = self.n
        for d in range(self.q):
            for h in range(self.q):
                blk = sum(self.A[d, k] * self.A[h, k] * covs[k] for k in range(min(d, h) + 1))
                out[d * n : (d + 1) * n, h * n : (h + 1) * n] = blk
        return out

    def sample(self, rng):
        f = np.array([dg.cov_sqrt @ rng.standard_normal(self.n) for dg in self.dagars])
        return (self.A @ f).ravel()


class DirectedCovariance(GammaCovariance):
    """Inter-disease DAG: ``gamma_d = sum_h A_dh gamma_h + f_d`` with
    ``A_dh = alpha0 I + alpha1 W`` for every parent ``h`` of ``d``.

    ``alpha`` is an ``(E, 2)`` array aligned with ``spec.parent_edges()``.
    ``W`` is the fixed symmetric geographic adjacency.
    """

    variant = "directed"

    def __init__(self, alpha, spec: DiseaseGraphSpec, W_geo: np.ndarray, dagars):
        super().__init__(dagars)
        self.spec = spec
        self.edges = spec.parent_edges()
        alpha = np.asarray(alpha, dtype=float).reshape(-1, 2)
        if alpha.shape[0] != len(self.edges):
            raise ValueError(f"expected {len(self.edges)} alpha pairs, got {alpha.shape[0]}")
        for d, h in self.edges:
            if h >= d:
                raise ValueError("cross-disease block placed on or above the diagonal")
        self.alpha = alpha
        self.W = np.asarray(W_geo, dtype=float)

    def _apply_A_rows(self, blocks: np.ndarray, d: int) -> np.ndarray:
        acc = np.zeros(self.n)
        for e, (dd, h) in enumerate(self.edges):
            if dd == d:
                a0, a1 = self.alpha[e]
                acc += a0 * blocks[h] + a1 * (self.W @ blocks[h])
        return acc

    def residual(self, gamma: np.ndarray) -> np.ndarray:
        g = self._blocks(gamma)
        return np.array([g[d] - self._apply_A_rows(g, d) for d in range(self.q)])

    def quadform(self, gamma):
        e = self.residual(gamma)
        return sum(dg.quadform(e[d]) for d, dg in enumerate(self.dagars))

    def logdet_precision(self):
        return sum(dg.logdet() for dg in self.dagars)

    def A_dense(self) -> np.ndarray:
        n = self.n
        A = np.zeros((self.N, self.N))
        eye = np.eye(n)
        for e, (d, h) in enumerate(self.edges):
            a0, a1 = self.alpha[e]
            A[d * n : (d + 1) * n, h * n : (h + 1) * n] += a0 * eye + a1 * self.W
        return A

    @cached_property
    def _G(self) -> np.ndarray:
        # (I - A)^{-1} by block forward substitution (A strictly block lower)
        n = self.n
        A = self.A_dense()
        G = np.zeros((self.N, self.N))
        for d in range(self.q):
            rows = slice(d * n, (d + 1) * n)
            G[rows, rows] = np.eye(n)
            G[rows, : d * n] = A[rows, : d * n] @ G[: d * n, : d * n]
        return G

    def _T(self) -> list[np.ndarray]:
        n = self.n
        return [self._G[:, k * n : (k + 1) * n] @ dg.cov_sqrt for k, dg in enumerate(self.dagars)]

    def _marginal_var(self):
        var = sum(np.einsum("ij,ij->i", t, t) for t in self._T())
        return var.reshape(self.q, self.n)

    def precision_dense(self):
        ima = np.eye(self.N) - self.A_dense()
        M = sla.block_diag(*[dg.dense() for dg in self.dagars])
        return ima.T @ M @ ima

    def covariance_dense(self):
        return sum(t @ t.T for t in self._T())

    def sample(self, rng):
        g = np.zeros((self.q, self.n))
        for d, dg in enumerate(self.dagars):
            g[d] = self._apply_A_rows(g, d) + dg.cov_sqrt @ rng.standard_normal(self.n)
        return g.ravel()

    def design(self, gamma: np.ndarray, d: int) -> np.ndarray:
        """Regressor matrix ``delta_d`` (n x 2|pa(d)|) such that
        ``gamma_d = delta_d @ alpha_d + f_d``; columns are
        ``(gamma_h, W gamma_h)`` for each parent ``h`` in order."""
        g = self._blocks(gamma)
        cols = []
        for dd, h in self.edges:
            if dd == d:
                cols += [g[h], self.W @ g[h]]
        return np.column_stack(cols) if cols else np.zeros((self.n, 0))


class UndirectedCovariance(GammaCovariance):
    """MCAR-type field with precision
    ``(+) R_d^T (Lambda_dis kron I) (+) R_d`` where
    ``Lambda_dis = D - rho_dis W_dis`` and ``R_d^T R_d = Q_d / lambda_dd``."""

    variant = "undirected"

    def __init__(self, rho_dis: float, spec: DiseaseGraphSpec, dagars):
        super().__init__(dagars)
        lo, hi = spec.rho_bounds()
        rho_dis = float(rho_dis)
        if not lo < rho_dis < hi:
            raise ValueError(f"rho_dis={rho_dis} outside the open interval ({lo:.6g}, {hi:.6g})")
        self.spec = spec
        self.rho_dis = rho_dis
        self.Lam = np.diag(spec.degrees) - rho_dis * spec.adjacency
        ldiag = np.diag(self.Lam)
        self.R = [dg.upper_cholesky / math.sqrt(ldiag[d]) for d, dg in enumerate(self.dagars)]

    def quadform(self, gamma):
        g = self._blocks(gamma)
        G = np.array([self.R[d] @ g[d] for d in range(self.q)])
        return float(np.sum(G * (self.Lam @ G)))

    def logdet_precision(self):
        ldiag = np.diag(self.Lam)
        _, ld = np.linalg.slogdet(self.Lam)
        return (
            sum(dg.logdet() for dg in self.dagars)
            - self.n * float(np.sum(np.log(ldiag)))
            + self.n * ld
        )

    def _marginal_var(self):
        linv = np.linalg.inv(self.Lam)
        cd = np.array([dg.cov_diag for dg in self.dagars])
        return (np.diag(linv) * np.diag(self.Lam))[:, None] * cd

    def precision_dense(self):
        n = self.n
        out = np.zeros((self.N, self.N))
        for d in range(self.q):
            for h in range(self.q):
                if self.Lam[d, h] != 0:
                    out[d * n : (d + 1) * n, h * n : (h + 1) * n] = (
                        self.Lam[d, h] * self.R[d].T @ self.R[h]
                    )
        return out

    def covariance_dense(self):
        n = self.n
        linv = np.linalg.inv(self.Lam)
        rinv = [sla.solve_triangular(r, np.eye(n), lower=False) for r in self.R]
        out = np.zeros((self.N, self.N))
        for d in range(self.q):
            for h in range(self.q):
                out[d * n : (d + 1) * n, h * n : (h + 1) * n] = linv[d, h] * rinv[d] @ rinv[h].T
        return out

    def sample(self, rng):
        c = np.linalg.cholesky(np.linalg.inv(self.Lam))
        w = c @ rng.standard_normal((self.q, self.n))
        return np.concatenate(
            [sla.solve_triangular(self.R[d], w[d], lower=False) for d in range(self.q)]
        )


def sigma_unstructured(A, dagars) -> UnstructuredCovariance:
    return UnstructuredCovariance(A, dagars)


def sigma_directed(alpha, spec: DiseaseGraphSpec, W_geo, dagars) -> DirectedCovariance:
    return DirectedCovariance(alpha, spec, W_geo, dagars)


def sigma_undirected(rho_dis, spec: DiseaseGraphSpec, dagars) -> UndirectedCovariance:
    return UndirectedCovariance(rho_dis, spec, dagars)


def build_covariance(
    spec: DiseaseGraphSpec,
    dagars: Sequence[DagarPrecision],
    graph: RegionGraph | None = None,
    *,
    A=None,
    alpha=None,
    rho_dis=None,
) -> GammaCovariance:
    if spec.variant == "unstructured":
        return UnstructuredCovariance(A, dagars)
    if spec.variant == "directed":
        return DirectedCovariance(alpha, spec, graph.adjacency(), dagars)
    return UndirectedCovariance(rho_dis, spec, dagars)


def gamma_log_density(gamma: np.ndarray, cov: GammaCovariance) -> float:
    return cov.log_density(gamma)


def marginal_sd(cov: GammaCovariance, index: int) -> float:
    return float(cov.marginal_sd[index])
