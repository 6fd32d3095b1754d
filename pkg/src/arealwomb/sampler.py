"""Blocked Metropolis-within-Gibbs sampler.

One iteration updates, in order: regression coefficients, atoms, latent
field (single-site), stick fractions, atom precision, per-disease spatial
correlation, adjacency thresholds, and the cross-disease parameters.

Moves that change the marginal standard deviations of the latent field
(spatial correlation, thresholds, cross-disease map) rescale ``gamma`` so
that ``gamma / sd`` stays fixed. Cluster labels, and therefore the
likelihood, are then untouched by the move; the acceptance ratio carries
the Jacobian ``prod(sd* / sd)`` of the rescaling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import expit, gammaln, logit

from . import _kernels
from .covariance import (
    DirectedCovariance,
    GammaCovariance,
    UndirectedCovariance,
    UnstructuredCovariance,
)
from .dagar import DagarPrecision, build_precision_eta, edge_mask, eta_upper_bound
from .data import ObservedData, check_dissimilarity_cover
from .graph import DiseaseGraphSpec, RegionGraph
from .stickbreaking import cumulative_weights, weights_from_sticks

log = logging.getLogger(__name__)

BLOCKS = ("beta", "theta", "gamma", "V", "tau_s", "rho", "eta", "cross")
ADAPTIVE = ("beta", "theta", "V", "rho", "eta")


def poisson_loglik(y, E, x, beta, phi) -> float:
    """Poisson log-likelihood with offset ``log E`` summed over cells.

    ``y, E, phi`` are ``(n, q)``; ``x`` is ``(n, q, p)``; ``beta`` is ``(q, p)``.
    """
    y = np.asarray(y, dtype=float)
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        raise ValueError("expected counts must be positive")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("counts must be non-negative integers")
    eta = np.einsum("idp,dp->id", np.asarray(x, dtype=float), np.asarray(beta, dtype=float)) + phi
    if not np.all(np.isfinite(eta)):
        raise FloatingPointError("non-finite linear predictor")
    lin = np.log(E) + eta
    return float(np.sum(y * lin - np.exp(lin) - gammaln(y + 1.0)))


@dataclass
class PriorSpec:
    """Prior hyperparameters.

    ``sigma2_beta`` may be a scalar or a ``(p,)`` diagonal. ``eta_upper`` is
    a per-disease list of ``M_r`` vectors; ``None`` derives them from the
    dissimilarities. ``psi`` defaults to ``0.1 I``.
    """

    sigma2_beta: float | np.ndarray = 1.0
    a_s: float = 2.0
    b_s: float = 1.0
    alpha: float = 1.0
    eta_upper: list[np.ndarray] | None = None
    nu: float = 2.0
    psi: np.ndarray | None = None
    alpha_mean: float = 0.0
    alpha_var: float = 100.0

    def __post_init__(self):
        s2 = np.atleast_1d(np.asarray(self.sigma2_beta, dtype=float))
        if np.any(s2 <= 0):
            raise ValueError("sigma2_beta must be positive")
        for name in ("a_s", "b_s", "alpha", "nu", "alpha_var"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.eta_upper is not None:
            self.eta_upper = [np.atleast_1d(np.asarray(m, dtype=float)) for m in self.eta_upper]
            if any(np.any(m <= 0) for m in self.eta_upper):
                raise ValueError("eta upper bounds must be positive")

    def psi_matrix(self, q: int) -> np.ndarray:
        if self.psi is None:
            return 0.1 * np.eye(q)
        psi = np.asarray(self.psi, dtype=float)
        if psi.ndim == 1:
            psi = np.diag(psi)
        if psi.shape != (q, q):
            raise ValueError("psi must be q x q")
        return psi


@dataclass
class ChainConfig:
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 1
    seed: int = 0
    K: int = 15
    step_beta: float = 0.1
    step_theta: float = 0.5
    step_gamma: float = 0.1
    step_V: float = 0.5
    step_rho: float = 0.5
    step_eta: float = 0.5
    step_a_diag: float = 0.05
    step_a_off: float = 0.05
    step_rho_dis: float = 0.5
    target_scalar: float = 0.44
    target_multi: float = 0.234
    adapt_scale: float = 1.0
    adapt_exponent: float = 0.6
    update: tuple[str, ...] = BLOCKS
    record_proposals: bool = False

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("iterations and burn-in must be non-negative, thinning >= 1")
        if self.burn_in > self.iterations or (self.iterations > 0 and self.burn_in == self.iterations):
            raise ValueError("burn-in must be smaller than the iteration count")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        for k, v in vars(self).items():
            if k.startswith("step_") and v <= 0:
                raise ValueError(f"{k} must be positive")
        unknown = set(self.update) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown blocks {sorted(unknown)}")

    @property
    def n_keep(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ModelState:
    beta: np.ndarray  # (q, p)
    theta: np.ndarray  # (K,)
    tau_s: float
    V: np.ndarray  # (K,)
    gamma: np.ndarray  # (N,) disease-major
    labels: np.ndarray  # (N,)
    rho: np.ndarray  # (q,)
    eta: list[np.ndarray]
    A: np.ndarray | None = None
    alpha: np.ndarray | None = None
    rho_dis: float | None = None

    @property
    def phi(self) -> np.ndarray:
        return self.theta[self.labels]

    def copy(self) -> "ModelState":
        return ModelState(
            self.beta.copy(),
            self.theta.copy(),
            self.tau_s,
            self.V.copy(),
            self.gamma.copy(),
            self.labels.copy(),
            self.rho.copy(),
            [e.copy() for e in self.eta],
            None if self.A is None else self.A.copy(),
            None if self.alpha is None else self.alpha.copy(),
            self.rho_dis,
        )


@dataclass
class PosteriorSamples:
    """Retained draws. Leading axis is the draw index."""

    variant: str
    n: int
    q: int
    K: int
    beta: np.ndarray
    theta: np.ndarray
    tau_s: np.ndarray
    V: np.ndarray
    gamma: np.ndarray
    labels: np.ndarray
    rho: np.ndarray
    eta: list[np.ndarray]
    cross: np.ndarray  # (S, q, q) | (S, E, 2) | (S,)
    acceptance: dict[str, float]
    step_sizes: dict[str, np.ndarray]
    seed: int = 0
    proposals: list[dict] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    @property
    def phi(self) -> np.ndarray:
        rows = np.arange(self.size)[:, None]
        return self.theta[rows, self.labels]

    def labels_nq(self) -> np.ndarray:
        """Labels as ``(S, q, n)``."""
        return self.labels.reshape(self.size, self.q, self.n)


def _init_cross(variant: str, spec: DiseaseGraphSpec):
    if variant == "unstructured":
        return {"A": np.eye(spec.q)}
    if variant == "directed":
        return {"alpha": np.zeros((len(spec.parent_edges()), 2))}
    return {"rho_dis": 0.0}


def log_prior_A(A: np.ndarray, nu: float, psi: np.ndarray) -> float:
    """Inverse-Wishart density of ``A A^T`` (unnormalised) plus the
    Cholesky-map Jacobian ``2^q prod a_dd^{q-d+1}``."""
    q = A.shape[0]
    diag = np.diag(A)
    if np.any(diag <= 0):
        return -np.inf
    logdet = 2.0 * np.sum(np.log(diag))
    C = sla.solve_triangular(A, np.eye(q), lower=True)
    trace = float(np.sum(C * (C @ psi)))  # tr(psi (A A^T)^{-1}) = tr(C psi C^T)
    jac = q * math.log(2.0) + float(np.sum((q - np.arange(q)) * np.log(diag)))
    return -0.5 * (nu + q + 1.0) * logdet - 0.5 * trace + jac


class Sampler:
    """State and step functions for one chain."""

    def __init__(
        self,
        data: ObservedData,
        graph: RegionGraph,
        spec: DiseaseGraphSpec,
        priors: PriorSpec | None = None,
        config: ChainConfig | None = None,
        state: ModelState | None = None,
    ):
        self.data = data
        self.graph = graph
        self.spec = spec
        self.priors = priors or PriorSpec()
        self.config = config or ChainConfig()
        if spec.q != data.q or graph.n != data.n:
            raise ValueError("data, region graph and disease graph disagree on n or q")
        check_dissimilarity_cover(graph, data.z)
        self.variant = spec.variant
        self.n, self.q, self.p = data.n, data.q, data.p
        self.N = self.n * self.q
        self.K = self.config.K
        self.rng = np.random.default_rng(self.config.seed)
        self.W_geo = graph.adjacency().astype(float)

        fl = data.flat()
        self.y, self.obs, self.logE, self.X, self.lgy = fl["y"], fl["obs"], fl["logE"], fl["X"], fl["lgy"]
        self.dis = fl["disease"]
        self.y_obs = self.y[self.obs]

        M = self.priors.eta_upper
        if M is None:
            M = [eta_upper_bound(z) for z in data.z]
        if len(M) != self.q or any(m.shape != (z.R,) for m, z in zip(M, data.z)):
            raise ValueError("eta upper bounds do not match the dissimilarity columns")
        self.M = M
        s2 = np.atleast_1d(np.asarray(self.priors.sigma2_beta, dtype=float))
        self.s2beta = np.broadcast_to(s2, (self.p,)).copy()
        self.psi = self.priors.psi_matrix(self.q)
        self.rho_dis_bounds = spec.rho_bounds() if self.variant == "undirected" else None

        if state is None:
            state = self.initial_state()
        self.state = state
        self._rebuild_all()

        cfg = self.config
        self.log_step = {
            "beta": np.full(self.q, math.log(cfg.step_beta)),
            "theta": np.full(self.K, math.log(cfg.step_theta)),
            "V": np.full(max(self.K - 1, 0), math.log(cfg.step_V)),
            "rho": np.full(self.q, math.log(cfg.step_rho)),
            "eta": np.full(self.q, math.log(cfg.step_eta)),
        }
        self.target = {
            "beta": cfg.target_scalar if self.p == 1 else cfg.target_multi,
            "theta": cfg.target_scalar,
            "V": cfg.target_scalar,
            "rho": cfg.target_scalar,
            "eta": np.array([cfg.target_scalar if z.R == 1 else cfg.target_multi for z in data.z]),
        }
        self.accepted = {b: 0 for b in BLOCKS}
        self.proposed = {b: 0 for b in BLOCKS}
        self.iteration = 0
        self.adapting = True
        self.proposals: list[dict] = []

        lp = self.log_posterior()
        if not np.isfinite(lp):
            raise FloatingPointError("non-finite posterior at initialisation")

    # --- initial state and caches --------------------------------------------

    def initial_state(self) -> ModelState:
        cross = _init_cross(self.variant, self.spec)
        V = np.full(self.K, 0.5)
        V[-1] = 1.0
        return ModelState(
            beta=np.zeros((self.q, self.p)),
            theta=self.rng.standard_normal(self.K),
            tau_s=1.0,
            V=V,
            gamma=np.zeros(self.N),
            labels=np.zeros(self.N, dtype=np.int64),
            rho=np.full(self.q, 0.5),
            eta=[m / 2.0 for m in self.M],
            **cross,
        )

    def _dagar(self, d: int, rho: float, eta) -> DagarPrecision:
        return build_precision_eta(self.graph, self.data.z[d], eta, rho)

    def _cov(self, dagars, A=None, alpha=None, rho_dis=None) -> GammaCovariance:
        s = self.state
        if self.variant == "unstructured":
            return UnstructuredCovariance(s.A if A is None else A, dagars)
        if self.variant == "directed":
            return DirectedCovariance(s.alpha if alpha is None else alpha, self.spec, self.W_geo, dagars)
        return UndirectedCovariance(s.rho_dis if rho_dis is None else rho_dis, self.spec, dagars)

    def _rebuild_all(self):
        s = self.state
        self.dagars = [self._dagar(d, s.rho[d], s.eta[d]) for d in range(self.q)]
        self.cov = self._cov(self.dagars)
        self.sd = self.cov.marginal_sd
        self._prec = None
        self._refresh_lin()
        s.labels = self.assign(s.gamma, self.sd, s.V)

    def _refresh_lin(self):
        self.lin = self.logE + np.sum(self.X * self.state.beta[self.dis], axis=1)

    def assign(self, gamma, sd, V) -> np.ndarray:
        cum = cumulative_weights(weights_from_sticks(V))
        return _kernels.assign_labels(np.ascontiguousarray(gamma / sd), cum)

    # --- densities -----------------------------------------------------------

    def loglik_cells(self, labels=None, theta=None, lin=None) -> np.ndarray:
        s = self.state
        labels = s.labels if labels is None else labels
        theta = s.theta if theta is None else theta
        lin = self.lin if lin is None else lin
        eta = lin + theta[labels]
        with np.errstate(over="ignore", invalid="ignore"):
            out = self.y * eta - np.exp(eta) - self.lgy
        return np.where(self.obs, out, 0.0)

    def loglik(self, labels=None, theta=None, lin=None) -> float:
        return float(np.sum(self.loglik_cells(labels, theta, lin)))

    def log_posterior(self) -> float:
        """Unnormalised log joint density at the current state."""
        s, pr = self.state, self.priors
        lp = self.loglik()
        lp += -0.5 * float(np.sum(s.beta**2 / self.s2beta))
        lp += 0.5 * self.K * math.log(s.tau_s) - 0.5 * s.tau_s * float(np.sum(s.theta**2))
        lp += (pr.a_s - 1.0) * math.log(s.tau_s) - pr.b_s * s.tau_s
        lp += (pr.alpha - 1.0) * float(np.sum(np.log1p(-s.V[:-1])))
        lp += self.cov.log_density(s.gamma)
        if self.variant == "unstructured":
            lp += log_prior_A(s.A, pr.nu, self.psi)
        elif self.variant == "directed":
            lp += -0.5 * float(np.sum((s.alpha - pr.alpha_mean) ** 2)) / pr.alpha_var
        return lp

    def _gamma_term(self, cov: GammaCovariance, gamma: np.ndarray) -> float:
        return -0.5 * cov.quadform(gamma) + 0.5 * cov.logdet_precision()

    # --- bookkeeping ----------------------------------------------------------

    def _count(self, block: str, acc: int, prop: int = 1):
        self.accepted[block] += int(acc)
        self.proposed[block] += int(prop)

    def _adapt(self, block: str, idx, log_ratio):
        if not self.adapting or block not in ADAPTIVE:
            return
        t = max(self.iteration, 1)
        gain = self.config.adapt_scale * t ** (-self.config.adapt_exponent)
        a = np.exp(np.minimum(0.0, np.nan_to_num(log_ratio, nan=-np.inf)))
        tgt = self.target[block]
        tgt = tgt[idx] if isinstance(tgt, np.ndarray) else tgt
        self.log_step[block][idx] = np.clip(self.log_step[block][idx] + gain * (a - tgt), -12.0, 4.0)

    def _record(self, block, index, current, proposed, log_ratio, **extra):
        if self.config.record_proposals:
            rec = {
                "iteration": self.iteration,
                "block": block,
                "index": index,
                "current": np.array(current, dtype=float, copy=True),
                "proposed": np.array(proposed, dtype=float, copy=True),
                "log_ratio": float(log_ratio),
            }
            rec.update(extra)
            self.proposals.append(rec)

    def _accept(self, log_ratio: float) -> bool:
        if not np.isfinite(log_ratio):
            if np.isnan(log_ratio) or log_ratio > 0:
                log.warning("non-finite acceptance ratio in iteration %d; proposal rejected", self.iteration)
            return False
        return math.log(self.rng.random()) < log_ratio

    # --- step 1: regression coefficients ---------------------------------------

    def step_beta(self):
        s = self.state
        step = np.exp(self.log_step["beta"])
        prop = s.beta + step[:, None] * self.rng.standard_normal((self.q, self.p))
        lin_new = self.logE + np.sum(self.X * prop[self.dis], axis=1)
        th = s.theta[s.labels]
        with np.errstate(over="ignore", invalid="ignore"):
            cell = self.y * (lin_new - self.lin) - (np.exp(lin_new + th) - np.exp(self.lin + th))
        cell = np.where(self.obs, cell, 0.0)
        dll = np.bincount(self.dis, weights=cell, minlength=self.q)
        dprior = -0.5 * np.sum((prop**2 - s.beta**2) / self.s2beta, axis=1)
        lr = dll + dprior
        acc = np.array([self._accept(v) for v in lr])
        for d in range(self.q):
            self._record("beta", d, s.beta[d], prop[d], lr[d])
        s.beta = np.where(acc[:, None], prop, s.beta)
        self._count("beta", acc.sum(), self.q)
        self._adapt("beta", slice(None), lr)
        self._refresh_lin()

    # --- step 2: atoms -----------------------------------------------------------

    def _atom_stats(self):
        s = self.state
        lab = s.labels[self.obs]
        Sy = np.bincount(lab, weights=self.y_obs, minlength=self.K)
        Se = np.bincount(lab, weights=np.exp(self.lin[self.obs]), minlength=self.K)
        return Sy, Se

    def step_theta(self):
        s = self.state
        Sy, Se = self._atom_stats()
        step = np.exp(self.log_step["theta"])
        prop = s.theta + step * self.rng.standard_normal(self.K)
        with np.errstate(over="ignore", invalid="ignore"):
            dll = Sy * (prop - s.theta) - Se * (np.exp(prop) - np.exp(s.theta))
        lr = dll - 0.5 * s.tau_s * (prop**2 - s.theta**2)
        acc = np.array([self._accept(v) for v in lr])
        for k in range(self.K):
            self._record("theta", k, s.theta[k], prop[k], lr[k])
        s.theta = np.where(acc, prop, s.theta)
        self._count("theta", acc.sum(), self.K)
        self._adapt("theta", slice(None), lr)

    # --- step 3: latent field -----------------------------------------------------

    @property
    def prec(self) -> np.ndarray:
        if self._prec is None:
            self._prec = np.ascontiguousarray(self.cov.precision_dense())
        return self._prec

    def step_gamma(self):
        s = self.state
        prec = self.prec
        pg = prec @ s.gamma
        cum = cumulative_weights(weights_from_sticks(s.V))
        step = np.full(self.N, self.config.step_gamma)
        normals = self.rng.standard_normal(self.N)
        logu = np.log(self.rng.random(self.N))
        gamma = s.gamma.copy()
        labels = s.labels.astype(np.int64).copy()
        acc = _kernels.gamma_sweep(
            gamma, pg, prec, self.sd, cum, s.theta, self.lin, self.y,
            self.obs, step, normals, logu, labels,
        )
        s.gamma, s.labels = gamma, labels
        self._count("gamma", acc, self.N)

    # --- step 4: stick fractions ----------------------------------------------------

    def step_V(self):
        s = self.state
        if self.K < 2:
            return
        zstd = np.ascontiguousarray(s.gamma / self.sd)
        with np.errstate(over="ignore", invalid="ignore"):
            table = self.y[:, None] * s.theta[None, :] - np.exp(self.lin)[:, None] * np.exp(s.theta)[None, :]
        table[~self.obs] = 0.0
        rows = np.arange(self.N)
        ll = float(table[rows, s.labels].sum())
        step = np.exp(self.log_step["V"])
        am1 = self.priors.alpha - 1.0
        lrs = np.empty(self.K - 1)
        for k in range(self.K - 1):
            v = s.V[k]
            vk = expit(logit(v) + step[k] * self.rng.standard_normal())
            if not 0.0 < vk < 1.0:
                lrs[k] = -np.inf
                continue
            Vp = s.V.copy()
            Vp[k] = vk
            lab = _kernels.assign_labels(zstd, cumulative_weights(weights_from_sticks(Vp)))
            llp = float(table[rows, lab].sum())
            lr = (llp - ll) + am1 * (math.log1p(-vk) - math.log1p(-v))
            lr += math.log(vk) + math.log1p(-vk) - math.log(v) - math.log1p(-v)
            lrs[k] = lr
            self._record("V", k, v, vk, lr)
            if self._accept(lr):
                s.V, s.labels, ll = Vp, lab, llp
                self._count("V", 1)
            else:
                self._count("V", 0)
        self._adapt("V", slice(None), lrs)

    # --- step 5: atom precision --------------------------------------------------------

    def step_tau_s(self):
        s = self.state
        shape = self.priors.a_s + 0.5 * self.K
        rate = self.priors.b_s + 0.5 * float(np.sum(s.theta**2))
        s.tau_s = float(self.rng.gamma(shape, 1.0 / rate))
        self._count("tau_s", 1)

    # --- shared machinery for sd-changing moves --------------------------------------------

    def _rescaled_ratio(self, cov_new: GammaCovariance):
        """Log target ratio for swapping in ``cov_new`` with ``gamma / sd`` fixed."""
        s = self.state
        sd_new = cov_new.marginal_sd
        g_new = s.gamma * (sd_new / self.sd)
        lr = self._gamma_term(cov_new, g_new) - self._gamma_term(self.cov, s.gamma)
        lr += float(np.sum(np.log(sd_new)) - np.sum(np.log(self.sd)))
        return lr, g_new, sd_new

    def _commit(self, cov_new, g_new, sd_new, dagars=None):
        s = self.state
        if dagars is not None:
            self.dagars = dagars
        self.cov = cov_new
        self.sd = sd_new
        s.gamma = g_new
        self._prec = None
        lab = self.assign(s.gamma, self.sd, s.V)
        if np.any(lab != s.labels):
            # only possible through rounding exactly at a cell boundary
            log.debug("label drift after rescaling at %d sites", int(np.sum(lab != s.labels)))
            s.labels = lab

    # --- step 6: spatial correlation ----------------------------------------------------------

    def step_rho(self):
        s = self.state
        step = np.exp(self.log_step["rho"])
        lrs = np.empty(self.q)
        for d in range(self.q):
            r = s.rho[d]
            x = logit(r)
            rp = float(expit(x + step[d] * self.rng.standard_normal()))
            if not 0.0 < rp < 1.0:
                lrs[d] = -np.inf
                self._count("rho", 0)
                continue
            dagars = list(self.dagars)
            dagars[d] = self._dagar(d, rp, s.eta[d])
            cov_new = self._cov(dagars)
            lr, g_new, sd_new = self._rescaled_ratio(cov_new)
            lr += math.log(rp) + math.log1p(-rp) - math.log(r) - math.log1p(-r)
            lrs[d] = lr
            self._record("rho", d, r, rp, lr, gamma=s.gamma)
            if self._accept(lr):
                s.rho[d] = rp
                self._commit(cov_new, g_new, sd_new, dagars)
                self._count("rho", 1)
            else:
                self._count("rho", 0)
        self._adapt("rho", slice(None), lrs)

    # --- step 7: adjacency thresholds ------------------------------------------------------------

    def step_eta(self):
        s = self.state
        step = np.exp(self.log_step["eta"])
        lrs = np.empty(self.q)
        for d in range(self.q):
            M = self.M[d]
            e = s.eta[d]
            x = np.log(e) - np.log(M - e)
            xp = x + step[d] * self.rng.standard_normal(e.size)
            ep = M * expit(xp)
            if np.any(ep <= 0) or np.any(ep >= M):
                lrs[d] = -np.inf
                self._count("eta", 0)
                continue
            jac = float(np.sum(np.log(ep) + np.log(M - ep) - np.log(e) - np.log(M - e)))
            same = np.array_equal(edge_mask(self.data.z[d], ep), edge_mask(self.data.z[d], e))
            if same:
                lr, cov_new, g_new, sd_new, dagars = jac, None, None, None, None
            else:
                dagars = list(self.dagars)
                dagars[d] = self._dagar(d, s.rho[d], ep)
                cov_new = self._cov(dagars)
                lr, g_new, sd_new = self._rescaled_ratio(cov_new)
                lr += jac
            lrs[d] = lr
            self._record("eta", d, e, ep, lr, gamma=s.gamma)
            if self._accept(lr):
                s.eta[d] = ep
                if not same:
                    self._commit(cov_new, g_new, sd_new, dagars)
                self._count("eta", 1)
            else:
                self._count("eta", 0)
        self._adapt("eta", slice(None), lrs)

    # --- step 8: cross-disease parameters ----------------------------------------------------------

    def step_cross(self):
        if self.variant == "unstructured":
            self._step_A()
        elif self.variant == "directed":
            self._step_alpha()
        else:
            self._step_rho_dis()

    def _step_A(self):
        s, cfg = self.state, self.config
        A = s.A
        Ap = A.copy()
        diag = np.arange(self.q)
        Ap[diag, diag] = A[diag, diag] * np.exp(cfg.step_a_diag * self.rng.standard_normal(self.q))
        low = np.tril_indices(self.q, -1)
        Ap[low] = A[low] + cfg.step_a_off * self.rng.standard_normal(len(low[0]))
        cov_new = self._cov(self.dagars, A=Ap)
        lr, g_new, sd_new = self._rescaled_ratio(cov_new)
        lr += log_prior_A(Ap, self.priors.nu, self.psi) - log_prior_A(A, self.priors.nu, self.psi)
        lr += float(np.sum(np.log(np.diag(Ap))) - np.sum(np.log(np.diag(A))))
        self._record("cross", 0, A, Ap, lr, gamma=s.gamma)
        if self._accept(lr):
            s.A = Ap
            self._commit(cov_new, g_new, sd_new)
            self._count("cross", 1)
        else:
            self._count("cross", 0)

    def alpha_conditional(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean ``H h`` and covariance ``H`` of the Gaussian full conditional of
        disease ``d``'s alpha pairs given the latent field."""
        s, pr = self.state, self.priors
        delta = self.cov.design(s.gamma, d)
        Qd = self.dagars[d].Q
        QD = Qd @ delta
        k = delta.shape[1]
        P = delta.T @ QD + np.eye(k) / pr.alpha_var
        h = QD.T @ s.gamma[d * self.n : (d + 1) * self.n] + pr.alpha_mean / pr.alpha_var
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"ill-conditioned design for disease {d + 1}") from exc
        H = sla.cho_solve((L, True), np.eye(k))
        return H @ h, H

    def _step_alpha(self):
        s = self.state
        edges = self.cov.edges
        for d in range(self.q):
            rows = [e for e, (dd, _) in enumerate(edges) if dd == d]
            if not rows:
                continue
            mean, H = self.alpha_conditional(d)
            L = np.linalg.cholesky(H)
            draw = mean + L @ self.rng.standard_normal(mean.size)
            alpha_p = s.alpha.copy()
            alpha_p[rows] = draw.reshape(-1, 2)
            cov_new = self._cov(self.dagars, alpha=alpha_p)
            sd_new = cov_new.marginal_sd
            lab = self.assign(s.gamma, sd_new, s.V)
            lr = self.loglik(labels=lab) - self.loglik()
            self._record("cross", d, s.alpha[rows], alpha_p[rows], lr)
            if self._accept(lr):
                s.alpha = alpha_p
                self.cov, self.sd, s.labels = cov_new, sd_new, lab
                self._prec = None
                self._count("cross", 1)
            else:
                self._count("cross", 0)

    def _step_rho_dis(self):
        s, cfg = self.state, self.config
        lo, hi = self.rho_dis_bounds
        r = s.rho_dis
        x = math.log((r - lo) / (hi - r))
        xp = x + cfg.step_rho_dis * self.rng.standard_normal()
        rp = lo + (hi - lo) * float(expit(xp))
        if not lo < rp < hi:
            self._count("cross", 0)
            return
        cov_new = self._cov(self.dagars, rho_dis=rp)
        lr, g_new, sd_new = self._rescaled_ratio(cov_new)
        lr += math.log(rp - lo) + math.log(hi - rp) - math.log(r - lo) - math.log(hi - r)
        self._record("cross", 0, r, rp, lr, gamma=s.gamma)
        if self._accept(lr):
            s.rho_dis = rp
            self._commit(cov_new, g_new, sd_new)
            self._count("cross", 1)
        else:
            self._count("cross", 0)

    # --- driver -------------------------------------------------------------------------------

    def iterate(self):
        self.iteration += 1
        upd = self.config.update
        if "beta" in upd:
            self.step_beta()
        if "theta" in upd:
            self.step_theta()
        if "gamma" in upd:
            self.step_gamma()
        if "V" in upd:
            self.step_V()
        if "tau_s" in upd:
            self.step_tau_s()
        if "rho" in upd:
            self.step_rho()
        if "eta" in upd:
            self.step_eta()
        if "cross" in upd:
            self.step_cross()

    def check_state(self, atol: float = 0.0) -> None:
        s = self.state
        lab = self.assign(s.gamma, self.sd, s.V)
        if np.any(lab != s.labels):
            raise AssertionError("labels inconsistent with (gamma, V)")
        if not np.allclose(self.cov.marginal_sd, self.sd, rtol=0, atol=atol):
            raise AssertionError("cached marginal sd is stale")

    def cross_value(self) -> np.ndarray:
        s = self.state
        if self.variant == "unstructured":
            return s.A.copy()
        if self.variant == "directed":
            return s.alpha.copy()
        return np.array(s.rho_dis)

    def step_sizes(self) -> dict[str, np.ndarray]:
        return {b: np.exp(v) for b, v in self.log_step.items()}

    def run(self) -> PosteriorSamples:
        cfg = self.config
        S = cfg.n_keep
        q, n, K, p = self.q, self.n, self.K, self.p
        out = {
            "beta": np.empty((S, q, p)),
            "theta": np.empty((S, K)),
            "tau_s": np.empty(S),
            "V": np.empty((S, K)),
            "gamma": np.empty((S, self.N)),
            "labels": np.empty((S, self.N), dtype=np.int16 if K < 32000 else np.int64),
            "rho": np.empty((S, q)),
            "eta": [np.empty((S, z.R)) for z in self.data.z],
            "cross": np.empty((S,) + np.shape(self.cross_value())),
        }
        steps = {b: np.empty((S,) + v.shape) for b, v in self.log_step.items()}
        post_acc = {b: 0 for b in BLOCKS}
        post_prop = {b: 0 for b in BLOCKS}
        j = 0
        for t in range(cfg.iterations):
            if t == cfg.burn_in:
                self.adapting = False
                post_acc = dict(self.accepted)
                post_prop = dict(self.proposed)
            self.iterate()
            if t >= cfg.burn_in and (t - cfg.burn_in + 1) % cfg.thin == 0 and j < S:
                s = self.state
                out["beta"][j] = s.beta
                out["theta"][j] = s.theta
                out["tau_s"][j] = s.tau_s
                out["V"][j] = s.V
                out["gamma"][j] = s.gamma
                out["labels"][j] = s.labels
                out["rho"][j] = s.rho
                for d in range(q):
                    out["eta"][d][j] = s.eta[d]
                out["cross"][j] = self.cross_value()
                for b, v in self.log_step.items():
                    steps[b][j] = np.exp(v)
                j += 1
        acc = {}
        for b in BLOCKS:
            prop = self.proposed[b] - post_prop.get(b, 0)
            acc[b] = (self.accepted[b] - post_acc.get(b, 0)) / prop if prop else float("nan")
        return PosteriorSamples(
            variant=self.variant,
            n=n,
            q=q,
            K=K,
            acceptance=acc,
            step_sizes=steps,
            seed=cfg.seed,
            proposals=self.proposals,
            **out,
        )


def run_chain(
    data: ObservedData,
    graph: RegionGraph,
    spec: DiseaseGraphSpec,
    priors: PriorSpec | None = None,
    config: ChainConfig | None = None,
) -> PosteriorSamples:
    return Sampler(data, graph, spec, priors, config).run()


def _run_one(args):
    return run_chain(*args)


def run_chains(
    data: ObservedData,
    graph: RegionGraph,
    spec: DiseaseGraphSpec,
    priors: PriorSpec | None = None,
    config: ChainConfig | None = None,
    seeds: Sequence[int] = (0, 1),
    workers: int | None = None,
) -> list[PosteriorSamples]:
    """Independent chains with distinct seeds, in parallel processes when
    ``workers > 1``."""
    config = config or ChainConfig()
    jobs = [(data, graph, spec, priors, replace(config, seed=int(s))) for s in seeds]
    if workers is None or workers <= 1:
        return [_run_one(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))


def pointwise_loglik(samples: PosteriorSamples, data: ObservedData) -> np.ndarray:
    """Per-draw, per-observed-cell Poisson log-likelihood, shape ``(S, n_obs)``."""
    fl = data.flat()
    obs = fl["obs"]
    lin = fl["logE"][None, obs] + np.einsum("cp,scp->sc", fl["X"][obs], samples.beta[:, fl["disease"][obs]])
    eta = lin + samples.phi[:, obs]
    return fl["y"][obs] * eta - np.exp(eta) - fl["lgy"][obs]
