"""Truncated areal stick-breaking process.

Cluster labels are read off the marginal CDF of the latent Gaussian:
cell ``c`` takes label ``k`` when ``Phi(gamma_c / sd_c)`` falls in the
``k``-th cumulative-weight interval. Labels are 0-based here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from . import _kernels
from .covariance import GammaCovariance


def weights_from_sticks(V) -> np.ndarray:
    """``p_1 = V_1``, ``p_j = V_j prod_{k<j} (1 - V_k)``; requires ``V_K = 1``."""
    V = np.asarray(V, dtype=float)
    if V.ndim != 1 or V.size == 0:
        raise ValueError("V must be a non-empty vector")
    if np.any(V <= 0) or np.any(V > 1):
        raise ValueError("stick fractions must lie in (0, 1]")
    if V[-1] != 1.0:
        raise ValueError("the last stick fraction must equal 1 to close the truncation")
    rest = np.concatenate(([1.0], np.cumprod(1.0 - V[:-1])))
    return V * rest


def cumulative_weights(p) -> np.ndarray:
    cum = np.cumsum(p)
    cum[-1] = 1.0
    return cum


def labels_from_gamma(gamma, sd, p) -> np.ndarray:
    """Vectorised label rule; boundary hits go to the lower cell."""
    z = np.asarray(gamma, dtype=float) / np.asarray(sd, dtype=float)
    return _kernels.assign_labels(np.ascontiguousarray(z), cumulative_weights(p))


def label_from_gamma(gamma_i: float, sd_i: float, p) -> int:
    if sd_i <= 0:
        raise ValueError("marginal sd must be positive")
    return int(labels_from_gamma(np.array([gamma_i]), np.array([sd_i]), p)[0])


def phi_from_state(u, theta) -> np.ndarray:
    u = np.asarray(u)
    theta = np.asarray(theta, dtype=float)
    if np.any(u < 0) or np.any(u >= theta.size):
        raise IndexError("cluster label outside 0..K-1")
    return theta[u]


def sample_sticks(K: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    V = np.ones(K)
    V[:-1] = rng.beta(1.0, alpha, size=K - 1)
    return V


# Bivariate rectangle probabilities ------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


def same_cell_probability(cum: np.ndarray, r: float) -> float | np.ndarray:
    """``P(u_i = u_j)`` for standardised latent pair with correlation ``r``.

    ``cum`` is a cumulative-weight vector or a stack ``(S, K)`` of them. For
    each cell the probability that both uniforms ``Phi(z_i)``, ``Phi(z_j)``
    fall inside it is integrated over the first coordinate with Gauss-Legendre
    nodes; the inner probability is exact.
    """
    cum = np.atleast_2d(np.asarray(cum, dtype=float))
    lo = np.concatenate([np.zeros((cum.shape[0], 1)), cum[:, :-1]], axis=1)
    hi = cum
    if abs(r) < 1e-15:
        out = np.sum((hi - lo) ** 2, axis=1)
        return out if out.size > 1 else float(out[0])
    s = np.sqrt(1.0 - r * r)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = mid[..., None] + half[..., None] * _GL_X  # (S, K, nodes)
    x = ndtri(np.clip(u, 1e-300, 1 - 1e-16))
    with np.errstate(invalid="ignore"):
        zhi = ndtri(hi)[..., None]
        zlo = ndtri(lo)[..., None]
        inner = ndtr((zhi - r * x) / s) - ndtr((zlo - r * x) / s)
    inner = np.nan_to_num(inner)
    out = np.sum(half * np.sum(inner * _GL_W, axis=-1), axis=1)
    return out if out.size > 1 else float(out[0])


@dataclass(frozen=True)
class PriorCovEstimate:
    mc: float  # Monte Carlo Cov(phi_i, phi_j)
    semianalytic: float  # b_s/(a_s-1) * mean_V P(u_i = u_j | V)
    se: float  # standard error of the paired difference
    tie_rate: float  # fraction of draws with u_i == u_j

    @property
    def z(self) -> float:
        return (self.mc - self.semianalytic) / self.se if self.se > 0 else 0.0


def prior_cov_oracle(
    cov: GammaCovariance,
    K: int,
    alpha: float,
    a_s: float,
    b_s: float,
    pair: tuple[int, int],
    draws: int,
    rng: np.random.Generator,
    chunk: int = 20_000,
) -> PriorCovEstimate:
    """Compare a brute-force prior simulation of ``Cov(phi_i, phi_j)`` with
    ``b_s/(a_s-1) sum_k pi_kk`` evaluated on the same stick draws.

    Each draw simulates ``V``, ``gamma ~ N(0, Sigma)`` (only the pair),
    ``tau_s`` and the atoms. The semianalytic term replaces the label
    indicators by exact rectangle probabilities given ``V``.
    """
    if a_s <= 1:
        raise ValueError("a_s must exceed 1 for the atom variance to exist")
    if draws < 10_000:
        raise ValueError("use at least 1e4 draws")
    i, j = pair
    sd = cov.marginal_sd
    if i == j:
        r = 1.0
    else:
        # the (i, j) covariance from one column of the dense covariance
        r = float(cov.covariance_dense()[i, j] / (sd[i] * sd[j]))
    scale = b_s / (a_s - 1.0)
    diffs = []
    prods = []
    ties = 0
    done = 0
    while done < draws:
        s = min(chunk, draws - done)
        V = np.ones((s, K))
        V[:, :-1] = rng.beta(1.0, alpha, size=(s, K - 1))
        rest = np.concatenate([np.ones((s, 1)), np.cumprod(1.0 - V[:, :-1], axis=1)], axis=1)
        cum = np.cumsum(V * rest, axis=1)
        cum[:, -1] = 1.0
        z1 = rng.standard_normal(s)
        z2 = r * z1 + np.sqrt(max(1.0 - r * r, 0.0)) * rng.standard_normal(s)
        ui = (cum < ndtr(z1)[:, None]).sum(axis=1).clip(max=K - 1)
        uj = (cum < ndtr(z2)[:, None]).sum(axis=1).clip(max=K - 1)
        tau = rng.gamma(a_s, 1.0 / b_s, size=s)
        theta = rng.standard_normal((s, K)) / np.sqrt(tau)[:, None]
        rows = np.arange(s)
        prod = theta[rows, ui] * theta[rows, uj]
        pik = np.ones(s) if i == j else np.atleast_1d(same_cell_probability(cum, r))
        diffs.append(prod - scale * pik)
        prods.append(prod)
        ties += int(np.sum(ui == uj))
        done += s
    diffs = np.concatenate(diffs)
    prods = np.concatenate(prods)
    semi = float(np.mean(prods - diffs))
    return PriorCovEstimate(
        mc=float(np.mean(prods)),
        semianalytic=semi,
        se=float(np.std(diffs, ddof=1) / np.sqrt(diffs.size)),
        tie_rate=ties / draws,
    )
