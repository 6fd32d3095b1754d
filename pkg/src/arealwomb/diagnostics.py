"""Chain-quality and model-comparison metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import chi2

from .graph import RegionGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Waic:
    waic: float
    lppd: float
    p_waic: float


def waic(loglik: np.ndarray) -> Waic:
    """WAIC from an ``(S, cells)`` matrix of pointwise log-likelihoods.

    Uses the variance penalty: ``WAIC = -2 (lppd - p_waic)``.
    """
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    S = ll.shape[0]
    if S < 2:
        raise ValueError("WAIC needs at least two draws")
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
    p = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return Waic(-2.0 * (lppd - p), lppd, p)


def _batch_means_cov(x: np.ndarray) -> np.ndarray:
    B = x.shape[0]
    b = int(math.floor(math.sqrt(B)))
    a = B // b
    y = x[: a * b].reshape(a, b, -1).mean(axis=1)
    dev = y - x[: a * b].mean(axis=0)
    return b * (dev.T @ dev) / (a - 1)


def batch_means_cov(draws: np.ndarray) -> np.ndarray:
    """Non-overlapping batch-means estimate of the asymptotic covariance,
    batch size ``floor(sqrt(B))``."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 4:
        raise ValueError("too few draws for batch means")
    return _batch_means_cov(x)


def _drop_constant(x: np.ndarray) -> np.ndarray:
    keep = np.ptp(x, axis=0) > 0
    if not keep.all():
        log.warning("dropping %d constant column(s) from the ESS computation", int((~keep).sum()))
    return x[:, keep]


def multivariate_ess(draws: np.ndarray) -> float:
    """``B (|Lambda| / |Sigma|)^(1/p)`` with ``Lambda`` the sample covariance
    and ``Sigma`` the batch-means covariance."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = _drop_constant(x)
    B, p = x.shape
    if p == 0:
        raise ValueError("every parameter is constant")
    if B <= p:
        raise ValueError("need more draws than parameters")
    if B // int(math.sqrt(B)) <= p:
        raise ValueError("fewer batches than parameters; the batch-means covariance is singular")
    lam = np.atleast_2d(np.cov(x, rowvar=False))
    sig = _batch_means_cov(x)
    s1, ld_lam = np.linalg.slogdet(lam)
    s2, ld_sig = np.linalg.slogdet(sig)
    if s1 <= 0 or s2 <= 0:
        raise np.linalg.LinAlgError("singular covariance in the ESS computation")
    return float(B * math.exp((ld_lam - ld_sig) / p))


def mcse(draws: np.ndarray) -> np.ndarray:
    """Per-column Monte Carlo standard error of the mean via batch means."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.sqrt(np.diag(_batch_means_cov(x)) / x.shape[0])


def _ess_constant(p: int, alpha: float) -> float:
    lg = (2.0 / p) * (math.log(2.0) - gammaln(p / 2.0) - math.log(p))
    return math.exp(lg) * math.pi * chi2.ppf(1.0 - alpha, p)


def min_ess(p: int, alpha: float = 0.05, eps: float = 0.05) -> int:
    """Smallest ESS giving a ``1 - alpha`` confidence region whose volume is
    an ``eps`` fraction of the posterior spread."""
    return int(math.ceil(_ess_constant(p, alpha) / eps**2))


def ess_precision(ess: float, p: int, alpha: float = 0.05) -> float:
    """Relative precision ``eps`` achieved by a given multivariate ESS."""
    return math.sqrt(_ess_constant(p, alpha) / ess)


def morans_i(x, pairs) -> float:
    """Moran's I with binary symmetric weights on an unordered pair set."""
    x = np.asarray(x, dtype=float)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValueError("empty pair set")
    dev = x - x.mean()
    ss = float(np.dot(dev, dev))
    if ss <= 0:
        raise ValueError("Moran's I is undefined for a constant field")
    num = float(np.sum(dev[pairs[:, 0]] * dev[pairs[:, 1]]))
    return x.size / pairs.shape[0] * num / ss


def correlogram(x, graph: RegionGraph, bins) -> np.ndarray:
    """Moran's I for each distance band of centroid pairs (NaN when a band
    is empty)."""
    out = []
    for pairs in graph.rth_order_neighbors(bins):
        out.append(morans_i(x, pairs) if len(pairs) else np.nan)
    return np.array(out)


def pearson_matrix(sir) -> np.ndarray:
    sir = np.asarray(sir, dtype=float)
    sd = sir.std(axis=0)
    if np.any(sd == 0):
        raise ValueError(f"column {int(np.flatnonzero(sd == 0)[0]) + 1} has zero variance")
    return np.corrcoef(sir, rowvar=False)


@dataclass
class DiagnosticsReport:
    waic: Waic
    mcse: dict[str, list[float]]
    ess_multivariate: float
    ess_precision: float
    n_parameters: int
    draws: int
    morans: list[list[float]] = field(default_factory=list)
    pearson: list[list[float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "waic": {"waic": self.waic.waic, "lppd": self.waic.lppd, "p_waic": self.waic.p_waic},
            "mcse": self.mcse,
            "ess_multivariate": _finite_or_none(self.ess_multivariate),
            "ess_precision": _finite_or_none(self.ess_precision),
            "n_parameters": self.n_parameters,
            "draws": self.draws,
            "morans": self.morans,
            "pearson": self.pearson,
        }


def _finite_or_none(x: float):
    return float(x) if np.isfinite(x) else None


def summary_matrix(samples) -> tuple[np.ndarray, list[str]]:
    """Low-dimensional parameter block for the multivariate ESS: regression
    coefficients, atom precision, spatial correlations, thresholds and the
    cross-disease parameters."""
    cols, names = [], []
    S = samples.size
    b = samples.beta.reshape(S, -1)
    for j in range(b.shape[1]):
        cols.append(b[:, j])
        names.append(f"beta[{j // samples.beta.shape[2] + 1},{j % samples.beta.shape[2] + 1}]")
    cols.append(samples.tau_s)
    names.append("tau_s")
    for d in range(samples.q):
        cols.append(samples.rho[:, d])
        names.append(f"rho[{d + 1}]")
    for d, e in enumerate(samples.eta):
        for r in range(e.shape[1]):
            cols.append(e[:, r])
            names.append(f"eta[{d + 1},{r + 1}]")
    c = samples.cross.reshape(S, -1)
    for j in range(c.shape[1]):
        cols.append(c[:, j])
        names.append(f"cross[{j + 1}]")
    return np.column_stack(cols), names


def diagnose(samples, data, graph: RegionGraph | None = None, bins=None) -> DiagnosticsReport:
    from .sampler import pointwise_loglik

    X, names = summary_matrix(samples)
    keep = np.ptp(X, axis=0) > 0
    Xk = X[:, keep]
    p = Xk.shape[1]
    try:
        ess = multivariate_ess(Xk)
        prec = ess_precision(ess, p)
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.warning("multivariate ESS unavailable: %s", exc)
        ess = prec = float("nan")
    err = mcse(X)
    morans = []
    if graph is not None and bins is not None and graph.centroids is not None:
        sir = data.sir()
        for d in range(data.q):
            morans.append([float(v) for v in correlogram(sir[:, d], graph, bins)])
    pear = pearson_matrix(data.sir()).tolist() if data.q > 1 else [[1.0]]
    return DiagnosticsReport(
        waic=waic(pointwise_loglik(samples, data)),
        mcse={nm: float(e) for nm, e in zip(names, err)},
        ess_multivariate=ess,
        ess_precision=prec,
        n_parameters=p,
        draws=samples.size,
        morans=morans,
        pearson=pear,
    )
