"""Difference-boundary probabilities and Bayesian FDR selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dagar import EdgeDissimilarity
from .graph import RegionGraph

log = logging.getLogger(__name__)

KINDS = ("single", "cross", "shared", "mutual")


@dataclass(frozen=True)
class Probe:
    """Which inequality event to evaluate; diseases are 0-based."""

    kind: str
    d: int
    d2: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown probe kind {self.kind!r}")
        if self.kind != "single" and self.d2 is None:
            raise ValueError(f"{self.kind} probe needs two diseases")
        if self.kind != "single" and self.d2 == self.d:
            raise ValueError("the two diseases of a pair probe must differ")

    @property
    def name(self) -> str:
        if self.kind == "single":
            return f"single_{self.d + 1}"
        return f"{self.kind}_{self.d + 1}_{self.d2 + 1}"

    @classmethod
    def parse(cls, text: str) -> "Probe":
        """``single:1`` or ``cross:1,2`` style, 1-based."""
        kind, _, rest = text.partition(":")
        ids = [int(v) - 1 for v in rest.split(",") if v.strip()]
        if not ids or any(v < 0 for v in ids):
            raise ValueError(f"cannot parse probe {text!r}")
        return cls(kind, ids[0], ids[1] if len(ids) > 1 else None)


@dataclass(frozen=True)
class BoundaryProbe:
    probe: Probe
    edges: np.ndarray  # (m, 2) with i < j
    v: np.ndarray  # (m,)

    @property
    def m(self) -> int:
        return self.v.size


def _event_columns(probe: Probe, edges: np.ndarray, n: int):
    i, j = edges[:, 0], edges[:, 1]
    d, e = probe.d, probe.d2
    if probe.kind == "single":
        return d * n + i, d * n + j, None, None
    if probe.kind in ("cross", "mutual"):
        # phi_id != phi_je and phi_ie != phi_jd
        return d * n + i, e * n + j, e * n + i, d * n + j
    return d * n + i, d * n + j, e * n + i, e * n + j


def event_frequency(labels: np.ndarray, probe: Probe, edges: np.ndarray, n: int, q: int) -> np.ndarray:
    """Fraction of draws in which the probe's label-inequality event holds.

    ``labels`` is ``(S, q*n)`` disease-major.
    """
    for dd in (probe.d, probe.d2):
        if dd is not None and not 0 <= dd < q:
            raise ValueError(f"probe references disease {dd + 1} but only {q} are modelled")
    a, b, c, dcol = _event_columns(probe, np.asarray(edges), n)
    joint = c is not None
    if not joint:
        c = dcol = a
    lab = np.ascontiguousarray(labels, dtype=np.int64)
    return _kernels.edge_inequality_freq(
        lab, a.astype(np.int64), b.astype(np.int64), c.astype(np.int64), dcol.astype(np.int64), joint
    )


def boundary_probs(samples, graph: RegionGraph, probe: Probe) -> BoundaryProbe:
    edges = graph.edge_array
    v = event_frequency(samples.labels, probe, edges, samples.n, samples.q)
    return BoundaryProbe(probe, edges, v)


def true_boundary_flags(labels: np.ndarray, graph: RegionGraph, probe: Probe, q: int) -> np.ndarray:
    """Flags from one label vector (``(q*n,)`` disease-major)."""
    v = event_frequency(np.asarray(labels)[None, :], probe, graph.edge_array, graph.n, q)
    return v.astype(bool)


# FDR arithmetic ------------------------------------------------------------------


class NoDiscoveries(ValueError):
    """Raised when a threshold selects nothing and the FDR is undefined."""


def fdr_estimate(v, t: float) -> float:
    v = np.asarray(v, dtype=float)
    sel = v > t
    k = int(sel.sum())
    if k == 0:
        raise NoDiscoveries(f"no discoveries at threshold {t}")
    return float(np.sum(1.0 - v[sel]) / k)


def fnr_estimate(v, t: float, m: int | None = None) -> float:
    v = np.asarray(v, dtype=float)
    m = v.size if m is None else int(m)
    sel = v > t
    rest = m - int(sel.sum())
    if rest <= 0:
        raise ValueError("every edge is selected; the FNR denominator is zero")
    return float(np.sum(v[~sel]) / rest)


@dataclass(frozen=True)
class FdrCurve:
    """Estimated FDR/FNR along the sorted posterior probabilities.

    Row ``r`` of the curve is the threshold ``t[r]`` and selects the
    ``n_selected[r]`` edges with ``v > t[r]``. ``fdr`` is NaN where nothing
    is selected and ``fnr`` is NaN where everything is.
    """

    t: np.ndarray
    fdr: np.ndarray
    fnr: np.ndarray
    n_selected: np.ndarray
    t_star: float | None
    selected: np.ndarray  # bool per edge
    zeta: float
    v: np.ndarray

    @property
    def fdr_at_selection(self) -> float:
        """Estimated FDR of the chosen set; 0 when it is empty."""
        if not self.selected.any():
            return 0.0
        return float(np.mean(1.0 - self.v[self.selected]))


def fdr_curve(v, zeta: float) -> FdrCurve:
    """Evaluate the FDR along every distinct threshold and pick the largest
    selection whose estimated FDR does not exceed ``zeta``."""
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    v = np.asarray(v, dtype=float)
    m = v.size
    if np.any((v < 0) | (v > 1)):
        raise ValueError("posterior probabilities must lie in [0, 1]")
    ts = np.unique(np.concatenate(([0.0], v)))
    k = np.array([int(np.sum(v > t)) for t in ts])
    # direct evaluation at every threshold keeps the curve identical to the
    # pointwise estimators
    fdr = np.array([fdr_estimate(v, t) if kk > 0 else np.nan for t, kk in zip(ts, k)])
    fnr = np.array([fnr_estimate(v, t, m) if kk < m else np.nan for t, kk in zip(ts, k)])
    ok = (k > 0) & (fdr <= zeta)
    if ok.any():
        r = int(np.flatnonzero(ok)[0])  # smallest t, largest selection
        t_star = float(ts[r])
        selected = v > t_star
    else:
        t_star = None
        selected = np.zeros(m, dtype=bool)
        log.debug("no threshold keeps the estimated FDR below %g; empty selection", zeta)
    return FdrCurve(ts, fdr, fnr, k, t_star, selected, zeta, v)


def select_threshold(probe_or_v, zeta: float) -> FdrCurve:
    v = probe_or_v.v if isinstance(probe_or_v, BoundaryProbe) else probe_or_v
    return fdr_curve(v, zeta)


# Scoring against known truth -----------------------------------------------------


@dataclass(frozen=True)
class Score:
    sensitivity: float
    specificity: float
    detected: np.ndarray


def top_t(v, T: int) -> np.ndarray:
    """Boolean mask of the ``T`` largest ``v``; ties go to the lower edge index."""
    v = np.asarray(v, dtype=float)
    if T > v.size or T < 0:
        raise ValueError(f"T={T} must lie in [0, {v.size}]")
    order = np.lexsort((np.arange(v.size), -v))
    mask = np.zeros(v.size, dtype=bool)
    mask[order[:T]] = True
    return mask


def score_against_truth(v, truth, T: int) -> Score:
    truth = np.asarray(truth, dtype=bool)
    det = top_t(v, T)
    npos = truth.sum()
    nneg = truth.size - npos
    sens = float((det & truth).sum() / npos) if npos else float("nan")
    spec = float((~det & ~truth).sum() / nneg) if nneg else float("nan")
    return Score(sens, spec, det)


def truth_fdr(selected, truth) -> float:
    """Realised false discovery proportion; 0 for an empty selection."""
    selected = np.asarray(selected, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    k = selected.sum()
    return float((selected & ~truth).sum() / k) if k else 0.0


# Adjacency detection ---------------------------------------------------------------


def adjacency_detection(eta_draws: np.ndarray, z: EdgeDissimilarity) -> np.ndarray:
    """Per-edge fraction of draws with ``exp(-z . eta) < 0.5``.

    ``eta_draws`` is ``(S, R)`` for one disease.
    """
    eta_draws = np.atleast_2d(np.asarray(eta_draws, dtype=float))
    if eta_draws.shape[0] == 0:
        return np.zeros(z.values.shape[0])
    w = np.exp(-(eta_draws @ z.values.T))  # (S, m)
    return np.mean(w < 0.5, axis=0)


def adjacency_report(samples, z_list, cutoff: float = 0.5) -> list[tuple[np.ndarray, np.ndarray]]:
    """``[(probability, detected)]`` per disease."""
    out = []
    for d, z in enumerate(z_list):
        p = adjacency_detection(samples.eta[d], z)
        out.append((p, p > cutoff))
    return out
