"""Hot loops of the sampler and the boundary post-processing.

Every kernel exists twice: a numba ``@njit`` build and a pure numpy /
Python build. The compiled build is used unless numba is missing or the
environment variable ``AREALWOMB_DISABLE_NUMBA`` is set to a non-empty
value other than ``0``. Both builds must agree to rounding; the test-suite
checks this and ``benchmarks/bench_kernels.py`` times them.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import ndtr

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

_flag = os.environ.get("AREALWOMB_DISABLE_NUMBA", "")
USE_NUMBA = HAVE_NUMBA and _flag in ("", "0")

_SQRT1_2 = 1.0 / math.sqrt(2.0)


def _gamma_sweep_impl(gamma, pg, prec, sd, cum, theta, lin, y, obs, step, normals, logu, labels):
    # Single-site random-walk Metropolis over every latent cell, in index
    # order. ``pg`` holds prec @ gamma and is kept current; prec is symmetric.
    ncell = gamma.shape[0]
    nk = cum.shape[0]
    accepted = 0
    for c in range(ncell):
        delta = step[c] * normals[c]
        g_new = gamma[c] + delta
        f = 0.5 * math.erfc(-(g_new / sd[c]) * _SQRT1_2)
        k_new = nk - 1
        for k in range(nk):
            if f <= cum[k]:
                k_new = k
                break
        k_old = labels[c]
        dll = 0.0
        if obs[c] and k_new != k_old:
            t_new = theta[k_new]
            t_old = theta[k_old]
            dll = y[c] * (t_new - t_old) - math.exp(lin[c]) * (math.exp(t_new) - math.exp(t_old))
        dq = 2.0 * delta * pg[c] + delta * delta * prec[c, c]
        log_ratio = dll - 0.5 * dq
        if logu[c] < log_ratio:
            gamma[c] = g_new
            labels[c] = k_new
            pg += delta * prec[c]
            accepted += 1
    return accepted


def _assign_labels_numba_impl(z, cum):
    out = np.empty(z.shape[0], dtype=np.int64)
    nk = cum.shape[0]
    for c in range(z.shape[0]):
        f = 0.5 * math.erfc(-z[c] * _SQRT1_2)
        lab = nk - 1
        for k in range(nk):
            if f <= cum[k]:
                lab = k
                break
        out[c] = lab
    return out


def _assign_labels_numpy(z, cum):
    f = ndtr(np.asarray(z, dtype=float))
    lab = np.searchsorted(cum, f, side="left")
    return np.minimum(lab, cum.shape[0] - 1).astype(np.int64)


def _edge_freq_numba_impl(labels, a, b, c, d, joint):
    ndraw = labels.shape[0]
    m = a.shape[0]
    out = np.zeros(m)
    for e in range(m):
        hits = 0
        for s in range(ndraw):
            ok = labels[s, a[e]] != labels[s, b[e]]
            if joint and ok:
                ok = labels[s, c[e]] != labels[s, d[e]]
            if ok:
                hits += 1
        out[e] = hits / ndraw if ndraw > 0 else 0.0
    return out


def _edge_freq_numpy(labels, a, b, c, d, joint):
    if labels.shape[0] == 0:
        return np.zeros(a.shape[0])
    ev = labels[:, a] != labels[:, b]
    if joint:
        ev &= labels[:, c] != labels[:, d]
    return ev.mean(axis=0)


gamma_sweep_numpy = _gamma_sweep_impl
assign_labels_numpy = _assign_labels_numpy
edge_inequality_freq_numpy = _edge_freq_numpy

if HAVE_NUMBA:
    gamma_sweep_numba = numba.njit(cache=True)(_gamma_sweep_impl)
    assign_labels_numba = numba.njit(cache=True)(_assign_labels_numba_impl)
    edge_inequality_freq_numba = numba.njit(cache=True)(_edge_freq_numba_impl)
else:  # pragma: no cover
    gamma_sweep_numba = gamma_sweep_numpy
    assign_labels_numba = assign_labels_numpy
    edge_inequality_freq_numba = edge_inequality_freq_numpy

if USE_NUMBA:
    gamma_sweep = gamma_sweep_numba
    assign_labels = assign_labels_numba
    edge_inequality_freq = edge_inequality_freq_numba
else:
    gamma_sweep = gamma_sweep_numpy
    assign_labels = assign_labels_numpy
    edge_inequality_freq = edge_inequality_freq_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
