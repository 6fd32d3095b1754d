import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arealwomb import _kernels as k

needs_numba = pytest.mark.skipif(not k.HAVE_NUMBA, reason="numba not installed")


def _sweep_inputs(seed, n=30, K=6):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    prec = M @ M.T / n + np.eye(n)
    gamma = rng.normal(size=n)
    sd = rng.uniform(0.5, 2, size=n)
    cum = np.cumsum(rng.dirichlet(np.ones(K)))
    cum[-1] = 1.0
    labels = k.assign_labels_numpy(gamma / sd, cum)
    return dict(
        gamma=gamma,
        pg=prec @ gamma,
        prec=prec,
        sd=sd,
        cum=cum,
        theta=rng.normal(size=K),
        lin=rng.normal(size=n),
        y=rng.poisson(3, size=n).astype(float),
        obs=rng.random(n) < 0.8,
        step=np.full(n, 0.5),
        normals=rng.normal(size=n),
        logu=np.log(rng.random(n)),
        labels=labels,
    )


def _run(fn, inp):
    a = {kk: (v.copy() if isinstance(v, np.ndarray) else v) for kk, v in inp.items()}
    acc = fn(**a)
    return acc, a


@needs_numba
@given(st.integers(0, 2**31 - 1))
def test_gamma_sweep_backends_agree(seed):
    inp = _sweep_inputs(seed)
    acc1, a = _run(k.gamma_sweep_numpy, inp)
    acc2, b = _run(k.gamma_sweep_numba, inp)
    assert acc1 == acc2
    np.testing.assert_allclose(a["gamma"], b["gamma"], rtol=1e-12)
    np.testing.assert_array_equal(a["labels"], b["labels"])
    np.testing.assert_allclose(a["pg"], b["pg"], rtol=1e-10, atol=1e-12)


def test_gamma_sweep_keeps_running_product_current():
    inp = _sweep_inputs(3)
    _, a = _run(k.gamma_sweep, inp)
    np.testing.assert_allclose(a["pg"], a["prec"] @ a["gamma"], atol=1e-10)
    np.testing.assert_array_equal(a["labels"], k.assign_labels_numpy(a["gamma"] / a["sd"], a["cum"]))


@needs_numba
@given(st.lists(st.floats(-9, 9), min_size=1, max_size=60), st.integers(1, 12), st.integers(0, 1000))
def test_assign_labels_backends_agree(z, K, seed):
    rng = np.random.default_rng(seed)
    cum = np.cumsum(rng.dirichlet(np.ones(K)))
    cum[-1] = 1.0
    z = np.array(z)
    np.testing.assert_array_equal(k.assign_labels_numpy(z, cum), k.assign_labels_numba(z, cum))


@needs_numba
@pytest.mark.parametrize("joint", [False, True])
def test_edge_frequency_backends_agree(joint):
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 3, size=(200, 20)).astype(np.int16)
    a, b, c, d = (rng.integers(0, 20, size=40) for _ in range(4))
    ref = k.edge_inequality_freq_numpy(labels, a, b, c, d, joint)
    np.testing.assert_allclose(k.edge_inequality_freq_numba(labels, a, b, c, d, joint), ref)
    empty = labels[:0]
    np.testing.assert_array_equal(k.edge_inequality_freq_numba(empty, a, b, c, d, joint), 0.0)


def test_disable_flag_selects_numpy():
    env = dict(os.environ, AREALWOMB_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from arealwomb import _kernels; print(_kernels.backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
