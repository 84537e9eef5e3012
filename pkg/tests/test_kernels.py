import os
import subprocess
import sys

import numpy as np
import pytest

from fedsel import _pykernels, kernels

ckernels = pytest.importorskip("fedsel._ckernels", reason="compiled kernels not built")


def _probs(rng, k, m, n):
    p = rng.dirichlet(np.ones(n), size=(k, m))
    p[0, 0, :] = 0.0
    p[0, 0, 1] = 1.0  # exercises the 0 ln 0 and q-floor branches
    return p


@pytest.mark.parametrize("seed", range(5))
def test_pairwise_kl_backends_agree(seed):
    rng = np.random.default_rng(seed)
    p = _probs(rng, 5, 9, 4)
    a = _pykernels.pairwise_kl(p)
    b = ckernels.pairwise_kl(p)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    assert np.all(np.diag(a) == 0) and np.all(np.diag(b) == 0)


@pytest.mark.parametrize("batch", [1, 7, 64, 200])
def test_softmax_sgd_backends_agree(batch):
    rng = np.random.default_rng(batch)
    x = rng.normal(size=(130, 6))
    y = rng.integers(0, 4, size=130)
    w = 0.05 * rng.normal(size=6 * 4 + 4)
    orders = np.stack([rng.permutation(130) for _ in range(3)])
    a = _pykernels.softmax_sgd(w, x, y, orders, 4, batch, 0.1)
    b = ckernels.softmax_sgd(w, x, y, orders, 4, batch, 0.1)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-13)


def test_kernels_do_not_mutate_inputs():
    rng = np.random.default_rng(0)
    w = rng.normal(size=9)
    keep = w.copy()
    x = rng.normal(size=(5, 2))
    y = rng.integers(0, 3, size=5)
    orders = np.arange(5)[None, :]
    for impl in (_pykernels, ckernels):
        impl.softmax_sgd(w, x, y, orders, 3, 2, 0.5)
        np.testing.assert_array_equal(w, keep)


@pytest.mark.skipif(os.environ.get("FEDSEL_BACKEND", "").lower() == "python", reason="fallback forced")
def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "cython"


def test_env_var_forces_python_backend():
    env = dict(os.environ, FEDSEL_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "from fedsel import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
