"""The compiled and pure-Python kernels must agree."""

import numpy as np
import pytest

from eduattn import kernels
from eduattn.kernels import _pykernels as py

cy = pytest.importorskip("eduattn.kernels._ckernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("seed", range(5))
def test_sparsemax_agree(seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-3, 3, size=(50, 7))
    mask = rng.random(z.shape) > 0.3
    mask[:, 2] = True
    g = rng.normal(size=z.shape)
    p1, p2 = py.sparsemax_rows(z, mask), cy.sparsemax_rows(z, mask)
    np.testing.assert_allclose(p1, p2, atol=1e-14)
    np.testing.assert_allclose(py.sparsemax_rows_backward(p1, g),
                               cy.sparsemax_rows_backward(p2, g), atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_gru_agree(seed):
    rng = np.random.default_rng(seed)
    T, B, H = 7, 5, 4
    xw = rng.normal(size=(T, B, 3 * H))
    u = rng.normal(scale=0.5, size=(H, 3 * H))
    mask = np.ones((T, B))
    mask[4:, 1] = 0
    mask[2:, 3] = 0
    dh = rng.normal(size=(T, B, H))
    h1, c1 = py.gru_forward(xw, u, mask)
    h2, c2 = cy.gru_forward(xw, u, mask)
    np.testing.assert_allclose(h1, h2, atol=1e-13)
    for a, b in zip(py.gru_backward(dh, u, mask, c1), cy.gru_backward(dh, u, mask, c2)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_python_gru_backward_fd():
    rng = np.random.default_rng(9)
    T, B, H = 4, 2, 3
    xw = rng.normal(size=(T, B, 3 * H))
    u = rng.normal(scale=0.5, size=(H, 3 * H))
    mask = np.ones((T, B))
    mask[3, 1] = 0
    w = rng.normal(size=(T, B, H))

    def f(xw_, u_):
        return float((py.gru_forward(xw_, u_, mask)[0] * w).sum())
    _, cache = py.gru_forward(xw, u, mask)
    dxw, du = py.gru_backward(w, u, mask, cache)
    eps = 1e-6
    for arr, grad in ((xw, dxw), (u, du)):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(0, flat.size, 3):
            o = flat[i]
            flat[i] = o + eps
            fp = f(xw, u)
            flat[i] = o - eps
            fm = f(xw, u)
            flat[i] = o
            assert abs((fp - fm) / (2 * eps) - gflat[i]) < 1e-7
