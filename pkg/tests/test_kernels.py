"""Backend parity: the numba kernels and the pure-Python/numpy fallback are
the same code, so their outputs must agree bit-for-bit on random inputs."""

import numpy as np
import pytest

from bectra import Rng
from bectra._kernels import BACKEND, PY_KERNELS

numba = pytest.importorskip("numba")

from bectra._kernels import numba_kernels  # noqa: E402


@pytest.fixture(scope="module")
def kernels():
    return PY_KERNELS, numba_kernels()


def test_backend_selection_env_is_honored():
    assert BACKEND in ("numba", "numpy")


def test_ctc_kernels_agree(kernels):
    py, nb = kernels
    rng = Rng(0)
    for _ in range(20):
        T = int(rng.generator.integers(1, 7))
        C = int(rng.generator.integers(2, 5))
        n = int(rng.generator.integers(0, 4))
        logp = rng.generator.standard_normal((T, C))
        logp = logp - np.logaddexp.reduce(logp, axis=1, keepdims=True)
        labels = rng.generator.integers(1, C, size=n).astype(np.int64)
        ll_py, alpha_py = py["ctc_forward"](logp, labels, 0)
        ll_nb, alpha_nb = nb["ctc_forward"](logp, labels, 0)
        assert ll_py == ll_nb or (np.isneginf(ll_py) and np.isneginf(ll_nb))
        np.testing.assert_array_equal(alpha_py, alpha_nb)
        g_py = py["ctc_posteriors"](logp, labels, 0)[1]
        g_nb = nb["ctc_posteriors"](logp, labels, 0)[1]
        np.testing.assert_array_equal(g_py, g_nb)


def test_rnnt_kernels_agree(kernels):
    py, nb = kernels
    rng = Rng(1)
    for _ in range(20):
        T = int(rng.generator.integers(1, 6))
        C = int(rng.generator.integers(2, 5))
        n = int(rng.generator.integers(0, 4))
        lat = rng.generator.standard_normal((T, n + 1, C))
        lat = lat - np.logaddexp.reduce(lat, axis=2, keepdims=True)
        labels = rng.generator.integers(1, C, size=n).astype(np.int64)
        ll_py, _ = py["rnnt_forward"](lat, labels, 0)
        ll_nb, _ = nb["rnnt_forward"](lat, labels, 0)
        assert ll_py == ll_nb
        g_py = py["rnnt_posteriors"](lat, labels, 0)[1]
        g_nb = nb["rnnt_posteriors"](lat, labels, 0)[1]
        np.testing.assert_array_equal(g_py, g_nb)


def test_levenshtein_kernels_agree(kernels):
    py, nb = kernels
    rng = Rng(2)
    for _ in range(50):
        a = rng.generator.integers(0, 3, size=int(rng.generator.integers(0, 8))).astype(np.int64)
        b = rng.generator.integers(0, 3, size=int(rng.generator.integers(0, 8))).astype(np.int64)
        assert py["levenshtein"](a, b) == tuple(nb["levenshtein"](a, b))
