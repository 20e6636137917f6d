import numpy as np
import pytest

from hrp import _pykernels, kernels

BACKENDS = kernels.available_backends()


def _lstm_case(seed, B=5, L=7, F=3, m=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(B, L, F)), rng.normal(size=(4 * m, m + F)) * 0.7, rng.normal(size=4 * m) * 0.3


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.parametrize("impl", BACKENDS)
class TestBackends:
    def test_forward_matches_reference(self, impl):
        X, W, b = _lstm_case(0)
        ref = _pykernels.lstm_forward(X, W, b)
        out = kernels.lstm_forward(X, W, b, impl=impl)
        for a, r in zip(out, ref):
            np.testing.assert_allclose(a, r, rtol=1e-12, atol=1e-13)

    def test_backward_matches_reference(self, impl):
        X, W, b = _lstm_case(1)
        cache = _pykernels.lstm_forward(X, W, b)
        dh = np.random.default_rng(2).normal(size=(5, 4))
        ref = _pykernels.lstm_backward(dh, W, *cache[:4])
        out = kernels.lstm_backward(dh, W, kernels.lstm_forward(X, W, b, impl=impl)[:4], impl=impl)
        for a, r in zip(out, ref):
            np.testing.assert_allclose(a, r, rtol=1e-11, atol=1e-13)

    def test_kernel_matrix(self, impl):
        rng = np.random.default_rng(3)
        A, B = rng.normal(size=(9, 4)), rng.normal(size=(6, 4))
        K = kernels.se_kernel_matrix(A, B, 1.4, 0.9, impl=impl)
        d2 = ((A[:, None] - B[None]) ** 2).sum(-1)
        np.testing.assert_allclose(K, 1.96 * np.exp(-d2 / (2 * 0.81)), rtol=1e-14)
        S = kernels.se_kernel_matrix(A, A, 1.4, 0.9, impl=impl)
        assert np.array_equal(S, S.T)

    def test_non_contiguous_input(self, impl):
        X, W, b = _lstm_case(4, L=6)
        Xs = X[:, ::2, :]
        ref = _pykernels.lstm_forward(np.ascontiguousarray(Xs), W, b)[4]
        np.testing.assert_allclose(kernels.lstm_forward(Xs, W, b, impl=impl)[4], ref, atol=1e-13)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.lstm_forward(*_lstm_case(0), impl="fortran")
