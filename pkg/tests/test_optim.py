import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sltgates import kernels
from sltgates.optim import Adam, MissingGradError
from sltgates.tensor import Tensor

pytestmark = pytest.mark.usefixtures("f64")


def adam_oracle(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook scalar Adam written out longhand."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
    return theta


def test_first_step():
    p = Tensor([0.0], requires_grad=True)
    opt = Adam([p])
    p.grad = np.array([1.0])
    opt.step()
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert p.data[0] == pytest.approx(-0.001, rel=1e-7)
    assert opt.t == 1
    np.testing.assert_array_equal(p.grad, [1.0])


def test_zero_grad_leaves_params():
    p = Tensor([0.3, -0.7], requires_grad=True)
    opt = Adam([p])
    for _ in range(50):
        p.grad = np.zeros(2)
        opt.step()
    np.testing.assert_array_equal(p.data, [0.3, -0.7])
    assert opt.t == 50


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-2, 2))
def test_matches_longhand_oracle(grads, theta0):
    p = Tensor([theta0], requires_grad=True)
    opt = Adam([p])
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    assert p.data[0] == pytest.approx(adam_oracle(theta0, grads), rel=1e-12, abs=1e-12)


def test_quadratic_convergence():
    target = 3.0
    p = Tensor([0.0], requires_grad=True)
    opt = Adam([p])
    for step in range(1, 20_001):
        p.grad = 2 * (p.data - target)
        opt.step()
        if abs(p.data[0] - target) <= 1e-3:
            break
    assert abs(p.data[0] - target) <= 1e-3
    assert step <= 20_000


def test_deterministic_trajectories():
    def run():
        rng = np.random.default_rng(3)
        p = Tensor(np.zeros(5), requires_grad=True)
        opt = Adam([p])
        out = []
        for _ in range(20):
            p.grad = rng.normal(size=5)
            opt.step()
            out.append(p.data.copy())
        return np.array(out)
    assert run().tobytes() == run().tobytes()


def test_missing_grad():
    p = Tensor([1.0], requires_grad=True)
    p.grad = None
    with pytest.raises(MissingGradError):
        Adam([p]).step()


def test_rejects_frozen_tensor():
    with pytest.raises(ValueError):
        Adam([Tensor([1.0])])


def test_zero_grad_clears():
    p = Tensor([1.0], requires_grad=True)
    opt = Adam([p])
    p.grad = np.ones(1)
    opt.zero_grad()
    assert p.grad is None or not np.any(p.grad)


def test_backends_agree():
    rng = np.random.default_rng(0)
    results = []
    for impl in (kernels.numpy_impl, kernels.numba_impl):
        if impl is None:
            pytest.skip("numba unavailable")
        p = np.zeros(100)
        m = np.zeros(100)
        v = np.zeros(100)
        g = rng.normal(size=100) if not results else results[0][1]
        for t in range(1, 4):
            impl.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1 - 0.9 ** t, 1 - 0.999 ** t)
        results.append((p, g))
    np.testing.assert_allclose(results[0][0], results[1][0], rtol=1e-12, atol=1e-15)
