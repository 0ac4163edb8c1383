"""Adam and milestone schedule tests, with a reference implementation oracle."""

import numpy as np
import pytest

from asdgraph.autodiff import Tensor
from asdgraph.errors import NumericError
from asdgraph.optim import Adam, adam_step, milestone_lr

RNG = np.random.default_rng(31)


def reference_adam(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Straight transcription of the published update, as an oracle."""
    theta = np.zeros_like(grads[0])
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.array([3.0, -2.0, 0.5, -10.0])
        opt = Adam({"p": p}, lr=1e-3)
        opt.step()
        np.testing.assert_allclose(p.data, -1e-3 * np.sign(p.grad), rtol=1e-6)

    def test_zero_or_missing_grads_leave_params_unchanged(self):
        p = Tensor(RNG.normal(size=3), requires_grad=True)
        before = p.data.copy()
        opt = Adam({"p": p}, lr=0.1)
        opt.step()  # grad is None
        np.testing.assert_array_equal(p.data, before)
        p.grad = np.zeros(3)
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_matches_reference_trajectory(self):
        grads = [RNG.normal(size=(3, 2)) for _ in range(10)]
        p = Tensor(np.zeros((3, 2)), requires_grad=True)
        opt = Adam({"p": p}, lr=0.05)
        for g in grads:
            p.grad = g.copy()
            opt.step()
        np.testing.assert_allclose(p.data, reference_adam(grads, 0.05), rtol=1e-12)

    def test_functional_step_matches_class(self):
        g = RNG.normal(size=5)
        data = np.zeros(5)
        m = np.zeros(5)
        v = np.zeros(5)
        adam_step(data, g, m, v, t=1, lr=0.01)
        p = Tensor(np.zeros(5), requires_grad=True)
        p.grad = g.copy()
        opt = Adam({"p": p}, lr=0.01)
        opt.step()
        np.testing.assert_array_equal(data, p.data)

    def test_nan_gradient_aborts_with_name(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([1.0, np.nan])
        opt = Adam({"worrying": p}, lr=0.1)
        with pytest.raises(NumericError, match="worrying"):
            opt.step()

    def test_deterministic_across_runs(self):
        def run():
            rng = np.random.default_rng(5)
            p = Tensor(np.ones(4), requires_grad=True)
            opt = Adam({"p": p}, lr=0.02)
            for _ in range(20):
                p.grad = rng.normal(size=4)
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())


class TestMilestoneSchedule:
    def test_two_decays_after_epoch_eight(self):
        lr = 3e-4
        assert milestone_lr(lr, [6, 8], 0.1, 5) == lr
        assert milestone_lr(lr, [6, 8], 0.1, 6) == pytest.approx(lr * 0.1)
        assert milestone_lr(lr, [6, 8], 0.1, 7) == pytest.approx(lr * 0.1)
        assert milestone_lr(lr, [6, 8], 0.1, 8) == pytest.approx(lr * 0.01)
        assert milestone_lr(lr, [6, 8], 0.1, 11) == pytest.approx(lr * 0.01)

    def test_no_milestones(self):
        assert milestone_lr(1.0, [], 0.1, 100) == 1.0
