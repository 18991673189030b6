"""Adam updates and parameter initialization."""

import numpy as np

from poirec.optim import Adam, init_params
from poirec.tensor import param


class TestAdam:
    def test_zero_gradient_no_decay_leaves_params_unchanged(self):
        p = param(np.array([1.0, -2.0]))
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_matches_closed_form(self):
        # With zero moment state, m_hat = g and v_hat = g^2, so the first
        # update is exactly -lr * g / (|g| + eps), the sign-of-g limit.
        rng = np.random.default_rng(3)
        g = rng.normal(size=5)
        p = param(np.zeros(5))
        opt = Adam({"p": p}, lr=0.01)
        p.grad = g.copy()
        opt.step()
        expected = -0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-12)
        assert opt.step_count == 1

    def test_weight_decay_alone_shrinks_norm_monotonically(self):
        p = param(np.array([3.0, -4.0]))
        opt = Adam({"p": p}, lr=0.05, weight_decay=0.01)
        norms = [np.linalg.norm(p.data)]
        for _ in range(20):
            p.grad = None  # no data gradient, pure decay
            opt.step()
            norms.append(np.linalg.norm(p.data))
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_two_steps_bitwise_deterministic(self):
        def run():
            rng = np.random.default_rng(11)
            p = param(rng.normal(size=4))
            opt = Adam({"p": p}, lr=0.02, weight_decay=1e-4)
            for _ in range(2):
                p.grad = rng.normal(size=4)
                opt.step()
            return p.data.copy()
        assert (run() == run()).all()


class TestInitParams:
    def test_bounds_respected(self):
        rng = np.random.default_rng(0)
        arr = init_params((50, 20), fan_in=20, rng=rng)
        bound = 1.0 / np.sqrt(20)
        assert (np.abs(arr) <= bound).all()

    def test_deterministic_for_fixed_seed(self):
        a = init_params((7, 3), 3, np.random.default_rng(5))
        b = init_params((7, 3), 3, np.random.default_rng(5))
        assert (a == b).all()

    def test_empirical_mean_within_three_sigma(self):
        n = 100_000
        arr = init_params((n,), fan_in=16, rng=np.random.default_rng(1))
        bound = 0.25
        sigma = bound / np.sqrt(3.0)
        assert abs(arr.mean()) < 3.0 * sigma / np.sqrt(n)
