import numpy as np
import pytest

from perceptpool.gradcheck import check_layer, fd_gradient
from perceptpool.layers import Dense, FixedPool, ReLU
from perceptpool.pooling import PerceptronPool


class TestFdGradient:
    def test_quadratic(self):
        theta = np.array([3.0])
        grad = fd_gradient(lambda: theta[0] ** 2, theta, h=1e-5)
        assert grad[0] == pytest.approx(6.0, abs=1e-9)

    def test_constant_function_is_zero(self):
        theta = np.ones(5)
        grad = fd_gradient(lambda: 42.0, theta)
        np.testing.assert_array_equal(grad, 0.0)

    def test_restores_params(self):
        theta = np.array([1.0, 2.0, 3.0])
        fd_gradient(lambda: float(np.sum(theta**2)), theta)
        np.testing.assert_array_equal(theta, [1.0, 2.0, 3.0])

    def test_nonfinite_evaluation_raises(self):
        theta = np.array([0.0])
        with np.errstate(invalid="ignore", divide="ignore"):
            with pytest.raises(FloatingPointError):
                fd_gradient(lambda: float(np.log(theta[0])), theta)

    def test_perceptron_pool_with_l2_loss(self):
        rng = np.random.default_rng(0)
        pool = PerceptronPool(2, 2, dtype=np.float64)
        pool.bind(2, 4, 4)
        pool.weights[...] = rng.normal(size=pool.weights.shape)
        pool.bias[...] = rng.normal(size=pool.bias.shape)
        x = rng.normal(size=(1, 2, 4, 4))
        target = rng.normal(size=(1, 2, 2, 2))

        def loss():
            return float(0.5 * np.sum((pool.forward(x) - target) ** 2))

        pool.zero_grad()
        out = pool.forward(x)
        analytic_in = pool.backward(out - target)
        np.testing.assert_allclose(analytic_in, fd_gradient(loss, x), rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(pool.weights_grad, fd_gradient(loss, pool.weights),
                                   rtol=1e-4, atol=1e-8)


class TestCheckLayer:
    def test_oracle_validated_on_exact_linear_layers(self):
        # closed-form-linear layers must pass at a much tighter tolerance
        # before the oracle is trusted on anything learned
        report = check_layer(FixedPool("average", 2, 2), (2, 2, 6, 6), seed=0, tolerance=1e-8)
        assert report.passed, report.format()
        report = check_layer(Dense(6, 3, dtype=np.float64), (4, 6), seed=0, tolerance=1e-8)
        assert report.passed, report.format()

    def test_perceptron_pool_four_units(self):
        report = check_layer(PerceptronPool(2, 2, units=4, dtype=np.float64),
                             (2, 2, 6, 6), seed=1, tolerance=1e-4)
        assert report.passed

    def test_reports_are_deterministic(self):
        def run():
            rep = check_layer(PerceptronPool(2, 2, dtype=np.float64), (1, 2, 4, 4), seed=5)
            return rep.max_rel_err, rep.max_abs_err, rep.worst.worst_index

        assert run() == run()

    def test_corrupted_backward_caught_with_group_named(self):
        class BadDense(Dense):
            def backward(self, grad_out):
                gin = super().backward(grad_out)
                self.weights_grad *= 2.0
                return gin

        report = check_layer(BadDense(4, 3, dtype=np.float64), (3, 4), seed=2, tolerance=1e-4)
        assert not report.passed
        assert report.worst.name == "fc.weight"

    def test_relu_inputs_resampled_away_from_kink(self):
        report = check_layer(ReLU(), (2, 3, 4, 4), seed=3, tolerance=1e-6)
        assert report.passed

    def test_report_format_mentions_verdict(self):
        report = check_layer(Dense(3, 2, dtype=np.float64), (2, 3), seed=4)
        assert "PASS" in report.format()
