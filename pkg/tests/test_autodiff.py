import numpy as np
import pytest
import torch
from scipy import stats

from app.core import autodiff as ad
from app.core.errors import ShapeError


class TestPrimitives:
    def test_as_value_is_float64(self):
        assert ad.as_value([1, 2, 3]).dtype == torch.float64
        assert ad.as_value(torch.ones(2, dtype=torch.float32)).dtype == torch.float64

    def test_affine_rejects_incompatible_shapes(self):
        with pytest.raises(ShapeError, match="affine"):
            ad.affine(torch.ones(4, 3), torch.ones(2, 5))

    def test_diag_gaussian_log_density_matches_scipy(self, rng):
        x, mu, log_var = rng.standard_normal((3, 10))
        out = ad.diag_gaussian_log_density(ad.as_value(x), ad.as_value(mu), ad.as_value(log_var))
        expected = stats.norm.logpdf(x, loc=mu, scale=np.exp(0.5 * log_var))
        np.testing.assert_allclose(out.numpy(), expected, atol=1e-12)

    def test_diag_gaussian_log_density_backward(self, rng):
        x = ad.as_value(rng.standard_normal(4))
        params = ad.ParameterSet({"mu": rng.standard_normal(4), "log_var": rng.standard_normal(4)})

        def fn(p):
            return ad.sum(ad.diag_gaussian_log_density(x, p["mu"], p["log_var"]))

        assert ad.check_gradients(fn, params) < 1e-7

    def test_broadcast_failure_is_a_shape_error(self):
        with pytest.raises(ShapeError):
            ad.diag_gaussian_log_density(torch.zeros(3), torch.zeros(4), torch.zeros(3))


class TestParameterSet:
    def test_flat_view_and_locate(self):
        params = ad.ParameterSet({"a": torch.zeros(2, 3), "b": torch.zeros(4)})
        assert params.size == 10
        assert params.locate(4) == ("a", (1, 1))
        assert params.locate(7) == ("b", (1,))
        params.assign_flat(torch.arange(10, dtype=torch.float64))
        np.testing.assert_array_equal(params["b"].detach().numpy(), [6, 7, 8, 9])
        np.testing.assert_array_equal(params.flatten().numpy(), np.arange(10))

    def test_unflatten_checks_length(self):
        params = ad.ParameterSet({"a": torch.zeros(3)})
        with pytest.raises(ShapeError):
            params.unflatten(torch.zeros(4))
        restored = params.unflatten(torch.tensor([1.0, 2.0, 3.0]))
        assert restored.names() == ["a"]

    def test_locate_out_of_range(self):
        with pytest.raises(IndexError):
            ad.ParameterSet({"a": torch.zeros(2)}).locate(2)


class TestGraph:
    def test_trace_records_primitives_in_order(self):
        params = ad.ParameterSet({"w": torch.ones(3, 2), "b": torch.zeros(3)})
        graph = ad.Graph(lambda p, x: ad.sum(ad.leaky_relu(ad.affine(x, p["w"], p["b"]))), name="layer")
        tape = graph.trace(params, np.ones((5, 2)))
        assert [op.name for op in tape] == ["affine", "leaky_relu", "sum"]
        assert tape[0].output_shape == (5, 3)

    def test_gradient_is_zero_for_unused_parameters(self):
        params = ad.ParameterSet({"used": torch.tensor([2.0]), "unused": torch.tensor([1.0])})
        grads = ad.gradient(ad.Graph(lambda p: ad.sum(ad.square(p["used"]))), params)
        assert float(grads["used"]) == pytest.approx(4.0)
        assert float(grads["unused"]) == 0.0

    def test_gradient_needs_a_scalar(self):
        params = ad.ParameterSet({"w": torch.ones(3)})
        with pytest.raises(ShapeError, match="scalar"):
            ad.gradient(ad.Graph(lambda p: p["w"] * 2.0), params)

    def test_expected_input_dims(self):
        graph = ad.Graph(lambda p, x: ad.sum(x), name="g", expected_input_dims=(2,))
        with pytest.raises(ShapeError, match="g: input 0"):
            graph(None, torch.ones(3, 5))

    def test_evaluate_runs_without_gradients(self):
        params = ad.ParameterSet({"w": torch.ones(2)})
        out = ad.evaluate(ad.Graph(lambda p, x: ad.sum(p["w"] * x)), params, [1.0, 2.0])
        assert not out.requires_grad
        assert float(out) == 3.0
