"""
Tests for the regularizer and its proximal operators.
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.optimize import minimize

from bregman_rom.exceptions import ShapeMismatchError
from bregman_rom.services.autoencoder import MlpAutoencoder, ParamSet
from bregman_rom.services.prox import (
    RegSpec,
    group_row_norm,
    prox_group_rows,
    prox_nuclear,
    prox_params,
    reg_value,
)


def two_layer_model(w1, w2):
    return MlpAutoencoder([np.asarray(w1, float), np.asarray(w2, float)], [np.zeros(2), np.zeros(2)], 1)


def group_objective(x, r, tau):
    return 0.5 * np.sum((x - r) ** 2) + tau * np.sum(np.linalg.norm(x, axis=1))


def nuclear_objective(x, w, tau):
    return 0.5 * np.sum((x - w) ** 2) + tau * np.sum(np.linalg.svd(x, compute_uv=False))


def group_value_and_grad(flat, r, tau):
    x = flat.reshape(r.shape)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    grad = (x - r) + tau * np.where(norms[:, None] > 0.0, x / safe[:, None], 0.0)
    return group_objective(x, r, tau), grad.ravel()


def nuclear_value_and_grad(flat, w, tau):
    x = flat.reshape(w.shape)
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    k = int(np.count_nonzero(s > 1e-12))
    grad = (x - w) + tau * (u[:, :k] @ vt[:k])
    return 0.5 * np.sum((x - w) ** 2) + tau * np.sum(s), grad.ravel()


def numerical_minimizer(value_and_grad, v, tau):
    """Minimize the prox objective with L-BFGS-B started at the input matrix."""
    result = minimize(value_and_grad, v.ravel(), args=(v, tau), jac=True, method="L-BFGS-B",
                      options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
    return result.x.reshape(v.shape)


def random_small_matrices(rng, count=50):
    for _ in range(count):
        rows, cols = rng.integers(1, 7), rng.integers(1, 6)
        yield rng.standard_normal((rows, cols))


@pytest.mark.unit
class TestRegSpec:
    """Test regularizer specification."""

    def test_for_model(self, small_model):
        """Test row-group weights are square roots of the layer output widths."""
        spec = RegSpec.for_model(0.5, small_model)
        assert spec.row_group_weights == pytest.approx((2.0, math.sqrt(2.0), 2.0, math.sqrt(6.0)))
        assert spec.nuclear_layer == 2
        assert spec.threshold(1) == pytest.approx(1.0)
        assert spec.threshold(2) == 0.5

    @pytest.mark.parametrize("kwargs", [
        {"lam": -1.0, "row_group_weights": (1.0, 1.0), "nuclear_layer": 1},
        {"lam": 1.0, "row_group_weights": (0.0, 1.0), "nuclear_layer": 1},
        {"lam": 1.0, "row_group_weights": (1.0, 1.0), "nuclear_layer": 3},
        {"lam": 1.0, "row_group_weights": (1.0, 1.0), "nuclear_layer": 1, "delta": 2.0},
    ])
    def test_invalid(self, kwargs):
        """Test invalid specifications are rejected."""
        with pytest.raises(ValidationError):
            RegSpec(**kwargs)


@pytest.mark.unit
class TestRegValue:
    """Test the regularizer value."""

    def test_example(self):
        """Test nuclear norm plus weighted row norms on a hand-built model."""
        model = two_layer_model([[3.0, 0.0], [0.0, 1.0]], [[3.0, 4.0], [0.0, 0.0]])
        spec = RegSpec.for_model(1.0, model)
        assert reg_value(spec, model) == pytest.approx(4.0 + 5.0 * math.sqrt(2.0), rel=1e-14)
        half = RegSpec.for_model(0.5, model)
        assert reg_value(half, model) == pytest.approx(0.5 * (4.0 + 5.0 * math.sqrt(2.0)), rel=1e-14)

    def test_zero_lambda(self, small_model):
        """Test lambda zero gives a zero regularizer."""
        assert reg_value(RegSpec.for_model(0.0, small_model), small_model) == 0.0

    def test_biases_ignored(self):
        """Test biases do not contribute."""
        model = two_layer_model(np.zeros((2, 2)), np.zeros((2, 2)))
        model.biases[0][:] = 10.0
        assert reg_value(RegSpec.for_model(1.0, model), model) == 0.0

    def test_group_row_norm(self):
        """Test the sum of row norms."""
        assert group_row_norm(np.array([[3.0, 4.0], [0.0, 1.0]])) == 6.0

    def test_layer_mismatch(self, small_model):
        """Test a spec for a different depth is rejected."""
        spec = RegSpec(lam=1.0, row_group_weights=(1.0, 1.0), nuclear_layer=1)
        with pytest.raises(ShapeMismatchError):
            reg_value(spec, small_model)


@pytest.mark.unit
class TestProxGroupRows:
    """Test row-group soft thresholding."""

    def test_example(self):
        """Test a large row shrinks and a small row vanishes."""
        out = prox_group_rows(np.array([[3.0, 4.0], [0.3, 0.4]]), 1.0)
        np.testing.assert_allclose(out, [[2.4, 3.2], [0.0, 0.0]], rtol=1e-14)

    def test_exact_zeros(self):
        """Test thresholded rows are literal zeros."""
        out = prox_group_rows(np.array([[1.0, 0.0], [0.5, 0.5]]), 1.0)
        assert np.count_nonzero(out) == 0

    def test_zero_threshold_is_identity(self, rng):
        """Test tau = 0 leaves the matrix unchanged."""
        w = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(prox_group_rows(w, 0.0), w)

    def test_negative_threshold(self):
        """Test negative thresholds are rejected."""
        with pytest.raises(ValueError):
            prox_group_rows(np.ones((2, 2)), -1.0)

    def test_minimizes_objective(self, rng):
        """Test the output beats random perturbations of itself on the prox objective."""
        r = rng.standard_normal((5, 3))
        tau = 0.8
        x = prox_group_rows(r, tau)
        best = group_objective(x, r, tau)
        for _ in range(200):
            y = x + 0.05 * rng.standard_normal(x.shape)
            assert group_objective(y, r, tau) >= best - 1e-12

    def test_nonexpansive(self, rng):
        """Test the prox is nonexpansive."""
        for _ in range(20):
            a = rng.standard_normal((4, 3))
            b = rng.standard_normal((4, 3))
            lhs = np.linalg.norm(prox_group_rows(a, 0.7) - prox_group_rows(b, 0.7))
            assert lhs <= np.linalg.norm(a - b) + 1e-12

    @pytest.mark.parametrize("tau", [0.1, 0.5, 1.0])
    def test_matches_numerical_minimizer(self, rng, tau):
        """Test no numerical minimizer beats the prox on 50 random matrices."""
        for v in random_small_matrices(rng):
            x = prox_group_rows(v, tau)
            y = numerical_minimizer(group_value_and_grad, v, tau)
            gap = group_objective(y, v, tau) - group_objective(x, v, tau)
            assert gap >= -1e-6
            # the objective is 1-strongly convex around its minimizer
            assert np.sum((x - y) ** 2) <= 2.0 * max(gap, 0.0) + 1e-9


@pytest.mark.unit
class TestProxNuclear:
    """Test singular value thresholding."""

    def test_example(self):
        """Test diag(3, 1) thresholded at 2."""
        np.testing.assert_allclose(prox_nuclear(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-14)

    def test_everything_thresholded(self):
        """Test tau >= s_1 returns an all-zero matrix."""
        out = prox_nuclear(np.diag([3.0, 1.0]), 3.0)
        assert np.count_nonzero(out) == 0

    def test_zero_threshold_is_identity(self, rng):
        """Test tau = 0 returns an exact copy."""
        w = rng.standard_normal((3, 4))
        out = prox_nuclear(w, 0.0)
        np.testing.assert_array_equal(out, w)
        assert out is not w

    def test_rank_and_shrinkage(self, rng):
        """Test singular values shrink by tau and the rank drops accordingly."""
        w = rng.standard_normal((5, 4))
        s = np.linalg.svd(w, compute_uv=False)
        tau = float(0.5 * (s[1] + s[2]))
        out_s = np.linalg.svd(prox_nuclear(w, tau), compute_uv=False)
        np.testing.assert_allclose(out_s[:2], s[:2] - tau, rtol=1e-12)
        np.testing.assert_allclose(out_s[2:], 0.0, atol=1e-12)

    def test_minimizes_objective(self, rng):
        """Test the output beats random perturbations of itself on the prox objective."""
        w = rng.standard_normal((4, 3))
        tau = 0.6
        x = prox_nuclear(w, tau)
        best = nuclear_objective(x, w, tau)
        for _ in range(200):
            y = x + 0.05 * rng.standard_normal(x.shape)
            assert nuclear_objective(y, w, tau) >= best - 1e-12

    def test_nonexpansive(self, rng):
        """Test the prox is nonexpansive."""
        for _ in range(20):
            a = rng.standard_normal((4, 3))
            b = rng.standard_normal((4, 3))
            lhs = np.linalg.norm(prox_nuclear(a, 0.7) - prox_nuclear(b, 0.7))
            assert lhs <= np.linalg.norm(a - b) + 1e-12

    def test_subspaces_preserved(self, rng):
        """Test singular values shrink by tau and the surviving singular subspaces are kept."""
        tau = 0.5
        for _ in range(20):
            w = rng.standard_normal((4, 3))
            u, s, vt = np.linalg.svd(w, full_matrices=False)
            out = prox_nuclear(w, tau)
            out_u, out_s, out_vt = np.linalg.svd(out, full_matrices=False)
            np.testing.assert_allclose(out_s, np.maximum(s - tau, 0.0), atol=1e-12)
            r = int(np.count_nonzero(s > tau))
            assert r >= 1
            np.testing.assert_allclose(out_u[:, :r] @ out_u[:, :r].T, u[:, :r] @ u[:, :r].T, atol=1e-8)
            np.testing.assert_allclose(out_vt[:r].T @ out_vt[:r], vt[:r].T @ vt[:r], atol=1e-8)

    @pytest.mark.parametrize("tau", [0.1, 0.5, 1.0])
    def test_matches_numerical_minimizer(self, rng, tau):
        """Test no numerical minimizer beats singular value thresholding on 50 random matrices."""
        for v in random_small_matrices(rng):
            x = prox_nuclear(v, tau)
            y = numerical_minimizer(nuclear_value_and_grad, v, tau)
            gap = nuclear_objective(y, v, tau) - nuclear_objective(x, v, tau)
            assert gap >= -1e-6
            assert np.sum((x - y) ** 2) <= 2.0 * max(gap, 0.0) + 1e-9


@pytest.mark.unit
class TestProxParams:
    """Test the blockwise prox."""

    def test_zero_lambda_copies(self, small_model):
        """Test lambda zero returns an equal copy."""
        params = small_model.params()
        out = prox_params(RegSpec.for_model(0.0, small_model), params)
        for a, b in zip(out.arrays(), params.arrays()):
            np.testing.assert_array_equal(a, b)
            assert a is not b

    def test_blockwise(self, random_model):
        """Test each block gets its own operator and biases pass through."""
        model = random_model(scale=1.5)
        spec = RegSpec.for_model(0.4, model)
        out = prox_params(spec, model.params())
        for layer, (w, v) in enumerate(zip(out.weights, model.weights), start=1):
            if layer == model.l_enc:
                np.testing.assert_allclose(w, prox_nuclear(v, 0.4), atol=1e-14)
            else:
                np.testing.assert_array_equal(w, prox_group_rows(v, spec.threshold(layer)))
        for b, v in zip(out.biases, model.biases):
            np.testing.assert_array_equal(b, v)

    def test_all_zero_dual(self, small_model):
        """Test a zero dual maps to zero parameters."""
        dual = ParamSet.zeros_like(small_model.params())
        out = prox_params(RegSpec.for_model(1.0, small_model), dual)
        assert all(np.count_nonzero(a) == 0 for a in out.arrays())
