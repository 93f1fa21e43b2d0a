"""Loss calculus: values, conjugates, derivatives, and Fenchel identities."""

import math

import numpy as np
import pytest

from helpers import legendre_transform_numeric
from rakekit import make_loss
from rakekit.errors import BoundsInvalid, DomainError

ALL_KINDS = ["chi2", "entropic", "logistic"]


def sample_loss(kind, rng, n=50, with_weights=True):
    y = rng.uniform(0.5, 4.0, size=n)
    w = rng.uniform(0.5, 3.0, size=n) if with_weights else None
    if kind == "logistic":
        lo = y - rng.uniform(0.5, 2.0, size=n)
        hi = y + rng.uniform(0.5, 2.0, size=n)
        return make_loss(kind, y, w, lower=lo, upper=hi)
    return make_loss(kind, y, w)


def sample_domain_points(loss, rng, scale=0.8):
    if loss.kind == "logistic":
        t = rng.uniform(0.05, 0.95, size=loss.y.shape)
        return loss.lower + t * (loss.upper - loss.lower)
    return loss.y * rng.uniform(0.3, 2.5, size=loss.y.shape)


class TestEval:
    def test_entropic_zero_at_reference(self):
        loss = make_loss("entropic", [1.0, 2.0, 3.0])
        assert loss.eval(np.array([1.0, 2.0, 3.0])) == 0.0

    def test_chi2_direct_formula(self):
        loss = make_loss("chi2", [2.0])
        assert loss.eval(np.array([4.0])) == pytest.approx(1.0, abs=1e-15)

    def test_logistic_zero_at_reference(self):
        loss = make_loss("logistic", [2.0], lower=0.0, upper=4.0)
        assert loss.eval(np.array([2.0])) == 0.0

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            make_loss("entropic", [1.0]).eval(np.array([-0.5]))
        with pytest.raises(DomainError):
            make_loss("logistic", [1.0], lower=0.0, upper=2.0).eval(np.array([2.5]))

    def test_invalid_references(self):
        with pytest.raises(DomainError):
            make_loss("chi2", [0.0])
        with pytest.raises(DomainError):
            make_loss("entropic", [-1.0])
        with pytest.raises(BoundsInvalid):
            make_loss("logistic", [5.0], lower=0.0, upper=4.0)


class TestConjugateValues:
    def test_entropic_zero_at_origin(self):
        loss = make_loss("entropic", [3.0])
        assert loss.conjugate(np.array([0.0])) == 0.0

    def test_logistic_zero_at_origin(self):
        loss = make_loss("logistic", [1.0], lower=0.0, upper=4.0)
        assert loss.conjugate(np.array([0.0])) == pytest.approx(0.0, abs=1e-15)

    def test_chi2_weighted_hand_value(self):
        # w f*(z/w) at w=2, y=2, z=1: 2 * 2 * ((1/2)^2/2 + 1/2) = 2.5
        loss = make_loss("chi2", [2.0], w=[2.0])
        val = loss.conjugate(np.array([1.0]))
        assert val == pytest.approx(2.5, abs=1e-12)
        # cross-check by brute-force Legendre transform of the weighted primal
        grid = np.linspace(-50.0, 50.0, 2_000_001)
        numeric = legendre_transform_numeric(
            lambda x: 2.0 * (x - 2.0) ** 2 / (2.0 * 2.0), 1.0, grid)
        assert val == pytest.approx(numeric, abs=1e-8)

    def test_numeric_legendre_all_kinds(self, rng):
        cases = {
            "chi2": (lambda x, y: (x - y) ** 2 / (2 * y), np.linspace(-100, 200, 400001)),
            "entropic": (lambda x, y: x * np.log(x / y) - (x - y),
                         np.linspace(1e-9, 400, 400001)),
        }
        for kind, (f, grid) in cases.items():
            y = 2.37
            w = 1.7
            loss = make_loss(kind, [y], w=[w])
            for z in [-1.0, -0.1, 0.0, 0.4, 1.3]:
                numeric = legendre_transform_numeric(lambda x: w * f(x, y), z, grid)
                assert float(loss.conjugate(np.array([z]))) == pytest.approx(
                    numeric, abs=1e-5)

    def test_logistic_numeric_legendre(self):
        y, lo, hi, w = 1.0, 0.0, 4.0, 1.3
        grid = np.linspace(lo + 1e-9, hi - 1e-9, 2_000_001)

        def f(x):
            return w * ((x - lo) * np.log((x - lo) / (y - lo))
                        + (hi - x) * np.log((hi - x) / (hi - y)))

        loss = make_loss("logistic", [y], w=[w], lower=lo, upper=hi)
        for z in [-3.0, -0.5, 0.0, 0.7, 2.5]:
            numeric = legendre_transform_numeric(f, z, grid)
            assert float(loss.conjugate(np.array([z]))) == pytest.approx(numeric, abs=1e-6)

    def test_logistic_stability_at_large_arguments(self):
        # float64 sigmoid saturates to the exact endpoints past |z| ~ 36,
        # so the interval is closed out there and strict inside
        loss = make_loss("logistic", [1.0], lower=0.0, upper=4.0)
        for z in [-1e4, -500.0, 500.0, 1e4]:
            val = float(loss.conjugate(np.array([z])))
            assert np.isfinite(val)
            grad = loss.grad_conjugate(np.array([z]))[0]
            assert 0.0 <= grad <= 4.0
        for z in [-30.0, -5.0, 5.0, 30.0]:
            grad = loss.grad_conjugate(np.array([z]))[0]
            assert 0.0 < grad < 4.0


class TestGradConjugate:
    def test_zero_multipliers_return_observations(self, rng):
        for kind in ALL_KINDS:
            loss = sample_loss(kind, rng)
            np.testing.assert_allclose(loss.grad_conjugate(np.zeros(loss.n)), loss.y,
                                       rtol=1e-12)

    def test_chi2_hand_value(self):
        loss = make_loss("chi2", [3.0])
        assert loss.grad_conjugate(np.array([2.0]))[0] == pytest.approx(9.0, abs=1e-12)

    def test_matches_finite_differences(self, rng):
        h = 1e-6
        for kind in ALL_KINDS:
            loss = sample_loss(kind, rng, n=40)
            z = rng.normal(scale=1.5, size=40)
            grad = loss.grad_conjugate(z)
            for i in rng.choice(40, size=10, replace=False):
                zp, zm = z.copy(), z.copy()
                zp[i] += h
                zm[i] -= h
                fd = (loss.conjugate(zp) - loss.conjugate(zm)) / (2 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-6)


class TestHessConjugate:
    def test_chi2_constant_curvature(self):
        loss = make_loss("chi2", [1.0, 2.0])
        for z in [np.zeros(2), np.array([3.0, -4.0])]:
            np.testing.assert_array_equal(loss.hess_conjugate_diag(z), [1.0, 2.0])

    def test_entropic_values(self):
        loss = make_loss("entropic", [2.0])
        assert loss.hess_conjugate_diag(np.array([0.0]))[0] == 2.0
        weighted = make_loss("entropic", [2.0], w=[2.0])
        assert weighted.hess_conjugate_diag(np.array([2.0]))[0] == pytest.approx(
            math.e, rel=1e-14)

    def test_matches_finite_differences_of_grad(self, rng):
        h = 1e-5
        for kind in ALL_KINDS:
            loss = sample_loss(kind, rng, n=30)
            z = rng.normal(scale=1.0, size=30)
            hess = loss.hess_conjugate_diag(z)
            fd = (loss.grad_conjugate(z + h) - loss.grad_conjugate(z - h)) / (2 * h)
            np.testing.assert_allclose(hess, fd, rtol=1e-5, atol=1e-5)

    def test_positive_on_finite_arguments(self, rng):
        for kind in ALL_KINDS:
            loss = sample_loss(kind, rng, n=30, with_weights=False)
            z = rng.normal(scale=3.0, size=30)
            assert np.all(loss.hess_conjugate_diag(z) > 0)


class TestFenchel:
    def test_inversion(self, rng):
        """grad_conjugate(W f'(beta)) recovers beta on the open domain."""
        for kind in ALL_KINDS:
            loss = sample_loss(kind, rng, n=200)
            beta = sample_domain_points(loss, rng)
            z = loss.grad_primal(beta)
            back = loss.grad_conjugate(z)
            np.testing.assert_allclose(back, beta, rtol=1e-10)

    def test_inequality_with_equality_at_gradient(self, rng):
        for kind in ALL_KINDS:
            loss = sample_loss(kind, rng, n=100)
            beta = sample_domain_points(loss, rng)
            z = rng.normal(scale=1.2, size=100)
            lhs = loss.eval(beta) + loss.conjugate(z)
            rhs = float(z @ beta)
            assert lhs >= rhs - 1e-9 * max(1.0, abs(rhs))
            z_star = loss.grad_primal(beta)
            gap = loss.eval(beta) + loss.conjugate(z_star) - float(z_star @ beta)
            assert abs(gap) <= 1e-9 * max(1.0, abs(float(z_star @ beta)))


class TestDomainGuarantees:
    def test_logistic_output_strictly_inside_bounds(self, rng):
        loss = sample_loss("logistic", rng, n=100)
        z = rng.normal(scale=50.0, size=100)
        out = loss.grad_conjugate(z)
        assert np.all(out >= loss.lower) and np.all(out <= loss.upper)
        z_mod = rng.normal(scale=3.0, size=100)
        out_mod = loss.grad_conjugate(z_mod)
        assert np.all(out_mod > loss.lower) and np.all(out_mod < loss.upper)

    def test_entropic_positivity_and_zero_freeze(self):
        loss = make_loss("entropic", [2.0, 0.0])
        out = loss.grad_conjugate(np.array([5.0, 5.0]))
        assert out[0] > 0
        assert out[1] == 0.0
        assert float(loss.conjugate(np.array([7.0, 7.0]))) == pytest.approx(
            2.0 * (math.exp(7.0) - 1.0), rel=1e-14)


class TestWeightLimit:
    def test_huge_weight_pins_to_reference(self, rng):
        z = np.linspace(-10, 10, 41)
        for kind in ALL_KINDS:
            y = np.full(41, 2.0)
            kwargs = {"lower": 0.0, "upper": 4.0} if kind == "logistic" else {}
            loss = make_loss(kind, y, w=np.full(41, 1e12), **kwargs)
            np.testing.assert_allclose(loss.grad_conjugate(z), y, atol=1e-10)

    def test_infinite_weight_exact(self):
        for kind in ALL_KINDS:
            kwargs = {"lower": 0.0, "upper": 4.0} if kind == "logistic" else {}
            loss = make_loss(kind, [2.0, 3.0], w=[np.inf, 1.0], **kwargs)
            z = np.array([7.0, 0.3])
            out = loss.grad_conjugate(z)
            assert out[0] == 2.0
            assert float(loss.hess_conjugate_diag(z)[0]) == 0.0
            # conjugate degenerates to the linear term y z on pinned coords
            lin = float(loss.conjugate(np.array([7.0, 0.0])))
            assert lin == pytest.approx(14.0, rel=1e-12)


class TestTaylorConsistency:
    def test_entropic_close_to_chi2_near_reference(self, rng):
        """Entropic minus its quadratic expansion is cubically small."""
        y = rng.uniform(0.5, 4.0, size=200)
        eps = rng.uniform(-0.05, 0.05, size=200)
        beta = y * (1.0 + eps)
        ent = make_loss("entropic", y)
        diff = np.abs(
            np.array([make_loss("entropic", [yi]).eval(np.array([bi]))
                      for yi, bi in zip(y, beta)])
            - (beta - y) ** 2 / (2 * y))
        bound = (np.abs(beta - y) ** 3) / (6 * np.minimum(beta, y) ** 2) * 1.05
        assert np.all(diff <= bound + 1e-15)
        assert ent.eval(y) == 0.0


class TestBatchedReferences:
    def test_leading_axes_broadcast(self, rng):
        y = rng.uniform(1.0, 3.0, size=(7, 5))
        w = rng.uniform(0.5, 2.0, size=5)
        loss = make_loss("entropic", y, w)
        z = rng.normal(size=(7, 5))
        vals = loss.conjugate(z)
        assert vals.shape == (7,)
        for i in range(7):
            row = make_loss("entropic", y[i], w)
            assert vals[i] == pytest.approx(float(row.conjugate(z[i])), rel=1e-13)
        np.testing.assert_allclose(loss.grad_conjugate(z)[3],
                                   make_loss("entropic", y[3], w).grad_conjugate(z[3]),
                                   rtol=1e-13)
