import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elmanlab.data import generate_dataset
from elmanlab.network import (fake_gradient, forward, gradient, init_params,
                              objective)
from elmanlab.probes_landscape import (LandscapeParams, argmax_loss,
                                       backward_coordinate_probe,
                                       decomposition_identity_probe,
                                       fake_gradient_bound_probe,
                                       fit_envelope,
                                       gradient_upper_bound_probe,
                                       indicator_coordinate_probe,
                                       pl_ratio_probe, semi_smoothness_probe,
                                       sign_change_matrix)
from elmanlab.reporting import ScaleParams
from elmanlab.rng import SeededRng


def setup(seed, n=2, L=3, m=48, delta=0.4):
    rng = SeededRng(seed)
    dataset = generate_dataset(n, L, 4, 2, delta, rng.split("data"))
    params = init_params(m, 4, 2, rng.split("init"))
    return rng, params, dataset, forward(params, dataset)


class TestLandscapeParams:
    def test_threshold_formulas(self):
        scales = ScaleParams(n=4, L=5, d=2, m=2048, delta=0.5)
        lp = LandscapeParams.from_scales(scales)
        rho = scales.rho
        assert lp.beta_plus == pytest.approx(0.5 / rho ** 2)
        assert lp.beta_minus == pytest.approx(0.5 / rho ** 10)
        assert lp.n_flip == 2048  # rho^22 / beta_minus^2 clamps to m

    def test_reference_scale_values(self):
        # worked example at the reference dimensions
        scales = ScaleParams(n=4, L=5, d=2, m=2048, delta=0.5)
        lp = LandscapeParams.from_scales(scales)
        assert scales.rho == pytest.approx(305.0, abs=1.0)
        assert lp.beta_plus == pytest.approx(5.4e-6, rel=0.02)

    def test_theta_between_endpoints(self):
        scales = ScaleParams(n=2, L=3, d=2, m=1024, delta=0.5)
        lp = LandscapeParams.from_scales(scales)
        rho = scales.rho
        lo, hi = rho ** 4 * lp.beta_minus, lp.beta_plus / rho ** 3
        assert lo <= lp.theta <= hi
        assert lp.theta == pytest.approx(math.sqrt(lo * hi))


class TestPlRatioProbe:
    def test_ratio_matches_direct_computation(self):
        _, params, dataset, trace = setup(0)
        report = pl_ratio_probe(params, dataset, trace)
        values = {}
        for r in report.records:
            values.setdefault(r.indices["kind"], r.measured)
        grad = gradient(params, dataset)
        f_val = objective(trace)
        assert values["ratio"] == pytest.approx(
            float(np.sum(grad ** 2)) / (params.m * f_val), rel=1e-12
        )
        assert values["f"] == pytest.approx(f_val)

    def test_per_sample_records(self):
        _, params, dataset, trace = setup(1, n=3)
        report = pl_ratio_probe(params, dataset, trace)
        per = [r for r in report.records
               if r.indices["kind"] == "per_sample_ratio"]
        assert len(per) == 3

    def test_zero_objective_flagged(self):
        rng, params, dataset, trace = setup(2)
        exact = dataset.__class__(
            tokens=dataset.tokens, labels=trace.y[:, 1:], delta=dataset.delta
        )
        report = pl_ratio_probe(params, exact)
        assert report.extras.get("undefined") is True


class TestFitEnvelope:
    def test_exact_quadratic_data(self):
        taus = np.array([0.1, 0.2, 0.4, 0.8])
        residuals = 3.0 * taus + 2.0 * taus ** 2
        a, b = fit_envelope(taus, residuals)
        assert a == pytest.approx(3.0, abs=1e-6)
        assert b == pytest.approx(2.0, abs=1e-6)

    def test_envelope_is_pointwise_upper(self):
        gen = SeededRng(3).generator()
        taus = np.logspace(-3, -1, 12)
        residuals = 0.5 * taus + taus ** 2 * gen.uniform(0.5, 1.5, size=12)
        a, b = fit_envelope(taus, residuals)
        assert b >= 0
        assert np.all(a * taus + b * taus ** 2 >= residuals - 1e-12)

    def test_negative_curvature_clamped(self):
        taus = np.array([0.1, 0.2, 0.3])
        residuals = 1.0 * taus - 0.5 * taus ** 2
        a, b = fit_envelope(taus, residuals)
        assert b == pytest.approx(0.0, abs=1e-9)
        assert np.all(a * taus >= residuals - 1e-12)


class TestSemiSmoothness:
    def test_envelope_holds_and_first_order(self):
        rng, params, dataset, _ = setup(4, m=64)
        gen = rng.split("dir").generator()
        w_prime = gen.normal(size=(64, 64))
        w_prime /= np.linalg.svd(w_prime, compute_uv=False)[0]
        taus = np.logspace(-6, -2, 10)
        report = semi_smoothness_probe(params, dataset, w_prime, taus)
        assert report.all_passed
        assert report.extras["b"] >= 0
        assert report.extras["first_order_consistent"]

    def test_residual_at_tiny_tau_is_second_order(self):
        rng, params, dataset, _ = setup(5, m=32)
        gen = rng.split("dir").generator()
        w_prime = gen.normal(size=(32, 32))
        w_prime /= np.linalg.svd(w_prime, compute_uv=False)[0]
        report = semi_smoothness_probe(
            params, dataset, w_prime, [1e-7, 1e-6, 1e-5]
        )
        smallest = min(report.records, key=lambda r: r.indices["tau"])
        assert abs(smallest.measured) < 1e-8


class TestSignChangeMatrix:
    def test_identity_on_hand_case(self):
        a = np.array([1.0, -1.0, 2.0, -3.0])
        b = np.array([-2.0, 4.0, 1.0, -5.0])
        d2 = sign_change_matrix(a, b)
        d = (a >= 0).astype(float)
        assert np.allclose(
            np.maximum(a, 0) - np.maximum(b, 0), (d + d2) * (a - b)
        )
        assert d2[2] == 0.0 and d2[3] == 0.0

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_identity_random(self, seed):
        gen = np.random.default_rng(seed)
        a = gen.normal(size=20)
        b = gen.normal(size=20)
        d2 = sign_change_matrix(a, b)
        d = (a >= 0).astype(float)
        lhs = np.maximum(a, 0) - np.maximum(b, 0)
        assert np.allclose(lhs, (d + d2) * (a - b), atol=1e-12)
        assert np.all(np.abs(d2) <= 1.0 + 1e-12)
        assert np.all(d2[(a >= 0) == (b >= 0)] == 0.0)


class TestDecompositionIdentity:
    def test_identities_hold_for_random_perturbation(self):
        rng, params, dataset, _ = setup(6, m=48)
        gen = rng.split("dir").generator()
        w_prime = 0.05 * gen.normal(size=(48, 48)) / math.sqrt(48)
        report = decomposition_identity_probe(params, w_prime, dataset)
        assert report.all_passed
        worst = max(
            r.measured for r in report.records
            if r.indices["kind"] != "sign_change_count"
        )
        assert worst < 1e-10

    def test_zero_perturbation_trivial(self):
        _, params, dataset, _ = setup(7, m=24)
        report = decomposition_identity_probe(
            params, np.zeros((24, 24)), dataset
        )
        assert report.all_passed
        counts = [r.measured for r in report.records
                  if r.indices["kind"] == "sign_change_count"]
        assert counts == [0.0] * len(counts)

    def test_large_perturbation_still_exact(self):
        rng, params, dataset, _ = setup(8, m=32)
        gen = rng.split("dir").generator()
        w_prime = 0.5 * gen.normal(size=(32, 32)) / math.sqrt(32)
        report = decomposition_identity_probe(params, w_prime, dataset)
        assert report.all_passed
        counts = [r.measured for r in report.records
                  if r.indices["kind"] == "sign_change_count"]
        assert max(counts) > 0


class TestIndicatorCoordinateProbe:
    def make_landscape(self):
        scales = ScaleParams(n=2, L=3, d=2, m=48, delta=0.4)
        return LandscapeParams.from_scales(scales)

    def test_l_star_range_enforced(self):
        _, _, _, trace = setup(9)
        lp = self.make_landscape()
        with pytest.raises(IndexError):
            indicator_coordinate_probe(trace, 0, 0, lp)
        with pytest.raises(IndexError):
            indicator_coordinate_probe(trace, 0, trace.L, lp)

    def test_quantile_thresholds_give_nonzero_count(self):
        _, _, _, trace = setup(10, m=256)
        lp = self.make_landscape()
        abs_g = np.abs(trace.g)
        report = indicator_coordinate_probe(
            trace, 0, 1, lp,
            small_threshold=float(np.quantile(abs_g, 0.10)),
            large_threshold=float(np.quantile(abs_g, 0.50)),
        )
        assert report.records[0].indices["count"] >= 0
        assert report.extras["candidates"] == 256

    def test_default_thresholds_underflow_to_zero_count(self):
        # beta_minus/sqrt(m) is astronomically small at desk widths
        _, _, _, trace = setup(11)
        lp = self.make_landscape()
        report = indicator_coordinate_probe(trace, 0, 1, lp)
        assert report.records[0].indices["count"] == 0


class TestBackwardCoordinateProbe:
    def test_argmax_lexicographic(self):
        loss = np.zeros((2, 2, 2))
        loss[0, 1] = [3.0, 0.0]
        loss[1, 0] = [3.0, 0.0]
        assert argmax_loss(loss) == (0, 3)

    def test_zero_loss_degenerate(self):
        _, params, _, trace = setup(12)
        report = backward_coordinate_probe(
            params, trace, np.zeros((2, 2, 2))
        )
        assert report.extras.get("degenerate") is True

    def test_both_readings_reported(self):
        _, params, _, trace = setup(13)
        report = backward_coordinate_probe(params, trace, trace.loss)
        readings = {r.indices["reading"] for r in report.records}
        assert readings == {"sqrt_dnl", "nl_sqrt_d"}

    def test_threshold_values(self):
        _, params, _, trace = setup(14, n=2, L=3)
        report = backward_coordinate_probe(params, trace, trace.loss)
        i_star, step_star = argmax_loss(trace.loss)
        loss_norm = np.linalg.norm(trace.loss[i_star, step_star - 2])
        by_reading = {r.indices["reading"]: r for r in report.records}
        assert by_reading["sqrt_dnl"].indices["threshold"] == pytest.approx(
            loss_norm / (6 * math.sqrt(2 * 2 * 3))
        )
        assert by_reading["nl_sqrt_d"].indices["threshold"] == pytest.approx(
            loss_norm / (6 * 2 * 3 * math.sqrt(2))
        )

    def test_invalid_reading_rejected(self):
        _, params, _, trace = setup(15)
        with pytest.raises(ValueError):
            backward_coordinate_probe(params, trace, trace.loss,
                                      denominator="bogus")


class TestGradientBoundProbes:
    def test_ratio_definitions(self):
        _, params, dataset, trace = setup(16)
        report = fake_gradient_bound_probe(params, trace, trace.loss)
        values = {r.indices["kind"]: r.measured for r in report.records}
        grad = gradient(params, dataset)
        max_norm = float(np.max(np.linalg.norm(trace.loss, axis=2)))
        fro = float(np.linalg.norm(grad))
        assert values["lower_ratio"] == pytest.approx(
            fro ** 2 / (params.m * max_norm ** 2), rel=1e-12
        )
        assert values["upper_fro_ratio"] == pytest.approx(
            fro / (math.sqrt(params.m) * max_norm), rel=1e-12
        )

    def test_true_loss_variant_matches(self):
        _, params, dataset, trace = setup(17)
        a = gradient_upper_bound_probe(params, dataset, trace)
        b = fake_gradient_bound_probe(params, trace, trace.loss)
        va = {r.indices["kind"]: r.measured for r in a.records}
        vb = {r.indices["kind"]: r.measured for r in b.records}
        assert va == vb

    def test_zero_loss_degenerate(self):
        _, params, _, trace = setup(18)
        report = fake_gradient_bound_probe(
            params, trace, np.zeros_like(trace.loss)
        )
        assert report.extras.get("degenerate") is True
