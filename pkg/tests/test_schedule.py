import math

import numpy as np
import pytest

from ogd.schedule import build_schedule, forward_diffuse, posterior_mean, t0_estimate


def closed_form_tables(betas):
    """Independent oracle: direct evaluation of the alpha/sigma closed forms."""
    alphas = [1.0]
    for b in betas:
        alphas.append(math.sqrt(alphas[-1] ** 2 * (1.0 - b)))
    sigmas = []
    for t, b in enumerate(betas, start=1):
        num = 1.0 - alphas[t - 1] ** 2
        den = 1.0 - alphas[t] ** 2
        sigmas.append(math.sqrt(num / den * b))
    return np.array(alphas), np.array(sigmas)


class TestBuildSchedule:
    def test_constant_t3_example(self):
        s = build_schedule("constant", 3, beta=0.1)
        np.testing.assert_allclose(s.alphas, [1.0, 0.948683, 0.9, 0.853815], atol=1e-6)
        np.testing.assert_allclose(s.sigmas, [0.0, 0.229416, 0.264784], atol=1e-6)
        ref_a, ref_s = closed_form_tables([0.1, 0.1, 0.1])
        np.testing.assert_allclose(s.alphas, ref_a, rtol=1e-14)
        np.testing.assert_allclose(s.sigmas, ref_s, rtol=1e-14)

    def test_constant_t1_sigma_zero(self):
        s = build_schedule("constant", 1, beta=0.1)
        assert s.sigma(1) == 0.0

    def test_linear_default_reaches_noise(self):
        s = build_schedule("linear", 1000, beta_start=1e-4, beta_end=0.02)
        assert np.all(np.diff(s.alphas) < 0)
        assert s.alpha(1000) < 1e-2
        # brute-force product evaluation
        prod = 1.0
        for b in np.linspace(1e-4, 0.02, 1000):
            prod *= 1.0 - b
        assert abs(s.alpha(1000) - math.sqrt(prod)) < 1e-12

    @pytest.mark.parametrize("kind", ["constant", "linear", "polynomial"])
    def test_invariants(self, kind):
        kwargs = {"beta": 0.05} if kind == "constant" else {}
        s = build_schedule(kind, 50, **kwargs)
        assert np.all((s.betas > 0) & (s.betas < 1))
        assert s.alphas[0] == 1.0 and s.alphas[-1] > 0
        assert np.all(np.diff(s.alphas) < 0)
        assert s.sigmas[0] == 0.0 and np.all(s.sigmas >= 0)
        recursion = s.alphas[1:] ** 2 - (1 - s.betas) * s.alphas[:-1] ** 2
        assert np.abs(recursion).max() < 1e-12

    def test_pure(self):
        a = build_schedule("linear", 100)
        b = build_schedule("linear", 100)
        assert a.betas.tobytes() == b.betas.tobytes()
        assert a.alphas.tobytes() == b.alphas.tobytes()
        assert a.sigmas.tobytes() == b.sigmas.tobytes()

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="linear", total_steps=0),
            dict(kind="constant", total_steps=5),  # missing beta
            dict(kind="constant", total_steps=5, beta=1.0),
            dict(kind="constant", total_steps=5, beta=0.0),
            dict(kind="linear", total_steps=5, beta_start=0.0),
            dict(kind="linear", total_steps=5, beta_start=0.5, beta_end=0.1),
            dict(kind="linear", total_steps=5, beta_end=1.0),
            dict(kind="nope", total_steps=5),
        ],
    )
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            build_schedule(**kwargs)


class TestForwardDiffuse:
    def test_hand_example(self):
        s = build_schedule("constant", 3, beta=0.1)
        assert forward_diffuse(2.0, 2, 0.5, s) == pytest.approx(2.017945, abs=1e-6)
        # = 0.9 * 2 + sqrt(0.19) * 0.5
        assert forward_diffuse(2.0, 2, 0.5, s) == pytest.approx(0.9 * 2 + math.sqrt(0.19) * 0.5, rel=1e-15)

    def test_zero_noise_and_zero_signal(self):
        s = build_schedule("constant", 3, beta=0.1)
        x0 = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(forward_diffuse(x0, 3, np.zeros(3), s), s.alpha(3) * x0, rtol=1e-15)
        e = np.array([0.3, 0.1, -0.7])
        np.testing.assert_allclose(
            forward_diffuse(np.zeros(3), 3, e, s), math.sqrt(1 - s.alpha(3) ** 2) * e, rtol=1e-15
        )

    def test_errors(self):
        s = build_schedule("constant", 3, beta=0.1)
        with pytest.raises(ValueError):
            forward_diffuse(np.zeros(3), 2, np.zeros(4), s)
        with pytest.raises(ValueError):
            forward_diffuse(1.0, 0, 1.0, s)
        with pytest.raises(ValueError):
            forward_diffuse(1.0, 4, 1.0, s)


class TestPosteriorMean:
    def test_hand_example(self):
        s = build_schedule("constant", 3, beta=0.1)
        assert posterior_mean(2.017945, 0.5, 2, s) == pytest.approx(2.006188, abs=1e-6)

    def test_zero_eps(self):
        s = build_schedule("constant", 3, beta=0.1)
        assert posterior_mean(1.7, 2, 0.0 * 1.7, s) == pytest.approx(1.7 / math.sqrt(0.9), rel=1e-15)

    def test_contracts_toward_clean_signal(self):
        # brute-force check: one exact reverse step moves closer to the
        # clean trajectory than the noisy state was
        s = build_schedule("constant", 10, beta=0.05)
        rng = np.random.default_rng(7)
        for _ in range(50):
            x0 = rng.standard_normal(6)
            eps = rng.standard_normal(6)
            t = int(rng.integers(1, 11))
            xt = forward_diffuse(x0, t, eps, s)
            mean = posterior_mean(xt, eps, t, s)
            before = np.linalg.norm(xt - s.alpha(t) * x0)
            after = np.linalg.norm(mean - s.alpha(t - 1) * x0)
            assert after <= before + 1e-12

    def test_step_out_of_range(self):
        s = build_schedule("constant", 3, beta=0.1)
        with pytest.raises(ValueError):
            posterior_mean(1.0, 1.0, 5, s)


class TestT0Estimate:
    def test_exact_inversion(self):
        s = build_schedule("constant", 3, beta=0.1)
        xt = forward_diffuse(2.0, 2, 0.5, s)
        assert t0_estimate(xt, 0.5, 2, s) == pytest.approx(2.0, rel=1e-15)

    def test_zero_eps(self):
        s = build_schedule("constant", 3, beta=0.1)
        assert t0_estimate(1.8, 0.0 * 1.8, 2, s) == pytest.approx(2.0, rel=1e-15)

    def test_substitution_example(self):
        s = build_schedule("constant", 3, beta=0.1)
        assert t0_estimate(2.017945, 0.5, 2, s) == pytest.approx(2.0, abs=1e-6)


class TestIdentities:
    def test_round_trip_every_step(self):
        s = build_schedule("linear", 50, beta_start=1e-3, beta_end=0.05)
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal((5, 3))
        for t in range(1, 51):
            eps = rng.standard_normal((5, 3))
            back = t0_estimate(forward_diffuse(x0, t, eps, s), eps, t, s)
            np.testing.assert_allclose(back, x0, rtol=1e-9)

    def test_coefficient_identity(self):
        s = build_schedule("linear", 1000)
        for t in range(1, 1001):
            a = s.alpha(t)
            assert abs(a**2 + (math.sqrt(1 - a**2)) ** 2 - 1.0) < 1e-12

    def test_projection_identity(self):
        s = build_schedule("linear", 1000)
        for t in range(1, 1001):
            ratio = s.alpha(t) / s.alpha(t - 1)
            assert abs(ratio**2 + (1 - ratio**2) - 1.0) < 1e-12
            # the projection coefficient equals sqrt(beta_t) analytically
            assert abs((1 - ratio**2) - s.beta(t)) < 1e-12
