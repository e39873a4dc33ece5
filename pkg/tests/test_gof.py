import itertools
import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import kolmogorov

import renewalhawkes as rh
from renewalhawkes.errors import InsufficientDataError
from renewalhawkes.intensity import offspring_sums
from renewalhawkes.rng import derive_rng

from conftest import random_events, random_renewal_model


def chain_prob(events, model, zvec):
    phi = model.offspring.eta * offspring_sums(events.times, model.offspring.kernel)
    p, k = 1.0, 0
    for i in range(1, events.n):
        mu = model.immigration.hazard_clamped(events.times[i] - events.times[k])
        pi = mu / (mu + phi[i])
        p *= pi if zvec[i] else 1.0 - pi
        if zvec[i]:
            k = i
    return p


def enumerate_vectors(n):
    return [np.array((1,) + bits, dtype=np.int8) for bits in itertools.product((0, 1), repeat=n - 1)]


class TestConditionalLoglik:
    def test_memoryless_ignores_z(self):
        ev = rh.EventSeries([1.0, 2.5, 4.0], 6.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 2.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        expected = 3 * math.log(0.5) - 6.0 / 2.0
        for z in ([1, 0, 0], [1, 1, 1], [1, 0, 1]):
            assert rh.conditional_loglik(model, ev, np.array(z)) == pytest.approx(expected, abs=1e-12)

    def test_against_quadrature(self):
        ev = rh.EventSeries([0.8, 1.9, 2.6], 4.0)
        model = rh.ModelSpec(rh.WeibullRenewal(2.0, 1.5), rh.OffspringModel(0.4, rh.ExponentialKernel(1.0)))
        z = np.array([1, 0, 1])
        t = ev.times

        def intensity(s):
            last = 0.0
            for ti, zi in zip(t, z):
                if zi and ti < s:
                    last = ti
            mu = model.immigration.hazard(max(s - last, 1e-300))
            phi = sum(
                model.offspring.eta * model.offspring.kernel.density(s - ti) for ti in t if ti < s
            )
            return mu + phi

        total, _ = quad(intensity, 0.0, 4.0, limit=400, points=list(t))
        # intensity at an event uses the left limit; nudge below ti to avoid its own kernel mass
        expected = sum(math.log(intensity(ti - 1e-12)) for ti in t) - total
        got = rh.conditional_loglik(model, ev, z)
        assert got == pytest.approx(expected, abs=1e-6)

    def test_attribution_swap_term_by_term(self):
        ev = rh.EventSeries([1.0, 2.0, 3.5], 5.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.4, 2.0), rh.OffspringModel(0.5, rh.ExponentialKernel(2.0)))
        t = ev.times
        imm = model.immigration
        phi = model.offspring.eta * offspring_sums(t, model.offspring.kernel)
        tail = model.offspring.eta * float(np.sum(model.offspring.kernel.cdf(ev.r - t)))

        def loglik_hand(z):
            resets = [0.0] + [float(ti) for ti, zi in zip(t, z) if zi]
            lam = []
            for i, ti in enumerate(t):
                last = max(u for u in resets if u < ti)
                lam.append(imm.hazard_clamped(ti - last) + phi[i])
            segs = resets + [ev.r]
            imm_int = sum(imm.cumulative_hazard(b - a) for a, b in zip(segs, segs[1:]))
            return float(np.sum(np.log(lam)) - imm_int - tail)

        for z in ([1, 1, 1], [1, 0, 0], [1, 0, 1]):
            assert rh.conditional_loglik(model, ev, np.array(z)) == pytest.approx(
                loglik_hand(z), abs=1e-12
            )

    def test_invalid_vector(self):
        ev = rh.EventSeries([1.0, 2.0], 5.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 1.0), rh.OffspringModel(0.1, rh.ExponentialKernel(1.0)))
        with pytest.raises(ValueError):
            rh.conditional_loglik(model, ev, np.array([0, 1]))


class TestMcLoglik:
    def test_small_n_enumeration(self):
        rng = derive_rng(100)
        for trial in range(4):
            ev = random_events(rng, n_max=8, n_min=4)
            model = random_renewal_model(rng, eta_max=0.6)
            vecs = enumerate_vectors(ev.n)
            exact = math.log(
                sum(chain_prob(ev, model, z) * math.exp(rh.conditional_loglik(model, ev, z)) for z in vecs)
            )
            ll, se = rh.mc_loglik(model, ev, rh.GofOptions(4000, seed=trial))
            assert abs(ll - exact) < 0.05

    def test_z_independent_exact(self):
        ev = rh.EventSeries([1.0, 2.0, 4.5], 6.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 2.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        ll, se = rh.mc_loglik(model, ev, rh.GofOptions(30, seed=0))
        assert se == 0.0
        assert ll == pytest.approx(rh.conditional_loglik(model, ev, np.array([1, 0, 0])), abs=1e-12)

    def test_determinism(self):
        rng = derive_rng(101)
        ev = random_events(rng, n_max=12, n_min=6)
        model = random_renewal_model(rng)
        a = rh.mc_loglik(model, ev, rh.GofOptions(200, seed=7))
        b = rh.mc_loglik(model, ev, rh.GofOptions(200, seed=7))
        assert a == b


class TestResidualTransform:
    def test_unit_poisson_identity(self):
        ev = rh.EventSeries([0.5, 1.7, 3.1], 4.0)
        model = rh.ModelSpec(rh.HomogeneousPoisson(1.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        np.testing.assert_allclose(rh.residual_transform(model, ev, np.array([1, 0, 0])), ev.times)

    def test_linear_time_change(self):
        ev = rh.EventSeries([0.5, 1.7, 3.1], 4.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 2.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        np.testing.assert_allclose(
            rh.residual_transform(model, ev, np.array([1, 1, 1])), ev.times / 2.0, atol=1e-14
        )

    def test_true_model_moment_check(self):
        truth = rh.ModelSpec(rh.WeibullRenewal(0.8, 6.0), rh.OffspringModel(0.4, rh.ExponentialKernel(2.0)))
        sim = rh.simulate_hawkes_renewal(truth, 12000.0, derive_rng(102, 0))
        z = sim.immigrant_vector()
        tt = rh.residual_transform(truth, sim.events, z)
        gaps = np.diff(np.concatenate([[0.0], tt]))
        assert abs(gaps.mean() - 1.0) < 3.0 / math.sqrt(sim.events.n)

    def test_strictly_increasing(self, rng):
        for _ in range(10):
            ev = random_events(rng, n_max=20, n_min=5)
            model = random_renewal_model(rng)
            z = rh.sample_immigrant_vector(ev, model, rng).z
            tt = rh.residual_transform(model, ev, z)
            assert np.all(np.diff(tt) > 0)


class TestKsExponential:
    def test_closed_form_at_quantiles(self):
        n = 40
        gaps = -np.log(1.0 - np.arange(1, n + 1) / (n + 1))
        D, _ = rh.ks_test_exponential(np.cumsum(gaps))
        F = 1.0 - np.exp(-np.sort(gaps))
        i = np.arange(1, n + 1)
        exact = max(np.max(i / n - F), np.max(F - (i - 1) / n))
        assert D == pytest.approx(exact, abs=1e-12)

    def test_pvalue_against_scipy_series(self):
        rng = derive_rng(103)
        for _ in range(10):
            gaps = rng.exponential(1.0, 500)
            D, p = rh.ks_test_exponential(np.cumsum(gaps))
            assert p == pytest.approx(float(kolmogorov(math.sqrt(500) * D)), abs=1e-9)

    @pytest.mark.slow
    def test_null_calibration(self):
        rng = derive_rng(104)
        rejections = 0
        trials = 500
        for _ in range(trials):
            gaps = rng.exponential(1.0, 10_000)
            _, p = rh.ks_test_exponential(np.cumsum(gaps))
            rejections += p < 0.05
        assert 0.02 <= rejections / trials <= 0.08

    def test_degenerate_gaps_rejected_strongly(self):
        tt = np.arange(1.0, 101.0)
        D, p = rh.ks_test_exponential(tt)
        assert D > 0.4
        assert p < 1e-6

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            rh.ks_test_exponential([1.0])


class TestMcPvalue:
    def test_z_independent_single_value(self):
        ev = rh.EventSeries([1.0, 2.0, 4.5, 5.0], 6.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 2.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        p = rh.mc_pvalue(model, ev, rh.GofOptions(50, seed=0))
        z = np.array([1, 0, 0, 0])
        _, single = rh.ks_test_exponential(rh.residual_transform(model, ev, z))
        assert p == pytest.approx(single, abs=1e-15)

    def test_small_n_enumeration(self):
        rng = derive_rng(105)
        ev = random_events(rng, n_max=8, n_min=5)
        model = random_renewal_model(rng, eta_max=0.6)
        exact = 0.0
        for z in enumerate_vectors(ev.n):
            _, p = rh.ks_test_exponential(rh.residual_transform(model, ev, z))
            exact += chain_prob(ev, model, z) * p
        mc = rh.mc_pvalue(model, ev, rh.GofOptions(4000, seed=9))
        assert abs(mc - exact) < 0.02


class TestModelSelection:
    def _fit_pair(self):
        truth = rh.ModelSpec(rh.HomogeneousPoisson(0.5), rh.OffspringModel(0.4, rh.ExponentialKernel(2.0)))
        sim = rh.simulate_hawkes_renewal(truth, 600.0, derive_rng(106, 0))
        h0 = rh.fit_standard_mle(sim.events, "exponential", want_weights=False)
        return sim, h0

    def test_identical_models_delta(self):
        sim, h0 = self._fit_pair()
        h1 = rh.FitReport(
            algorithm="em_complete",
            model=rh.ModelSpec(rh.WeibullRenewal(1.0, 1.0 / h0.model.immigration.rate), h0.model.offspring),
            iterations=0,
            trace=[],
            converged=True,
            loglik=h0.loglik,
            loglik_label="monte_carlo",
            loglik_se=0.0,
            k=4,
            n=h0.n,
            r=h0.r,
            data_fingerprint=h0.data_fingerprint,
        )
        sel = rh.model_selection(h0, h1)
        assert sel.wilks_stat == 0.0
        assert sel.delta_aic == pytest.approx(-2.0)
        assert sel.df == 1

    def test_fingerprint_mismatch(self):
        sim, h0 = self._fit_pair()
        other = rh.EventSeries(sim.events.times[:-1], sim.events.r)
        h1 = rh.fit_standard_mle(other, "exponential", want_weights=False)
        h1.k = 4
        with pytest.raises(ValueError):
            rh.model_selection(h0, h1)


class TestGofReport:
    def test_report_fields_and_save(self, tmp_path):
        rng = derive_rng(107)
        ev = random_events(rng, n_max=15, n_min=8)
        model = random_renewal_model(rng)
        rep = rh.gof_report(model, ev, rh.GofOptions(40, seed=5))
        assert 0.0 <= rep.mc_pvalue <= 1.0
        assert rep.mc_loglik_se >= 0.0
        assert rep.sample_logliks.shape == (40,)
        assert rep.aic == pytest.approx(2 * rep.k - 2 * rep.mc_loglik)
        rep.save(tmp_path / "gof")
        assert (tmp_path / "gof.json").exists()
        assert (tmp_path / "gof_samples.csv").read_text().count("\n") == 41
