import math

import numpy as np
import pytest
from scipy.integrate import quad

import renewalhawkes as rh
from renewalhawkes.errors import UnsupportedKernelError
from renewalhawkes.intensity import exp_decay_sums, offspring_sums
from renewalhawkes.rng import derive_rng

from conftest import random_events, random_renewal_model


def direct_decay_sums(times, tau0):
    return np.array([np.sum(np.exp(-(t - times[:i]) / tau0)) for i, t in enumerate(times)])


class TestExpRecursion:
    def test_single_event(self):
        ev = rh.EventSeries([1.0], 5.0)
        assert rh.exp_recursion_state(ev, rh.ExponentialKernel(1.0))[0] == 0.0

    def test_two_events(self):
        ev = rh.EventSeries([1.0, 2.0], 5.0)
        A = rh.exp_recursion_state(ev, rh.ExponentialKernel(1.0))
        assert A[1] == pytest.approx(math.exp(-1.0), abs=1e-15)

    def test_large_random_instance_matches_direct(self, rng):
        times = np.sort(rng.uniform(0.0, 500.0, 1000))
        times += np.linspace(0, 1e-9, 1000)
        for tau0 in (0.05, 1.0, 40.0):
            A = exp_decay_sums(times, tau0)
            assert np.max(np.abs(A - direct_decay_sums(times, tau0))) < 1e-10

    def test_non_exponential_kernel_rejected(self):
        ev = rh.EventSeries([1.0, 2.0], 5.0)
        with pytest.raises(UnsupportedKernelError):
            rh.exp_recursion_state(ev, rh.OmoriKernel(1.0, 1.0))


class TestOffspringIntensity:
    def test_no_prior_events(self):
        ev = rh.EventSeries([1.0], 5.0)
        off = rh.OffspringModel(0.5, rh.ExponentialKernel(1.0))
        assert rh.offspring_intensity(off, ev, 0.5) == 0.0

    def test_single_term(self):
        ev = rh.EventSeries([1.0], 5.0)
        off = rh.OffspringModel(0.5, rh.ExponentialKernel(1.0))
        assert rh.offspring_intensity(off, ev, 2.0) == pytest.approx(0.5 * math.exp(-1.0))

    def test_event_at_t_excluded(self):
        ev = rh.EventSeries([1.0, 2.0], 5.0)
        off = rh.OffspringModel(1.0, rh.ExponentialKernel(1.0))
        only_first = off.kernel.density(1.0)
        assert rh.offspring_intensity(off, ev, 2.0) == pytest.approx(only_first)

    def test_recursion_equals_direct_sum(self, rng):
        times = np.sort(rng.uniform(0.0, 10.0, 5))
        ev = rh.EventSeries(times, 12.0)
        off = rh.OffspringModel(0.7, rh.ExponentialKernel(1.3))
        S = offspring_sums(ev.times, off.kernel)
        for i in range(5):
            direct = rh.offspring_intensity(off, ev, float(times[i]))
            assert abs(0.7 * S[i] - direct) < 1e-12

    def test_omori_chunked_matches_direct(self, rng):
        times = np.sort(rng.uniform(0.0, 50.0, 600))
        kernel = rh.OmoriKernel(0.5, 1.2)
        S = offspring_sums(times, kernel)
        for i in (1, 300, 599):
            assert S[i] == pytest.approx(float(np.sum(kernel.density(times[i] - times[:i]))), rel=1e-12)


class TestCompensator:
    def test_homogeneous_identity(self):
        ev = rh.EventSeries([1.0, 3.0], 10.0)
        model = rh.ModelSpec(rh.HomogeneousPoisson(1.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        assert rh.compensator(model, ev, np.array([1, 0]), 7.0) == pytest.approx(7.0)

    def test_unit_poisson_via_weibull(self):
        ev = rh.EventSeries([1.0, 3.0], 10.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 1.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        for z in ([1, 0], [1, 1]):
            assert rh.compensator(model, ev, np.array(z), 8.5) == pytest.approx(8.5, abs=1e-12)

    def test_increasing_hazard_segments(self):
        ev = rh.EventSeries([1.0, 2.0], 3.0)
        model = rh.ModelSpec(rh.WeibullRenewal(2.0, 1.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        val = rh.compensator(model, ev, np.array([1, 1]), 3.0)
        assert val == pytest.approx(3.0, abs=1e-12)
        # quadrature oracle over the piecewise hazard
        hazard = model.immigration.hazard
        oracle = sum(quad(lambda s: hazard(s), 0.0, 1.0)[0] for _ in (1,))
        oracle += quad(lambda s: hazard(s - 1.0), 1.0, 2.0)[0]
        oracle += quad(lambda s: hazard(s - 2.0), 2.0, 3.0)[0]
        assert val == pytest.approx(oracle, abs=1e-9)

    def test_invalid_immigrant_vector(self):
        ev = rh.EventSeries([1.0, 2.0], 3.0)
        model = rh.ModelSpec(rh.WeibullRenewal(2.0, 1.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        with pytest.raises(ValueError):
            rh.compensator(model, ev, np.array([0, 1]), 3.0)

    def test_nondecreasing_and_zero_at_origin(self, rng):
        for _ in range(20):
            ev = random_events(rng)
            model = random_renewal_model(rng)
            z = rh.sample_immigrant_vector(ev, model, rng).z
            grid = np.linspace(1e-9, ev.r, 60)
            vals = np.array([rh.compensator(model, ev, z, float(t)) for t in grid])
            # before the first event the compensator is exactly the immigration
            # cumulative hazard, which vanishes at the origin
            assert vals[0] == pytest.approx(model.immigration.cumulative_hazard(grid[0]), rel=1e-12)
            assert model.immigration.cumulative_hazard(0.0) == 0.0
            assert np.all(np.diff(vals) >= -1e-12)

    def test_at_events_matches_pointwise(self, rng):
        ev = random_events(rng, n_max=12, n_min=4)
        model = random_renewal_model(rng)
        z = rh.sample_immigrant_vector(ev, model, rng).z
        per_event = rh.compensator_at_events(model, ev, z)
        for i, t in enumerate(ev.times):
            assert per_event[i] == pytest.approx(rh.compensator(model, ev, z, float(t)), rel=1e-12)
