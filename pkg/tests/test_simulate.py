import itertools
import math

import numpy as np
import pytest

import renewalhawkes as rh
from renewalhawkes.errors import ExplosionError
from renewalhawkes.intensity import offspring_sums
from renewalhawkes.rng import derive_rng
from renewalhawkes.simulate import ImmigrantVectorSampler

from conftest import random_events, random_renewal_model


class TestImmigrantStream:
    def test_poisson_count(self):
        model = rh.WeibullRenewal(1.0, 10.0)
        counts = [rh.simulate_renewal_immigrants(model, 1e4, derive_rng(5, k)).size for k in range(12)]
        assert abs(np.mean(counts) - 1000) < 3 * math.sqrt(1000)

    def test_near_deterministic_spacing(self):
        model = rh.WeibullRenewal(200.0, 10.0)
        times = rh.simulate_renewal_immigrants(model, 100.0, derive_rng(6, 0))
        gaps = np.diff(np.concatenate([[0.0], times]))
        assert np.all(np.abs(gaps - 10.0) < 1.0)

    def test_sinusoidal_thinning_count(self):
        sin = rh.sinusoidal_intensity()
        counts = [rh.simulate_renewal_immigrants(sin, 250.0, derive_rng(7, k)).size for k in range(20)]
        assert abs(np.mean(counts) - 375.0) < 3 * math.sqrt(375.0)

    def test_estimate_without_majorant_rejected(self):
        est = rh.InhomogeneousEstimate([1.0], [1.0], 1.0, 10.0)
        with pytest.raises(ValueError):
            rh.simulate_renewal_immigrants(est, 10.0, derive_rng(8, 0))


class TestClusterSimulation:
    def test_no_offspring_at_eta_zero(self):
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 5.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        sim = rh.simulate_hawkes_renewal(model, 500.0, derive_rng(9, 0))
        assert np.all(sim.generation == 0)
        assert np.all(sim.parent == 0)

    def test_mean_rate(self):
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 10.0), rh.OffspringModel(0.5, rh.ExponentialKernel(3.0)))
        sim = rh.simulate_hawkes_renewal(model, 1e5, derive_rng(10, 0))
        # mean rate = 1/(E[W] (1 - eta)); cluster sizes inflate the count sd
        assert abs(sim.events.n / 1e5 - 0.2) < 3 * 300 / 1e5

    def test_determinism(self):
        model = rh.ModelSpec(rh.WeibullRenewal(0.7, 4.0), rh.OffspringModel(0.6, rh.ExponentialKernel(2.0)))
        a = rh.simulate_hawkes_renewal(model, 2000.0, derive_rng(11, 0))
        b = rh.simulate_hawkes_renewal(model, 2000.0, derive_rng(11, 0))
        np.testing.assert_array_equal(a.events.times, b.events.times)
        np.testing.assert_array_equal(a.parent, b.parent)

    def test_forest_invariants(self):
        model = rh.ModelSpec(rh.WeibullRenewal(1.3, 6.0), rh.OffspringModel(0.7, rh.ExponentialKernel(1.5)))
        sim = rh.simulate_hawkes_renewal(model, 5000.0, derive_rng(12, 0))
        idx = np.arange(1, sim.events.n + 1)
        offspring = sim.parent > 0
        assert np.all(sim.parent[offspring] < idx[offspring])
        assert np.all(sim.generation[sim.parent[offspring] - 1] + 1 == sim.generation[offspring])
        assert np.all(sim.generation[~offspring] == 0)

    def test_empirical_branching_ratio(self):
        eta = 0.6
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 10.0), rh.OffspringModel(eta, rh.ExponentialKernel(2.0)))
        sim = rh.simulate_hawkes_renewal(model, 2e5, derive_rng(13, 0))
        assert (sim.parent > 0).mean() == pytest.approx(eta, abs=0.02)

    def test_explosion_guard(self):
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 0.01), rh.OffspringModel(1.3, rh.ExponentialKernel(1.0)))
        with pytest.raises(ExplosionError, match="1.3"):
            rh.simulate_hawkes_renewal(model, 1e5, derive_rng(14, 0), max_points=5000)

    def test_fixed_size(self):
        model = rh.ModelSpec(rh.WeibullRenewal(0.5, 5.0), rh.OffspringModel(0.5, rh.ExponentialKernel(3.0)))
        sim = rh.simulate_to_size(model, 300, derive_rng(15, 0))
        assert sim.events.n == 300
        assert sim.events.r == sim.events.times[-1]

    def test_io_round_trip(self, tmp_path):
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 5.0), rh.OffspringModel(0.5, rh.ExponentialKernel(1.0)))
        sim = rh.simulate_hawkes_renewal(model, 300.0, derive_rng(16, 0))
        path = tmp_path / "sim.csv"
        rh.write_simulation(path, sim)
        back = rh.read_simulation(path)
        np.testing.assert_array_equal(back.events.times, sim.events.times)
        np.testing.assert_array_equal(back.parent, sim.parent)
        np.testing.assert_array_equal(back.generation, sim.generation)
        assert back.events.r == sim.events.r


class TestImmigrantVectorSampler:
    def test_eta_zero_gives_all_ones(self):
        ev = rh.EventSeries([1.0, 2.0, 3.0], 5.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.0, 1.0), rh.OffspringModel(0.0, rh.ExponentialKernel(1.0)))
        z = rh.sample_immigrant_vector(ev, model, derive_rng(17, 0))
        np.testing.assert_array_equal(z.z, [1, 1, 1])

    def test_mu_dominant_acceptance_frequency(self):
        # Near-zero eta: P(z = all ones) = prod pi_{i|k}, computable exactly.
        ev = rh.EventSeries([2.0, 5.0, 9.0], 12.0)
        model = rh.ModelSpec(rh.WeibullRenewal(1.2, 4.0), rh.OffspringModel(0.02, rh.ExponentialKernel(2.0)))
        phi = model.offspring.eta * offspring_sums(ev.times, model.offspring.kernel)
        prob = 1.0
        k = 0
        for i in (1, 2):
            mu = model.immigration.hazard_clamped(ev.times[i] - ev.times[k])
            prob *= mu / (mu + phi[i])
            k = i
        draws = 10_000
        sampler = ImmigrantVectorSampler(ev, model)
        rng = derive_rng(18, 0)
        hits = sum(np.all(sampler.draw(rng) == 1) for _ in range(draws))
        se = math.sqrt(prob * (1 - prob) / draws)
        assert abs(hits / draws - prob) < 3 * se + 1e-12

    def test_distribution_matches_enumeration(self):
        ev = rh.EventSeries([0.7, 1.3, 2.9, 3.05], 5.0)
        model = rh.ModelSpec(rh.WeibullRenewal(0.7, 3.0), rh.OffspringModel(0.5, rh.ExponentialKernel(1.5)))
        phi = model.offspring.eta * offspring_sums(ev.times, model.offspring.kernel)

        def chain_prob(zvec):
            p, k = 1.0, 0
            for i in range(1, 4):
                mu = model.immigration.hazard_clamped(ev.times[i] - ev.times[k])
                pi = mu / (mu + phi[i])
                p *= pi if zvec[i] else 1 - pi
                if zvec[i]:
                    k = i
            return p

        vecs = [np.array((1,) + bits, dtype=np.int8) for bits in itertools.product((0, 1), repeat=3)]
        probs = np.array([chain_prob(z) for z in vecs])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        sampler = ImmigrantVectorSampler(ev, model)
        rng = derive_rng(19, 0)
        draws = 100_000
        counts = dict()
        for _ in range(draws):
            key = tuple(sampler.draw(rng))
            counts[key] = counts.get(key, 0) + 1
        chi2 = sum(
            (counts.get(tuple(z), 0) - draws * p) ** 2 / (draws * p) for z, p in zip(vecs, probs)
        )
        # chi-square with 7 df: reject only below the 0.01 quantile
        assert chi2 < 18.48

    def test_output_always_valid(self, rng):
        for _ in range(25):
            ev = random_events(rng)
            model = random_renewal_model(rng)
            z = rh.sample_immigrant_vector(ev, model, rng)
            assert z.z[0] == 1
            assert set(np.unique(z.z)) <= {0, 1}

    def test_determinism(self):
        ev = rh.EventSeries([0.5, 1.0, 2.5, 4.0], 5.0)
        model = rh.ModelSpec(rh.WeibullRenewal(0.8, 2.0), rh.OffspringModel(0.4, rh.ExponentialKernel(1.0)))
        a = rh.sample_immigrant_vector(ev, model, derive_rng(20, 3))
        b = rh.sample_immigrant_vector(ev, model, derive_rng(20, 3))
        np.testing.assert_array_equal(a.z, b.z)
