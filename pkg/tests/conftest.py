import numpy as np
import pytest

import renewalhawkes as rh
from renewalhawkes.rng import derive_rng


@pytest.fixture
def rng():
    return derive_rng(1234)


def random_events(rng, n_max=8, n_min=2, span=20.0) -> rh.EventSeries:
    n = int(rng.integers(n_min, n_max + 1))
    times = np.sort(rng.uniform(0.1, span, n))
    times += np.linspace(0.0, 1e-9, n)  # break float ties
    return rh.EventSeries(times, float(times[-1] + rng.uniform(0.5, 0.2 * span)))


def random_renewal_model(rng, eta_max=0.9) -> rh.ModelSpec:
    return rh.ModelSpec(
        rh.WeibullRenewal(float(rng.uniform(0.4, 2.0)), float(rng.uniform(0.5, 15.0))),
        rh.OffspringModel(float(rng.uniform(0.05, eta_max)), rh.ExponentialKernel(float(rng.uniform(0.2, 5.0)))),
    )
