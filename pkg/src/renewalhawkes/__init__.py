"""Hawkes processes with renewal immigration: simulation, EM estimation, goodness of fit."""

__version__ = "0.1.0"

from .events import EventSeries, read_events, write_events
from .models import (
    DeterministicIntensity,
    ExponentialKernel,
    HistogramKernel,
    HomogeneousPoisson,
    InhomogeneousEstimate,
    ModelSpec,
    OffspringModel,
    OmoriKernel,
    WeibullRenewal,
    kernel_eval,
    renewal_eval,
    sinusoidal_intensity,
)
from .intensity import (
    compensator,
    compensator_at_events,
    exp_recursion_state,
    offspring_intensity,
)
from .weights import BranchingWeights, ImmigrantVector, branching_estep, validate_weights
from .simulate import (
    SimulationResult,
    read_simulation,
    sample_immigrant_vector,
    simulate_hawkes_renewal,
    simulate_renewal_immigrants,
    simulate_to_size,
    write_simulation,
)
from .em_complete import (
    EmOptions,
    default_init,
    e_step,
    fit_complete_em,
    m_step_eta,
    m_step_immigration,
    m_step_offspring_histogram,
    m_step_offspring_parametric,
)
from .em_semicomplete import (
    SemiEmOptions,
    fit_semicomplete_em,
    m_step_mu_kernel,
    m_step_offspring_joint,
    semi_e_step,
    silverman_bandwidth,
)
from .gof import (
    GofOptions,
    GofReport,
    conditional_loglik,
    gof_report,
    ks_test_exponential,
    mc_loglik,
    mc_pvalue,
    model_selection,
    residual_transform,
)
from .baseline import fit_standard_mle, standard_loglik
from .reports import FitReport
from .rng import derive_rng, make_rng

__all__ = [name for name in dir() if not name.startswith("_")]
