"""Gaussian-mixture (semiclassical Ehrenfest) simulation of open quantum systems."""

from .coefficients import (
    CoefficientBundle,
    ConventionError,
    ConventionFlags,
    LindbladModel,
    Raising,
    coefficient_bundle,
    covariance_rhs_S,
    diffusion_D,
    drift,
    effective_drift,
    friction_jacobian_Gamma,
    friction_vector,
    hessian_F,
    split_S,
)
from .ensemble import EnsembleConfig, EnsembleError, SigmaScheme, psd_sqrt, run_ensemble, sde_step
from .models import FreeParticleParams, damped_model, free_particle_model, harmonic_model, momentum_coupled_model
from .observables import (
    EnergyBalance,
    PolynomialObservable,
    RateDecomposition,
    UnsupportedObservable,
    component_rate,
    energy_balance,
    gaussian_expectation,
    grad_alpha,
    grad_sigma,
    hess_alpha,
    mixture_expectation,
    mixture_rate,
    mixture_standard_error,
)
from .phase import (
    AdmissibilityError,
    GaussianComponent,
    MixtureSnapshot,
    nts_check,
    purity_defect,
    symplectic_form,
    uncertainty_check,
)
from .propagator import IntegratorConfig, Method, NumericalError, NTSWarning, Policy, Trajectory, analytic_free_particle, propagate, step
from .scenario import Scenario, ScenarioError, load_scenario

__version__ = "0.1.0"
