"""Deterministic semiclassical paths of single Gaussian components.

Integrates ``d alpha/dt = U(alpha)``, ``d sigma/dt = S(alpha, sigma)`` with
classical RK4 (default) or forward Euler, checking that every state stays a
valid quantum Gaussian.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .coefficients import LindbladModel, local_flow
from .phase import AdmissibilityError, GaussianComponent, min_eigenvalue, symmetrize, uncertainty_eigenvalue

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Integration produced a non-finite or inadmissible state."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class NTSWarning(UserWarning):
    """A covariance left the not-too-squeezed regime of the harmonic approximation."""


class Method(str, enum.Enum):
    RK4 = "rk4"
    EULER = "euler"


class Policy(str, enum.Enum):
    ERROR = "error"
    WARN = "warn"
    IGNORE = "ignore"


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.02
    t_max: float = 10.0
    method: Method = Method.RK4
    check_policy: Policy = Policy.ERROR
    nts_policy: Policy = Policy.WARN
    nts_xi: float = 1.0
    record_stride: int = 1
    uncertainty_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "check_policy", Policy(self.check_policy))
        object.__setattr__(self, "nts_policy", Policy(self.nts_policy))
        if not (self.dt > 0 and self.t_max > 0 and self.dt <= self.t_max):
            raise ValueError(f"need 0 < dt <= t_max, got dt={self.dt}, t_max={self.t_max}")
        if not 0 < self.nts_xi <= 1:
            raise ValueError(f"nts_xi must lie in (0, 1], got {self.nts_xi}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError(f"record_stride must be a positive integer, got {self.record_stride}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_max / self.dt)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded semiclassical path; arrays are indexed by record number."""

    times: np.ndarray
    alphas: np.ndarray
    sigmas: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    @property
    def states(self) -> list[GaussianComponent]:
        return [GaussianComponent(a, s) for a, s in zip(self.alphas, self.sigmas)]

    def state(self, i: int) -> GaussianComponent:
        return GaussianComponent(self.alphas[i], self.sigmas[i])


# --- batched right-hand sides ------------------------------------------------


def _rhs(model: LindbladModel, alpha, sigma):
    U, S0, SD = local_flow(model, alpha, sigma)
    return U, S0 + SD


def _advance(model: LindbladModel, alpha, sigma, dt: float, method: Method):
    if method is Method.EULER:
        U, S = _rhs(model, alpha, sigma)
        return alpha + dt * U, symmetrize(sigma + dt * S)
    k1a, k1s = _rhs(model, alpha, sigma)
    k2a, k2s = _rhs(model, alpha + 0.5 * dt * k1a, sigma + 0.5 * dt * k1s)
    k3a, k3s = _rhs(model, alpha + 0.5 * dt * k2a, sigma + 0.5 * dt * k2s)
    k4a, k4s = _rhs(model, alpha + dt * k3a, sigma + dt * k3s)
    alpha = alpha + dt / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
    sigma = sigma + dt / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
    return alpha, symmetrize(sigma)


def step(model: LindbladModel, state: GaussianComponent, dt: float, method: Method | str = Method.RK4) -> GaussianComponent:
    """Advance one component by a single step of size ``dt``."""
    alpha, sigma = _advance(model, state.alpha, state.sigma, dt, Method(method))
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(sigma))):
        raise NumericalError("non-finite state after step")
    return GaussianComponent(alpha, sigma, state.weight)


class AdmissibilityMonitor:
    """Applies the uncertainty and NTS policies to (stacks of) covariances."""

    def __init__(self, hbar: float, check_policy, nts_policy, nts_xi: float, tol: float = 1e-9):
        self.hbar = hbar
        self.check_policy = Policy(check_policy)
        self.nts_policy = Policy(nts_policy)
        self.nts_xi = nts_xi
        self.tol = tol
        self.uncertainty_ok = True
        self.nts_ok = True
        self.min_uncertainty_eig = np.inf
        self.min_nts_ratio = np.inf
        self._warned = set()

    def __call__(self, sigma: np.ndarray, step: int, label: str = "") -> None:
        if not np.all(np.isfinite(sigma)):
            raise NumericalError(f"non-finite covariance{label}", step)
        if self.check_policy is not Policy.IGNORE:
            lo = uncertainty_eigenvalue(sigma, self.hbar)
            self.min_uncertainty_eig = min(self.min_uncertainty_eig, float(np.min(lo)))
            if np.any(lo < -self.tol):
                self.uncertainty_ok = False
                self._report(self.check_policy, "uncertainty", f"uncertainty principle violated{label} (min eigenvalue {float(np.min(lo)):.3e})", step, AdmissibilityError)
        if self.nts_policy is not Policy.IGNORE:
            ratio = min_eigenvalue(sigma) / (0.5 * self.hbar)
            self.min_nts_ratio = min(self.min_nts_ratio, float(np.min(ratio)))
            if np.any(ratio < self.nts_xi):
                self.nts_ok = False
                self._report(self.nts_policy, "nts", f"covariance too squeezed{label}: min eigenvalue {float(np.min(ratio)):.4g} * hbar/2 < xi={self.nts_xi}", step, AdmissibilityError)

    def _report(self, policy: Policy, kind: str, message: str, step: int, exc) -> None:
        if policy is Policy.ERROR:
            raise NumericalError(message, step) from exc(message)
        if kind not in self._warned:
            self._warned.add(kind)
            warnings.warn(f"{message} (step {step}); further warnings suppressed", NTSWarning if kind == "nts" else RuntimeWarning, stacklevel=4)

    def summary(self) -> dict:
        return {
            "uncertainty_ok": self.uncertainty_ok,
            "nts_ok": self.nts_ok,
            "min_uncertainty_eigenvalue": self.min_uncertainty_eig,
            "min_nts_ratio": self.min_nts_ratio,
        }


def propagate(
    model: LindbladModel,
    init: GaussianComponent,
    cfg: IntegratorConfig = IntegratorConfig(),
    monitor: AdmissibilityMonitor | None = None,
) -> Trajectory:
    """Integrate one component from ``t=0`` to ``cfg.t_max``.

    Times are ``k * dt`` (not accumulated), recorded every
    ``cfg.record_stride`` steps plus the final step.
    """
    if monitor is None:
        monitor = AdmissibilityMonitor(model.hbar, cfg.check_policy, cfg.nts_policy, cfg.nts_xi, cfg.uncertainty_tol)
    alpha = np.array(init.alpha, dtype=float)
    sigma = np.array(init.sigma, dtype=float)
    monitor(sigma, 0)
    n = cfg.n_steps
    times, alphas, sigmas = [0.0], [alpha], [sigma]
    for k in range(1, n + 1):
        alpha, sigma = _advance(model, alpha, sigma, cfg.dt, cfg.method)
        if not np.all(np.isfinite(alpha)):
            raise NumericalError("non-finite centroid", k)
        monitor(sigma, k)
        if k % cfg.record_stride == 0 or k == n:
            times.append(k * cfg.dt)
            alphas.append(alpha)
            sigmas.append(sigma)
    log.debug("propagated %d steps, %d records", n, len(times))
    return Trajectory(np.array(times), np.array(alphas), np.array(sigmas))


def analytic_free_particle(params: "FreeParticleParams", t: float) -> GaussianComponent:
    """Closed-form state of the free particle with position-coupled dephasing.

    Starts from the coherent state ``sigma_0 = (hbar/2) I`` at ``(x0, p0)``;
    ``params`` is a :class:`~semipath.models.FreeParticleParams`.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    m, hbar, lam = params.m, params.hbar, params.lam
    sxx = hbar / 2 + hbar * t**2 / (2 * m**2) + 2 * hbar * lam * t
    sxp = hbar * t / (2 * m)
    spp = hbar / 2
    return GaussianComponent([params.x0 + params.p0 * t / m, params.p0], [[sxx, sxp], [sxp, spp]])
