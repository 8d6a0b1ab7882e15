"""Ready-made models used by the benchmark, the CLI and the test-suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .coefficients import ConventionFlags, LindbladModel
from .phase import GaussianComponent


@dataclass(frozen=True)
class FreeParticleParams:
    """Free particle ``H = p^2/2m`` with a single Lindblad ``L = sqrt(2 lam) x``."""

    m: float = 1.0
    hbar: float = 1.0
    lam: float = 0.15
    x0: float = 0.0
    p0: float = 1.0

    def model(self, diffusion: bool = True) -> LindbladModel:
        return free_particle_model(self.m, self.hbar, self.lam).replace(diffusion_enabled=diffusion)

    def initial(self) -> GaussianComponent:
        return GaussianComponent.coherent([self.x0, self.p0], self.hbar)

    def x2(self, t):
        """Closed-form ``<x^2>(t)`` of the deterministic path."""
        m, hbar = self.m, self.hbar
        return (self.x0 + self.p0 * t / m) ** 2 + hbar / 2 + hbar * t**2 / (2 * m**2) + 2 * hbar * self.lam * t


def free_particle_model(m: float = 1.0, hbar: float = 1.0, lam: float = 0.15) -> LindbladModel:
    return LindbladModel.from_text(1, hbar, "p1^2/(2*m)", ["sqrt(2*lam)*x1"] if lam else [], {"m": m, "lam": lam})


def harmonic_model(m: float = 1.0, omega: float = 1.0, hbar: float = 1.0) -> LindbladModel:
    return LindbladModel.from_text(1, hbar, "p1^2/(2*m) + m*w^2*x1^2/2", [], {"m": m, "w": omega})


def momentum_coupled_model(m: float = 1.0, hbar: float = 1.0, lam: float = 0.15) -> LindbladModel:
    """Free particle with ``L = sqrt(2 lam) p``: pure momentum diffusion, heating at ``hbar lam / m``."""
    return LindbladModel.from_text(1, hbar, "p1^2/(2*m)", ["sqrt(2*lam)*p1"], {"m": m, "lam": lam})


def damped_model(hbar: float = 1.0, gamma: float = 0.1, conventions: ConventionFlags | None = None) -> LindbladModel:
    """Harmonic oscillator with the complex Lindblad ``L = sqrt(gamma) (x + i p)``.

    Has nonzero friction and a state-independent diffusion; used to exercise
    the complex-symbol code paths.
    """
    c = math.sqrt(gamma)
    return LindbladModel.from_text(
        1, hbar, "(p1^2 + x1^2)/2", [("c*x1", "c*p1")], {"c": c}, conventions
    )
