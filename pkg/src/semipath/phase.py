"""Phase-space value types and admissibility checks for Gaussian states.

Coordinates are laid out as ``(x1..xd, p1..pd)``. Covariance matrices are
plain ``numpy`` arrays; most functions accept stacks of them with shape
``(..., 2d, 2d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

SYMMETRY_RTOL = 1e-12


class AdmissibilityError(ValueError):
    """A covariance matrix violates a physical admissibility condition."""


@lru_cache(maxsize=None)
def _omega(d: int) -> np.ndarray:
    eye = np.eye(d)
    zero = np.zeros((d, d))
    omega = np.block([[zero, eye], [-eye, zero]])
    omega.setflags(write=False)
    return omega


def symplectic_form(d: int) -> np.ndarray:
    """Return the canonical ``2d x 2d`` symplectic matrix ``[[0, I], [-I, 0]]``."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    return _omega(int(d)).copy()


def phase_point(coords, d: int | None = None) -> np.ndarray:
    """Validate and return a phase point as a float array of length ``2d``."""
    a = np.asarray(coords, dtype=float)
    if a.ndim != 1 or a.size % 2 or a.size == 0:
        raise ValueError(f"phase point must be a 1-D array of even length, got shape {a.shape}")
    if d is not None and a.size != 2 * d:
        raise ValueError(f"phase point has length {a.size}, expected {2 * d}")
    if not np.all(np.isfinite(a)):
        raise ValueError("phase point has non-finite entries")
    return a


def asymmetry(sigma) -> float:
    s = np.asarray(sigma, dtype=float)
    return float(np.max(np.abs(s - np.swapaxes(s, -1, -2)), initial=0.0))


def _check_symmetric(s: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(s), initial=0.0)))
    if asymmetry(s) > SYMMETRY_RTOL * scale:
        raise ValueError(f"covariance matrix is not symmetric (asymmetry {asymmetry(s):.3e})")


def symmetrize(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    return 0.5 * (s + np.swapaxes(s, -1, -2))


def cov_matrix(entries, d: int | None = None) -> np.ndarray:
    """Validate a covariance matrix and return its symmetrized copy.

    Raises ``ValueError`` for a wrong shape, non-finite entries, asymmetry
    beyond 1e-12 relative, or a negative eigenvalue.
    """
    s = np.asarray(entries, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
        raise ValueError(f"covariance must be a square matrix of even size, got shape {s.shape}")
    if d is not None and s.shape[0] != 2 * d:
        raise ValueError(f"covariance has size {s.shape[0]}, expected {2 * d}")
    if not np.all(np.isfinite(s)):
        raise ValueError("covariance has non-finite entries")
    _check_symmetric(s)
    s = symmetrize(s)
    scale = max(1.0, float(np.max(np.abs(s))))
    if np.linalg.eigvalsh(s)[0] < -SYMMETRY_RTOL * scale:
        raise ValueError("covariance has a negative eigenvalue")
    return s


def min_eigenvalue(sigma) -> np.ndarray:
    """Smallest eigenvalue of a stack of real symmetric matrices."""
    s = np.asarray(sigma, dtype=float)
    if s.shape[-1] == 2:
        a, b, c = s[..., 0, 0], s[..., 0, 1], s[..., 1, 1]
        return 0.5 * (a + c) - np.hypot(0.5 * (a - c), b)
    return np.linalg.eigvalsh(s)[..., 0]


def uncertainty_eigenvalue(sigma, hbar: float) -> np.ndarray:
    """Minimum eigenvalue of the Hermitian matrix ``sigma + (i hbar / 2) omega``.

    Works on stacks ``(..., 2d, 2d)`` and returns an array of shape ``(...)``.
    """
    s = np.asarray(sigma, dtype=float)
    if s.shape[-1] == 2:
        # [[a, b + i hbar/2], [b - i hbar/2, c]]
        a, b, c = s[..., 0, 0], s[..., 0, 1], s[..., 1, 1]
        return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b**2 + 0.25 * hbar**2)
    omega = _omega(s.shape[-1] // 2)
    herm = s + 0.5j * hbar * omega
    return np.linalg.eigvalsh(herm)[..., 0]


def uncertainty_check(sigma, hbar: float, tol: float = 1e-9) -> bool:
    s = np.asarray(sigma, dtype=float)
    _check_symmetric(s)
    return bool(np.all(uncertainty_eigenvalue(symmetrize(s), hbar) >= -tol))


def nts_check(sigma, xi: float, hbar: float) -> bool:
    """Not-too-squeezed test: ``min eig(sigma) >= xi * hbar / 2``."""
    if not 0.0 < xi <= 1.0:
        raise ValueError(f"squeezing ratio must lie in (0, 1], got {xi}")
    return bool(np.all(min_eigenvalue(symmetrize(sigma)) >= xi * hbar / 2))


def purity_defect(sigma, hbar: float) -> float:
    """Max-abs entry of ``sigma omega sigma - (hbar^2/4) omega``; zero iff pure."""
    s = np.asarray(sigma, dtype=float)
    omega = _omega(s.shape[-1] // 2)
    return float(np.max(np.abs(s @ omega @ s - 0.25 * hbar**2 * omega)))


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """One Gaussian packet: centroid, covariance and mixture weight."""

    alpha: np.ndarray
    sigma: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        alpha = phase_point(self.alpha)
        sigma = cov_matrix(self.sigma, alpha.size // 2)
        if not (np.isfinite(self.weight) and self.weight >= 0):
            raise ValueError(f"weight must be a nonnegative finite number, got {self.weight}")
        alpha.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "weight", float(self.weight))

    @classmethod
    def coherent(cls, alpha, hbar: float, weight: float = 1.0) -> GaussianComponent:
        a = phase_point(alpha)
        return cls(a, 0.5 * hbar * np.eye(a.size), weight)

    @property
    def d(self) -> int:
        return self.alpha.size // 2

    def is_admissible(self, hbar: float, tol: float = 1e-9) -> bool:
        return uncertainty_check(self.sigma, hbar, tol)


@dataclass(frozen=True, eq=False)
class MixtureSnapshot:
    """Time-stamped weighted set of Gaussian components.

    Components are stored column-wise (``alphas`` of shape ``(n, 2d)``,
    ``sigmas`` of shape ``(n, 2d, 2d)``) so ensembles of many particles stay
    cheap; ``components`` materialises them as objects on demand.
    """

    time: float
    alphas: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        alphas = np.atleast_2d(np.asarray(self.alphas, dtype=float))
        sigmas = np.asarray(self.sigmas, dtype=float)
        if sigmas.ndim == 2:
            sigmas = sigmas[None]
        n, dim = alphas.shape
        if sigmas.shape != (n, dim, dim):
            raise ValueError(f"sigmas shape {sigmas.shape} does not match alphas {alphas.shape}")
        if self.weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(n)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("snapshot weights must be nonnegative and sum to 1")
        for arr in (alphas, sigmas, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_components(cls, time: float, components) -> MixtureSnapshot:
        components = list(components)
        return cls(
            time,
            np.stack([c.alpha for c in components]),
            np.stack([c.sigma for c in components]),
            np.array([c.weight for c in components]),
        )

    def __len__(self) -> int:
        return self.alphas.shape[0]

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(a, s, w) for a, s, w in zip(self.alphas, self.sigmas, self.weights)]
