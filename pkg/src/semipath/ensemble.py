"""Particle representation of the mixing measure.

Each particle is a Gaussian component whose centroid follows the Ito SDE

    d alpha = U dt + SD^{1/2} dW,        d sigma = S0 dt,

integrated with Euler-Maruyama. Since ``S0 = K sigma + sigma K^T`` is linear
in sigma, the default covariance update is the exact flow of that equation
with ``K`` frozen over the step, ``sigma -> e^{K dt} sigma e^{K^T dt}``. It
agrees with ``sigma += S0 dt`` to first order but keeps pure states pure,
whereas the forward-Euler update (``sigma_scheme="euler"``) leaks outside
the uncertainty bound by ``O(dt^2)`` per step. Particle ``i`` draws its noise from its own
Philox stream keyed by ``(seed, i)``, and particles are processed in fixed
chunks, so results do not depend on how many workers run the chunks.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coefficients import PSD_TOL, ConventionError, LindbladModel, local_generator
from .phase import GaussianComponent, MixtureSnapshot, min_eigenvalue, symmetrize
from .propagator import AdmissibilityMonitor, NumericalError, Policy

log = logging.getLogger(__name__)


class EnsembleError(NumericalError):
    def __init__(self, message: str, trajectory: int, step: int | None = None):
        super().__init__(f"trajectory {trajectory}: {message}", step)
        self.trajectory = trajectory


class SigmaScheme(str, enum.Enum):
    EXPONENTIAL = "exponential"
    EULER = "euler"


@dataclass(frozen=True)
class EnsembleConfig:
    n_traj: int = 10_000
    dt: float = 0.02
    t_max: float = 10.0
    seed: int = 0
    record_stride: int = 1
    clamp_tol: float = 1e-12
    check_policy: Policy = Policy.ERROR
    nts_policy: Policy = Policy.WARN
    nts_xi: float = 1.0
    workers: int = 1
    chunk_size: int = 1024
    sigma_scheme: SigmaScheme = SigmaScheme.EXPONENTIAL

    def __post_init__(self):
        object.__setattr__(self, "sigma_scheme", SigmaScheme(self.sigma_scheme))
        object.__setattr__(self, "check_policy", Policy(self.check_policy))
        object.__setattr__(self, "nts_policy", Policy(self.nts_policy))
        if int(self.n_traj) != self.n_traj or self.n_traj < 1:
            raise ValueError(f"n_traj must be a positive integer, got {self.n_traj}")
        if not (self.dt > 0 and self.t_max >= self.dt):
            raise ValueError(f"need 0 < dt <= t_max, got dt={self.dt}, t_max={self.t_max}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.record_stride < 1 or self.workers < 1 or self.chunk_size < 1:
            raise ValueError("record_stride, workers and chunk_size must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_max / self.dt)))


def psd_sqrt(SD, clamp_tol: float = 1e-12) -> np.ndarray:
    """Symmetric PSD square root ``B`` with ``B B^T = SD``; batched.

    Eigenvalues in ``[-clamp_tol, 0)`` are clamped to zero; anything more
    negative raises ``ValueError`` (``ConventionError`` below -1e-10).
    """
    m = symmetrize(SD)
    if m.shape[-1] == 2:
        return _psd_sqrt_2x2(m, clamp_tol)
    w, v = np.linalg.eigh(m)
    if np.any(w < -PSD_TOL):
        raise ConventionError(f"diffusion matrix is not positive semidefinite (min eigenvalue {float(np.min(w)):.3e})")
    if np.any(w < -clamp_tol):
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {float(np.min(w)):.3e})")
    w = np.clip(w, 0.0, None)
    return np.einsum("...ab,...b,...cb->...ac", v, np.sqrt(w), v)


def _psd_sqrt_2x2(m: np.ndarray, clamp_tol: float) -> np.ndarray:
    # sqrt(M) = (M + s I) / sqrt(tr M + 2 s) with s = sqrt(det M)
    lo = min_eigenvalue(m)
    if np.any(lo < -PSD_TOL):
        raise ConventionError(f"diffusion matrix is not positive semidefinite (min eigenvalue {float(np.min(lo)):.3e})")
    if np.any(lo < -clamp_tol):
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {float(np.min(lo)):.3e})")
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    s = np.sqrt(np.clip(a * c - b * b, 0.0, None))
    tr = np.clip(a, 0.0, None) + np.clip(c, 0.0, None) + 2 * s
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(tr > 0, 1.0 / np.sqrt(tr), 0.0)
    out = np.empty_like(m)
    out[..., 0, 0] = np.clip(a + s, 0.0, None) * scale
    out[..., 1, 1] = np.clip(c + s, 0.0, None) * scale
    out[..., 0, 1] = out[..., 1, 0] = b * scale
    return out


def expm_batched(A: np.ndarray) -> np.ndarray:
    """Matrix exponential of a stack of small matrices.

    Scaling and squaring around a truncated Taylor series. The norm is
    scaled below 1/2 and the series is cut once the next term bound drops
    under 1e-18.
    """
    A = np.asarray(A, dtype=float)
    norm = float(np.max(np.sum(np.abs(A), axis=-1), initial=0.0))
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    A = A / 2.0**squarings
    norm /= 2.0**squarings
    eye = np.broadcast_to(np.eye(A.shape[-1]), A.shape)
    result = eye.copy()
    term = eye
    bound = 1.0
    k = 0
    while bound > 1e-18 and k < 30:
        k += 1
        term = term @ A / k
        result = result + term
        bound *= norm / (k + 1)
    for _ in range(squarings):
        result = result @ result
    return result


def _sde_advance(model: LindbladModel, alphas, sigmas, dt: float, noise, clamp_tol: float, scheme: SigmaScheme):
    U, K, SD = local_generator(model, alphas, check=False)
    B = psd_sqrt(SD, clamp_tol)
    kick = np.einsum("...ab,...b->...a", B, noise) * np.sqrt(dt)
    if scheme is SigmaScheme.EULER:
        KS = K @ sigmas
        sigmas = sigmas + (KS + np.swapaxes(KS, -1, -2)) * dt
    else:
        M = expm_batched(K * dt)
        sigmas = M @ sigmas @ np.swapaxes(M, -1, -2)
    return alphas + U * dt + kick, symmetrize(sigmas)


def sde_step(
    model: LindbladModel,
    state: GaussianComponent,
    dt: float,
    noise,
    sigma_scheme: SigmaScheme | str = SigmaScheme.EXPONENTIAL,
) -> GaussianComponent:
    """One Euler-Maruyama step driven by a standard-normal vector ``noise``."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != state.alpha.shape:
        raise ValueError(f"noise must have shape {state.alpha.shape}")
    alpha, sigma = _sde_advance(model, state.alpha, state.sigma, dt, noise, 1e-12, SigmaScheme(sigma_scheme))
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(sigma))):
        raise NumericalError("non-finite state after SDE step")
    return GaussianComponent(alpha, sigma, state.weight)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream of trajectory ``index``; independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def trajectory_noise(seed: int, index: int, n_steps: int, dim: int) -> np.ndarray:
    return trajectory_rng(seed, index).standard_normal((n_steps, dim))


def _run_chunk(model: LindbladModel, init: GaussianComponent, cfg: EnsembleConfig, lo: int, hi: int):
    n = hi - lo
    dim = init.alpha.size
    noise = np.stack([trajectory_noise(cfg.seed, i, cfg.n_steps, dim) for i in range(lo, hi)], axis=1)
    alphas = np.broadcast_to(init.alpha, (n, dim)).copy()
    sigmas = np.broadcast_to(init.sigma, (n, dim, dim)).copy()
    monitor = AdmissibilityMonitor(model.hbar, cfg.check_policy, cfg.nts_policy, cfg.nts_xi)
    records = [(alphas, sigmas)]
    for k in range(1, cfg.n_steps + 1):
        try:
            alphas, sigmas = _sde_advance(model, alphas, sigmas, cfg.dt, noise[k - 1], cfg.clamp_tol, cfg.sigma_scheme)
            bad = ~(np.all(np.isfinite(alphas), axis=-1) & np.all(np.isfinite(sigmas), axis=(-2, -1)))
            if np.any(bad):
                raise NumericalError("non-finite state", k)
            monitor(sigmas, k)
        except (NumericalError, ValueError) as exc:
            first = lo + _first_failure(model, alphas, sigmas, cfg)
            raise EnsembleError(str(exc), first, k) from exc
        if k % cfg.record_stride == 0 or k == cfg.n_steps:
            records.append((alphas, sigmas))
    return records, monitor.summary()


def _first_failure(model, alphas, sigmas, cfg) -> int:
    for i in range(alphas.shape[0]):
        try:
            if not (np.all(np.isfinite(alphas[i])) and np.all(np.isfinite(sigmas[i]))):
                return i
            AdmissibilityMonitor(model.hbar, cfg.check_policy, Policy.IGNORE, cfg.nts_xi)(sigmas[i], 0)
        except (NumericalError, ValueError):
            return i
    return 0


def run_ensemble(
    model: LindbladModel,
    init: GaussianComponent,
    cfg: EnsembleConfig,
    diagnostics: dict | None = None,
) -> list[MixtureSnapshot]:
    """Propagate ``cfg.n_traj`` equal-weight particles from ``init``.

    Returns one snapshot per recorded step (``t=0`` included). If given,
    ``diagnostics`` is filled with the merged admissibility summary.
    """
    bounds = [(lo, min(lo + cfg.chunk_size, cfg.n_traj)) for lo in range(0, cfg.n_traj, cfg.chunk_size)]
    if cfg.workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(lambda b: _run_chunk(model, init, cfg, *b), bounds))
    else:
        results = [_run_chunk(model, init, cfg, *b) for b in bounds]

    steps = [0] + [k for k in range(1, cfg.n_steps + 1) if k % cfg.record_stride == 0 or k == cfg.n_steps]
    snapshots = []
    for j, k in enumerate(steps):
        alphas = np.concatenate([r[0][j][0] for r in results])
        sigmas = np.concatenate([r[0][j][1] for r in results])
        snapshots.append(MixtureSnapshot(k * cfg.dt, alphas, sigmas))
    if diagnostics is not None:
        summaries = [r[1] for r in results]
        diagnostics.update(
            uncertainty_ok=all(s["uncertainty_ok"] for s in summaries),
            nts_ok=all(s["nts_ok"] for s in summaries),
            min_uncertainty_eigenvalue=min(s["min_uncertainty_eigenvalue"] for s in summaries),
            min_nts_ratio=min(s["min_nts_ratio"] for s in summaries),
        )
    log.debug("ensemble of %d particles, %d snapshots", cfg.n_traj, len(snapshots))
    return snapshots
