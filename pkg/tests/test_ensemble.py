import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semipath.coefficients import ConventionError, split_S, drift
from semipath.ensemble import (
    EnsembleConfig,
    EnsembleError,
    SigmaScheme,
    expm_batched,
    psd_sqrt,
    run_ensemble,
    sde_step,
    trajectory_noise,
)
from semipath.models import FreeParticleParams, harmonic_model
from semipath.observables import PolynomialObservable, gaussian_expectation, mixture_expectation, mixture_standard_error
from semipath.phase import GaussianComponent, MixtureSnapshot
from semipath.propagator import IntegratorConfig, Policy, propagate

QUIET = dict(nts_policy=Policy.IGNORE)
P = FreeParticleParams()


def _obs(text):
    return PolynomialObservable.from_text(text, 1)


@pytest.fixture(scope="module")
def cloud():
    cfg = EnsembleConfig(n_traj=10_000, dt=0.02, t_max=10.0, seed=42, record_stride=50, **QUIET)
    snaps = run_ensemble(P.model(), P.initial(), cfg)
    return {round(s.time, 9): s for s in snaps}


def test_psd_sqrt_examples():
    B = psd_sqrt(np.diag([0.3, 0.0]))
    assert np.allclose(B, np.diag([np.sqrt(0.3), 0.0]), rtol=1e-15, atol=0)
    assert np.array_equal(psd_sqrt(np.zeros((2, 2))), np.zeros((2, 2)))
    assert np.array_equal(psd_sqrt(np.zeros((4, 4))), np.zeros((4, 4)))


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_psd_sqrt_reconstruction(n):
    rng = np.random.default_rng(n)
    for _ in range(100):
        A = rng.normal(size=(n, rng.integers(1, n + 1)))
        M = A @ A.T
        B = psd_sqrt(M)
        assert np.allclose(B, B.T)
        assert np.abs(B @ B.T - M).max() < 1e-9


def test_psd_sqrt_clamping():
    tiny = np.diag([1.0, -5e-13])
    assert np.all(np.isfinite(psd_sqrt(tiny)))
    with pytest.raises(ValueError):
        psd_sqrt(np.diag([1.0, -1e-11]))
    with pytest.raises(ConventionError):
        psd_sqrt(np.diag([1.0, -1e-3]))
    with pytest.raises(ConventionError):
        psd_sqrt(np.diag([1.0, -1e-3, 0.0]))


def test_expm_against_scipy():
    from scipy.linalg import expm

    rng = np.random.default_rng(0)
    A = rng.normal(size=(50, 4, 4)) * rng.uniform(0.01, 5, size=(50, 1, 1))
    ours = expm_batched(A)
    for a, e in zip(A, ours):
        ref = expm(a)
        assert np.allclose(e, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
    assert np.array_equal(expm_batched(np.zeros((3, 2, 2))), np.broadcast_to(np.eye(2), (3, 2, 2)))


def test_sde_step_zero_noise_is_euler_step():
    model = P.model()
    state = GaussianComponent([0.5, 1.0], [[1.0, 0.3], [0.3, 0.6]])
    dt = 0.04
    out = sde_step(model, state, dt, [0.0, 0.0], sigma_scheme=SigmaScheme.EULER)
    S0, _ = split_S(model, state.alpha, state.sigma)
    assert np.allclose(out.alpha, state.alpha + drift(model, state.alpha) * dt, rtol=0, atol=1e-15)
    assert np.allclose(out.sigma, state.sigma + S0 * dt, rtol=0, atol=1e-15)
    assert np.allclose(S0, [[0.6, 0.6], [0.6, 0.0]])
    exp = sde_step(model, state, dt, [0.0, 0.0])
    assert np.allclose(exp.sigma, out.sigma, atol=dt**2)
    assert np.array_equal(exp.alpha, out.alpha)


def test_sde_step_noise_increment():
    dt = 0.04
    out = sde_step(P.model(), P.initial(), dt, [1.0, 0.0])
    assert out.alpha[0] == pytest.approx(1.0 * dt + np.sqrt(0.3 * dt), rel=1e-14)
    assert out.alpha[1] == 1.0


def test_sde_step_bad_noise_shape():
    with pytest.raises(ValueError):
        sde_step(P.model(), P.initial(), 0.02, [1.0])


def test_noise_streams_are_independent_of_order():
    a = trajectory_noise(7, 3, 10, 2)
    trajectory_noise(7, 4, 10, 2)
    assert np.array_equal(a, trajectory_noise(7, 3, 10, 2))
    assert not np.array_equal(a, trajectory_noise(7, 2, 10, 2))
    assert not np.array_equal(a, trajectory_noise(8, 3, 10, 2))


def test_determinism_across_workers_and_chunks():
    base = dict(n_traj=300, dt=0.05, t_max=2.0, seed=123, record_stride=10, **QUIET)
    ref = run_ensemble(P.model(), P.initial(), EnsembleConfig(**base))
    for extra in (dict(workers=4, chunk_size=64), dict(workers=1, chunk_size=7), dict(workers=3, chunk_size=1000)):
        other = run_ensemble(P.model(), P.initial(), EnsembleConfig(**base, **extra))
        for s, o in zip(ref, other):
            assert s.time == o.time
            assert np.array_equal(s.alphas, o.alphas) and np.array_equal(s.sigmas, o.sigmas)


def test_weights_and_snapshot_times():
    snaps = run_ensemble(P.model(), P.initial(), EnsembleConfig(n_traj=16, dt=0.1, t_max=1.0, record_stride=3, **QUIET))
    assert [round(s.time, 9) for s in snaps] == [0.0, 0.3, 0.6, 0.9, 1.0]
    for s in snaps:
        assert s.weights.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(s.weights == 1 / 16)
        assert mixture_expectation(s, _obs("1")) == pytest.approx(1.0, abs=1e-15)


def test_zero_diffusion_reproduces_propagate():
    # same scheme on both sides: Euler centroid and Euler covariance
    from semipath.propagator import Method

    init = GaussianComponent.coherent([1.0, 0.2], 1.0)
    model = harmonic_model()
    det = propagate(model, init, IntegratorConfig(dt=0.01, t_max=2.0, method=Method.EULER, **QUIET))
    snaps = run_ensemble(model, init, EnsembleConfig(n_traj=5, dt=0.01, t_max=2.0, sigma_scheme=SigmaScheme.EULER, **QUIET))
    for s, a, sig in zip(snaps, det.alphas, det.sigmas):
        assert np.abs(s.alphas - a).max() < 1e-12
        assert np.abs(s.sigmas - sig).max() < 1e-12


def test_single_particle_without_diffusion_matches_propagate():
    model = FreeParticleParams(lam=0.0).model()
    det = propagate(model, P.initial(), IntegratorConfig(dt=0.02, t_max=10.0, **QUIET))
    snaps = run_ensemble(model, P.initial(), EnsembleConfig(n_traj=1, dt=0.02, t_max=10.0, **QUIET))
    assert len(snaps) == len(det.times)
    for s, a, sig in zip(snaps, det.alphas, det.sigmas):
        assert np.abs(s.alphas[0] - a).max() < 1e-12 and np.abs(s.sigmas[0] - sig).max() < 1e-12


def test_spread_of_centroids(cloud):
    final = cloud[10.0]
    x = final.alphas[:, 0]
    n = x.size
    var = x.var(ddof=1)
    assert abs(var - 3.0) < 3 * var * np.sqrt(2 / (n - 1))
    assert abs(x.mean() - 10.0) < 3 * x.std(ddof=1) / np.sqrt(n)
    # per-particle covariance follows S0 only
    assert np.allclose(final.sigmas[:, 0, 0], 0.5 + 0.5 * 100, rtol=1e-9)


@pytest.mark.parametrize("t", [1.0, 5.0, 10.0])
@pytest.mark.parametrize(
    "text, exact",
    [
        ("x1", lambda t: t),
        ("p1", lambda t: 1.0),
        ("x1^2", lambda t: 1.5 * t**2 + 0.3 * t + 0.5),
        ("x1*p1", lambda t: 1.5 * t),
        ("p1^2", lambda t: 1.5),
    ],
)
def test_fokker_planck_moments(cloud, t, text, exact):
    snap = cloud[t]
    O = _obs(text)
    value = mixture_expectation(snap, O)
    se = mixture_standard_error(snap, O)
    assert abs(value - exact(t)) <= max(3 * se, 1e-12 * max(1.0, abs(exact(t))))


def test_single_component_mixture_expectation():
    c = GaussianComponent([0.3, -1.2], [[0.9, 0.1], [0.1, 0.7]])
    snap = MixtureSnapshot.from_components(0.0, [c])
    O = _obs("x1^3*p1 + 2*p1^2")
    assert mixture_expectation(snap, O) == pytest.approx(gaussian_expectation(O, c.alpha, c.sigma), rel=1e-15)


def test_failure_reports_trajectory_index():
    from semipath.coefficients import LindbladModel

    model = LindbladModel.from_text(1, 1.0, "-x1^6", ["x1^3"])
    init = GaussianComponent.coherent([2.0, 0.0], 1.0)
    with pytest.raises(EnsembleError) as info:
        with np.errstate(all="ignore"):
            run_ensemble(model, init, EnsembleConfig(n_traj=8, dt=0.1, t_max=5.0, **QUIET))
    assert info.value.step is not None
    assert 0 <= info.value.trajectory < 8


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(n_traj=0)
    with pytest.raises(ValueError):
        EnsembleConfig(seed=-1)
    with pytest.raises(ValueError):
        EnsembleConfig(seed=2**64)
    with pytest.raises(ValueError):
        EnsembleConfig(dt=-0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_any_u64_seed_is_reproducible(seed):
    cfg = EnsembleConfig(n_traj=3, dt=0.1, t_max=0.3, seed=seed, **QUIET)
    a = run_ensemble(P.model(), P.initial(), cfg)[-1]
    b = run_ensemble(P.model(), P.initial(), cfg)[-1]
    assert np.array_equal(a.alphas, b.alphas)
