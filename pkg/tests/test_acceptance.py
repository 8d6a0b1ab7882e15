"""Acceptance suite: one test per criterion, each at its stated tolerance."""

import time

import numpy as np
import pytest

from expr_corpus import CORPUS, D, PARAMS, random_points
from oracles import monomial_expectation, monomials, random_state
from semipath import symbols as sym
from semipath.ensemble import EnsembleConfig, psd_sqrt, run_ensemble
from semipath.models import FreeParticleParams, harmonic_model, momentum_coupled_model
from semipath.observables import (
    PolynomialObservable,
    component_rate,
    energy_balance,
    gaussian_expectation,
    grad_sigma_wick,
    hamiltonian_observable,
    hess_alpha,
    mixture_expectation,
    mixture_standard_error,
)
from semipath.phase import GaussianComponent, nts_check, purity_defect, uncertainty_check
from semipath.propagator import IntegratorConfig, Policy, propagate, step

P = FreeParticleParams(m=1.0, hbar=1.0, lam=0.15, x0=0.0, p0=1.0)
BENCH = IntegratorConfig(dt=0.02, t_max=10.0, nts_policy=Policy.IGNORE)


def x2_closed(t):
    return 1.5 * t**2 + 0.3 * t + 0.5


def _at(times, t):
    i = int(np.argmin(np.abs(times - t)))
    assert abs(times[i] - t) < 1e-9
    return i


@pytest.fixture(scope="module")
def quantum():
    start = time.perf_counter()
    traj = propagate(P.model(), P.initial(), BENCH)
    return traj, time.perf_counter() - start


@pytest.fixture(scope="module")
def classical():
    return propagate(P.model(diffusion=False), P.initial(), BENCH)


def _x2_series(traj):
    return traj.alphas[:, 0] ** 2 + traj.sigmas[:, 0, 0]


def _three_models():
    return {
        "free": (P.model(), P.initial()),
        "harmonic": (harmonic_model(), GaussianComponent.coherent([1.0, 0.5], 1.0)),
        "momentum": (momentum_coupled_model(m=1.0, hbar=1.0, lam=0.15), GaussianComponent.coherent([0.0, 1.0], 1.0)),
    }


def test_criterion_01_covariance_benchmark(quantum):
    traj, elapsed = quantum
    s = traj.sigmas[-1]
    errs = {
        "sxx": abs(s[0, 0] - 53.5) / 53.5,
        "sxp": abs(s[0, 1] - 5.0) / 5.0,
        "spp": float(np.max(np.abs(traj.sigmas[:, 1, 1] - 0.5) / 0.5)),
    }
    print(f"criterion 1: rel errors {errs}, runtime {elapsed:.3f} s")
    assert traj.times[-1] == pytest.approx(10.0)
    assert all(e < 1e-3 for e in errs.values())
    assert elapsed < 1.0


def test_criterion_02_second_moment(quantum):
    traj, _ = quantum
    x2 = _x2_series(traj)
    for t in (1.0, 5.0, 10.0):
        i = _at(traj.times, t)
        assert abs(x2[i] - x2_closed(t)) / x2_closed(t) < 1e-3


def test_criterion_03_figure_excess(quantum, classical):
    traj, _ = quantum
    assert np.array_equal(traj.times, classical.times)
    excess = _x2_series(traj) - _x2_series(classical)
    assert np.max(np.abs(excess - 0.3 * traj.times)) < 1e-3


def test_criterion_04_monte_carlo():
    cfg = EnsembleConfig(n_traj=10_000, dt=0.02, t_max=10.0, seed=42, record_stride=50, workers=1, nts_policy=Policy.IGNORE)
    start = time.perf_counter()
    snaps = run_ensemble(P.model(), P.initial(), cfg)
    elapsed = time.perf_counter() - start
    by_time = {round(s.time, 9): s for s in snaps}
    closed = {"x1": lambda t: t, "p1": lambda t: 1.0, "x1^2": x2_closed}
    for t in (1.0, 5.0, 10.0):
        for text, f in closed.items():
            O = PolynomialObservable.from_text(text, 1)
            value = mixture_expectation(by_time[t], O)
            se = mixture_standard_error(by_time[t], O)
            # p is noise-free, so its standard error is exactly zero; allow rounding
            assert abs(value - f(t)) <= max(3 * se, 1e-12 * max(1.0, abs(f(t)))), (t, text, value, se)
    print(f"criterion 4: runtime {elapsed:.2f} s")
    assert elapsed < 30.0


def test_criterion_05_sigma_gradient_identity():
    rng = np.random.default_rng(2024)
    for d, deg in ((1, 6), (2, 6)):
        obs = [PolynomialObservable.monomial(k) for k in monomials(2 * d, deg)]
        for _ in range(50):
            alpha, sigma = random_state(rng, d=d)
            for O in obs:
                half = 0.5 * hess_alpha(O, alpha, sigma)
                wick = grad_sigma_wick(O, alpha, sigma)
                assert np.abs(wick - half).max() <= 1e-10 * max(1.0, np.abs(half).max())


def test_criterion_06_rate_consistency():
    h = 1e-4
    texts = ["x1", "p1", "x1^2", "x1*p1", "p1^2", "x1^4 - p1^3*x1"]
    for name, (model, init) in _three_models().items():
        traj = propagate(model, init, IntegratorConfig(dt=0.02, t_max=10.0, record_stride=10, nts_policy=Policy.IGNORE))
        for text in texts:
            O = PolynomialObservable.from_text(text, 1)
            for state in traj.states:
                fwd, bwd = step(model, state, h), step(model, state, -h)
                fd = (gaussian_expectation(O, fwd.alpha, fwd.sigma) - gaussian_expectation(O, bwd.alpha, bwd.sigma)) / (2 * h)
                total = component_rate(model, state, O).total
                assert abs(total - fd) <= 1e-6 * max(abs(total), 1.0), (name, text, total, fd)


def test_criterion_07_first_law():
    for name, (model, init) in _three_models().items():
        traj = propagate(model, init, IntegratorConfig(dt=0.02, t_max=10.0, nts_policy=Policy.IGNORE))
        bal = energy_balance(model, traj)
        assert np.max(np.abs(bal.first_law_residual)) < 1e-6, name
        if name == "free":
            assert np.max(np.abs(bal.energy - bal.energy[0])) < 1e-9
            assert np.max(np.abs(bal.work_rate)) < 1e-9 and np.max(np.abs(bal.heat_rate)) < 1e-9
        if name == "momentum":
            assert np.max(np.abs(bal.heat_rate - 0.15)) < 1e-6


def test_criterion_08_closed_system():
    model = harmonic_model()
    traj = propagate(model, GaussianComponent.coherent([1.0, 0.5], 1.0), IntegratorConfig(dt=0.01, t_max=10.0))
    E = gaussian_expectation(hamiltonian_observable(model), traj.alphas, traj.sigmas)
    assert np.max(np.abs(E - E[0])) < 1e-6
    assert max(purity_defect(s, 1.0) for s in traj.sigmas) < 1e-8


def test_criterion_09_admissibility(quantum, classical):
    trajectories = {"quantum": quantum[0], "classical": classical}
    for name, (model, init) in _three_models().items():
        trajectories[name] = propagate(model, init, IntegratorConfig(dt=0.02, t_max=10.0, nts_policy=Policy.IGNORE))
    failures = []
    for name, traj in trajectories.items():
        for t, s in zip(traj.times, traj.sigmas):
            if not uncertainty_check(s, 1.0, tol=1e-9):
                failures.append((name, "uncertainty", t))
            if not nts_check(s, 1.0, 1.0):
                failures.append((name, "nts", t))
    if failures:
        first = {}
        for name, kind, t in failures:
            first.setdefault((name, kind), t)
        print("criterion 9: first failing time per trajectory/check:", first)
    assert not failures


def test_criterion_10_oracles():
    rng = np.random.default_rng(10)
    for d in (1, 2):
        for _ in range(5):
            alpha = rng.integers(-3, 4, size=2 * d)
            a = rng.integers(-2, 3, size=(2 * d, 2 * d))
            sigma = a @ a.T + np.eye(2 * d, dtype=int)
            for k in monomials(2 * d, 6):
                exact = monomial_expectation(k, alpha.tolist(), sigma.tolist())
                assert gaussian_expectation(PolynomialObservable.monomial(k), alpha.astype(float), sigma.astype(float)) == exact

    for i in range(100):
        n = int(rng.integers(2, 7))
        A = rng.normal(size=(n, int(rng.integers(1, n + 1))))
        M = A @ A.T
        B = psd_sqrt(M)
        assert np.max(np.abs(B @ B.T - M)) < 1e-9

    h = 1e-5
    for text in CORPUS:
        e = sym.parse(text, D, PARAMS)
        grads = sym.gradient(e, D)
        for point in random_points(100, seed=3):
            for a in range(2 * D):
                plus, minus = point.copy(), point.copy()
                plus[a] += h
                minus[a] -= h
                fd = (sym.evaluate(e, plus, PARAMS) - sym.evaluate(e, minus, PARAMS)) / (2 * h)
                exact = sym.evaluate(grads[a], point, PARAMS)
                assert abs(exact - fd) / max(abs(exact), 1.0) < 1e-6, text
