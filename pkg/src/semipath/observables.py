"""Gaussian expectations of polynomial symbols and the Ehrenfest rate split.

A polynomial observable is a table ``{multi-index: coefficient}`` over the
``2d`` phase-space variables. Its expectation in a Gaussian with centroid
``alpha`` and covariance ``sigma`` is exact: shift each monomial to the
centroid and contract the central moments with Isserlis' theorem.

The rate of a component splits as::

    coherent  = U^a d_{alpha^a}<O> + S0^{ab} d_{sigma^{ab}}<O>
    diffusive = 1/2 SD^{ab} d_{alpha^a} d_{alpha^b}<O>

and for ``O = H`` these are the work and heat rates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Mapping

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import symbols as sym
from .coefficients import ConventionFlags, LindbladModel, local_flow
from .phase import GaussianComponent, MixtureSnapshot

MAX_DEGREE = 8


class UnsupportedObservable(ValueError):
    pass


class PolynomialObservable:
    """Polynomial Weyl symbol of total degree at most 8."""

    def __init__(self, terms: Mapping[tuple[int, ...], float], dim: int | None = None):
        terms = {tuple(int(n) for n in k): float(c) for k, c in terms.items()}
        dims = {len(k) for k in terms}
        if dim is None:
            if len(dims) != 1:
                raise ValueError("cannot infer the phase-space dimension of an empty observable")
            dim = dims.pop()
        elif dims - {dim}:
            raise ValueError(f"multi-indices must have length {dim}")
        if dim % 2 or dim == 0:
            raise ValueError(f"phase-space dimension must be even and positive, got {dim}")
        for k, c in terms.items():
            if any(n < 0 for n in k):
                raise ValueError(f"negative exponent in {k}")
            if sum(k) > MAX_DEGREE:
                raise UnsupportedObservable(f"degree {sum(k)} exceeds the maximum of {MAX_DEGREE}")
            if not np.isfinite(c):
                raise ValueError("non-finite coefficient")
        self.dim = dim
        self.terms = {k: c for k, c in terms.items() if c != 0.0}

    @classmethod
    def from_expr(cls, e: sym.Expr, d: int, bindings: Mapping[str, float] | None = None) -> PolynomialObservable:
        try:
            return cls(sym.to_polynomial(e, d, bindings), 2 * d)
        except sym.NonPolynomialError as exc:
            raise UnsupportedObservable(str(exc)) from exc

    @classmethod
    def from_text(cls, text: str, d: int, bindings: Mapping[str, float] | None = None) -> PolynomialObservable:
        bindings = dict(bindings or {})
        return cls.from_expr(sym.parse(text, d, set(bindings)), d, bindings)

    @classmethod
    def monomial(cls, powers, coefficient: float = 1.0) -> PolynomialObservable:
        return cls({tuple(powers): coefficient}, len(powers))

    @classmethod
    def constant(cls, value: float, dim: int) -> PolynomialObservable:
        return cls({(0,) * dim: value}, dim)

    @property
    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def __add__(self, other: PolynomialObservable) -> PolynomialObservable:
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0.0) + c
        return PolynomialObservable(out, self.dim)

    def __mul__(self, scalar: float) -> PolynomialObservable:
        return PolynomialObservable({k: scalar * c for k, c in self.terms.items()}, self.dim)

    __rmul__ = __mul__

    def derivative(self, var: int) -> PolynomialObservable:
        out = {}
        for k, c in self.terms.items():
            if k[var]:
                kk = list(k)
                kk[var] -= 1
                out[tuple(kk)] = out.get(tuple(kk), 0.0) + c * k[var]
        return PolynomialObservable(out, self.dim)

    def __call__(self, point) -> np.ndarray:
        pt = np.asarray(point, dtype=float)
        total = np.zeros(pt.shape[:-1])
        for k, c in self.terms.items():
            total = total + c * np.prod(pt ** np.array(k), axis=-1)
        return total

    def __repr__(self) -> str:
        return f"PolynomialObservable({self.terms!r}, dim={self.dim})"


# --- Isserlis contraction ----------------------------------------------------


class _MomentTable:
    """Central moments ``E[prod delta_a^{k_a}]`` of N(0, sigma), memoised by multi-index.

    With ``with_grad`` it also carries the derivative of every moment with
    respect to the (symmetric) covariance entries.
    """

    def __init__(self, sigma: np.ndarray, with_grad: bool = False):
        self.sigma = sigma
        self.batch = sigma.shape[:-2]
        self.dim = sigma.shape[-1]
        self.with_grad = with_grad
        zero = (0,) * self.dim
        self.m = {zero: np.ones(self.batch)}
        self.g = {zero: np.zeros(self.batch + (self.dim, self.dim))}

    def moment(self, k: tuple[int, ...]):
        if k in self.m:
            return self.m[k], self.g.get(k)
        if sum(k) % 2:
            self.m[k] = np.zeros(self.batch)
            self.g[k] = np.zeros(self.batch + (self.dim, self.dim))
            return self.m[k], self.g[k]
        a = next(i for i, n in enumerate(k) if n)
        rest = list(k)
        rest[a] -= 1
        m = np.zeros(self.batch)
        g = np.zeros(self.batch + (self.dim, self.dim)) if self.with_grad else None
        # E[delta_a X] = sum over remaining factors delta_b of sigma_ab E[X / delta_b]
        for b, nb in enumerate(rest):
            if not nb:
                continue
            sub = list(rest)
            sub[b] -= 1
            ms, gs = self.moment(tuple(sub))
            s_ab = self.sigma[..., a, b]
            m = m + nb * s_ab * ms
            if self.with_grad:
                g = g + nb * s_ab[..., None, None] * gs
                g[..., a, b] += 0.5 * nb * ms
                g[..., b, a] += 0.5 * nb * ms
        self.m[k] = m
        self.g[k] = g
        return m, g


def _expectation(O: PolynomialObservable, alpha: np.ndarray, sigma: np.ndarray, with_grad: bool):
    table = _MomentTable(sigma, with_grad)
    batch = np.broadcast_shapes(alpha.shape[:-1], sigma.shape[:-2])
    value = np.zeros(batch)
    grad = np.zeros(batch + (O.dim, O.dim)) if with_grad else None
    for n, c in O.terms.items():
        # prod_a (alpha_a + delta_a)^{n_a} = sum_k prod_a C(n_a, k_a) alpha_a^{n_a - k_a} delta_a^{k_a}
        for k in itertools.product(*(range(na + 1) for na in n)):
            if sum(k) % 2:
                continue
            coef = c
            for na, ka in zip(n, k):
                coef *= comb(na, ka)
            shift = np.prod(alpha ** (np.array(n) - np.array(k)), axis=-1)
            m, g = table.moment(k)
            value = value + coef * shift * m
            if with_grad:
                grad = grad + coef * shift[..., None, None] * g
    return value, grad


def _prep(alpha, sigma):
    a = np.asarray(alpha, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if s.shape[-1] != a.shape[-1] or s.shape[-2] != a.shape[-1]:
        raise ValueError(f"alpha {a.shape} and sigma {s.shape} dimensions disagree")
    return a, s


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def gaussian_expectation(O: PolynomialObservable, alpha, sigma):
    """Exact ``<O>`` in the Gaussian ``(alpha, sigma)``; batched over leading axes."""
    a, s = _prep(alpha, sigma)
    if a.shape[-1] != O.dim:
        raise ValueError(f"observable lives in dimension {O.dim}, state in {a.shape[-1]}")
    return _out(_expectation(O, a, s, False)[0])


def grad_alpha(O: PolynomialObservable, alpha, sigma) -> np.ndarray:
    # d/d alpha <O> = <dO>: differentiation commutes with the Gaussian average
    return np.stack([np.asarray(gaussian_expectation(O.derivative(a), alpha, sigma)) for a in range(O.dim)], axis=-1)


def hess_alpha(O: PolynomialObservable, alpha, sigma) -> np.ndarray:
    rows = []
    for a in range(O.dim):
        Oa = O.derivative(a)
        rows.append(np.stack([np.asarray(gaussian_expectation(Oa.derivative(b), alpha, sigma)) for b in range(O.dim)], axis=-1))
    return np.stack(rows, axis=-2)


def grad_sigma(O: PolynomialObservable, alpha, sigma) -> np.ndarray:
    """``d<O>/d sigma^{ab}`` via the heat-equation identity ``1/2 d^2<O>/d alpha^a d alpha^b``."""
    return 0.5 * hess_alpha(O, alpha, sigma)


def grad_sigma_wick(O: PolynomialObservable, alpha, sigma) -> np.ndarray:
    """``d<O>/d sigma^{ab}`` by differentiating the Isserlis contraction directly.

    The derivative is taken with respect to symmetric perturbations, so the
    result is a symmetric matrix.
    """
    a, s = _prep(alpha, sigma)
    return _expectation(O, a, s, True)[1]


# --- rate decomposition ------------------------------------------------------


@dataclass(frozen=True)
class RateDecomposition:
    coherent: float
    diffusive: float
    total: float = None

    def __post_init__(self):
        object.__setattr__(self, "total", self.coherent + self.diffusive)


def _component_terms(model: LindbladModel, alphas: np.ndarray, sigmas: np.ndarray, O: PolynomialObservable):
    U, S0, SD = local_flow(model, alphas, sigmas)
    g = grad_alpha(O, alphas, sigmas)
    h = hess_alpha(O, alphas, sigmas)
    coherent = np.einsum("...a,...a->...", U, g) + np.einsum("...ab,...ab->...", S0, 0.5 * h)
    diffusive = 0.5 * np.einsum("...ab,...ab->...", SD, h)
    return coherent, diffusive


def component_rate(model: LindbladModel, state: GaussianComponent, O: PolynomialObservable) -> RateDecomposition:
    coherent, diffusive = _component_terms(model, state.alpha, state.sigma, O)
    return RateDecomposition(float(coherent), float(diffusive))


def mixture_rate(
    model: LindbladModel,
    snapshot: MixtureSnapshot,
    O: PolynomialObservable,
    flags: ConventionFlags | None = None,
) -> RateDecomposition:
    """Weight-averaged component rates.

    With ``flags.ehrenfest_factor_two`` the coherent part is doubled, which
    reproduces the literal two-term bookkeeping; the default keeps the plain
    chain rule, the variant equal to ``d<O>/dt``.
    """
    flags = flags or model.conventions
    coherent, diffusive = _component_terms(model, snapshot.alphas, snapshot.sigmas, O)
    w = snapshot.weights
    c = float(np.average(coherent, weights=w))
    if flags.ehrenfest_factor_two:
        c *= 2.0
    return RateDecomposition(c, float(np.average(diffusive, weights=w)))


def mixture_expectation(snapshot: MixtureSnapshot, O: PolynomialObservable) -> float:
    values = gaussian_expectation(O, snapshot.alphas, snapshot.sigmas)
    return float(np.average(values, weights=snapshot.weights))


def mixture_standard_error(snapshot: MixtureSnapshot, O: PolynomialObservable) -> float:
    """Monte-Carlo standard error of :func:`mixture_expectation` for equal-weight particles."""
    n = len(snapshot)
    if n < 2:
        return 0.0
    values = np.asarray(gaussian_expectation(O, snapshot.alphas, snapshot.sigmas))
    return float(np.std(values, ddof=1) / np.sqrt(n))


@dataclass(frozen=True, eq=False)
class EnergyBalance:
    times: np.ndarray
    energy: np.ndarray
    work_rate: np.ndarray
    heat_rate: np.ndarray

    @property
    def work(self) -> np.ndarray:
        return cumulative_trapezoid(self.work_rate, self.times, initial=0.0)

    @property
    def heat(self) -> np.ndarray:
        return cumulative_trapezoid(self.heat_rate, self.times, initial=0.0)

    @property
    def first_law_residual(self) -> np.ndarray:
        """``(E(t) - E(0)) - integral of (W' + Q') dt`` along the record."""
        return (self.energy - self.energy[0]) - (self.work + self.heat)


def hamiltonian_observable(model: LindbladModel) -> PolynomialObservable:
    try:
        return PolynomialObservable.from_expr(model.H, model.d, model.bindings)
    except UnsupportedObservable as exc:
        raise UnsupportedObservable(f"energy balance needs a polynomial Hamiltonian: {exc}") from exc


def _snapshots(record) -> list[MixtureSnapshot]:
    if isinstance(record, MixtureSnapshot):
        return [record]
    if hasattr(record, "alphas") and hasattr(record, "times"):
        return [MixtureSnapshot(t, a[None], s[None]) for t, a, s in zip(record.times, record.alphas, record.sigmas)]
    return list(record)


def energy_balance(model: LindbladModel, record, flags: ConventionFlags | None = None) -> EnergyBalance:
    """Energy, work rate and heat rate along a trajectory or a list of snapshots."""
    H = hamiltonian_observable(model)
    snaps = _snapshots(record)
    times, energy, work, heat = [], [], [], []
    for snap in snaps:
        rate = mixture_rate(model, snap, H, flags)
        times.append(snap.time)
        energy.append(mixture_expectation(snap, H))
        work.append(rate.coherent)
        heat.append(rate.diffusive)
    return EnergyBalance(np.array(times), np.array(energy), np.array(work), np.array(heat))
