"""Local-harmonic Lindblad coefficients evaluated at a phase point.

For a Hamiltonian symbol ``H`` and Lindblad symbols ``L_k = u_k + i v_k``::

    G^a   = Im sum_k L_k d^a L_k*  = sum_k (v_k d^a u_k - u_k d^a v_k)
    U^a   = d^a H + G^a
    F^a_b = d_b d^a H,     Gamma^a_b = d_b G^a
    D^ab  = hbar Re sum_k (d^a L_k)(d^b L_k*) = hbar sum_k (d^a u_k d^b u_k + d^a v_k d^b v_k)
    S     = (F + Gamma) sigma + sigma (F + Gamma)^T + D

``d^a`` raises an index either with the symplectic form (``d^a f = omega^ab d_b f``)
or with the identity. Drift-type quantities (U, G, F, Gamma) and the diffusion
matrix D each have their own convention flag; the defaults give Hamilton's
equations for the drift and ``D^xx = hbar (d_x L)^2`` for the diffusion.

All functions broadcast over leading batch axes of ``alpha`` and ``sigma``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import symbols as sym
from .phase import min_eigenvalue, symplectic_form

PSD_TOL = 1e-10


class ConventionError(ValueError):
    """A coefficient violates a structural property (e.g. D not PSD)."""


class Raising(str, enum.Enum):
    SYMPLECTIC = "symplectic"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class ConventionFlags:
    drift_raising: Raising = Raising.SYMPLECTIC
    diffusion_raising: Raising = Raising.EUCLIDEAN
    ehrenfest_factor_two: bool = False

    def __post_init__(self):
        object.__setattr__(self, "drift_raising", Raising(self.drift_raising))
        object.__setattr__(self, "diffusion_raising", Raising(self.diffusion_raising))


class _SymbolDerivs:
    """Value, gradient and Hessian of one real symbol, evaluated in one pass.

    Variable-free entries are filled from a constant template; the rest are
    compiled closures writing into slots of a single output array.
    """

    def __init__(self, e: sym.Expr, d: int, bindings):
        dim = 2 * d
        grad = sym.gradient(e, d)
        hess = [sym.differentiate(g, sym.variable(d, b)) for g in grad for b in range(dim)]
        exprs = [e, *grad, *hess]
        self.expr = e
        self.dim = dim
        self.template = np.zeros(len(exprs))
        self.live = []
        for i, x in enumerate(exprs):
            if sym.is_constant(x):
                self.template[i] = sym.evaluate(x, np.zeros(dim), bindings)
            else:
                self.live.append((i, sym.compile_expr(x, d, bindings)))

    def values(self, alpha: np.ndarray):
        out = np.empty(alpha.shape[:-1] + self.template.shape)
        out[...] = self.template
        with np.errstate(all="ignore"):
            for i, f in self.live:
                out[..., i] = f(alpha)
        if self.live and not np.all(np.isfinite(out)):
            raise sym.EvaluationError(f"non-finite value of {sym.to_text(self.expr)} or its derivatives")
        n = self.dim
        return out[..., 0], out[..., 1 : 1 + n], out[..., 1 + n :].reshape(alpha.shape[:-1] + (n, n))


def _as_complex(L) -> sym.ComplexSymbol:
    if isinstance(L, sym.ComplexSymbol):
        return L
    if isinstance(L, tuple):
        return sym.ComplexSymbol(*L)
    return sym.ComplexSymbol(L)


@dataclass(frozen=True, eq=False)
class LindbladModel:
    """Phase-space symbols of a Lindblad generator plus parameter bindings.

    ``diffusion_enabled=False`` zeroes D (and hence S_D) while keeping every
    other coefficient, which is the "classical" comparison run.
    """

    d: int
    hbar: float
    H: sym.Expr
    lindblads: tuple = ()
    bindings: Mapping[str, float] = field(default_factory=dict)
    conventions: ConventionFlags = field(default_factory=ConventionFlags)
    diffusion_enabled: bool = True

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        lindblads = tuple(_as_complex(L) for L in self.lindblads)
        object.__setattr__(self, "lindblads", lindblads)
        object.__setattr__(self, "bindings", dict(self.bindings))
        exprs = [self.H] + [part for L in lindblads for part in (L.re, L.im)]
        for e in exprs:
            too_big = [v for v in sym.free_variables(e) if v.index > self.d]
            if too_big:
                raise ValueError(f"variable {too_big[0]} exceeds d={self.d}")
            missing = sym.parameters(e) - self.bindings.keys()
            if missing:
                raise ValueError(f"unbound parameter(s): {', '.join(sorted(missing))}")
        b = self.bindings
        object.__setattr__(self, "_H", _SymbolDerivs(self.H, self.d, b))
        object.__setattr__(
            self,
            "_L",
            tuple((_SymbolDerivs(L.re, self.d, b), _SymbolDerivs(L.im, self.d, b)) for L in lindblads),
        )

    @classmethod
    def from_text(
        cls,
        d: int,
        hbar: float,
        H: str,
        lindblads: Sequence = (),
        params: Mapping[str, float] | None = None,
        conventions: ConventionFlags | None = None,
    ) -> LindbladModel:
        """Build a model from symbol text.

        Each Lindblad entry is either a string (real symbol) or a pair of
        strings ``(re, im)``.
        """
        params = dict(params or {})
        names = set(params)

        def p(text):
            return sym.parse(text, d, names)

        Ls = []
        for L in lindblads:
            if isinstance(L, str):
                Ls.append(sym.ComplexSymbol(p(L)))
            else:
                re_text, im_text = L
                Ls.append(sym.ComplexSymbol(p(re_text), p(im_text or "0")))
        return cls(d, float(hbar), p(H), tuple(Ls), params, conventions or ConventionFlags())

    def replace(self, **changes) -> LindbladModel:
        return replace(self, **changes)

    @property
    def dim(self) -> int:
        return 2 * self.d

    def raising(self, kind: Raising) -> np.ndarray:
        if kind is Raising.SYMPLECTIC:
            return symplectic_form(self.d)
        return np.eye(self.dim)


# --- numerical evaluation of symbol derivatives ------------------------------


def _values(sd: _SymbolDerivs, alpha: np.ndarray, b=None):
    # ``b`` kept for call-site symmetry; bindings are frozen into ``sd``
    return sd.values(alpha)


def _raise_vec(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("ab,...b->...a", R, v)


def _raise_mat(R: np.ndarray, m: np.ndarray) -> np.ndarray:
    return np.einsum("ab,...bc->...ac", R, m)


def _alpha(model: LindbladModel, alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if a.shape[-1] != model.dim:
        raise ValueError(f"alpha has trailing size {a.shape[-1]}, expected {model.dim}")
    return a


def _friction(model: LindbladModel, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (G, Gamma) with the drift raising convention."""
    R = model.raising(model.conventions.drift_raising)
    b = model.bindings
    G = np.zeros(alpha.shape)
    J = np.zeros(alpha.shape + (model.dim,))
    for re_d, im_d in model._L:
        u, gu, hu = _values(re_d, alpha, b)
        v, gv, hv = _values(im_d, alpha, b)
        G += v[..., None] * gu - u[..., None] * gv
        # d_b (v d_a u - u d_a v)
        J += (
            gu[..., :, None] * gv[..., None, :]
            - gv[..., :, None] * gu[..., None, :]
            + v[..., None, None] * hu
            - u[..., None, None] * hv
        )
    return _raise_vec(R, G), _raise_mat(R, J)


def friction_vector(model: LindbladModel, alpha) -> np.ndarray:
    return _friction(model, _alpha(model, alpha))[0]


def friction_jacobian_Gamma(model: LindbladModel, alpha) -> np.ndarray:
    return _friction(model, _alpha(model, alpha))[1]


def drift(model: LindbladModel, alpha) -> np.ndarray:
    a = _alpha(model, alpha)
    R = model.raising(model.conventions.drift_raising)
    _, gH, _ = _values(model._H, a, model.bindings)
    return _raise_vec(R, gH) + _friction(model, a)[0]


def hessian_F(model: LindbladModel, alpha) -> np.ndarray:
    a = _alpha(model, alpha)
    R = model.raising(model.conventions.drift_raising)
    _, _, hH = _values(model._H, a, model.bindings)
    return _raise_mat(R, hH)


def _check_psd(m: np.ndarray, what: str) -> None:
    if m.shape[-1] == 0:
        return
    lo = min_eigenvalue(m)
    if np.any(lo < -PSD_TOL):
        raise ConventionError(f"{what} is not positive semidefinite (min eigenvalue {float(np.min(lo)):.3e})")


def diffusion_D(model: LindbladModel, alpha, check: bool = True) -> np.ndarray:
    a = _alpha(model, alpha)
    D = np.zeros(a.shape + (model.dim,))
    if not model.diffusion_enabled:
        return D
    R = model.raising(model.conventions.diffusion_raising)
    for re_d, im_d in model._L:
        for part in (re_d, im_d):
            _, g, _ = _values(part, a, model.bindings)
            g = _raise_vec(R, g)
            D += g[..., :, None] * g[..., None, :]
    D *= model.hbar
    if check:
        _check_psd(D, "diffusion matrix D")
    return D


def covariance_rhs_S(model: LindbladModel, alpha, sigma) -> np.ndarray:
    a = _alpha(model, alpha)
    s = np.asarray(sigma, dtype=float)
    K = hessian_F(model, a) + _friction(model, a)[1]
    KS = K @ s
    return KS + np.swapaxes(KS, -1, -2) + diffusion_D(model, a)


def split_S(model: LindbladModel, alpha, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(S0, SD)`` with ``SD = D`` and ``S0 = S - SD``."""
    S = covariance_rhs_S(model, alpha, sigma)
    SD = diffusion_D(model, alpha)
    return S - SD, SD


def effective_drift(model: LindbladModel, alpha, sigma=None) -> np.ndarray:
    """Drift with the divergence of the diffusion matrix removed.

    ``U~^a = U^a - 1/2 d_b SD^{ab}``. ``sigma`` is accepted for interface
    symmetry; with ``SD = D`` it does not enter.
    """
    a = _alpha(model, alpha)
    U = drift(model, a)
    if not model.diffusion_enabled:
        return U
    R = model.raising(model.conventions.diffusion_raising)
    div = np.zeros(a.shape)
    for re_d, im_d in model._L:
        for part in (re_d, im_d):
            _, g, h = _values(part, a, model.bindings)
            # D^{ab} = hbar g^a g^b with g = R grad, J^a_b = d_b g^a = (R hess)^a_b
            g = _raise_vec(R, g)
            J = _raise_mat(R, h)
            div += np.einsum("...ab,...b->...a", J, g) + g * np.trace(J, axis1=-2, axis2=-1)[..., None]
    return U - 0.5 * model.hbar * div


@dataclass(frozen=True, eq=False)
class CoefficientBundle:
    U: np.ndarray
    G: np.ndarray
    F: np.ndarray
    Gamma: np.ndarray
    D: np.ndarray
    S: np.ndarray
    S0: np.ndarray
    SD: np.ndarray


def coefficient_bundle(model: LindbladModel, alpha, sigma) -> CoefficientBundle:
    a = _alpha(model, alpha)
    s = np.asarray(sigma, dtype=float)
    G, Gamma = _friction(model, a)
    F = hessian_F(model, a)
    D = diffusion_D(model, a)
    K = F + Gamma
    KS = K @ s
    S = KS + np.swapaxes(KS, -1, -2) + D
    SD = D
    return CoefficientBundle(U=drift(model, a), G=G, F=F, Gamma=Gamma, D=D, S=S, S0=S - SD, SD=SD)


def local_generator(model: LindbladModel, alpha, check: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(U, F + Gamma, D)``: the drift, the linear covariance generator and the diffusion.

    ``check=False`` skips the PSD test on D for callers that eigendecompose
    it anyway.
    """
    a = _alpha(model, alpha)
    R = model.raising(model.conventions.drift_raising)
    _, gH, hH = _values(model._H, a)
    G, Gamma = _friction(model, a)
    return _raise_vec(R, gH) + G, _raise_mat(R, hH) + Gamma, diffusion_D(model, a, check)


def local_flow(model: LindbladModel, alpha, sigma) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(U, S0, SD)`` in one pass; the hot path of the integrators."""
    U, K, D = local_generator(model, alpha)
    KS = K @ np.asarray(sigma, dtype=float)
    return U, KS + np.swapaxes(KS, -1, -2), D
