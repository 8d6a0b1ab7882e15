"""JSON scenario documents: schema, validation and conversion to library objects."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import symbols as sym
from .coefficients import ConventionFlags, LindbladModel, Raising
from .ensemble import EnsembleConfig, SigmaScheme
from .observables import PolynomialObservable, UnsupportedObservable
from .phase import GaussianComponent, uncertainty_check
from .propagator import IntegratorConfig, Method, Policy


class ScenarioError(ValueError):
    """The scenario document is malformed or inconsistent."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LindbladBlock(_Strict):
    re: str
    im: str = "0"


class ConventionBlock(_Strict):
    drift_raising: Raising = Raising.SYMPLECTIC
    diffusion_raising: Raising = Raising.EUCLIDEAN
    ehrenfest_factor_two: bool = False


class ModelBlock(_Strict):
    d: int = Field(ge=1)
    hbar: float = Field(gt=0)
    params: dict[str, float] = Field(default_factory=dict)
    H: str
    lindblads: list[Union[LindbladBlock, str]] = Field(default_factory=list)
    conventions: ConventionBlock = Field(default_factory=ConventionBlock)


class InitialBlock(_Strict):
    alpha: list[float]
    sigma: Union[Literal["coherent"], list[list[float]]] = "coherent"


class IntegratorBlock(_Strict):
    dt: float = Field(0.02, gt=0)
    t_max: float = Field(10.0, gt=0)
    method: Method = Method.RK4
    check_policy: Policy = Policy.ERROR
    nts_policy: Policy = Policy.WARN
    nts_xi: float = Field(1.0, gt=0, le=1)
    record_stride: int = Field(1, ge=1)


class EnsembleBlock(_Strict):
    n_traj: int = Field(ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    dt: Optional[float] = Field(None, gt=0)
    t_max: Optional[float] = Field(None, gt=0)
    record_stride: int = Field(1, ge=1)
    clamp_tol: float = Field(1e-12, ge=0)
    workers: int = Field(1, ge=1)
    sigma_scheme: SigmaScheme = SigmaScheme.EXPONENTIAL
    dump_trajectories: bool = False


class OutputBlock(_Strict):
    trajectory_csv: str = "trajectory.csv"
    moments_csv: str = "moments.csv"
    particles_csv: str = "particles.csv"
    decomposition_csv: str = "decomposition.csv"
    energy_csv: str = "energy.csv"
    summary: str = "summary.json"

    @field_validator("*")
    @classmethod
    def _plain_name(cls, v: str) -> str:
        if not v or Path(v).name != v:
            raise ValueError(f"output names must be plain file names, got {v!r}")
        return v


class Scenario(_Strict):
    model: ModelBlock
    initial: InitialBlock
    integrator: IntegratorBlock = Field(default_factory=IntegratorBlock)
    ensemble: Optional[EnsembleBlock] = None
    observables: dict[str, str] = Field(default_factory=dict)
    outputs: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="after")
    def _check_dims(self) -> Scenario:
        n = 2 * self.model.d
        if len(self.initial.alpha) != n:
            raise ValueError(f"initial.alpha must have {n} entries")
        if self.initial.sigma != "coherent":
            s = self.initial.sigma
            if len(s) != n or any(len(row) != n for row in s):
                raise ValueError(f"initial.sigma must be {n}x{n}")
        if self.integrator.dt > self.integrator.t_max:
            raise ValueError("integrator.dt exceeds integrator.t_max")
        for name in self.observables:
            if not name.isidentifier():
                raise ValueError(f"observable name {name!r} is not an identifier")
        return self

    # --- conversion ----------------------------------------------------------

    def build_model(self) -> LindbladModel:
        m = self.model
        Ls = [(L, "0") if isinstance(L, str) else (L.re, L.im) for L in m.lindblads]
        flags = ConventionFlags(**m.conventions.model_dump())
        return LindbladModel.from_text(m.d, m.hbar, m.H, Ls, m.params, flags)

    def build_initial(self) -> GaussianComponent:
        if self.initial.sigma == "coherent":
            return GaussianComponent.coherent(self.initial.alpha, self.model.hbar)
        return GaussianComponent(self.initial.alpha, np.array(self.initial.sigma))

    def integrator_config(self, dt: float | None = None, t_max: float | None = None) -> IntegratorConfig:
        block = self.integrator.model_dump()
        if dt is not None:
            block["dt"] = dt
        if t_max is not None:
            block["t_max"] = t_max
        return IntegratorConfig(**block)

    def ensemble_config(self, seed: int | None = None, dt: float | None = None, t_max: float | None = None) -> EnsembleConfig:
        if self.ensemble is None:
            raise ScenarioError("scenario has no ensemble block")
        e = self.ensemble
        return EnsembleConfig(
            n_traj=e.n_traj,
            dt=dt or e.dt or self.integrator.dt,
            t_max=t_max or e.t_max or self.integrator.t_max,
            seed=e.seed if seed is None else seed,
            record_stride=e.record_stride,
            clamp_tol=e.clamp_tol,
            check_policy=self.integrator.check_policy,
            nts_policy=self.integrator.nts_policy,
            nts_xi=self.integrator.nts_xi,
            workers=e.workers,
            sigma_scheme=e.sigma_scheme,
        )

    def build_observables(self) -> dict[str, PolynomialObservable]:
        m = self.model
        return {name: PolynomialObservable.from_text(text, m.d, m.params) for name, text in self.observables.items()}


def load_scenario(path) -> Scenario:
    """Read and fully validate a scenario, including every symbol and observable.

    Any problem surfaces as :class:`ScenarioError` before computation starts.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return validate_scenario(raw)


def validate_scenario(raw: dict) -> Scenario:
    try:
        scenario = Scenario.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from exc
    try:
        model = scenario.build_model()
        init = scenario.build_initial()
        scenario.build_observables()
    except UnsupportedObservable as exc:
        raise ScenarioError(f"unsupported observable: {exc}") from exc
    except (sym.SymbolError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc
    if not uncertainty_check(init.sigma, model.hbar):
        raise ScenarioError("initial covariance violates the uncertainty principle")
    return scenario


def bundled_scenario_path() -> Path:
    return Path(__file__).with_name("data") / "free_particle.json"
