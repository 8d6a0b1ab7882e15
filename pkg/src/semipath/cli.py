"""Command-line front end.

Exit codes: 0 success, 1 benchmark check failed, 2 invalid input (nothing is
written), 3 numerical failure during integration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .coefficients import ConventionError
from .ensemble import EnsembleError, run_ensemble
from .models import FreeParticleParams
from .observables import (
    UnsupportedObservable,
    energy_balance,
    gaussian_expectation,
    hamiltonian_observable,
    mixture_rate,
)
from .phase import MixtureSnapshot
from .propagator import AdmissibilityMonitor, IntegratorConfig, NTSWarning, NumericalError, Policy, analytic_free_particle, propagate
from .scenario import Scenario, ScenarioError, load_scenario

log = logging.getLogger("semipath")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
CHECK_RTOL = 1e-3


class InputError(Exception):
    pass


# --- output helpers ----------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def state_columns(d: int) -> list[str]:
    names = [f"x{i}" for i in range(1, d + 1)] + [f"p{i}" for i in range(1, d + 1)]
    return names + [f"s_{names[a]}{names[b]}" for a in range(2 * d) for b in range(a, 2 * d)]


def _upper(sigmas: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(sigmas.shape[-1])
    return sigmas[..., iu[0], iu[1]]


# --- commands ----------------------------------------------------------------


def _load(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    if getattr(args, "lam", None) is not None:
        raise InputError("--lambda is only accepted by the check command")
    return scenario


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _integrate(scenario: Scenario, args):
    model = scenario.build_model()
    cfg = scenario.integrator_config(args.dt, args.tmax)
    monitor = AdmissibilityMonitor(model.hbar, cfg.check_policy, cfg.nts_policy, cfg.nts_xi, cfg.uncertainty_tol)
    traj = propagate(model, scenario.build_initial(), cfg, monitor)
    return model, cfg, traj, monitor.summary()


def cmd_simulate(args) -> dict:
    scenario = _load(args)
    observables = scenario.build_observables()
    out = _prepare_out(args)
    model, cfg, traj, invariants = _integrate(scenario, args)
    cols = np.column_stack(
        [traj.times, traj.alphas, _upper(traj.sigmas)]
        + [gaussian_expectation(O, traj.alphas, traj.sigmas) for O in observables.values()]
    )
    write_csv(out / scenario.outputs.trajectory_csv, ["t"] + state_columns(model.d) + list(observables), cols)
    return {"scenario": scenario, "config": cfg, "invariants": invariants, "outputs": [scenario.outputs.trajectory_csv]}


def _column_average(values: np.ndarray, w: np.ndarray) -> np.ndarray:
    # contiguous rows keep numpy's pairwise summation, so constant columns average exactly
    flat = np.ascontiguousarray(values.reshape(values.shape[0], -1).T)
    return np.average(flat, axis=1, weights=w).reshape(values.shape[1:])


def _moment_rows(snapshots: list[MixtureSnapshot], observables) -> np.ndarray:
    rows = []
    for snap in snapshots:
        n = len(snap)
        w = snap.weights
        mean = _column_average(snap.alphas, w)
        dev = snap.alphas - mean
        total_cov = _column_average(snap.sigmas + dev[:, :, None] * dev[:, None, :], w)
        alpha_se = snap.alphas.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
        vals, ses = [], []
        for O in observables.values():
            v = np.asarray(gaussian_expectation(O, snap.alphas, snap.sigmas))
            vals.append(np.average(v, weights=w))
            ses.append(v.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0)
        rows.append(np.concatenate([[snap.time], mean, _upper(total_cov), vals, alpha_se, ses]))
    return np.array(rows)


def cmd_ensemble(args) -> dict:
    scenario = _load(args)
    if scenario.ensemble is None:
        raise InputError("scenario has no ensemble block")
    observables = scenario.build_observables()
    model = scenario.build_model()
    cfg = scenario.ensemble_config(args.seed, args.dt, args.tmax)
    out = _prepare_out(args)
    diagnostics: dict = {}
    snaps = run_ensemble(model, scenario.build_initial(), cfg, diagnostics)

    state = state_columns(model.d)
    header = ["t"] + state + list(observables) + [f"se_{c}" for c in state[: 2 * model.d]] + [f"se_{n}" for n in observables]
    write_csv(out / scenario.outputs.moments_csv, header, _moment_rows(snaps, observables))
    outputs = [scenario.outputs.moments_csv]
    if scenario.ensemble.dump_trajectories:
        rows = (
            np.concatenate([[s.time, i], s.alphas[i], _upper(s.sigmas[i])])
            for s in snaps
            for i in range(len(s))
        )
        write_csv(out / scenario.outputs.particles_csv, ["t", "trajectory"] + state, rows)
        outputs.append(scenario.outputs.particles_csv)
    return {"scenario": scenario, "config": cfg, "invariants": diagnostics, "outputs": outputs}


def cmd_decompose(args) -> dict:
    scenario = _load(args)
    if not scenario.observables:
        raise InputError("decompose needs a non-empty observables block")
    observables = scenario.build_observables()
    model = scenario.build_model()
    try:
        H = hamiltonian_observable(model)
    except UnsupportedObservable:
        H = None
    out = _prepare_out(args)
    model, cfg, traj, invariants = _integrate(scenario, args)
    snaps = [MixtureSnapshot(t, a[None], s[None]) for t, a, s in zip(traj.times, traj.alphas, traj.sigmas)]

    header, cols = ["t"], [traj.times]
    for name, O in observables.items():
        value = gaussian_expectation(O, traj.alphas, traj.sigmas)
        rates = [mixture_rate(model, s, O) for s in snaps]
        header += [f"{name}_value", f"{name}_coherent", f"{name}_diffusive", f"{name}_total"]
        cols += [value, [r.coherent for r in rates], [r.diffusive for r in rates], [r.total for r in rates]]
    write_csv(out / scenario.outputs.decomposition_csv, header, np.column_stack(cols))
    outputs = [scenario.outputs.decomposition_csv]

    if H is not None:
        bal = energy_balance(model, snaps)
        residual = bal.first_law_residual
        write_csv(
            out / scenario.outputs.energy_csv,
            ["t", "E", "work_rate", "heat_rate", "work", "heat", "reconstructed_E", "first_law_residual"],
            np.column_stack([bal.times, bal.energy, bal.work_rate, bal.heat_rate, bal.work, bal.heat, bal.energy[0] + bal.work + bal.heat, residual]),
        )
        outputs.append(scenario.outputs.energy_csv)
        invariants = dict(invariants, max_first_law_residual=float(np.max(np.abs(residual))))
    return {"scenario": scenario, "config": cfg, "invariants": invariants, "outputs": outputs}


def run_check(lam: float = 0.15, dt: float = 0.02, t_max: float = 10.0) -> tuple[dict, np.ndarray]:
    """Free-particle benchmark: quantum, diffusion-free and closed-form runs.

    Returns the report and the plot-data rows ``(t, quantum, classical, analytic)``.
    """
    params = FreeParticleParams(lam=lam)
    cfg = IntegratorConfig(dt=dt, t_max=t_max, nts_policy=Policy.IGNORE)
    init = params.initial()
    model = params.model()
    quantum = propagate(model, init, cfg)
    classical = propagate(params.model(diffusion=False), init, cfg)
    nts = AdmissibilityMonitor(params.hbar, Policy.IGNORE, Policy.WARN, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NTSWarning)
        nts(quantum.sigmas, 0)

    t = quantum.times
    xq = quantum.alphas[:, 0] ** 2 + quantum.sigmas[:, 0, 0]
    xc = classical.alphas[:, 0] ** 2 + classical.sigmas[:, 0, 0]
    xa = params.x2(t)
    exact = analytic_free_particle(params, t[-1]).sigma
    excess = 2 * params.hbar * lam * t

    def rel(a, b):
        return float(abs(a - b) / abs(b))

    checks = []

    def add(name, error, tol, kind="relative"):
        checks.append({"name": name, "error": error, "tolerance": tol, "kind": kind, "passed": bool(error < tol)})

    add("sigma_xx(T)", rel(quantum.sigmas[-1, 0, 0], exact[0, 0]), CHECK_RTOL)
    add("sigma_xp(T)", rel(quantum.sigmas[-1, 0, 1], exact[0, 1]), CHECK_RTOL)
    add("sigma_pp(t)", float(np.max(np.abs(quantum.sigmas[:, 1, 1] - exact[1, 1]) / exact[1, 1])), CHECK_RTOL)
    for tc in (1.0, 5.0, 10.0):
        i = int(np.argmin(np.abs(t - tc)))
        if abs(t[i] - tc) < 1e-9:
            add(f"<x^2>({tc:g})", rel(xq[i], xa[i]), CHECK_RTOL)
    add("quantum - classical = 2 hbar lambda t", float(np.max(np.abs(xq - xc - excess))), CHECK_RTOL, "absolute")
    report = {
        "parameters": {"m": params.m, "hbar": params.hbar, "lambda": lam, "x0": params.x0, "p0": params.p0, "dt": dt, "t_max": t_max},
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "analytic_x2_at_T": float(xa[-1]),
        "nts_ok": nts.nts_ok,
        "min_nts_ratio": nts.min_nts_ratio,
    }
    return report, np.column_stack([t, xq, xc, xa])


def cmd_check(args) -> dict:
    if args.scenario is not None:
        raise InputError("check is self-contained and takes no scenario")
    lam = 0.15 if args.lam is None else args.lam
    dt = 0.02 if args.dt is None else args.dt
    t_max = 10.0 if args.tmax is None else args.tmax
    if lam < 0 or dt <= 0 or t_max < dt:
        raise InputError("need lambda >= 0 and 0 < dt <= tmax")
    out = _prepare_out(args)
    report, rows = run_check(lam, dt, t_max)
    write_csv(out / "figure_x2.csv", ["t", "quantum", "classical", "analytic"], rows)
    write_json(out / "check_report.json", report)
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['kind']} error {c['error']:.3e} (tol {c['tolerance']:g})")
    return {"config": report["parameters"], "invariants": {"nts_ok": report["nts_ok"]}, "outputs": ["figure_x2.csv", "check_report.json"], "passed": report["passed"]}


COMMANDS = {"simulate": cmd_simulate, "ensemble": cmd_ensemble, "decompose": cmd_decompose, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semipath", description="Gaussian-mixture simulation of open quantum systems.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=name != "check", help="scenario JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the ensemble seed")
        p.add_argument("--dt", type=float)
        p.add_argument("--tmax", type=float)
        p.add_argument("--lambda", dest="lam", type=float, help="dephasing rate (check only)")
    return parser


def _summary_doc(command: str, args, result: dict, wall: float) -> dict:
    cfg = result.get("config")
    if hasattr(cfg, "__dataclass_fields__"):
        cfg = {k: getattr(v, "value", v) for k, v in vars(cfg).items()}
    scenario = result.get("scenario")
    return {
        "command": command,
        "scenario": scenario.model_dump(mode="json") if scenario is not None else None,
        "overrides": {"seed": args.seed, "dt": args.dt, "tmax": args.tmax, "lambda": args.lam},
        "config": cfg,
        "wall_time_s": wall,
        "invariants": result.get("invariants", {}),
        "outputs": result.get("outputs", []),
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INPUT

    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", NTSWarning)
            result = COMMANDS[args.command](args)
    except (ScenarioError, InputError, ConventionError, UnsupportedObservable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        where = f" at step {exc.step}" if exc.step is not None else ""
        who = f" (trajectory {exc.trajectory})" if isinstance(exc, EnsembleError) else ""
        print(f"numerical failure{where}{who}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - start

    scenario = result.get("scenario")
    name = scenario.outputs.summary if scenario is not None else "summary.json"
    write_json(Path(args.out) / name, _summary_doc(args.command, args, result, wall))
    if result.get("passed") is False:
        return EXIT_CHECK
    return EXIT_OK


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
