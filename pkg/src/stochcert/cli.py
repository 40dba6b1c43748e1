"""Scenario loading, command dispatch, and report emission.

Scenarios are YAML files with nested blocks (system, regions, grid, mc,
check); everything downstream is derived from them, seeds included, so a
command run twice produces identical output.  Exit codes: 0 success, 2
scenario validation error, 3 certificate rejected by verify, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import certificate as cert_mod
from . import dp, mc, model as model_mod, regions as regions_mod, synth
from .certificate import (
    ALL_KINDS,
    KIND_LIVENESS_UPPER_DISCOUNTED,
    KIND_RA_LOWER_A1,
    KIND_RA_LOWER_DISCOUNTED,
    KIND_RA_LOWER_PAIR,
    KIND_SAFETY_LOWER,
    KIND_UNSAFE_REACH_UPPER,
    CertificateError,
    Condition,
    GridCert,
)
from .expr import EvalError, ExprError, parse_expr, parse_predicate
from .model import DisturbanceDist, SystemModel
from .regions import RegionSpec, StateClass

__all__ = ["Scenario", "ScenarioError", "Report", "load_scenario", "run", "main"]

COMMANDS = (
    "simulate",
    "solve",
    "estimate",
    "verify",
    "extract",
    "synthesize",
    "assumption1",
    "report-all",
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_REJECTED = 3
EXIT_NUMERIC = 4


class ScenarioError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class Scenario:
    name: str
    system: SystemModel
    regions: RegionSpec
    x0s: np.ndarray  # (k, n)
    epsilon1: float
    epsilon2: float
    grid: dp.Grid
    gamma: float
    mc_horizon: int
    mc_trials: int
    mc_delta: float
    mc_seed: int
    tolerance: float
    extra_points: int
    point_seed: int
    warnings: list[str] = field(default_factory=list)


@dataclass
class Report:
    command: str
    scenario: str
    sections: dict
    caveats: list[str] = field(default_factory=list)
    passed: bool = True

    def to_json(self) -> str:
        return json.dumps(
            {
                "command": self.command,
                "scenario": self.scenario,
                "passed": self.passed,
                "sections": self.sections,
                "caveats": self.caveats,
            },
            indent=2,
            default=_jsonable,
        )

    def to_text(self) -> str:
        lines = [f"command: {self.command}", f"scenario: {self.scenario}"]
        for title, body in self.sections.items():
            lines.append("")
            lines.append(f"[{title}]")
            lines.extend(_render(body, indent="  "))
        if self.caveats:
            lines.append("")
            lines.append("[caveats]")
            lines.extend(f"  - {c}" for c in self.caveats)
        lines.append("")
        lines.append(f"result: {'ok' if self.passed else 'FAILED'}")
        return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def _render(body, indent="") -> list[str]:
    lines = []
    if isinstance(body, dict):
        for key, val in body.items():
            if isinstance(val, (dict, list)) and val and not _is_scalar_list(val):
                lines.append(f"{indent}{key}:")
                lines.extend(_render(val, indent + "  "))
            else:
                lines.append(f"{indent}{key}: {_fmt(val)}")
    elif isinstance(body, list):
        for item in body:
            if isinstance(item, (dict, list)):
                lines.append(f"{indent}-")
                lines.extend(_render(item, indent + "  "))
            else:
                lines.append(f"{indent}- {_fmt(item)}")
    else:
        lines.append(f"{indent}{_fmt(body)}")
    return lines


def _is_scalar_list(val) -> bool:
    return isinstance(val, list) and all(not isinstance(x, (dict, list)) for x in val)


def _fmt(val) -> str:
    if isinstance(val, float):
        return f"{val:.9g}"
    if isinstance(val, np.ndarray):
        return np.array2string(val, precision=6)
    return str(val)


def _prob(value: float, method: str) -> dict:
    """A probability claim labeled with how it was obtained; values may carry
    solver noise of order 1e-12 which is clamped, anything worse is an error."""
    v = float(value)
    if not -1e-9 <= v <= 1.0 + 1e-9:
        raise ValueError(f"probability {v!r} outside [0, 1]")
    return {"value": min(max(v, 0.0), 1.0), "method": method}


# scenario loading -----------------------------------------------------


def load_scenario(path) -> Scenario:
    """Parse and fully cross-validate a scenario file; raises ScenarioError
    carrying every problem found."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ScenarioError([f"scenario file not found: {path}"])
    except yaml.YAMLError as exc:
        raise ScenarioError([f"scenario parse error: {exc}"])
    if not isinstance(raw, dict):
        raise ScenarioError(["scenario file must contain a mapping"])

    errors: list[str] = []
    warnings: list[str] = []

    def need(block: str) -> dict:
        val = raw.get(block)
        if not isinstance(val, dict):
            errors.append(f"missing or malformed block: {block}")
            return {}
        return val

    sys_block = need("system")
    reg_block = need("regions")
    grid_block = need("grid")
    mc_block = need("mc")
    check_block = need("check")
    thresholds = raw.get("thresholds", {}) or {}

    n = int(sys_block.get("n", 0) or 0)
    m = int(sys_block.get("m", 0) or 0)
    if n < 1:
        errors.append("system.n must be a positive integer")

    dist = None
    dist_block = sys_block.get("disturbance") or {}
    kind = dist_block.get("kind")
    try:
        if kind == "finite":
            dist = DisturbanceDist(
                atoms=np.asarray(dist_block["atoms"], dtype=float).reshape(-1, max(m, 0)),
                probs=np.asarray(dist_block["probs"], dtype=float),
            )
        elif kind == "uniform":
            dist = model_mod.quantize_uniform(
                float(dist_block["lo"]), float(dist_block["hi"]), int(dist_block["atoms"])
            )
        elif kind == "gaussian":
            dist = model_mod.quantize_gaussian(
                float(dist_block["mean"]), float(dist_block["std"]), int(dist_block["atoms"])
            )
        else:
            errors.append(f"disturbance.kind must be finite/uniform/gaussian, got {kind!r}")
        if dist is not None and dist.m != m:
            errors.append(f"disturbance dimension {dist.m} != system.m = {m}")
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"disturbance: {exc}")

    dynamics = []
    dyn_src = sys_block.get("dynamics", [])
    if not isinstance(dyn_src, list) or len(dyn_src) != max(n, 0):
        errors.append(f"system.dynamics must list {n} expressions")
    else:
        for i, text in enumerate(dyn_src):
            try:
                dynamics.append(parse_expr(str(text), n, m))
            except ExprError as exc:
                errors.append(f"dynamics[{i}]: {exc}")

    reg = None
    try:
        safe_ast = parse_predicate(str(reg_block.get("safe", "")), n)
        target_ast = parse_predicate(str(reg_block.get("target", "")), n)
        reg = RegionSpec(safe=safe_ast, target=target_ast)
    except ExprError as exc:
        errors.append(f"regions: {exc}")

    grid = None
    try:
        grid = dp.build_grid(grid_block["lower"], grid_block["upper"], grid_block["cells"])
        if grid.n != n:
            errors.append(f"grid dimension {grid.n} != system.n = {n}")
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"grid: {exc}")

    if "initial_states" in raw:
        x0s = np.atleast_2d(np.asarray(raw["initial_states"], dtype=float))
    else:
        x0s = np.atleast_2d(np.asarray(raw.get("initial_state", []), dtype=float))
    if x0s.size == 0 or x0s.shape[1] != max(n, 1):
        errors.append("initial_state must give one (or more) length-n state(s)")

    def _float(block, key, default, lo, hi, desc):
        try:
            val = float(block.get(key, default))
        except (TypeError, ValueError):
            errors.append(f"{desc} must be a number")
            return default
        if not lo <= val <= hi:
            errors.append(f"{desc} must lie in [{lo}, {hi}]")
        return val

    epsilon1 = _float(thresholds, "epsilon1", 0.0, 0.0, 1.0, "thresholds.epsilon1")
    epsilon2 = _float(thresholds, "epsilon2", 0.0, 0.0, 1.0, "thresholds.epsilon2")
    gamma = _float(raw, "gamma", 0.5, 0.0, 1.0, "gamma")
    if gamma >= 1.0:
        errors.append("gamma must be < 1")

    mc_horizon = int(mc_block.get("horizon", 0) or 0)
    mc_trials = int(mc_block.get("trials", 0) or 0)
    mc_delta = _float(mc_block, "delta", 0.05, 0.0, 1.0, "mc.delta")
    mc_seed = int(mc_block.get("seed", 0) or 0)
    if mc_horizon < 1:
        errors.append("mc.horizon must be >= 1")
    if mc_trials < 1:
        errors.append("mc.trials must be >= 1")
    if not 0.0 < mc_delta < 1.0:
        errors.append("mc.delta must lie in (0, 1)")

    tolerance = _float(check_block, "tolerance", 1e-6, 0.0, 1.0, "check.tolerance")
    extra_points = int(check_block.get("extra_points", 200))
    point_seed = int(check_block.get("point_seed", 1))
    if tolerance <= 0:
        errors.append("check.tolerance must be positive")
    if extra_points < 0:
        errors.append("check.extra_points must be >= 0")

    system = None
    if not errors and dist is not None and reg is not None and grid is not None:
        system = SystemModel(n=n, m=m, dynamics=tuple(dynamics), dist=dist)
        rng = np.random.default_rng(point_seed)
        samples = np.vstack([grid.nodes(), grid.box.inflate(0.2).sample(4000, rng)])
        nesting = regions_mod.validate_nesting(reg, samples)
        if not nesting.passed:
            witness = nesting.witnesses[0].tolist()
            errors.append(f"target set not contained in safe set, witness {witness}")
        elif nesting.vacuous:
            warnings.append("target predicate is empty over the sampled box")
        outside = grid.box.inflate(0.5).sample(4000, rng)
        codes = regions_mod.classify_batch(reg, outside)
        in_x = codes != int(StateClass.UNSAFE)
        stray = in_x & ~grid.box.contains(outside)
        if stray.any():
            witness = outside[stray][0].tolist()
            errors.append(f"safe set not contained in the grid box, witness {witness}")

    if errors:
        raise ScenarioError(errors)

    return Scenario(
        name=str(raw.get("name", path.stem)),
        system=system,
        regions=reg,
        x0s=x0s,
        epsilon1=epsilon1,
        epsilon2=epsilon2,
        grid=grid,
        gamma=gamma,
        mc_horizon=mc_horizon,
        mc_trials=mc_trials,
        mc_delta=mc_delta,
        mc_seed=mc_seed,
        tolerance=tolerance,
        extra_points=extra_points,
        point_seed=point_seed,
        warnings=warnings,
    )


# shared pipeline pieces ------------------------------------------------


def _kernels(sc: Scenario):
    reach = dp.build_kernel(sc.system, sc.grid, sc.regions, dp.MODE_REACH_AVOID)
    safety = dp.build_kernel(sc.system, sc.grid, sc.regions, dp.MODE_SAFETY)
    return reach, safety


def _solve_fields(sc: Scenario, reach_kernel, safety_kernel) -> dict:
    fields = {
        "reach_avoid": dp.solve_reach_avoid(reach_kernel),
        "safety_exit": dp.solve_safety_exit(safety_kernel),
        "discounted": dp.solve_discounted(reach_kernel, sc.gamma),
        "discounted_exit": dp.solve_discounted(safety_kernel, sc.gamma),
        "gamma": sc.gamma,
        "regions": sc.regions,
    }
    fields["assumption1"] = dp.check_assumption1(reach_kernel)
    return fields


def _omega_samples(sc: Scenario) -> np.ndarray:
    rng = np.random.default_rng(sc.point_seed)
    return np.vstack([sc.grid.nodes(), sc.grid.box.sample(2000, rng)])


def _default_omega(sc: Scenario) -> regions_mod.Box:
    return regions_mod.compute_omega(sc.system, sc.grid.box, sc.regions, _omega_samples(sc))


def _check_points(sc: Scenario, cert) -> np.ndarray:
    interior = not isinstance(cert, GridCert)
    return cert_mod.build_check_points(
        sc.grid, _default_omega(sc), sc.extra_points, sc.point_seed,
        interior_random=interior,
    )


def _stay_prob_after(kernel, x0, horizon: int) -> float:
    """P(chain not yet absorbed after `horizon` steps from x0): the truncation
    slack separating a finite-K Monte Carlo estimate from its limit."""
    sweeps = min(horizon, 100_000)
    Ptt = kernel.P[:, kernel.transient]
    s = np.ones(kernel.n_transient)
    for _ in range(sweeps):
        if s.size == 0 or s.max() < 1e-15:
            break
        s = Ptt.dot(s)
    values = np.zeros(kernel.grid.n_nodes)
    values[kernel.transient] = s
    fld = dp.ValueField(values, kernel.grid, outside_default=0.0)
    return float(np.clip(dp.eval_field(fld, x0), 0.0, 1.0))


def _threshold_verdicts(sc: Scenario, fields: dict) -> dict:
    """The scenario's verification questions answered from the DP fields."""
    x0 = sc.x0s[0]
    live = 1.0 - dp.eval_field(fields["safety_exit"], x0)
    reach = dp.eval_field(fields["reach_avoid"], x0)
    return {
        "liveness": {"value": live, "epsilon1": sc.epsilon1,
                     "certified": bool(live >= sc.epsilon1), "method": "dp"},
        "reach_avoid": {"value": reach, "epsilon2": sc.epsilon2,
                        "certified": bool(reach >= sc.epsilon2), "method": "dp"},
    }


# commands --------------------------------------------------------------


def _cmd_simulate(sc: Scenario, out_dir: Path | None) -> Report:
    x0 = sc.x0s[0]
    traj = model_mod.simulate(sc.system, x0, sc.mc_horizon, sc.mc_seed)
    section = {
        "x0": x0.tolist(),
        "steps": int(traj.states.shape[0] - 1),
        "final_state": traj.states[-1].tolist(),
        "final_class": regions_mod.classify(sc.regions, traj.states[-1]).name,
        "error": traj.error,
    }
    if out_dir:
        path = out_dir / "trajectory.csv"
        header = "step," + ",".join(f"x{d + 1}" for d in range(sc.system.n))
        data = np.column_stack([np.arange(traj.states.shape[0]), traj.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="")
        section["csv"] = str(path)
    report = Report("simulate", sc.name, {"trajectory": section})
    if traj.error:
        report.passed = False
    return report


def _cmd_solve(sc: Scenario, out_dir: Path | None) -> Report:
    reach_kernel, safety_kernel = _kernels(sc)
    fields = _solve_fields(sc, reach_kernel, safety_kernel)
    sections: dict = {}
    caveats = [
        f"grid {sc.grid.cells.tolist()} cells over "
        f"[{sc.grid.lower.tolist()}, {sc.grid.upper.tolist()}]; values are for "
        "the discretized chain, fidelity is empirical"
    ]
    exact_ok = reach_kernel.n_transient <= 5000
    per_x0 = []
    for x0 in sc.x0s:
        entry = {
            "x0": x0.tolist(),
            "reach_avoid": _prob(dp.eval_field(fields["reach_avoid"], x0), "dp"),
            "exit": _prob(dp.eval_field(fields["safety_exit"], x0), "dp"),
            "liveness": _prob(1.0 - dp.eval_field(fields["safety_exit"], x0), "dp"),
            f"discounted(gamma={sc.gamma:g})": _prob(
                dp.eval_field(fields["discounted"], x0), "dp"
            ),
        }
        per_x0.append(entry)
    sections["values"] = per_x0
    sections["thresholds"] = _threshold_verdicts(sc, fields)
    if exact_ok:
        try:
            exact = dp.solve_exact_small(reach_kernel, "reach_avoid")
            gap = float(np.max(np.abs(exact.values - fields["reach_avoid"].values)))
            sections["cross_check"] = {
                "exact_vs_iterative_sup_gap": gap,
                "iterations": fields["reach_avoid"].iterations,
            }
        except dp.SingularSystemError as exc:
            # mass can stay transient forever; the iterative least fixed
            # point is still the value function, only the oracle is unusable
            sections["cross_check"] = {"exact_solve": f"unavailable: {exc}"}
    if not fields["reach_avoid"].converged or not fields["safety_exit"].converged:
        caveats.append("iteration hit the sweep cap; values are valid lower bounds")
    if out_dir:
        for name in ("reach_avoid", "safety_exit", "discounted"):
            path = out_dir / f"field_{name}.csv"
            dp.field_to_csv(fields[name], path)
            sections.setdefault("csv", {})[name] = str(path)
    return Report("solve", sc.name, sections, caveats)


def _cmd_estimate(sc: Scenario) -> Report:
    per_x0 = []
    for x0 in sc.x0s:
        live = mc.estimate_liveness(sc.system, sc.regions, x0, sc.mc_horizon,
                                    sc.mc_trials, sc.mc_delta, sc.mc_seed)
        reach = mc.estimate_reach_avoid(sc.system, sc.regions, x0, sc.mc_horizon,
                                        sc.mc_trials, sc.mc_delta, sc.mc_seed)
        per_x0.append({
            "x0": x0.tolist(),
            "liveness": {**_prob(live.p_hat, "mc"), "half_width": live.half_width,
                         "direction": live.direction, "error": live.error},
            "reach_avoid": {**_prob(reach.p_hat, "mc"), "half_width": reach.half_width,
                            "direction": reach.direction, "error": reach.error},
        })
    caveats = [
        f"{sc.mc_trials} trials, horizon {sc.mc_horizon}, delta {sc.mc_delta:g}; "
        "finite-horizon estimates bracket the infinite-horizon probabilities "
        "(see direction notes)"
    ]
    report = Report("estimate", sc.name, {"estimates": per_x0}, caveats)
    if any(e["liveness"]["error"] or e["reach_avoid"]["error"] for e in per_x0):
        report.passed = False
    return report


def _cmd_assumption1(sc: Scenario) -> Report:
    reach_kernel = dp.build_kernel(sc.system, sc.grid, sc.regions, dp.MODE_REACH_AVOID)
    res = dp.check_assumption1(reach_kernel)
    section = {
        "holds": res.holds,
        "sup_stay_probability": res.sup_stay_prob,
        "iterations": res.iterations,
        "converged": res.converged,
    }
    return Report("assumption1", sc.name, {"assumption1": section})


def _extract_all(sc: Scenario, fields: dict, omega) -> dict[str, tuple[Condition, object]]:
    """Extract a certificate per condition kind at its tight threshold.

    Thresholds are the extracted function's own initial-state value (or its
    complement for the safety lower bound), i.e. the best bound the field
    supports; the undiscounted reach-avoid kind is skipped when the
    finite-time-exit check fails.
    """
    x0 = sc.x0s[0]
    out: dict[str, tuple[Condition, object]] = {}

    exit_v = dp.eval_field(fields["safety_exit"], x0)
    cert = cert_mod.extract_certificate(fields, KIND_SAFETY_LOWER)
    out[KIND_SAFETY_LOWER] = (Condition(KIND_SAFETY_LOWER, min(1.0, 1.0 - exit_v)), cert)

    reach_v = dp.eval_field(fields["reach_avoid"], x0)
    cert = cert_mod.extract_certificate(fields, KIND_UNSAFE_REACH_UPPER)
    out[KIND_UNSAFE_REACH_UPPER] = (Condition(KIND_UNSAFE_REACH_UPPER, min(1.0, reach_v)), cert)

    if fields["assumption1"].holds:
        cert = cert_mod.extract_certificate(fields, KIND_RA_LOWER_A1)
        out[KIND_RA_LOWER_A1] = (Condition(KIND_RA_LOWER_A1, max(0.0, reach_v)), cert)

    disc_v = dp.eval_field(fields["discounted"], x0)
    cert = cert_mod.extract_certificate(fields, KIND_RA_LOWER_DISCOUNTED)
    out[KIND_RA_LOWER_DISCOUNTED] = (
        Condition(KIND_RA_LOWER_DISCOUNTED, max(0.0, disc_v), gamma=sc.gamma), cert
    )

    dexit_v = dp.eval_field(fields["discounted_exit"], x0)
    cert = cert_mod.extract_certificate(fields, KIND_LIVENESS_UPPER_DISCOUNTED)
    out[KIND_LIVENESS_UPPER_DISCOUNTED] = (
        Condition(KIND_LIVENESS_UPPER_DISCOUNTED, max(0.0, dexit_v), gamma=sc.gamma), cert
    )

    v, w = cert_mod.extract_certificate(fields, KIND_RA_LOWER_PAIR)
    out[KIND_RA_LOWER_PAIR] = (
        Condition(KIND_RA_LOWER_PAIR, max(0.0, disc_v), gamma=sc.gamma, omega=omega, w=w), v
    )
    return out


def _cmd_extract(sc: Scenario, out_dir: Path | None, only_kind: str | None) -> Report:
    reach_kernel, safety_kernel = _kernels(sc)
    fields = _solve_fields(sc, reach_kernel, safety_kernel)
    omega = _default_omega(sc)
    extracted = _extract_all(sc, fields, omega)
    if only_kind:
        if only_kind not in extracted:
            raise CertificateError(
                f"extraction for {only_kind} unavailable "
                "(finite-time-exit assumption may have failed)"
            )
        extracted = {only_kind: extracted[only_kind]}
    sections: dict = {}
    caveats = []
    if not fields["assumption1"].holds:
        caveats.append(
            "undiscounted reach-avoid extraction skipped: sup stay-probability "
            f"{fields['assumption1'].sup_stay_prob:.3g}"
        )
    for kind, (cond, cert) in extracted.items():
        points = _check_points(sc, cert)
        report = cert_mod.check_condition(sc.system, sc.regions, cert, cond,
                                          sc.x0s[0], points, sc.tolerance)
        entry = {
            "threshold": cond.epsilon,
            "gamma": cond.gamma,
            "self_check": "pass" if report.passed else "FAIL",
            "min_slack": report.min_slack,
            "method": "pointwise-check",
        }
        if out_dir:
            path = out_dir / f"certificate_{kind}.yaml"
            cert_mod.save_certificate(path, cond, cert)
            entry["file"] = str(path)
        sections[kind] = entry
    report = Report("extract", sc.name, sections, caveats)
    report.passed = all(v["self_check"] == "pass" for v in sections.values())
    return report


def _cmd_verify(sc: Scenario, certificate_path: str | None, only_kind: str | None) -> Report:
    if not certificate_path:
        raise ScenarioError(["verify needs --certificate <file>"])
    cond, cert = cert_mod.load_certificate(certificate_path)
    if only_kind and only_kind != cond.kind:
        cond = Condition(only_kind, cond.epsilon, gamma=cond.gamma,
                         omega=cond.omega, w=cond.w)
    points = _check_points(sc, cert)
    report = cert_mod.check_condition(sc.system, sc.regions, cert, cond,
                                      sc.x0s, points, sc.tolerance)
    section = {
        "kind": cond.kind,
        "threshold": cond.epsilon,
        "passed": report.passed,
        "method": "pointwise-check",
        "points": report.n_points,
        "clauses": [
            {"clause": c.name, "points": c.n_points, "min_slack": c.min_slack}
            for c in report.clauses
        ],
        "witnesses": [
            {"point": pt.tolist(), "clause": name, "lhs": lhs, "rhs": rhs}
            for pt, name, lhs, rhs in report.witnesses[:5]
        ],
    }
    return Report("verify", sc.name, {"verify": section},
                  caveats=report.caveats, passed=report.passed)


def _synth_points(sc: Scenario, kind: str) -> np.ndarray:
    """Sample points over the set reach-avoid trajectories can actually visit
    (images of X minus the target for the reach-avoid kinds), not the full
    one-step superset: unreachable unsafe samples would reject valid templates."""
    transient_only = kind in (KIND_RA_LOWER_A1, KIND_RA_LOWER_DISCOUNTED,
                              KIND_UNSAFE_REACH_UPPER, KIND_RA_LOWER_PAIR)
    omega = regions_mod.compute_omega(
        sc.system, sc.grid.box, sc.regions, _omega_samples(sc),
        transient_only=transient_only,
    )
    rng = np.random.default_rng(sc.point_seed + 1)
    count = max(sc.extra_points, 200)
    return omega.sample(count, rng)


def _cmd_synthesize(sc: Scenario, out_dir: Path | None, only_kind: str | None) -> Report:
    kind = only_kind or KIND_RA_LOWER_A1
    template = synth.Template(n=sc.system.n, degree=1)
    gamma = sc.gamma if kind in (KIND_RA_LOWER_DISCOUNTED,
                                 KIND_LIVENESS_UPPER_DISCOUNTED) else None
    points = _synth_points(sc, kind)
    result = synth.synthesize(
        sc.system, sc.regions, kind, template, points, sc.x0s[0],
        tolerance=sc.tolerance, gamma=gamma, margin=0.01,
        revalidation_seed=sc.point_seed + 2,
    )
    section = {
        "kind": kind,
        "template_degree": template.degree,
        "coefficients": list(result.cert.coeffs),
        "threshold": result.threshold,
        "status": result.status,
        "lp_iterations": result.lp.iterations,
        "constraint_points": int(points.shape[0]),
    }
    caveats = list(result.report.caveats)
    if kind == KIND_RA_LOWER_A1:
        caveats.append("the undiscounted lower bound is sound only under the "
                       "finite-time-exit assumption; run assumption1")
    if out_dir:
        cert_path = out_dir / f"synthesized_{kind}.yaml"
        cert_mod.save_certificate(cert_path, Condition(kind, result.threshold, gamma=gamma),
                                  result.cert)
        lp_path = out_dir / "synthesis.lp.txt"
        lp_path.write_text(synth.lp_to_text(result.problem))
        section["file"] = str(cert_path)
        section["lp_dump"] = str(lp_path)
    return Report("synthesize", sc.name, {"synthesis": section}, caveats,
                  passed=result.status == "validated")


def _cmd_report_all(sc: Scenario, out_dir: Path | None) -> Report:
    reach_kernel, safety_kernel = _kernels(sc)
    fields = _solve_fields(sc, reach_kernel, safety_kernel)
    omega = _default_omega(sc)
    sections: dict = {}
    caveats: list[str] = []
    ok = True

    agreement = []
    for x0 in sc.x0s:
        dp_reach = dp.eval_field(fields["reach_avoid"], x0)
        dp_live = 1.0 - dp.eval_field(fields["safety_exit"], x0)
        est_live = mc.estimate_liveness(sc.system, sc.regions, x0, sc.mc_horizon,
                                        sc.mc_trials, sc.mc_delta, sc.mc_seed)
        est_reach = mc.estimate_reach_avoid(sc.system, sc.regions, x0, sc.mc_horizon,
                                            sc.mc_trials, sc.mc_delta, sc.mc_seed)
        slack_reach = _stay_prob_after(reach_kernel, x0, sc.mc_horizon)
        slack_live = _stay_prob_after(safety_kernel, x0, sc.mc_horizon)
        reach_ok = abs(dp_reach - est_reach.p_hat) <= est_reach.half_width + slack_reach + 1e-9
        live_ok = abs(dp_live - est_live.p_hat) <= est_live.half_width + slack_live + 1e-9
        ok = ok and reach_ok and live_ok
        agreement.append({
            "x0": x0.tolist(),
            "reach_avoid": {"dp": dp_reach, "mc": est_reach.p_hat,
                            "half_width": est_reach.half_width,
                            "truncation_slack": slack_reach, "agree": reach_ok},
            "liveness": {"dp": dp_live, "mc": est_live.p_hat,
                         "half_width": est_live.half_width,
                         "truncation_slack": slack_live, "agree": live_ok},
        })
    sections["dp_vs_mc"] = agreement

    verdicts = _threshold_verdicts(sc, fields)
    sections["thresholds"] = verdicts
    ok = ok and all(entry["certified"] for entry in verdicts.values())

    a1 = fields["assumption1"]
    sections["assumption1"] = {"holds": a1.holds, "sup_stay_probability": a1.sup_stay_prob}

    extracted = _extract_all(sc, fields, omega)
    cert_section = {}
    for kind, (cond, cert) in extracted.items():
        points = _check_points(sc, cert)
        rep = cert_mod.check_condition(sc.system, sc.regions, cert, cond,
                                       sc.x0s[0], points, sc.tolerance)
        ok = ok and rep.passed
        cert_section[kind] = {
            "threshold": cond.epsilon,
            "check": "pass" if rep.passed else "FAIL",
            "min_slack": rep.min_slack,
            "points": rep.n_points,
            "method": "pointwise-check",
        }
        if out_dir:
            path = out_dir / f"certificate_{kind}.yaml"
            cert_mod.save_certificate(path, cond, cert)
            cert_section[kind]["file"] = str(path)
    sections["certificates"] = cert_section
    if not a1.holds:
        caveats.append("undiscounted reach-avoid certificate skipped: "
                       "finite-time-exit assumption fails")

    try:
        synth_report = _cmd_synthesize(sc, out_dir, KIND_RA_LOWER_A1)
        sections["synthesis"] = synth_report.sections["synthesis"]
        ok = ok and synth_report.passed
    except synth.SynthesisInfeasibleError as exc:
        sections["synthesis"] = {"status": "infeasible", "detail": str(exc)}

    caveats.append("certificate checks are pointwise: validated on the listed "
                   "point sets, not proven over all states")
    if sc.warnings:
        caveats.extend(sc.warnings)
    return Report("report-all", sc.name, sections, caveats, passed=ok)


def run(command: str, scenario: Scenario, certificate: str | None = None,
        condition: str | None = None, out_dir: str | None = None) -> Report:
    """Dispatch one command against a loaded scenario."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    if condition is not None and condition not in ALL_KINDS:
        raise ScenarioError([f"unknown condition kind {condition!r}, "
                             f"expected one of {', '.join(ALL_KINDS)}"])
    out_path = None
    if out_dir:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    if command == "simulate":
        return _cmd_simulate(scenario, out_path)
    if command == "solve":
        return _cmd_solve(scenario, out_path)
    if command == "estimate":
        return _cmd_estimate(scenario)
    if command == "assumption1":
        return _cmd_assumption1(scenario)
    if command == "extract":
        return _cmd_extract(scenario, out_path, condition)
    if command == "verify":
        return _cmd_verify(scenario, certificate, condition)
    if command == "synthesize":
        return _cmd_synthesize(scenario, out_path, condition)
    return _cmd_report_all(scenario, out_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stochcert",
        description="Verify safety and reach-avoid properties of stochastic "
                    "discrete-time systems.",
    )
    parser.add_argument("--scenario", required=True, help="scenario YAML file")
    parser.add_argument("--command", required=True, choices=COMMANDS)
    parser.add_argument("--certificate", help="certificate file (verify)")
    parser.add_argument("--condition", help="condition kind "
                        f"({', '.join(ALL_KINDS)})")
    parser.add_argument("--out", help="directory for CSV/report/certificate output")
    parser.add_argument("--threads", type=int, default=1,
                        help="reserved; computation is vectorized in-process")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout")
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.scenario)
        report = run(args.command, scenario, certificate=args.certificate,
                     condition=args.condition, out_dir=args.out)
    except ScenarioError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (dp.GridTooSmallError, dp.SingularSystemError, EvalError, CertificateError,
            synth.SimplexStalledError, synth.SynthesisInfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    if args.out:
        out_path = Path(args.out)
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "report.txt").write_text(report.to_text())
        (out_path / "report.json").write_text(report.to_json())
    if not args.quiet:
        print(report.to_text(), end="")

    if report.passed:
        return EXIT_OK
    return EXIT_REJECTED if args.command == "verify" else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
