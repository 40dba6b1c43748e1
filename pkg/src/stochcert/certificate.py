"""Barrier-like certificate functions: checking, extraction, serialization.

A certificate is a real-valued function (grid field, polynomial, or constant)
paired with one of six condition kinds.  Conditions are finite systems of
pointwise inequalities; checking evaluates every clause on a finite classified
point set and reports the worst slack per clause, so a pass means "validated
on N points", not a proof over all states.  Extraction builds certificates
from solved value fields: the value function itself satisfies its condition
with equality, so rendering it faithfully yields a certificate at the
tightest threshold the field supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from . import dp, expr as expr_mod, model as model_mod
from .dp import Grid, ValueField, eval_field_batch
from .model import SystemModel
from .regions import Box, RegionSpec, StateClass, classify_batch

__all__ = [
    "GridCert",
    "PolyCert",
    "ConstCert",
    "CertFunction",
    "Condition",
    "ClauseResult",
    "CheckReport",
    "CertificateError",
    "KIND_SAFETY_LOWER",
    "KIND_UNSAFE_REACH_UPPER",
    "KIND_RA_LOWER_A1",
    "KIND_RA_LOWER_DISCOUNTED",
    "KIND_LIVENESS_UPPER_DISCOUNTED",
    "KIND_RA_LOWER_PAIR",
    "ALL_KINDS",
    "eval_cert",
    "eval_cert_batch",
    "check_condition",
    "extract_certificate",
    "best_threshold",
    "build_check_points",
    "save_certificate",
    "load_certificate",
]

KIND_SAFETY_LOWER = "safety_lower"
KIND_UNSAFE_REACH_UPPER = "unsafe_reach_upper"
KIND_RA_LOWER_A1 = "ra_lower_a1"
KIND_RA_LOWER_DISCOUNTED = "ra_lower_discounted"
KIND_LIVENESS_UPPER_DISCOUNTED = "liveness_upper_discounted"
KIND_RA_LOWER_PAIR = "ra_lower_pair"

ALL_KINDS = (
    KIND_SAFETY_LOWER,
    KIND_UNSAFE_REACH_UPPER,
    KIND_RA_LOWER_A1,
    KIND_RA_LOWER_DISCOUNTED,
    KIND_LIVENESS_UPPER_DISCOUNTED,
    KIND_RA_LOWER_PAIR,
)

# kinds whose threshold clause reads v(x0) >= eps
LOWER_KINDS = (
    KIND_RA_LOWER_A1,
    KIND_RA_LOWER_DISCOUNTED,
    KIND_LIVENESS_UPPER_DISCOUNTED,
    KIND_RA_LOWER_PAIR,
)


class CertificateError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridCert:
    """Grid-interpolated certificate function.

    Extracted certificates additionally pin the indicator regions of their
    source Bellman equation (``target_value`` on X_r, ``unsafe_value`` off X):
    the value functions satisfy those identities exactly, and rendering them
    through plain interpolation would corrupt the function near region
    boundaries that do not align with the node lattice.
    """

    fld: ValueField
    regions: RegionSpec | None = None
    target_value: float | None = None
    unsafe_value: float | None = None


@dataclass(frozen=True)
class PolyCert:
    """Polynomial sum_j coeffs[j] * prod_d x_d^exponents[j][d]."""

    exponents: tuple[tuple[int, ...], ...]
    coeffs: tuple[float, ...]

    def __post_init__(self):
        exps = tuple(tuple(int(e) for e in row) for row in self.exponents)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(set(exps)) != len(exps):
            raise ValueError("duplicate monomials in polynomial certificate")
        if len(self.coeffs) != len(exps):
            raise ValueError("coefficient count must match the monomial count")


@dataclass(frozen=True)
class ConstCert:
    value: float


CertFunction = GridCert | PolyCert | ConstCert


def eval_cert(cert: CertFunction, x) -> float:
    return float(eval_cert_batch(cert, np.atleast_2d(np.asarray(x, dtype=float)))[0])


def eval_cert_batch(cert: CertFunction, xs: np.ndarray) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if isinstance(cert, GridCert):
        out = eval_field_batch(cert.fld, xs)
        if cert.regions is not None:
            codes = classify_batch(cert.regions, xs)
            if cert.target_value is not None:
                out[codes == int(StateClass.TARGET)] = cert.target_value
            if cert.unsafe_value is not None:
                out[codes == int(StateClass.UNSAFE)] = cert.unsafe_value
        return out
    if isinstance(cert, ConstCert):
        return np.full(xs.shape[0], cert.value)
    if isinstance(cert, PolyCert):
        exps = np.asarray(cert.exponents, dtype=float)
        coeffs = np.asarray(cert.coeffs)
        with np.errstate(all="ignore"):
            mono = np.prod(xs[:, None, :] ** exps[None, :, :], axis=2)
            return mono @ coeffs
    raise TypeError(f"not a certificate function: {cert!r}")


@dataclass(frozen=True)
class Condition:
    """A condition kind with its parameters; ``w`` is the companion function
    of the pair kind and ``omega`` its reachable-superset box."""

    kind: str
    epsilon: float
    gamma: float | None = None
    omega: Box | None = None
    w: CertFunction | None = None

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        needs_gamma = self.kind in (KIND_RA_LOWER_DISCOUNTED, KIND_LIVENESS_UPPER_DISCOUNTED)
        if needs_gamma and (self.gamma is None or not 0.0 < self.gamma < 1.0):
            raise ValueError(f"{self.kind} needs gamma in (0, 1)")
        if self.kind == KIND_RA_LOWER_PAIR and self.w is None:
            raise ValueError("pair condition needs the companion function w")


@dataclass
class ClauseResult:
    name: str
    n_points: int
    min_slack: float  # negative = violation
    worst_point: np.ndarray | None


@dataclass
class CheckReport:
    passed: bool
    tolerance: float
    clauses: list[ClauseResult]
    witnesses: list[tuple[np.ndarray, str, float, float]]  # point, clause, lhs, rhs
    n_points: int
    caveats: list[str] = field(default_factory=list)

    @property
    def min_slack(self) -> float:
        return min((c.min_slack for c in self.clauses), default=float("inf"))


def _expected_next(system: SystemModel, cert: CertFunction, xs: np.ndarray,
                   ) -> tuple[np.ndarray, np.ndarray]:
    """E[cert(f(x, th))] over the atoms, plus a mask of rows whose image
    failed to evaluate."""
    xs = np.atleast_2d(xs)
    total = np.zeros(xs.shape[0])
    bad = np.zeros(xs.shape[0], dtype=bool)
    for atom, p in zip(system.dist.atoms, system.dist.probs):
        ths = np.broadcast_to(atom, (xs.shape[0], system.m))
        ys = model_mod.step_batch(system, xs, ths, strict=False)
        row_bad = ~np.isfinite(ys).all(axis=1)
        bad |= row_bad
        safe_ys = np.where(row_bad[:, None], 0.0, ys)
        total += float(p) * eval_cert_batch(cert, safe_ys)
    total = np.where(bad, np.nan, total)
    return total, bad


class _Checker:
    def __init__(self, tolerance: float):
        self.tolerance = tolerance
        self.clauses: list[ClauseResult] = []
        self.witnesses: list = []

    def add(self, name: str, points: np.ndarray, lhs: np.ndarray, rhs: np.ndarray):
        """Record clause lhs <= rhs on the given points; non-finite sides count
        as violations (evaluation errors at that point)."""
        lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        if points.shape[0] == 0:
            self.clauses.append(ClauseResult(name, 0, float("inf"), None))
            return
        slack = rhs - lhs
        slack = np.where(np.isfinite(slack), slack, -np.inf)
        order = np.argsort(slack)
        worst = int(order[0])
        self.clauses.append(
            ClauseResult(name, points.shape[0], float(slack[worst]), points[worst].copy())
        )
        for i in order[:10]:
            if slack[i] < -self.tolerance:
                self.witnesses.append(
                    (points[i].copy(), name, float(lhs[i]), float(rhs[i]))
                )

    def report(self, n_points: int, caveats: list[str]) -> CheckReport:
        passed = all(c.min_slack >= -self.tolerance for c in self.clauses)
        return CheckReport(
            passed=passed,
            tolerance=self.tolerance,
            clauses=self.clauses,
            witnesses=self.witnesses,
            n_points=n_points,
            caveats=caveats,
        )


def check_condition(
    system: SystemModel,
    regions: RegionSpec,
    cert: CertFunction,
    cond: Condition,
    x0,
    points: np.ndarray,
    tolerance: float = 1e-6,
    _skip_threshold: bool = False,
) -> CheckReport:
    """Evaluate every clause of ``cond`` for ``cert`` on the classified point
    set plus the initial state(s).

    ``x0`` may be a single state or a list of states (initial-set variant:
    the threshold clause must hold at each).  One-step expectations are exact
    finite sums over the disturbance atoms.
    """
    x0s = np.atleast_2d(np.asarray(x0, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    caveats = [f"validated on {points.shape[0]} points plus {x0s.shape[0]} initial state(s)"]
    kind = cond.kind
    if kind == KIND_RA_LOWER_PAIR and cond.omega is not None:
        points = points[cond.omega.contains(points)]
    codes = classify_batch(regions, points)
    tgt = points[codes == int(StateClass.TARGET)]
    saf = points[codes == int(StateClass.SAFE)]
    uns = points[codes == int(StateClass.UNSAFE)]
    in_x = points[codes != int(StateClass.UNSAFE)]

    chk = _Checker(tolerance)
    v_x0 = eval_cert_batch(cert, x0s)
    v_tgt = eval_cert_batch(cert, tgt)
    v_saf = eval_cert_batch(cert, saf)
    v_uns = eval_cert_batch(cert, uns)

    if kind == KIND_SAFETY_LOWER:
        if not _skip_threshold:
            chk.add("initial: v(x0) <= 1 - eps", x0s, v_x0, np.full(len(x0s), 1.0 - cond.epsilon))
        e_x, _ = _expected_next(system, cert, in_x)
        v_in_x = eval_cert_batch(cert, in_x)
        chk.add("on X: E[v o f] <= v", in_x, e_x, v_in_x)
        chk.add("off X: v >= 1", uns, np.ones(len(uns)), v_uns)
        v_all = eval_cert_batch(cert, points)
        chk.add("everywhere: v >= 0", points, np.zeros(len(points)), v_all)
    elif kind == KIND_UNSAFE_REACH_UPPER:
        if not _skip_threshold:
            chk.add("initial: v(x0) <= eps", x0s, v_x0, np.full(len(x0s), cond.epsilon))
        e_s, _ = _expected_next(system, cert, saf)
        chk.add("on X\\Xr: E[v o f] <= v", saf, e_s, v_saf)
        chk.add("on Xr: v >= 1", tgt, np.ones(len(tgt)), v_tgt)
        chk.add("off X: v >= 0", uns, np.zeros(len(uns)), v_uns)
    elif kind == KIND_RA_LOWER_A1:
        if not _skip_threshold:
            chk.add("initial: v(x0) >= eps", x0s, np.full(len(x0s), cond.epsilon), v_x0)
        e_s, _ = _expected_next(system, cert, saf)
        chk.add("on X\\Xr: v <= E[v o f]", saf, v_saf, e_s)
        chk.add("on Xr: v <= 1", tgt, v_tgt, np.ones(len(tgt)))
        chk.add("off X: v <= 0", uns, v_uns, np.zeros(len(uns)))
    elif kind == KIND_RA_LOWER_DISCOUNTED:
        if not _skip_threshold:
            chk.add("initial: v(x0) >= eps", x0s, np.full(len(x0s), cond.epsilon), v_x0)
        e_s, _ = _expected_next(system, cert, saf)
        chk.add("on X\\Xr: v <= gamma E[v o f]", saf, v_saf, cond.gamma * e_s)
        chk.add("on Xr: v <= 1", tgt, v_tgt, np.ones(len(tgt)))
        chk.add("off X: v <= 0", uns, v_uns, np.zeros(len(uns)))
        if x0s.shape[0] > 1:
            caveats.append(
                "initial-set variant of the discounted condition: the check is "
                "pointwise but completeness over a whole initial set is not "
                "guaranteed (the discounted value need not converge uniformly)"
            )
    elif kind == KIND_LIVENESS_UPPER_DISCOUNTED:
        if not _skip_threshold:
            chk.add("initial: v(x0) >= eps", x0s, np.full(len(x0s), cond.epsilon), v_x0)
        e_x, _ = _expected_next(system, cert, in_x)
        v_in_x = eval_cert_batch(cert, in_x)
        chk.add("on X: v <= gamma E[v o f]", in_x, v_in_x, cond.gamma * e_x)
        chk.add("off X: v <= 1", uns, v_uns, np.ones(len(uns)))
    elif kind == KIND_RA_LOWER_PAIR:
        if not _skip_threshold:
            chk.add("initial: v(x0) >= eps", x0s, np.full(len(x0s), cond.epsilon), v_x0)
        e_v, _ = _expected_next(system, cert, saf)
        chk.add("on X\\Xr: v <= E[v o f]", saf, v_saf, e_v)
        e_w, _ = _expected_next(system, cond.w, saf)
        w_saf = eval_cert_batch(cond.w, saf)
        chk.add("on X\\Xr: v <= E[w o f] - w", saf, v_saf, e_w - w_saf)
        chk.add("on Xr: v <= 1", tgt, v_tgt, np.ones(len(tgt)))
        chk.add("on Omega\\X: v <= 0", uns, v_uns, np.zeros(len(uns)))
    else:  # pragma: no cover - guarded by Condition validation
        raise ValueError(f"unknown condition kind {kind!r}")

    return chk.report(points.shape[0], caveats)


def _as_grid_cert(fld: ValueField, outside_default: float, regions: RegionSpec,
                  target_value: float | None, unsafe_value: float | None) -> GridCert:
    return GridCert(
        ValueField(fld.values.copy(), fld.grid, outside_default),
        regions=regions,
        target_value=target_value,
        unsafe_value=unsafe_value,
    )


def extract_certificate(fields: dict, kind: str):
    """Build a certificate from solved value fields.

    ``fields`` maps objective names to solved ValueFields: ``safety_exit``,
    ``reach_avoid``, ``discounted`` (reach-avoid, with ``gamma``), and
    ``discounted_exit`` (safety kernel); ``regions`` is the RegionSpec the
    fields were solved against, and ``assumption1`` carries the
    finite-time-exit check needed to license the undiscounted reach-avoid
    extraction.  Returns the certificate, or (v, w) for the pair kind.

    The grid certificates pin the source equation's indicator regions (value
    1 on the target / off X as appropriate, 0 off X for the reach-style
    bounds) and use the matching outside-box default, so they render the
    solved value function exactly wherever it is determined by an indicator.
    """
    regions = fields["regions"]
    if kind == KIND_SAFETY_LOWER:
        return _as_grid_cert(fields["safety_exit"], 1.0, regions,
                             target_value=None, unsafe_value=1.0)
    if kind == KIND_UNSAFE_REACH_UPPER:
        return _as_grid_cert(fields["reach_avoid"], 1.0, regions,
                             target_value=1.0, unsafe_value=0.0)
    if kind == KIND_RA_LOWER_A1:
        a1 = fields.get("assumption1")
        if a1 is None or not a1.holds:
            sup = "unknown" if a1 is None else f"{a1.sup_stay_prob:.6g}"
            raise CertificateError(
                "refusing the undiscounted reach-avoid extraction: the "
                f"finite-time-exit assumption fails (sup stay-probability {sup})"
            )
        return _as_grid_cert(fields["reach_avoid"], 0.0, regions,
                             target_value=1.0, unsafe_value=0.0)
    if kind == KIND_RA_LOWER_DISCOUNTED:
        return _as_grid_cert(fields["discounted"], 0.0, regions,
                             target_value=1.0, unsafe_value=0.0)
    if kind == KIND_LIVENESS_UPPER_DISCOUNTED:
        return _as_grid_cert(fields["discounted_exit"], 1.0, regions,
                             target_value=None, unsafe_value=1.0)
    if kind == KIND_RA_LOWER_PAIR:
        gamma0 = float(fields["gamma"])
        if not 0.0 < gamma0 < 1.0:
            raise CertificateError("pair extraction needs gamma in (0, 1)")
        fld = fields["discounted"]
        v = _as_grid_cert(fld, 0.0, regions, target_value=1.0, unsafe_value=0.0)
        gamma1 = gamma0 / (1.0 - gamma0)  # gamma1/(1+gamma1) equals gamma0
        w = GridCert(ValueField(gamma1 * fld.values, fld.grid, 0.0),
                     regions=regions, target_value=gamma1, unsafe_value=0.0)
        return v, w
    raise ValueError(f"unknown condition kind {kind!r}")


def best_threshold(
    system: SystemModel,
    regions: RegionSpec,
    cert: CertFunction,
    kind: str,
    x0,
    points: np.ndarray,
    tolerance: float = 1e-6,
    gamma: float | None = None,
    omega: Box | None = None,
    w: CertFunction | None = None,
) -> float:
    """Extremal threshold making the initial-state clause tight, provided the
    structural clauses pass: 1 - v(x0) for the safety lower bound, v(x0)
    otherwise (min over multiple initial states for lower-bound kinds, max for
    upper-bound kinds)."""
    probe = Condition(kind, 0.0, gamma=gamma, omega=omega, w=w)
    report = check_condition(system, regions, cert, probe, x0, points,
                             tolerance, _skip_threshold=True)
    if not report.passed:
        failing = [c.name for c in report.clauses if c.min_slack < -tolerance]
        raise CertificateError(f"certificate fails structural clauses: {failing}")
    values = eval_cert_batch(cert, np.atleast_2d(np.asarray(x0, dtype=float)))
    if kind == KIND_SAFETY_LOWER:
        return float(1.0 - values.max())
    if kind == KIND_UNSAFE_REACH_UPPER:
        return float(values.max())
    return float(values.min())


def build_check_points(
    grid: Grid,
    omega: Box,
    n_random: int,
    seed: int,
    interior_random: bool = True,
) -> np.ndarray:
    """Grid nodes plus random points over the reachable superset and a halo
    just outside the grid box.

    With ``interior_random=False`` random points strictly inside the grid box
    are dropped: for grid-form certificates those points only re-measure
    interpolation error between nodes, while the exterior samples exercise the
    outside-default clauses.
    """
    parts = [grid.nodes()]
    if n_random > 0:
        rng = np.random.default_rng(seed)
        cand = np.vstack([
            omega.sample(n_random, rng),
            grid.box.inflate(0.1).sample(max(n_random // 4, 8), rng),
        ])
        if not interior_random:
            strictly_inside = np.all(
                (cand > grid.lower) & (cand < grid.upper), axis=1
            )
            cand = cand[~strictly_inside]
        parts.append(cand)
    return np.vstack(parts)


# serialization --------------------------------------------------------


def _cert_to_dict(cert: CertFunction) -> dict:
    if isinstance(cert, GridCert):
        doc = {
            "representation": "grid",
            "lower": cert.fld.grid.lower.tolist(),
            "upper": cert.fld.grid.upper.tolist(),
            "cells": cert.fld.grid.cells.tolist(),
            "outside_default": float(cert.fld.outside_default),
            "values": cert.fld.values.tolist(),
        }
        if cert.regions is not None:
            doc["region_pins"] = {
                "safe": expr_mod.pretty(cert.regions.safe),
                "target": expr_mod.pretty(cert.regions.target),
                "target_value": cert.target_value,
                "unsafe_value": cert.unsafe_value,
            }
        return doc
    if isinstance(cert, PolyCert):
        return {
            "representation": "polynomial",
            "exponents": [list(e) for e in cert.exponents],
            "coefficients": list(cert.coeffs),
        }
    if isinstance(cert, ConstCert):
        return {"representation": "constant", "value": float(cert.value)}
    raise TypeError(f"not a certificate function: {cert!r}")


def _cert_from_dict(data: dict) -> CertFunction:
    rep = data.get("representation")
    if rep == "grid":
        grid = dp.build_grid(data["lower"], data["upper"], data["cells"])
        fld = ValueField(np.asarray(data["values"], dtype=float), grid,
                         float(data.get("outside_default", 0.0)))
        pins = data.get("region_pins")
        if pins:
            regions = RegionSpec(
                safe=expr_mod.parse_predicate(pins["safe"], grid.n),
                target=expr_mod.parse_predicate(pins["target"], grid.n),
            )
            tv = pins.get("target_value")
            uv = pins.get("unsafe_value")
            return GridCert(fld, regions=regions,
                            target_value=None if tv is None else float(tv),
                            unsafe_value=None if uv is None else float(uv))
        return GridCert(fld)
    if rep == "polynomial":
        return PolyCert(tuple(tuple(e) for e in data["exponents"]),
                        tuple(data["coefficients"]))
    if rep == "constant":
        return ConstCert(float(data["value"]))
    raise ValueError(f"unknown certificate representation {rep!r}")


def save_certificate(path, cond: Condition, cert: CertFunction) -> None:
    """Write a certificate file: condition header, then the function body
    (and the companion w for the pair kind)."""
    doc = {
        "kind": cond.kind,
        "epsilon": float(cond.epsilon),
        "gamma": None if cond.gamma is None else float(cond.gamma),
        "function": _cert_to_dict(cert),
    }
    if cond.omega is not None:
        doc["omega"] = {"lower": cond.omega.lower.tolist(),
                        "upper": cond.omega.upper.tolist()}
    if cond.w is not None:
        doc["pair_w"] = _cert_to_dict(cond.w)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_certificate(path) -> tuple[Condition, CertFunction]:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    cert = _cert_from_dict(doc["function"])
    omega = None
    if "omega" in doc:
        omega = Box(np.asarray(doc["omega"]["lower"]), np.asarray(doc["omega"]["upper"]))
    w = _cert_from_dict(doc["pair_w"]) if "pair_w" in doc else None
    cond = Condition(
        kind=doc["kind"],
        epsilon=float(doc["epsilon"]),
        gamma=doc.get("gamma"),
        omega=omega,
        w=w,
    )
    return cond, cert
