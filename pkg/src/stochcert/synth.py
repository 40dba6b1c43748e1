"""Certificate synthesis: a polynomial template optimized by linear programming.

Every clause of the barrier-like conditions is linear in the template
coefficients (one-step expectations are finite sums of evaluations), so
maximizing the threshold at the initial state over a sampled point set is a
plain LP.  The LP is solved by an embedded dense two-phase primal simplex
with Bland's anti-cycling rule; coefficient bounds keep it bounded.

Sampled constraints are optimistic by construction, so every synthesized
certificate is re-validated on an independent, denser point set before being
reported; a certificate that only holds on its own samples is returned with
status ``sample_optimistic`` and the violation witnesses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .certificate import (
    KIND_LIVENESS_UPPER_DISCOUNTED,
    KIND_RA_LOWER_A1,
    KIND_RA_LOWER_DISCOUNTED,
    KIND_RA_LOWER_PAIR,
    KIND_SAFETY_LOWER,
    KIND_UNSAFE_REACH_UPPER,
    CheckReport,
    Condition,
    PolyCert,
    check_condition,
)
from .model import SystemModel
from .regions import Box, RegionSpec, StateClass, classify_batch

__all__ = [
    "LpProblem",
    "LpSolution",
    "SimplexStalledError",
    "SynthesisInfeasibleError",
    "simplex_solve",
    "lp_to_text",
    "Template",
    "SynthesisResult",
    "synthesize",
]

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-7


class SimplexStalledError(RuntimeError):
    def __init__(self, iterations: int):
        super().__init__(f"simplex numerically stalled after {iterations} iterations")
        self.iterations = iterations


class SynthesisInfeasibleError(RuntimeError):
    pass


@dataclass
class LpProblem:
    """max (or min) objective . x subject to rows and finite variable bounds.

    Rows are sparse: (coeffs dict {var: value}, sense '<='|'>='|'==', rhs).
    """

    objective: np.ndarray
    rows: list[tuple[dict[int, float], str, float]]
    lower: np.ndarray
    upper: np.ndarray
    maximize: bool = True

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.objective.shape[0]
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the variable count")
        if not (np.isfinite(self.lower).all() and np.isfinite(self.upper).all()):
            raise ValueError("all variable bounds must be finite")
        if np.any(self.upper < self.lower):
            raise ValueError("need upper >= lower bounds")
        for coeffs, sense, _ in self.rows:
            if sense not in ("<=", ">=", "=="):
                raise ValueError(f"unknown row sense {sense!r}")
            for j in coeffs:
                if not 0 <= j < n:
                    raise ValueError(f"row references unknown variable {j}")

    @property
    def n_vars(self) -> int:
        return self.objective.shape[0]


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None
    objective: float | None
    iterations: int


def _pivot(T: np.ndarray, b: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    piv = T[row, col]
    T[row] /= piv
    b[row] /= piv
    for i in range(T.shape[0]):
        if i != row and abs(T[i, col]) > 0.0:
            factor = T[i, col]
            T[i] -= factor * T[row]
            b[i] -= factor * b[row]
    basis[row] = col


def _run_phase(T, b, basis, c, allowed, max_iter, start_iter):
    """Maximize c.z over the current tableau with Bland's rule.

    Returns ('optimal'|'unbounded', iterations)."""
    iters = start_iter
    while True:
        iters += 1
        if iters > max_iter:
            raise SimplexStalledError(iters)
        reduced = c - c[basis] @ T
        reduced[basis] = 0.0
        candidates = np.flatnonzero(allowed & (reduced > _PIVOT_TOL))
        if candidates.size == 0:
            return "optimal", iters
        col = int(candidates[0])  # Bland: smallest eligible index enters
        positive = np.flatnonzero(T[:, col] > _PIVOT_TOL)
        if positive.size == 0:
            return "unbounded", iters
        ratios = b[positive] / T[positive, col]
        best = ratios.min()
        ties = positive[np.flatnonzero(ratios <= best + 1e-15)]
        row = int(ties[np.argmin(basis[ties])])  # Bland: smallest basic index leaves
        _pivot(T, b, basis, row, col)


def simplex_solve(problem: LpProblem, max_iter: int | None = None) -> LpSolution:
    """Two-phase dense primal simplex.

    Variables are shifted to be non-negative; upper bounds become explicit
    rows.  Optimal solutions are verified to satisfy every row within 1e-7.
    """
    n = problem.n_vars
    shift = problem.lower
    span = problem.upper - problem.lower
    sign = 1.0 if problem.maximize else -1.0

    rows: list[tuple[np.ndarray, str, float]] = []
    for coeffs, sense, rhs in problem.rows:
        a = np.zeros(n)
        for j, val in coeffs.items():
            a[j] = val
        rows.append((a, sense, rhs - float(a @ shift)))
    for j in range(n):
        a = np.zeros(n)
        a[j] = 1.0
        rows.append((a, "<=", float(span[j])))

    m = len(rows)
    n_slack = sum(1 for _, sense, _ in rows if sense in ("<=", ">="))
    slack_map: dict[int, int] = {}
    art_map: dict[int, int] = {}
    A = np.zeros((m, n + n_slack))
    b = np.zeros(m)
    slack_at = 0
    need_art = []
    for i, (a, sense, rhs) in enumerate(rows):
        if rhs < 0:
            a, rhs = -a, -rhs
            sense = {"<=": ">=", ">=": "<=", "==": "=="}[sense]
        A[i, :n] = a
        b[i] = rhs
        if sense == "<=":
            A[i, n + slack_at] = 1.0
            slack_map[i] = n + slack_at
            slack_at += 1
        elif sense == ">=":
            A[i, n + slack_at] = -1.0
            slack_at += 1
            need_art.append(i)
        else:
            need_art.append(i)
    n_art = len(need_art)
    T = np.hstack([A, np.zeros((m, n_art))])
    art_cols = []
    for k, i in enumerate(need_art):
        T[i, n + n_slack + k] = 1.0
        art_map[i] = n + n_slack + k
        art_cols.append(n + n_slack + k)
    ncols = T.shape[1]
    basis = np.array(
        [slack_map.get(i, art_map.get(i)) for i in range(m)], dtype=np.int64
    )
    if max_iter is None:
        max_iter = 20000 + 20 * (m + ncols)

    is_art = np.zeros(ncols, dtype=bool)
    is_art[art_cols] = True
    iters = 0
    if n_art:
        c1 = np.where(is_art, -1.0, 0.0)
        status, iters = _run_phase(T, b, basis, c1, ~is_art, max_iter, iters)
        if status != "optimal" or float(-c1[basis] @ b) > _FEAS_TOL:
            return LpSolution("infeasible", None, None, iters)
        # drive artificials (now at zero) out of the basis where possible
        for i in range(m):
            if is_art[basis[i]]:
                pivots = np.flatnonzero(~is_art[: ncols] & (np.abs(T[i]) > _PIVOT_TOL))
                if pivots.size:
                    _pivot(T, b, basis, i, int(pivots[0]))

    c2 = np.zeros(ncols)
    c2[:n] = sign * problem.objective
    status, iters = _run_phase(T, b, basis, c2, ~is_art, max_iter, iters)
    if status == "unbounded":
        return LpSolution("unbounded", None, None, iters)

    z = np.zeros(ncols)
    z[basis] = b
    x = z[:n] + shift
    objective = float(problem.objective @ x)

    for coeffs, sense, rhs in problem.rows:
        lhs = sum(val * x[j] for j, val in coeffs.items())
        ok = (
            lhs <= rhs + _FEAS_TOL if sense == "<="
            else lhs >= rhs - _FEAS_TOL if sense == ">="
            else abs(lhs - rhs) <= _FEAS_TOL
        )
        if not ok:
            raise SimplexStalledError(iters)
    return LpSolution("optimal", x, objective, iters)


def lp_to_text(problem: LpProblem) -> str:
    """Row-per-constraint dump for external cross-checking."""
    lines = []
    goal = "max" if problem.maximize else "min"
    obj = " + ".join(f"{c:g} x{j}" for j, c in enumerate(problem.objective) if c != 0.0)
    lines.append(f"{goal}: {obj or '0'}")
    for coeffs, sense, rhs in problem.rows:
        lhs = " + ".join(f"{v:g} x{j}" for j, v in sorted(coeffs.items()) if v != 0.0)
        lines.append(f"{lhs or '0'} {sense} {rhs:g}")
    for j in range(problem.n_vars):
        lines.append(f"{problem.lower[j]:g} <= x{j} <= {problem.upper[j]:g}")
    return "\n".join(lines) + "\n"


# templates ------------------------------------------------------------


def _monomials_up_to(n: int, degree: int) -> tuple[tuple[int, ...], ...]:
    out = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), total):
            exp = [0] * n
            for d in combo:
                exp[d] += 1
            out.append(tuple(exp))
    return tuple(dict.fromkeys(out))


@dataclass(frozen=True)
class Template:
    """All monomials up to a total degree, coefficients confined to [-B, B]."""

    n: int
    degree: int
    bound: float = 1e3
    exponents: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        if self.degree < 0 or self.n < 1:
            raise ValueError("need degree >= 0 and at least one variable")
        if not np.isfinite(self.bound) or self.bound < 0:
            raise ValueError("coefficient bound must be finite and non-negative")
        exps = self.exponents or _monomials_up_to(self.n, self.degree)
        if (0,) * self.n not in exps:
            raise ValueError("template must include the constant monomial")
        if len(set(exps)) != len(exps):
            raise ValueError("duplicate monomials in template")
        object.__setattr__(self, "exponents", tuple(exps))

    @property
    def size(self) -> int:
        return len(self.exponents)

    def design_matrix(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        exps = np.asarray(self.exponents, dtype=float)
        return np.prod(xs[:, None, :] ** exps[None, :, :], axis=2)


@dataclass
class SynthesisResult:
    cert: PolyCert
    threshold: float
    status: str  # validated | sample_optimistic
    report: CheckReport
    lp: LpSolution
    problem: LpProblem


def _expected_design(system: SystemModel, template: Template, xs: np.ndarray) -> np.ndarray:
    """E over atoms of the monomial design matrix at the one-step images."""
    total = np.zeros((xs.shape[0], template.size))
    for atom, p in zip(system.dist.atoms, system.dist.probs):
        ths = np.broadcast_to(atom, (xs.shape[0], system.m))
        ys = model_mod.step_batch(system, xs, ths, strict=True)
        total += float(p) * template.design_matrix(ys)
    return total


def _dense_rows(mat: np.ndarray, sense: str, rhs: float):
    return [
        ({j: float(v) for j, v in enumerate(row) if v != 0.0}, sense, rhs)
        for row in mat
    ]


def synthesize(
    system: SystemModel,
    regions: RegionSpec,
    kind: str,
    template: Template,
    points: np.ndarray,
    x0,
    tolerance: float = 1e-6,
    gamma: float | None = None,
    margin: float = 0.0,
    revalidation_points: np.ndarray | None = None,
    revalidation_seed: int = 17,
) -> SynthesisResult:
    """Optimize the template against the sampled clauses of ``kind`` and
    re-validate the winner on an independent denser point set.

    ``margin`` tightens the set-membership clauses (v <= 1, v <= 0, ...) in
    the LP only; the expectation clauses stay exact because martingale-like
    certificates meet them with equality and any margin would exclude them.
    The initial state is appended to the sample set so its own structural
    clause constrains the optimum.
    """
    if kind == KIND_RA_LOWER_PAIR:
        raise ValueError("pair-condition synthesis is unsupported; extract the "
                         "pair from a discounted value field instead")
    needs_gamma = kind in (KIND_RA_LOWER_DISCOUNTED, KIND_LIVENESS_UPPER_DISCOUNTED)
    if needs_gamma and (gamma is None or not 0.0 < gamma < 1.0):
        raise ValueError(f"{kind} synthesis needs gamma in (0, 1)")

    x0 = np.asarray(x0, dtype=float).reshape(-1)
    points = np.vstack([np.atleast_2d(np.asarray(points, dtype=float)), x0.reshape(1, -1)])
    codes = classify_batch(regions, points)
    tgt = points[codes == int(StateClass.TARGET)]
    saf = points[codes == int(StateClass.SAFE)]
    uns = points[codes == int(StateClass.UNSAFE)]
    in_x = points[codes != int(StateClass.UNSAFE)]

    J = template.size
    rows: list = []
    # keep the optimum where its threshold is meaningful: lower-bound kinds
    # need v(x0) >= 0, upper-bound kinds v(x0) <= 1, else the tight threshold
    # clamps into [0, 1] and the initial-state clause would fail re-validation
    x0_row = template.design_matrix(x0.reshape(1, -1))
    if kind in (KIND_SAFETY_LOWER, KIND_UNSAFE_REACH_UPPER):
        rows += _dense_rows(x0_row, "<=", 1.0)
    else:
        rows += _dense_rows(x0_row, ">=", 0.0)
    if kind in (KIND_RA_LOWER_A1, KIND_RA_LOWER_DISCOUNTED):
        if saf.shape[0]:
            scale = gamma if kind == KIND_RA_LOWER_DISCOUNTED else 1.0
            rows += _dense_rows(scale * _expected_design(system, template, saf)
                                - template.design_matrix(saf), ">=", 0.0)
        if tgt.shape[0]:
            rows += _dense_rows(template.design_matrix(tgt), "<=", 1.0 - margin)
        if uns.shape[0]:
            rows += _dense_rows(template.design_matrix(uns), "<=", -margin)
        maximize = True
    elif kind == KIND_LIVENESS_UPPER_DISCOUNTED:
        if in_x.shape[0]:
            rows += _dense_rows(gamma * _expected_design(system, template, in_x)
                                - template.design_matrix(in_x), ">=", 0.0)
        if uns.shape[0]:
            rows += _dense_rows(template.design_matrix(uns), "<=", 1.0 - margin)
        maximize = True
    elif kind == KIND_SAFETY_LOWER:
        if in_x.shape[0]:
            rows += _dense_rows(template.design_matrix(in_x)
                                - _expected_design(system, template, in_x), ">=", 0.0)
        if uns.shape[0]:
            rows += _dense_rows(template.design_matrix(uns), ">=", 1.0 + margin)
        rows += _dense_rows(template.design_matrix(points), ">=", margin)
        maximize = False
    elif kind == KIND_UNSAFE_REACH_UPPER:
        if saf.shape[0]:
            rows += _dense_rows(template.design_matrix(saf)
                                - _expected_design(system, template, saf), ">=", 0.0)
        if tgt.shape[0]:
            rows += _dense_rows(template.design_matrix(tgt), ">=", 1.0 + margin)
        if uns.shape[0]:
            rows += _dense_rows(template.design_matrix(uns), ">=", margin)
        maximize = False
    else:
        raise ValueError(f"unknown condition kind {kind!r}")

    problem = LpProblem(
        objective=template.design_matrix(x0.reshape(1, -1))[0],
        rows=rows,
        lower=np.full(J, -template.bound),
        upper=np.full(J, template.bound),
        maximize=maximize,
    )
    solution = simplex_solve(problem)
    if solution.status != "optimal":
        raise SynthesisInfeasibleError(
            f"no certificate in this template at these samples ({solution.status})"
        )

    cert = PolyCert(template.exponents, tuple(solution.x))
    v_x0 = float(solution.objective)
    threshold = 1.0 - v_x0 if kind == KIND_SAFETY_LOWER else v_x0
    threshold = float(np.clip(threshold, 0.0, 1.0))

    if revalidation_points is None:
        rng = np.random.default_rng(revalidation_seed)
        sample_box = Box(points.min(axis=0), points.max(axis=0))
        count = 4 * points.shape[0] + 256
        revalidation_points = sample_box.sample(count, rng)
    cond = Condition(kind, threshold, gamma=gamma)
    report = check_condition(system, regions, cert, cond, x0,
                             revalidation_points, tolerance)
    status = "validated" if report.passed else "sample_optimistic"
    return SynthesisResult(cert, threshold, status, report, solution, problem)
