"""State classification against the safe set X and target set X_r.

Every state falls in exactly one of three classes: target (in X_r),
safe-non-target (in X but not X_r), or unsafe (outside X).  The nesting
X_r within X is validated by sampling, not symbolically.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import expr, model
from .expr import PredicateAst

__all__ = [
    "StateClass",
    "RegionSpec",
    "Box",
    "NestingReport",
    "classify",
    "classify_batch",
    "validate_nesting",
    "compute_omega",
]


class StateClass(IntEnum):
    TARGET = 0
    SAFE = 1  # in X but not X_r
    UNSAFE = 2


@dataclass(frozen=True)
class RegionSpec:
    safe: PredicateAst  # set X
    target: PredicateAst  # set X_r, expected to satisfy X_r within X


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, closed on both sides."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or np.any(upper < lower):
            raise ValueError("invalid box bounds")

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    @property
    def sides(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(count, self.n))

    def inflate(self, fraction: float) -> "Box":
        pad = fraction * self.sides
        return Box(self.lower - pad, self.upper + pad)


def classify(regions: RegionSpec, x) -> StateClass:
    if expr.eval_predicate(regions.target, x):
        return StateClass.TARGET
    if expr.eval_predicate(regions.safe, x):
        return StateClass.SAFE
    return StateClass.UNSAFE


def classify_batch(regions: RegionSpec, xs: np.ndarray) -> np.ndarray:
    """Class codes for a (B, n) batch, as a StateClass-valued int array."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    in_target = expr.eval_predicate_batch(regions.target, xs)
    in_safe = expr.eval_predicate_batch(regions.safe, xs)
    codes = np.full(xs.shape[0], int(StateClass.UNSAFE), dtype=np.int8)
    codes[in_safe] = int(StateClass.SAFE)
    codes[in_target] = int(StateClass.TARGET)
    return codes


@dataclass
class NestingReport:
    passed: bool
    witnesses: np.ndarray  # points with target(x) and not safe(x)
    target_seen: bool  # False = target empty over the samples (vacuous pass)
    n_samples: int

    @property
    def vacuous(self) -> bool:
        return self.passed and not self.target_seen


def validate_nesting(regions: RegionSpec, samples: np.ndarray) -> NestingReport:
    """Check X_r within X over a sample set; witnesses violate the nesting."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("need a nonempty sample set")
    in_target = expr.eval_predicate_batch(regions.target, samples)
    in_safe = expr.eval_predicate_batch(regions.safe, samples)
    bad = in_target & ~in_safe
    return NestingReport(
        passed=not bad.any(),
        witnesses=samples[bad],
        target_seen=bool(in_target.any()),
        n_samples=samples.shape[0],
    )


def compute_omega(
    system: model.SystemModel,
    grid_box: Box,
    regions: RegionSpec,
    samples: np.ndarray,
    pad: float = 0.01,
    transient_only: bool = False,
) -> Box:
    """Sampled-image bounding box covering one-step successors of X, union X.

    ``samples`` are candidate points (grid nodes plus random draws); only
    those classified inside X contribute.  With ``transient_only`` the image
    is taken over X minus X_r only and no padding is applied: that variant
    hugs the set actually visited by reach-avoid trajectories, which is what
    certificate synthesis needs (successors of the target are never visited,
    so constraints there would only exclude valid templates).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    codes = classify_batch(regions, samples)
    if transient_only:
        keep = codes == int(StateClass.SAFE)
        pad = 0.0
    else:
        keep = codes != int(StateClass.UNSAFE)
    inside = samples[keep]
    if inside.shape[0] == 0:
        raise ValueError("no sample points fall inside the safe set")
    lo = inside.min(axis=0)
    hi = inside.max(axis=0)
    for atom in system.dist.atoms:
        ths = np.broadcast_to(atom, (inside.shape[0], system.m))
        images = model.step_batch(system, inside, ths, strict=True)
        lo = np.minimum(lo, images.min(axis=0))
        hi = np.maximum(hi, images.max(axis=0))
    box = Box(lo, hi)
    return box.inflate(pad) if pad else box
