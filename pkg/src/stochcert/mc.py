"""Monte Carlo oracle for liveness and reach-avoid probabilities.

Infinite-horizon probabilities are bracketed by truncated-horizon simulation:
the liveness estimate (stayed safe through K steps) is biased upward, the
reach-avoid estimate (hit the target by step K without leaving X first) is
biased downward.  Half-widths come from the distribution-free Hoeffding bound
sqrt(ln(2/delta) / (2 n)).

Randomness is counter-based: the uniform driving trial i at step t is a pure
function of (seed, t, i) via a Philox stream, so results are independent of
execution order and extending the horizon extends trajectories without
re-rolling earlier steps (estimates are monotone in K for a fixed seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .expr import EvalError
from .model import SystemModel
from .regions import RegionSpec, StateClass, classify_batch

__all__ = [
    "McEstimate",
    "hoeffding_half_width",
    "estimate_liveness",
    "estimate_reach_avoid",
]

# per-trial outcome codes
ACTIVE = 0
REACHED = 1
EXITED = 2


def hoeffding_half_width(n_trials: int, delta: float) -> float:
    if n_trials < 1 or not 0.0 < delta < 1.0:
        raise ValueError("need n_trials >= 1 and delta in (0, 1)")
    return float(np.sqrt(np.log(2.0 / delta) / (2.0 * n_trials)))


@dataclass
class McEstimate:
    p_hat: float
    n_trials: int
    horizon: int
    delta: float
    half_width: float
    successes: int
    direction: str  # upper_biased_for_liveness | lower_biased_for_reach_avoid
    error: str | None = None  # simulation aborted; counts are partial


def _step_uniforms(seed: int, sweep: int, count: int) -> np.ndarray:
    # Disjoint 2^64-block counter ranges per sweep keep draws for different
    # steps non-overlapping regardless of the trial count.
    counter = np.zeros(4, dtype=np.uint64)
    counter[1] = np.uint64(sweep)
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=counter))
    return gen.random(count)


def _run_trials(system: SystemModel, regions: RegionSpec, x0, horizon: int,
                n_trials: int, seed: int, absorb_target: bool):
    """Advance all trials in lockstep sweeps until absorption or horizon.

    Returns (status, steps_taken); status holds REACHED/EXITED/ACTIVE per
    trial, where REACHED only occurs with ``absorb_target``.  Raises EvalError
    if the dynamics fail to evaluate.
    """
    x0 = np.asarray(x0, dtype=float)
    cum = system.dist.cum_probs
    status = np.full(n_trials, ACTIVE, dtype=np.int8)
    steps = np.zeros(n_trials, dtype=np.int64)

    start_class = classify_batch(regions, x0.reshape(1, -1))[0]
    if start_class == int(StateClass.UNSAFE):
        status[:] = EXITED
        return status, steps
    if absorb_target and start_class == int(StateClass.TARGET):
        status[:] = REACHED
        return status, steps

    states = np.tile(x0, (n_trials, 1))
    for t in range(horizon):
        alive = np.flatnonzero(status == ACTIVE)
        if alive.size == 0:
            break
        u = _step_uniforms(seed, t, n_trials)[alive]
        atom_idx = np.searchsorted(cum, u, side="right")
        ths = system.dist.atoms[atom_idx]
        states[alive] = model_mod.step_batch(system, states[alive], ths, strict=True)
        cls = classify_batch(regions, states[alive])
        exited = cls == int(StateClass.UNSAFE)
        status[alive[exited]] = EXITED
        steps[alive[exited]] = t + 1
        if absorb_target:
            hit = cls == int(StateClass.TARGET)
            status[alive[hit]] = REACHED
            steps[alive[hit]] = t + 1
    steps[status == ACTIVE] = horizon
    return status, steps


def estimate_liveness(system: SystemModel, regions: RegionSpec, x0, horizon: int,
                      n_trials: int, delta: float, seed: int) -> McEstimate:
    """Estimate P(stay in X through step K), an upper bound on the
    infinite-horizon liveness probability.  Trials stop at the first exit;
    the target set plays no role."""
    if horizon < 1 or n_trials < 1:
        raise ValueError("need horizon >= 1 and n_trials >= 1")
    half = hoeffding_half_width(n_trials, delta)
    try:
        status, _ = _run_trials(system, regions, x0, horizon, n_trials, seed,
                                absorb_target=False)
    except EvalError as exc:
        return McEstimate(0.0, n_trials, horizon, delta, half, 0,
                          "upper_biased_for_liveness", error=str(exc))
    successes = int(np.count_nonzero(status == ACTIVE))
    return McEstimate(successes / n_trials, n_trials, horizon, delta, half,
                      successes, "upper_biased_for_liveness")


def estimate_reach_avoid(system: SystemModel, regions: RegionSpec, x0, horizon: int,
                         n_trials: int, delta: float, seed: int) -> McEstimate:
    """Estimate P(hit X_r by step K while staying in X until the hit), a lower
    bound on the infinite-horizon reach-avoid probability.  Trials stop at the
    first target hit or the first exit."""
    if horizon < 1 or n_trials < 1:
        raise ValueError("need horizon >= 1 and n_trials >= 1")
    half = hoeffding_half_width(n_trials, delta)
    try:
        status, _ = _run_trials(system, regions, x0, horizon, n_trials, seed,
                                absorb_target=True)
    except EvalError as exc:
        return McEstimate(0.0, n_trials, horizon, delta, half, 0,
                          "lower_biased_for_reach_avoid", error=str(exc))
    successes = int(np.count_nonzero(status == REACHED))
    return McEstimate(successes / n_trials, n_trials, horizon, delta, half,
                      successes, "lower_biased_for_reach_avoid")
