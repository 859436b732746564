"""Greedy-decoding evaluation: per-preference solutions and Pareto fronts."""

from __future__ import annotations

import numpy as np

from .autodiff import Tape
from .pareto import nondominated_filter
from .problems import Instance, PreferenceGrid, ProblemKind


def greedy_solutions(policy, instances: list[Instance], lam: np.ndarray):
    """Best greedy construction per instance for one preference.

    Routing kinds decode from every start node and keep the rollout with the
    lowest weighted-sum value; the knapsack decoder is deterministic with a
    single rollout.
    """
    kind = policy.cfg.kind
    n = instances[0].n
    M = n if kind is not ProblemKind.BI_KP else 1
    tape = Tape()
    params = policy.leaves(tape, trainable=False)
    batch = policy.rollout(tape, params, instances, lam, M, "greedy", rng=None)
    scal = batch.objectives @ np.asarray(lam, dtype=float)
    best = scal.argmin(axis=1)
    sols = [batch.solutions[b][j] for b, j in enumerate(best)]
    objs = batch.objectives[np.arange(len(instances)), best]
    return sols, objs


def sweep_objectives(policy, instances: list[Instance], grid: PreferenceGrid) -> np.ndarray:
    """(instances, |grid|, m) objective vectors of greedy per-preference picks."""
    per_pref = [greedy_solutions(policy, instances, lam)[1] for lam in grid]
    return np.stack(per_pref, axis=1)


def model_fronts(policy, instances: list[Instance], grid: PreferenceGrid) -> list[np.ndarray]:
    objs = sweep_objectives(policy, instances, grid)
    return [nondominated_filter(objs[i]) for i in range(len(instances))]
