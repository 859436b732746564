"""Instance generation (clean and shifted) and the feasibility projection.

All generators are pure functions of (parameters, seed); per-instance RNG
substreams make parallel generation equal to serial generation.
"""

from __future__ import annotations

import numpy as np

from .problems import (
    CVRP_CAPACITY,
    CVRP_DEMAND_CHOICES,
    Instance,
    ProblemKind,
    validate_instance,
)
from .rng import substream

HEAVYTAIL_DISTS = ("lognormal", "beta", "gamma")


def minmax_project(features: np.ndarray) -> np.ndarray:
    """Affinely map each column onto [0, 1]; constant columns map to 0.5.

    Idempotent and order-preserving within each column.
    """
    feats = np.asarray(features, dtype=float)
    lo = feats.min(axis=0)
    hi = feats.max(axis=0)
    span = hi - lo
    out = np.empty_like(feats)
    const = span == 0
    out[:, const] = 0.5
    nz = ~const
    out[:, nz] = (feats[:, nz] - lo[nz]) / span[nz]
    return out


def project_features(inst: Instance, raw: np.ndarray) -> np.ndarray:
    """Project perturbed raw features back into the instance's feasible box.

    TSP coordinates and KP weights+values are perturbable; the CVRP depot row
    (and demands/capacity, which live outside `features`) stay frozen.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != inst.features.shape:
        raise ValueError("projected features must keep the instance shape")
    if inst.kind is ProblemKind.BI_CVRP:
        out = inst.features.copy()
        out[1:] = minmax_project(raw[1:])
        return out
    return minmax_project(raw)


def _kp_capacity(n: int) -> float:
    return n / 8.0


def _instance_id(dist: str, kind: ProblemKind, n: int, seed: int, idx: int) -> str:
    return f"{dist}-{kind.value}-n{n}-s{seed}-{idx:06d}"


def _finish_kp(feats: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Redraw until the capacity C = n/8 actually binds (C < total weight).
    n = feats.shape[0]
    cap = _kp_capacity(n)
    for _ in range(100):
        if feats[:, 0].sum() > cap:
            return feats
        feats = feats.copy()
        feats[:, 0] = rng.random(n)
    raise RuntimeError("could not draw a knapsack instance with binding capacity")


def _assemble(kind: ProblemKind, feats: np.ndarray, rng: np.random.Generator,
              dist: str, n: int, seed: int, idx: int, provenance: str) -> Instance:
    demands = None
    capacity = None
    if kind is ProblemKind.BI_CVRP:
        demands = rng.choice(CVRP_DEMAND_CHOICES, size=n)
        capacity = CVRP_CAPACITY
    elif kind is ProblemKind.BI_KP:
        feats = _finish_kp(feats, rng)
        capacity = _kp_capacity(n)
    inst = Instance(
        kind=kind,
        id=_instance_id(dist, kind, n, seed, idx),
        features=feats,
        demands=demands,
        capacity=capacity,
        provenance=provenance,
    )
    validate_instance(inst)
    return inst


def _feature_rows(kind: ProblemKind, n: int) -> int:
    return n + 1 if kind is ProblemKind.BI_CVRP else n


def gen_uniform(kind: ProblemKind, n: int, count: int, seed: int) -> list[Instance]:
    """Clean instances: every perturbable feature i.i.d. U(0, 1)."""
    if n < 4:
        raise ValueError("instances need n >= 4")
    out = []
    for idx in range(count):
        rng = substream(seed, "gen-uniform", kind.value, n, idx)
        feats = rng.random((_feature_rows(kind, n), kind.feature_columns))
        out.append(_assemble(kind, feats, rng, "uniform", n, seed, idx, "clean"))
    return out


def gen_gmm(kind: ProblemKind, n: int, count: int, c_dist: float, k_clusters: int,
            seed: int) -> list[Instance]:
    """Gaussian-mixture instances: cluster centers ~ U[0, c_dist]^2, unit-variance
    clusters filled round-robin, then min-max rescaled into the unit square.

    Larger c_dist separates the clusters and makes instances harder for
    solvers trained on uniform data.
    """
    if n < 4:
        raise ValueError("instances need n >= 4")
    if c_dist < 1 or k_clusters < 1:
        raise ValueError("need c_dist >= 1 and k_clusters >= 1")
    if not kind.is_tsp and kind is not ProblemKind.BI_CVRP:
        raise ValueError("the mixture generator needs coordinate-pair features")
    rows = _feature_rows(kind, n)
    pairs = kind.feature_columns // 2
    out = []
    for idx in range(count):
        rng = substream(seed, "gen-gmm", kind.value, n, idx)
        feats = np.empty((rows, 2 * pairs))
        for p in range(pairs):
            centers = rng.uniform(0.0, c_dist, size=(k_clusters, 2))
            assign = np.arange(rows) % k_clusters
            pts = centers[assign] + rng.standard_normal((rows, 2))
            feats[:, 2 * p : 2 * p + 2] = minmax_project(pts)
        out.append(_assemble(kind, feats, rng, f"gmm{c_dist:g}", n, seed, idx, "gmm"))
    return out


def gen_heavytail(kind: ProblemKind, n: int, count: int, dist: str, seed: int) -> list[Instance]:
    """Skewed-feature instances from lognormal(0,1), beta(2,5) or gamma(2,0.5),
    min-max rescaled to [0, 1] per column."""
    if n < 4:
        raise ValueError("instances need n >= 4")
    if dist not in HEAVYTAIL_DISTS:
        raise ValueError(f"unknown distribution {dist!r}; pick one of {HEAVYTAIL_DISTS}")
    rows = _feature_rows(kind, n)
    out = []
    for idx in range(count):
        rng = substream(seed, "gen-heavytail", dist, kind.value, n, idx)
        shape = (rows, kind.feature_columns)
        if dist == "lognormal":
            raw = rng.lognormal(0.0, 1.0, size=shape)
        elif dist == "beta":
            raw = rng.beta(2.0, 5.0, size=shape)
        else:
            raw = rng.gamma(2.0, 0.5, size=shape)
        feats = minmax_project(raw)
        out.append(_assemble(kind, feats, rng, dist, n, seed, idx, "heavytail"))
    return out


def generate(kind: ProblemKind, n: int, count: int, dist: str, seed: int,
             c_dist: float = 1.0, k_clusters: int = 3) -> list[Instance]:
    """Dispatch helper used by the CLI: dist in {uniform, gmm, lognormal, beta, gamma}."""
    if dist == "uniform":
        return gen_uniform(kind, n, count, seed)
    if dist == "gmm":
        return gen_gmm(kind, n, count, c_dist, k_clusters, seed)
    return gen_heavytail(kind, n, count, dist, seed)
