"""Problem definitions: instances, solutions, feasibility and objectives.

Four problem kinds are supported: bi/tri-objective TSP, bi-objective CVRP and
bi-objective knapsack. All objectives are minimized internally; knapsack
values are negated at evaluation time (reporting layers re-negate).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9

PROVENANCE_TAGS = ("clean", "gmm", "heavytail", "paa", "imported")

# CVRP defaults: integer demands 1..9 scaled by 30, unit vehicle capacity.
CVRP_CAPACITY = 1.0
CVRP_DEMAND_CHOICES = np.arange(1, 10) / 30.0


class ProblemKind(str, Enum):
    BI_TSP = "bitsp"
    TRI_TSP = "tritsp"
    BI_CVRP = "bicvrp"
    BI_KP = "bikp"

    @property
    def num_objectives(self) -> int:
        return 3 if self is ProblemKind.TRI_TSP else 2

    @property
    def is_tsp(self) -> bool:
        return self in (ProblemKind.BI_TSP, ProblemKind.TRI_TSP)

    @property
    def feature_columns(self) -> int:
        """Stored feature columns: TSP coordinate blocks, CVRP coordinates
        (demands are held separately), KP weight + two values."""
        if self.is_tsp:
            return 2 * self.num_objectives
        return 2 if self is ProblemKind.BI_CVRP else 3


class FeasibilityError(ValueError):
    """Raised when a solution violates a problem constraint."""


@dataclass
class Instance:
    """One problem datum in normalized feature space.

    features: TSP -> (n, 2m) coordinates, objective i reads columns
    [2i, 2i+1]; CVRP -> (n+1, 2) coordinates with row 0 the depot; KP ->
    (n, 3) columns (weight, value_1, value_2).
    """

    kind: ProblemKind
    id: str
    features: np.ndarray
    demands: np.ndarray | None = None
    capacity: float | None = None
    provenance: str = "clean"

    @property
    def n(self) -> int:
        """Number of customers (CVRP) or nodes/items (TSP/KP)."""
        rows = self.features.shape[0]
        return rows - 1 if self.kind is ProblemKind.BI_CVRP else rows

    def coordinate_block(self, objective: int) -> np.ndarray:
        if not self.kind.is_tsp:
            raise ValueError("coordinate blocks only exist for TSP kinds")
        return self.features[:, 2 * objective : 2 * objective + 2]


def validate_instance(inst: Instance) -> None:
    """Raise ValueError if the instance breaks a structural invariant."""
    feats = inst.features
    if not np.all(np.isfinite(feats)):
        raise ValueError(f"instance {inst.id}: non-finite features")
    if feats.ndim != 2 or feats.shape[1] != inst.kind.feature_columns:
        raise ValueError(
            f"instance {inst.id}: expected {inst.kind.feature_columns} feature "
            f"columns for {inst.kind.value}, got shape {feats.shape}"
        )
    if inst.provenance not in PROVENANCE_TAGS:
        raise ValueError(f"instance {inst.id}: unknown provenance {inst.provenance!r}")
    if np.any(feats < -1e-12) or np.any(feats > 1 + 1e-12):
        raise ValueError(f"instance {inst.id}: features outside [0, 1]")
    if inst.kind is ProblemKind.BI_CVRP:
        if inst.demands is None or inst.capacity is None:
            raise ValueError(f"instance {inst.id}: CVRP requires demands and capacity")
        if len(inst.demands) != inst.n:
            raise ValueError(f"instance {inst.id}: demand count != customer count")
        if np.any(inst.demands <= 0) or np.any(inst.demands > inst.capacity):
            raise ValueError(f"instance {inst.id}: demands must lie in (0, capacity]")
    elif inst.kind is ProblemKind.BI_KP:
        if inst.capacity is None:
            raise ValueError(f"instance {inst.id}: KP requires a capacity")
        if inst.capacity >= float(feats[:, 0].sum()):
            raise ValueError(f"instance {inst.id}: capacity >= total weight (trivial)")
    elif inst.demands is not None or inst.capacity is not None:
        raise ValueError(f"instance {inst.id}: TSP takes no demands/capacity")


# ---------------------------------------------------------------------------
# Objective evaluation and feasibility
# ---------------------------------------------------------------------------


def tour_length(coords: np.ndarray, tour: np.ndarray) -> float:
    """Cyclic Euclidean length of `tour` over `coords` (exact, no rounding)."""
    pts = coords[tour]
    diffs = pts - np.roll(pts, -1, axis=0)
    return float(np.sqrt((diffs * diffs).sum(axis=1)).sum())


def route_length(coords: np.ndarray, route: Sequence[int]) -> float:
    """Depot-bracketed length of one CVRP route (depot is row 0)."""
    seq = np.concatenate(([0], np.asarray(route, dtype=int), [0]))
    pts = coords[seq]
    diffs = pts[1:] - pts[:-1]
    return float(np.sqrt((diffs * diffs).sum(axis=1)).sum())


def check_feasible(inst: Instance, solution) -> str | None:
    """Return None if feasible, else a message naming the first violation."""
    kind = inst.kind
    if kind.is_tsp:
        tour = np.asarray(solution, dtype=int)
        if tour.shape != (inst.n,):
            return f"tour length {tour.size} != node count {inst.n}"
        seen = np.bincount(tour, minlength=inst.n) if tour.size else np.array([])
        if tour.size and (tour.min() < 0 or tour.max() >= inst.n):
            return "tour contains out-of-range node"
        if np.any(seen != 1):
            dup = int(np.argmax(seen > 1))
            return f"duplicate node {dup} in tour"
        return None
    if kind is ProblemKind.BI_CVRP:
        visited: set[int] = set()
        for r_idx, route in enumerate(solution):
            if len(route) == 0:
                return f"route {r_idx} is empty"
            for c in route:
                if not 1 <= c <= inst.n:
                    return f"route {r_idx} contains invalid customer {c}"
                if c in visited:
                    return f"customer {c} served twice"
                visited.add(c)
            load = float(inst.demands[np.asarray(route, dtype=int) - 1].sum())
            if load > inst.capacity + 1e-12:
                return f"route {r_idx} demand {load:.6f} exceeds capacity {inst.capacity}"
        missing = set(range(1, inst.n + 1)) - visited
        if missing:
            return f"customer {min(missing)} not served"
        return None
    # knapsack
    items = list(solution)
    if len(set(items)) != len(items):
        return "duplicate item in subset"
    for i in items:
        if not 0 <= i < inst.n:
            return f"invalid item index {i}"
    weight = float(inst.features[items, 0].sum()) if items else 0.0
    if weight > inst.capacity + 1e-12:
        return f"subset weight {weight:.6f} exceeds capacity {inst.capacity}"
    return None


def evaluate_objectives(inst: Instance, solution) -> np.ndarray:
    """Objective vector F(solution), minimization orientation.

    TSP: per-block cyclic tour lengths. CVRP: (total route length, longest
    single route). KP: negated value sums.
    """
    report = check_feasible(inst, solution)
    if report is not None:
        raise FeasibilityError(report)
    kind = inst.kind
    if kind.is_tsp:
        tour = np.asarray(solution, dtype=int)
        return np.array(
            [tour_length(inst.coordinate_block(i), tour) for i in range(kind.num_objectives)]
        )
    if kind is ProblemKind.BI_CVRP:
        lengths = [route_length(inst.features, route) for route in solution]
        return np.array([sum(lengths), max(lengths)])
    items = np.asarray(list(solution), dtype=int)
    if items.size == 0:
        return np.zeros(2)
    values = inst.features[items, 1:]
    return -values.sum(axis=0)


# ---------------------------------------------------------------------------
# Preferences
# ---------------------------------------------------------------------------


def validate_preference(lam: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < -tol):
        raise ValueError(f"preference has negative component: {lam}")
    if abs(float(lam.sum()) - 1.0) > tol:
        raise ValueError(f"preference does not sum to 1: {lam}")


@dataclass
class PreferenceGrid:
    """Ordered list of simplex weight vectors plus generation parameters."""

    m: int
    resolution: int
    preferences: list[np.ndarray] = field(repr=False)

    def __len__(self) -> int:
        return len(self.preferences)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.preferences)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.preferences[i]


def _simplex_point(numerators: Sequence[int], resolution: int) -> np.ndarray:
    # Last component as 1 - partial sum keeps the float sum exactly 1.0.
    head = [k / resolution for k in numerators[:-1]]
    vec = np.array(head + [1.0 - float(np.sum(head))])
    return vec


def preference_grid(m: int, resolution: int) -> PreferenceGrid:
    """Uniform simplex lattice: m=2 gives resolution+1 points, m=3 gives
    C(resolution+2, 2) points."""
    if m not in (2, 3):
        raise ValueError(f"unsupported objective count {m}")
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    prefs: list[np.ndarray] = []
    if m == 2:
        for k in range(resolution + 1):
            prefs.append(_simplex_point((k, resolution - k), resolution))
    else:
        for a in range(resolution + 1):
            for b in range(resolution + 1 - a):
                prefs.append(_simplex_point((a, b, resolution - a - b), resolution))
    return PreferenceGrid(m=m, resolution=resolution, preferences=prefs)


# ---------------------------------------------------------------------------
# JSONL (de)serialization
# ---------------------------------------------------------------------------

_JSON_KEYS = ("id", "kind", "n", "features", "demands", "capacity", "provenance")


def instance_to_record(inst: Instance) -> dict:
    rec = {
        "id": inst.id,
        "kind": inst.kind.value,
        "n": inst.n,
        "features": inst.features.tolist(),
        "provenance": inst.provenance,
    }
    if inst.demands is not None:
        rec["demands"] = inst.demands.tolist()
    if inst.capacity is not None:
        rec["capacity"] = inst.capacity
    return rec


def record_to_instance(rec: dict) -> Instance:
    try:
        kind = ProblemKind(rec["kind"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"bad instance record: {exc}") from exc
    inst = Instance(
        kind=kind,
        id=str(rec["id"]),
        features=np.asarray(rec["features"], dtype=float),
        demands=np.asarray(rec["demands"], dtype=float) if "demands" in rec else None,
        capacity=float(rec["capacity"]) if "capacity" in rec else None,
        provenance=rec.get("provenance", "clean"),
    )
    if inst.n != int(rec["n"]):
        raise ValueError(f"instance {inst.id}: n field does not match features")
    validate_instance(inst)
    return inst


def dumps_record(rec: dict) -> str:
    # Canonical byte form: fixed key order, repr-exact doubles.
    return json.dumps(rec, separators=(",", ":"), sort_keys=False)


def write_instances(path, instances: Iterable[Instance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(dumps_record(instance_to_record(inst)) + "\n")


def read_instances(path) -> list[Instance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_to_instance(json.loads(line)))
    return out


def clone_with_features(inst: Instance, features: np.ndarray, provenance: str) -> Instance:
    return replace(inst, features=features, provenance=provenance)
