"""Ground-truth and strong-baseline solvers for desk-scale verification.

The local-search tour solver stands in for heavyweight exact TSP tooling at
this scale; reports must label oracle columns accordingly.
"""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np

from .pareto import nondominated_filter
from .problems import Instance, PreferenceGrid, ProblemKind
from .scalarize import weighted_sum

BRUTE_TSP_MAX_N = 10  # (n-1)!/2 tours; 181,440 at n=10 stays desk-scale

DP_WEIGHT_GRID = 1000  # knapsack weights discretized to 1/1000


def _distance_matrices(inst: Instance) -> list[np.ndarray]:
    mats = []
    for i in range(inst.kind.num_objectives):
        coords = inst.coordinate_block(i)
        diff = coords[:, None, :] - coords[None, :, :]
        mats.append(np.sqrt((diff * diff).sum(axis=-1)))
    return mats


@functools.lru_cache(maxsize=4)
def enumerate_tours(n: int) -> np.ndarray:
    """All distinct cyclic tours: node 0 fixed, reversal duplicates removed."""
    perms = np.array(list(itertools.permutations(range(1, n))), dtype=np.int16)
    keep = perms[:, 0] < perms[:, -1]
    perms = perms[keep]
    zeros = np.zeros((len(perms), 1), dtype=np.int16)
    out = np.concatenate([zeros, perms], axis=1)
    out.setflags(write=False)
    return out


def _tour_costs(tours: np.ndarray, dist: np.ndarray) -> np.ndarray:
    nxt = np.roll(tours, -1, axis=1)
    return dist[tours, nxt].sum(axis=1)


def brute_pareto_tsp(inst: Instance, max_n: int = BRUTE_TSP_MAX_N):
    """Exact Pareto front by full tour enumeration (n <= 10)."""
    if inst.n > max_n:
        raise ValueError(f"enumeration limited to n <= {max_n}, got n = {inst.n}")
    tours = enumerate_tours(inst.n)
    dists = _distance_matrices(inst)
    objs = np.stack([_tour_costs(tours, d) for d in dists], axis=1)
    return nondominated_filter(objs), tours, objs


def brute_front_tsp(inst: Instance, max_n: int = BRUTE_TSP_MAX_N) -> np.ndarray:
    return brute_pareto_tsp(inst, max_n)[0]


# -- knapsack ------------------------------------------------------------------


def discretized_weights(inst: Instance, grid: int = DP_WEIGHT_GRID):
    w_int = np.round(inst.features[:, 0] * grid).astype(int)
    c_int = int(round(inst.capacity * grid))
    return w_int, c_int


def ws_dp_knapsack(inst: Instance, lam, grid: int = DP_WEIGHT_GRID) -> list[int]:
    """Exact maximizer of the weighted value under capacity, on weights
    discretized to 1/grid (introduces <= 0.1% capacity error at the default)."""
    lam = np.asarray(lam, dtype=float)
    values = inst.features[:, 1:] @ lam
    w_int, c_int = discretized_weights(inst, grid)
    n = inst.n
    best = np.zeros(c_int + 1)
    take = np.zeros((n, c_int + 1), dtype=bool)
    for i in range(n):
        w = w_int[i]
        v = values[i]
        if w == 0:
            if v > 0:
                take[i, :] = True
                best = best + v
            continue
        cand = np.full(c_int + 1, -np.inf)
        cand[w:] = best[: c_int + 1 - w] + v
        improved = cand > best
        take[i] = improved
        best = np.where(improved, cand, best)
    chosen = []
    c = c_int
    for i in range(n - 1, -1, -1):
        if take[i, c]:
            chosen.append(i)
            c -= w_int[i]
    return sorted(chosen)


def kp_objectives(inst: Instance, items) -> np.ndarray:
    items = list(items)
    if not items:
        return np.zeros(2)
    return -inst.features[items, 1:].sum(axis=0)


# -- tour local search ----------------------------------------------------------


def _nearest_neighbor(dist: np.ndarray, start: int) -> np.ndarray:
    n = dist.shape[0]
    tour = [start]
    left = set(range(n)) - {start}
    cur = start
    while left:
        nxt = min(left, key=lambda j: dist[cur, j])
        tour.append(nxt)
        left.remove(nxt)
        cur = nxt
    return np.array(tour, dtype=int)


def _two_opt(dist: np.ndarray, tour: np.ndarray) -> np.ndarray:
    """First-improvement 2-opt to a local optimum."""
    n = len(tour)
    tour = tour.copy()
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a, b = tour[i], tour[(i + 1) % n]
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                c, d = tour[j], tour[(j + 1) % n]
                delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
                if delta < -1e-12:
                    tour[i + 1 : j + 1] = tour[i + 1 : j + 1][::-1]
                    improved = True
                    a, b = tour[i], tour[(i + 1) % n]
    return tour


def ws_local_search_tsp(inst: Instance, lam, restarts: int = 10) -> np.ndarray:
    """Nearest-neighbor + 2-opt on the weighted edge lengths, best of restarts.

    Restart r starts the construction at node r mod n, so the search is a pure
    function of (instance, lam, restarts).
    """
    lam = np.asarray(lam, dtype=float)
    dists = _distance_matrices(inst)
    dist = sum(l * d for l, d in zip(lam, dists))
    best_tour = None
    best_cost = math.inf
    for r in range(restarts):
        tour = _two_opt(dist, _nearest_neighbor(dist, r % inst.n))
        cost = float(dist[tour, np.roll(tour, -1)].sum())
        if cost < best_cost:
            best_cost = cost
            best_tour = tour
    return best_tour


def _greedy_split(order: np.ndarray, demands: np.ndarray, capacity: float) -> list[list[int]]:
    routes: list[list[int]] = []
    cur: list[int] = []
    load = 0.0
    for c in order:
        d = demands[c - 1]
        if cur and load + d > capacity + 1e-12:
            routes.append(cur)
            cur = []
            load = 0.0
        cur.append(int(c))
        load += d
    if cur:
        routes.append(cur)
    return routes


def ws_local_search_cvrp(inst: Instance, lam, restarts: int = 5) -> list[list[int]]:
    """Giant tour (NN + 2-opt over customer coordinates) with a greedy
    capacity split; not claimed exact."""
    from .problems import evaluate_objectives  # local import avoids a cycle

    lam = np.asarray(lam, dtype=float)
    coords = inst.features
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    cust_dist = dist[1:, 1:]
    best_routes = None
    best_cost = math.inf
    for r in range(restarts):
        order = _two_opt(cust_dist, _nearest_neighbor(cust_dist, r % inst.n)) + 1
        routes = _greedy_split(order, inst.demands, inst.capacity)
        cost = weighted_sum(evaluate_objectives(inst, routes), lam)
        if cost < best_cost:
            best_cost = cost
            best_routes = routes
    return best_routes


# -- oracle fronts ---------------------------------------------------------------


def oracle_front(inst: Instance, grid: PreferenceGrid, *, restarts: int = 10) -> np.ndarray:
    """Reference front: exact enumeration when possible, otherwise the
    weighted-sum solver swept over the preference grid."""
    from .problems import evaluate_objectives

    kind = inst.kind
    if kind.is_tsp and inst.n <= BRUTE_TSP_MAX_N:
        return brute_front_tsp(inst)
    pts = []
    for lam in grid:
        if kind.is_tsp:
            sol = ws_local_search_tsp(inst, lam, restarts)
        elif kind is ProblemKind.BI_CVRP:
            sol = ws_local_search_cvrp(inst, lam, max(1, restarts // 2))
        else:
            sol = ws_dp_knapsack(inst, lam)
        pts.append(evaluate_objectives(inst, sol))
    return nondominated_filter(np.stack(pts))


# -- Monte-Carlo hypervolume -------------------------------------------------------


def mc_hypervolume(points, r, samples: int, rng) -> tuple[float, float]:
    """Uniform sampling in [min-corner, r]: estimate and its standard error."""
    if samples < 10_000:
        raise ValueError("use at least 1e4 samples")
    pts = np.asarray(points, dtype=float)
    r = np.asarray(r, dtype=float)
    if pts.size == 0:
        return 0.0, 0.0
    lo = pts.min(axis=0)
    box = np.prod(r - lo)
    if box <= 0:
        raise ValueError("degenerate sampling box")
    hits = 0
    chunk = 200_000
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        u = lo + (r - lo) * rng.random((k, r.size))
        dominated = (u[:, None, :] >= pts[None, :, :]).all(axis=-1).any(axis=-1)
        hits += int(dominated.sum())
        done += k
    p = hits / samples
    est = p * box
    stderr = box * math.sqrt(max(p * (1 - p), 1e-300) / samples)
    return est, stderr
