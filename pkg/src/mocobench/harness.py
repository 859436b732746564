"""Experiment harness: seeded pipelines and deterministic CSV reports.

Every report embeds the resolved configuration, seeds, checkpoint hashes and
the shared reference point as '#'-prefixed JSON header lines, so a run can be
replayed byte-for-byte (the wall-clock column is the only nondeterministic
field and is excluded from reproducibility comparisons).
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import os
import time

import numpy as np

from .attack import AttackConfig, HardInstanceSet, build_hard_set, evaluate_attack
from .defense import DpdConfig, dpd_train
from .evaluate import model_fronts
from .generators import gen_gmm, gen_heavytail, gen_uniform
from .oracles import oracle_front
from .pareto import hv_gap, hypervolume, reference_point
from .policy import Policy
from .problems import Instance, PreferenceGrid, ProblemKind, preference_grid
from .rng import substream

PROBE_C_DISTS = (1, 5, 10, 20, 30, 40, 50)

ATTACK_EVAL_DISTS = ("clean", "lognormal", "beta", "gamma", "paa")
DEFENSE_EVAL_DISTS = ("clean", "gmm", "lognormal", "beta", "gamma", "paa")


def worker_count() -> int:
    return max(1, int(os.environ.get("MOCOBENCH_WORKERS", "1")))


def pmap(fn, items):
    """Order-preserving map, optionally across a process pool."""
    items = list(items)
    w = worker_count()
    if w <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with multiprocessing.Pool(w) as pool:
        return pool.map(fn, items)


def _oracle_task(args):
    inst, grid, restarts = args
    return oracle_front(inst, grid, restarts=restarts)


def oracle_fronts(instances: list[Instance], grid: PreferenceGrid,
                  restarts: int = 10) -> list[np.ndarray]:
    return pmap(_oracle_task, [(inst, grid, restarts) for inst in instances])


def checkpoint_hash(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


# -- report files ---------------------------------------------------------------


def write_report(path, rows: list[dict], columns: list[str], meta: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True, default=_json_default) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row.get(c, "")) for c in columns) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, ProblemKind):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj)}")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def read_report(path, *, drop_wall_clock: bool = False):
    meta = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    header = None
    for ln in lines:
        if ln.startswith("#"):
            meta = json.loads(ln[1:].strip())
        elif header is None:
            header = ln.split(",")
        elif ln:
            rows.append(dict(zip(header, ln.split(","))))
    if drop_wall_clock and header and "wall_clock_s" in header:
        for row in rows:
            row.pop("wall_clock_s", None)
    return rows, meta


def summarize_report(path) -> str:
    rows, meta = read_report(path)
    if not rows:
        return "(empty report)"
    cols = list(rows[0].keys())
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in cols}
    out = [" | ".join(c.ljust(widths[c]) for c in cols)]
    out.append("-+-".join("-" * widths[c] for c in cols))
    for r in rows:
        out.append(" | ".join(r[c].ljust(widths[c]) for c in cols))
    return "\n".join(out)


# -- evaluation sets -------------------------------------------------------------


def derived_seed(seed: int, *keys) -> int:
    return int(substream(seed, *keys).integers(2**63))


def cycled_hard_subset(hard: HardInstanceSet) -> list[Instance]:
    """One attacked copy per source instance, cycling through preferences.

    Keeps evaluation sets the same size as their clean sources so reports and
    paired comparisons stay instance-aligned.
    """
    n_pref = len(hard.preferences)
    out = []
    for i in range(len(hard.source_ids)):
        out.append(hard.by_pref[i % n_pref][i])
    return out


def build_eval_set(dist: str, kind: ProblemKind, n: int, count: int, seed: int,
                   *, c_dist: float = 30.0, k_clusters: int = 3,
                   policy: Policy | None = None, grid: PreferenceGrid | None = None,
                   attack_cfg: AttackConfig | None = None) -> list[Instance]:
    if dist == "clean":
        return gen_uniform(kind, n, count, derived_seed(seed, "eval-clean"))
    if dist == "gmm":
        return gen_gmm(kind, n, count, c_dist, k_clusters, derived_seed(seed, "eval-gmm"))
    if dist in ("lognormal", "beta", "gamma"):
        return gen_heavytail(kind, n, count, dist, derived_seed(seed, "eval-ht", dist))
    if dist == "paa":
        if policy is None or grid is None or attack_cfg is None:
            raise ValueError("the paa set needs a checkpoint, grid and attack config")
        clean = gen_uniform(kind, n, count, derived_seed(seed, "eval-clean"))
        hard = build_hard_set(policy, clean, grid, attack_cfg)
        return cycled_hard_subset(hard)
    raise ValueError(f"unknown evaluation distribution {dist!r}")


# -- pipelines -------------------------------------------------------------------


def run_probe(policy: Policy, *, n: int, count: int, grid: PreferenceGrid,
              c_dists=PROBE_C_DISTS, k_clusters: int = 3, seed: int = 0,
              restarts: int = 10, meta_extra: dict | None = None):
    """Hypervolume gap against the oracle across mixture spreads."""
    kind = policy.cfg.kind
    sets, model_f, oracle_f, timings = {}, {}, {}, {}
    for c in c_dists:
        insts = gen_gmm(kind, n, count, c, k_clusters, derived_seed(seed, "probe", c))
        t0 = time.perf_counter()
        model_f[c] = model_fronts(policy, insts, grid)
        timings[c] = time.perf_counter() - t0
        oracle_f[c] = oracle_fronts(insts, grid, restarts)
        sets[c] = insts
    r = reference_point([f for c in c_dists for f in model_f[c] + oracle_f[c]])
    rows = []
    for c in c_dists:
        hv_m = float(np.mean([hypervolume(f, r) for f in model_f[c]]))
        hv_o = float(np.mean([hypervolume(f, r) for f in oracle_f[c]]))
        rows.append({
            "c_dist": c,
            "hv_model": hv_m,
            "hv_oracle": hv_o,
            "gap": hv_gap(hv_o, hv_m),
            "wall_clock_s": round(timings[c], 3),
        })
    meta = {"pipeline": "probe", "n": n, "count": count, "seed": seed,
            "c_dists": list(c_dists), "grid_resolution": grid.resolution,
            "r": r, "oracle": "ws-2opt-sweep" if n > 10 else "enumeration",
            **(meta_extra or {})}
    return rows, meta


def run_attack_eval(policy: Policy, *, n: int, count: int, grid: PreferenceGrid,
                    attack_cfg: AttackConfig, dists=ATTACK_EVAL_DISTS,
                    seed: int = 0, c_dist: float = 30.0, restarts: int = 10,
                    meta_extra: dict | None = None):
    """Per-distribution mean HV and oracle gap for one checkpoint."""
    kind = policy.cfg.kind
    per_dist = {}
    for dist in dists:
        insts = build_eval_set(dist, kind, n, count, seed, c_dist=c_dist,
                               policy=policy, grid=grid, attack_cfg=attack_cfg)
        t0 = time.perf_counter()
        mf = model_fronts(policy, insts, grid)
        dt = time.perf_counter() - t0
        of = oracle_fronts(insts, grid, restarts)
        per_dist[dist] = (mf, of, dt)
    r = reference_point([f for mf, of, _ in per_dist.values() for f in list(mf) + list(of)])
    rows = []
    for dist in dists:
        mf, of, dt = per_dist[dist]
        hv_m = float(np.mean([hypervolume(f, r) for f in mf]))
        hv_o = float(np.mean([hypervolume(f, r) for f in of]))
        rows.append({
            "dist": dist,
            "hv_oracle": hv_o,
            "hv_model": hv_m,
            "gap": hv_gap(hv_o, hv_m),
            "wall_clock_s": round(dt, 3),
        })
    meta = {"pipeline": "attack-eval", "n": n, "count": count, "seed": seed,
            "alpha": attack_cfg.alpha, "steps": attack_cfg.steps,
            "attack_loss": attack_cfg.loss, "grid_resolution": grid.resolution,
            "r": r, **(meta_extra or {})}
    return rows, meta


def run_defense_eval(models: dict[str, Policy], *, n: int, count: int,
                     grid: PreferenceGrid, attack_cfg: AttackConfig,
                     attack_with: str, dists=DEFENSE_EVAL_DISTS, seed: int = 0,
                     c_dist: float = 30.0, restarts: int = 10,
                     imported: list[Instance] | None = None,
                     meta_extra: dict | None = None):
    """Compare checkpoints on clean/shifted/adversarial/imported sets.

    `attack_with` names the model whose gradients build the paa set (the
    undefended checkpoint, matching the held-out-attack protocol).
    """
    kind = next(iter(models.values())).cfg.kind
    sets: dict[str, list[Instance]] = {}
    for dist in dists:
        if dist == "imported":
            if imported is None:
                raise ValueError("imported distribution requested but no set given")
            sets[dist] = imported
        else:
            sets[dist] = build_eval_set(dist, kind, n, count, seed, c_dist=c_dist,
                                        policy=models[attack_with], grid=grid,
                                        attack_cfg=attack_cfg)
    per_cell = {}
    oracle_cache = {dist: oracle_fronts(sets[dist], grid, restarts) for dist in sets}
    for name, policy in models.items():
        for dist in sets:
            t0 = time.perf_counter()
            mf = model_fronts(policy, sets[dist], grid)
            per_cell[(name, dist)] = (mf, time.perf_counter() - t0)
    all_fronts = [f for mf, _ in per_cell.values() for f in mf]
    all_fronts += [f for of in oracle_cache.values() for f in of]
    r = reference_point(all_fronts)
    rows = []
    for name in models:
        for dist in sets:
            mf, dt = per_cell[(name, dist)]
            hv_m = float(np.mean([hypervolume(f, r) for f in mf]))
            hv_o = float(np.mean([hypervolume(f, r) for f in oracle_cache[dist]]))
            rows.append({
                "model": name,
                "dist": dist,
                "hv_oracle": hv_o,
                "hv_model": hv_m,
                "gap": hv_gap(hv_o, hv_m),
                "wall_clock_s": round(dt, 3),
            })
    meta = {"pipeline": "defense-eval", "n": n, "count": count, "seed": seed,
            "alpha": attack_cfg.alpha, "steps": attack_cfg.steps,
            "grid_resolution": grid.resolution, "r": r, **(meta_extra or {})}
    return rows, meta


SWEEP_PARAMS = ("t", "alpha", "eps", "n_perturb")


def run_sweep(param: str, values, policy: Policy, *, n: int, count: int,
              grid: PreferenceGrid, attack_cfg: AttackConfig,
              dpd_cfg: DpdConfig | None = None, seed: int = 0,
              restarts: int = 10, meta_extra: dict | None = None):
    """One attack (t, alpha) or defense (eps, n_perturb) evaluation per value."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}")
    rows = []
    for v in values:
        t0 = time.perf_counter()
        if param in ("t", "alpha"):
            cfg = AttackConfig(
                alpha=float(v) if param == "alpha" else attack_cfg.alpha,
                steps=int(v) if param == "t" else attack_cfg.steps,
                rollouts=attack_cfg.rollouts, loss=attack_cfg.loss,
                seed=attack_cfg.seed)
            sub_rows, _ = run_attack_eval(
                policy, n=n, count=count, grid=grid, attack_cfg=cfg,
                dists=("clean", "paa"), seed=seed, restarts=restarts)
            cell = {r["dist"]: r for r in sub_rows}
            row = {param: v,
                   "hv_clean": cell["clean"]["hv_model"],
                   "gap_clean": cell["clean"]["gap"],
                   "hv_attacked": cell["paa"]["hv_model"],
                   "gap_attacked": cell["paa"]["gap"]}
        else:
            if dpd_cfg is None:
                raise ValueError("defense sweeps need a defense config")
            cfg = DpdConfig(**{**_dpd_kwargs(dpd_cfg),
                               "eps": float(v) if param == "eps" else dpd_cfg.eps,
                               "n_perturb": int(v) if param == "n_perturb" else dpd_cfg.n_perturb})
            tuned, _ = dpd_train(policy, grid, cfg)
            sub_rows, _ = run_defense_eval(
                {"base": policy, "tuned": tuned}, n=n, count=count, grid=grid,
                attack_cfg=attack_cfg, attack_with="base",
                dists=("clean", "paa"), seed=seed, restarts=restarts)
            cell = {(r["model"], r["dist"]): r for r in sub_rows}
            row = {param: v,
                   "hv_clean": cell[("tuned", "clean")]["hv_model"],
                   "gap_clean": cell[("tuned", "clean")]["gap"],
                   "hv_attacked": cell[("tuned", "paa")]["hv_model"],
                   "gap_attacked": cell[("tuned", "paa")]["gap"]}
        row["wall_clock_s"] = round(time.perf_counter() - t0, 3)
        rows.append(row)
    meta = {"pipeline": "sweep", "param": param, "values": list(values),
            "n": n, "count": count, "seed": seed, **(meta_extra or {})}
    return rows, meta


def _dpd_kwargs(cfg: DpdConfig) -> dict:
    return {
        "instance_n": cfg.instance_n, "eps": cfg.eps, "n_perturb": cfg.n_perturb,
        "mix": cfg.mix, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
        "rollouts": cfg.rollouts, "loss": cfg.loss,
        "clean_per_epoch": cfg.clean_per_epoch,
        "attack_instances": cfg.attack_instances,
        "batches_per_epoch": cfg.batches_per_epoch, "lr": cfg.lr,
        "attack": cfg.attack, "seed": cfg.seed,
    }
