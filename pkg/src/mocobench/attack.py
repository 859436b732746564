"""Hard-instance generation: per-preference gradient ascent on features.

For each preference, instance features take `steps` ascent steps on the
ratio-form reinforcement loss (scalarized loss over its rollout-mean
baseline, times the rollout log-probability), re-projected into the unit
box after every step. Gradients flow through both the log-probability and
the on-tape recomputed objectives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .evaluate import model_fronts
from .generators import project_features
from .pareto import hv_gap, hypervolume, nondominated_filter, reference_point
from .policy import Policy,mean_weighted_logprob, objectives_on_tape
from .problems import (
    Instance,
    PreferenceGrid,
    ProblemKind,
    dumps_record,
    instance_to_record,
    record_to_instance,
    validate_instance,
    validate_preference,
)
from .rng import substream

BASELINE_TOL = 1e-12


class DegenerateBaselineError(RuntimeError):
    """All rollout losses averaged to (near) zero; the ratio loss is undefined."""


@dataclass
class AttackConfig:
    alpha: float = 0.01
    steps: int = 3
    rollouts: int = 8
    loss: str = "ws"
    seed: int = 0

    def __post_init__(self):
        # alpha == 0 is allowed as the no-op baseline row in sweeps.
        if self.alpha < 0:
            raise ValueError("step size must be >= 0")
        if self.steps < 1:
            raise ValueError("need at least one ascent step")
        if self.rollouts < 2:
            raise ValueError("the baseline needs at least two rollouts")


@dataclass
class HardInstanceSet:
    """Per-preference perturbed instances plus their provenance."""

    kind: ProblemKind
    preferences: list[np.ndarray]
    by_pref: dict[int, list[Instance]]
    source_ids: list[str]
    checkpoint_id: str = ""

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_pref.values())

    def all_instances(self) -> list[Instance]:
        out = []
        for i in sorted(self.by_pref):
            out.extend(self.by_pref[i])
        return out


def _tape_losses(objs_node, lam: np.ndarray, loss: str, z_star: np.ndarray | None):
    lam_c = Tape.const(np.asarray(lam, dtype=float))
    if loss == "ws":
        return ad.reduce_sum(ad.mul(objs_node, lam_c), axis=-1)
    if loss == "tch":
        dev = ad.absval(ad.sub(objs_node, Tape.const(z_star)))
        return ad.reduce_max(ad.mul(dev, lam_c), axis=-1)
    raise ValueError(f"unknown loss {loss!r}")


def attack_step(policy: Policy, instances: list[Instance], lam: np.ndarray,
                alpha: float, M: int, rngs, *, loss: str = "ws") -> list[Instance]:
    """One ascent step on every instance in the batch (shared preference).

    The per-instance gradients are independent: the scalar that is
    differentiated is a sum of per-instance ratio losses. Frozen fields
    (depot row, demands, capacities) are untouched by the projection.
    """
    validate_preference(lam)
    tape = Tape()
    params = policy.leaves(tape, trainable=False)
    feats = tape.input(np.stack([inst.features for inst in instances]))
    batch = policy.rollout(tape, params, instances, lam, M, "sample", rngs, features=feats)

    z_star = None
    if loss == "tch":
        # per-instance rollout minima, treated as a detached statistic
        z_star = batch.objectives.min(axis=1, keepdims=True)
    objs_node = objectives_on_tape(feats, policy.cfg.kind, instances, batch.solutions)
    losses = _tape_losses(objs_node, lam, loss, z_star)  # (B, M)
    baseline = ad.reduce_mean(losses, axis=1, keepdims=True)
    if np.any(np.abs(baseline.value) <= BASELINE_TOL):
        raise DegenerateBaselineError(
            "rollout-mean loss is zero for at least one instance")
    ratio = ad.div(losses, baseline)
    per_rollout = ad.mul(ratio, ad.reshape(batch.logp, ratio.value.shape))
    scalar = ad.reduce_sum(ad.reduce_mean(per_rollout, axis=1), axis=None)
    tape.backward(scalar)
    grad = feats.grad
    if grad is None or not np.all(np.isfinite(grad)):
        raise RuntimeError("non-finite feature gradient during attack")

    out = []
    for b, inst in enumerate(instances):
        raw = inst.features + alpha * grad[b]
        new = replace(inst, features=project_features(inst, raw), provenance="paa")
        validate_instance(new)
        out.append(new)
    return out


def attack_rngs(seed: int, pref_index: int, instances: list[Instance]):
    """One substream per (preference, instance id): reproducible in parallel."""
    return [substream(seed, "paa", pref_index, inst.id) for inst in instances]


def build_hard_set(policy: Policy, clean: list[Instance], grid: PreferenceGrid,
                   cfg: AttackConfig, *, checkpoint_id: str = "",
                   batch_size: int = 128) -> HardInstanceSet:
    """Run the full attack: every grid preference against every clean instance."""
    by_pref: dict[int, list[Instance]] = {}
    for p_idx, lam in enumerate(grid):
        attacked: list[Instance] = []
        for lo in range(0, len(clean), batch_size):
            chunk = clean[lo : lo + batch_size]
            rngs = attack_rngs(cfg.seed, p_idx, chunk)
            current = chunk
            for _ in range(cfg.steps):
                current = attack_step(policy, current, lam, cfg.alpha,
                                      cfg.rollouts, rngs, loss=cfg.loss)
            attacked.extend(current)
        by_pref[p_idx] = attacked
    return HardInstanceSet(
        kind=clean[0].kind,
        preferences=[np.asarray(lam, dtype=float) for lam in grid],
        by_pref=by_pref,
        source_ids=[inst.id for inst in clean],
        checkpoint_id=checkpoint_id,
    )


def evaluate_attack(policy: Policy, instances: list[Instance], grid: PreferenceGrid,
                    r: np.ndarray | None = None, oracle_fronts: list[np.ndarray] | None = None):
    """Mean hypervolume of greedy fronts, plus the gap against oracle fronts.

    A shared reference point is derived from the union of all compared fronts
    when not supplied; it is returned so reports can record it.
    """
    fronts = model_fronts(policy, instances, grid)
    if r is None:
        pool = list(fronts) + (list(oracle_fronts) if oracle_fronts else [])
        r = reference_point(pool)
    hvs = np.array([hypervolume(f, r) for f in fronts])
    result = {
        "r": r,
        "hv_per_instance": hvs,
        "mean_hv": float(hvs.mean()),
        "fronts": fronts,
    }
    if oracle_fronts is not None:
        ohvs = np.array([hypervolume(f, r) for f in oracle_fronts])
        result["oracle_hv_per_instance"] = ohvs
        result["mean_oracle_hv"] = float(ohvs.mean())
        result["gap"] = hv_gap(float(ohvs.mean()), float(hvs.mean()))
    return result


# -- hard-set JSONL ------------------------------------------------------------


def export_hard_set(path, hard: HardInstanceSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p_idx in sorted(hard.by_pref):
            lam = hard.preferences[p_idx]
            for inst in hard.by_pref[p_idx]:
                rec = instance_to_record(inst)
                rec["preference"] = [float(v) for v in lam]
                rec["source_id"] = inst.id
                rec["checkpoint"] = hard.checkpoint_id
                fh.write(dumps_record(rec) + "\n")


def import_hard_set(path) -> HardInstanceSet:
    """Load a hard set (own exports or externally generated pools).

    Every record must embed a valid simplex preference; provenance must be
    `paa` or `imported`.
    """
    prefs: list[np.ndarray] = []
    by_pref: dict[int, list[Instance]] = {}
    source_ids: list[str] = []
    checkpoint_id = ""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "preference" not in rec:
                raise ValueError(f"{path}:{line_no}: record lacks a preference")
            lam = np.asarray(rec["preference"], dtype=float)
            validate_preference(lam)
            inst = record_to_instance({k: rec[k] for k in
                                       ("id", "kind", "n", "features", "demands",
                                        "capacity", "provenance") if k in rec})
            if inst.provenance not in ("paa", "imported"):
                raise ValueError(
                    f"{path}:{line_no}: hard-set provenance must be paa or imported")
            checkpoint_id = rec.get("checkpoint", checkpoint_id)
            p_idx = None
            for i, known in enumerate(prefs):
                if known.shape == lam.shape and np.allclose(known, lam, atol=1e-12):
                    p_idx = i
                    break
            if p_idx is None:
                prefs.append(lam)
                p_idx = len(prefs) - 1
            by_pref.setdefault(p_idx, []).append(inst)
            if rec.get("source_id", inst.id) not in source_ids:
                source_ids.append(rec.get("source_id", inst.id))
    if not by_pref:
        raise ValueError(f"{path}: empty hard set")
    kind = next(iter(by_pref.values()))[0].kind
    return HardInstanceSet(kind=kind, preferences=prefs, by_pref=by_pref,
                           source_ids=source_ids, checkpoint_id=checkpoint_id)


def align_to_grid(hard: HardInstanceSet, grid: PreferenceGrid, tol: float = 1e-9):
    """Map the set's preferences onto grid indices (exact within tol)."""
    aligned: dict[int, list[Instance]] = {}
    for p_idx, insts in hard.by_pref.items():
        lam = hard.preferences[p_idx]
        match = None
        for g_idx, g_lam in enumerate(grid):
            if np.all(np.abs(g_lam - lam) <= tol):
                match = g_idx
                break
        if match is None:
            raise ValueError(f"hard-set preference {lam} not on the training grid")
        aligned.setdefault(match, []).extend(insts)
    return aligned
