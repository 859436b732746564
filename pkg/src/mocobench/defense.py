"""Adversarial training with hardness-aware preference selection.

Each epoch regenerates hard instances with the current policy, mixes them
with clean data, and trains each mini-batch under the worst of N randomly
perturbed preferences (worst = highest Tchebycheff value of a greedy
rollout, picked through softmax relevance scores).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, HardInstanceSet, align_to_grid, build_hard_set
from .autodiff import Tape
from .generators import gen_uniform
from .policy import Policy
from .problems import Instance, PreferenceGrid, ProblemKind, validate_preference
from .rng import substream
from .scalarize import IdealPoint, tchebycheff
from .training import AdamState, epoch_data_seed, run_epoch


def perturb_preferences(lam: np.ndarray, N: int, eps: float, rng) -> list[np.ndarray]:
    """N neighbors of lam: add U(-eps, eps) noise, clamp negatives to zero and
    renormalize onto the simplex. A degenerate all-zero draw falls back to lam."""
    if N < 1:
        raise ValueError("need at least one perturbed preference")
    if eps <= 0:
        raise ValueError("perturbation half-width must be positive")
    lam = np.asarray(lam, dtype=float)
    validate_preference(lam)
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng), "perturb-preferences")
    out = []
    for _ in range(N):
        raw = lam + rng.uniform(-eps, eps, size=lam.shape)
        raw = np.maximum(raw, 0.0)
        total = raw.sum()
        if total <= 0:
            out.append(lam.copy())
            continue
        out.append(raw / total)
    return out


def relevance_scores(tch_values) -> np.ndarray:
    """Softmax of negated Tchebycheff values (max-shift stabilized).

    Lower scores mark preferences where the solver performs worst.
    """
    t = np.asarray(tch_values, dtype=float)
    if t.size < 1 or not np.all(np.isfinite(t)):
        raise ValueError("relevance scores need finite Tchebycheff values")
    s = -t
    s = s - s.max()
    e = np.exp(s)
    return e / e.sum()


def select_adversarial(lams: list[np.ndarray], scores: np.ndarray) -> tuple[int, np.ndarray]:
    """Preference with the minimal relevance score; ties break to the lowest index."""
    if len(lams) == 0 or len(lams) != len(scores):
        raise ValueError("preference and score lists must align and be nonempty")
    idx = int(np.argmin(scores))
    return idx, lams[idx]


def recalibrated_loss(f, lam_adv, z_star) -> float:
    """Tchebycheff loss under the selected adversarial preference."""
    return tchebycheff(f, lam_adv, z_star)


@dataclass
class DpdConfig:
    instance_n: int = 10
    eps: float = 0.1
    n_perturb: int = 8
    mix: tuple[int, int] = (1, 1)
    epochs: int = 10
    batch_size: int = 32
    rollouts: int = 8
    loss: str = "tch"
    clean_per_epoch: int = 128
    attack_instances: int = 64
    batches_per_epoch: int | None = None
    lr: float = 1e-4
    attack: AttackConfig | None = field(default_factory=AttackConfig)
    seed: int = 0

    def __post_init__(self):
        if self.eps <= 0 or self.n_perturb < 1:
            raise ValueError("need eps > 0 and n_perturb >= 1")
        if self.mix[0] <= 0 or self.mix[1] < 0:
            raise ValueError("mix ratio components must be positive (hard part may be 0)")


def _greedy_tch(policy: Policy, instances: list[Instance], lam: np.ndarray):
    """Single-start greedy objectives for one candidate preference."""
    tape = Tape()
    params = policy.leaves(tape, trainable=False)
    batch = policy.rollout(tape, params, instances, lam, 1, "greedy", rng=None)
    return batch.objectives[:, 0, :]


def _preference_hook(policy: Policy, cfg: DpdConfig, seed: int):
    def hook(instances, lam, lam_idx, key, ideal: IdealPoint):
        if cfg.loss != "tch":
            return lam, cfg.loss
        rng = substream(seed, "perturb", *key)
        candidates = perturb_preferences(lam, cfg.n_perturb, cfg.eps, rng)
        objs = [_greedy_tch(policy, instances, cand) for cand in candidates]
        for o in objs:
            ideal.observe(o)
        z = ideal.get(lam.shape[0])
        tch_means = [float(np.mean([tchebycheff(f, cand, z) for f in o]))
                     for cand, o in zip(candidates, objs)]
        _, lam_adv = select_adversarial(candidates, relevance_scores(tch_means))
        return lam_adv, "tch"

    return hook


def dpd_epoch(policy: Policy, opt: AdamState, grid: PreferenceGrid, cfg: DpdConfig,
              seed: int, epoch: int, *,
              imported_hard: HardInstanceSet | None = None) -> dict:
    """One adversarial-training epoch.

    Attack phase: perturb a slice of the fresh clean pool under every grid
    preference with the current policy (skipped when cfg.attack is None or an
    imported pool is supplied). Defense phase: stratified clean/hard
    mini-batches trained under the hardness-selected preference.
    """
    pool = gen_uniform(policy.cfg.kind, cfg.instance_n, cfg.clean_per_epoch,
                       epoch_data_seed(seed, epoch))
    hard_by_pref = None
    if imported_hard is not None:
        hard_by_pref = align_to_grid(imported_hard, grid)
    elif cfg.attack is not None:
        hard = build_hard_set(policy, pool[: cfg.attack_instances], grid, cfg.attack)
        hard_by_pref = hard.by_pref
    hook = _preference_hook(policy, cfg, seed)
    stats = run_epoch(
        policy, opt, grid,
        batch_size=cfg.batch_size, rollouts=cfg.rollouts, loss=cfg.loss,
        seed=seed, epoch=epoch, clean_pool=pool,
        batches=cfg.batches_per_epoch,
        hard_by_pref=hard_by_pref, mix=cfg.mix, preference_hook=hook,
    )
    stats["hard_count"] = sum(len(v) for v in hard_by_pref.values()) if hard_by_pref else 0
    return stats


def dpd_train(policy: Policy, grid: PreferenceGrid, cfg: DpdConfig,
              *, imported_hard: HardInstanceSet | None = None) -> tuple[Policy, list[dict]]:
    """Fine-tune `policy` for cfg.epochs adversarial epochs (on a copy)."""
    tuned = policy.copy()
    opt = AdamState(lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        stats = dpd_epoch(tuned, opt, grid, cfg, cfg.seed, epoch,
                          imported_hard=imported_hard)
        history.append({"epoch": epoch, **stats})
    return tuned, history
