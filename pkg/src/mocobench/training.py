"""REINFORCE training of the preference-conditioned policy.

The epoch driver is shared with the adversarial-training loop: with the
attack disabled, a pure-clean mix and the weighted-sum loss it consumes the
exact same RNG substreams, so both paths produce bitwise-identical parameter
trajectories from the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluate import model_fronts
from .pareto import hypervolume, reference_point
from .policy import Policy, RolloutBatch, mean_weighted_logprob
from .autodiff import Tape
from .generators import gen_uniform
from .problems import Instance, PreferenceGrid, ProblemKind, preference_grid
from .rng import substream
from .scalarize import IdealPoint, tchebycheff, weighted_sum


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              st: AdamState) -> None:
    st.t += 1
    for k, g in grads.items():
        if k not in st.m:
            st.m[k] = np.zeros_like(arrays[k])
            st.v[k] = np.zeros_like(arrays[k])
        st.m[k] = st.beta1 * st.m[k] + (1 - st.beta1) * g
        st.v[k] = st.beta2 * st.v[k] + (1 - st.beta2) * (g * g)
        m_hat = st.m[k] / (1 - st.beta1 ** st.t)
        v_hat = st.v[k] / (1 - st.beta2 ** st.t)
        arrays[k] -= st.lr * m_hat / (np.sqrt(v_hat) + st.eps)


def scalarized_losses(objectives: np.ndarray, lam: np.ndarray, loss: str,
                      z_star: np.ndarray | None = None) -> np.ndarray:
    """Per-rollout scalar losses, shape (batch, rollouts)."""
    lam = np.asarray(lam, dtype=float)
    if loss == "ws":
        return objectives @ lam
    if loss == "tch":
        if z_star is None:
            raise ValueError("tch loss needs an ideal point")
        return np.max(lam * np.abs(objectives - z_star), axis=-1)
    raise ValueError(f"unknown loss {loss!r}")


def advantages(losses: np.ndarray) -> np.ndarray:
    """Loss minus the per-instance rollout-mean baseline."""
    return losses - losses.mean(axis=1, keepdims=True)


def reinforce_step(policy: Policy, opt: AdamState, instances: list[Instance],
                   lam: np.ndarray, M: int, rng, *, loss: str = "ws",
                   z_star: np.ndarray | None = None) -> dict:
    """One policy-gradient step on a mini-batch sharing preference `lam`."""
    if not instances:
        raise ValueError("empty mini-batch")
    tape = Tape()
    params = policy.leaves(tape, trainable=True)
    batch = policy.rollout(tape, params, instances, lam, M, "sample", rng)
    losses = scalarized_losses(batch.objectives, lam, loss, z_star)
    batch.losses = losses
    adv = advantages(losses)
    surrogate = mean_weighted_logprob(batch, adv)
    tape.backward(surrogate)
    grads = {}
    sq_norm = 0.0
    for name, node in params.items():
        g = node.grad if node.grad is not None else np.zeros_like(node.value)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}; step aborted")
        grads[name] = g
        sq_norm += float((g * g).sum())
    adam_step(policy.arrays, grads, opt)
    return {
        "mean_loss": float(losses.mean()),
        "mean_abs_advantage": float(np.abs(adv).mean()),
        "grad_norm": float(np.sqrt(sq_norm)),
        "objectives": batch.objectives,
    }


@dataclass
class TrainConfig:
    kind: ProblemKind = ProblemKind.BI_TSP
    n: int = 10
    epochs: int = 50
    instances_per_epoch: int = 512
    batch_size: int = 32
    rollouts: int = 8
    lr: float = 1e-4
    loss: str = "ws"
    grid_resolution: int | None = None
    seed: int = 0
    val_instances: int = 16
    val_grid_resolution: int = 10
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_dim: int = 128

    def resolved_grid(self) -> PreferenceGrid:
        m = self.kind.num_objectives
        res = self.grid_resolution if self.grid_resolution is not None else (100 if m == 2 else 13)
        return preference_grid(m, res)


def epoch_data_seed(seed: int, epoch: int) -> int:
    return int(substream(seed, "data", epoch).integers(2**63))


def run_epoch(policy: Policy, opt: AdamState, grid: PreferenceGrid, *,
              batch_size: int, rollouts: int, loss: str, seed: int, epoch: int,
              clean_pool: list[Instance], batches: int | None = None,
              hard_by_pref: dict[int, list[Instance]] | None = None,
              mix: tuple[int, int] = (1, 0), preference_hook=None,
              log_rows: list | None = None, ideal: IdealPoint | None = None) -> dict:
    """Mini-batch loop shared by clean and adversarial training.

    preference_hook(batch_instances, lam, lam_idx, rng_key) may substitute the
    training preference and loss tag (used by the hardness-aware defense).
    Stratification holds the clean:hard ratio exactly (up to rounding) in
    every batch; hard instances are drawn from the pool attacked under the
    batch preference.
    """
    n_batches = batches if batches is not None else max(1, len(clean_pool) // batch_size)
    ideal = ideal if ideal is not None else IdealPoint()
    epoch_metrics = []
    source_counts = []
    for j in range(n_batches):
        rng_batch = substream(seed, "batch", epoch, j)
        lam_idx = int(rng_batch.integers(len(grid)))
        lam = grid[lam_idx]
        n_hard = 0
        hard_insts: list[Instance] = []
        if hard_by_pref:
            c, h = mix
            n_hard = int(round(batch_size * h / (c + h)))
            pool = hard_by_pref[lam_idx]
            if n_hard and pool:
                pick = rng_batch.integers(len(pool), size=n_hard)
                hard_insts = [pool[i] for i in pick]
            else:
                n_hard = 0
        n_clean = batch_size - n_hard
        pick = rng_batch.integers(len(clean_pool), size=n_clean)
        insts = [clean_pool[i] for i in pick] + hard_insts
        source_counts.append((n_clean, n_hard))

        train_lam, train_loss = lam, loss
        if preference_hook is not None:
            train_lam, train_loss = preference_hook(insts, lam, lam_idx, (epoch, j), ideal)
        rng_roll = substream(seed, "rollout", epoch, j)
        metrics = reinforce_step(policy, opt, insts, train_lam, rollouts, rng_roll,
                                 loss=train_loss, z_star=ideal.get(grid.m))
        ideal.observe(metrics.pop("objectives").reshape(-1, grid.m))
        metrics["lam_index"] = lam_idx
        epoch_metrics.append(metrics)
        if log_rows is not None:
            log_rows.append({
                "step": len(log_rows) + 1,
                "mean_loss": metrics["mean_loss"],
                "grad_norm": metrics["grad_norm"],
                "val_hv": "",
            })
    return {
        "mean_loss": float(np.mean([m["mean_loss"] for m in epoch_metrics])),
        "mean_grad_norm": float(np.mean([m["grad_norm"] for m in epoch_metrics])),
        "source_counts": source_counts,
    }


def validation_hv(policy: Policy, val_instances: list[Instance],
                  grid: PreferenceGrid, r: np.ndarray | None = None) -> float:
    fronts = model_fronts(policy, val_instances, grid)
    if r is None:
        r = reference_point(fronts)
    return float(np.mean([hypervolume(f, r) for f in fronts]))


def train_clean(cfg: TrainConfig, *, initial: Policy | None = None,
                log_rows: list | None = None) -> tuple[Policy, dict]:
    """Clean REINFORCE training; checkpoints the best-by-validation-HV policy."""
    grid = cfg.resolved_grid()
    val_grid = preference_grid(grid.m, min(grid.resolution, cfg.val_grid_resolution))
    policy = initial.copy() if initial is not None else Policy.init(
        cfg.kind, substream(cfg.seed, "init"),
        dim=cfg.dim, layers=cfg.layers, heads=cfg.heads, ff_dim=cfg.ff_dim)
    opt = AdamState(lr=cfg.lr)
    val_set = gen_uniform(cfg.kind, cfg.n, cfg.val_instances,
                          int(substream(cfg.seed, "val").integers(2**63)))
    best = policy.copy()
    best_hv = -np.inf
    val_r = None
    history = []
    for epoch in range(cfg.epochs):
        pool = gen_uniform(cfg.kind, cfg.n, cfg.instances_per_epoch,
                           epoch_data_seed(cfg.seed, epoch))
        stats = run_epoch(policy, opt, grid, batch_size=cfg.batch_size,
                          rollouts=cfg.rollouts, loss=cfg.loss, seed=cfg.seed,
                          epoch=epoch, clean_pool=pool, log_rows=log_rows)
        if val_r is None:
            fronts = model_fronts(policy, val_set, val_grid)
            val_r = reference_point(fronts)
        hv = validation_hv(policy, val_set, val_grid, val_r)
        if hv > best_hv:
            best_hv = hv
            best = policy.copy()
        if log_rows is not None and log_rows:
            log_rows[-1]["val_hv"] = hv
        history.append({"epoch": epoch, "val_hv": hv, **stats})
    return best, {"best_val_hv": best_hv, "history": history,
                  "final": policy, "grid": grid}
