"""Command-line surface: gen / train / attack / defend / import-hard /
eval / probe / sweep / report.

Every subcommand accepts --config pointing at a flat JSON file whose keys
match the flag names (dashes may be written as underscores); explicit flags
win over config-file values.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .attack import AttackConfig, build_hard_set, export_hard_set, import_hard_set
from .defense import DpdConfig, dpd_train
from .generators import generate
from .harness import (
    ATTACK_EVAL_DISTS,
    DEFENSE_EVAL_DISTS,
    PROBE_C_DISTS,
    checkpoint_hash,
    cycled_hard_subset,
    run_attack_eval,
    run_defense_eval,
    run_probe,
    run_sweep,
    summarize_report,
    write_report,
)
from .policy import Policy
from .problems import ProblemKind, preference_grid, read_instances, write_instances
from .training import TrainConfig, train_clean


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file; flags override it")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            for k, v in json.load(fh).items():
                merged[k.replace("-", "_")] = v
    for k, v in vars(args).items():
        if k in ("command", "config"):
            continue
        if v is not None:
            merged[k] = v
    return merged


def _grid_for(m: int, grid_h: int | None):
    if grid_h is None:
        grid_h = 100 if m == 2 else 13
    return preference_grid(m, grid_h)


def _parse_values(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mocobench",
        description="Robustness benchmark for preference-conditioned neural "
                    "multi-objective combinatorial optimization, at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance set (JSONL)")
    p.add_argument("--kind", choices=[k.value for k in ProblemKind])
    p.add_argument("--n", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--dist", choices=["uniform", "gmm", "lognormal", "beta", "gamma"])
    p.add_argument("--c-dist", dest="c_dist", type=float)
    p.add_argument("--k-clusters", dest="k_clusters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_config_flag(p)

    p = sub.add_parser("train", help="clean REINFORCE training")
    p.add_argument("--kind", choices=[k.value for k in ProblemKind])
    p.add_argument("--n", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--per-epoch", dest="per_epoch", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=["ws", "tch"])
    p.add_argument("--grid-h", dest="grid_h", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training-log CSV path")
    _add_config_flag(p)

    p = sub.add_parser("attack", help="build a hard-instance set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True, help="clean JSONL")
    p.add_argument("--grid-h", dest="grid_h", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--loss", choices=["ws", "tch"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="hard-set JSONL")
    _add_config_flag(p)

    p = sub.add_parser("defend", help="adversarial fine-tuning")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--grid-h", dest="grid_h", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--n-perturb", dest="n_perturb", type=int)
    p.add_argument("--mix", default=None, help="clean:hard ratio, e.g. 1:1")
    p.add_argument("--batch", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clean-per-epoch", dest="clean_per_epoch", type=int)
    p.add_argument("--attack-instances", dest="attack_instances", type=int)
    p.add_argument("--batches-per-epoch", dest="batches_per_epoch", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--no-attack", dest="no_attack", action="store_true", default=None)
    p.add_argument("--import-hard", dest="import_hard", default=None,
                   help="pre-generated hard-set JSONL used instead of the attack")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="defended checkpoint path")
    _add_config_flag(p)

    p = sub.add_parser("import-hard", help="validate (and re-export) a hard set")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None, help="canonical re-export path")

    p = sub.add_parser("eval", help="attack or defense evaluation report")
    p.add_argument("--mode", choices=["attack", "defense"], default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--defended", default=None, help="defended checkpoint (defense mode)")
    p.add_argument("--n", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--grid-h", dest="grid_h", type=int)
    p.add_argument("--dists", default=None, help="comma-separated set list")
    p.add_argument("--c-dist", dest="c_dist", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--imported", default=None, help="hard-set JSONL for the imported column")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="report CSV path")
    _add_config_flag(p)

    p = sub.add_parser("probe", help="gap vs oracle across mixture spreads")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--c-dists", dest="c_dists", default=None)
    p.add_argument("--grid-h", dest="grid_h", type=int)
    p.add_argument("--k-clusters", dest="k_clusters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_config_flag(p)

    p = sub.add_parser("sweep", help="parameter sweep (t, alpha, eps, n_perturb)")
    p.add_argument("--param", choices=["t", "alpha", "eps", "n_perturb"], required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--grid-h", dest="grid_h", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--epochs", type=int, help="defense epochs for eps/n_perturb sweeps")
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_config_flag(p)

    p = sub.add_parser("report", help="pretty-print report CSVs")
    p.add_argument("inputs", nargs="+")
    return parser


def _cmd_gen(args) -> int:
    cfg = _resolve(args, dict(kind="bitsp", n=10, count=100, dist="uniform",
                              c_dist=10.0, k_clusters=3, seed=0))
    instances = generate(ProblemKind(cfg["kind"]), int(cfg["n"]), int(cfg["count"]),
                         cfg["dist"], int(cfg["seed"]), c_dist=float(cfg["c_dist"]),
                         k_clusters=int(cfg["k_clusters"]))
    write_instances(cfg["out"], instances)
    print(f"wrote {len(instances)} instances to {cfg['out']}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve(args, dict(kind="bitsp", n=10, epochs=50, per_epoch=512,
                              batch=32, rollouts=8, lr=1e-4, loss="ws",
                              grid_h=None, seed=0, log=None))
    tc = TrainConfig(
        kind=ProblemKind(cfg["kind"]), n=int(cfg["n"]), epochs=int(cfg["epochs"]),
        instances_per_epoch=int(cfg["per_epoch"]), batch_size=int(cfg["batch"]),
        rollouts=int(cfg["rollouts"]), lr=float(cfg["lr"]), loss=cfg["loss"],
        grid_resolution=cfg["grid_h"], seed=int(cfg["seed"]))
    log_rows: list[dict] = []
    best, info = train_clean(tc, log_rows=log_rows)
    best.save(cfg["out"])
    if cfg["log"]:
        with open(cfg["log"], "w", encoding="utf-8") as fh:
            fh.write("step,mean_loss,grad_norm,val_hv\n")
            for row in log_rows:
                fh.write(f"{row['step']},{row['mean_loss']!r},{row['grad_norm']!r},"
                         f"{row['val_hv']!r}\n".replace("''", ""))
    print(f"saved checkpoint {cfg['out']} (best val HV {info['best_val_hv']:.4f})")
    return 0


def _cmd_attack(args) -> int:
    cfg = _resolve(args, dict(grid_h=None, alpha=0.01, steps=3, rollouts=8,
                              loss="ws", seed=0))
    policy = Policy.load(cfg["ckpt"])
    clean = read_instances(cfg["infile"])
    grid = _grid_for(policy.cfg.m, cfg["grid_h"])
    ac = AttackConfig(alpha=float(cfg["alpha"]), steps=int(cfg["steps"]),
                      rollouts=int(cfg["rollouts"]), loss=cfg["loss"],
                      seed=int(cfg["seed"]))
    hard = build_hard_set(policy, clean, grid, ac,
                          checkpoint_id=checkpoint_hash(cfg["ckpt"]))
    export_hard_set(cfg["out"], hard)
    print(f"wrote {len(hard)} hard instances ({len(grid)} preferences x "
          f"{len(clean)} sources) to {cfg['out']}")
    return 0


def _cmd_defend(args) -> int:
    cfg = _resolve(args, dict(grid_h=None, n=10, epochs=10, eps=0.1, n_perturb=8,
                              mix="1:1", batch=32, rollouts=8, lr=1e-4,
                              clean_per_epoch=128, attack_instances=64,
                              batches_per_epoch=None, alpha=0.01, steps=3,
                              no_attack=False, import_hard=None, seed=0))
    policy = Policy.load(cfg["ckpt"])
    grid = _grid_for(policy.cfg.m, cfg["grid_h"])
    mix = tuple(int(v) for v in str(cfg["mix"]).split(":"))
    attack = None
    if not cfg["no_attack"] and cfg["import_hard"] is None:
        attack = AttackConfig(alpha=float(cfg["alpha"]), steps=int(cfg["steps"]),
                              rollouts=int(cfg["rollouts"]), seed=int(cfg["seed"]))
    dc = DpdConfig(
        instance_n=int(cfg["n"]), eps=float(cfg["eps"]), n_perturb=int(cfg["n_perturb"]),
        mix=mix, epochs=int(cfg["epochs"]), batch_size=int(cfg["batch"]),
        rollouts=int(cfg["rollouts"]), loss="tch",
        clean_per_epoch=int(cfg["clean_per_epoch"]),
        attack_instances=int(cfg["attack_instances"]),
        batches_per_epoch=cfg["batches_per_epoch"], lr=float(cfg["lr"]),
        attack=attack, seed=int(cfg["seed"]))
    imported = import_hard_set(cfg["import_hard"]) if cfg["import_hard"] else None
    tuned, history = dpd_train(policy, grid, dc, imported_hard=imported)
    tuned.save(cfg["out"])
    print(f"saved defended checkpoint {cfg['out']} after {len(history)} epochs")
    return 0


def _cmd_import_hard(args) -> int:
    hard = import_hard_set(args.infile)
    print(f"valid hard set: {len(hard)} instances, {len(hard.preferences)} preferences, "
          f"{len(hard.source_ids)} sources, checkpoint {hard.checkpoint_id or '-'}")
    if args.out:
        export_hard_set(args.out, hard)
        print(f"re-exported canonical form to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve(args, dict(mode="attack", n=10, count=50, grid_h=None,
                              dists=None, c_dist=30.0, alpha=0.01, steps=3,
                              rollouts=8, restarts=10, seed=0, imported=None,
                              defended=None))
    policy = Policy.load(cfg["ckpt"])
    grid = _grid_for(policy.cfg.m, cfg["grid_h"])
    ac = AttackConfig(alpha=float(cfg["alpha"]), steps=int(cfg["steps"]),
                      rollouts=int(cfg["rollouts"]), seed=int(cfg["seed"]))
    hashes = {"ckpt": checkpoint_hash(cfg["ckpt"])}
    if cfg["mode"] == "attack":
        dists = tuple(str(cfg["dists"]).split(",")) if cfg["dists"] else ATTACK_EVAL_DISTS
        rows, meta = run_attack_eval(
            policy, n=int(cfg["n"]), count=int(cfg["count"]), grid=grid,
            attack_cfg=ac, dists=dists, seed=int(cfg["seed"]),
            c_dist=float(cfg["c_dist"]), restarts=int(cfg["restarts"]),
            meta_extra={"checkpoints": hashes, "config": _public(cfg)})
        columns = ["dist", "hv_oracle", "hv_model", "gap", "wall_clock_s"]
    else:
        if not cfg["defended"]:
            raise SystemExit("defense mode needs --defended")
        hashes["defended"] = checkpoint_hash(cfg["defended"])
        models = {"clean": policy, "dpd": Policy.load(cfg["defended"])}
        dists = tuple(str(cfg["dists"]).split(",")) if cfg["dists"] else DEFENSE_EVAL_DISTS
        imported = None
        if cfg["imported"]:
            imported = cycled_hard_subset(import_hard_set(cfg["imported"]))
            if "imported" not in dists:
                dists = tuple(dists) + ("imported",)
        rows, meta = run_defense_eval(
            models, n=int(cfg["n"]), count=int(cfg["count"]), grid=grid,
            attack_cfg=ac, attack_with="clean", dists=dists, seed=int(cfg["seed"]),
            c_dist=float(cfg["c_dist"]), restarts=int(cfg["restarts"]),
            imported=imported,
            meta_extra={"checkpoints": hashes, "config": _public(cfg)})
        columns = ["model", "dist", "hv_oracle", "hv_model", "gap", "wall_clock_s"]
    write_report(cfg["out"], rows, columns, meta)
    print(summarize_report(cfg["out"]))
    return 0


def _cmd_probe(args) -> int:
    cfg = _resolve(args, dict(n=10, count=200, c_dists=None, grid_h=None,
                              k_clusters=3, restarts=10, seed=0))
    policy = Policy.load(cfg["ckpt"])
    grid = _grid_for(policy.cfg.m, cfg["grid_h"])
    c_dists = [float(v) for v in str(cfg["c_dists"]).split(",")] if cfg["c_dists"] \
        else list(PROBE_C_DISTS)
    rows, meta = run_probe(
        policy, n=int(cfg["n"]), count=int(cfg["count"]), grid=grid,
        c_dists=c_dists, k_clusters=int(cfg["k_clusters"]), seed=int(cfg["seed"]),
        restarts=int(cfg["restarts"]),
        meta_extra={"checkpoints": {"ckpt": checkpoint_hash(cfg["ckpt"])},
                    "config": _public(cfg)})
    write_report(cfg["out"], rows, ["c_dist", "hv_model", "hv_oracle", "gap",
                                    "wall_clock_s"], meta)
    print(summarize_report(cfg["out"]))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolve(args, dict(n=10, count=20, grid_h=None, alpha=0.01, steps=3,
                              rollouts=8, epochs=3, restarts=5, seed=0))
    policy = Policy.load(cfg["ckpt"])
    grid = _grid_for(policy.cfg.m, cfg["grid_h"])
    ac = AttackConfig(alpha=float(cfg["alpha"]), steps=int(cfg["steps"]),
                      rollouts=int(cfg["rollouts"]), seed=int(cfg["seed"]))
    dc = DpdConfig(instance_n=int(cfg["n"]), epochs=int(cfg["epochs"]),
                   attack=ac, seed=int(cfg["seed"]))
    values = _parse_values(cfg["values"])
    if cfg["param"] in ("t", "n_perturb"):
        values = [int(v) for v in values]
    rows, meta = run_sweep(
        cfg["param"], values, policy, n=int(cfg["n"]), count=int(cfg["count"]),
        grid=grid, attack_cfg=ac, dpd_cfg=dc, seed=int(cfg["seed"]),
        restarts=int(cfg["restarts"]),
        meta_extra={"checkpoints": {"ckpt": checkpoint_hash(cfg["ckpt"])},
                    "config": _public(cfg)})
    write_report(cfg["out"], rows,
                 [cfg["param"], "hv_clean", "gap_clean", "hv_attacked",
                  "gap_attacked", "wall_clock_s"], meta)
    print(summarize_report(cfg["out"]))
    return 0


def _cmd_report(args) -> int:
    for path in args.inputs:
        print(f"== {path}")
        print(summarize_report(path))
    return 0


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "defend": _cmd_defend,
    "import-hard": _cmd_import_hard,
    "eval": _cmd_eval,
    "probe": _cmd_probe,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
