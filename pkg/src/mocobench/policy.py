"""Preference-conditioned constructive policy.

Shared attention encoder over instance features; the decoding context is the
mean-pooled embedding concatenated with an embedded preference vector. The
masked pointer decoder emits M rollouts per instance with accumulated
log-probabilities. Feature arrays may be registered as tape input leaves so
the same forward pass yields gradients with respect to the instance itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .problems import Instance, ProblemKind, evaluate_objectives

EDGE_EPS = 1e-16  # keeps sqrt differentiable if two nodes coincide


@dataclass
class PolicyConfig:
    kind: ProblemKind
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_dim: int = 128
    logit_clip: float = 10.0

    @property
    def input_dim(self) -> int:
        # CVRP nodes carry (x, y, demand); the demand channel is appended to
        # the stored coordinate features at encode time.
        if self.kind is ProblemKind.BI_CVRP:
            return 3
        return self.kind.feature_columns

    @property
    def m(self) -> int:
        return self.kind.num_objectives

    def to_meta(self) -> dict:
        return {
            "kind": self.kind.value,
            "dim": self.dim,
            "layers": self.layers,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "logit_clip": self.logit_clip,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "PolicyConfig":
        return cls(
            kind=ProblemKind(meta["kind"]),
            dim=int(meta["dim"]),
            layers=int(meta["layers"]),
            heads=int(meta["heads"]),
            ff_dim=int(meta["ff_dim"]),
            logit_clip=float(meta["logit_clip"]),
        )


def _param_shapes(cfg: PolicyConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.dim, cfg.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embed_w": (cfg.input_dim, d),
        "embed_b": (d,),
        "pref_w": (cfg.m, d),
        "ctx_w": (2 * d, d),
        "dec_key": (d, d),
    }
    for i in range(cfg.layers):
        shapes[f"l{i}_wq"] = (d, d)
        shapes[f"l{i}_wk"] = (d, d)
        shapes[f"l{i}_wv"] = (d, d)
        shapes[f"l{i}_wo"] = (d, d)
        shapes[f"l{i}_ff1"] = (d, f)
        shapes[f"l{i}_ff1b"] = (f,)
        shapes[f"l{i}_ff2"] = (f, d)
        shapes[f"l{i}_ff2b"] = (d,)
    kind = cfg.kind
    if kind.is_tsp:
        shapes["dec_last"] = (d, d)
        shapes["dec_first"] = (d, d)
    elif kind is ProblemKind.BI_CVRP:
        shapes["dec_last"] = (d, d)
        shapes["dec_state"] = (1, d)
    else:
        shapes["dec_state"] = (1, d)
        shapes["stop_emb"] = (d,)
    return shapes


@dataclass
class RolloutBatch:
    """M constructions per instance with their log-probs and objectives."""

    kind: ProblemKind
    instances: list[Instance]
    lam: np.ndarray
    solutions: list[list]
    logp: Node
    objectives: np.ndarray
    tape: Tape
    features: Node
    mode: str
    losses: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return len(self.instances)

    @property
    def rollouts(self) -> int:
        return self.logp.value.shape[1]


class Policy:
    """Parameter container plus encode/rollout over a tape."""

    def __init__(self, cfg: PolicyConfig, arrays: dict[str, np.ndarray]):
        self.cfg = cfg
        self.arrays = arrays

    @classmethod
    def init(cls, kind: ProblemKind, rng: np.random.Generator, **cfg_kwargs) -> "Policy":
        cfg = PolicyConfig(kind=kind, **cfg_kwargs)
        arrays = {}
        for name, shape in _param_shapes(cfg).items():
            fan_in = shape[0] if len(shape) > 1 else shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(cfg, arrays)

    def copy(self) -> "Policy":
        return Policy(self.cfg, {k: v.copy() for k, v in self.arrays.items()})

    def save(self, path) -> None:
        ad.save_arrays(path, self.arrays, meta=self.cfg.to_meta())

    @classmethod
    def load(cls, path) -> "Policy":
        arrays, meta = ad.load_arrays(path)
        return cls(PolicyConfig.from_meta(meta), arrays)

    def leaves(self, tape: Tape, trainable: bool) -> dict[str, Node]:
        if trainable:
            return {k: tape.param(v) for k, v in self.arrays.items()}
        return {k: Tape.const(v) for k, v in self.arrays.items()}

    # -- encoder ---------------------------------------------------------

    def encode(self, tape: Tape, feats: Node, lam: np.ndarray,
               params: dict[str, Node]):
        """Node embeddings plus a context = concat(mean-pooled, embedded lam)."""
        cfg = self.cfg
        h = ad.add(ad.matmul(feats, params["embed_w"]), params["embed_b"])
        for i in range(cfg.layers):
            h = ad.add(h, self._mha(h, params, i))
            ff = ad.tanh(ad.add(ad.matmul(h, params[f"l{i}_ff1"]), params[f"l{i}_ff1b"]))
            h = ad.add(h, ad.add(ad.matmul(ff, params[f"l{i}_ff2"]), params[f"l{i}_ff2b"]))
        graph = ad.reduce_mean(h, axis=-2)
        lam_e = ad.matmul(Tape.const(np.asarray(lam, dtype=float).reshape(1, -1)),
                          params["pref_w"])
        batch = h.value.shape[0]
        lam_b = ad.mul(Tape.const(np.ones((batch, 1))), lam_e)
        ctx = ad.matmul(ad.concat([graph, lam_b], axis=-1), params["ctx_w"])
        return h, ctx

    def _mha(self, h: Node, params: dict[str, Node], layer: int) -> Node:
        cfg = self.cfg
        b, n, d = h.value.shape
        hd = d // cfg.heads

        def split(x: Node) -> Node:
            return ad.transpose(ad.reshape(x, (b, n, cfg.heads, hd)), (0, 2, 1, 3))

        q = split(ad.matmul(h, params[f"l{layer}_wq"]))
        k = split(ad.matmul(h, params[f"l{layer}_wk"]))
        v = split(ad.matmul(h, params[f"l{layer}_wv"]))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
        ctx = ad.matmul(ad.softmax(scores), v)
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
        return ad.matmul(merged, params[f"l{layer}_wo"])

    def assemble_input(self, feats: Node, instances: list[Instance]) -> Node:
        """Encoder input from stored features; CVRP appends the (frozen)
        demand channel so feature-leaf gradients stay on the coordinates."""
        if self.cfg.kind is ProblemKind.BI_CVRP:
            dem = np.stack([np.concatenate(([0.0], inst.demands)) for inst in instances])
            return ad.concat([feats, Tape.const(dem[..., None])], axis=-1)
        return feats

    # -- decoder ---------------------------------------------------------

    def _action_embeddings(self, h: Node, params: dict[str, Node]) -> Node:
        if self.cfg.kind is ProblemKind.BI_KP:
            b = h.value.shape[0]
            stop = ad.mul(Tape.const(np.ones((b, 1, 1))),
                          ad.reshape(params["stop_emb"], (1, 1, self.cfg.dim)))
            return ad.concat([h, stop], axis=-2)
        return h

    def rollout(self, tape: Tape, params: dict[str, Node], instances: list[Instance],
                lam: np.ndarray, M: int, mode: str, rng, *,
                features: Node | None = None, trace: list | None = None) -> RolloutBatch:
        """Construct M solutions per instance; sample or greedy.

        When n >= M, sampled and multi-start rollouts of routing kinds start
        from distinct forced first nodes (their log-prob term is zero);
        knapsack rollouts always sample every step.
        """
        if mode not in ("sample", "greedy"):
            raise ValueError(f"unknown rollout mode {mode!r}")
        if M < 1:
            raise ValueError("need M >= 1")
        feats = features if features is not None else Tape.const(_stack_features(instances))
        actions, logp, state = self._decode(tape, params, instances, lam, M, mode, rng, feats,
                                            trace=trace)
        solutions = _actions_to_solutions(self.cfg.kind, instances, actions, M)
        objectives = _batch_objectives(self.cfg.kind, instances, solutions)
        return RolloutBatch(
            kind=self.cfg.kind, instances=instances, lam=np.asarray(lam, dtype=float),
            solutions=solutions, logp=logp, objectives=objectives, tape=tape,
            features=feats, mode=mode,
        )

    def replay_logprob(self, tape: Tape, params: dict[str, Node],
                       instances: list[Instance], lam: np.ndarray,
                       solutions: list[list], *, features: Node | None = None,
                       forced_start: bool | None = None) -> Node:
        """Log-probability of fixed solutions under the current parameters."""
        feats = features if features is not None else Tape.const(_stack_features(instances))
        M = len(solutions[0])
        actions = _solutions_to_actions(self.cfg.kind, instances, solutions)
        _, logp, _ = self._decode(tape, params, instances, lam, M, "replay", None, feats,
                                  forced_actions=actions, forced_start=forced_start)
        return logp

    def _decode(self, tape, params, instances, lam, M, mode, rng, feats,
                forced_actions=None, forced_start=None, trace=None):
        kind = self.cfg.kind
        n = instances[0].n
        B = len(instances)
        R = B * M
        d = self.cfg.dim

        h, ctx = self.encode(tape, self.assemble_input(feats, instances), lam, params)
        keys = ad.matmul(self._action_embeddings(h, params), params["dec_key"])
        keys_t = ad.transpose(keys, (0, 2, 1))  # (B, d, actions)
        ctx3 = ad.reshape(ctx, (B, 1, d))
        n_act = keys.value.shape[1]

        state = _DecodeState(kind, instances, M)
        if forced_start is None:
            forced_start = kind is not ProblemKind.BI_KP and n >= M
        logp_total: Node | None = None
        step = 0
        max_steps = 2 * n + 2
        while state.any_alive():
            if step >= max_steps:
                raise RuntimeError("decoder failed to terminate")
            if step == 0 and forced_start:
                chosen = state.forced_starts() if forced_actions is None \
                    else forced_actions[:, 0]
                state.apply(chosen)
                step += 1
                continue
            q = ctx3  # (B, 1, d), broadcast over rollouts below
            if kind is not ProblemKind.BI_KP and state.last is not None:
                last2 = state.last.reshape(B, M)
                q = ad.add(q, ad.matmul(ad.gather_rows(h, last2), params["dec_last"]))
            if kind.is_tsp and state.first is not None:
                first2 = state.first.reshape(B, M)
                q = ad.add(q, ad.matmul(ad.gather_rows(h, first2), params["dec_first"]))
            if kind is ProblemKind.BI_CVRP:
                rem = Tape.const(state.remaining.copy().reshape(B, M, 1))
                q = ad.add(q, ad.matmul(rem, params["dec_state"]))
            elif kind is ProblemKind.BI_KP:
                q = ad.add(q, ad.matmul(state.remaining_node(tape, feats), params["dec_state"]))
            if q.value.shape[1] != M:
                q = ad.broadcast_to(q, (B, M, d))

            scores = ad.matmul(q, keys_t)  # (B, M, actions)
            logits = ad.mul(ad.tanh(ad.mul(scores, 1.0 / math.sqrt(d))), self.cfg.logit_clip)
            mask = state.mask()
            alive = state.alive.copy()
            if np.any(alive & np.all(mask, axis=1)):
                raise RuntimeError("alive row with no feasible action")
            probs = ad.softmax(ad.masked_fill(logits, mask.reshape(B, M, n_act)))
            flat_probs = probs.value.reshape(R, n_act)

            if forced_actions is not None:
                chosen = forced_actions[:, step]
            elif mode == "greedy":
                chosen = np.argmax(flat_probs, axis=1)
            else:
                u = np.maximum(_draw_uniform(rng, B, M), 1e-300)
                cum = np.cumsum(flat_probs, axis=1)
                chosen = np.minimum((cum < u[:, None]).sum(axis=1), n_act - 1)
            chosen = np.where(alive, chosen, state.parked_action())
            assert not np.any(mask[np.arange(R), chosen] & alive), "sampled masked action"
            if trace is not None:
                trace.append({"probs": flat_probs.copy(), "mask": mask.copy(),
                              "chosen": chosen.copy(), "alive": alive.copy()})

            picked = ad.gather_last(probs, chosen.reshape(B, M))
            # parked rows may point at a zero-probability slot; pin them to 1
            # so log stays finite (their contribution is zeroed below).
            picked = ad.masked_fill(picked, ~alive.reshape(B, M), 1.0)
            lp = ad.mul(ad.log(picked), Tape.const(alive.astype(float).reshape(B, M)))
            logp_total = lp if logp_total is None else ad.add(logp_total, lp)
            state.apply(np.where(alive, chosen, -1))
            step += 1

        if logp_total is None:
            logp_total = Tape.const(np.zeros((B, M)))
        return state.actions, logp_total, state


class _DecodeState:
    """Numpy-side feasibility bookkeeping for one batched decode."""

    def __init__(self, kind: ProblemKind, instances: list[Instance], M: int):
        self.kind = kind
        self.M = M
        self.n = instances[0].n
        B = len(instances)
        self.R = B * M
        self.actions: list[np.ndarray] = []
        self.last: np.ndarray | None = None
        self.first: np.ndarray | None = None
        if kind.is_tsp:
            self.visited = np.zeros((self.R, self.n), dtype=bool)
            self.alive = np.ones(self.R, dtype=bool)
        elif kind is ProblemKind.BI_CVRP:
            self.visited = np.zeros((self.R, self.n + 1), dtype=bool)
            self.alive = np.ones(self.R, dtype=bool)
            self.demands = np.repeat(np.stack([np.concatenate(([0.0], inst.demands))
                                               for inst in instances]), M, axis=0)
            self.capacity = instances[0].capacity
            self.remaining = np.full(self.R, self.capacity)
            self.last = np.zeros(self.R, dtype=int)
        else:
            self.taken = np.zeros((self.R, self.n), dtype=bool)
            self.alive = np.ones(self.R, dtype=bool)
            self.capacity = instances[0].capacity
            self.weights = np.repeat(np.stack([inst.features[:, 0] for inst in instances]),
                                     M, axis=0)
            self.rem_value = np.full(self.R, self.capacity)
            self._taken_weight_nodes: list = []

    def any_alive(self) -> bool:
        if self.kind.is_tsp:
            return bool(np.any(self.alive & (self.visited.sum(axis=1) < self.n)))
        if self.kind is ProblemKind.BI_CVRP:
            return bool(np.any(self.alive & (self.visited[:, 1:].sum(axis=1) < self.n)))
        return bool(np.any(self.alive))

    def forced_starts(self) -> np.ndarray:
        starts = np.arange(self.R) % self.M
        if self.kind is ProblemKind.BI_CVRP:
            starts = starts % self.n + 1
        else:
            starts = starts % self.n
        return starts

    def parked_action(self) -> int:
        return 0

    def mask(self) -> np.ndarray:
        if self.kind.is_tsp:
            return self.visited.copy()
        if self.kind is ProblemKind.BI_CVRP:
            mask = self.visited.copy()
            mask[:, 1:] |= self.demands[:, 1:] > self.remaining[:, None] + 1e-12
            at_depot = self.last == 0
            mask[at_depot, 0] = True
            return mask
        mask = np.zeros((self.R, self.n + 1), dtype=bool)
        mask[:, : self.n] = self.taken | (self.weights > self.rem_value[:, None] + 1e-12)
        return mask  # stop column always available

    def apply(self, chosen: np.ndarray) -> None:
        # chosen == -1 marks parked (already finished) rows.
        self.actions.append(chosen.copy())
        act = chosen >= 0
        idx = np.where(act)[0]
        c = chosen[idx]
        safe = np.where(act, chosen, 0)
        if self.kind.is_tsp:
            self.visited[idx, c] = True
            if self.first is None:
                self.first = safe.copy()
                self.last = safe.copy()
            else:
                self.last = np.where(act, safe, self.last)
        elif self.kind is ProblemKind.BI_CVRP:
            customers = idx[c > 0]
            self.visited[customers, chosen[customers]] = True
            self.remaining[idx] = np.where(
                c == 0, self.capacity, self.remaining[idx] - self.demands[idx, c])
            self.last = np.where(act, safe, self.last)
            served = self.visited[:, 1:].sum(axis=1) == self.n
            self.alive &= ~served
        else:
            stop = c == self.n
            items = idx[~stop]
            self.taken[items, chosen[items]] = True
            self.rem_value[items] -= self.weights[items, chosen[items]]
            self.alive[idx[stop]] = False

    def remaining_node(self, tape, feats: Node) -> Node:
        """On-tape remaining knapsack capacity so gradients reach the weights."""
        B = self.R // self.M
        w_col = ad.reshape(ad.slice_last(feats, 0, 1), (B, 1, self.n))
        sel = Tape.const(self.taken.astype(float).reshape(B, self.M, self.n))
        used = ad.reduce_sum(ad.mul(w_col, sel), axis=-1, keepdims=True)
        return ad.sub(Tape.const(np.full((B, self.M, 1), self.capacity)), used)


def _draw_uniform(rng, B: int, M: int) -> np.ndarray:
    if isinstance(rng, (list, tuple)):
        if len(rng) != B:
            raise ValueError("need one generator per instance")
        return np.concatenate([g.random(M) for g in rng])
    return rng.random(B * M)


def _stack_features(instances: list[Instance]) -> np.ndarray:
    return np.stack([inst.features for inst in instances])


def _actions_to_solutions(kind: ProblemKind, instances, actions: list[np.ndarray], M: int):
    steps = np.stack(actions, axis=1) if actions else np.zeros((len(instances) * M, 0), int)
    B = len(instances)
    out: list[list] = []
    for b in range(B):
        per_inst = []
        for j in range(M):
            row = steps[b * M + j]
            row = row[row >= 0]
            if kind.is_tsp:
                per_inst.append(np.array(row, dtype=int))
            elif kind is ProblemKind.BI_CVRP:
                routes, cur = [], []
                for a in row:
                    if a == 0:
                        if cur:
                            routes.append(cur)
                        cur = []
                    else:
                        cur.append(int(a))
                if cur:
                    routes.append(cur)
                per_inst.append(routes)
            else:
                n = instances[b].n
                per_inst.append(sorted(int(a) for a in row if a != n))
        out.append(per_inst)
    return out


def _solutions_to_actions(kind: ProblemKind, instances, solutions: list[list]) -> np.ndarray:
    n = instances[0].n
    rows = []
    for b, per_inst in enumerate(solutions):
        for sol in per_inst:
            if kind.is_tsp:
                rows.append(list(map(int, sol)))
            elif kind is ProblemKind.BI_CVRP:
                seq: list[int] = []
                for r_i, route in enumerate(sol):
                    if r_i > 0:
                        seq.append(0)
                    seq.extend(int(c) for c in route)
                rows.append(seq)
            else:
                rows.append(sorted(int(i) for i in sol) + [n])
    width = max(len(r) for r in rows)
    arr = np.full((len(rows), width), -1, dtype=int)
    for i, r in enumerate(rows):
        arr[i, : len(r)] = r
    return arr


def _batch_objectives(kind: ProblemKind, instances, solutions) -> np.ndarray:
    m = kind.num_objectives
    B, M = len(instances), len(solutions[0])
    if kind.is_tsp:
        feats = _stack_features(instances)
        tours = np.stack([np.stack(per) for per in solutions])  # (B, M, n)
        out = np.empty((B, M, m))
        for i in range(m):
            coords = feats[:, :, 2 * i : 2 * i + 2]  # (B, n, 2)
            pts = np.take_along_axis(coords[:, None], tours[..., None], axis=2)
            diffs = pts - np.roll(pts, -1, axis=2)
            out[..., i] = np.sqrt((diffs * diffs).sum(axis=-1)).sum(axis=-1)
        return out
    out = np.empty((B, M, m))
    for b, per_inst in enumerate(solutions):
        for j, sol in enumerate(per_inst):
            out[b, j] = evaluate_objectives(instances[b], sol)
    return out


# -- on-tape objective recomputation (for input-feature gradients) ------------


def objectives_on_tape(feats: Node, kind: ProblemKind, instances, solutions) -> Node:
    """Objective vectors recomputed from the feature leaf: (B, M, m)."""
    B, M = len(instances), len(solutions[0])
    if kind.is_tsp:
        tours = np.stack([np.stack(per) for per in solutions]).reshape(B * M, -1)
        blocks = []
        for i in range(kind.num_objectives):
            coords = ad.repeat0(ad.slice_last(feats, 2 * i, 2 * i + 2), M)
            blocks.append(ad.reshape(_cycle_length(coords, tours), (B, M, 1)))
        return ad.concat(blocks, axis=-1)
    if kind is ProblemKind.BI_CVRP:
        return _cvrp_objectives_on_tape(feats, instances, solutions)
    return _kp_objectives_on_tape(feats, instances, solutions)


def _cycle_length(coords: Node, tours: np.ndarray) -> Node:
    pts = ad.gather_rows(coords, tours)
    nxt = ad.gather_rows(coords, np.roll(tours, -1, axis=1))
    diff = ad.sub(pts, nxt)
    d2 = ad.reduce_sum(ad.mul(diff, diff), axis=-1)
    return ad.reduce_sum(ad.sqrt(ad.add(d2, EDGE_EPS)), axis=-1)


def _segment_lengths(coords: Node, seqs: np.ndarray) -> Node:
    pts = ad.gather_rows(coords, seqs[:, :-1])
    nxt = ad.gather_rows(coords, seqs[:, 1:])
    diff = ad.sub(pts, nxt)
    d2 = ad.reduce_sum(ad.mul(diff, diff), axis=-1)
    return ad.sqrt(ad.add(d2, EDGE_EPS))


def _cvrp_objectives_on_tape(feats: Node, instances, solutions) -> Node:
    B, M = len(instances), len(solutions[0])
    n = instances[0].n
    S = 2 * n + 2  # depot-bracketed visit sequence, padded with depot
    seqs = np.zeros((B * M, S), dtype=int)
    max_routes = 1
    flat: list[list[list[int]]] = []
    for per_inst in solutions:
        for routes in per_inst:
            flat.append(routes)
            max_routes = max(max_routes, len(routes))
    seg = np.zeros((B * M, max_routes, S - 1))
    for r, routes in enumerate(flat):
        pos = 1
        for k, route in enumerate(routes):
            for c in route:
                seqs[r, pos] = c
                seg[r, k, pos - 1] = 1.0
                pos += 1
            seg[r, k, pos - 1] = 1.0  # closing hop back to the depot
            pos += 1
    coords = ad.repeat0(feats, M)
    edges = _segment_lengths(coords, seqs)  # (B*M, S-1)
    total = ad.reduce_sum(edges, axis=-1)
    per_route = ad.reshape(
        ad.matmul(Tape.const(seg), ad.reshape(edges, (B * M, S - 1, 1))),
        (B * M, max_routes),
    )
    longest = ad.reduce_max(per_route, axis=-1)
    both = ad.concat([ad.reshape(total, (B * M, 1)), ad.reshape(longest, (B * M, 1))], axis=-1)
    return ad.reshape(both, (B, M, 2))


def _kp_objectives_on_tape(feats: Node, instances, solutions) -> Node:
    B, M = len(instances), len(solutions[0])
    n = instances[0].n
    sel = np.zeros((B * M, 1, n))
    for b, per_inst in enumerate(solutions):
        for j, items in enumerate(per_inst):
            if len(items):
                sel[b * M + j, 0, list(items)] = 1.0
    values = ad.repeat0(ad.slice_last(feats, 1, 3), M)  # (B*M, n, 2)
    summed = ad.reshape(ad.matmul(Tape.const(sel), values), (B, M, 2))
    return ad.mul(summed, -1.0)


def mean_weighted_logprob(batch: RolloutBatch, coeffs: np.ndarray) -> Node:
    """Scalar (1/(B*M)) sum of coeff * logp; the REINFORCE surrogate."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != batch.logp.value.shape:
        raise ValueError("coefficient shape must match (batch, rollouts)")
    weighted = ad.mul(batch.logp, Tape.const(coeffs))
    return ad.reduce_mean(ad.reshape(weighted, (-1,)), axis=None)
