import numpy as np
import pytest

from mocobench import autodiff as ad
from mocobench.autodiff import Tape
from mocobench.generators import gen_uniform
from mocobench.policy import (
    Policy,
    RolloutBatch,
    mean_weighted_logprob,
    objectives_on_tape,
)
from mocobench.problems import (
    Instance,
    ProblemKind,
    check_feasible,
    evaluate_objectives,
    preference_grid,
)
from mocobench.rng import substream

LAM = np.array([0.4, 0.6])


@pytest.fixture(scope="module")
def bitsp_policy():
    return Policy.init(ProblemKind.BI_TSP, substream(1, "init"))


@pytest.fixture(scope="module")
def bitsp_instances():
    return gen_uniform(ProblemKind.BI_TSP, 8, 3, 5)


def run_rollout(policy, instances, lam=LAM, M=4, mode="sample", seed=0, trace=None):
    tape = Tape()
    params = policy.leaves(tape, trainable=False)
    return policy.rollout(tape, params, instances, lam, M, mode,
                          substream(seed, "roll"), trace=trace)


class TestEncode:
    def test_node_permutation_equivariance(self, bitsp_policy):
        rng = np.random.default_rng(0)
        feats = rng.random((1, 7, 4))
        perm = rng.permutation(7)
        tape = Tape()
        params = bitsp_policy.leaves(tape, trainable=False)
        h1, ctx1 = bitsp_policy.encode(tape, Tape.const(feats), LAM, params)
        h2, ctx2 = bitsp_policy.encode(tape, Tape.const(feats[:, perm]), LAM, params)
        assert np.allclose(h1.value[:, perm], h2.value, atol=1e-12)
        assert np.allclose(ctx1.value, ctx2.value, atol=1e-12)

    def test_distinct_preferences_give_distinct_contexts(self, bitsp_policy):
        rng = np.random.default_rng(1)
        feats = rng.random((1, 6, 4))
        tape = Tape()
        params = bitsp_policy.leaves(tape, trainable=False)
        _, ctx_a = bitsp_policy.encode(tape, Tape.const(feats), np.array([0.2, 0.8]), params)
        _, ctx_b = bitsp_policy.encode(tape, Tape.const(feats), np.array([0.7, 0.3]), params)
        assert not np.allclose(ctx_a.value, ctx_b.value)

    def test_minimal_instance_encodes(self, bitsp_policy):
        inst = gen_uniform(ProblemKind.BI_TSP, 4, 1, 9)
        batch = run_rollout(bitsp_policy, inst, M=2)
        assert batch.objectives.shape == (1, 2, 2)


class TestRollout:
    def test_two_node_tour_is_forced_with_zero_logp(self, bitsp_policy):
        feats = np.array([[0.1, 0.1, 0.2, 0.2], [0.9, 0.9, 0.8, 0.8]])
        inst = Instance(kind=ProblemKind.BI_TSP, id="two", features=feats)
        batch = run_rollout(bitsp_policy, [inst], M=1)
        assert batch.logp.value[0, 0] == 0.0
        assert sorted(batch.solutions[0][0].tolist()) == [0, 1]

    def test_greedy_is_deterministic(self, bitsp_policy, bitsp_instances):
        b1 = run_rollout(bitsp_policy, bitsp_instances, mode="greedy")
        b2 = run_rollout(bitsp_policy, bitsp_instances, mode="greedy")
        for s1, s2 in zip(b1.solutions, b2.solutions):
            for a, b in zip(s1, s2):
                assert np.array_equal(a, b)

    def test_sampled_cvrp_rollouts_feasible(self):
        insts = gen_uniform(ProblemKind.BI_CVRP, 9, 4, 3)
        policy = Policy.init(ProblemKind.BI_CVRP, substream(2, "init"))
        batch = run_rollout(policy, insts, M=6)
        for b, inst in enumerate(insts):
            for sol in batch.solutions[b]:
                assert check_feasible(inst, sol) is None

    def test_sampled_kp_rollouts_feasible(self):
        insts = gen_uniform(ProblemKind.BI_KP, 9, 4, 3)
        policy = Policy.init(ProblemKind.BI_KP, substream(2, "init"))
        batch = run_rollout(policy, insts, M=5)
        for b, inst in enumerate(insts):
            for sol in batch.solutions[b]:
                assert check_feasible(inst, sol) is None

    def test_diverse_starts_cover_distinct_nodes(self, bitsp_policy, bitsp_instances):
        batch = run_rollout(bitsp_policy, bitsp_instances, M=8)
        for per_inst in batch.solutions:
            starts = {int(sol[0]) for sol in per_inst}
            assert len(starts) == 8

    def test_feasible_action_probabilities_sum_to_one(self, bitsp_policy, bitsp_instances):
        trace = []
        run_rollout(bitsp_policy, bitsp_instances, M=3, trace=trace)
        for step in trace:
            feasible = np.where(step["mask"], 0.0, step["probs"]).sum(axis=1)
            np.testing.assert_allclose(feasible[step["alive"]], 1.0, atol=1e-9)
            masked = np.where(step["mask"], step["probs"], 0.0)
            assert np.all(masked == 0.0)

    def test_greedy_logp_equals_product_of_step_probabilities(self, bitsp_policy,
                                                               bitsp_instances):
        trace = []
        batch = run_rollout(bitsp_policy, bitsp_instances, M=2, mode="greedy",
                            trace=trace)
        R = 6
        product = np.ones(R)
        for step in trace:
            rows = np.where(step["alive"])[0]
            product[rows] *= step["probs"][rows, step["chosen"][rows]]
        assert np.allclose(np.exp(batch.logp.value.reshape(R)), product, atol=1e-9)

    def test_coordinate_scaling_keeps_feasibility(self, bitsp_policy):
        # scaled coordinates change objectives but never emitted-solution feasibility
        inst = gen_uniform(ProblemKind.BI_TSP, 8, 1, 12)[0]
        scaled = Instance(kind=inst.kind, id="s", features=inst.features * 0.25)
        batch = run_rollout(bitsp_policy, [scaled], M=4)
        for sol in batch.solutions[0]:
            assert check_feasible(scaled, sol) is None
        f_orig = evaluate_objectives(inst, batch.solutions[0][0])
        f_scaled = evaluate_objectives(scaled, batch.solutions[0][0])
        assert np.allclose(f_scaled, 0.25 * f_orig)

    def test_bad_mode_rejected(self, bitsp_policy, bitsp_instances):
        with pytest.raises(ValueError):
            run_rollout(bitsp_policy, bitsp_instances, mode="beam")


class TestReplay:
    def test_replay_matches_rollout_logp(self, bitsp_policy, bitsp_instances):
        batch = run_rollout(bitsp_policy, bitsp_instances, M=3, seed=7)
        tape = Tape()
        params = bitsp_policy.leaves(tape, trainable=False)
        lp = bitsp_policy.replay_logprob(tape, params, bitsp_instances, LAM,
                                         batch.solutions, forced_start=True)
        assert np.allclose(lp.value, batch.logp.value, atol=1e-12)


class TestGradientSurface:
    def test_zero_coefficients_give_zero_grads(self, bitsp_policy, bitsp_instances):
        tape = Tape()
        params = bitsp_policy.leaves(tape, trainable=True)
        batch = bitsp_policy.rollout(tape, params, bitsp_instances, LAM, 3,
                                     "sample", substream(3, "r"))
        root = mean_weighted_logprob(batch, np.zeros((3, 3)))
        tape.backward(root)
        for node in params.values():
            assert np.array_equal(node.grad, np.zeros_like(node.value))

    def test_identical_rollout_coefficient_pattern_cancels(self, bitsp_policy):
        # two-node tours are forced, hence identical: advantage is exactly zero
        feats = np.array([[0.1, 0.1, 0.2, 0.2], [0.9, 0.9, 0.8, 0.8]])
        inst = Instance(kind=ProblemKind.BI_TSP, id="two", features=feats)
        batch = run_rollout(bitsp_policy, [inst], M=2)
        losses = batch.objectives @ LAM
        adv = losses - losses.mean(axis=1, keepdims=True)
        assert np.array_equal(adv, np.zeros_like(adv))

    def test_grad_x_matches_finite_differences(self):
        # frozen action sequences; d logp / d features on a 6-node instance
        insts = gen_uniform(ProblemKind.BI_TSP, 6, 2, 21)
        policy = Policy.init(ProblemKind.BI_TSP, substream(8, "init"))
        base = run_rollout(policy, insts, M=2, seed=4)
        feats0 = np.stack([i.features for i in insts])

        def value(feats_arr):
            t = Tape()
            prm = policy.leaves(t, trainable=False)
            lp = policy.replay_logprob(t, prm, insts, LAM, base.solutions,
                                       features=Tape.const(feats_arr),
                                       forced_start=True)
            return float(lp.value.sum())

        tape = Tape()
        prm = policy.leaves(tape, trainable=False)
        fx = tape.input(feats0)
        lp = policy.replay_logprob(tape, prm, insts, LAM, base.solutions,
                                   features=fx, forced_start=True)
        tape.backward(ad.reduce_sum(ad.reshape(lp, (-1,)), axis=None))
        rng = np.random.default_rng(0)
        h = 1e-5
        for _ in range(12):
            idx = tuple(rng.integers(s) for s in feats0.shape)
            pert = feats0.copy()
            pert[idx] += h
            fp = value(pert)
            pert[idx] -= 2 * h
            fm = value(pert)
            fd = (fp - fm) / (2 * h)
            assert abs(fx.grad[idx] - fd) / max(abs(fd), 1e-2) < 1e-4


class TestObjectivesOnTape:
    @pytest.mark.parametrize("kind", [ProblemKind.BI_TSP, ProblemKind.TRI_TSP,
                                      ProblemKind.BI_CVRP, ProblemKind.BI_KP])
    def test_matches_direct_evaluation(self, kind):
        insts = gen_uniform(kind, 7, 3, 13)
        policy = Policy.init(kind, substream(5, "init"))
        batch = run_rollout(policy, insts,
                            lam=preference_grid(kind.num_objectives, 4)[1], M=3)
        tape = Tape()
        fx = tape.input(np.stack([i.features for i in insts]))
        objs = objectives_on_tape(fx, kind, insts, batch.solutions)
        assert np.allclose(objs.value, batch.objectives, atol=1e-6)


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path, bitsp_policy, bitsp_instances):
        path = tmp_path / "pol.ckpt"
        bitsp_policy.save(path)
        loaded = Policy.load(path)
        assert loaded.cfg == bitsp_policy.cfg
        b1 = run_rollout(bitsp_policy, bitsp_instances, mode="greedy")
        b2 = run_rollout(loaded, bitsp_instances, mode="greedy")
        assert np.array_equal(b1.objectives, b2.objectives)
