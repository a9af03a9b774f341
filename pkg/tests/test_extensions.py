"""Belief lifting, off-policy importance weights and drifting fixed points."""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcircuits import Dist, FiniteSpace, Kernel, Transformer, solve_linear
from dcircuits.bellman import make_transformer
from dcircuits.component import FiniteMdp, Policy, product_policy
from dcircuits.errors import AbsoluteContinuityViolation, BudgetExceeded, SpaceMismatch
from dcircuits.extensions import (
    Pomdp,
    TrajectoryPrefix,
    bayes_update,
    belief_mdp_to_horizon,
    change_of_measure_gap,
    enumerate_prefixes,
    factorized_weights,
    importance_weights,
    martingale_gap,
    pair_prefixes,
    series_chain_rule_gap,
    state_policy_on_beliefs,
    track_fixed_points,
    tree_value,
    verify_belief_equivalence,
)
from dcircuits.instances import random_oddc, random_policy, random_pomdp, random_stochastic, random_transformer

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def tiger(accuracy=0.85):
    """Listen (0) keeps the state and reports it noisily; reset (1) redraws it silently."""
    trans = np.zeros((2, 2, 2))
    trans[:, 0] = np.eye(2)
    trans[:, 1] = 0.5
    obs = np.zeros((2, 2, 2))
    obs[:, 0] = [[accuracy, 1 - accuracy], [1 - accuracy, accuracy]]
    obs[:, 1] = 0.5
    reward = np.array([[-0.1, 1.0], [-0.1, -1.0]])
    return Pomdp.from_arrays(trans, obs, reward, 0.9, [0.5, 0.5])


def perfect_pomdp(rng, ns=3, na=2, gamma=0.8):
    trans = random_stochastic(rng, (ns, na, ns))
    obs = np.repeat(np.eye(ns)[:, None, :], na, axis=1)
    init = np.zeros(ns)
    init[0] = 1.0
    return Pomdp.from_arrays(trans, obs, rng.uniform(-1, 1, (ns, na)), gamma, init)


class TestBayes:
    def test_perfect_observation(self, rng):
        p = perfect_pomdp(rng)
        b = Dist(p.states, rng.dirichlet(np.ones(3)))
        post, mass, flag = bayes_update(p, b, 1, 2)
        assert np.array_equal(post.probs, [0.0, 0.0, 1.0]) and mass > 0 and not flag

    def test_uninformative(self, rng):
        trans = random_stochastic(rng, (3, 2, 3))
        p = Pomdp.from_arrays(trans, np.full((3, 2, 2), 0.5), np.zeros((3, 2)), 0.9, [0.2, 0.3, 0.5])
        post, mass, _ = bayes_update(p, p.init_belief, 0, 1)
        assert mass == pytest.approx(0.5)
        assert np.allclose(post.probs, p.init_belief.probs @ trans[:, 0, :], atol=1e-15)

    @given(seeds)
    def test_joint_table(self, seed):
        rng = np.random.default_rng(seed)
        p = random_pomdp(rng, 3, 2, 3, 0.9)
        b = Dist(p.states, rng.dirichlet(np.ones(3)))
        a, o = int(rng.integers(2)), int(rng.integers(3))
        joint = np.zeros((3, 3, 3))  # s, s', o
        for s, s2, oo in itertools.product(range(3), range(3), range(3)):
            joint[s, s2, oo] = b.probs[s] * p.p_array[s, a, s2] * p.g_array[s2, a, oo]
        post, mass, _ = bayes_update(p, b, a, o)
        assert mass == pytest.approx(joint[:, :, o].sum(), abs=1e-15)
        assert np.allclose(post.probs, joint[:, :, o].sum(axis=0) / joint[:, :, o].sum(), atol=1e-14)

    @given(seeds)
    def test_predictive_sums_to_one(self, seed):
        rng = np.random.default_rng(seed)
        p = random_pomdp(rng, 4, 2, 3, 0.9)
        b = Dist(p.states, rng.dirichlet(np.ones(4)))
        masses = [bayes_update(p, b, 1, o)[1] for o in range(3)]
        assert sum(masses) == pytest.approx(1.0, abs=1e-14)

    def test_zero_mass_is_uniform_and_flagged(self, rng):
        p = perfect_pomdp(rng)
        point = Dist(p.states, [1.0, 0.0, 0.0])
        trans = p.p_array.copy()
        trans[0, 0] = [1.0, 0.0, 0.0]
        q = Pomdp.from_arrays(trans, p.g_array, p.reward, p.gamma, [1.0, 0.0, 0.0])
        post, mass, flag = bayes_update(q, point, 0, 2)
        assert mass == 0.0 and flag and np.allclose(post.probs, 1 / 3)

    def test_space_mismatch(self):
        p = tiger()
        with pytest.raises(SpaceMismatch):
            bayes_update(p, Dist(FiniteSpace.of_size("u", 2), [0.5, 0.5]), 0, 0)


class TestBeliefTree:
    def test_depth_zero(self):
        tree = belief_mdp_to_horizon(tiger(), 0)
        assert tree.n_nodes == 1 and np.array_equal(tree.node(0, 0).belief.probs, [0.5, 0.5])

    def test_tiger_depth_three(self):
        p = tiger(0.85)
        tree = belief_mdp_to_horizon(p, 3)
        assert tree.n_nodes == 1 + 4 + 16 + 64
        odds = 0.85 / 0.15
        for node in tree.nodes(3):
            # replay the branch; reset erases the evidence
            path, d, i = [], 3, None
            n = node
            while n.depth > 0:
                path.append((n.action, n.observation))
                n = tree.node(n.depth - 1, n.parent)
            score = 0
            for a, o in reversed(path):
                score = score + (1 if o == 0 else -1) if a == 0 else 0
            expect = odds ** score / (1 + odds ** score)
            assert node.belief.probs[0] == pytest.approx(expect, abs=1e-14)

    @given(seeds)
    def test_edge_masses_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        p = random_pomdp(rng, 3, 2, 2, 0.9)
        tree = belief_mdp_to_horizon(p, 3)
        for d in range(3):
            assert np.allclose(tree.edge_masses(d), 1.0, atol=1e-14)

    def test_perfect_observation_diracs(self, rng):
        p = perfect_pomdp(rng)
        tree = belief_mdp_to_horizon(p, 3, prune_zero=True)
        for d in range(4):
            b = tree.levels[d]["beliefs"]
            assert np.all(np.isclose(b.max(axis=1), 1.0))

    def test_perfect_observation_value(self, rng):
        p = perfect_pomdp(rng)
        pi = random_policy(rng, p.states, p.actions)
        policy = state_policy_on_beliefs(pi.probs)
        h = 6
        tree = belief_mdp_to_horizon(p, h, policy=policy, prune_zero=True)
        mdp = FiniteMdp(p.states, p.actions, p.reward, p.p_array, p.gamma)
        t = make_transformer(mdp, pi)
        v = np.zeros(3)
        for _ in range(h):
            v = t(v)
        assert tree_value(tree, policy) == pytest.approx(v[0], abs=1e-12)
        v_inf = solve_linear(t).values[0]
        assert abs(tree_value(tree, policy) - v_inf) <= p.gamma ** h * p.v_max

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            belief_mdp_to_horizon(tiger(), 6, budget=100)


class TestBeliefEquivalence:
    def test_zero_rewards(self, rng):
        p = random_pomdp(rng, 3, 2, 2, 0.9)
        p = Pomdp(p.states, p.actions, p.observations, p.trans, p.obs, np.zeros((3, 2)), 0.9, p.init_belief)
        rep = verify_belief_equivalence(p, lambda b, d: np.full((b.shape[0], 2), 0.5), 4, n_traj=2000)
        assert rep.exact == 0.0 and rep.mc_mean == 0.0

    def test_random_pomdp(self):
        rng = np.random.default_rng(8)
        p = random_pomdp(rng, 3, 2, 2, 0.8)

        def greedy(b, d):
            out = np.zeros((b.shape[0], 2))
            out[np.arange(b.shape[0]), (b[:, 0] > 0.5).astype(int)] = 0.7
            out[np.arange(b.shape[0]), (b[:, 0] <= 0.5).astype(int)] = 0.3
            return out

        rep = verify_belief_equivalence(p, greedy, 6, n_traj=20_000, seed=3)
        assert rep.ok

    def test_seed_determinism(self):
        p = tiger()
        pol = lambda b, d: np.full((b.shape[0], 2), 0.5)  # noqa: E731
        assert verify_belief_equivalence(p, pol, 3, 1000, 5) == verify_belief_equivalence(p, pol, 3, 1000, 5)


class TestImportanceWeights:
    def test_same_policy(self, rng):
        s, a = FiniteSpace.of_size("s", 2), FiniteSpace.of_size("a", 2)
        pi = random_policy(rng, s, a)
        step, cum = importance_weights(TrajectoryPrefix([0, 1, 1, 0], [1, 0, 1], [0, 0, 0]), pi, pi)
        assert np.allclose(step, 1.0) and np.allclose(cum, 1.0)

    def test_two_cubed(self):
        s, a = FiniteSpace.of_size("s", 2), FiniteSpace.of_size("a", 2)
        acts = [1, 0, 1]
        traj = TrajectoryPrefix([0, 1, 0, 1], acts, [0, 0, 0])
        pi = Policy.deterministic(s, a, [1, 0])
        _, cum = importance_weights(traj, pi, Policy.uniform(s, a))
        assert cum[-1] == 8.0

    def test_absolute_continuity(self):
        s, a = FiniteSpace.of_size("s", 2), FiniteSpace.of_size("a", 2)
        traj = TrajectoryPrefix([0, 1, 0], [0, 1], [0, 0])
        with pytest.raises(AbsoluteContinuityViolation) as info:
            importance_weights(traj, Policy.uniform(s, a), Policy.deterministic(s, a, [0, 0]))
        assert (info.value.step, info.value.state, info.value.action) == (1, 1, 1)

    def test_malformed_prefix(self):
        with pytest.raises(ValueError):
            TrajectoryPrefix([0, 1], [0, 1], [0, 0])

    @given(seeds)
    def test_change_of_measure(self, seed):
        rng = np.random.default_rng(seed)
        m = random_oddc(rng, 2, 2, nr=2, gamma=0.9)
        init = Dist(m.s_in, rng.dirichlet(np.ones(2)))
        pi, mu = random_policy(rng, m.s_in, m.actions), random_policy(rng, m.s_in, m.actions)
        table = {}

        def g(traj):
            key = (tuple(traj.states), tuple(traj.actions), tuple(traj.rewards))
            return table.setdefault(key, float(rng.normal()))

        assert change_of_measure_gap(m, init, pi, mu, 2, g) <= 1e-12

    @given(seeds)
    def test_martingale(self, seed):
        rng = np.random.default_rng(seed)
        m = random_oddc(rng, 2, 2, nr=2, gamma=0.9)
        init = Dist(m.s_in, rng.dirichlet(np.ones(2)))
        pi, mu = random_policy(rng, m.s_in, m.actions), random_policy(rng, m.s_in, m.actions)
        assert martingale_gap(m, init, pi, mu, 3) <= 1e-12

    def test_enumeration_total_mass(self, rng):
        m = random_oddc(rng, 2, 2, nr=2, gamma=0.9)
        init = Dist(m.s_in, [0.3, 0.7])
        total = sum(p for _, p in enumerate_prefixes(m, init, Policy.uniform(m.s_in, m.actions), 2))
        assert total == pytest.approx(1.0, abs=1e-14)


class TestFactorization:
    def modules(self, rng):
        m1, m2 = random_oddc(rng, 2, 2, nr=2, gamma=0.9), random_oddc(rng, 2, 2, nr=2, gamma=0.9)
        i1, i2 = Dist(m1.s_in, rng.dirichlet(np.ones(2))), Dist(m2.s_in, rng.dirichlet(np.ones(2)))
        return m1, m2, i1, i2

    def test_identical_policies(self, rng):
        m1, m2, i1, i2 = self.modules(rng)
        pols = [random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions)]
        rep = factorized_weights(m1, m2, i1, i2, pols, pols, 2)
        assert rep.second_moment_global == pytest.approx(1.0) and rep.second_moments == pytest.approx((1.0, 1.0))

    @given(seeds)
    def test_product_and_log_additivity(self, seed):
        rng = np.random.default_rng(seed)
        m1, m2, i1, i2 = self.modules(rng)
        pis = [random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions)]
        mus = [random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions)]
        rep = factorized_weights(m1, m2, i1, i2, pis, mus, 2)
        assert rep.max_weight_error <= 1e-12 and rep.log_additivity_gap <= 1e-12

    def test_paired_prefix_weight(self, rng):
        m1, m2, _, _ = self.modules(rng)
        pis = [random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions)]
        mus = [random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions)]
        t1 = TrajectoryPrefix([0, 1, 1], [1, 0], [0, 1])
        t2 = TrajectoryPrefix([1, 1, 0], [0, 0], [1, 1])
        joint = pair_prefixes(t1, t2, m1, m2)
        w = importance_weights(joint, product_policy(*pis), product_policy(*mus))[1][-1]
        w1 = importance_weights(t1, pis[0], mus[0])[1][-1]
        w2 = importance_weights(t2, pis[1], mus[1])[1][-1]
        assert w == pytest.approx(w1 * w2, rel=1e-13)

    def test_horizon_zero(self, rng):
        m1, m2, i1, i2 = self.modules(rng)
        pols = [random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions)]
        assert factorized_weights(m1, m2, i1, i2, pols, pols, 0).second_moment_global == pytest.approx(1.0)

    @given(seeds)
    def test_series_chain_rule(self, seed):
        rng = np.random.default_rng(seed)
        p1, p2 = random_stochastic(rng, (2, 2, 2)), random_stochastic(rng, (2, 2, 2))
        pis = [rng.dirichlet(np.ones(2), 2), rng.dirichlet(np.ones(2), 2)]
        mus = [rng.dirichlet(np.ones(2), 2), rng.dirichlet(np.ones(2), 2)]
        vals = rng.normal(size=64)
        worst, gap = series_chain_rule_gap(p1, p2, pis, mus, np.array([0.4, 0.6]), 2,
                                           lambda path: vals[hash(path) % 64])
        assert worst <= 1e-12 and gap <= 1e-12


class TestTracking:
    def test_constant(self, rng):
        s = FiniteSpace.of_size("s", 4)
        t = random_transformer(rng, s, s, 0.9)
        rep = track_fixed_points([t] * 5)
        assert not rep.eta.any() and not rep.measured.any()

    def test_reward_drift(self, rng):
        s = FiniteSpace.of_size("s", 4)
        t = random_transformer(rng, s, s, 0.8)
        deltas = rng.uniform(-0.05, 0.05, (6, 4))
        ops = [t]
        for d in deltas:
            ops.append(ops[-1].replace(reward=ops[-1].reward + d))
        rep = track_fixed_points(ops)
        m = np.eye(4) - 0.8 * t.trans.rows
        for k, d in enumerate(deltas):
            assert rep.measured[k] == pytest.approx(np.abs(np.linalg.solve(m, d)).max(), abs=1e-12)
            assert rep.eta[k] == pytest.approx(np.abs(d).max(), abs=1e-15)
            assert rep.measured[k] <= np.abs(d).max() / 0.2 + 1e-12

    @pytest.mark.parametrize("mode", ["exact", "one-step"])
    def test_random_drift(self, mode):
        rng = np.random.default_rng(31)
        s = FiniteSpace.of_size("s", 5)
        base = random_transformer(rng, s, s, 0.85)
        ops = [base]
        for _ in range(19):
            prev = ops[-1]
            rows = 0.9 * prev.trans.rows + 0.1 * random_stochastic(rng, (5, 5))
            ops.append(Transformer(s, s, np.clip(prev.reward + rng.uniform(-0.05, 0.05, 5), -1, 1), 0.85,
                                   Kernel(s, s, rows)))
        rep = track_fixed_points(ops, mode=mode, v0=rng.normal(size=5) if mode == "one-step" else None)
        assert rep.violations == 0
        if mode == "one-step":
            assert np.allclose(rep.bounds, rep.closed_form_bounds, rtol=1e-12, atol=1e-12)

    def test_mismatch(self, rng):
        s, u = FiniteSpace.of_size("s", 2), FiniteSpace.of_size("u", 2)
        with pytest.raises(SpaceMismatch):
            track_fixed_points([random_transformer(rng, s, s, 0.5), random_transformer(rng, u, u, 0.5)])
