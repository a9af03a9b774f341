"""End-to-end scenarios: parallel factorization and series robustness with depth discount."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcircuits import FiniteSpace
from dcircuits.component import Oddc
from dcircuits.errors import TypeMismatch
from dcircuits.instances import random_oddc, random_policy
from dcircuits.robustness import (
    PerturbationSpec,
    TwoModuleCircuit,
    perturb_oddc,
    run_parallel_factorization,
    run_two_module_robustness,
)

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def two_module(rng, gamma=0.5, ns=3, nu=4):
    s, u = FiniteSpace.of_size("s", ns), FiniteSpace.of_size("u", nu)
    a1, a2 = FiniteSpace.of_size("a1", 2), FiniteSpace.of_size("a2", 3)
    m1 = random_oddc(rng, ns, 2, nu, gamma=gamma, s_in=s, s_out=u, actions=a1)
    m2 = random_oddc(rng, nu, 3, ns, gamma=gamma, s_in=u, s_out=s, actions=a2)
    return TwoModuleCircuit(m1, m2, random_policy(rng, s, a1), random_policy(rng, u, a2))


def zero_reward(m: Oddc) -> Oddc:
    return Oddc(m.s_in, m.actions, m.s_out, m.reward_space, m.kernel, np.zeros_like(m.rho), m.gamma, 1.0)


class TestPerturbation:
    def test_perturbation_validation(self):
        with pytest.raises(ValueError):
            PerturbationSpec(target=3)
        with pytest.raises(ValueError):
            PerturbationSpec(target=1, eps_r=-0.1)
        with pytest.raises(ValueError):
            PerturbationSpec(target=1, eps_P=2.5)

    @given(seeds, st.floats(min_value=0.0, max_value=0.5))
    def test_mismatch_attained(self, seed, eps_p):
        rng = np.random.default_rng(seed)
        m = random_oddc(rng, 3, 2, nr=3)
        out = perturb_oddc(m, 0.05, eps_p, rng)
        tv = np.abs(out.transition_array() - m.transition_array()).sum(axis=2)
        assert np.allclose(tv, eps_p, atol=1e-12)
        assert np.allclose(out.reward_array() - m.reward_array(), 0.05, atol=1e-12)
        assert np.allclose(out.kernel.rows.sum(axis=1), 1.0, atol=1e-12)

    def test_wiring_checked(self, rng):
        m = random_oddc(rng, 3, 2)
        u = random_oddc(rng, 4, 2)
        with pytest.raises(TypeMismatch):
            TwoModuleCircuit(m, u, random_policy(rng, m.s_in, m.actions), random_policy(rng, u.s_in, u.actions))


class TestTwoModule:
    def test_null_perturbation(self, rng):
        rep = run_two_module_robustness(two_module(rng), PerturbationSpec(target=1))
        assert rep.measured_gap <= 1e-8 and rep.gap_bound == 0.0

    def test_reward_only_module_two(self, rng):
        rep = run_two_module_robustness(two_module(rng, gamma=0.5), PerturbationSpec(target=2, eps_r=0.1))
        assert rep.gap_bound == pytest.approx(1 / 15, rel=1e-12)
        assert rep.measured_gap <= rep.gap_bound + 1e-9

    @given(seeds)
    def test_depth_attenuation(self, seed):
        rng = np.random.default_rng(seed)
        base = two_module(rng, gamma=float(rng.uniform(0.3, 0.9)))
        kw = dict(eps_r=float(rng.uniform(0, 0.2)), eps_P=float(rng.uniform(0, 0.3)), seed=seed)
        first = run_two_module_robustness(base, PerturbationSpec(target=1, **kw))
        second = run_two_module_robustness(base, PerturbationSpec(target=2, **kw))
        assert second.macro_bound == pytest.approx(base.gamma * first.macro_bound, rel=1e-10, abs=1e-15)

    def test_chain_links_hold(self):
        rng = np.random.default_rng(200)
        for i in range(200):
            base = two_module(rng, gamma=float(rng.uniform(0.2, 0.95)), ns=int(rng.integers(2, 5)),
                              nu=int(rng.integers(2, 5)))
            spec = PerturbationSpec(target=int(rng.integers(1, 3)), eps_r=float(rng.uniform(0, 0.3)),
                                    eps_P=float(rng.uniform(0, 0.5)), seed=i)
            rep = run_two_module_robustness(base, spec)
            assert rep.ok and rep.slack >= -1e-9
            assert rep.macro_exact <= rep.macro_bound + 1e-9

    def test_shared_discount_required(self, rng):
        base = two_module(rng, gamma=0.5)
        m2 = Oddc(base.m2.s_in, base.m2.actions, base.m2.s_out, base.m2.reward_space, base.m2.kernel,
                  base.m2.rho, 0.6, 1.0)
        with pytest.raises(ValueError):
            TwoModuleCircuit(base.m1, m2, base.pi1, base.pi2)


class TestParallelFactorization:
    def test_zero_rewards(self, rng):
        m1, m2 = zero_reward(random_oddc(rng, 2, 2)), zero_reward(random_oddc(rng, 3, 2))
        rep = run_parallel_factorization(m1, m2, random_policy(rng, m1.s_in, m1.actions),
                                         random_policy(rng, m2.s_in, m2.actions))
        assert not rep.v_product.any() and rep.coupled_gap == 0.0

    @given(seeds)
    def test_random_factors(self, seed):
        rng = np.random.default_rng(seed)
        m1 = random_oddc(rng, int(rng.integers(1, 7)), 2, gamma=0.8)
        m2 = random_oddc(rng, int(rng.integers(1, 7)), 3, gamma=0.8)
        rep = run_parallel_factorization(m1, m2, random_policy(rng, m1.s_in, m1.actions),
                                         random_policy(rng, m2.s_in, m2.actions))
        assert rep.max_error <= 1e-8

    def test_coupled_negative_control(self):
        rng = np.random.default_rng(4)
        m1, m2 = random_oddc(rng, 3, 2, gamma=0.8), random_oddc(rng, 3, 2, gamma=0.8)
        rep = run_parallel_factorization(m1, m2, random_policy(rng, m1.s_in, m1.actions),
                                         random_policy(rng, m2.s_in, m2.actions))
        assert rep.coupled_gap > 1e-3
