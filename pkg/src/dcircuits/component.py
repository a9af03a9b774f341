"""Open discounted decision components, policies and their closed loops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    Dist,
    FiniteSpace,
    Kernel,
    ValueFn,
    compose_kernels,
    pair_with_policy,
    product_space,
)
from .errors import SpaceMismatch

__all__ = [
    "Policy",
    "Oddc",
    "FiniteMdp",
    "close_loop",
    "expected_reward",
    "parallel_oddc",
    "product_policy",
]


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary randomized policy, a kernel from states to actions."""

    kernel: Kernel

    @property
    def state_space(self) -> FiniteSpace:
        return self.kernel.src

    @property
    def actions(self) -> FiniteSpace:
        return self.kernel.dst

    @property
    def probs(self) -> np.ndarray:
        return self.kernel.rows

    @classmethod
    def from_array(cls, states: FiniteSpace, actions: FiniteSpace, probs) -> "Policy":
        return cls(Kernel(states, actions, probs))

    @classmethod
    def uniform(cls, states: FiniteSpace, actions: FiniteSpace) -> "Policy":
        return cls.from_array(states, actions, np.full((states.size, actions.size), 1.0 / actions.size))

    @classmethod
    def deterministic(cls, states: FiniteSpace, actions: FiniteSpace, choice) -> "Policy":
        return cls(Kernel.deterministic(states, actions, choice))

    def mix(self, other: "Policy", lam: float) -> "Policy":
        """Pointwise mixture ``lam * self + (1 - lam) * other``."""
        if self.state_space != other.state_space or self.actions != other.actions:
            raise SpaceMismatch("cannot mix policies on different spaces")
        return Policy.from_array(self.state_space, self.actions, lam * self.probs + (1.0 - lam) * other.probs)


@dataclass(frozen=True, eq=False)
class Oddc:
    """One-step component ``K : S_in x A -> S_out x R`` with scalarization and discount.

    ``r_max`` bounds ``|rho|``; when omitted it is set to ``max |rho|``.
    Distinct input and output state spaces are allowed so a component can
    sit on either side of a series interface.
    """

    s_in: FiniteSpace
    actions: FiniteSpace
    s_out: FiniteSpace
    reward_space: FiniteSpace
    kernel: Kernel
    rho: np.ndarray
    gamma: float
    r_max: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.kernel.src != product_space(self.s_in, self.actions):
            raise SpaceMismatch("kernel source must be s_in x actions")
        if self.kernel.dst != product_space(self.s_out, self.reward_space):
            raise SpaceMismatch("kernel target must be s_out x reward_space")
        rho = np.array(self.rho, dtype=np.float64)
        if rho.shape != (self.reward_space.size,):
            raise SpaceMismatch("rho must have one entry per reward signal")
        if not np.all(np.isfinite(rho)):
            raise ValueError("rho must be finite")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        bound = float(np.abs(rho).max())
        if self.r_max is None:
            object.__setattr__(self, "r_max", bound)
        elif bound > self.r_max + 1e-12:
            raise ValueError(f"|rho| reaches {bound}, above declared r_max {self.r_max}")
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    @classmethod
    def from_arrays(
        cls,
        trans,
        reward,
        gamma: float,
        s_in: Optional[FiniteSpace] = None,
        actions: Optional[FiniteSpace] = None,
        s_out: Optional[FiniteSpace] = None,
        r_max: Optional[float] = None,
    ) -> "Oddc":
        """Build a component with deterministic reward signals.

        ``trans[x, a, y]`` is the next-state law and ``reward[x, a]`` the
        scalar reward emitted at ``(x, a)``.  Each distinct reward value
        becomes one signal in the reward space.
        """
        trans = np.asarray(trans, dtype=np.float64)
        reward = np.asarray(reward, dtype=np.float64)
        nx, na, ny = trans.shape
        if reward.shape != (nx, na):
            raise SpaceMismatch(f"reward table shape {reward.shape} != {(nx, na)}")
        s_in = s_in or FiniteSpace.of_size("s", nx)
        actions = actions or FiniteSpace.of_size("a", na)
        s_out = s_out or (s_in if ny == nx else FiniteSpace.of_size("y", ny))
        values, signal = np.unique(reward, return_inverse=True)
        signal = signal.reshape(nx, na)
        rspace = FiniteSpace("R", tuple(f"r{i}" for i in range(values.size)))
        k = np.zeros((nx, na, ny, values.size))
        for x in range(nx):
            for a in range(na):
                k[x, a, :, signal[x, a]] = trans[x, a]
        kernel = Kernel(product_space(s_in, actions), product_space(s_out, rspace), k.reshape(nx * na, ny * values.size))
        return cls(s_in, actions, s_out, rspace, kernel, values, gamma, r_max)

    def kernel_array(self) -> np.ndarray:
        """Kernel as a 4-tensor ``K[x, a, y, r]``."""
        return self.kernel.rows.reshape(self.s_in.size, self.actions.size, self.s_out.size, self.reward_space.size)

    def transition_array(self) -> np.ndarray:
        """State marginal ``P[x, a, y]``."""
        return self.kernel_array().sum(axis=3)

    def reward_array(self) -> np.ndarray:
        """Expected scalar reward ``r[x, a]``."""
        return self.kernel_array().sum(axis=2) @ self.rho

    def to_mdp(self) -> "FiniteMdp":
        return FiniteMdp(
            self.s_in, self.actions, self.reward_array(), self.transition_array(), self.gamma, self.r_max, self.s_out
        )


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Tabular view ``(S, A, r[s, a], P[s, a, s'], gamma)`` of a component.

    ``next_states`` defaults to ``states``; a different space gives an open
    one-step model used on one side of an interface.
    """

    states: FiniteSpace
    actions: FiniteSpace
    reward: np.ndarray
    trans: np.ndarray
    gamma: float
    r_max: Optional[float] = None
    next_states: Optional[FiniteSpace] = None

    def __post_init__(self):
        if self.next_states is None:
            object.__setattr__(self, "next_states", self.states)
        ns, na, ny = self.states.size, self.actions.size, self.next_states.size
        r = np.array(self.reward, dtype=np.float64)
        p = np.array(self.trans, dtype=np.float64)
        if r.shape != (ns, na) or p.shape != (ns, na, ny):
            raise SpaceMismatch(f"tables have shapes {r.shape}, {p.shape}; expected {(ns, na)}, {(ns, na, ny)}")
        # validates stochasticity
        p = Kernel(product_space(self.states, self.actions), self.next_states, p.reshape(ns * na, ny)).rows
        p = p.reshape(ns, na, ny).copy()
        r.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "trans", p)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        bound = float(np.abs(r).max())
        if self.r_max is None:
            object.__setattr__(self, "r_max", bound)
        elif bound > self.r_max + 1e-12:
            raise ValueError(f"|r| reaches {bound}, above declared r_max {self.r_max}")
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def to_oddc(self) -> Oddc:
        return Oddc.from_arrays(self.trans, self.reward, self.gamma, self.states, self.actions, self.next_states, self.r_max)

    def closed_arrays(self, pi: Policy):
        """Policy-averaged reward vector and transition matrix."""
        if pi.state_space != self.states or pi.actions != self.actions:
            raise SpaceMismatch("policy does not match the MDP's state/action spaces")
        r = np.einsum("sa,sa->s", pi.probs, self.reward)
        p = np.einsum("sa,sat->st", pi.probs, self.trans)
        return r, p


def close_loop(m: Oddc, pi: Policy) -> Kernel:
    """``K^pi = K o <id, pi>`` as a kernel ``s_in -> s_out x R``."""
    if pi.state_space != m.s_in:
        raise SpaceMismatch(f"policy states {pi.state_space.name} != component input {m.s_in.name}")
    if pi.actions != m.actions:
        raise SpaceMismatch(f"policy actions {pi.actions.name} != component actions {m.actions.name}")
    return compose_kernels(pair_with_policy(pi.kernel), m.kernel)


def expected_reward(m: Oddc, pi: Policy) -> ValueFn:
    """One-step scalarized reward ``r^pi(s) = sum K^pi(s', r | s) rho(r)``."""
    k = close_loop(m, pi).rows.reshape(m.s_in.size, m.s_out.size, m.reward_space.size)
    r = k.sum(axis=1) @ m.rho
    return ValueFn(m.s_in, r, radius=m.r_max)


def product_policy(p1: Policy, p2: Policy) -> Policy:
    """Independent product ``pi1 (x) pi2`` on paired states and actions."""
    s = product_space(p1.state_space, p2.state_space)
    a = product_space(p1.actions, p2.actions)
    return Policy(Kernel(s, a, np.kron(p1.probs, p2.probs)))


def parallel_oddc(m1: Oddc, m2: Oddc) -> Oddc:
    """Independent parallel product with additive scalarization.

    States, actions and reward signals are paired row-major; the
    scalarization is ``rho1(r1) + rho2(r2)``.  Both components must share
    their discount.
    """
    if m1.gamma != m2.gamma:
        raise ValueError("parallel wiring requires a common discount")
    k1, k2 = m1.kernel_array(), m2.kernel_array()
    # index order: (x1, x2, a1, a2) -> (y1, y2, r1, r2)
    k = np.einsum("iauq,jbvw->ijabuvqw", k1, k2)
    n_in = m1.s_in.size * m2.s_in.size * m1.actions.size * m2.actions.size
    n_out = m1.s_out.size * m2.s_out.size * m1.reward_space.size * m2.reward_space.size
    s_in = product_space(m1.s_in, m2.s_in)
    acts = product_space(m1.actions, m2.actions)
    s_out = product_space(m1.s_out, m2.s_out)
    rsp = product_space(m1.reward_space, m2.reward_space)
    rho = (m1.rho[:, None] + m2.rho[None, :]).ravel()
    kernel = Kernel(product_space(s_in, acts), product_space(s_out, rsp), k.reshape(n_in, n_out))
    return Oddc(s_in, acts, s_out, rsp, kernel, rho, m1.gamma, m1.r_max + m2.r_max)

