"""Finite POMDPs, the Bayes filter and exact reachable belief trees."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..core import Dist, FiniteSpace, Kernel, product_space
from ..errors import BudgetExceeded, SpaceMismatch

__all__ = [
    "Pomdp",
    "BeliefNode",
    "BeliefTree",
    "BeliefReport",
    "bayes_update",
    "belief_mdp_to_horizon",
    "tree_value",
    "simulate_pomdp",
    "verify_belief_equivalence",
    "state_policy_on_beliefs",
]

NODE_BUDGET = 1_000_000

# policy(beliefs[n, S], depth) -> action probabilities [n, A]
BeliefPolicy = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True, eq=False)
class Pomdp:
    """``(S, A, O, P, G, r, gamma, nu0)`` with ``G`` keyed by ``(s', a)``."""

    states: FiniteSpace
    actions: FiniteSpace
    observations: FiniteSpace
    trans: Kernel
    obs: Kernel
    reward: np.ndarray
    gamma: float
    init_belief: Dist
    r_max: Optional[float] = None

    def __post_init__(self):
        sa = product_space(self.states, self.actions)
        if self.trans.src != sa or self.trans.dst != self.states:
            raise SpaceMismatch("trans must be a kernel S x A -> S")
        if self.obs.src != sa or self.obs.dst != self.observations:
            raise SpaceMismatch("obs must be a kernel S x A -> O keyed by (next state, action)")
        if self.init_belief.space != self.states:
            raise SpaceMismatch("initial belief must be a distribution over S")
        r = np.array(self.reward, dtype=np.float64)
        if r.shape != (self.states.size, self.actions.size):
            raise SpaceMismatch("reward must be an S x A table")
        r.setflags(write=False)
        object.__setattr__(self, "reward", r)
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        bound = float(np.abs(r).max())
        if self.r_max is None:
            object.__setattr__(self, "r_max", bound)
        elif bound > self.r_max + 1e-12:
            raise ValueError("reward exceeds the declared r_max")

    @classmethod
    def from_arrays(cls, trans, obs, reward, gamma, init) -> "Pomdp":
        """``trans[s, a, s']``, ``obs[s', a, o]``, ``reward[s, a]``, ``init[s]``."""
        trans = np.asarray(trans, dtype=np.float64)
        obs = np.asarray(obs, dtype=np.float64)
        ns, na, _ = trans.shape
        no = obs.shape[2]
        s, a, o = FiniteSpace.of_size("s", ns), FiniteSpace.of_size("a", na), FiniteSpace.of_size("o", no)
        sa = product_space(s, a)
        return cls(s, a, o, Kernel(sa, s, trans.reshape(ns * na, ns)), Kernel(sa, o, obs.reshape(ns * na, no)),
                   reward, gamma, Dist(s, init))

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    @property
    def p_array(self) -> np.ndarray:
        """``P[s, a, s']``."""
        return self.trans.rows.reshape(self.states.size, self.actions.size, self.states.size)

    @property
    def g_array(self) -> np.ndarray:
        """``G[s', a, o]``."""
        return self.obs.rows.reshape(self.states.size, self.actions.size, self.observations.size)


def _update_batch(p: Pomdp, beliefs: np.ndarray, a: int):
    """Posteriors for every observation: returns ``(post[n, O, S], pred[n, O])``."""
    prior = beliefs @ p.p_array[:, a, :]
    joint = prior[:, None, :] * p.g_array[:, a, :].T[None, :, :]
    pred = joint.sum(axis=2)
    safe = np.where(pred > 0, pred, 1.0)
    post = joint / safe[:, :, None]
    post = np.where((pred > 0)[:, :, None], post, 1.0 / p.states.size)
    return post, pred


def bayes_update(p: Pomdp, b: Dist, a: int, o: int):
    """Posterior ``tau(b, a, o)``, its predictive probability, and a degenerate flag.

    Observations with zero predictive probability get the uniform posterior.
    """
    if b.space != p.states:
        raise SpaceMismatch("belief must be over the POMDP states")
    post, pred = _update_batch(p, b.probs[None, :], int(a))
    mass = float(pred[0, o])
    return Dist(p.states, post[0, o]), mass, mass == 0.0


@dataclass(frozen=True)
class BeliefNode:
    belief: Dist
    depth: int
    parent: Optional[int]
    action: Optional[int]
    observation: Optional[int]
    prob: float
    degenerate: bool = False


@dataclass
class BeliefTree:
    """Reachable beliefs stored level by level.

    ``levels[d]`` holds ``beliefs[n, S]``, ``parent``, ``action``,
    ``observation``, ``prob`` (the predictive mass of the edge) and
    ``degenerate`` arrays for the nodes at depth ``d``.
    """

    pomdp: Pomdp
    horizon: int
    levels: List[dict] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return sum(len(l["prob"]) for l in self.levels)

    def node(self, depth: int, i: int) -> BeliefNode:
        l = self.levels[depth]
        par = None if depth == 0 else int(l["parent"][i])
        act = None if depth == 0 else int(l["action"][i])
        obs = None if depth == 0 else int(l["observation"][i])
        return BeliefNode(Dist(self.pomdp.states, l["beliefs"][i]), depth, par, act, obs, float(l["prob"][i]),
                          bool(l["degenerate"][i]))

    def nodes(self, depth: int) -> List[BeliefNode]:
        return [self.node(depth, i) for i in range(len(self.levels[depth]["prob"]))]

    def edge_masses(self, depth: int) -> np.ndarray:
        """Total child mass per ``(parent, action)`` pair leaving depth ``depth``."""
        l = self.levels[depth + 1]
        na = self.pomdp.actions.size
        key = l["parent"] * na + l["action"]
        n_par = len(self.levels[depth]["prob"])
        tot = np.bincount(key, weights=l["prob"], minlength=n_par * na).reshape(n_par, na)
        return tot


def belief_mdp_to_horizon(
    p: Pomdp,
    horizon: int,
    policy: Optional[BeliefPolicy] = None,
    prune_zero: bool = False,
    budget: int = NODE_BUDGET,
) -> BeliefTree:
    """Enumerate every belief reachable from ``nu0`` within ``horizon`` steps.

    No beliefs are merged.  With ``policy`` only actions of positive
    probability are expanded; with ``prune_zero`` zero-mass observations
    are dropped instead of being kept as flagged uniform-posterior leaves.
    """
    tree = BeliefTree(p, horizon)
    beliefs = p.init_belief.probs[None, :].copy()
    tree.levels.append(dict(beliefs=beliefs, parent=np.zeros(1, int), action=np.zeros(1, int),
                            observation=np.zeros(1, int), prob=np.ones(1), degenerate=np.zeros(1, bool)))
    total = 1
    na, no = p.actions.size, p.observations.size
    for d in range(horizon):
        cur = tree.levels[-1]["beliefs"]
        n = cur.shape[0]
        allowed = np.ones((n, na), bool) if policy is None else np.asarray(policy(cur, d)) > 0
        parts = []
        for a in range(na):
            idx = np.flatnonzero(allowed[:, a])
            if idx.size == 0:
                continue
            post, pred = _update_batch(p, cur[idx], a)
            par = np.repeat(idx, no)
            obs = np.tile(np.arange(no), idx.size)
            b = post.reshape(-1, p.states.size)
            m = pred.reshape(-1)
            keep = m > 0 if prune_zero else np.ones(m.size, bool)
            parts.append((b[keep], par[keep], np.full(keep.sum(), a), obs[keep], m[keep]))
        count = sum(x[0].shape[0] for x in parts)
        total += count
        if total > budget:
            raise BudgetExceeded(f"belief tree exceeds {budget} nodes at depth {d + 1}")
        if parts:
            cat = [np.concatenate(z) for z in zip(*parts)]
        else:
            cat = [np.zeros((0, p.states.size)), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), np.zeros(0)]
        tree.levels.append(dict(beliefs=cat[0], parent=cat[1], action=cat[2], observation=cat[3], prob=cat[4],
                                degenerate=cat[4] == 0.0))
    return tree


def tree_value(tree: BeliefTree, policy: BeliefPolicy) -> float:
    """Exact expected discounted return of ``policy`` over the first ``horizon`` rewards."""
    p = tree.pomdp
    na = p.actions.size
    g = p.gamma
    v_next = None
    for d in range(tree.horizon - 1, -1, -1):
        lvl = tree.levels[d]
        b = lvl["beliefs"]
        pi = np.asarray(policy(b, d), dtype=np.float64)
        q = b @ p.reward
        if v_next is not None:
            child = tree.levels[d + 1]
            key = child["parent"] * na + child["action"]
            cont = np.bincount(key, weights=child["prob"] * v_next, minlength=b.shape[0] * na).reshape(b.shape[0], na)
            q = q + g * cont
        v_next = (pi * q).sum(axis=1)
    if v_next is None:
        return 0.0
    return float(v_next[0])


def state_policy_on_beliefs(pi_states: np.ndarray) -> BeliefPolicy:
    """Belief policy ``b -> b @ pi``; on Dirac beliefs this is the state policy."""
    pi_states = np.asarray(pi_states, dtype=np.float64)
    return lambda beliefs, depth: beliefs @ pi_states


def _sample_rows(rng, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(probs.shape[0])[:, None]
    return np.minimum((cdf <= u).sum(axis=1), probs.shape[1] - 1)


def simulate_pomdp(p: Pomdp, policy: BeliefPolicy, horizon: int, n_traj: int, seed: int):
    """Monte Carlo returns with the filter run online along each trajectory.

    Returns ``(mean, std_error)`` of ``sum_{t < horizon} gamma^t r(s_t, a_t)``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    ns = p.states.size
    pa, ga = p.p_array, p.g_array
    s = _sample_rows(rng, np.broadcast_to(p.init_belief.probs, (n_traj, ns)))
    beliefs = np.broadcast_to(p.init_belief.probs, (n_traj, ns)).copy()
    ret = np.zeros(n_traj)
    disc = 1.0
    for t in range(horizon):
        a = _sample_rows(rng, np.asarray(policy(beliefs, t), dtype=np.float64))
        ret += disc * p.reward[s, a]
        s2 = _sample_rows(rng, pa[s, a])
        o = _sample_rows(rng, ga[s2, a])
        # filter update, per action group
        for act in np.unique(a):
            idx = np.flatnonzero(a == act)
            post, _ = _update_batch(p, beliefs[idx], int(act))
            beliefs[idx] = post[np.arange(idx.size), o[idx]]
        s = s2
        disc *= p.gamma
    se = float(ret.std(ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else 0.0
    return float(ret.mean()), se


@dataclass(frozen=True)
class BeliefReport:
    exact: float
    mc_mean: float
    mc_std_error: float
    tolerance: float
    n_nodes: int

    @property
    def ok(self) -> bool:
        return abs(self.exact - self.mc_mean) <= self.tolerance


def verify_belief_equivalence(
    p: Pomdp, policy: BeliefPolicy, horizon: int, n_traj: int = 20_000, seed: int = 0, n_sigma: float = 4.0
) -> BeliefReport:
    """Exact belief-tree return against online-filter Monte Carlo on the POMDP.

    The tolerance is ``n_sigma`` standard errors plus ``gamma^H V_max``.
    """
    tree = belief_mdp_to_horizon(p, horizon, policy=policy, prune_zero=True)
    exact = tree_value(tree, policy)
    mean, se = simulate_pomdp(p, policy, horizon, n_traj, seed)
    tol = n_sigma * se + p.gamma ** horizon * p.v_max
    return BeliefReport(exact, mean, se, tol, tree.n_nodes)
