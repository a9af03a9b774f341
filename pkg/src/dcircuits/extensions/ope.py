"""Finite-prefix importance weights, prefix enumeration and module factorization."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterator, List, Sequence, Tuple

import numpy as np

from ..component import Oddc, Policy, product_policy
from ..core import Dist
from ..errors import AbsoluteContinuityViolation, SpaceMismatch

__all__ = [
    "TrajectoryPrefix",
    "importance_weights",
    "enumerate_prefixes",
    "prefix_probability",
    "change_of_measure_gap",
    "martingale_gap",
    "pair_prefixes",
    "FactorizationReport",
    "factorized_weights",
    "series_chain_rule_gap",
]


@dataclass(frozen=True, eq=False)
class TrajectoryPrefix:
    """``(s_0, a_0, r_0, s_1, ..., s_T)`` as index arrays.

    ``states`` has ``T + 1`` entries; ``actions`` and ``rewards`` (signal
    indices) have ``T``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64)
        a = np.asarray(self.actions, dtype=np.int64)
        r = np.asarray(self.rewards, dtype=np.int64)
        if s.ndim != 1 or a.shape != (s.size - 1,) or r.shape != a.shape:
            raise ValueError("a prefix needs T + 1 states and T actions and reward signals")
        for arr in (s, a, r):
            arr.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "rewards", r)

    @property
    def length(self) -> int:
        return int(self.actions.size)

    def records(self) -> Iterator[Tuple[int, int, int, int]]:
        for t in range(self.length):
            yield int(self.states[t]), int(self.actions[t]), int(self.rewards[t]), int(self.states[t + 1])


def importance_weights(traj: TrajectoryPrefix, pi: Policy, mu: Policy):
    """Per-step ratios ``pi(a_t | s_t) / mu(a_t | s_t)`` and their running products.

    Returns
    -------
    (ndarray, ndarray)
        Step weights of length ``T`` and cumulative weights of length
        ``T + 1`` starting at 1.
    """
    if pi.state_space != mu.state_space or pi.actions != mu.actions:
        raise SpaceMismatch("target and behavior policies must share spaces")
    s, a = traj.states[:-1], traj.actions
    num = pi.probs[s, a]
    den = mu.probs[s, a]
    bad = np.flatnonzero((num > 0) & (den == 0))
    if bad.size:
        t = int(bad[0])
        raise AbsoluteContinuityViolation(
            f"target puts mass on action {int(a[t])} at state {int(s[t])} (step {t}) where behavior has none",
            step=t, state=int(s[t]), action=int(a[t]),
        )
    step = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return step, np.concatenate([[1.0], np.cumprod(step)])


def prefix_probability(m: Oddc, init: Dist, pi: Policy, traj: TrajectoryPrefix) -> float:
    k = m.kernel_array()
    p = init.probs[traj.states[0]]
    for s, a, r, s2 in traj.records():
        p *= pi.probs[s, a] * k[s, a, s2, r]
    return float(p)


def enumerate_prefixes(m: Oddc, init: Dist, pi: Policy, horizon: int, keep_zero: bool = False):
    """All length-``horizon`` prefixes with their probabilities under ``pi``.

    Zero-probability prefixes are dropped unless ``keep_zero``.
    """
    if m.s_in != m.s_out:
        raise SpaceMismatch("prefix enumeration needs a closed component")
    k = m.kernel_array()
    ns, na, nr = m.s_in.size, m.actions.size, m.reward_space.size
    out: List[Tuple[TrajectoryPrefix, float]] = []
    steps = list(itertools.product(range(na), range(nr), range(ns)))
    for s0 in range(ns):
        for seq in itertools.product(steps, repeat=horizon):
            states = [s0]
            p = init.probs[s0]
            for a, r, s2 in seq:
                p *= pi.probs[states[-1], a] * k[states[-1], a, s2, r]
                states.append(s2)
            if p > 0 or keep_zero:
                out.append((TrajectoryPrefix(states, [x[0] for x in seq], [x[1] for x in seq]), float(p)))
    return out


def change_of_measure_gap(m: Oddc, init: Dist, pi: Policy, mu: Policy, horizon: int, g: Callable) -> float:
    """``|E_mu[W_T g] - E_pi[g]|`` computed by full enumeration."""
    lhs = 0.0
    for traj, p in enumerate_prefixes(m, init, mu, horizon):
        lhs += p * importance_weights(traj, pi, mu)[1][-1] * g(traj)
    rhs = sum(p * g(traj) for traj, p in enumerate_prefixes(m, init, pi, horizon))
    return abs(lhs - rhs)


def martingale_gap(m: Oddc, init: Dist, pi: Policy, mu: Policy, horizon: int) -> float:
    """``max_t |E_mu[W_t] - 1|`` over ``t <= horizon`` by enumeration."""
    total = np.zeros(horizon + 1)
    for traj, p in enumerate_prefixes(m, init, mu, horizon):
        total += p * importance_weights(traj, pi, mu)[1]
    return float(np.abs(total - 1.0).max())


def pair_prefixes(t1: TrajectoryPrefix, t2: TrajectoryPrefix, m1: Oddc, m2: Oddc) -> TrajectoryPrefix:
    """Joint prefix on the product component with row-major index pairing."""
    if t1.length != t2.length:
        raise ValueError("module prefixes must have equal length")
    s = t1.states * m2.s_in.size + t2.states
    a = t1.actions * m2.actions.size + t2.actions
    r = t1.rewards * m2.reward_space.size + t2.rewards
    return TrajectoryPrefix(s, a, r)


@dataclass(frozen=True)
class FactorizationReport:
    max_weight_error: float
    second_moment_global: float
    second_moments: Tuple[float, float]
    log_additivity_gap: float
    n_prefixes: int


def factorized_weights(
    m1: Oddc, m2: Oddc, init1: Dist, init2: Dist, pis: Sequence[Policy], mus: Sequence[Policy], horizon: int
) -> FactorizationReport:
    """Enumerate product prefixes and compare global and per-module weights.

    The global weight uses the product policies on the paired prefix; it is
    asserted equal to the product of module weights (relative ``1e-12``).
    Second moments under the behavior law are exact expectations.
    """
    pi = product_policy(pis[0], pis[1])
    mu = product_policy(mus[0], mus[1])
    pre1 = enumerate_prefixes(m1, init1, mus[0], horizon)
    pre2 = enumerate_prefixes(m2, init2, mus[1], horizon)
    w1 = [importance_weights(t, pis[0], mus[0])[1][-1] for t, _ in pre1]
    w2 = [importance_weights(t, pis[1], mus[1])[1][-1] for t, _ in pre2]
    m1s = sum(p * w * w for (_, p), w in zip(pre1, w1))
    m2s = sum(p * w * w for (_, p), w in zip(pre2, w2))
    # joint prefixes in row-major pairing, all at once
    n2 = m2.s_in.size
    s1 = np.array([t.states for t, _ in pre1])
    s2 = np.array([t.states for t, _ in pre2])
    a1 = np.array([t.actions for t, _ in pre1])
    a2 = np.array([t.actions for t, _ in pre2])
    n_pairs = len(pre1) * len(pre2)
    js = (s1[:, None, :-1] * n2 + s2[None, :, :-1]).reshape(n_pairs, horizon)
    ja = (a1[:, None, :] * m2.actions.size + a2[None, :, :]).reshape(n_pairs, horizon)
    num, den = pi.probs[js, ja], mu.probs[js, ja]
    bad = np.argwhere((num > 0) & (den == 0))
    if bad.size:
        i, t = (int(x) for x in bad[0])
        raise AbsoluteContinuityViolation("target is not absolutely continuous on a joint prefix",
                                          step=t, state=int(js[i, t]), action=int(ja[i, t]))
    w = np.prod(np.divide(num, den, out=np.zeros_like(num), where=den > 0), axis=1)
    prod = np.outer(w1, w2).ravel()
    worst = float((np.abs(w - prod) / np.maximum(1.0, np.abs(prod))).max()) if w.size else 0.0
    probs = np.outer([p for _, p in pre1], [p for _, p in pre2]).ravel()
    glob = float(np.sum(probs * w * w))
    if worst > 1e-12:
        raise AssertionError(f"global weight differs from the module product by {worst:.3e}")
    gap = abs(np.log(glob) - (np.log(m1s) + np.log(m2s)))
    return FactorizationReport(worst, glob, (m1s, m2s), float(gap), len(pre1) * len(pre2))


def series_chain_rule_gap(
    p1: np.ndarray,
    p2: np.ndarray,
    pis: Sequence[np.ndarray],
    mus: Sequence[np.ndarray],
    init: np.ndarray,
    horizon: int,
    g: Callable,
) -> Tuple[float, float]:
    """Chain-rule check for a series circuit ``S -> U -> S`` by enumeration.

    Each macro step draws ``a1 ~ pi1(. | s)``, ``u ~ p1[s, a1]``,
    ``a2 ~ pi2(. | u)``, ``s' ~ p2[u, a2]``; the interface ``u`` is an
    explicit coordinate of the path.  Returns the worst deviation of the
    path-probability ratio from the product of module weights, and
    ``|E_mu[W g] - E_pi[g]|``.
    """
    ns, na1, nu = p1.shape
    _, na2, _ = p2.shape
    step_space = list(itertools.product(range(na1), range(nu), range(na2), range(ns)))
    worst = 0.0
    lhs = rhs = 0.0
    for s0 in range(ns):
        for seq in itertools.product(step_space, repeat=horizon):
            s = s0
            q_mu = q_pi = init[s0]
            w1 = w2 = 1.0
            for a1, u, a2, s2 in seq:
                dyn = p1[s, a1, u] * p2[u, a2, s2]
                q_mu *= mus[0][s, a1] * mus[1][u, a2] * dyn
                q_pi *= pis[0][s, a1] * pis[1][u, a2] * dyn
                if mus[0][s, a1] > 0:
                    w1 *= pis[0][s, a1] / mus[0][s, a1]
                if mus[1][u, a2] > 0:
                    w2 *= pis[1][u, a2] / mus[1][u, a2]
                s = s2
            path = (s0,) + tuple(seq)
            val = g(path)
            rhs += q_pi * val
            if q_mu > 0:
                worst = max(worst, abs(q_pi / q_mu - w1 * w2) / max(1.0, w1 * w2))
                lhs += q_mu * w1 * w2 * val
    return worst, abs(lhs - rhs)
