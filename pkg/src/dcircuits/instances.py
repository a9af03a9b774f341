"""Seeded random and constructed instances used by tests, demos and the CLI."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .abstraction import AbstractionMap
from .bellman import AffineOperator, Transformer
from .component import FiniteMdp, Oddc, Policy
from .circuit import Hole, Leaf, Parallel, Series, Trace
from .core import FiniteSpace, Kernel, direct_sum, product_space
from .extensions.belief import Pomdp

__all__ = [
    "random_stochastic",
    "random_mdp",
    "random_oddc",
    "random_policy",
    "random_transformer",
    "random_affine",
    "lumpable_mdp",
    "perturbed_abstract",
    "mirror_mdp",
    "random_pomdp",
    "two_state_chain",
    "perturb_transformer",
    "perturb_affine",
    "random_context",
    "CONTEXT_KINDS",
]


def random_stochastic(rng: np.random.Generator, shape, sparsity: float = 0.0) -> np.ndarray:
    """Dirichlet rows along the last axis; ``sparsity`` zeroes that fraction of entries (one kept per row)."""
    m = rng.dirichlet(np.ones(shape[-1]), size=shape[:-1])
    if sparsity > 0:
        mask = rng.random(m.shape) >= sparsity
        keep = rng.integers(0, shape[-1], size=shape[:-1])
        np.put_along_axis(mask, keep[..., None], True, axis=-1)
        m = np.where(mask, m, 0.0)
        m /= m.sum(axis=-1, keepdims=True)
    return m


def random_mdp(rng: np.random.Generator, ns: int, na: int, gamma: float, r_max: float = 1.0, sparsity: float = 0.0) -> FiniteMdp:
    s, a = FiniteSpace.of_size("s", ns), FiniteSpace.of_size("a", na)
    reward = rng.uniform(-r_max, r_max, (ns, na))
    return FiniteMdp(s, a, reward, random_stochastic(rng, (ns, na, ns), sparsity), gamma, r_max)


def random_oddc(
    rng: np.random.Generator,
    ns_in: int,
    na: int,
    ns_out: Optional[int] = None,
    nr: int = 3,
    gamma: float = 0.9,
    s_in: Optional[FiniteSpace] = None,
    s_out: Optional[FiniteSpace] = None,
    actions: Optional[FiniteSpace] = None,
) -> Oddc:
    """Random component with ``nr`` reward signals sampled jointly with the next state."""
    ns_out = ns_in if ns_out is None else ns_out
    s_in = s_in or FiniteSpace.of_size("s", ns_in)
    s_out = s_out or (s_in if ns_out == ns_in else FiniteSpace.of_size("y", ns_out))
    actions = actions or FiniteSpace.of_size("a", na)
    rspace = FiniteSpace("R", tuple(f"r{i}" for i in range(nr)))
    k = random_stochastic(rng, (ns_in * na, ns_out * nr))
    rho = rng.uniform(-1.0, 1.0, nr)
    kernel = Kernel(product_space(s_in, actions), product_space(s_out, rspace), k)
    return Oddc(s_in, actions, s_out, rspace, kernel, rho, gamma, 1.0)


def random_policy(rng: np.random.Generator, states: FiniteSpace, actions: FiniteSpace) -> Policy:
    return Policy.from_array(states, actions, random_stochastic(rng, (states.size, actions.size)))


def random_transformer(
    rng: np.random.Generator, x: FiniteSpace, y: FiniteSpace, gamma: float, r_max: float = 1.0, radius: Optional[float] = None
) -> Transformer:
    reward = rng.uniform(-r_max, r_max, x.size)
    return Transformer(x, y, reward, gamma, Kernel(x, y, random_stochastic(rng, (x.size, y.size))), radius, radius)


def random_affine(rng: np.random.Generator, x: FiniteSpace, y: FiniteSpace, lip: float, scale: float = 1.0) -> AffineOperator:
    """Signed affine map whose rows all have absolute sum ``lip``."""
    a = rng.normal(size=(x.size, y.size))
    a *= lip / np.abs(a).sum(axis=1, keepdims=True)
    return AffineOperator(x, y, rng.uniform(-scale, scale, x.size), a)


def lumpable_mdp(
    rng: np.random.Generator, block_sizes, na: int, gamma: float, r_max: float = 1.0
) -> Tuple[FiniteMdp, FiniteMdp, AbstractionMap]:
    """Concrete MDP exactly lumpable onto ``len(block_sizes)`` blocks.

    Rewards are block-constant and every state's pushforward transition
    law equals its block's abstract law; mass is spread inside each target
    block by per-state random weights.
    """
    nb = len(block_sizes)
    phi = np.repeat(np.arange(nb), block_sizes)
    ns = phi.size
    abs_p = random_stochastic(rng, (nb, na, nb))
    abs_r = rng.uniform(-r_max, r_max, (nb, na))
    trans = np.zeros((ns, na, ns))
    for s in range(ns):
        for a in range(na):
            for b in range(nb):
                members = np.flatnonzero(phi == b)
                trans[s, a, members] = abs_p[phi[s], a, b] * rng.dirichlet(np.ones(members.size))
    s_sp, b_sp, a_sp = FiniteSpace.of_size("s", ns), FiniteSpace.of_size("b", nb), FiniteSpace.of_size("a", na)
    concrete = FiniteMdp(s_sp, a_sp, abs_r[phi], trans, gamma, r_max)
    abstract = FiniteMdp(b_sp, a_sp, abs_r, abs_p, gamma, r_max)
    return concrete, abstract, AbstractionMap(s_sp, b_sp, phi)


def perturbed_abstract(
    rng: np.random.Generator, abstract: FiniteMdp, eps_r: float, eps_p: float, r_max: Optional[float] = None
) -> FiniteMdp:
    """Abstract model with rewards moved by up to ``eps_r`` and rows mixed toward random laws."""
    r = abstract.reward + rng.uniform(-eps_r, eps_r, abstract.reward.shape)
    lam = eps_p / 2.0
    p = (1.0 - lam) * abstract.trans + lam * random_stochastic(rng, abstract.trans.shape)
    bound = max(abstract.r_max + eps_r, float(np.abs(r).max())) if r_max is None else r_max
    return FiniteMdp(abstract.states, abstract.actions, r, p, abstract.gamma, bound)


def mirror_mdp(rng: np.random.Generator, gamma: float, noise: float = 0.0) -> Tuple[FiniteMdp, np.ndarray, np.ndarray]:
    """Two-state chain symmetric under swapping states and actions.

    Returns ``(mdp, phi, eta)`` with ``phi = eta = [1, 0]``; ``noise`` adds
    a random asymmetric perturbation.
    """
    p = rng.dirichlet(np.ones(2), size=2)  # rows for (s0, a0), (s0, a1)
    r = rng.uniform(-1, 1, 2)
    trans = np.zeros((2, 2, 2))
    reward = np.zeros((2, 2))
    for a in range(2):
        trans[0, a] = p[a]
        trans[1, 1 - a] = p[a][::-1]
        reward[0, a] = r[a]
        reward[1, 1 - a] = r[a]
    if noise > 0:
        reward = np.clip(reward + rng.uniform(-noise, noise, reward.shape), -1, 1)
        trans = (1 - noise) * trans + noise * random_stochastic(rng, trans.shape)
    s, a = FiniteSpace.of_size("s", 2), FiniteSpace.of_size("a", 2)
    return FiniteMdp(s, a, reward, trans, gamma, 1.0), np.array([1, 0]), np.array([1, 0])


def random_pomdp(rng: np.random.Generator, ns: int, na: int, no: int, gamma: float) -> Pomdp:
    return Pomdp.from_arrays(
        random_stochastic(rng, (ns, na, ns)),
        random_stochastic(rng, (ns, na, no)),
        rng.uniform(-1, 1, (ns, na)),
        gamma,
        rng.dirichlet(np.ones(ns)),
    )


def two_state_chain() -> Transformer:
    """``P = [[.5, .5], [0, 1]]``, ``r = [1, 0]``, ``gamma = 0.5``; fixed point ``[4/3, 0]``."""
    s = FiniteSpace.of_size("s", 2)
    return Transformer(s, s, [1.0, 0.0], 0.5, Kernel(s, s, [[0.5, 0.5], [0.0, 1.0]]), 2.0, 2.0)


CONTEXT_KINDS = ("series_left", "series_right", "parallel", "trace", "series_trace")


def perturb_transformer(rng: np.random.Generator, t: Transformer, eps: float) -> Transformer:
    """Reward noise of size ``eps`` and transition rows mixed toward random laws at rate ``eps``."""
    r = t.reward + rng.uniform(-eps, eps, t.reward.shape)
    p = (1 - eps) * t.trans.rows + eps * random_stochastic(rng, t.trans.rows.shape)
    return Transformer(t.in_space, t.out_space, r, t.gamma, Kernel(t.in_space, t.out_space, p))


def perturb_affine(rng: np.random.Generator, t: AffineOperator, eps: float) -> AffineOperator:
    """Offset and linear noise of size ``eps`` with row sums rescaled to the original Lipschitz constant."""
    b = t.offset + rng.uniform(-eps, eps, t.offset.shape)
    a = t.linear + rng.uniform(-eps, eps, t.linear.shape) * np.abs(t.linear).sum(axis=1, keepdims=True) / t.linear.shape[1]
    a *= t.lipschitz / np.abs(a).sum(axis=1, keepdims=True)
    return AffineOperator(t.in_space, t.out_space, b, a)


def _trace_context(rng, s: FiniteSpace, gamma: float):
    z = FiniteSpace.of_size("z", int(rng.integers(1, 4)))
    w = FiniteSpace.of_size("w", int(rng.integers(2, 5)))
    g = random_affine(rng, direct_sum(s, z), w, lip=0.8)
    hole = Hole(w, direct_sum(s, z))
    filler = random_affine(rng, w, direct_sum(s, z), lip=0.5)
    return Trace(Series(Leaf(g), hole), z), filler


def random_context(rng: np.random.Generator, kind: str, eps: float = 0.05, gamma: Optional[float] = None):
    """A closed one-hole context together with two nearby fillers.

    Returns ``(context, t1, t2)``.  ``kind`` is one of ``CONTEXT_KINDS``.
    """
    gamma = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    s = FiniteSpace.of_size("s", int(rng.integers(2, 7)))
    u = FiniteSpace.of_size("u", int(rng.integers(2, 7)))
    if kind == "series_left":
        ctx = Series(Leaf(random_transformer(rng, s, u, gamma)), Hole(u, s))
        t1 = random_transformer(rng, u, s, gamma)
    elif kind == "series_right":
        ctx = Series(Hole(s, u), Leaf(random_transformer(rng, u, s, gamma)))
        t1 = random_transformer(rng, s, u, gamma)
    elif kind == "parallel":
        ctx = Parallel(Hole(s, s), Leaf(random_transformer(rng, u, u, gamma)))
        t1 = random_transformer(rng, s, s, gamma)
    elif kind == "trace":
        ctx, t1 = _trace_context(rng, s, gamma)
        return ctx, t1, perturb_affine(rng, t1, eps)
    elif kind == "series_trace":
        inner, t1 = _trace_context(rng, s, gamma)
        ctx = Series(Leaf(random_transformer(rng, s, s, gamma)), inner)
        return ctx, t1, perturb_affine(rng, t1, eps)
    else:
        raise ValueError(f"unknown context kind {kind!r}")
    return ctx, t1, perturb_transformer(rng, t1, eps)
