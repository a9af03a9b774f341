"""State abstractions: MDP homomorphisms, their value bounds and typed adapters.

An :class:`AbstractionMap` is a surjection ``phi : S -> S_hat`` with an
optional action relabeling ``eta``.  Concrete and abstract blocks are
compared only after adapting both to the common type ``B(S_hat) -> B(S)``:

* ``A_phi(T) = T o phi^*`` , i.e. ``V_hat -> r + gamma * P Phi V_hat``
* ``A_hat_phi(T_hat) = phi^* o T_hat``, i.e. ``V_hat -> r_hat[phi] + gamma * P_hat[phi] V_hat``

where ``Phi`` is the 0/1 membership matrix of ``phi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .bellman import AffineOperator, OptimalityOperator, Transformer, make_transformer, operator_distance, solve_linear
from .circuit import CongruenceReport, Expr, congruence_bound
from .component import FiniteMdp, Policy
from .core import Dist, FiniteSpace, Kernel, ValueFn
from .errors import BoundViolation, NotExact, SpaceMismatch, TypeMismatch

__all__ = [
    "AbstractionMap",
    "HomReport",
    "AdapterReport",
    "pushforward",
    "pullback_value",
    "measure_mismatch",
    "lift_policy",
    "verify_exact_hom",
    "verify_approx_hom",
    "adapters",
    "adapter_defect",
    "selection_operator",
    "abstraction_in_context",
    "verify_symmetry",
]

EXACT_TOL = 1e-12
SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class AbstractionMap:
    """Surjection ``phi`` of state indices with optional action relabeling ``eta``."""

    concrete: FiniteSpace
    abstract_: FiniteSpace
    phi: np.ndarray
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        phi = np.array(self.phi, dtype=np.int64)
        if phi.shape != (self.concrete.size,):
            raise SpaceMismatch(f"phi needs one entry per concrete state, got shape {phi.shape}")
        if phi.min() < 0 or phi.max() >= self.abstract_.size:
            raise ValueError("phi maps outside the abstract space")
        if np.unique(phi).size != self.abstract_.size:
            raise ValueError("phi must be surjective onto the abstract space")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        if self.eta is not None:
            eta = np.array(self.eta, dtype=np.int64)
            if eta.ndim != 1 or eta.min() < 0 or eta.max() >= eta.size:
                raise ValueError("eta must be a total map on action indices")
            eta.setflags(write=False)
            object.__setattr__(self, "eta", eta)

    @property
    def matrix(self) -> np.ndarray:
        """Membership matrix ``Phi[s, b] = [phi(s) == b]``."""
        m = np.zeros((self.concrete.size, self.abstract_.size))
        m[np.arange(self.concrete.size), self.phi] = 1.0
        return m

    def action_map(self, n_actions: int) -> np.ndarray:
        if self.eta is None:
            return np.arange(n_actions)
        if self.eta.size != n_actions:
            raise SpaceMismatch(f"eta covers {self.eta.size} actions, model has {n_actions}")
        return self.eta

    def representatives(self) -> np.ndarray:
        """Lowest concrete index in each fiber."""
        reps = np.full(self.abstract_.size, -1)
        for s in range(self.concrete.size - 1, -1, -1):
            reps[self.phi[s]] = s
        return reps

    @classmethod
    def identity(cls, space: FiniteSpace) -> "AbstractionMap":
        return cls(space, space, np.arange(space.size))


@dataclass(frozen=True)
class HomReport:
    eps_r: float
    eps_P: float
    exact: bool
    bound: float
    measured_gap: float
    v_max: float
    gamma: float
    intertwining_residual: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.measured_gap <= self.bound + SLACK


@dataclass(frozen=True)
class AdapterReport:
    defect: float
    eps_r: float
    eps_P: float
    bound: float


def pushforward(phi: AbstractionMap, mu: Dist) -> Dist:
    if mu.space != phi.concrete:
        raise SpaceMismatch(f"distribution on {mu.space.name}, abstraction from {phi.concrete.name}")
    return Dist(phi.abstract_, np.bincount(phi.phi, weights=mu.probs, minlength=phi.abstract_.size))


def pullback_value(phi: AbstractionMap, vhat: ValueFn) -> ValueFn:
    if vhat.space != phi.abstract_:
        raise SpaceMismatch(f"value on {vhat.space.name}, abstraction onto {phi.abstract_.name}")
    return ValueFn(phi.concrete, vhat.values[phi.phi], vhat.radius)


def _check_pair(concrete: FiniteMdp, abstract: FiniteMdp, phi: AbstractionMap):
    if concrete.states != phi.concrete or abstract.states != phi.abstract_:
        raise SpaceMismatch("abstraction map does not match the models' state spaces")
    if concrete.next_states != concrete.states or abstract.next_states != abstract.states:
        raise TypeMismatch("homomorphism checks need closed models")
    eta = phi.action_map(concrete.actions.size)
    if eta.max() >= abstract.actions.size:
        raise SpaceMismatch("eta maps outside the abstract action space")
    return eta


def measure_mismatch(concrete: FiniteMdp, abstract: FiniteMdp, phi: AbstractionMap) -> Tuple[float, float]:
    """Uniform reward and pushforward-TV mismatch over all ``(s, a)``.

    Concrete ``(s, a)`` is compared with abstract ``(phi(s), eta(a))``.
    """
    eta = _check_pair(concrete, abstract, phi)
    r_hat = abstract.reward[phi.phi][:, eta]
    eps_r = float(np.abs(concrete.reward - r_hat).max())
    pushed = concrete.trans @ phi.matrix
    p_hat = abstract.trans[phi.phi][:, eta]
    eps_p = float(np.abs(pushed - p_hat).sum(axis=2).max())
    return eps_r, eps_p


def lift_policy(phi: AbstractionMap, pihat: Policy, actions: Optional[FiniteSpace] = None) -> Policy:
    """Concrete policy ``pi(a | s) = pihat(eta(a) | phi(s))``; ``eta`` must be a bijection."""
    actions = pihat.actions if actions is None else actions
    eta = phi.action_map(actions.size)
    if np.unique(eta).size != eta.size or eta.size != pihat.actions.size:
        raise ValueError("policy lifting needs eta to be a bijection onto the abstract actions")
    probs = pihat.probs[phi.phi][:, eta]
    return Policy.from_array(phi.concrete, actions, probs)


def _common_vmax(concrete: FiniteMdp, abstract: FiniteMdp) -> float:
    if concrete.gamma != abstract.gamma:
        raise ValueError("concrete and abstract models must share gamma")
    if abs(concrete.r_max - abstract.r_max) > 1e-12:
        raise ValueError(f"models declare different reward bounds {concrete.r_max} and {abstract.r_max}")
    return concrete.r_max / (1.0 - concrete.gamma)


def _values_and_ops(concrete: FiniteMdp, abstract: FiniteMdp, phi: AbstractionMap, pihat: Policy):
    pi = lift_policy(phi, pihat, concrete.actions)
    t = make_transformer(concrete, pi)
    t_hat = make_transformer(abstract, pihat)
    return t, t_hat, solve_linear(t).values, solve_linear(t_hat).values


def verify_exact_hom(
    concrete: FiniteMdp,
    abstract: FiniteMdp,
    phi: AbstractionMap,
    pihat: Policy,
    n_random: int = 100,
    seed: int = 0,
    optimality: bool = False,
) -> HomReport:
    """Check that an exact homomorphism intertwines backups and preserves values.

    With ``optimality=True`` the optimality backups and optimal values are
    compared as well.  The reported residual is the worst over all checks.
    """
    eps_r, eps_p = measure_mismatch(concrete, abstract, phi)
    if eps_r > EXACT_TOL or eps_p > EXACT_TOL:
        raise NotExact(f"mismatch (eps_r, eps_P) = ({eps_r:.3e}, {eps_p:.3e}) is not zero")
    v_max = _common_vmax(concrete, abstract)
    t, t_hat, v, v_hat = _values_and_ops(concrete, abstract, phi, pihat)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-v_max, v_max, (n_random, phi.abstract_.size))
    residual = max(float(np.abs(t(w[phi.phi]) - t_hat(w)[phi.phi]).max()) for w in samples)
    gap = float(np.abs(v - v_hat[phi.phi]).max())
    if optimality:
        opt, opt_hat = OptimalityOperator(concrete), OptimalityOperator(abstract)
        residual = max(residual, max(float(np.abs(opt(w[phi.phi]) - opt_hat(w)[phi.phi]).max()) for w in samples))
        vs, vs_hat = opt.solve(tol=1e-12).values, opt_hat.solve(tol=1e-12).values
        gap = max(gap, float(np.abs(vs - vs_hat[phi.phi]).max()))
    if residual > 1e-10 or gap > 1e-8:
        raise BoundViolation(f"exact homomorphism residual {residual:.3e}, value gap {gap:.3e}")
    return HomReport(eps_r, eps_p, True, 0.0, gap, v_max, concrete.gamma, residual)


def verify_approx_hom(concrete: FiniteMdp, abstract: FiniteMdp, phi: AbstractionMap, pihat: Policy) -> HomReport:
    """Value bound ``(eps_r + gamma V_max eps_P) / (1 - gamma)`` against the measured gap."""
    eps_r, eps_p = measure_mismatch(concrete, abstract, phi)
    v_max = _common_vmax(concrete, abstract)
    g = concrete.gamma
    bound = (eps_r + g * v_max * eps_p) / (1.0 - g)
    t, t_hat, v, v_hat = _values_and_ops(concrete, abstract, phi, pihat)
    gap = float(np.abs(v - v_hat[phi.phi]).max())
    exact = eps_r <= EXACT_TOL and eps_p <= EXACT_TOL
    report = HomReport(eps_r, eps_p, exact, bound, gap, v_max, g)
    if not report.ok:
        raise BoundViolation(f"value gap {gap:.6g} exceeds abstraction bound {bound:.6g}")
    return report


def adapters(t: Transformer, t_hat: Transformer, phi: AbstractionMap) -> Tuple[Transformer, Transformer]:
    """Adapt a concrete and an abstract transformer to the type ``B(S_hat) -> B(S)``."""
    if t.in_space != phi.concrete or t.out_space != phi.concrete:
        raise SpaceMismatch("concrete transformer must be closed on the concrete space")
    if t_hat.in_space != phi.abstract_ or t_hat.out_space != phi.abstract_:
        raise SpaceMismatch("abstract transformer must be closed on the abstract space")
    k = Kernel(phi.concrete, phi.abstract_, t.trans.rows @ phi.matrix)
    k_hat = Kernel(phi.concrete, phi.abstract_, t_hat.trans.rows[phi.phi])
    a = Transformer(phi.concrete, phi.abstract_, t.reward, t.gamma, k, t.ball_in, t_hat.ball_out)
    a_hat = Transformer(phi.concrete, phi.abstract_, t_hat.reward[phi.phi], t_hat.gamma, k_hat, t.ball_in, t_hat.ball_out)
    return a, a_hat


def adapter_defect(t: Transformer, t_hat: Transformer, phi: AbstractionMap, radius: float) -> AdapterReport:
    """Exact sup over the ``radius``-ball of ``|T(phi^* V) - phi^*(T_hat V)|``.

    Also returns the per-state mismatches of the two transformers and the
    bound ``eps_r + gamma * radius * eps_P`` the defect must respect.
    """
    if t.gamma != t_hat.gamma:
        raise ValueError("adapted transformers must share gamma")
    a, a_hat = adapters(t, t_hat, phi)
    defect = operator_distance(a, a_hat, radius)
    eps_r = float(np.abs(a.reward - a_hat.reward).max())
    eps_p = float(np.abs(a.trans.rows - a_hat.trans.rows).sum(axis=1).max())
    bound = eps_r + t.gamma * radius * eps_p
    if defect > bound + SLACK:
        raise BoundViolation(f"adapter defect {defect:.6g} exceeds {bound:.6g}")
    return AdapterReport(defect, eps_r, eps_p, bound)


def selection_operator(phi: AbstractionMap) -> AffineOperator:
    """``V -> V[rep]`` typed ``B(S_hat) <- B(S)``, a Lipschitz-1 section of ``phi^*``."""
    m = np.zeros((phi.abstract_.size, phi.concrete.size))
    m[np.arange(phi.abstract_.size), phi.representatives()] = 1.0
    return AffineOperator(phi.abstract_, phi.concrete, np.zeros(phi.abstract_.size), m)


def abstraction_in_context(context: Expr, t: Transformer, t_hat: Transformer, phi: AbstractionMap) -> CongruenceReport:
    """Propagate the adapter defect through a certified context.

    The context's hole must be typed ``S <- S_hat``; both adapted blocks are
    plugged and compared by :func:`congruence_bound`.
    """
    a, a_hat = adapters(t, t_hat, phi)
    return congruence_bound(context, a, a_hat)


def verify_symmetry(mdp: FiniteMdp, phi, eta, pi: Optional[Policy] = None) -> HomReport:
    """Treat ``(phi, eta)`` as a self-homomorphism of ``mdp``.

    ``phi`` must permute states (a surjection of a finite set onto itself)
    and ``eta`` actions.  The policy defaults to uniform.
    """
    amap = AbstractionMap(mdp.states, mdp.states, phi, eta)
    pi = Policy.uniform(mdp.states, mdp.actions) if pi is None else pi
    return verify_approx_hom(mdp, mdp, amap, pi)
