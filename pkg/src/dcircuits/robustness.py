"""End-to-end scenarios: parallel value factorization and two-module series robustness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .bellman import Transformer, compose, make_transformer, operator_distance, solve_linear
from .component import Oddc, Policy, parallel_oddc, product_policy
from .core import Kernel, product_space
from .errors import BoundViolation, TypeMismatch

__all__ = [
    "PerturbationSpec",
    "TwoModuleCircuit",
    "ParallelReport",
    "RobustnessReport",
    "perturb_oddc",
    "run_parallel_factorization",
    "run_two_module_robustness",
]

SLACK = 1e-9


@dataclass(frozen=True)
class PerturbationSpec:
    """Perturb module ``target`` (1 or 2) by reward shift ``eps_r`` and TV mass ``eps_P``."""

    target: int
    eps_r: float = 0.0
    eps_P: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.target not in (1, 2):
            raise ValueError("target must be module 1 or 2")
        if self.eps_r < 0 or not 0.0 <= self.eps_P <= 2.0:
            raise ValueError("need eps_r >= 0 and eps_P in [0, 2]")


def perturb_oddc(m: Oddc, eps_r: float, eps_P: float, rng: np.random.Generator, r_max: Optional[float] = None) -> Oddc:
    """Shift ``rho`` by ``eps_r`` and move exactly ``eps_P`` of L1 mass in every state row.

    Each ``(x, a)`` row becomes ``(1 - lam) K + lam * q(y) K_R(r | x, a)``
    with ``q`` a random distribution on next states and ``lam`` chosen so the
    state marginal moves by ``eps_P`` in L1; the reward marginal, hence the
    expected reward before the shift, is unchanged.  If the random ``q`` is
    too close to the row, the point mass at the least likely state is used.
    """
    k = m.kernel_array()
    nx, na, ny, nr = k.shape
    out = k.copy()
    if eps_P > 0:
        for x in range(nx):
            for a in range(na):
                p = k[x, a].sum(axis=1)
                k_r = k[x, a].sum(axis=0)
                q = rng.dirichlet(np.ones(ny))
                dist = np.abs(q - p).sum()
                if dist == 0 or eps_P / dist > 1.0:
                    q = np.zeros(ny)
                    q[int(np.argmin(p))] = 1.0
                    dist = np.abs(q - p).sum()
                lam = eps_P / dist
                if lam > 1.0 + 1e-12:
                    raise ValueError(f"cannot move {eps_P} of TV mass from row ({x}, {a})")
                out[x, a] = (1.0 - lam) * k[x, a] + lam * np.outer(q, k_r)
    rho = m.rho + eps_r
    bound = max(m.r_max + eps_r, float(np.abs(rho).max())) if r_max is None else r_max
    kernel = Kernel(m.kernel.src, m.kernel.dst, out.reshape(nx * na, ny * nr))
    return Oddc(m.s_in, m.actions, m.s_out, m.reward_space, kernel, rho, m.gamma, bound)


@dataclass(frozen=True)
class ParallelReport:
    max_error: float
    coupled_gap: float
    v_product: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    @property
    def ok(self) -> bool:
        return self.max_error <= 1e-8


def run_parallel_factorization(m1: Oddc, m2: Oddc, pi1: Policy, pi2: Policy, coupling: float = 0.5) -> ParallelReport:
    """Solve the product and both factors; also a coupled negative control.

    The control replaces a fraction ``coupling`` of the second factor's
    transitions with ``s2' = s1 mod |S2|``, which breaks independence.
    """
    prod = parallel_oddc(m1, m2)
    t = make_transformer(prod, product_policy(pi1, pi2))
    t1, t2 = make_transformer(m1, pi1), make_transformer(m2, pi2)
    v = solve_linear(t).values
    v1, v2 = solve_linear(t1).values, solve_linear(t2).values
    sep = (v1[:, None] + v2[None, :]).ravel()
    err = float(np.abs(v - sep).max())
    n1, n2 = t1.in_space.size, t2.in_space.size
    forced = np.zeros((n1, n2))
    forced[np.arange(n1), np.arange(n1) % n2] = 1.0
    # (s1, s2) -> (s1', s2'): P1(s1' | s1) * [s2' = s1 mod n2]
    coupled = np.einsum("ik,il->ikl", t1.trans.rows, forced)
    coupled = np.repeat(coupled[:, None, :, :], n2, axis=1).reshape(n1 * n2, n1 * n2)
    p = (1.0 - coupling) * t.trans.rows + coupling * coupled
    tc = Transformer(t.in_space, t.out_space, t.reward, t.gamma, Kernel(t.in_space, t.out_space, p))
    gap = float(np.abs(solve_linear(tc).values - sep).max())
    report = ParallelReport(err, gap, v, v1, v2)
    if not report.ok:
        raise BoundViolation(f"parallel factorization error {err:.3e}")
    return report


@dataclass(frozen=True, eq=False)
class TwoModuleCircuit:
    """Series of ``m1 : S x A1 -> U x R1`` then ``m2 : U x A2 -> S x R2``."""

    m1: Oddc
    m2: Oddc
    pi1: Policy
    pi2: Policy

    def __post_init__(self):
        if self.m1.s_out != self.m2.s_in or self.m2.s_out != self.m1.s_in:
            raise TypeMismatch("modules must wire S -> U -> S")
        if self.m1.gamma != self.m2.gamma:
            raise ValueError("modules must share gamma")

    @property
    def gamma(self) -> float:
        return self.m1.gamma

    def transformers(self, radius: Optional[float] = None) -> Tuple[Transformer, Transformer]:
        return make_transformer(self.m1, self.pi1, radius), make_transformer(self.m2, self.pi2, radius)

    def perturbed(self, spec: PerturbationSpec) -> "TwoModuleCircuit":
        rng = np.random.default_rng(spec.seed)
        if spec.target == 1:
            return TwoModuleCircuit(perturb_oddc(self.m1, spec.eps_r, spec.eps_P, rng), self.m2, self.pi1, self.pi2)
        return TwoModuleCircuit(self.m1, perturb_oddc(self.m2, spec.eps_r, spec.eps_P, rng), self.pi1, self.pi2)


def _local_mismatch(a: Oddc, b: Oddc) -> Tuple[float, float]:
    """Uniform ``(eps_r, eps_P)`` between two modules over all ``(x, a)``."""
    eps_r = float(np.abs(a.reward_array() - b.reward_array()).max())
    eps_p = float(np.abs(a.transition_array() - b.transition_array()).sum(axis=2).max())
    return eps_r, eps_p


@dataclass(frozen=True)
class RobustnessReport:
    gamma: float
    v_max: float
    eps_r: Tuple[float, float]
    eps_P: Tuple[float, float]
    eps_formula: Tuple[float, float]
    eps_exact: Tuple[float, float]
    macro_exact: float
    macro_bound: float
    gap_bound: float
    measured_gap: float
    links: Dict[str, bool]

    @property
    def ok(self) -> bool:
        return all(self.links.values())

    @property
    def slack(self) -> float:
        return self.gap_bound - self.measured_gap


def run_two_module_robustness(base: TwoModuleCircuit, spec: PerturbationSpec) -> RobustnessReport:
    """Check every link of the depth-discounted robustness chain.

    Local mismatches ``eps_i = eps_r + gamma V_max eps_P`` must dominate the
    exact operator distances, the macro distance must be at most
    ``eps_1 + gamma eps_2`` and the fixed-point gap at most
    ``(eps_1 + gamma eps_2) / (1 - gamma^2)``.  Raises
    :class:`BoundViolation` if any link fails.
    """
    pert = base.perturbed(spec)
    g = base.gamma
    r_max = max(base.m1.r_max, base.m2.r_max, pert.m1.r_max, pert.m2.r_max)
    v_max = r_max / (1.0 - g)
    t1, t2 = base.transformers(v_max)
    u1, u2 = pert.transformers(v_max)
    mism = [_local_mismatch(base.m1, pert.m1), _local_mismatch(base.m2, pert.m2)]
    formula = tuple(er + g * v_max * ep for er, ep in mism)
    exact = (operator_distance(t1, u1, v_max), operator_distance(t2, u2, v_max))
    macro, macro_p = compose(t1, t2), compose(u1, u2)
    macro_exact = operator_distance(macro, macro_p, v_max)
    macro_bound = formula[0] + g * formula[1]
    gap_bound = macro_bound / (1.0 - g * g)
    measured = float(np.abs(solve_linear(macro).values - solve_linear(macro_p).values).max())
    links = {
        "local_formula_dominates_exact_1": formula[0] >= exact[0] - 1e-12,
        "local_formula_dominates_exact_2": formula[1] >= exact[1] - 1e-12,
        "macro_mismatch_within_series_bound": macro_exact <= macro_bound + SLACK,
        "fixed_point_gap_within_bound": measured <= gap_bound + SLACK,
    }
    report = RobustnessReport(
        g, v_max,
        (mism[0][0], mism[1][0]), (mism[0][1], mism[1][1]),
        formula, exact, macro_exact, macro_bound, gap_bound, measured, links,
    )
    if not report.ok:
        failed = [k for k, v in links.items() if not v]
        raise BoundViolation(f"robustness links failed: {', '.join(failed)}")
    return report
