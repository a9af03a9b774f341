"""Contracts valued in ``[0, +inf]``: additive transformers and least fixed points.

A contract is a pointwise upper bound on accumulated cost.  Infinity is
IEEE ``+inf`` with the measure-theoretic convention ``0 * inf = 0``: an
expectation is infinite exactly when an infinite entry carries positive
probability.  Contracts never enter the Banach layer; converting one with
an infinite entry to a :class:`~dcircuits.core.ValueFn` fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .core import FiniteSpace, Kernel, ValueFn, direct_sum, product_space
from .errors import BoundViolation, MaxIterExceeded, ObligationFailed, SpaceMismatch, TypeMismatch

__all__ = [
    "INF",
    "ContractFn",
    "ContractTransformer",
    "apply_contract",
    "leq",
    "violation",
    "kleene_lfp",
    "kleene_chain",
    "PrefixedVerdict",
    "check_prefixed",
    "compose_contracts",
    "tensor_contracts",
    "separable_sum",
    "lift_series",
    "lift_parallel",
    "lfp_trace",
    "pretrace_maps",
]

INF = float("inf")
COMPARE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ContractFn:
    """Vector over a finite space with entries in ``[0, +inf]``."""

    space: FiniteSpace
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.space.size,):
            raise SpaceMismatch(f"contract has shape {v.shape}, space {self.space.name} has {self.space.size}")
        if np.any(np.isnan(v)) or np.any(v < 0):
            raise ValueError("contract entries must lie in [0, +inf]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def bottom(cls, space: FiniteSpace) -> "ContractFn":
        return cls(space, np.zeros(space.size))

    @classmethod
    def constant(cls, space: FiniteSpace, c: float) -> "ContractFn":
        return cls(space, np.full(space.size, float(c)))

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def to_value(self) -> ValueFn:
        if not np.all(self.finite):
            raise ValueError("contract has infinite entries and has no value-function counterpart")
        return ValueFn(self.space, self.values)


@dataclass(frozen=True, eq=False)
class ContractTransformer:
    """``C -> cost + gamma * trans C`` from contracts on ``out_space`` to ``in_space``."""

    in_space: FiniteSpace
    out_space: FiniteSpace
    cost: np.ndarray
    gamma: float
    trans: Kernel

    def __post_init__(self):
        c = np.array(self.cost, dtype=np.float64)
        if c.shape != (self.in_space.size,):
            raise SpaceMismatch("cost vector must live on the input space")
        if np.any(np.isnan(c)) or np.any(c < 0):
            raise ValueError("costs must lie in [0, +inf]")
        if self.trans.src != self.in_space or self.trans.dst != self.out_space:
            raise SpaceMismatch("transition kernel must map in_space to out_space")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        c.setflags(write=False)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "gamma", float(self.gamma))

    def __call__(self, c: ContractFn) -> ContractFn:
        return apply_contract(self, c)


def _expect(p: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Row expectations ``p @ c`` with ``0 * inf = 0``."""
    inf = ~np.isfinite(c)
    finite = np.where(inf, 0.0, c)
    out = p @ finite
    if inf.any():
        out = np.where((p[:, inf] > 0).any(axis=1), INF, out)
    return out


def apply_contract(t: ContractTransformer, c: ContractFn) -> ContractFn:
    if c.space != t.out_space:
        raise SpaceMismatch(f"contract on {c.space.name}, transformer expects {t.out_space.name}")
    return ContractFn(t.in_space, t.cost + t.gamma * _expect(t.trans.rows, c.values))


def _slack(b: np.ndarray) -> np.ndarray:
    return COMPARE_TOL * np.maximum(1.0, np.where(np.isfinite(b), np.abs(b), 0.0))


def violation(a: ContractFn, b: ContractFn) -> Optional[int]:
    """First index where ``a <= b`` fails, or ``None``."""
    if a.space != b.space:
        raise SpaceMismatch(f"cannot compare contracts on {a.space.name} and {b.space.name}")
    x, y = a.values, b.values
    with np.errstate(invalid="ignore"):
        bad = np.where(np.isinf(y), False, np.isinf(x) | (x > y + _slack(y)))
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def leq(a: ContractFn, b: ContractFn) -> bool:
    """Pointwise ``a <= b`` with ``inf <= inf`` and a ``1e-12`` slack on finite entries."""
    return violation(a, b) is None


def kleene_chain(t: ContractTransformer, tol: float = 1e-12, max_iter: int = 100_000) -> List[np.ndarray]:
    """The chain ``bottom, T bottom, T^2 bottom, ...`` up to the stopping rule.

    Monotonicity is asserted at every step.  Entries above the divergence
    ceiling ``10 * max finite cost / (1 - gamma)`` are set to ``inf``.
    """
    if t.in_space != t.out_space:
        raise TypeMismatch("least fixed points need a closed contract transformer")
    g = t.gamma
    finite_cost = t.cost[np.isfinite(t.cost)]
    ceiling = 10.0 * (finite_cost.max() if finite_cost.size else 0.0) / (1.0 - g)
    threshold = tol * (1.0 - g)
    x = np.zeros(t.in_space.size)
    chain = [x]
    for _ in range(max_iter):
        nx = t.cost + g * _expect(t.trans.rows, x)
        nx = np.where(nx > ceiling, INF, nx) if ceiling > 0 else nx
        fin = np.isfinite(x)
        with np.errstate(invalid="ignore"):
            drop = fin & np.isfinite(nx) & (nx < x - _slack(x))
        if drop.any():
            raise AssertionError(f"Kleene chain decreased at state {int(np.flatnonzero(drop)[0])}")
        both = np.isfinite(nx) & fin
        step = float(np.abs(nx[both] - x[both]).max()) if both.any() else 0.0
        newly_inf = bool((~np.isfinite(nx) & fin).any())
        chain.append(nx)
        x = nx
        if step <= threshold and not newly_inf:
            return chain
    raise MaxIterExceeded(f"Kleene iteration did not settle in {max_iter} steps", partial=chain)


def kleene_lfp(t: ContractTransformer, tol: float = 1e-12, max_iter: int = 100_000) -> ContractFn:
    """Least fixed point of a closed contract transformer by Kleene iteration from zero."""
    return ContractFn(t.in_space, kleene_chain(t, tol, max_iter)[-1])


@dataclass(frozen=True)
class PrefixedVerdict:
    holds: bool
    witness: Optional[int]
    image: ContractFn
    lfp: Optional[ContractFn] = None

    def __bool__(self) -> bool:
        return self.holds


def check_prefixed(t: ContractTransformer, c: ContractFn, tol: float = 1e-12) -> PrefixedVerdict:
    """Is ``T(c) <= c``?  When it is, also confirm ``lfp(T) <= c``."""
    image = apply_contract(t, c)
    w = violation(image, c)
    if w is not None:
        return PrefixedVerdict(False, w, image)
    lfp = kleene_lfp(t, tol)
    w = violation(lfp, c)
    if w is not None:
        raise BoundViolation(f"pre-fixed contract lies below the least fixed point at state {w}")
    return PrefixedVerdict(True, None, image, lfp)


def compose_contracts(t1: ContractTransformer, t2: ContractTransformer) -> ContractTransformer:
    """``t1 o t2``: cost ``c1 + gamma1 P1 c2`` and kernel ``P1 P2`` with discount ``gamma1 gamma2``."""
    if t1.out_space != t2.in_space:
        raise TypeMismatch(f"cannot compose: {t1.out_space.name} != {t2.in_space.name}")
    cost = t1.cost + t1.gamma * _expect(t1.trans.rows, t2.cost)
    k = Kernel(t1.in_space, t2.out_space, t1.trans.rows @ t2.trans.rows)
    return ContractTransformer(t1.in_space, t2.out_space, cost, t1.gamma * t2.gamma, k)


def tensor_contracts(t1: ContractTransformer, t2: ContractTransformer) -> ContractTransformer:
    if t1.gamma != t2.gamma:
        raise TypeMismatch("parallel contracts need a common discount")
    xs = product_space(t1.in_space, t2.in_space)
    ys = product_space(t1.out_space, t2.out_space)
    cost = (t1.cost[:, None] + t2.cost[None, :]).ravel()
    return ContractTransformer(xs, ys, cost, t1.gamma, Kernel(xs, ys, np.kron(t1.trans.rows, t2.trans.rows)))


def separable_sum(c1: ContractFn, c2: ContractFn) -> ContractFn:
    """Separable product contract ``(c1 + c2)(y1, y2) = c1(y1) + c2(y2)``."""
    return ContractFn(product_space(c1.space, c2.space), (c1.values[:, None] + c2.values[None, :]).ravel())


def _obligation(lhs: ContractFn, rhs: ContractFn, name: str):
    w = violation(lhs, rhs)
    if w is not None:
        raise ObligationFailed(
            f"obligation {name} fails at state {lhs.space.labels[w]}: {lhs.values[w]:.6g} > {rhs.values[w]:.6g}",
            obligation=name,
            witness=w,
        )


@dataclass(frozen=True)
class LiftVerdict:
    guarantee: ContractFn
    closed_lfp: Optional[ContractFn] = None


def lift_series(
    t1: ContractTransformer, t2: ContractTransformer, cz: ContractFn, cy: ContractFn, cx: ContractFn
) -> LiftVerdict:
    """Assume-guarantee for ``t1 o t2`` from ``t2(cz) <= cy`` and ``t1(cy) <= cx``.

    When the composite is closed with ``cx == cz`` its least fixed point is
    also checked against ``cx``.
    """
    _obligation(apply_contract(t2, cz), cy, "T2(C_Z) <= C_Y")
    _obligation(apply_contract(t1, cy), cx, "T1(C_Y) <= C_X")
    guarantee = apply_contract(t1, apply_contract(t2, cz))
    w = violation(guarantee, cx)
    if w is not None:
        raise BoundViolation(f"composed guarantee fails at state {w}")
    closed = None
    if cx.space == cz.space and np.array_equal(cx.values, cz.values):
        macro = compose_contracts(t1, t2)
        verdict = check_prefixed(macro, cx)
        if not verdict.holds:
            raise BoundViolation(f"closed composite is not pre-fixed at state {verdict.witness}")
        closed = verdict.lfp
    return LiftVerdict(guarantee, closed)


def lift_parallel(
    t1: ContractTransformer,
    t2: ContractTransformer,
    side1: Tuple[ContractFn, ContractFn],
    side2: Tuple[ContractFn, ContractFn],
) -> LiftVerdict:
    """Lift per-side obligations ``t_i(C_Yi) <= C_Xi`` to the separable product."""
    (cy1, cx1), (cy2, cx2) = side1, side2
    _obligation(apply_contract(t1, cy1), cx1, "T1(C_Y1) <= C_X1")
    _obligation(apply_contract(t2, cy2), cx2, "T2(C_Y2) <= C_X2")
    guarantee = apply_contract(tensor_contracts(t1, t2), separable_sum(cy1, cy2))
    w = violation(guarantee, separable_sum(cx1, cx2))
    if w is not None:
        raise BoundViolation(f"product guarantee fails at state {w}")
    return LiftVerdict(guarantee)


@dataclass(frozen=True)
class TraceVerdict:
    z_star: ContractFn
    traced: ContractFn
    iterations: int


ContractMap = Callable[[ContractFn, ContractFn], ContractFn]


def _check_monotone(f: ContractMap, cy: ContractFn, z_space: FiniteSpace, scale: float, rng, n: int, name: str):
    for _ in range(n):
        y_lo = rng.uniform(0, scale, cy.space.size)
        z_lo = rng.uniform(0, scale, z_space.size)
        y_hi = y_lo + rng.uniform(0, scale, cy.space.size)
        z_hi = z_lo + rng.uniform(0, scale, z_space.size)
        lo = f(ContractFn(cy.space, y_lo), ContractFn(z_space, z_lo))
        hi = f(ContractFn(cy.space, y_hi), ContractFn(z_space, z_hi))
        if violation(lo, hi) is not None:
            raise ObligationFailed(f"{name} is not monotone on a sampled ordered pair", obligation="monotone")


def lfp_trace(
    f_x: ContractMap,
    f_z: ContractMap,
    c_y: ContractFn,
    c_x: ContractFn,
    c_z: ContractFn,
    *,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    monotone_samples: int = 32,
    seed: int = 0,
) -> TraceVerdict:
    """Least-fixed-point trace with the feedback lifting rule.

    Computes ``Z* = lfp(z -> f_z(c_y, z))`` from zero, checks the
    obligations ``f_z(c_y, c_z) <= c_z`` and ``f_x(c_y, c_z) <= c_x`` and
    asserts the traced guarantee ``f_x(c_y, Z*) <= c_x``.  Iteration stops
    when the finite entries move by at most ``tol``.
    """
    z_space = c_z.space
    finite = np.concatenate([c_y.values, c_z.values])
    finite = finite[np.isfinite(finite)]
    scale = max(1.0, float(finite.max()) if finite.size else 1.0)
    rng = np.random.default_rng(seed)
    _check_monotone(f_z, c_y, z_space, scale, rng, monotone_samples, "feedback map")
    _check_monotone(f_x, c_y, z_space, scale, rng, monotone_samples, "output map")
    _obligation(f_z(c_y, c_z), c_z, "F_Z(C_Y, C_Z) <= C_Z")
    _obligation(f_x(c_y, c_z), c_x, "F_X(C_Y, C_Z) <= C_X")
    z = ContractFn.bottom(z_space)
    for k in range(1, max_iter + 1):
        nz = f_z(c_y, z)
        if violation(z, nz) is not None:
            raise AssertionError("feedback Kleene chain decreased")
        a, b = z.values, nz.values
        both = np.isfinite(a) & np.isfinite(b)
        step = float(np.abs(b[both] - a[both]).max()) if both.any() else 0.0
        newly_inf = bool((np.isfinite(a) & ~np.isfinite(b)).any())
        z = nz
        if step <= tol and not newly_inf:
            break
    else:
        raise MaxIterExceeded(f"feedback iteration did not settle in {max_iter} steps", partial=z)
    traced = f_x(c_y, z)
    w = violation(traced, c_x)
    if w is not None:
        raise BoundViolation(f"traced output exceeds C_X at state {w}")
    return TraceVerdict(z, traced, k)


def pretrace_maps(t: ContractTransformer, x_space: FiniteSpace, y_space: FiniteSpace, z_space: FiniteSpace):
    """Split a transformer typed ``(X + Z) <- (Y + Z)`` into ``(f_x, f_z)``."""
    if t.in_space != direct_sum(x_space, z_space) or t.out_space != direct_sum(y_space, z_space):
        raise TypeMismatch("pre-trace contract transformer must be typed (X + Z) <- (Y + Z)")
    nx = x_space.size

    def joint(cy: ContractFn, z: ContractFn) -> np.ndarray:
        arg = ContractFn(t.out_space, np.concatenate([cy.values, z.values]))
        return apply_contract(t, arg).values

    def f_x(cy, z):
        return ContractFn(x_space, joint(cy, z)[:nx])

    def f_z(cy, z):
        return ContractFn(z_space, joint(cy, z)[nx:])

    return f_x, f_z
