"""Typed affine Bellman transformers and their solvers.

A transformer maps continuation values on its output space ``Y`` to values
on its input space ``X``::

    (T V)(x) = r(x) + gamma * sum_y P(y | x) V(y)

Every operator built by this package is affine, so it is stored in the
normal form ``V -> offset + linear @ V`` (:class:`AffineOperator`).
:class:`Transformer` is the special case ``linear = gamma * P`` with ``P``
row-stochastic; that form is what parallel wiring and the kernel-level
bounds need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .component import FiniteMdp, Oddc, Policy, close_loop, expected_reward
from .core import FiniteSpace, Kernel, ValueFn, product_space
from .errors import BallViolation, NonContraction, SingularSystem, SpaceMismatch, TypeMismatch

__all__ = [
    "AffineOperator",
    "Transformer",
    "make_transformer",
    "apply",
    "value_iterates",
    "solve_fixed_point",
    "solve_linear",
    "monte_carlo_value",
    "truncation_horizon",
    "operator_distance",
    "compose",
    "tensor",
    "OptimalityOperator",
    "optimality_backup",
]

BALL_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class AffineOperator:
    """Affine map ``B(out_space) -> B(in_space)``, ``V -> offset + linear @ V``.

    ``ball_out`` is the radius of admissible inputs and ``ball_in`` the
    radius the outputs are promised to stay in; either may be ``None``
    (no ball declared).
    """

    in_space: FiniteSpace
    out_space: FiniteSpace
    offset: np.ndarray
    linear: np.ndarray
    ball_in: Optional[float] = None
    ball_out: Optional[float] = None

    def __post_init__(self):
        b = np.array(self.offset, dtype=np.float64)
        a = np.array(self.linear, dtype=np.float64)
        if b.shape != (self.in_space.size,) or a.shape != (self.in_space.size, self.out_space.size):
            raise SpaceMismatch(
                f"affine operator {self.out_space.name}->{self.in_space.name} got shapes {b.shape}, {a.shape}"
            )
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise ValueError("affine operator must be finite")
        b.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "offset", b)
        object.__setattr__(self, "linear", a)

    @property
    def affine(self) -> "AffineOperator":
        return self

    @property
    def lipschitz(self) -> float:
        """Exact sup-norm Lipschitz constant: the largest absolute row sum."""
        if self.out_space.size == 0:
            return 0.0
        return float(np.abs(self.linear).sum(axis=1).max())

    @property
    def is_closed(self) -> bool:
        return self.in_space == self.out_space

    def __call__(self, v) -> np.ndarray:
        return self.offset + self.linear @ np.asarray(v, dtype=np.float64)

    def sup_bound(self, radius: float) -> float:
        """``sup { |T V|_inf : |V|_inf <= radius }`` in closed form."""
        return float(np.max(np.abs(self.offset) + radius * np.abs(self.linear).sum(axis=1)))

    def invariant_radius(self) -> float:
        """Smallest radius ``M`` with ``|offset| + Lip * M <= M``."""
        lip = self.lipschitz
        if lip >= 1.0:
            raise NonContraction(f"modulus {lip:.6g} >= 1 has no invariant ball")
        return float(np.abs(self.offset).max()) / (1.0 - lip)

    def discounted_form(self, atol: float = 1e-12):
        """Return ``(gamma, P)`` if ``linear == gamma * P`` with ``P`` stochastic, else ``None``."""
        if np.any(self.linear < -atol):
            return None
        sums = self.linear.sum(axis=1)
        g = float(sums[0])
        if g <= 0.0 or g >= 1.0 or np.max(np.abs(sums - g)) > atol:
            return None
        return g, self.linear / sums[:, None]

    def as_transformer(self) -> "Transformer":
        form = self.discounted_form()
        if form is None:
            raise TypeMismatch("operator is not of the form reward + gamma * stochastic")
        g, p = form
        return Transformer(self.in_space, self.out_space, self.offset, g, Kernel(self.in_space, self.out_space, p),
                           self.ball_in, self.ball_out)

    def with_balls(self, ball_in, ball_out) -> "AffineOperator":
        return AffineOperator(self.in_space, self.out_space, self.offset, self.linear, ball_in, ball_out)


@dataclass(frozen=True, eq=False)
class Transformer:
    """Policy-closed Bellman transformer in affine normal form ``(r, gamma, P)``."""

    in_space: FiniteSpace
    out_space: FiniteSpace
    reward: np.ndarray
    gamma: float
    trans: Kernel
    ball_in: Optional[float] = None
    ball_out: Optional[float] = None

    def __post_init__(self):
        r = np.array(self.reward.values if isinstance(self.reward, ValueFn) else self.reward, dtype=np.float64)
        if r.shape != (self.in_space.size,):
            raise SpaceMismatch("reward vector must live on the input space")
        if self.trans.src != self.in_space or self.trans.dst != self.out_space:
            raise SpaceMismatch("transition kernel must map in_space to out_space")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        r.setflags(write=False)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.ball_out is not None and self.ball_in is not None:
            # T maps B(ball_out) into B(|r| + gamma * ball_out)
            reach = float(np.abs(r).max()) + self.gamma * self.ball_out
            if reach > self.ball_in * (1 + 1e-12) + 1e-12:
                raise BallViolation(f"transformer maps the {self.ball_out:.6g}-ball outside the {self.ball_in:.6g}-ball")

    @property
    def affine(self) -> AffineOperator:
        return AffineOperator(self.in_space, self.out_space, self.reward, self.gamma * self.trans.rows,
                              self.ball_in, self.ball_out)

    @property
    def lipschitz(self) -> float:
        return self.gamma

    @property
    def is_closed(self) -> bool:
        return self.in_space == self.out_space

    @property
    def r_max(self) -> float:
        return float(np.abs(self.reward).max())

    def __call__(self, v) -> np.ndarray:
        return self.reward + self.gamma * (self.trans.rows @ np.asarray(v, dtype=np.float64))

    def replace(self, **changes) -> "Transformer":
        fields = dict(in_space=self.in_space, out_space=self.out_space, reward=self.reward, gamma=self.gamma,
                      trans=self.trans, ball_in=self.ball_in, ball_out=self.ball_out)
        fields.update(changes)
        return Transformer(**fields)


Operator = Union[AffineOperator, Transformer]


def make_transformer(m: Union[Oddc, FiniteMdp], pi: Policy, radius: Optional[float] = None) -> Transformer:
    """Close a component with a policy and return its Bellman transformer.

    Both balls default to ``V_max = R_max / (1 - gamma)``.
    """
    radius = m.v_max if radius is None else radius
    if isinstance(m, Oddc):
        r = expected_reward(m, pi).values
        k = close_loop(m, pi).rows.reshape(m.s_in.size, m.s_out.size, m.reward_space.size).sum(axis=2)
        return Transformer(m.s_in, m.s_out, r, m.gamma, Kernel(m.s_in, m.s_out, k), radius, radius)
    r, p = m.closed_arrays(pi)
    return Transformer(m.states, m.next_states, r, m.gamma, Kernel(m.states, m.next_states, p), radius, radius)


def _values(v, space: FiniteSpace) -> np.ndarray:
    if isinstance(v, ValueFn):
        if v.space != space:
            raise SpaceMismatch(f"value function on {v.space.name}, expected {space.name}")
        return v.values
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (space.size,):
        raise SpaceMismatch(f"value vector shape {arr.shape}, expected ({space.size},)")
    return arr


def apply(t: Operator, v) -> ValueFn:
    """Apply a transformer to a continuation value on its output space."""
    x = _values(v, t.out_space)
    if t.ball_out is not None and x.size and np.abs(x).max() > t.ball_out + BALL_SLACK:
        raise BallViolation(f"input sup norm {np.abs(x).max():.6g} exceeds ball {t.ball_out:.6g}")
    y = t(x)
    radius = t.ball_in
    if radius is not None and np.abs(y).max() > radius + BALL_SLACK:
        raise BallViolation(f"output sup norm {np.abs(y).max():.6g} leaves ball {radius:.6g}")
    if radius is not None:
        radius = max(radius, float(np.abs(y).max()))
    return ValueFn(t.in_space, y, radius)


def _require_closed(t: Operator):
    if not t.is_closed:
        raise TypeMismatch(f"operator {t.out_space.name}->{t.in_space.name} is open; fixed points need in == out")


def value_iterates(t: Operator, v0=None) -> Iterator[np.ndarray]:
    """Yield ``V_0, T V_0, T^2 V_0, ...`` without end."""
    _require_closed(t)
    v = np.zeros(t.in_space.size) if v0 is None else _values(v0, t.in_space).copy()
    while True:
        yield v
        v = t(v)


def solve_fixed_point(t: Operator, tol: float = 1e-10, v0=None, max_iter: int = 1_000_000):
    """Value iteration from ``V_0 = 0`` with an a-posteriori stopping rule.

    Stops once ``|T V - V| <= tol * (1 - kappa)`` where ``kappa`` is the
    operator's Lipschitz constant, which guarantees ``|V - V*| <= tol``.

    Returns
    -------
    (ValueFn, int)
        The last iterate and the number of backups applied.
    """
    _require_closed(t)
    kappa = t.lipschitz
    if kappa >= 1.0:
        raise NonContraction(f"modulus {kappa:.6g} >= 1")
    threshold = tol * (1.0 - kappa)
    v = np.zeros(t.in_space.size) if v0 is None else _values(v0, t.in_space).copy()
    for k in range(1, max_iter + 1):
        nv = t(v)
        if np.abs(nv - v).max() <= threshold:
            return ValueFn(t.in_space, nv), k
        v = nv
    raise NonContraction(f"no convergence within {max_iter} iterations")


def solve_linear(t: Operator) -> ValueFn:
    """Solve ``(I - linear) V = offset`` by LU with partial pivoting."""
    _require_closed(t)
    a = t.affine
    n = a.in_space.size
    m = np.eye(n) - a.linear
    try:
        v = np.linalg.solve(m, a.offset)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(v)):
        raise SingularSystem("non-finite solution")
    return ValueFn(a.in_space, v)


def truncation_horizon(gamma: float, v_max: float, eps: float) -> int:
    """Smallest ``H`` with ``gamma**H * v_max <= eps``."""
    if v_max <= eps:
        return 0
    return int(math.ceil(math.log(eps / v_max) / math.log(gamma)))


def alias_tables(rows: np.ndarray):
    """Vose alias tables for each row of a stochastic matrix.

    Drawing column ``k`` uniformly and keeping it with probability
    ``prob[i, k]`` (else taking ``alias[i, k]``) samples row ``i`` exactly.
    """
    n, k = rows.shape
    prob = np.ones((n, k))
    alias = np.tile(np.arange(k), (n, 1))
    for i in range(n):
        scaled = rows[i] * k
        small = [j for j in range(k) if scaled[j] < 1.0]
        large = [j for j in range(k) if scaled[j] >= 1.0]
        while small and large:
            lo, hi = small.pop(), large.pop()
            prob[i, lo] = scaled[lo]
            alias[i, lo] = hi
            scaled[hi] -= 1.0 - scaled[lo]
            (small if scaled[hi] < 1.0 else large).append(hi)
        # leftovers are 1 up to rounding
        for j in small + large:
            prob[i, j] = 1.0
    return prob, alias


def monte_carlo_value(
    m: Oddc,
    pi: Policy,
    s0: int,
    horizon: Optional[int] = None,
    n_traj: int = 100_000,
    seed: int = 0,
    trunc_eps: float = 1e-4,
):
    """Sample mean of truncated discounted returns from ``s0``.

    Trajectories draw ``(s', r) ~ K^pi(. | s)`` jointly, by alias-table
    sampling from a Philox counter-based generator seeded with ``seed``;
    one uniform per step is split into a column and a coin.  All
    trajectories advance in lockstep so the result depends only on
    ``seed``.  When ``horizon``
    is omitted it is chosen so that ``gamma**H * V_max <= trunc_eps``.

    Returns
    -------
    (float, float)
        Sample mean and its standard error.
    """
    if horizon is None:
        horizon = truncation_horizon(m.gamma, m.v_max, trunc_eps)
    if m.s_in != m.s_out:
        raise TypeMismatch("trajectories need a component with s_in == s_out")
    ns, nr = m.s_out.size, m.reward_space.size
    ncat = ns * nr
    prob, alias = alias_tables(close_loop(m, pi).rows)
    rng = np.random.Generator(np.random.Philox(seed))
    state = np.full(n_traj, int(s0), dtype=np.int64)
    returns = np.zeros(n_traj)
    disc = 1.0
    for _ in range(horizon):
        scaled = rng.random(n_traj) * ncat
        col = np.minimum(scaled.astype(np.int64), ncat - 1)
        keep = (scaled - col) < prob[state, col]
        cat = np.where(keep, col, alias[state, col])
        returns += disc * m.rho[cat % nr]
        state = cat // nr
        disc *= m.gamma
    mean = float(returns.mean())
    se = float(returns.std(ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else 0.0
    return mean, se


def operator_distance(t: Operator, u: Operator, radius: float) -> float:
    """``sup_{|V| <= radius} |t V - u V|_inf`` for affine operators.

    The supremum is attained at a sign vertex of the ball, giving
    ``max_x |db(x)| + radius * |dA(x, .)|_1``.
    """
    a, b = t.affine, u.affine
    if a.in_space != b.in_space or a.out_space != b.out_space:
        raise SpaceMismatch("operator_distance needs operators of the same type")
    db = np.abs(a.offset - b.offset)
    da = np.abs(a.linear - b.linear).sum(axis=1)
    return float(np.max(db + radius * da))


def compose(outer: Operator, inner: Operator) -> AffineOperator:
    """``outer o inner``: first apply ``inner`` to the continuation, then ``outer``.

    For transformers this is series wiring where ``outer`` is the first
    micro-step in time.
    """
    a, b = outer.affine, inner.affine
    if a.out_space != b.in_space:
        raise TypeMismatch(f"cannot compose: {a.out_space.name} != {b.in_space.name}")
    return AffineOperator(a.in_space, b.out_space, a.offset + a.linear @ b.offset, a.linear @ b.linear,
                          a.ball_in, b.ball_out)


def tensor(t1: Operator, t2: Operator) -> Transformer:
    """Independent parallel product on paired spaces with additive rewards."""
    f1 = t1.affine.discounted_form()
    f2 = t2.affine.discounted_form()
    if f1 is None or f2 is None:
        raise TypeMismatch("parallel wiring needs both sides in reward + gamma * stochastic form")
    (g1, p1), (g2, p2) = f1, f2
    if abs(g1 - g2) > 1e-12:
        raise TypeMismatch(f"parallel wiring needs a common discount, got {g1} and {g2}")
    xs = product_space(t1.in_space, t2.in_space)
    ys = product_space(t1.out_space, t2.out_space)
    r = (t1.affine.offset[:, None] + t2.affine.offset[None, :]).ravel()
    balls = (None, None)
    if None not in (t1.ball_in, t2.ball_in, t1.ball_out, t2.ball_out):
        balls = (t1.ball_in + t2.ball_in, t1.ball_out + t2.ball_out)
    return Transformer(xs, ys, r, g1, Kernel(xs, ys, np.kron(p1, p2)), *balls)


class OptimalityOperator:
    """Bellman optimality backup ``max_a [r(s, a) + gamma * P(. | s, a) V]``.

    Ties are broken toward the lowest action index.
    """

    def __init__(self, mdp: FiniteMdp):
        if mdp.states != mdp.next_states:
            raise TypeMismatch("optimality backup needs a closed MDP")
        self.mdp = mdp
        self.space = mdp.states
        self.gamma = mdp.gamma
        self.lipschitz = mdp.gamma

    def q_values(self, v) -> np.ndarray:
        v = _values(v, self.space)
        return self.mdp.reward + self.gamma * np.einsum("sat,t->sa", self.mdp.trans, v)

    def __call__(self, v) -> np.ndarray:
        return self.q_values(v).max(axis=1)

    def greedy(self, v) -> np.ndarray:
        return np.argmax(self.q_values(v), axis=1)

    def backup(self, v):
        """Value and argmax policy indices in one call."""
        q = self.q_values(v)
        return ValueFn(self.space, q.max(axis=1)), np.argmax(q, axis=1)

    def solve(self, tol: float = 1e-10, max_iter: int = 1_000_000) -> ValueFn:
        threshold = tol * (1.0 - self.gamma)
        v = np.zeros(self.space.size)
        for _ in range(max_iter):
            nv = self(v)
            if np.abs(nv - v).max() <= threshold:
                return ValueFn(self.space, nv)
            v = nv
        raise NonContraction("optimality iteration did not converge")


def optimality_backup(mdp: Union[FiniteMdp, Sequence[Transformer]]) -> OptimalityOperator:
    """Build the optimality operator from an MDP or a per-action transformer family."""
    if not isinstance(mdp, FiniteMdp):
        family = list(mdp)
        if not family:
            raise ValueError("empty action family")
        s = family[0].in_space
        for t in family:
            if t.in_space != s or t.out_space != s or t.gamma != family[0].gamma:
                raise TypeMismatch("per-action transformers must share type and discount")
        actions = FiniteSpace.of_size("a", len(family))
        reward = np.stack([t.reward for t in family], axis=1)
        trans = np.stack([t.trans.rows for t in family], axis=1)
        mdp = FiniteMdp(s, actions, reward, trans, family[0].gamma)
    return OptimalityOperator(mdp)
