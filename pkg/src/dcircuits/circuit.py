"""Circuit expressions: series, parallel and guarded feedback over transformers.

Values flow backward.  ``Series(inner, outer)`` applies ``outer`` to the
continuation first and then ``inner``, so ``inner`` is the earlier
micro-step in time.  ``Parallel`` runs two discounted transformers on the
product state space with additive rewards.  ``Trace`` closes a feedback
wire: its pre-expression is typed on direct sums ``(X + Z) <- (Y + Z)``
and the ``Z`` block must be contractive in the fed-back values.

All compiled operators are affine, so traces are solved exactly by a
linear solve and certificates use exact block norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .bellman import AffineOperator, Transformer, compose, operator_distance, solve_linear, tensor
from .core import FiniteSpace, direct_sum
from .errors import (
    BallViolation,
    BoundViolation,
    NonContraction,
    SingularSystem,
    TypeMismatch,
    UncertifiableTrace,
    UnguardedTrace,
)

__all__ = [
    "Leaf",
    "Series",
    "Parallel",
    "Trace",
    "Hole",
    "TraceConstants",
    "NodeCertificate",
    "Certificate",
    "CongruenceReport",
    "compile",
    "plug",
    "count_holes",
    "trace_constants",
    "banach_trace",
    "certify",
    "congruence_bound",
    "fixed_point_stability",
    "trace_lipschitz",
    "trace_gain",
]

SLACK = 1e-9

Operator = Union[AffineOperator, Transformer]


@dataclass(frozen=True, eq=False)
class Hole:
    """Typed slot for a transformer ``in_space <- out_space``.

    ``ball_out`` is the radius on which candidate fillers are compared and
    ``lip`` an optional declared Lipschitz bound for fillers.
    """

    in_space: FiniteSpace
    out_space: FiniteSpace
    ball_in: Optional[float] = None
    ball_out: Optional[float] = None
    lip: Optional[float] = None


@dataclass(frozen=True, eq=False)
class Leaf:
    op: Operator
    name: Optional[str] = None

    @property
    def in_space(self) -> FiniteSpace:
        return self.op.in_space

    @property
    def out_space(self) -> FiniteSpace:
        return self.op.out_space


@dataclass(frozen=True, eq=False)
class Series:
    """``inner o outer``; ``inner`` is the first micro-step in time."""

    inner: "Expr"
    outer: "Expr"

    def __post_init__(self):
        if self.inner.out_space != self.outer.in_space:
            raise TypeMismatch(
                f"series interface mismatch: {self.inner.out_space.name} vs {self.outer.in_space.name}"
            )
        _single_hole(self.inner, self.outer)

    @property
    def in_space(self) -> FiniteSpace:
        return self.inner.in_space

    @property
    def out_space(self) -> FiniteSpace:
        return self.outer.out_space


@dataclass(frozen=True, eq=False)
class Parallel:
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        _single_hole(self.left, self.right)

    @property
    def in_space(self) -> FiniteSpace:
        from .core import product_space

        return product_space(self.left.in_space, self.right.in_space)

    @property
    def out_space(self) -> FiniteSpace:
        from .core import product_space

        return product_space(self.left.out_space, self.right.out_space)


@dataclass(frozen=True)
class TraceConstants:
    """Block Lipschitz constants of a pre-trace map (continuation direction).

    ``alpha`` is the feedback-to-feedback constant, ``eta`` continuation to
    feedback, ``beta`` feedback to output and ``a_x`` continuation to output.
    """

    alpha: float
    eta: float
    beta: float
    a_x: float

    @property
    def external(self) -> float:
        return trace_lipschitz(self.a_x, self.beta, self.eta, self.alpha)

    @property
    def gain(self) -> float:
        return trace_gain(self.beta, self.alpha)

    def max(self, other: "TraceConstants") -> "TraceConstants":
        return TraceConstants(
            max(self.alpha, other.alpha), max(self.eta, other.eta),
            max(self.beta, other.beta), max(self.a_x, other.a_x),
        )

    def dominates(self, other: "TraceConstants", tol: float = 1e-12) -> bool:
        return (self.alpha >= other.alpha - tol and self.eta >= other.eta - tol
                and self.beta >= other.beta - tol and self.a_x >= other.a_x - tol)


@dataclass(frozen=True, eq=False)
class Trace:
    """Feedback closure over ``feedback_space``.

    ``pre`` must be typed ``(X + Z) <- (Y + Z)`` with ``Z = feedback_space``;
    the traced expression is typed ``X <- Y``.  ``constants`` may be
    declared; they are checked against the exact block norms whenever the
    pre-expression can be compiled.
    """

    pre: "Expr"
    feedback_space: FiniteSpace
    feedback_radius: Optional[float] = None
    constants: Optional[TraceConstants] = None

    def __post_init__(self):
        pin, pout = self.pre.in_space, self.pre.out_space
        for sp, side in ((pin, "input"), (pout, "output")):
            if sp.kind != "sum" or sp.parts[1] != self.feedback_space:
                raise TypeMismatch(f"trace pre-expression {side} must be a direct sum ending in {self.feedback_space.name}")

    @property
    def in_space(self) -> FiniteSpace:
        return self.pre.in_space.parts[0]

    @property
    def out_space(self) -> FiniteSpace:
        return self.pre.out_space.parts[0]


Expr = Union[Leaf, Series, Parallel, Trace, Hole]


def _children(c) -> tuple:
    if isinstance(c, Series):
        return (("inner", c.inner), ("outer", c.outer))
    if isinstance(c, Parallel):
        return (("left", c.left), ("right", c.right))
    if isinstance(c, Trace):
        return (("pre", c.pre),)
    return ()


def count_holes(c) -> int:
    if isinstance(c, Hole):
        return 1
    return sum(count_holes(k) for _, k in _children(c))


def _single_hole(*kids):
    if sum(count_holes(k) for k in kids) > 1:
        raise TypeMismatch("a context may use its hole at most once")


def _find_hole(c) -> Optional[Hole]:
    if isinstance(c, Hole):
        return c
    for _, k in _children(c):
        h = _find_hole(k)
        if h is not None:
            return h
    return None


def _rebuild(c, kids):
    if isinstance(c, Series):
        return Series(*kids)
    if isinstance(c, Parallel):
        return Parallel(*kids)
    if isinstance(c, Trace):
        return Trace(kids[0], c.feedback_space, c.feedback_radius, c.constants)
    return c


def plug(c: Expr, t: Operator) -> Expr:
    """Replace the hole by ``Leaf(t)``."""
    if isinstance(c, Hole):
        if t.in_space != c.in_space or t.out_space != c.out_space:
            raise TypeMismatch(
                f"filler {t.out_space.name}->{t.in_space.name} does not fit hole {c.out_space.name}->{c.in_space.name}"
            )
        if c.ball_out is not None and c.ball_in is not None:
            reach = t.affine.sup_bound(c.ball_out)
            if reach > c.ball_in + SLACK * max(1.0, c.ball_in):
                raise BallViolation(f"filler maps the {c.ball_out:.6g}-ball to radius {reach:.6g} > {c.ball_in:.6g}")
        return Leaf(t)
    kids = _children(c)
    if not kids:
        return c
    return _rebuild(c, [plug(k, t) for _, k in kids])


def _blocks(a: AffineOperator, nx: int, ny: int):
    b, m = a.offset, a.linear
    return b[:nx], b[nx:], m[:nx, :ny], m[:nx, ny:], m[nx:, :ny], m[nx:, ny:]


def _norm(m: np.ndarray) -> float:
    if m.size == 0:
        return 0.0
    return float(np.abs(m).sum(axis=1).max())


def trace_constants(pre: AffineOperator, nx: int, ny: int) -> TraceConstants:
    """Exact block constants of an affine pre-trace operator.

    Rows ``[:nx]`` are the output block ``X`` and columns ``[:ny]`` the
    continuation block ``Y``; the rest is the feedback block.
    """
    _, _, a_xy, a_xz, a_zy, a_zz = _blocks(pre, nx, ny)
    return TraceConstants(alpha=_norm(a_zz), eta=_norm(a_zy), beta=_norm(a_xz), a_x=_norm(a_xy))


def trace_lipschitz(a_x: float, beta: float, eta: float, alpha: float) -> float:
    """Lipschitz bound ``a_X + beta * eta / (1 - alpha)`` of a traced map."""
    if alpha >= 1.0:
        raise UnguardedTrace(f"alpha_Z = {alpha:.6g} >= 1")
    return a_x + beta * eta / (1.0 - alpha)


def trace_gain(beta: float, alpha: float) -> float:
    """Discrepancy amplification ``1 + beta / (1 - alpha)`` of a trace node."""
    if alpha >= 1.0:
        raise UnguardedTrace(f"alpha_Z = {alpha:.6g} >= 1")
    return 1.0 + beta / (1.0 - alpha)


def _compile_trace(node: Trace, pre: AffineOperator, path: str) -> AffineOperator:
    nx, ny = node.in_space.size, node.out_space.size
    k = trace_constants(pre, nx, ny)
    if k.alpha >= 1.0:
        raise UnguardedTrace(f"feedback block has modulus {k.alpha:.6g} >= 1 at node {path}")
    b_x, b_z, a_xy, a_xz, a_zy, a_zz = _blocks(pre, nx, ny)
    nz = b_z.size
    try:
        # z = (I - A_zz)^{-1} (b_z + A_zy v)
        solved = np.linalg.solve(np.eye(nz) - a_zz, np.column_stack([b_z, a_zy]))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    z_off, z_lin = solved[:, 0], solved[:, 1:]
    return AffineOperator(node.in_space, node.out_space, b_x + a_xz @ z_off, a_xy + a_xz @ z_lin)


def compile(c: Expr, _path: str = "root") -> AffineOperator:
    """Compile a hole-free expression to its affine operator."""
    if isinstance(c, Hole):
        raise TypeMismatch("cannot compile an expression with an unfilled hole")
    if isinstance(c, Leaf):
        return c.op.affine
    if isinstance(c, Series):
        return compose(compile(c.inner, _path + "/inner"), compile(c.outer, _path + "/outer"))
    if isinstance(c, Parallel):
        return tensor(compile(c.left, _path + "/left"), compile(c.right, _path + "/right")).affine
    if isinstance(c, Trace):
        return _compile_trace(c, compile(c.pre, _path + "/pre"), _path)
    raise TypeError(f"not a circuit expression: {c!r}")


def banach_trace(
    f_out: Callable,
    f_fb: Callable,
    alpha: float,
    *,
    z_dim: int,
    tol: float = 1e-12,
    radius: float = 1.0,
    check_pairs: int = 1000,
    seed: int = 0,
    max_iter: int = 100_000,
    z0=None,
) -> Callable:
    """Guarded trace of ``x -> (f_out(x, z), f_fb(x, z))`` over ``z``.

    The returned map solves ``z = f_fb(x, z)`` by iteration from ``z0``
    (default zero) until the step is at most ``tol * (1 - alpha)`` and returns
    ``f_out(x, z)``.  Before solving at a new ``x`` the contraction claim
    is checked on ``check_pairs`` random pairs in the ``radius``-ball; a
    ratio above ``alpha`` or at least ``1 - 1e-9`` raises
    :class:`UnguardedTrace`.
    """
    if not 0.0 <= alpha < 1.0:
        raise UnguardedTrace(f"declared alpha {alpha} is not in [0, 1)")
    rng = np.random.default_rng(seed)

    def check(x):
        if z_dim == 0:
            return
        z1 = rng.uniform(-radius, radius, (check_pairs, z_dim))
        z2 = rng.uniform(-radius, radius, (check_pairs, z_dim))
        for a, b in zip(z1, z2):
            den = np.abs(a - b).max()
            if den == 0.0:
                continue
            ratio = np.abs(np.asarray(f_fb(x, a)) - np.asarray(f_fb(x, b))).max() / den
            if ratio >= 1.0 - 1e-9 or ratio > alpha + 1e-9:
                raise UnguardedTrace(f"sampled feedback ratio {ratio:.6g} exceeds certificate {alpha:.6g}")

    def traced(x):
        check(x)
        z = np.zeros(z_dim) if z0 is None else np.array(z0, dtype=np.float64)
        threshold = tol * (1.0 - alpha)
        for _ in range(max_iter):
            nz = np.asarray(f_fb(x, z), dtype=np.float64)
            step = np.abs(nz - z).max() if z_dim else 0.0
            z = nz
            if step <= threshold:
                return f_out(x, z)
        raise UnguardedTrace(f"feedback iteration did not settle in {max_iter} steps")

    return traced


@dataclass(frozen=True)
class NodeCertificate:
    path: str
    kind: str
    lip: Optional[float]
    radius: Optional[float]
    contains_hole: bool
    constants: Optional[TraceConstants] = None
    feedback_radius: Optional[float] = None


@dataclass(frozen=True)
class Certificate:
    """Structural certificate of a (possibly open) one-hole context.

    ``gain`` is ``L(C)``, ``kappa`` the certified modulus of the compiled
    operator, ``root_radius`` the ball on which closed-loop values live
    and ``hole_radius`` the largest continuation norm reaching the hole.
    """

    gain: Optional[float]
    kappa: Optional[float]
    root_radius: Optional[float]
    hole_radius: Optional[float]
    nodes: Dict[str, NodeCertificate] = field(default_factory=dict)

    def amplification(self) -> float:
        if self.kappa is None or self.kappa >= 1.0:
            raise NonContraction(f"context modulus {self.kappa} is not below 1")
        return self.gain / (1.0 - self.kappa)


class _Certifier:
    def __init__(self, fillers: Sequence[Operator]):
        self.fillers = [f.affine for f in fillers]
        self.nodes: Dict[str, NodeCertificate] = {}
        self.hole_radius: Optional[float] = None

    def variants(self, c) -> list:
        """Compiled operators of ``c`` over all fillers (or the single hole-free one)."""
        if count_holes(c) == 0:
            return [compile(c)]
        return [compile(plug(c, f)) for f in self.fillers]

    def bound(self, c, r: Optional[float]) -> Optional[float]:
        """Sup norm of outputs of ``c`` on the ``r``-ball."""
        if r is None:
            return None
        vs = self.variants(c)
        if vs:
            return max(v.sup_bound(r) for v in vs)
        if isinstance(c, Hole):
            return c.ball_in
        if isinstance(c, Series):
            return self.bound(c.inner, self.bound(c.outer, r))
        if isinstance(c, Parallel):
            bl, br = self.bound(c.left, r), self.bound(c.right, r)
            return None if bl is None or br is None else bl + br
        return None

    def constants(self, c: Trace, path: str) -> TraceConstants:
        nx, ny = c.in_space.size, c.out_space.size
        exact = None
        for v in self.variants(c.pre):
            k = trace_constants(v, nx, ny)
            exact = k if exact is None else exact.max(k)
        if c.constants is not None:
            if exact is not None and not c.constants.dominates(exact):
                raise UncertifiableTrace(f"declared constants {c.constants} are below the exact block norms {exact}", path)
            return c.constants
        if exact is None:
            raise UncertifiableTrace("trace around the hole needs fillers or declared constants", path)
        return exact

    def feedback_radius(self, c: Trace, k: TraceConstants, r: Optional[float], path: str) -> Optional[float]:
        need = None
        vs = self.variants(c.pre)
        if r is not None and vs:
            nx = c.in_space.size
            off_z = max(float(np.abs(v.offset[nx:]).max()) if v.offset.size > nx else 0.0 for v in vs)
            need = (off_z + k.eta * r) / (1.0 - k.alpha)
        if c.feedback_radius is None:
            return need
        if need is not None and c.feedback_radius < need - SLACK * max(1.0, need):
            raise TypeMismatch(f"declared feedback radius {c.feedback_radius:.6g} is below the reachable {need:.6g} at {path}")
        return c.feedback_radius

    def run(self, c, path: str, r: Optional[float]):
        """Return ``(lip, gain)``; ``gain`` is ``None`` when ``c`` has no hole."""
        has = count_holes(c) > 0
        k = fb = None
        if isinstance(c, Hole):
            self.hole_radius = r
            if c.ball_out is not None and r is not None and r > c.ball_out + SLACK * max(1.0, c.ball_out):
                raise TypeMismatch(f"continuations of norm {r:.6g} reach a hole typed on the {c.ball_out:.6g}-ball")
            lips = [f.lipschitz for f in self.fillers]
            lip = c.lip
            if lips:
                if lip is not None and max(lips) > lip + 1e-12:
                    raise TypeMismatch(f"filler Lipschitz {max(lips):.6g} exceeds declared hole bound {lip:.6g}")
                lip = max(lips) if lip is None else lip
            gain = 1.0
        elif isinstance(c, Leaf):
            lip, gain = c.op.affine.lipschitz, None
        elif isinstance(c, Series):
            l_out, g_out = self.run(c.outer, path + "/outer", r)
            l_in, g_in = self.run(c.inner, path + "/inner", self.bound(c.outer, r))
            lip = None if l_in is None or l_out is None else l_in * l_out
            if g_out is not None:
                gain = None if l_in is None else l_in * g_out
            else:
                gain = g_in
        elif isinstance(c, Parallel):
            l_l, g_l = self.run(c.left, path + "/left", r)
            l_r, g_r = self.run(c.right, path + "/right", r)
            lip = None if l_l is None or l_r is None else max(l_l, l_r)
            gain = g_l if g_l is not None else g_r
        elif isinstance(c, Trace):
            k = self.constants(c, path)
            if k.alpha >= 1.0:
                raise UnguardedTrace(f"feedback modulus alpha_Z = {k.alpha:.6g} >= 1 at node {path}")
            lip = k.external
            if lip >= 1.0:
                raise UncertifiableTrace(f"external modulus {lip:.6g} >= 1", path)
            fb = self.feedback_radius(c, k, r, path)
            inner_r = None if r is None or fb is None else max(r, fb)
            _, g = self.run(c.pre, path + "/pre", inner_r)
            gain = None if g is None else k.gain * g
        else:
            raise TypeError(f"not a circuit expression: {c!r}")
        self.nodes[path] = NodeCertificate(path, type(c).__name__.lower(), lip, r, has, k, fb)
        return lip, gain


def certify(c: Expr, fillers: Sequence[Operator] = (), root_radius: Optional[float] = None) -> Certificate:
    """Compute ``L(C)``, ``kappa(C)`` and the ball radii by structural recursion.

    ``fillers`` are the candidate transformers the hole will be compared
    on; constants at trace nodes around the hole are the pairwise maximum
    over them.  For a closed context the root radius defaults to the
    largest fixed-point norm bound ``|b| / (1 - Lip)`` over the plugged
    circuits.
    """
    cert = _Certifier(fillers)
    closed = c.in_space == c.out_space
    if root_radius is None and closed:
        vs = cert.variants(c)
        radii = []
        for v in vs:
            if v.lipschitz < 1.0:
                radii.append(v.invariant_radius())
        if vs and len(radii) == len(vs):
            root_radius = max(radii)
    lip, gain = cert.run(c, "root", root_radius)
    if closed and lip is not None and lip >= 1.0:
        raise NonContraction(f"closed context has certified modulus {lip:.6g} >= 1")
    return Certificate(gain, lip, root_radius, cert.hole_radius, cert.nodes)


@dataclass(frozen=True)
class CongruenceReport:
    eps: float
    gain: float
    kappa: float
    bound: float
    measured: float
    certificate: Certificate

    @property
    def slack(self) -> float:
        return self.bound - self.measured

    @property
    def ok(self) -> bool:
        return self.measured <= self.bound + SLACK


def congruence_bound(c: Expr, t1: Operator, t2: Operator, measured_eps: Optional[float] = None) -> CongruenceReport:
    """Certified value-gap bound ``L / (1 - kappa) * eps`` against the measured gap.

    ``eps`` is the exact operator distance of the two fillers on the
    hole's comparison ball (its declared ``ball_out``, else the certified
    radius reaching it).  Raises :class:`BoundViolation` if the gap of the
    two closed-loop fixed points exceeds the bound.
    """
    hole = _find_hole(c)
    if hole is None:
        raise TypeMismatch("congruence needs a context with a hole")
    if c.in_space != c.out_space:
        raise TypeMismatch("congruence needs a closed context")
    cert = certify(c, (t1, t2))
    radius = hole.ball_out if hole.ball_out is not None else cert.hole_radius
    eps = operator_distance(t1, t2, radius)
    if measured_eps is not None:
        if measured_eps < eps - 1e-12:
            raise ValueError(f"supplied eps {measured_eps:.6g} is below the exact distance {eps:.6g}")
        eps = measured_eps
    bound = cert.amplification() * eps
    v1 = solve_linear(compile(plug(c, t1))).values
    v2 = solve_linear(compile(plug(c, t2))).values
    measured = float(np.abs(v1 - v2).max())
    report = CongruenceReport(eps, cert.gain, cert.kappa, bound, measured, cert)
    if not report.ok:
        raise BoundViolation(f"measured gap {measured:.6g} exceeds certified bound {bound:.6g}")
    return report


def fixed_point_stability(t1: Operator, t2: Operator, kappa: Optional[float] = None) -> Tuple[float, float]:
    """Return ``(d(t1, t2) / (1 - kappa), |V1* - V2*|)`` on a shared invariant ball."""
    a, b = t1.affine, t2.affine
    if kappa is None:
        kappa = max(a.lipschitz, b.lipschitz)
    if kappa >= 1.0:
        raise NonContraction(f"modulus {kappa:.6g} >= 1")
    if a.lipschitz > kappa + 1e-12 or b.lipschitz > kappa + 1e-12:
        raise NonContraction("declared kappa is below an operator's Lipschitz constant")
    radius = max(float(np.abs(a.offset).max()), float(np.abs(b.offset).max())) / (1.0 - kappa)
    bound = operator_distance(a, b, radius) / (1.0 - kappa)
    measured = float(np.abs(solve_linear(a).values - solve_linear(b).values).max())
    if measured > bound + SLACK:
        raise BoundViolation(f"fixed-point gap {measured:.6g} exceeds {bound:.6g}")
    return bound, measured


def trace_of(pre_op: Operator, x_space: FiniteSpace, y_space: FiniteSpace, z_space: FiniteSpace, **kw) -> Trace:
    """Convenience: ``Trace(Leaf(pre_op))`` with direct-sum typing checked."""
    if pre_op.in_space != direct_sum(x_space, z_space) or pre_op.out_space != direct_sum(y_space, z_space):
        raise TypeMismatch("pre-trace operator must be typed (X + Z) <- (Y + Z)")
    return Trace(Leaf(pre_op), z_space, **kw)
