"""Finite spaces, distributions, Markov kernels and bounded value vectors.

Everything here is an immutable value object backed by a read-only
``float64`` numpy array.  Kernels are row-stochastic matrices; composing
them is the Chapman-Kolmogorov matrix product and tensoring is the
Kronecker product over row-major paired labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SpaceMismatch, StochasticityError

STOCH_TOL = 1e-12
RENORM_TOL = 1e-9
BALL_TOL = 1e-12

__all__ = [
    "FiniteSpace",
    "Dist",
    "Kernel",
    "ValueFn",
    "product_space",
    "direct_sum",
    "unit_space",
    "compose_kernels",
    "tensor_kernels",
    "pair_with_policy",
    "tv_distance",
    "sup_norm_diff",
]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FiniteSpace:
    """A named finite set with an ordered list of distinct labels.

    ``parts`` and ``kind`` are set for spaces built by :func:`product_space`
    (``kind="product"``) or :func:`direct_sum` (``kind="sum"``) so the
    factors can be recovered when wiring circuits.
    """

    name: str
    labels: tuple
    parts: Optional[tuple] = None
    kind: Optional[str] = None

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 1:
            raise ValueError(f"space {self.name!r} must have at least one element")
        if len(set(labels)) != len(labels):
            raise ValueError(f"space {self.name!r} has duplicate labels")

    @classmethod
    def of_size(cls, name: str, n: int) -> "FiniteSpace":
        return cls(name, tuple(f"{name}{i}" for i in range(n)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self.labels.index(str(label))
        except ValueError:
            raise KeyError(f"{label!r} is not an element of {self.name}") from None

    def __repr__(self) -> str:
        return f"FiniteSpace({self.name!r}, n={self.size})"


def product_space(a: FiniteSpace, b: FiniteSpace) -> FiniteSpace:
    """Cartesian product with row-major label pairing ``"(x|y)"``."""
    labels = tuple(f"({x}|{y})" for x in a.labels for y in b.labels)
    return FiniteSpace(f"({a.name}*{b.name})", labels, parts=(a, b), kind="product")


def direct_sum(a: FiniteSpace, b: FiniteSpace) -> FiniteSpace:
    """Disjoint union; value functions on it carry the product sup metric."""
    labels = tuple(f"0.{x}" for x in a.labels) + tuple(f"1.{y}" for y in b.labels)
    return FiniteSpace(f"({a.name}+{b.name})", labels, parts=(a, b), kind="sum")


def unit_space() -> FiniteSpace:
    return FiniteSpace("I", ("*",))


def _check_same(a: FiniteSpace, b: FiniteSpace, what: str = "spaces"):
    if a != b:
        raise SpaceMismatch(f"{what} differ: {a.name} vs {b.name}")


def _stochastic_rows(rows: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(rows)):
        raise StochasticityError(f"{where}: non-finite entry")
    if np.any(rows < 0):
        if rows.min() < -STOCH_TOL:
            raise StochasticityError(f"{where}: negative entry {rows.min():.3e}")
        rows = np.clip(rows, 0.0, None)
    dev = np.abs(rows.sum(axis=-1) - 1.0)
    worst = float(dev.max()) if dev.size else 0.0
    if worst > RENORM_TOL:
        raise StochasticityError(f"{where}: row sum off by {worst:.3e}")
    if worst > STOCH_TOL:
        rows = rows / rows.sum(axis=-1, keepdims=True)
    return rows


@dataclass(frozen=True, eq=False)
class Dist:
    """Probability vector over a finite space."""

    space: FiniteSpace
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.shape != (self.space.size,):
            raise SpaceMismatch(f"distribution has shape {p.shape}, space {self.space.name} has {self.space.size}")
        object.__setattr__(self, "probs", _frozen(_stochastic_rows(p, f"Dist on {self.space.name}")))

    @classmethod
    def point(cls, space: FiniteSpace, i: int) -> "Dist":
        p = np.zeros(space.size)
        p[i] = 1.0
        return cls(space, p)

    @classmethod
    def uniform(cls, space: FiniteSpace) -> "Dist":
        return cls(space, np.full(space.size, 1.0 / space.size))

    def expect(self, f) -> float:
        return float(self.probs @ np.asarray(f, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Kernel:
    """Row-stochastic matrix ``rows[x, y] = k(y | x)`` from ``src`` to ``dst``."""

    src: FiniteSpace
    dst: FiniteSpace
    rows: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.rows, dtype=np.float64)
        if m.shape != (self.src.size, self.dst.size):
            raise SpaceMismatch(
                f"kernel matrix shape {m.shape} does not match {self.src.name}->{self.dst.name} "
                f"({self.src.size}x{self.dst.size})"
            )
        m = _stochastic_rows(m, f"Kernel {self.src.name}->{self.dst.name}")
        object.__setattr__(self, "rows", _frozen(m))

    @classmethod
    def identity(cls, space: FiniteSpace) -> "Kernel":
        return cls(space, space, np.eye(space.size))

    @classmethod
    def deterministic(cls, src: FiniteSpace, dst: FiniteSpace, mapping: Sequence[int]) -> "Kernel":
        m = np.zeros((src.size, dst.size))
        m[np.arange(src.size), np.asarray(mapping, dtype=int)] = 1.0
        return cls(src, dst, m)

    def row(self, x: int) -> Dist:
        return Dist(self.dst, self.rows[x])

    def allclose(self, other: "Kernel", atol: float = 1e-12) -> bool:
        return (
            self.src == other.src
            and self.dst == other.dst
            and bool(np.allclose(self.rows, other.rows, rtol=0.0, atol=atol))
        )


@dataclass(frozen=True, eq=False)
class ValueFn:
    """Bounded real function on a finite space, optionally tagged with a ball radius."""

    space: FiniteSpace
    values: np.ndarray
    radius: Optional[float] = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.space.size,):
            raise SpaceMismatch(f"value vector has shape {v.shape}, space {self.space.name} has {self.space.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("value functions must be finite")
        if self.radius is not None:
            if self.radius < 0:
                raise ValueError("radius must be nonnegative")
            if v.size and np.abs(v).max() > self.radius + BALL_TOL * max(1.0, self.radius):
                raise ValueError(f"sup norm {np.abs(v).max():.6g} exceeds radius {self.radius:.6g}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    @classmethod
    def zeros(cls, space: FiniteSpace) -> "ValueFn":
        return cls(space, np.zeros(space.size))

    @classmethod
    def constant(cls, space: FiniteSpace, c: float) -> "ValueFn":
        return cls(space, np.full(space.size, float(c)))


def compose_kernels(k: Kernel, l: Kernel) -> Kernel:
    """Chapman-Kolmogorov composition: first ``k`` then ``l``."""
    _check_same(k.dst, l.src, "interface spaces")
    return Kernel(k.src, l.dst, k.rows @ l.rows)


def tensor_kernels(k1: Kernel, k2: Kernel) -> Kernel:
    """Independent product kernel on paired spaces (Kronecker product)."""
    return Kernel(
        product_space(k1.src, k2.src),
        product_space(k1.dst, k2.dst),
        np.kron(k1.rows, k2.rows),
    )


def pair_with_policy(pi: Kernel) -> Kernel:
    """The kernel ``s -> delta_s (x) pi(.|s)`` on ``S x A``."""
    s, a = pi.src, pi.dst
    m = np.zeros((s.size, s.size * a.size))
    for i in range(s.size):
        m[i, i * a.size:(i + 1) * a.size] = pi.rows[i]
    return Kernel(s, product_space(s, a), m)


def tv_distance(mu: Dist, nu: Dist) -> float:
    """Total variation as a sup over test functions with ``|f| <= 1``.

    This is the full L1 distance, so the result lies in ``[0, 2]``.
    """
    _check_same(mu.space, nu.space)
    return float(np.abs(mu.probs - nu.probs).sum())


def sup_norm_diff(v: ValueFn, w: ValueFn) -> float:
    _check_same(v.space, w.space)
    return float(np.abs(v.values - w.values).max())
