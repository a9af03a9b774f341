"""Fixed-point and iterate tracking for a drifting sequence of contractions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..bellman import Transformer, operator_distance, solve_linear
from ..errors import BoundViolation, SpaceMismatch

__all__ = ["TrackReport", "track_fixed_points"]

SLACK = 1e-9


@dataclass(frozen=True)
class TrackReport:
    """Drifts ``eta[t] = d(T_{t+1}, T_t)`` and measured quantities against bounds.

    In exact mode ``measured[t] = |V*_{t+1} - V*_t|`` with bound
    ``eta[t] / (1 - gamma)``, and ``cumulative[t]`` compares
    ``|V*_{t+1} - V*_0|`` with the summed bound.  In one-step mode
    ``measured[t] = |V_{t+1} - V*_{t+1}|`` for ``V_{t+1} = T_t V_t`` and
    ``bounds`` is the recursion ``gamma * b_t + eta_t / (1 - gamma)``.
    """

    mode: str
    eta: np.ndarray
    measured: np.ndarray
    bounds: np.ndarray
    cumulative_measured: Optional[np.ndarray]
    cumulative_bounds: Optional[np.ndarray]
    closed_form_bounds: Optional[np.ndarray] = None

    @property
    def violations(self) -> int:
        n = int(np.sum(self.measured > self.bounds + SLACK))
        if self.cumulative_measured is not None:
            n += int(np.sum(self.cumulative_measured > self.cumulative_bounds + SLACK))
        return n


def track_fixed_points(ops: Sequence[Transformer], mode: str = "exact", v0=None, radius: Optional[float] = None) -> TrackReport:
    """Measure drift of a sequence of closed ``gamma``-contractions.

    ``radius`` defaults to ``V_max = max_t |r_t| / (1 - gamma)``.  Raises
    :class:`BoundViolation` if any bound fails.
    """
    if len(ops) < 2:
        raise ValueError("tracking needs at least two operators")
    space, g = ops[0].in_space, ops[0].gamma
    for t in ops:
        if t.in_space != space or t.out_space != space:
            raise SpaceMismatch("all operators must be closed on the same space")
        if t.gamma != g:
            raise ValueError("all operators must share gamma")
    if radius is None:
        radius = max(float(np.abs(t.reward).max()) for t in ops) / (1.0 - g)
    n = len(ops)
    eta = np.array([operator_distance(ops[t + 1], ops[t], radius) for t in range(n - 1)])
    stars = [solve_linear(t).values for t in ops]
    if mode == "exact":
        measured = np.array([np.abs(stars[t + 1] - stars[t]).max() for t in range(n - 1)])
        bounds = eta / (1.0 - g)
        cum_m = np.array([np.abs(stars[t + 1] - stars[0]).max() for t in range(n - 1)])
        cum_b = np.cumsum(bounds)
        report = TrackReport(mode, eta, measured, bounds, cum_m, cum_b)
    elif mode == "one-step":
        v = np.zeros(space.size) if v0 is None else np.asarray(v0, dtype=np.float64)
        b = float(np.abs(v - stars[0]).max())
        e0 = b
        measured, bounds, closed = [], [], []
        for t in range(n - 1):
            v = ops[t](v)
            b = g * b + eta[t] / (1.0 - g)
            measured.append(float(np.abs(v - stars[t + 1]).max()))
            bounds.append(b)
            k = t + 1
            closed.append(g ** k * e0 + sum(g ** (k - 1 - j) * eta[j] / (1.0 - g) for j in range(k)))
        report = TrackReport(mode, eta, np.array(measured), np.array(bounds), None, None, np.array(closed))
    else:
        raise ValueError(f"unknown tracking mode {mode!r}")
    if report.violations:
        raise BoundViolation(f"{report.violations} tracking bound violations in {mode} mode")
    return report
