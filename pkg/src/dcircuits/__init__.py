"""Compositional semantics for discounted decision processes on finite spaces."""

from .core import (
    Dist,
    FiniteSpace,
    Kernel,
    ValueFn,
    compose_kernels,
    direct_sum,
    pair_with_policy,
    product_space,
    sup_norm_diff,
    tensor_kernels,
    tv_distance,
    unit_space,
)
from .component import FiniteMdp, Oddc, Policy, close_loop, expected_reward, parallel_oddc, product_policy
from .bellman import (
    AffineOperator,
    OptimalityOperator,
    Transformer,
    apply,
    compose,
    make_transformer,
    monte_carlo_value,
    operator_distance,
    optimality_backup,
    solve_fixed_point,
    solve_linear,
    tensor,
    truncation_horizon,
    value_iterates,
)
from .circuit import (
    Certificate,
    Hole,
    Leaf,
    Parallel,
    Series,
    Trace,
    TraceConstants,
    banach_trace,
    certify,
    compile,
    congruence_bound,
    fixed_point_stability,
    plug,
)
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
