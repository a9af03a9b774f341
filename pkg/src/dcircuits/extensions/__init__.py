"""Partial observability, off-policy weights and nonstationary tracking."""

from .belief import (
    BeliefNode,
    BeliefReport,
    BeliefTree,
    Pomdp,
    bayes_update,
    belief_mdp_to_horizon,
    simulate_pomdp,
    state_policy_on_beliefs,
    tree_value,
    verify_belief_equivalence,
)
from .ope import (
    FactorizationReport,
    TrajectoryPrefix,
    change_of_measure_gap,
    enumerate_prefixes,
    factorized_weights,
    importance_weights,
    martingale_gap,
    pair_prefixes,
    prefix_probability,
    series_chain_rule_gap,
)
from .tracking import TrackReport, track_fixed_points
