"""Perturb one module of a two-module loop and check the certified chain.

Run with ``python3 demos/robustness_walkthrough.py [seed]``.
"""

import sys

import numpy as np

from dcircuits.instances import random_oddc, random_policy
from dcircuits.robustness import PerturbationSpec, TwoModuleCircuit, run_two_module_robustness, run_parallel_factorization

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
rng = np.random.default_rng(seed)

m1 = random_oddc(rng, 3, 2, 4, gamma=0.5)
m2 = random_oddc(rng, 4, 2, 3, gamma=0.5, s_in=m1.s_out, s_out=m1.s_in)
base = TwoModuleCircuit(m1, m2, random_policy(rng, m1.s_in, m1.actions), random_policy(rng, m2.s_in, m2.actions))

for eps_r, eps_p in [(0.1, 0.0), (0.0, 0.1), (0.05, 0.05)]:
    r = run_two_module_robustness(base, PerturbationSpec(target=2, eps_r=eps_r, eps_P=eps_p, seed=seed))
    print(f"eps_r={eps_r:<5} eps_P={eps_p:<5} local mismatch={r.eps_exact}  "
          f"gap bound={r.gap_bound:.6g}  measured={r.measured_gap:.6g}  ok={r.ok}")

# independent modules side by side: the joint value is the sum of the parts
p1 = random_oddc(rng, 3, 2, gamma=0.9)
p2 = random_oddc(rng, 4, 2, gamma=0.9)
pr = run_parallel_factorization(p1, p2, random_policy(rng, p1.s_in, p1.actions), random_policy(rng, p2.s_in, p2.actions))
print(f"parallel factorization error = {pr.max_error:.3g}; coupled control gap = {pr.coupled_gap:.3g}")
