"""Build a small closed circuit, certify it and compare two hole fillers.

Run with ``python3 demos/circuit_certify.py``.
"""

import numpy as np

from dcircuits import Hole, Leaf, Series, certify, compile, congruence_bound, plug, solve_linear
from dcircuits.core import FiniteSpace
from dcircuits.instances import perturb_transformer, random_transformer, two_state_chain

# a single transformer is the simplest closed circuit
chain = two_state_chain()
print("two-state chain fixed point:", solve_linear(chain).values)

# context: a fixed first step from S into U, then a hole back from U to S
rng = np.random.default_rng(7)
s, u = FiniteSpace.of_size("s", 2), FiniteSpace.of_size("u", 3)
first = random_transformer(rng, s, u, gamma=0.9)
context = Series(Leaf(first), Hole(u, s))

t1 = random_transformer(rng, u, s, gamma=0.9)
t2 = perturb_transformer(rng, t1, 0.05)

cert = certify(context, (t1, t2))
print(f"gain L(C) = {cert.gain:.6g}, modulus kappa(C) = {cert.kappa:.6g}")
for path, node in sorted(cert.nodes.items()):
    print(f"  {path:<14} {node.kind:<8} lip={node.lip}")

v1 = solve_linear(compile(plug(context, t1))).values
v2 = solve_linear(compile(plug(context, t2))).values
print("closed-loop values with t1:", v1)
print("closed-loop values with t2:", v2)

rep = congruence_bound(context, t1, t2)
print(f"filler distance eps = {rep.eps:.6g}")
print(f"certified gap bound = {rep.bound:.6g}, measured gap = {rep.measured:.6g}")
