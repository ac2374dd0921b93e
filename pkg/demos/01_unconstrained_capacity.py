"""
Unconstrained capacity and the optimal input grid
=================================================

With the cost budget slack, the optimal input is a finite set of mass
points on [0, 1]. For integer r they are equally spaced with equal masses;
otherwise there are 2n points whose masses alternate between two
decreasing/increasing ladders. This script prints both and the capacity
curve as a function of r.
"""

import math

import numpy as np

from unifcap import CostFunction, make_geometry, mutual_information, solve, unconstrained_solution

# integer r: five equally spaced, equally likely points
g = make_geometry(4)
d = unconstrained_solution(g)
print("r = 4")
for x, m in zip(d.positions, d.masses):
    print(f"  x = {x:.4f}   m = {m:.4f}")

# non-integer r: ten points, alternating masses
g = make_geometry(4.4)
d = unconstrained_solution(g)
print("\nr = 4.4")
for label, x, m in zip(d.labels, d.positions, d.masses):
    print(f"  x_{label:<2d} = {x:.4f}   m = {m:.4f}")

# the closed form agrees with the mutual information evaluated directly
sol = solve(g, CostFunction.power(0.5), 1.0)
print(f"\nclosed form  {sol.capacity_nats / math.log(2):.12f} bits")
print(f"direct I     {mutual_information(d, g) / math.log(2):.12f} bits")

# capacity in bits against r: smooth between integers, kinked at them
print("\n   r    C [bits]")
for r in np.arange(1.0, 6.01, 0.25):
    c = solve(make_geometry(r), CostFunction.linear(), 1.0).capacity_nats / math.log(2)
    print(f"{r:5.2f}  {c:.6f}")
