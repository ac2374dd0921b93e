"""
How the support shrinks as the budget tightens
==============================================

For a concave cost and non-integer r the optimal input keeps all 2n grid
points until the budget falls below a first threshold, where the mass at
x_2 vanishes. Further thresholds remove x_4, x_6, ... in turn. The
multiplier grows continuously through every threshold.
"""

import numpy as np

from unifcap import CostFunction, make_geometry, solve, thresholds

g, cost = make_geometry(3.9), CostFunction.power(0.5)
th = thresholds(g, cost)
print(f"r = {g.r}, c(x) = sqrt(x), critical budget {th.cbar_star:.6f}")
for k, (t, lam) in enumerate(zip(th.theta, th.lambda_at_theta)):
    print(f"  theta_{k} = {t:.6f}   lambda_{k} = {lam:.6f}   (m_{2 * k + 2} vanishes)")

header = "  cbar     regime   lambda    " + " ".join(f"m_{j:<5d}" for j in range(1, 9))
print("\n" + header)
for cbar in np.r_[th.cbar_star, np.geomspace(0.6, 0.0005, 14)]:
    sol = solve(g, cost, float(cbar), th)
    masses = " ".join(f"{m:7.4f}" for m in sol.grid_masses())
    print(f"{cbar:8.5f}  {sol.regime.label:7s} {sol.lambda_star:8.4f}  {masses}")
