"""
Cross-checking against Blahut-Arimoto
=====================================

The numerical solver discretizes the channel on a uniform input grid and
runs a cost-constrained Blahut-Arimoto iteration. For concave costs it
should reproduce the analytic capacity and concentrate on the analytic
mass points; for a convex cost with an active budget the analytic theory
predicts a support covering the whole interval instead.

Grids are kept small here so the script runs in seconds.
"""

import math

from unifcap import (
    BAConfig,
    CostFunction,
    ba_solve,
    compare_clusters,
    discretize,
    extract_support,
    make_geometry,
    solve,
)

g = make_geometry(2.4)
cfg = BAConfig(gin=801, gout=1601, tol=1e-7, max_iter=100_000)
chan = discretize(g, cfg.gin, cfg.gout)

cost = CostFunction.power(0.5)
sol = solve(g, cost, 0.54)
res = ba_solve(chan, cost, 0.54, cfg)
cl = extract_support(res, chan=chan)
print(f"sqrt cost, cbar = 0.54: analytic {sol.capacity_nats / math.log(2):.5f} bits, "
      f"numerical {res.capacity_nats / math.log(2):.5f} bits ({res.iterations} iterations)")
# the discretized optimum spreads each point over a few nearby cells, so
# clusters are pooled by their nearest analytic point before comparing
cmp = compare_clusters(cl.positions, cl.masses, sol.distribution, chan.inputs[1])
print("   x_j      m_j     pooled mass   centroid offset [cells]")
for x, m, dm, dx in zip(sol.distribution.positions, sol.distribution.masses,
                        cmp.mass_errors, cmp.position_errors):
    print(f"  {x:.4f}   {m:.4f}   {dm:+.1e}      {dx:.2f}")

cost = CostFunction.power(2.0)
res = ba_solve(chan, cost, 0.35, cfg)
cl = extract_support(res, chan=chan)
print(f"\nquadratic cost, cbar = 0.35: {res.capacity_nats / math.log(2):.5f} bits, "
      f"{cl.count} clusters, largest empty run {cl.largest_gap} cells, "
      f"discrete {cl.discrete}")
