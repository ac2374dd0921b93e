"""
Certifying a solution with the optimality conditions
====================================================

A candidate input is optimal exactly when its marginal information density
i(x) equals I + lambda (c(x) - cbar) on the support and stays below that
line everywhere else. The verifier evaluates both sides on a dense grid
plus every kink of i(x). Nudging any single mass breaks the certificate.
"""

from unifcap import CostFunction, kkt_report, make_geometry, perturb_mass, solve, thresholds

g, cost = make_geometry(6.2), CostFunction.power(0.5)
th = thresholds(g, cost)
cbar = float(0.5 * (th.theta[2] + th.theta[3]))
sol = solve(g, cost, cbar, th)
print(f"r = 6.2, alpha = 0.5, cbar = {cbar:.6f}: regime {sol.regime.label}")
print("support labels", list(sol.distribution.labels))

rep = kkt_report(sol.distribution, sol.lambda_star, g, cost, cbar)
print(f"\ncertified: eq residual {rep.eq_residual:.1e}, "
      f"ineq violation {rep.ineq_violation:.1e}, passed {rep.passed}")

print("\nsingle-mass perturbations of 1e-3:")
for j in range(len(sol.distribution)):
    bad = perturb_mass(sol.distribution, j, 1e-3)
    r = kkt_report(bad, sol.lambda_star, g, cost, cbar)
    print(f"  point {sol.distribution.labels[j]:2d}: eq residual {r.eq_residual:.1e}  "
          f"passed {r.passed}")
