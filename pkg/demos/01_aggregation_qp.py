"""Clear one 15-minute interval centrally and check the answer two independent ways.

Run: python demos/01_aggregation_qp.py
"""

from tecflow.analytical import kkt_residuals, projected_gradient_oracle, solve_centralized
from tecflow.model import Scenario, default_vpps

vpps = default_vpps(4, capacity=100.0, seed=7)
print("fleet (import-side cost c1*P^2 + c2*P, capacity):")
for v in vpps:
    print(f"  {v.id}: c1={v.g2c.c1:.4f} c2={v.g2c.c2:.3f} pmax={v.p_max_g2c:.1f} kW")

for demand in (35.0, 92.0, -60.0):
    s = Scenario(vpps, demand)
    sol = solve_centralized(s)
    ref = projected_gradient_oracle(s)
    res = kkt_residuals(s, sol)
    print(f"\nnet demand {demand:+.0f} kW ({s.direction.value}):")
    print(f"  clearing price {sol.lambda_star:.6f}  (projected-gradient check {ref.lambda_star:.6f})")
    for i in s.ids:
        tag = " capped" if i in sol.active_set.at_upper else " idle" if i in sol.active_set.at_lower else ""
        print(f"  {i}: {sol.p_star[i]:8.3f} kW{tag}")
    print(f"  worst KKT residual {max(res.values()):.1e}")

print("\nzero net demand needs no dispatch:", solve_centralized(Scenario(vpps, 0.0)).is_empty)
