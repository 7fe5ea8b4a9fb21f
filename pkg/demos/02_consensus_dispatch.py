"""Reach the same price without a central operator.

Each VPP agent only talks to its neighbours. The run stops once neighbours
agree and local balance estimates vanish; the analytical price is used only
to score the result.

Run: python demos/02_consensus_dispatch.py
"""

from tecflow.analytical import solve_centralized
from tecflow.consensus import TuningSchedule, build_graph, run, scaled_schedule
from tecflow.model import Scenario, default_vpps

vpps = default_vpps(5, capacity=80.0, seed=3)
scenario = Scenario(vpps, 41.0)
target = solve_centralized(scenario)
print(f"analytical price {target.lambda_star:.6f}")

for topology in ("star", "ring", "complete"):
    g = build_graph(topology, len(vpps), [v.id for v in vpps])
    res = run(scenario, g, scaled_schedule(vpps, g), oracle=target, record_history=False)
    print(f"  {topology:<9} {res.iterations:6d} rounds, worst agent off by {res.price_gap():.2e}")

# A warm start from the previous interval's price saves most of the work.
g = build_graph("star", len(vpps), [v.id for v in vpps])
warm = run(scenario, g, scaled_schedule(vpps, g), warm_lambda=target.lambda_star * 1.02,
           oracle=target, record_history=False)
print(f"warm start within 2%: {warm.iterations} rounds")

# The update as originally published keeps drifting from the optimum.
res = run(scenario, g, TuningSchedule(1e-3, 1 / 6), mode="paper-literal", n_max=20_000,
          oracle=target, record_history=False)
print(f"published update: converged={res.converged}, off by {res.price_gap():.3f} after {res.iterations} rounds")
