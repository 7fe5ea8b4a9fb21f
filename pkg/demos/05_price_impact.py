"""How forecast error turns into price error over one day.

The real net demand (RND) run only carries consensus error. Any forecast
error shifts the balance every agent aims for, so prices drift from the
true optimum in proportion.

Run: python demos/05_price_impact.py
"""

import numpy as np

from tecflow.consensus import build_graph, scaled_schedule
from tecflow.harness import run_day
from tecflow.pipeline import COMMUNITY_B, TEST_DAYS, build_community, fleet_for, true_net

day = TEST_DAYS[2]
buildings = build_community(COMMUNITY_B, seed=0)
truth = true_net(buildings, day)
vpps = fleet_for(buildings)
g = build_graph("star", len(vpps), [v.id for v in vpps])
sched = scaled_schedule(vpps, g)

rnd = run_day("rnd", truth, None, vpps, g, sched)
print(f"{day.date}: community net demand {truth.min():.1f} .. {truth.max():.1f} kW")
print(f"  real net demand   total price difference {rnd.total_price_difference:.2e}")
for bias in (0.1, 0.5, 1.0, 5.0):
    rep = run_day("flf", truth, truth + bias, vpps, g, sched)
    print(f"  +{bias:<4} kW bias     total price difference {rep.total_price_difference:.4f}")
noise = np.random.default_rng(0).normal(0.0, 2.0, 96)
rep = run_day("lmf", truth, truth + noise, vpps, g, sched)
print(f"  2 kW white noise   total price difference {rep.total_price_difference:.4f}, forecast RMSE {rep.forecast_rmse:.2f}")
