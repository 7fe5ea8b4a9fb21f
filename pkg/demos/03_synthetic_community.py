"""Generate a small synthetic community and look at what the forecasters will see.

Run: python demos/03_synthetic_community.py
"""

import numpy as np

from tecflow.data import SplitMode, SplitSpec, aggregate_community, generate_community, split

buildings = generate_community("demo", 6, 365, seed=42)
net = aggregate_community([b.net for b in buildings])
print(f"{len(buildings)} buildings, {len(net)} quarter-hour readings each")

for label, month in (("april", 4), ("august", 8), ("december", 12)):
    day = np.datetime64(f"2018-{month:02d}-15", "m")
    i = int(np.searchsorted(net.timestamps, day))
    window = net.values[i:i + 96]
    pv = sum(b.generation.values[i:i + 96] for b in buildings)
    print(f"  mid-{label:<9} net {window.min():7.2f} .. {window.max():6.2f} kW, PV peak {pv.max():5.2f} kW, "
          f"exporting in {(window < 0).sum()} of 96 intervals")

demand = buildings[0].demand
for mode in SplitMode:
    train, test = split(demand, SplitSpec("august", mode))
    print(f"  {mode.value:<13} train {train.timestamps[0]} .. {train.timestamps[-1]}, test {len(test) // 96} days")
