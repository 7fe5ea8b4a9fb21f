"""Federated forecasting helps buildings with little data.

A data-rich community trains a shared model by federated averaging. A
second community with four weeks of data each starts from that model and
runs one federated round; the baseline trains every building alone.
Scaled down (30 + 10 buildings, 60 days of history) to finish in about a
minute.

Run: python demos/04_federated_forecasting.py
"""

from tecflow.data import generate_community
from tecflow.forecast.federated import FedConfig, LearnerConfig
from tecflow.pipeline import COMMUNITY_A, COMMUNITY_B, TEST_DAYS, client_datasets, held_out_rmse, train_flf, train_lmf

day = TEST_DAYS[1]
cfg = LearnerConfig()
rich = generate_community("a", 30, 365, seed=1)
clients = client_datasets(rich, COMMUNITY_A.split_mode, day, history_days=60)
log = []
pre = train_flf(clients, FedConfig(15, 5, seed=0), cfg, log=log)
print(f"pretrained on {len(rich)} buildings: {len(log)} client updates logged")

for seed in range(3):
    scarce = generate_community("b", 10, 365, seed=100 + seed)
    cl = client_datasets(scarce, COMMUNITY_B.split_mode, day)
    flf = train_flf(cl, FedConfig(1, 10, seed), cfg, init=pre.global_weights)
    lmf = train_lmf(cl, cfg, seed)
    e_f = held_out_rmse(scarce, flf, COMMUNITY_B.split_mode, day)
    e_l = held_out_rmse(scarce, lmf, COMMUNITY_B.split_mode, day)
    print(f"  seed {seed}: normalised RMSE federated {e_f:.4f} vs local-only {e_l:.4f}")
