"""Learn uplink power control from Dinkelbach-optimal labels (small budget).

    python demos/power_control.py
"""
import numpy as np

from modelaided.config import from_dict
from modelaided.pipeline import protocols as P

cfg = from_dict({"case": "case1", "case1": {"n_train": 300, "n_test": 60, "restarts": 1,
                                            "train": {"epochs": 150, "loss": "mse"}}})
res = P.run_protocol_A(cfg)
print(f"training rows: {res.meta['train_rows']}, final val MSE: {res.report.final_val_loss:.2e}")
print("pmax_dBm  ann/oracle  fullpower/oracle")
for s in res.summary:
    print(f"{s['pmax_dBm']:8.2f}  {s['ann_ratio']:10.4f}  {s['fullpower_ratio']:16.4f}")
print("mean ANN ratio:", np.mean([s["ann_ratio"] for s in res.summary]).round(4))
