"""Pre-train on a uniform consumption model, fine-tune on Gaussian "measurements".

    python demos/transfer_consumption.py
"""
from modelaided.config import from_dict
from modelaided.pipeline import protocols as P

cfg = from_dict({"case": "case3", "case3": {"n_total": 2000, "x_values": [30, 100], "n_seeds": 3,
                                            "n_test": 300, "restarts": 2}})
spec = P.ExperimentSpec.from_config(cfg)
res = P.run_protocol_B(spec)
print("x     arm        median test rel. MSE")
for x, arm, n, med, q1, q3 in res.summary_rows():
    print(f"{x:<5d} {arm:<10s} {med:.3e}  (IQR {q1:.2e} .. {q3:.2e}, {n} seeds)")
