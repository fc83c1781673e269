"""
Is it the input-specific part of the soft labels that leaks?
============================================================

Shuffling soft labels among samples of the same class keeps everything a
label could say about the class and destroys what it says about the input.
A cross-entropy student trained on the shuffled labels can still fit its
training set, but it no longer recovers the teacher.
"""

from leaklab.harness import SweepConfig, run_cell

base = {
    "dataset": {"kind": "random_iid", "d": 200, "c": 2},
    "teacher": {"arch": "linear", "train": {"steps": 10_000, "lr": 1e-2, "stop_loss": None}},
    "student": {"arch": "linear", "mode": "ce", "train": {"steps": 20_000, "lr": 1e-2}},
}
coords = (1.5, 0.8, 10.0)  # alpha, rho, tau

print(f"{'soft labels':>14}  train   test  logit mse")
for transform in ("none", "shuffle"):
    cell = run_cell(SweepConfig.from_dict({**base, "transform": transform}), coords, seed=0)
    m = cell.metrics
    print(f"{transform:>14}  {m.acc_S_train:5.2f}  {m.acc_S_test:5.2f}  {m.mse_test:9.3g}")
