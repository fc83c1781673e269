"""
Where a logistic-regression student recovers its teacher
========================================================

A linear teacher memorizes random binary labels. The student never sees
labels: it regresses the teacher's logits on a fraction rho of the teacher
data with the pseudo-inverse. Once the student has as many samples as input
dimensions (alpha * rho >= 1) it recovers the teacher exactly and with it
every memorized label, including the ones it never saw.
"""

import sys
from pathlib import Path

from leaklab.harness import SweepConfig, run_sweep, seed_average, store_threshold
from leaklab.plotting import emit_heatmap

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")

config = SweepConfig.from_dict({
    "name": "phase_demo",
    "dataset": {"kind": "random_iid", "d": 100, "c": 2},
    "alpha_grid": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0],
    "rho_grid": [0.4, 0.6, 0.8],
    "seeds": [0, 1, 2],
    "student": {"mode": "pinv"},
})
store = run_sweep(config, out / "phase_demo", deterministic=True)

# %%
# Seed-averaged test accuracy on the held-out memorized points.
print("alpha  " + "  ".join(f"rho={r}" for r in config.rho_grid))
avg = seed_average(store)
for alpha in config.alpha_grid:
    row = [avg[(alpha, rho)][0].acc_S_test for rho in config.rho_grid]
    print(f"{alpha:5.2f}  " + "  ".join(f"{v:7.2f}" for v in row))

# %%
# The identifiability threshold sits near 1/rho; the teacher stops memorizing
# around alpha = 2.
for rho in config.rho_grid:
    est = store_threshold(store, "alpha_S_id", rho=rho)
    print(f"rho={rho}: alpha_S_id = {est.alpha_star:.3f} +/- {est.stderr:.3f}  (1/rho = {1 / rho:.3f})")
print(f"alpha_T_label = {store_threshold(store, 'alpha_T_label').alpha_star:.2f}")

emit_heatmap(store, "regime", path=out / "phase_regimes.svg", title="regimes, pinv student")
emit_heatmap(store, "acc_S_test", path=out / "phase_acc.svg", title="student test accuracy")
print(f"heatmaps written to {out}/")
